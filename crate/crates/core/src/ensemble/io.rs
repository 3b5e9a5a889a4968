//! Binary container for ensemble logit stacks.
//!
//! Layout (little-endian): magic `"LGTS"`, version `u16`, `M`/`C`/`H`/`W`
//! as `u32`, then `M*C` row-major `f32` planes in member-major, class-minor
//! order. This is the contract by which externally trained models feed the
//! fusion stage.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::ensemble::LogitStack;
use crate::error::{Error, Result};
use crate::real::Real;
use ndarray::Array4;

const MAGIC: &[u8; 4] = b"LGTS";
const VERSION: u16 = 1;

/// Writes a logit stack to `path`.
pub fn save_logits<T: Real>(stack: &LogitStack<T>, path: &Path) -> Result<()> {
    let mut out = BufWriter::with_capacity(1 << 16, File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_u16::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(stack.num_members() as u32)?;
    out.write_u32::<LittleEndian>(stack.num_classes() as u32)?;
    out.write_u32::<LittleEndian>(stack.height() as u32)?;
    out.write_u32::<LittleEndian>(stack.width() as u32)?;
    for &v in stack.data().iter() {
        out.write_f32::<LittleEndian>(v.as_f64() as f32)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a logit stack from `path`.
pub fn load_logits<T: Real>(path: &Path) -> Result<LogitStack<T>> {
    let mut input = BufReader::with_capacity(1 << 16, File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad logit-stack magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = input.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported logit-stack version {version}"
        )));
    }
    let m = input.read_u32::<LittleEndian>()? as usize;
    let c = input.read_u32::<LittleEndian>()? as usize;
    let h = input.read_u32::<LittleEndian>()? as usize;
    let w = input.read_u32::<LittleEndian>()? as usize;
    let mut data = Array4::<T>::zeros((m, c, h, w));
    {
        let flat = data.as_slice_mut().expect("freshly allocated is contiguous");
        let mut buf = vec![0u8; 4 * w.max(1)];
        for row in flat.chunks_mut(w.max(1)) {
            let bytes = &mut buf[..4 * row.len()];
            input.read_exact(bytes).map_err(|_| {
                Error::Format("logit stack truncated before all planes were read".into())
            })?;
            for (k, v) in row.iter_mut().enumerate() {
                let raw = f32::from_le_bytes([
                    bytes[4 * k],
                    bytes[4 * k + 1],
                    bytes[4 * k + 2],
                    bytes[4 * k + 3],
                ]);
                *v = T::from_f64_lossy(raw as f64);
            }
        }
    }
    LogitStack::new(data)
}
