//! Binary container for feature cubes.
//!
//! Layout (little-endian): magic `"FCUB"`, version `u16`, `H`/`W`/`C` as
//! `u32`, a channel-name table (`u16` byte length + UTF-8 per name), then
//! `C` row-major `f32` planes. Values are stored as `f32` regardless of the
//! in-memory scalar.
//!
//! The container carries no explicit validity mask: on load a pixel is
//! considered valid when any channel is nonzero there. Preprocessed
//! channels keep valid pixels at or above 0.01 precisely so this
//! reconstruction is exact for cubes that include them; pipelines needing
//! authoritative occupancy should consult the projection sidecar instead.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureCube;
use crate::real::Real;
use ndarray::{Array2, Array3};

const MAGIC: &[u8; 4] = b"FCUB";
const VERSION: u16 = 1;

/// Writes a cube to `path`.
pub fn save_cube<T: Real>(cube: &FeatureCube<T>, path: &Path) -> Result<()> {
    let mut out = BufWriter::with_capacity(1 << 16, File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_u16::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(cube.height() as u32)?;
    out.write_u32::<LittleEndian>(cube.width() as u32)?;
    out.write_u32::<LittleEndian>(cube.num_channels() as u32)?;
    for name in cube.names() {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "channel name too long ({} bytes)",
                bytes.len()
            )));
        }
        out.write_u16::<LittleEndian>(bytes.len() as u16)?;
        out.write_all(bytes)?;
    }
    for c in 0..cube.num_channels() {
        for &v in cube.channel_at(c).iter() {
            out.write_f32::<LittleEndian>(v.as_f64() as f32)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a cube from `path`, reconstructing validity as "any channel
/// nonzero" (see the module docs for the caveat).
pub fn load_cube<T: Real>(path: &Path) -> Result<FeatureCube<T>> {
    let mut input = BufReader::with_capacity(1 << 16, File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad cube magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = input.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported cube version {version}")));
    }
    let h = input.read_u32::<LittleEndian>()? as usize;
    let w = input.read_u32::<LittleEndian>()? as usize;
    let c = input.read_u32::<LittleEndian>()? as usize;
    let mut names = Vec::with_capacity(c);
    for _ in 0..c {
        let len = input.read_u16::<LittleEndian>()? as usize;
        let mut buf = vec![0u8; len];
        input.read_exact(&mut buf)?;
        names.push(String::from_utf8(buf).map_err(|_| {
            Error::Format("channel name is not valid UTF-8".into())
        })?);
    }
    let mut data = Array3::<T>::zeros((c, h, w));
    {
        let flat = data.as_slice_mut().expect("freshly allocated is contiguous");
        let mut buf = vec![0u8; 4 * w.max(1)];
        let mut read_plane_row = |dst: &mut [T], input: &mut BufReader<File>| -> Result<()> {
            let bytes = &mut buf[..4 * dst.len()];
            input.read_exact(bytes).map_err(|_| {
                Error::Format("cube truncated before all planes were read".into())
            })?;
            for (k, v) in dst.iter_mut().enumerate() {
                let raw = f32::from_le_bytes([
                    bytes[4 * k],
                    bytes[4 * k + 1],
                    bytes[4 * k + 2],
                    bytes[4 * k + 3],
                ]);
                *v = T::from_f64_lossy(raw as f64);
            }
            Ok(())
        };
        for row in flat.chunks_mut(w.max(1)) {
            read_plane_row(row, &mut input)?;
        }
    }
    let valid = Array2::from_shape_fn((h, w), |(i, j)| {
        (0..c).any(|ch| data[(ch, i, j)] != T::zero())
    });
    FeatureCube::new(names, data, valid)
}
