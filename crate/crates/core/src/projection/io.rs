//! Binary sidecar persisting a projection's pixel assignment.
//!
//! Layout (little-endian): magic `"PIDX"`, version `u16`, the six grid
//! angles as `f64`, `height`/`width` as `u32`, point count as `u64`, then
//! one `(row u32, col u32)` pair per point with `0xFFFF_FFFF` marking
//! out-of-grid points. Ranges and per-pixel lists are rebuilt from the
//! cloud on load, so the sidecar stays small and the assignment stays
//! authoritative.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::projection::{GridSpec, ProjectionIndex};
use crate::real::Real;

const MAGIC: &[u8; 4] = b"PIDX";
const VERSION: u16 = 1;
const OUT_OF_GRID: u32 = u32::MAX;

/// Writes the pixel assignment of `index` to `path`.
pub fn save_index<T: Real>(index: &ProjectionIndex<T>, path: &Path) -> Result<()> {
    let mut out = BufWriter::with_capacity(1 << 16, File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_u16::<LittleEndian>(VERSION)?;
    let g = &index.grid;
    for v in [g.theta_min, g.theta_max, g.phi_min, g.phi_max, g.d_theta, g.d_phi] {
        out.write_f64::<LittleEndian>(v.as_f64())?;
    }
    out.write_u32::<LittleEndian>(g.height as u32)?;
    out.write_u32::<LittleEndian>(g.width as u32)?;
    out.write_u64::<LittleEndian>(index.n_points() as u64)?;
    for id in 0..index.n_points() {
        match index.pixel_of(id) {
            Some((i, j)) => {
                out.write_u32::<LittleEndian>(i as u32)?;
                out.write_u32::<LittleEndian>(j as u32)?;
            }
            None => {
                out.write_u32::<LittleEndian>(OUT_OF_GRID)?;
                out.write_u32::<LittleEndian>(OUT_OF_GRID)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a pixel assignment back and re-derives ranges and per-pixel lists
/// from `cloud` (which must be the cloud the index was built from).
pub fn load_index<T: Real>(path: &Path, cloud: &PointCloud<T>) -> Result<ProjectionIndex<T>> {
    let mut input = BufReader::with_capacity(1 << 16, File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad index sidecar magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = input.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported index sidecar version {version}"
        )));
    }
    let mut angles = [0f64; 6];
    for a in &mut angles {
        *a = input.read_f64::<LittleEndian>()?;
    }
    let height = input.read_u32::<LittleEndian>()? as usize;
    let width = input.read_u32::<LittleEndian>()? as usize;
    let n = input.read_u64::<LittleEndian>()? as usize;
    if n != cloud.len() {
        return Err(Error::dims("index sidecar point count", cloud.len(), n));
    }
    let grid = GridSpec {
        theta_min: T::from_f64_lossy(angles[0]),
        theta_max: T::from_f64_lossy(angles[1]),
        phi_min: T::from_f64_lossy(angles[2]),
        phi_max: T::from_f64_lossy(angles[3]),
        d_theta: T::from_f64_lossy(angles[4]),
        d_phi: T::from_f64_lossy(angles[5]),
        height,
        width,
    };
    let mut pixel_of = Vec::with_capacity(n);
    for id in 0..n {
        let i = input.read_u32::<LittleEndian>()?;
        let j = input.read_u32::<LittleEndian>()?;
        if i == OUT_OF_GRID || j == OUT_OF_GRID {
            pixel_of.push(None);
        } else if (i as usize) < height && (j as usize) < width {
            pixel_of.push(Some((i, j)));
        } else {
            return Err(Error::Format(format!(
                "index sidecar assigns point {id} to ({i}, {j}) outside {height}x{width}"
            )));
        }
    }
    let ranges: Vec<T> = (0..n).map(|id| cloud.range(id)).collect();
    Ok(ProjectionIndex::from_parts(grid, pixel_of, ranges))
}
