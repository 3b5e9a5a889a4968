//! Virtual-sphere rendering: a synthetic cloud that carries a raster's
//! colours back into 3-D for inspection in standard point-cloud viewers.
//!
//! One point is generated per angular cell at a fixed radius; each point is
//! coloured by nearest-pixel lookup in the source map.

use crate::cloud::{save_ply_colored, PlyEncoding};
use crate::error::{Error, Result};
use crate::projection::GridSpec;
use crate::real::Real;
use ndarray::Array3;
use std::path::Path;

/// Sampling parameters of a virtual sphere (angles in degrees).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualSphereSpec {
    /// Sphere radius in metres.
    pub radius: f64,
    /// Angular cell size in degrees.
    pub res_deg: f64,
    /// Zenith span to cover; must lie inside the source grid's span.
    pub zenith_span_deg: (f64, f64),
    /// Azimuth span to cover; must lie inside the source grid's span.
    pub azimuth_span_deg: (f64, f64),
}

impl Default for VirtualSphereSpec {
    fn default() -> Self {
        VirtualSphereSpec {
            radius: 1.0,
            res_deg: 1.0,
            zenith_span_deg: (0.0, 135.0),
            azimuth_span_deg: (0.0, 360.0),
        }
    }
}

/// Positions with display colours, as produced by [`virtual_sphere`].
#[derive(Debug, Clone, PartialEq)]
pub struct ColoredCloud<T> {
    pub positions: Vec<[T; 3]>,
    pub colors: Vec<[u8; 3]>,
}

impl<T: Real> ColoredCloud<T> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Writes the cloud as a colour PLY.
    pub fn save(&self, path: &Path, encoding: PlyEncoding) -> Result<()> {
        save_ply_colored(&self.positions, &self.colors, path, encoding)
    }
}

/// Number of cells covering `span` at `res`, i.e. `ceil(span / res)` with a
/// snap tolerance so that ratios that are integers up to floating-point
/// noise (e.g. 360 / 0.2) do not gain a spurious extra cell.
pub fn cell_count(span: f64, res: f64) -> usize {
    let ratio = span / res;
    let rounded = ratio.round();
    if (ratio - rounded).abs() < 1e-9 * rounded.abs().max(1.0) {
        rounded as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Renders a colour map onto a sphere of synthetic points.
///
/// `map` must be an `(H, W, 3)` RGB cube matching `grid`. Cells are centred
/// at `span_min + (k + 0.5) * res`; the point count is exactly
/// `cell_count(zenith_span) * cell_count(azimuth_span)`, row-major in
/// (zenith, azimuth).
pub fn virtual_sphere<T: Real>(
    map: &Array3<u8>,
    grid: &GridSpec<T>,
    spec: &VirtualSphereSpec,
) -> Result<ColoredCloud<T>> {
    let (h, w, c) = map.dim();
    if (h, w, c) != (grid.height, grid.width, 3) {
        return Err(Error::dims(
            "virtual_sphere map",
            format!("{}x{}x3", grid.height, grid.width),
            format!("{h}x{w}x{c}"),
        ));
    }
    if !(spec.radius > 0.0) || !(spec.res_deg > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sphere radius and resolution must be positive, got {} and {}",
            spec.radius, spec.res_deg
        )));
    }
    let (z0, z1) = spec.zenith_span_deg;
    let (a0, a1) = spec.azimuth_span_deg;
    if !(z0 < z1) || !(a0 < a1) {
        return Err(Error::InvalidArgument(
            "sphere spans must be non-empty".into(),
        ));
    }
    let eps = 1e-9;
    let grid_z = (grid.theta_min.as_f64().to_degrees(), grid.theta_max.as_f64().to_degrees());
    let grid_a = (grid.phi_min.as_f64().to_degrees(), grid.phi_max.as_f64().to_degrees());
    if z0 < grid_z.0 - eps || z1 > grid_z.1 + eps || a0 < grid_a.0 - eps || a1 > grid_a.1 + eps {
        return Err(Error::InvalidArgument(format!(
            "sphere span (zenith {z0}..{z1}, azimuth {a0}..{a1}) exceeds the grid span \
             (zenith {:.3}..{:.3}, azimuth {:.3}..{:.3})",
            grid_z.0, grid_z.1, grid_a.0, grid_a.1
        )));
    }

    let rows = cell_count(z1 - z0, spec.res_deg);
    let cols = cell_count(a1 - a0, spec.res_deg);
    let mut positions = Vec::with_capacity(rows * cols);
    let mut colors = Vec::with_capacity(rows * cols);
    let (gh, gw) = (grid.height as f64, grid.width as f64);
    let d_theta = grid.d_theta.as_f64();
    let d_phi = grid.d_phi.as_f64();
    let theta_min = grid.theta_min.as_f64();
    let phi_min = grid.phi_min.as_f64();
    for r in 0..rows {
        let theta = (z0 + (r as f64 + 0.5) * spec.res_deg).to_radians();
        let (sin_t, cos_t) = theta.sin_cos();
        let i = (((theta - theta_min) / d_theta).floor()).clamp(0.0, gh - 1.0) as usize;
        for col in 0..cols {
            let phi = (a0 + (col as f64 + 0.5) * spec.res_deg).to_radians();
            let (sin_p, cos_p) = phi.sin_cos();
            positions.push([
                T::from_f64_lossy(spec.radius * sin_t * cos_p),
                T::from_f64_lossy(spec.radius * sin_t * sin_p),
                T::from_f64_lossy(spec.radius * cos_t),
            ]);
            let j = (((phi - phi_min) / d_phi).floor()).clamp(0.0, gw - 1.0) as usize;
            colors.push([map[(i, j, 0)], map[(i, j, 1)], map[(i, j, 2)]]);
        }
    }
    Ok(ColoredCloud { positions, colors })
}
