//! Equirectangular projection of scanner-centred clouds.
//!
//! A [`GridSpec`] describes a zenith × azimuth raster; [`project`] assigns
//! every point to a pixel (or marks it out-of-grid), producing a
//! [`ProjectionIndex`] that later stages reuse for rasterization
//! ([`rasterize_channel`]), occupancy statistics ([`density_map`]) and
//! label back-projection ([`back_project`]).
//!
//! Angles follow the scanner convention: zenith `theta = arccos(z / r)`
//! measured from +z, azimuth `phi = atan2(y, x)` wrapped to `[0, 2*pi)`.
//! Pixel intervals are half-open: a point lands in row
//! `floor((theta - theta_min) / d_theta)` iff `theta_min <= theta < theta_max`,
//! and likewise for columns.

pub mod io;
pub mod sphere;

pub use io::{load_index, save_index};
pub use sphere::{virtual_sphere, ColoredCloud, VirtualSphereSpec};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::real::{two_pi, Real};
use crate::LabelMask;
use ndarray::Array2;

/// Geometry of an equirectangular raster (all angles in radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    pub theta_min: T,
    pub theta_max: T,
    pub phi_min: T,
    pub phi_max: T,
    /// Zenith step per row.
    pub d_theta: T,
    /// Azimuth step per column.
    pub d_phi: T,
    pub height: usize,
    pub width: usize,
}

impl<T: Real> GridSpec<T> {
    /// Builds a grid from angular bounds and a square resolution, all in
    /// degrees. Row/column counts are `round(span / res)`.
    pub fn from_degrees(
        theta_range_deg: (f64, f64),
        phi_range_deg: (f64, f64),
        res_deg: f64,
    ) -> Result<Self> {
        let (t0, t1) = theta_range_deg;
        let (p0, p1) = phi_range_deg;
        if !(res_deg > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be positive, got {res_deg}"
            )));
        }
        if !(t0 < t1) || !(p0 < p1) {
            return Err(Error::InvalidArgument(format!(
                "empty angular span: theta {t0}..{t1}, phi {p0}..{p1}"
            )));
        }
        if t0 < 0.0 || t1 > 180.0 || p0 < 0.0 || p1 > 360.0 {
            return Err(Error::InvalidArgument(format!(
                "angular span outside zenith [0,180] x azimuth [0,360]: \
                 theta {t0}..{t1}, phi {p0}..{p1}"
            )));
        }
        let height = ((t1 - t0) / res_deg).round() as usize;
        let width = ((p1 - p0) / res_deg).round() as usize;
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {res_deg} deg too coarse for span theta {t0}..{t1}, phi {p0}..{p1}"
            )));
        }
        Ok(GridSpec {
            theta_min: T::from_f64_lossy(t0.to_radians()),
            theta_max: T::from_f64_lossy(t1.to_radians()),
            phi_min: T::from_f64_lossy(p0.to_radians()),
            phi_max: T::from_f64_lossy(p1.to_radians()),
            d_theta: T::from_f64_lossy(res_deg.to_radians()),
            d_phi: T::from_f64_lossy(res_deg.to_radians()),
            height,
            width,
        })
    }

    /// The standard scanner raster: 0.25 deg over a 135 x 360 deg field of
    /// view, i.e. 540 x 1440 pixels.
    pub fn standard() -> Self {
        GridSpec::from_degrees((0.0, 135.0), (0.0, 360.0), 0.25)
            .expect("standard grid parameters are valid")
    }

    /// Number of pixels.
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Pixel of an (already wrapped) angle pair, or `None` when outside the
    /// half-open angular spans.
    #[inline]
    pub fn pixel_of_angles(&self, theta: T, phi: T) -> Option<(usize, usize)> {
        if theta < self.theta_min || theta >= self.theta_max {
            return None;
        }
        if phi < self.phi_min || phi >= self.phi_max {
            return None;
        }
        // In-range guaranteed; clamp guards the rare division round-up at
        // the far edge.
        let i = ((theta - self.theta_min) / self.d_theta)
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(self.height - 1);
        let j = ((phi - self.phi_min) / self.d_phi)
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(self.width - 1);
        Some((i, j))
    }
}

/// Zenith/azimuth of a scanner-centred direction vector.
///
/// Returns `(theta, phi)` with `theta` in `[0, pi]` and `phi` in `[0, 2*pi)`.
/// Errors on the zero vector, whose direction is undefined.
pub fn spherical_angles<T: Real>(v: [T; 3]) -> Result<(T, T)> {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if r == T::zero() {
        return Err(Error::DegenerateInput(
            "zero-norm direction has no spherical angles".into(),
        ));
    }
    let theta = (v[2] / r).max(-T::one()).min(T::one()).acos();
    let mut phi = v[1].atan2(v[0]);
    if phi < T::zero() {
        phi += two_pi::<T>();
    }
    // Tiny negative azimuths can round up to exactly 2*pi; wrap them home.
    if phi >= two_pi::<T>() {
        phi = T::zero();
    }
    Ok((theta, phi))
}

/// Result of projecting one cloud onto one grid: per-point pixel assignment
/// plus, per pixel, the ids of its points sorted by range (ties by id).
pub struct ProjectionIndex<T> {
    pub grid: GridSpec<T>,
    pixel_of: Vec<Option<(u32, u32)>>,
    ranges: Vec<T>,
    /// CSR layout over row-major pixels.
    starts: Vec<u32>,
    point_ids: Vec<u32>,
}

impl<T: Real> ProjectionIndex<T> {
    /// Number of projected points.
    pub fn n_points(&self) -> usize {
        self.pixel_of.len()
    }

    /// Pixel holding point `id`, or `None` if it fell outside the grid.
    #[inline]
    pub fn pixel_of(&self, id: usize) -> Option<(usize, usize)> {
        self.pixel_of[id].map(|(i, j)| (i as usize, j as usize))
    }

    /// Scanner range of point `id` (cached at projection time).
    #[inline]
    pub fn range_of(&self, id: usize) -> T {
        self.ranges[id]
    }

    /// Ids of the points in pixel `(i, j)`, nearest first (ties by id).
    pub fn points_in_pixel(&self, i: usize, j: usize) -> &[u32] {
        let p = i * self.grid.width + j;
        &self.point_ids[self.starts[p] as usize..self.starts[p + 1] as usize]
    }

    /// Pixel occupancy flags (true where at least one point landed).
    pub fn valid_mask(&self) -> Array2<bool> {
        let (h, w) = (self.grid.height, self.grid.width);
        Array2::from_shape_fn((h, w), |(i, j)| !self.points_in_pixel(i, j).is_empty())
    }

    /// Rebuilds an index from stored parts (used by sidecar loading).
    pub(crate) fn from_parts(
        grid: GridSpec<T>,
        pixel_of: Vec<Option<(u32, u32)>>,
        ranges: Vec<T>,
    ) -> Self {
        let (starts, point_ids) = build_csr(&grid, &pixel_of, &ranges);
        ProjectionIndex {
            grid,
            pixel_of,
            ranges,
            starts,
            point_ids,
        }
    }
}

fn build_csr<T: Real>(
    grid: &GridSpec<T>,
    pixel_of: &[Option<(u32, u32)>],
    ranges: &[T],
) -> (Vec<u32>, Vec<u32>) {
    let n_pix = grid.num_pixels();
    let mut entries: Vec<(u32, u32)> = Vec::with_capacity(pixel_of.len());
    for (id, assign) in pixel_of.iter().enumerate() {
        if let Some((i, j)) = assign {
            entries.push((*i * grid.width as u32 + *j, id as u32));
        }
    }
    // Total order (pixel, range, id) makes the layout thread-independent.
    entries.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| {
                ranges[a.1 as usize]
                    .partial_cmp(&ranges[b.1 as usize])
                    .expect("finite ranges")
            })
            .then(a.1.cmp(&b.1))
    });
    let mut starts = vec![0u32; n_pix + 1];
    for &(pix, _) in &entries {
        starts[pix as usize + 1] += 1;
    }
    for p in 0..n_pix {
        starts[p + 1] += starts[p];
    }
    let point_ids = entries.into_iter().map(|(_, id)| id).collect();
    (starts, point_ids)
}

/// Projects a cloud onto a grid.
///
/// Every point is assigned either a pixel or the out-of-grid marker; points
/// coincident with the scanner origin are rejected as degenerate data.
pub fn project<T: Real>(cloud: &PointCloud<T>, grid: &GridSpec<T>) -> Result<ProjectionIndex<T>> {
    use rayon::prelude::*;
    let origin = cloud.meta.scanner_origin;
    let assigned: Result<Vec<(Option<(u32, u32)>, T)>> = cloud
        .positions()
        .par_iter()
        .enumerate()
        .map(|(id, p)| {
            let v = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if r == T::zero() {
                return Err(Error::DegenerateInput(format!(
                    "point {id} coincides with the scanner origin"
                )));
            }
            let (theta, phi) = spherical_angles(v)?;
            let pix = grid
                .pixel_of_angles(theta, phi)
                .map(|(i, j)| (i as u32, j as u32));
            Ok((pix, r))
        })
        .collect();
    let assigned = assigned?;
    let (pixel_of, ranges): (Vec<_>, Vec<_>) = assigned.into_iter().unzip();
    let (starts, point_ids) = build_csr(grid, &pixel_of, &ranges);
    log::debug!(
        "project: {} points, {} in grid ({}x{})",
        pixel_of.len(),
        point_ids.len(),
        grid.height,
        grid.width
    );
    Ok(ProjectionIndex {
        grid: *grid,
        pixel_of,
        ranges,
        starts,
        point_ids,
    })
}

/// Per-pixel point counts plus their histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensityMap {
    /// Points per pixel, row-major.
    pub counts: Array2<u32>,
    /// `histogram[c]` = number of pixels holding exactly `c` points
    /// (zero-count pixels included).
    pub histogram: Vec<u64>,
}

impl DensityMap {
    /// Most frequent per-pixel count (smallest count on ties).
    pub fn mode(&self) -> u32 {
        let mut best = 0usize;
        for (c, &n) in self.histogram.iter().enumerate() {
            if n > self.histogram[best] {
                best = c;
            }
        }
        best as u32
    }
}

/// Computes the density map of a projection.
pub fn density_map<T: Real>(index: &ProjectionIndex<T>) -> DensityMap {
    let (h, w) = (index.grid.height, index.grid.width);
    let counts =
        Array2::from_shape_fn((h, w), |(i, j)| index.points_in_pixel(i, j).len() as u32);
    let max = counts.iter().copied().max().unwrap_or(0) as usize;
    let mut histogram = vec![0u64; max + 1];
    for &c in counts.iter() {
        histogram[c as usize] += 1;
    }
    DensityMap { counts, histogram }
}

/// How to collapse multiple point values landing in one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reducer {
    /// Value of the point nearest to the scanner.
    Nearest,
    /// Arithmetic mean of all values in the pixel.
    Mean,
    /// Maximum value in the pixel.
    Max,
}

/// Rasterizes one per-point value array onto the grid; empty pixels get 0.
pub fn rasterize_channel<T: Real>(
    index: &ProjectionIndex<T>,
    values: &[T],
    reducer: Reducer,
) -> Result<Array2<T>> {
    if values.len() != index.n_points() {
        return Err(Error::dims(
            "rasterize_channel values",
            index.n_points(),
            values.len(),
        ));
    }
    let (h, w) = (index.grid.height, index.grid.width);
    let mut out = Array2::from_elem((h, w), T::zero());
    for i in 0..h {
        for j in 0..w {
            let ids = index.points_in_pixel(i, j);
            if ids.is_empty() {
                continue;
            }
            out[(i, j)] = match reducer {
                Reducer::Nearest => values[ids[0] as usize],
                Reducer::Mean => {
                    let sum: T = ids.iter().map(|&id| values[id as usize]).sum();
                    sum / T::from_usize_lossy(ids.len())
                }
                Reducer::Max => ids
                    .iter()
                    .map(|&id| values[id as usize])
                    .fold(T::neg_infinity(), T::max),
            };
        }
    }
    Ok(out)
}

/// Rasterizes per-point labels onto the grid: each pixel takes the label of
/// its nearest point; empty pixels are void (0).
pub fn rasterize_labels<T: Real>(index: &ProjectionIndex<T>, labels: &[u8]) -> Result<LabelMask> {
    if labels.len() != index.n_points() {
        return Err(Error::dims(
            "rasterize_labels labels",
            index.n_points(),
            labels.len(),
        ));
    }
    let (h, w) = (index.grid.height, index.grid.width);
    Ok(LabelMask::from_shape_fn((h, w), |(i, j)| {
        match index.points_in_pixel(i, j).first() {
            Some(&id) => labels[id as usize],
            None => 0,
        }
    }))
}

/// Transfers a per-pixel label mask back to the points: each point takes the
/// label of its pixel; out-of-grid points get void (0).
pub fn back_project<T: Real>(index: &ProjectionIndex<T>, mask: &LabelMask) -> Result<Vec<u8>> {
    let (h, w) = (index.grid.height, index.grid.width);
    if mask.dim() != (h, w) {
        return Err(Error::dims(
            "back_project mask",
            format!("{h}x{w}"),
            format!("{}x{}", mask.dim().0, mask.dim().1),
        ));
    }
    Ok((0..index.n_points())
        .map(|id| match index.pixel_of(id) {
            Some((i, j)) => mask[(i, j)],
            None => 0,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{Point3, ScanMeta};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn standard_grid_is_540_by_1440() {
        let g = GridSpec::<f64>::standard();
        assert_eq!((g.height, g.width), (540, 1440));
        assert_relative_eq!(g.d_theta, 0.25f64.to_radians());
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(GridSpec::<f64>::from_degrees((0.0, 135.0), (0.0, 360.0), 0.0).is_err());
        assert!(GridSpec::<f64>::from_degrees((90.0, 10.0), (0.0, 360.0), 1.0).is_err());
        assert!(GridSpec::<f64>::from_degrees((0.0, 190.0), (0.0, 360.0), 1.0).is_err());
        assert!(GridSpec::<f64>::from_degrees((0.0, 135.0), (0.0, 400.0), 1.0).is_err());
    }

    #[test]
    fn angles_of_axis_directions() {
        let (t, p) = spherical_angles([0.0, 0.0, 2.0]).unwrap();
        assert_relative_eq!(t, 0.0);
        assert_relative_eq!(p, 0.0);
        let (t, p) = spherical_angles([3.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(t, FRAC_PI_2);
        assert_relative_eq!(p, 0.0);
        let (t, p) = spherical_angles([0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(t, FRAC_PI_2);
        assert_relative_eq!(p, FRAC_PI_2);
        let (_, p) = spherical_angles([0.0, -1.0, 0.0]).unwrap();
        assert_relative_eq!(p, 3.0 * FRAC_PI_2);
        let (t, _) = spherical_angles([0.0, 0.0, -1.0]).unwrap();
        assert_relative_eq!(t, PI);
    }

    #[test]
    fn zero_vector_is_degenerate() {
        assert!(spherical_angles([0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn azimuth_stays_in_half_open_interval() {
        // A vanishingly small negative y rounds to phi = 2*pi; must wrap to 0.
        let (_, p) = spherical_angles([1.0, -1e-300, 0.0]).unwrap();
        assert_eq!(p, 0.0);
    }

    /// Cloud with points placed at chosen (zenith, azimuth, range) triples.
    fn cloud_at(angles: &[(f64, f64, f64)]) -> PointCloud<f64> {
        let mut c = PointCloud::new(ScanMeta::new("t"));
        for &(theta_deg, phi_deg, r) in angles {
            let (t, p) = (theta_deg.to_radians(), phi_deg.to_radians());
            c.push(Point3::xyz(
                r * t.sin() * p.cos(),
                r * t.sin() * p.sin(),
                r * t.cos(),
            ));
        }
        c
    }

    #[test]
    fn points_land_in_expected_pixels() {
        let grid = GridSpec::<f64>::from_degrees((0.0, 90.0), (0.0, 360.0), 10.0).unwrap();
        // pixel centres at 5 deg + k*10 deg
        let cloud = cloud_at(&[
            (5.0, 5.0, 2.0),    // row 0, col 0
            (45.0, 185.0, 3.0), // row 4, col 18
            (89.0, 355.0, 1.0), // row 8, col 35
            (95.0, 10.0, 1.0),  // below the grid: out
        ]);
        let idx = project(&cloud, &grid).unwrap();
        assert_eq!(idx.pixel_of(0), Some((0, 0)));
        assert_eq!(idx.pixel_of(1), Some((4, 18)));
        assert_eq!(idx.pixel_of(2), Some((8, 35)));
        assert_eq!(idx.pixel_of(3), None);
        assert_eq!(idx.points_in_pixel(4, 18), &[1]);
    }

    #[test]
    fn upper_edges_are_exclusive() {
        let grid = GridSpec::<f64>::from_degrees((0.0, 90.0), (0.0, 180.0), 10.0).unwrap();
        let cloud = cloud_at(&[(90.0, 10.0, 1.0), (45.0, 180.0, 1.0), (0.0, 0.0, 1.0)]);
        let idx = project(&cloud, &grid).unwrap();
        assert_eq!(idx.pixel_of(0), None); // theta == theta_max
        assert_eq!(idx.pixel_of(1), None); // phi == phi_max
        assert_eq!(idx.pixel_of(2), Some((0, 0))); // lower edges inclusive
    }

    #[test]
    fn pixel_lists_sort_by_range_then_id() {
        let grid = GridSpec::<f64>::from_degrees((0.0, 90.0), (0.0, 360.0), 10.0).unwrap();
        let cloud = cloud_at(&[
            (45.0, 45.0, 5.0),
            (45.0, 45.0, 2.0),
            (45.0, 45.0, 5.0), // same range as id 0 -> id order
        ]);
        let idx = project(&cloud, &grid).unwrap();
        assert_eq!(idx.points_in_pixel(4, 4), &[1, 0, 2]);
        assert_relative_eq!(idx.range_of(1), 2.0);
    }

    #[test]
    fn point_at_origin_is_rejected() {
        let mut cloud = cloud_at(&[(45.0, 45.0, 1.0)]);
        cloud.push(Point3::xyz(0.0, 0.0, 0.0));
        let grid = GridSpec::<f64>::standard();
        assert!(project(&cloud, &grid).is_err());
    }

    #[test]
    fn density_histogram_counts_pixels() {
        let grid = GridSpec::<f64>::from_degrees((0.0, 20.0), (0.0, 20.0), 10.0).unwrap();
        let cloud = cloud_at(&[(5.0, 5.0, 1.0), (5.0, 5.0, 2.0), (15.0, 15.0, 1.0)]);
        let idx = project(&cloud, &grid).unwrap();
        let d = density_map(&idx);
        assert_eq!(d.counts[(0, 0)], 2);
        assert_eq!(d.counts[(1, 1)], 1);
        assert_eq!(d.histogram, vec![2, 1, 1]); // 2 empty, 1 single, 1 double
        assert_eq!(d.mode(), 0);
    }

    #[test]
    fn rasterize_applies_each_reducer() {
        let grid = GridSpec::<f64>::from_degrees((0.0, 20.0), (0.0, 20.0), 10.0).unwrap();
        // two points in pixel (0,0): nearer has value 10, farther 20
        let cloud = cloud_at(&[(5.0, 5.0, 2.0), (5.0, 5.0, 1.0)]);
        let idx = project(&cloud, &grid).unwrap();
        let values = vec![20.0, 10.0];
        let nearest = rasterize_channel(&idx, &values, Reducer::Nearest).unwrap();
        assert_eq!(nearest[(0, 0)], 10.0);
        assert_eq!(nearest[(1, 1)], 0.0); // empty pixel
        let mean = rasterize_channel(&idx, &values, Reducer::Mean).unwrap();
        assert_eq!(mean[(0, 0)], 15.0);
        let max = rasterize_channel(&idx, &values, Reducer::Max).unwrap();
        assert_eq!(max[(0, 0)], 20.0);
    }

    #[test]
    fn rasterize_checks_value_count() {
        let grid = GridSpec::<f64>::from_degrees((0.0, 20.0), (0.0, 20.0), 10.0).unwrap();
        let cloud = cloud_at(&[(5.0, 5.0, 1.0)]);
        let idx = project(&cloud, &grid).unwrap();
        assert!(rasterize_channel(&idx, &[1.0, 2.0], Reducer::Mean).is_err());
    }

    #[test]
    fn back_project_reads_pixel_labels() {
        let grid = GridSpec::<f64>::from_degrees((0.0, 20.0), (0.0, 20.0), 10.0).unwrap();
        let cloud = cloud_at(&[(5.0, 5.0, 1.0), (15.0, 15.0, 1.0), (5.0, 250.0, 1.0)]);
        let idx = project(&cloud, &grid).unwrap();
        let mut mask = LabelMask::zeros((2, 2));
        mask[(0, 0)] = 3;
        mask[(1, 1)] = 5;
        let labels = back_project(&idx, &mask).unwrap();
        assert_eq!(labels, vec![3, 5, 0]); // out-of-grid point -> void
        let bad = LabelMask::zeros((3, 2));
        assert!(back_project(&idx, &bad).is_err());
    }

    #[test]
    fn label_rasterization_votes_by_nearest_point() {
        let grid = GridSpec::<f64>::from_degrees((0.0, 20.0), (0.0, 20.0), 10.0).unwrap();
        // two points share pixel (0, 0); the nearer one (range 1 < 2) wins
        let cloud = cloud_at(&[(5.0, 5.0, 2.0), (5.0, 5.0, 1.0), (15.0, 15.0, 1.0)]);
        let idx = project(&cloud, &grid).unwrap();
        let mask = rasterize_labels(&idx, &[9, 4, 7]).unwrap();
        assert_eq!(mask[(0, 0)], 4);
        assert_eq!(mask[(1, 1)], 7);
        assert_eq!(mask[(0, 1)], 0); // empty pixel stays void
        assert!(rasterize_labels(&idx, &[1, 2]).is_err());
    }

    #[test]
    fn valid_mask_tracks_occupancy() {
        let grid = GridSpec::<f64>::from_degrees((0.0, 20.0), (0.0, 20.0), 10.0).unwrap();
        let cloud = cloud_at(&[(5.0, 5.0, 1.0)]);
        let idx = project(&cloud, &grid).unwrap();
        let m = idx.valid_mask();
        assert!(m[(0, 0)]);
        assert!(!m[(0, 1)]);
    }
}
