//! Synthetic scan generators for tests, examples and benchmarks.
//!
//! Real terrestrial scans are large and hard to reason about; these
//! generators produce small scanner-centred clouds with known geometry and
//! known labels so every pipeline stage can be exercised against an exact
//! expectation. All generators are deterministic for a given seed.

use crate::cloud::{Point3, PointCloud, ScanMeta};
use crate::projection::GridSpec;
use crate::real::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What one simulated beam records: range plus optional radiometry and label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSample<T> {
    pub range: T,
    pub intensity: Option<T>,
    pub label: Option<u8>,
}

/// Fires one beam through the centre of every cell of `grid` and collects
/// the returns into a cloud.
///
/// The closure sees `(row, col, theta, phi)` of each beam and decides what
/// the beam hits; every sample must fill the same optional fields (the
/// first one fixes the cloud's columns). Beams are emitted in row-major
/// order, so point `i * width + j` lies exactly mid-cell of pixel `(i, j)`
/// and projecting the result back onto `grid` puts one point in every
/// pixel.
pub fn beam_grid_scan<T, F>(grid: &GridSpec<T>, source_id: &str, mut sample: F) -> PointCloud<T>
where
    T: Real,
    F: FnMut(usize, usize, T, T) -> BeamSample<T>,
{
    let meta = ScanMeta::new(source_id);
    let origin = meta.scanner_origin;
    let mut cloud = PointCloud::with_capacity(meta, grid.num_pixels());
    let half = T::from_f64_lossy(0.5);
    for i in 0..grid.height {
        let theta = grid.theta_min + (T::from_usize_lossy(i) + half) * grid.d_theta;
        let (sin_t, cos_t) = theta.sin_cos();
        for j in 0..grid.width {
            let phi = grid.phi_min + (T::from_usize_lossy(j) + half) * grid.d_phi;
            let (sin_p, cos_p) = phi.sin_cos();
            let s = sample(i, j, theta, phi);
            cloud.push(Point3 {
                x: origin[0] + s.range * sin_t * cos_p,
                y: origin[1] + s.range * sin_t * sin_p,
                z: origin[2] + s.range * cos_t,
                intensity: s.intensity,
                label: s.label,
            });
        }
    }
    cloud
}

/// A fully labelled scan made of three concentric zenith bands.
///
/// Each band (classes 1, 2, 3 from the top of the grid down) hits at a
/// band-specific range (4, 7, 10 m ± 0.2) with a band-specific intensity
/// (0.2, 0.5, 0.8 ± 0.05); the jitter comes from a stream seeded with
/// `seed`. One point per cell of `grid`, so the scan is dense, separable in
/// every recorded quantity, and cheap to segment correctly.
pub fn layered_scan<T: Real>(grid: &GridSpec<T>, source_id: &str, seed: u64) -> PointCloud<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = (grid.theta_max - grid.theta_min).as_f64();
    let theta_min = grid.theta_min.as_f64();
    beam_grid_scan(grid, source_id, |_, _, theta, _| {
        let t = (theta.as_f64() - theta_min) / span;
        let band = if t < 1.0 / 3.0 {
            0usize
        } else if t < 2.0 / 3.0 {
            1
        } else {
            2
        };
        let range = [4.0, 7.0, 10.0][band] + rng.random_range(-0.2..0.2);
        let intensity = [0.2, 0.5, 0.8][band] + rng.random_range(-0.05..0.05);
        BeamSample {
            range: T::from_f64_lossy(range),
            intensity: Some(T::from_f64_lossy(intensity)),
            label: Some(band as u8 + 1),
        }
    })
}

/// A flat `rows x cols` patch split left/right into classes 1 and 2, with a
/// fraction of the labels near the boundary flipped to the other class.
///
/// Points sit on a regular grid in the z = 0 plane (`x` centred on the
/// class boundary, step `spacing`); the scanner hovers 3 m above the origin
/// so ranges and view directions are well defined. Intensity correlates
/// with the *true* class (0.3 vs 0.7 ± 0.1), so a classifier can recover
/// the clean labels. `floor(noise_frac * n)` labels are flipped, all inside
/// the strip `|x| < 10 * spacing` (fewer if the strip is smaller).
///
/// Returns the noisy cloud together with the clean ground-truth labels.
pub fn boundary_noise_scene<T: Real>(
    rows: usize,
    cols: usize,
    spacing: T,
    noise_frac: f64,
    seed: u64,
) -> (PointCloud<T>, Vec<u8>) {
    let mut meta = ScanMeta::new("boundary-noise");
    meta.scanner_origin = [T::zero(), T::zero(), T::from_f64_lossy(3.0)];
    let n = rows * cols;
    let mut cloud = PointCloud::with_capacity(meta, n);
    let mut gt = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_cols = T::from_usize_lossy(cols) / T::from_f64_lossy(2.0);
    for r in 0..rows {
        for c in 0..cols {
            let x = (T::from_usize_lossy(c) - half_cols) * spacing;
            let class = if x < T::zero() { 1u8 } else { 2 };
            let base = if class == 1 { 0.3 } else { 0.7 };
            cloud.push(Point3 {
                x,
                y: T::from_usize_lossy(r) * spacing,
                z: T::zero(),
                intensity: Some(T::from_f64_lossy(base + rng.random_range(-0.1..0.1))),
                label: Some(class),
            });
            gt.push(class);
        }
    }
    let strip: Vec<usize> = (0..n)
        .filter(|&i| cloud.position(i)[0].abs() < spacing * T::from_f64_lossy(10.0))
        .collect();
    let flips = ((noise_frac * n as f64).floor() as usize).min(strip.len());
    let labels = cloud.labels_mut();
    for k in rand::seq::index::sample(&mut rng, strip.len(), flips) {
        let i = strip[k];
        labels[i] = 3 - labels[i];
    }
    (cloud, gt)
}

/// `n` returns at uniformly random directions inside the angular span of
/// `grid`, at ranges uniform in [2, 30) m, labelled by zenith third — bulk
/// data for throughput tests. Intensity is the normalised range, so every
/// optional column is populated.
pub fn random_shell_scan<T: Real>(
    n: usize,
    grid: &GridSpec<T>,
    source_id: &str,
    seed: u64,
) -> PointCloud<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meta = ScanMeta::new(source_id);
    let origin = meta.scanner_origin;
    let mut cloud = PointCloud::with_capacity(meta, n);
    let t0 = grid.theta_min.as_f64();
    let t1 = grid.theta_max.as_f64();
    let p0 = grid.phi_min.as_f64();
    let p1 = grid.phi_max.as_f64();
    for _ in 0..n {
        let theta: f64 = rng.random_range(t0..t1);
        let phi: f64 = rng.random_range(p0..p1);
        let range: f64 = rng.random_range(2.0..30.0);
        let band = (((theta - t0) / (t1 - t0) * 3.0).floor() as u8).min(2);
        let (sin_t, cos_t) = theta.sin_cos();
        let (sin_p, cos_p) = phi.sin_cos();
        cloud.push(Point3 {
            x: origin[0] + T::from_f64_lossy(range * sin_t * cos_p),
            y: origin[1] + T::from_f64_lossy(range * sin_t * sin_p),
            z: origin[2] + T::from_f64_lossy(range * cos_t),
            intensity: Some(T::from_f64_lossy((range - 2.0) / 28.0)),
            label: Some(band + 1),
        });
    }
    cloud
}
