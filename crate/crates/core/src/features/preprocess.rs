//! Radiometric preprocessing of the basic channels.
//!
//! Produces the three-channel base cube from raw rasterized maps:
//!
//! * `intensity`, `range` — percentile-clipped (robust stretch), then
//!   affinely mapped to `[0.01, 1.0]`;
//! * `z_inv` — height above the lowest valid pixel, negated and normalized
//!   to `[0.01, 1.0]` so the lowest point is brightest.
//!
//! Void pixels are exactly 0 in every channel, which keeps them
//! distinguishable from valid pixels (always >= 0.01).

use crate::error::{Error, Result};
use crate::features::FeatureCube;
use crate::real::Real;
use ndarray::Array2;

/// Percentile bounds for the robust stretch, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig<T> {
    pub lo_percentile: T,
    pub hi_percentile: T,
}

impl<T: Real> Default for PreprocessConfig<T> {
    fn default() -> Self {
        PreprocessConfig {
            lo_percentile: T::from_f64_lossy(1.0),
            hi_percentile: T::from_f64_lossy(99.0),
        }
    }
}

/// Linear-interpolation percentile of pre-sorted values.
fn percentile_sorted<T: Real>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let hundred = T::from_f64_lossy(100.0);
    let rank = (p / hundred) * T::from_usize_lossy(n - 1);
    let lo = rank.floor();
    let idx = lo.to_usize().unwrap_or(0).min(n - 1);
    let frac = rank - lo;
    if idx + 1 >= n || frac == T::zero() {
        sorted[idx]
    } else {
        sorted[idx] + (sorted[idx + 1] - sorted[idx]) * frac
    }
}

const FLOOR: f64 = 0.01;

/// Clip `plane` to the `[lo_p, hi_p]` percentiles of its valid pixels and
/// map the result affinely onto `[0.01, 1.0]`; constant channels collapse
/// to the 0.01 floor. Void pixels become 0.
fn stretch_channel<T: Real>(
    plane: &Array2<T>,
    valid: &Array2<bool>,
    lo_p: T,
    hi_p: T,
) -> Array2<T> {
    let mut values: Vec<T> = plane
        .iter()
        .zip(valid.iter())
        .filter(|&(_, &v)| v)
        .map(|(&x, _)| x)
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite channel values"));
    let floor = T::from_f64_lossy(FLOOR);
    let span = T::from_f64_lossy(1.0 - FLOOR);
    if values.is_empty() {
        return Array2::from_elem(plane.dim(), T::zero());
    }
    let lo = percentile_sorted(&values, lo_p);
    let hi = percentile_sorted(&values, hi_p);
    Array2::from_shape_fn(plane.dim(), |pix| {
        if !valid[pix] {
            return T::zero();
        }
        if hi <= lo {
            return floor;
        }
        let clipped = plane[pix].max(lo).min(hi);
        floor + (clipped - lo) / (hi - lo) * span
    })
}

/// Inverted-height channel: `1.0` at the lowest valid pixel, `0.01` at the
/// highest; a perfectly flat scene saturates at `1.0` everywhere valid.
fn z_inverted<T: Real>(z: &Array2<T>, valid: &Array2<bool>) -> Array2<T> {
    let mut z_min = T::infinity();
    let mut z_max = T::neg_infinity();
    for (&v, &ok) in z.iter().zip(valid.iter()) {
        if ok {
            z_min = z_min.min(v);
            z_max = z_max.max(v);
        }
    }
    let floor = T::from_f64_lossy(FLOOR);
    let span = T::from_f64_lossy(1.0 - FLOOR);
    let h_max = z_max - z_min;
    Array2::from_shape_fn(z.dim(), |pix| {
        if !valid[pix] {
            T::zero()
        } else if h_max <= T::zero() {
            T::one()
        } else {
            floor + (h_max - (z[pix] - z_min)) / h_max * span
        }
    })
}

/// Builds the preprocessed base cube (`intensity`, `range`, `z_inv`).
///
/// All maps must share the raster shape and there must be at least one
/// valid pixel.
pub fn preprocess_basic<T: Real>(
    intensity: &Array2<T>,
    range: &Array2<T>,
    z: &Array2<T>,
    valid: &Array2<bool>,
    config: &PreprocessConfig<T>,
) -> Result<FeatureCube<T>> {
    let dim = valid.dim();
    for (name, plane) in [("intensity", intensity), ("range", range), ("z", z)] {
        if plane.dim() != dim {
            return Err(Error::dims(
                format!("preprocess_basic {name} map"),
                format!("{}x{}", dim.0, dim.1),
                format!("{}x{}", plane.dim().0, plane.dim().1),
            ));
        }
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::DegenerateInput(
            "preprocess_basic: no valid pixels".into(),
        ));
    }
    let zero = T::zero();
    let hundred = T::from_f64_lossy(100.0);
    let (lo_p, hi_p) = (config.lo_percentile, config.hi_percentile);
    if lo_p < zero || hi_p > hundred || lo_p > hi_p {
        return Err(Error::InvalidArgument(format!(
            "percentiles must satisfy 0 <= lo <= hi <= 100, got {lo_p}..{hi_p}"
        )));
    }
    let mut cube = FeatureCube::empty(valid.clone());
    cube.push_channel("intensity", stretch_channel(intensity, valid, lo_p, hi_p))?;
    cube.push_channel("range", stretch_channel(range, valid, lo_p, hi_p))?;
    cube.push_channel("z_inv", z_inverted(z, valid))?;
    Ok(cube)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn full_percentiles_map_to_unit_interval() {
        let plane = array![[0.0, 50.0, 100.0]];
        let valid = array![[true, true, true]];
        let out = stretch_channel(&plane, &valid, 0.0, 100.0);
        assert_relative_eq!(out[(0, 0)], 0.01, epsilon = 1e-12);
        assert_relative_eq!(out[(0, 1)], 0.505, epsilon = 1e-12);
        assert_relative_eq!(out[(0, 2)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn outliers_are_clipped_to_the_stretch_bounds() {
        // 101 values 0..=100; 1st/99th percentiles are 1 and 99
        let values: Vec<f64> = (0..=100).map(|v| v as f64).collect();
        let plane = Array2::from_shape_vec((1, 101), values).unwrap();
        let valid = Array2::from_elem((1, 101), true);
        let out = stretch_channel(&plane, &valid, 1.0, 99.0);
        assert_relative_eq!(out[(0, 0)], 0.01, epsilon = 1e-12); // clipped up
        assert_relative_eq!(out[(0, 100)], 1.0, epsilon = 1e-12); // clipped down
        assert_relative_eq!(out[(0, 1)], 0.01, epsilon = 1e-12); // exactly at lo
        assert_relative_eq!(out[(0, 99)], 1.0, epsilon = 1e-12); // exactly at hi
    }

    #[test]
    fn constant_channel_sits_at_the_floor() {
        let plane = array![[7.0, 7.0], [7.0, 7.0]];
        let valid = array![[true, true], [true, false]];
        let out = stretch_channel(&plane, &valid, 1.0, 99.0);
        assert_eq!(out[(0, 0)], 0.01);
        assert_eq!(out[(1, 1)], 0.0); // void
    }

    #[test]
    fn z_inversion_brightens_the_lowest_point() {
        let z = array![[0.0, 5.0, 10.0]];
        let valid = array![[true, true, true]];
        let out = z_inverted(&z, &valid);
        assert_relative_eq!(out[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(out[(0, 1)], 0.505, epsilon = 1e-12);
        assert_relative_eq!(out[(0, 2)], 0.01, epsilon = 1e-12);
    }

    #[test]
    fn flat_scene_saturates_z_inv() {
        let z = array![[3.0, 3.0], [3.0, 3.0]];
        let valid = array![[true, true], [false, true]];
        let out = z_inverted(&z, &valid);
        assert_eq!(out[(0, 0)], 1.0);
        assert_eq!(out[(1, 0)], 0.0);
    }

    #[test]
    fn cube_respects_floor_and_void_invariants() {
        let intensity = array![[3.0, 9.0], [1.0, 2.0]];
        let range = array![[2.0, 4.0], [6.0, 8.0]];
        let z = array![[0.0, 1.0], [2.0, 3.0]];
        let valid = array![[true, false], [true, true]];
        let cube = preprocess_basic(
            &intensity,
            &range,
            &z,
            &valid,
            &PreprocessConfig::default(),
        )
        .unwrap();
        assert_eq!(cube.names(), &["intensity", "range", "z_inv"]);
        for c in 0..3 {
            let plane = cube.channel_at(c);
            for (pix, &v) in plane.indexed_iter() {
                if valid[pix] {
                    assert!((0.01..=1.0).contains(&v), "channel {c} value {v}");
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn shape_and_percentile_errors() {
        let a = Array2::<f64>::zeros((2, 2));
        let bad = Array2::<f64>::zeros((3, 2));
        let valid = Array2::from_elem((2, 2), true);
        assert!(preprocess_basic(&a, &bad, &a, &valid, &PreprocessConfig::default()).is_err());
        let config = PreprocessConfig {
            lo_percentile: 50.0,
            hi_percentile: 10.0,
        };
        assert!(preprocess_basic(&a, &a, &a, &valid, &config).is_err());
        let none = Array2::from_elem((2, 2), false);
        assert!(preprocess_basic(&a, &a, &a, &none, &PreprocessConfig::default()).is_err());
    }
}
