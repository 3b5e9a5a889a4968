//! Normal-vector pseudo-colouring.
//!
//! Encodes per-pixel unit normals as HSV colour — hue from the normal's
//! azimuth, value from its elevation, saturation fixed at 0.6 — converted
//! to RGB with the standard hexcone formula. Equal normals always map to
//! equal colours, and all outputs lie in `[0, 1]`.

use crate::error::{Error, Result};
use crate::real::{pi, two_pi, Real};
use ndarray::Array2;

const SATURATION: f64 = 0.6;

/// Converts per-pixel normals into three pseudo-RGB planes
/// (`normal_r`, `normal_g`, `normal_b` by convention).
///
/// Void pixels are 0 in all three planes.
pub fn normals_to_pseudo_rgb<T: Real>(
    nx: &Array2<T>,
    ny: &Array2<T>,
    nz: &Array2<T>,
    valid: &Array2<bool>,
) -> Result<[Array2<T>; 3]> {
    let dim = valid.dim();
    for (name, plane) in [("nx", nx), ("ny", ny), ("nz", nz)] {
        if plane.dim() != dim {
            return Err(Error::dims(
                format!("normals_to_pseudo_rgb {name}"),
                format!("{}x{}", dim.0, dim.1),
                format!("{}x{}", plane.dim().0, plane.dim().1),
            ));
        }
    }
    let mut r = Array2::from_elem(dim, T::zero());
    let mut g = Array2::from_elem(dim, T::zero());
    let mut b = Array2::from_elem(dim, T::zero());
    for ((pix, &ok), (&x, (&y, &z))) in valid
        .indexed_iter()
        .zip(nx.iter().zip(ny.iter().zip(nz.iter())))
    {
        if !ok {
            continue;
        }
        let (cr, cg, cb) = normal_color(x, y, z);
        r[pix] = cr;
        g[pix] = cg;
        b[pix] = cb;
    }
    Ok([r, g, b])
}

/// Colour of a single normal.
fn normal_color<T: Real>(nx: T, ny: T, nz: T) -> (T, T, T) {
    let mut azimuth = ny.atan2(nx);
    if azimuth < T::zero() {
        azimuth += two_pi::<T>();
    }
    if azimuth >= two_pi::<T>() {
        azimuth = T::zero();
    }
    let hue = azimuth / two_pi::<T>();
    let half_pi = pi::<T>() / T::from_f64_lossy(2.0);
    let elevation = nz.max(-T::one()).min(T::one()).asin();
    let value = (elevation + half_pi) / pi::<T>();
    hsv_to_rgb(hue, T::from_f64_lossy(SATURATION), value)
}

/// Hexcone HSV -> RGB with `h` in `[0, 1)`.
fn hsv_to_rgb<T: Real>(h: T, s: T, v: T) -> (T, T, T) {
    let six = T::from_f64_lossy(6.0);
    let h6 = (h * six).min(six - T::epsilon());
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (T::one() - s);
    let q = v * (T::one() - s * f);
    let t = v * (T::one() - s * (T::one() - f));
    match sector.to_usize().unwrap_or(0) % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn up_normal_is_bright_desaturated_red() {
        let (r, g, b) = normal_color(0.0, 0.0, 1.0);
        assert_relative_eq!(r, 1.0, epsilon = 1e-12);
        assert_relative_eq!(g, 0.4, epsilon = 1e-12);
        assert_relative_eq!(b, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn horizontal_normals_encode_azimuth_in_hue() {
        // +x: hue 0, elevation 0 -> value 0.5
        let (r, g, b) = normal_color(1.0, 0.0, 0.0);
        assert_relative_eq!(r, 0.5, epsilon = 1e-12);
        assert_relative_eq!(g, 0.2, epsilon = 1e-12);
        assert_relative_eq!(b, 0.2, epsilon = 1e-12);
        // -x: hue 0.5 -> cyan-ish sector
        let (r, g, b) = normal_color(-1.0, 0.0, 0.0);
        assert_relative_eq!(r, 0.2, epsilon = 1e-12);
        assert_relative_eq!(g, 0.5, epsilon = 1e-12);
        assert_relative_eq!(b, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn down_normal_is_black() {
        let (r, g, b) = normal_color(0.0, 0.0, -1.0);
        assert_relative_eq!(r, 0.0, epsilon = 1e-12);
        assert_relative_eq!(g, 0.0, epsilon = 1e-12);
        assert_relative_eq!(b, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn all_outputs_stay_in_unit_range() {
        for k in 0..64 {
            let a = k as f64 * 0.1 - 3.0;
            let b = (k % 7) as f64 * 0.3 - 1.0;
            let n = [(a.cos() * b.cos()), (a.sin() * b.cos()), b.sin()];
            let (r, g, bl) = normal_color(n[0], n[1], n[2]);
            for v in [r, g, bl] {
                assert!((0.0..=1.0).contains(&v), "out of range: {v}");
            }
        }
    }

    #[test]
    fn void_pixels_are_zero_and_shapes_checked() {
        let nx = array![[0.0, 1.0]];
        let ny = array![[0.0, 0.0]];
        let nz = array![[1.0, 0.0]];
        let valid = array![[false, true]];
        let [r, g, b] = normals_to_pseudo_rgb(&nx, &ny, &nz, &valid).unwrap();
        assert_eq!((r[(0, 0)], g[(0, 0)], b[(0, 0)]), (0.0, 0.0, 0.0));
        assert!(r[(0, 1)] > 0.0);
        assert!(g[(0, 1)] > 0.0 && b[(0, 1)] > 0.0);
        let bad = array![[0.0], [0.0]];
        assert!(normals_to_pseudo_rgb(&bad, &ny, &nz, &valid).is_err());
    }
}
