//! Eigenvalue geometry descriptors.
//!
//! For every point, the covariance of its adaptive-radius neighbourhood
//! (query point included) is eigen-decomposed with a closed-form symmetric
//! 3x3 solver. With eigenvalues `l1 <= l2 <= l3` the descriptors are
//!
//! * curvature  `l1 / (l1 + l2 + l3)` — 0 on lines and planes, 1/3 in
//!   isotropic volumes;
//! * anisotropy `(l3 - l2) / l3` — 1 on lines, 0 on planes and balls;
//! * planarity  `(l2 - l1) / l3` — 1 on planes, 0 on lines and balls;
//!
//! plus the surface normal: the eigenvector of `l1`, sign-flipped to face
//! the scanner. Neighbourhoods with fewer than three neighbours are
//! degenerate: descriptors are zero and the normal falls back to the unit
//! view vector (point towards scanner).

use crate::cloud::{adaptive_radius, AdaptiveRadius, PointCloud, SpatialIndex};
use crate::error::{Error, Result};
use crate::real::Real;
use rayon::prelude::*;

/// Per-point geometry descriptors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenFeatures<T> {
    /// Covariance eigenvalues, ascending.
    pub eigenvalues: [T; 3],
    pub curvature: T,
    pub anisotropy: T,
    pub planarity: T,
    /// Unit normal, oriented towards the scanner.
    pub normal: [T; 3],
}

impl<T: Real> EigenFeatures<T> {
    fn degenerate(view: [T; 3]) -> Self {
        EigenFeatures {
            eigenvalues: [T::zero(); 3],
            curvature: T::zero(),
            anisotropy: T::zero(),
            planarity: T::zero(),
            normal: view,
        }
    }
}

#[inline]
fn normalize_or<T: Real>(v: [T; 3], fallback: [T; 3]) -> [T; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n > T::zero() {
        [v[0] / n, v[1] / n, v[2] / n]
    } else {
        fallback
    }
}

/// Closed-form eigen-decomposition of a symmetric 3x3 matrix.
///
/// Returns `(eigenvalues ascending, eigenvectors)` with `eigenvectors[k]`
/// the unit eigenvector of `eigenvalues[k]`. Deterministic sign convention:
/// the first component of largest magnitude is positive.
pub fn sym_eigen_3x3<T: Real>(m: &[[T; 3]; 3]) -> ([T; 3], [[T; 3]; 3]) {
    let half = T::from_f64_lossy(0.5);
    let third = T::one() / T::from_f64_lossy(3.0);
    let two = T::from_f64_lossy(2.0);
    let off2 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let scale = m
        .iter()
        .flatten()
        .fold(T::zero(), |acc, &v| acc.max(v.abs()));
    if scale == T::zero() {
        return ([T::zero(); 3], axes_matrix::<T>());
    }
    // Effectively diagonal: exact answer by sorting the diagonal.
    if off2 <= scale * scale * T::epsilon() * T::epsilon() {
        let mut pairs = [(m[0][0], 0usize), (m[1][1], 1), (m[2][2], 2)];
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite matrix").then(a.1.cmp(&b.1)));
        let mut vals = [T::zero(); 3];
        let mut vecs = [[T::zero(); 3]; 3];
        for (k, &(v, axis)) in pairs.iter().enumerate() {
            vals[k] = v;
            vecs[k][axis] = T::one();
        }
        return (vals, vecs);
    }

    let q = (m[0][0] + m[1][1] + m[2][2]) * third;
    let p2 = (m[0][0] - q) * (m[0][0] - q)
        + (m[1][1] - q) * (m[1][1] - q)
        + (m[2][2] - q) * (m[2][2] - q)
        + two * off2;
    let p = (p2 / T::from_f64_lossy(6.0)).sqrt();
    let inv_p = T::one() / p;
    // B = (M - qI) / p, det(B)/2 drives the trigonometric root formula.
    let b = [
        [(m[0][0] - q) * inv_p, m[0][1] * inv_p, m[0][2] * inv_p],
        [m[0][1] * inv_p, (m[1][1] - q) * inv_p, m[1][2] * inv_p],
        [m[0][2] * inv_p, m[1][2] * inv_p, (m[2][2] - q) * inv_p],
    ];
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[1][2])
        - b[0][1] * (b[0][1] * b[2][2] - b[1][2] * b[0][2])
        + b[0][2] * (b[0][1] * b[1][2] - b[1][1] * b[0][2]);
    let r = (det_b * half).max(-T::one()).min(T::one());
    let phi = r.acos() * third;
    let two_pi_third = T::from_f64_lossy(2.0 * std::f64::consts::PI / 3.0);
    let l3 = q + two * p * phi.cos();
    let l1 = q + two * p * (phi + two_pi_third).cos();
    let l2 = (q + q + q) - l1 - l3;
    // The roots are ordered mathematically, but recovering l2 from the
    // trace can drift it an ulp past its neighbours at repeated roots.
    let mut vals = [l1, l2, l3];
    if vals[0] > vals[1] {
        vals.swap(0, 1);
    }
    if vals[1] > vals[2] {
        vals.swap(1, 2);
    }
    if vals[0] > vals[1] {
        vals.swap(0, 1);
    }

    let v1 = eigenvector_for(m, vals[0], scale);
    let v3 = eigenvector_for(m, vals[2], scale);
    let vecs = match (v1, v3) {
        (Some(v1), Some(v3)) => {
            let v2 = cross(v3, v1);
            [v1, normalize_or(v2, axes_matrix::<T>()[1]), v3]
        }
        (Some(v1), None) => {
            // l2 == l3: complete an orthonormal basis around v1.
            let v2 = orthogonal_unit(v1);
            [v1, v2, normalize_or(cross(v1, v2), axes_matrix::<T>()[2])]
        }
        (None, Some(v3)) => {
            // l1 == l2: complete around v3.
            let v1 = orthogonal_unit(v3);
            [v1, normalize_or(cross(v3, v1), axes_matrix::<T>()[1]), v3]
        }
        (None, None) => axes_matrix::<T>(),
    };
    (vals, vecs.map(canonical_sign))
}

/// Unit eigenvector of `m` for eigenvalue `l` via the largest cross product
/// of rows of `m - l I`; `None` when the eigenvalue is (numerically)
/// repeated and the cross products vanish.
fn eigenvector_for<T: Real>(m: &[[T; 3]; 3], l: T, scale: T) -> Option<[T; 3]> {
    let a = [
        [m[0][0] - l, m[0][1], m[0][2]],
        [m[0][1], m[1][1] - l, m[1][2]],
        [m[0][2], m[1][2], m[2][2] - l],
    ];
    let candidates = [cross(a[0], a[1]), cross(a[0], a[2]), cross(a[1], a[2])];
    let mut best = candidates[0];
    let mut best_n2 = norm2(best);
    for &c in &candidates[1..] {
        let n2 = norm2(c);
        if n2 > best_n2 {
            best = c;
            best_n2 = n2;
        }
    }
    let tol = T::epsilon().sqrt() * scale * scale;
    if best_n2.sqrt() <= tol {
        return None;
    }
    Some(normalize_or(best, axes_matrix::<T>()[0]))
}

/// Any unit vector orthogonal to `v`, chosen deterministically (axis least
/// aligned with `v`, projected and normalized).
fn orthogonal_unit<T: Real>(v: [T; 3]) -> [T; 3] {
    let mut axis = 0usize;
    let mut best = v[0].abs();
    for a in 1..3 {
        if v[a].abs() < best {
            best = v[a].abs();
            axis = a;
        }
    }
    let mut e = [T::zero(); 3];
    e[axis] = T::one();
    let dot = e[0] * v[0] + e[1] * v[1] + e[2] * v[2];
    let u = [e[0] - dot * v[0], e[1] - dot * v[1], e[2] - dot * v[2]];
    normalize_or(u, e)
}

fn canonical_sign<T: Real>(v: [T; 3]) -> [T; 3] {
    let mut idx = 0usize;
    for a in 1..3 {
        if v[a].abs() > v[idx].abs() {
            idx = a;
        }
    }
    if v[idx] < T::zero() {
        [-v[0], -v[1], -v[2]]
    } else {
        v
    }
}

#[inline]
fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn norm2<T: Real>(v: [T; 3]) -> T {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

fn axes_matrix<T: Real>() -> [[T; 3]; 3] {
    [
        [T::one(), T::zero(), T::zero()],
        [T::zero(), T::one(), T::zero()],
        [T::zero(), T::zero(), T::one()],
    ]
}

/// Descriptors for one explicit neighbourhood.
///
/// `neighbors` excludes the centre point; `view` must be the unit vector
/// from the point towards the scanner, used both to orient the normal and
/// as the degenerate-neighbourhood fallback.
pub(crate) fn features_from_neighborhood<T: Real>(
    center: [T; 3],
    neighbors: &[[T; 3]],
    view: [T; 3],
) -> EigenFeatures<T> {
    if neighbors.len() < 3 {
        return EigenFeatures::degenerate(view);
    }
    let n = neighbors.len() + 1;
    let n_t = T::from_usize_lossy(n);
    let mut mean = center;
    for p in neighbors {
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    for a in 0..3 {
        mean[a] /= n_t;
    }
    let mut cov = [[T::zero(); 3]; 3];
    let mut accumulate = |p: &[T; 3]| {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for r in 0..3 {
            for c in r..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    };
    accumulate(&center);
    for p in neighbors {
        accumulate(p);
    }
    let denom = T::from_usize_lossy(n - 1);
    let mut m = [[T::zero(); 3]; 3];
    for r in 0..3 {
        for c in r..3 {
            let v = cov[r][c] / denom;
            m[r][c] = v;
            m[c][r] = v;
        }
    }
    let (vals, vecs) = sym_eigen_3x3(&m);
    let [l1, l2, l3] = vals;
    if l3 <= T::zero() {
        // All points coincide: no geometry to describe.
        return EigenFeatures::degenerate(view);
    }
    let sum = l1 + l2 + l3;
    let clamp01 = |v: T| v.max(T::zero()).min(T::one());
    let third = T::one() / T::from_f64_lossy(3.0);
    let curvature = clamp01(l1 / sum).min(third);
    let anisotropy = clamp01((l3 - l2) / l3);
    let planarity = clamp01((l2 - l1) / l3);
    let mut normal = vecs[0];
    let toward = normal[0] * view[0] + normal[1] * view[1] + normal[2] * view[2];
    if toward < T::zero() {
        normal = [-normal[0], -normal[1], -normal[2]];
    }
    EigenFeatures {
        eigenvalues: vals,
        curvature,
        anisotropy,
        planarity,
        normal,
    }
}

/// Unit vector from point `p` towards the scanner origin; +z when the point
/// sits exactly on the scanner.
pub(crate) fn view_vector<T: Real>(p: [T; 3], origin: [T; 3]) -> [T; 3] {
    normalize_or(
        [origin[0] - p[0], origin[1] - p[1], origin[2] - p[2]],
        [T::zero(), T::zero(), T::one()],
    )
}

/// Computes descriptors for every point using adaptive-radius
/// neighbourhoods from `index` (which must be built over `cloud`).
pub fn eigen_descriptors<T: Real>(
    cloud: &PointCloud<T>,
    index: &SpatialIndex<T>,
    radius: &AdaptiveRadius<T>,
) -> Result<Vec<EigenFeatures<T>>> {
    if index.len() != cloud.len() {
        return Err(Error::dims("eigen_descriptors index", cloud.len(), index.len()));
    }
    let origin = cloud.meta.scanner_origin;
    let out: Vec<EigenFeatures<T>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let p = cloud.position(i);
            let r = adaptive_radius(index, i, radius);
            let neigh = index.neighbors_in_radius(i, r);
            let positions: Vec<[T; 3]> =
                neigh.iter().map(|&(id, _)| index.position(id)).collect();
            features_from_neighborhood(p, &positions, view_vector(p, origin))
        })
        .collect();
    Ok(out)
}
