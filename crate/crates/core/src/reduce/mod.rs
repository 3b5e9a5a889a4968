//! Statistical channel reduction: PCA, MNF and ICA over feature-cube pixels.
//!
//! Each fit consumes the valid pixels of a cube (void pixels carry no
//! signal and would otherwise dominate the statistics) and produces a
//! [`ReductionModel`]: a linear projection of the input channels onto `k`
//! components. [`transform`] applies a model to any compatible cube and
//! min-max normalizes every output channel to `[0, 1]`, so three-component
//! stacks can be rendered or fed onward directly; [`scores`] exposes the
//! raw projections when the normalization is unwanted.
//!
//! All fitting arithmetic runs in `f64` regardless of the cube scalar, so
//! models are reproducible across cube precisions and JSON round-trips are
//! lossless.

use crate::error::{Error, Result};
use crate::features::FeatureCube;
use crate::real::Real;
use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Relative eigenvalue floor applied to the noise covariance before it is
/// inverted: eigenvalues below `RIDGE_EPS * max(lambda_max, 1)` are raised
/// to that floor, so a singular noise estimate still yields a finite
/// whitening matrix.
pub const RIDGE_EPS: f64 = 1e-12;

/// Iteration cap for the ICA fixed-point loop.
pub const MAX_ICA_ITERATIONS: usize = 500;

/// Convergence tolerance for the ICA fixed-point loop: the largest change
/// of any unmixing direction between iterations, measured as
/// `|1 - |<w_new, w_old>||`.
pub const ICA_TOLERANCE: f64 = 1e-6;

/// Relative eigenvalue threshold below which a direction counts as
/// rank-deficient.
const RANK_TOL: f64 = 1e-12;

/// Which reduction produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ReductionKind {
    Pca,
    Mnf,
    Ica,
}

impl ReductionKind {
    /// Channel-name prefix used by [`transform`] outputs.
    pub fn prefix(self) -> &'static str {
        match self {
            ReductionKind::Pca => "pca",
            ReductionKind::Mnf => "mnf",
            ReductionKind::Ica => "ica",
        }
    }
}

/// What the fit learned beyond the projection itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitDiagnostics {
    /// PCA: fraction of the total variance captured per component,
    /// non-increasing.
    ExplainedVariance(Vec<f64>),
    /// MNF: variance of the noise-whitened data along each component,
    /// non-increasing; larger means more signal per unit of noise.
    SignalToNoise(Vec<f64>),
    /// ICA: fixed-point iteration outcome. A model with `converged: false`
    /// is still usable; it is the state after [`MAX_ICA_ITERATIONS`].
    Convergence { converged: bool, iterations: usize },
}

/// A fitted linear projection onto `k` components.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionModel {
    pub kind: ReductionKind,
    /// Per-channel mean over the valid fit pixels.
    pub mean: Vec<f64>,
    /// Projection matrix, `input channels x k`; a pixel's scores are
    /// `(x - mean) . components`. PCA columns are orthonormal; for MNF and
    /// ICA the matrix is the composite of whitening and rotation, so its
    /// columns carry scale. Every column's largest-magnitude entry is
    /// positive (deterministic sign convention).
    pub components: Array2<f64>,
    /// MNF only: the symmetric noise-whitening matrix (`channels x
    /// channels`) whose application precedes the variance ranking.
    pub noise_whitening: Option<Array2<f64>>,
    pub diagnostics: FitDiagnostics,
}

impl ReductionModel {
    /// Number of input channels the model expects.
    pub fn num_inputs(&self) -> usize {
        self.components.nrows()
    }

    /// Number of output components.
    pub fn num_components(&self) -> usize {
        self.components.ncols()
    }
}

/// Principal component analysis of the valid pixels.
///
/// Components are the top-`k` eigenvectors of the mean-centred sample
/// covariance, by descending eigenvalue. Errors when the covariance rank
/// falls short of `k` (the message names the achievable rank).
pub fn pca_fit<T: Real>(cube: &FeatureCube<T>, k: usize) -> Result<ReductionModel> {
    fit_guards(cube, k)?;
    let mut x = valid_matrix(cube)?;
    let mean = center(&mut x);
    let cov = covariance(&x);
    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    require_rank(&eigvals, k)?;
    let total: f64 = eigvals.iter().map(|&l| l.max(0.0)).sum();
    let explained = eigvals[..k].iter().map(|&l| l.max(0.0) / total).collect();
    let mut components = eigvecs.slice(s![.., ..k]).to_owned();
    fix_signs(&mut components);
    Ok(ReductionModel {
        kind: ReductionKind::Pca,
        mean,
        components,
        noise_whitening: None,
        diagnostics: FitDiagnostics::ExplainedVariance(explained),
    })
}

/// Minimum/maximum noise fraction analysis of the valid pixels.
///
/// The noise covariance is estimated from horizontal first differences of
/// valid neighboring pixels (half their covariance, since differencing
/// doubles independent noise). The data are whitened by its inverse square
/// root — eigenvalues floored at [`RIDGE_EPS`] relative so a singular
/// estimate stays invertible — and the whitened covariance is then
/// eigen-decomposed, which ranks components by signal-to-noise ratio
/// rather than raw variance.
pub fn mnf_fit<T: Real>(cube: &FeatureCube<T>, k: usize) -> Result<ReductionModel> {
    fit_guards(cube, k)?;
    let mut x = valid_matrix(cube)?;
    let mean = center(&mut x);
    let cov = covariance(&x);
    // Rank is a property of the data, so check it on the raw covariance:
    // whitening a noise-free direction through the ridge floor stretches
    // the whitened spectrum by ~1/RIDGE_EPS, which would fool a relative
    // threshold there.
    let (signal_vals, _) = jacobi_eigen(&cov);
    require_rank(&signal_vals, k)?;
    let noise = noise_covariance(cube)?;
    let whitening = inverse_sqrt_sym(&noise);
    let wsw = whitening.dot(&cov).dot(&whitening);
    let (eigvals, eigvecs) = jacobi_eigen(&wsw);
    let snr = eigvals[..k].to_vec();
    let mut components = whitening.dot(&eigvecs.slice(s![.., ..k]));
    fix_signs(&mut components);
    Ok(ReductionModel {
        kind: ReductionKind::Mnf,
        mean,
        components,
        noise_whitening: Some(whitening),
        diagnostics: FitDiagnostics::SignalToNoise(snr),
    })
}

/// Independent component analysis of the valid pixels.
///
/// The data are PCA-whitened to `k` dimensions, then unmixed by the
/// fixed-point iteration with the logcosh contrast and symmetric
/// decorrelation, starting from a `seed`-determined rotation. The loop
/// stops at [`ICA_TOLERANCE`] or after [`MAX_ICA_ITERATIONS`]; either way
/// the diagnostics record what happened and the model holds the final
/// state. Rank deficiency errors as in [`pca_fit`].
pub fn ica_fit<T: Real>(cube: &FeatureCube<T>, k: usize, seed: u64) -> Result<ReductionModel> {
    fit_guards(cube, k)?;
    let mut x = valid_matrix(cube)?;
    let mean = center(&mut x);
    let cov = covariance(&x);
    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    require_rank(&eigvals, k)?;
    // Whitening to k dimensions: y = centred . V_k . diag(1/sqrt(lambda)).
    let mut wh = eigvecs.slice(s![.., ..k]).to_owned();
    for j in 0..k {
        let scale = 1.0 / eigvals[j].sqrt();
        wh.column_mut(j).mapv_inplace(|v| v * scale);
    }
    let y = x.dot(&wh);
    let n = y.nrows() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::from_shape_fn((k, k), |_| rng.random_range(-1.0..1.0));
    orthonormalize(&mut w);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=MAX_ICA_ITERATIONS {
        iterations = it;
        let u = y.dot(&w.t());
        let g = u.mapv(f64::tanh);
        // Row r of the update: E[y g(w_r . y)] - E[g'(w_r . y)] w_r.
        let mut w_new = g.t().dot(&y) / n;
        for r in 0..k {
            let g_prime_mean = g.column(r).iter().map(|&t| 1.0 - t * t).sum::<f64>() / n;
            for j in 0..k {
                w_new[(r, j)] -= g_prime_mean * w[(r, j)];
            }
        }
        orthonormalize(&mut w_new);
        let delta = (0..k)
            .map(|r| {
                let d: f64 = (0..k).map(|j| w_new[(r, j)] * w[(r, j)]).sum();
                (1.0 - d.abs()).abs()
            })
            .fold(0.0, f64::max);
        w = w_new;
        if delta < ICA_TOLERANCE {
            converged = true;
            break;
        }
    }
    let mut components = wh.dot(&w.t());
    fix_signs(&mut components);
    Ok(ReductionModel {
        kind: ReductionKind::Ica,
        mean,
        components,
        noise_whitening: None,
        diagnostics: FitDiagnostics::Convergence {
            converged,
            iterations,
        },
    })
}

/// Raw projection scores of every pixel, `(k, H, W)` in `f64`.
///
/// Valid pixels get `(x - mean) . components`; void pixels are left at 0.
pub fn scores<T: Real>(model: &ReductionModel, cube: &FeatureCube<T>) -> Result<Array3<f64>> {
    let c = cube.num_channels();
    if c != model.num_inputs() {
        return Err(Error::dims(
            "reduction transform channels",
            model.num_inputs(),
            c,
        ));
    }
    if model.mean.len() != c {
        return Err(Error::dims("reduction model mean", c, model.mean.len()));
    }
    let k = model.num_components();
    let (h, w) = cube.valid().dim();
    let data = cube.data();
    let valid = cube.valid();
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; k * w];
            for j in 0..w {
                if !valid[(i, j)] {
                    continue;
                }
                for kk in 0..k {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        acc += (data[(ch, i, j)].as_f64() - model.mean[ch])
                            * model.components[(ch, kk)];
                    }
                    buf[kk * w + j] = acc;
                }
            }
            buf
        })
        .collect();
    let mut out = Array3::zeros((k, h, w));
    for (i, buf) in rows.into_iter().enumerate() {
        for kk in 0..k {
            for j in 0..w {
                out[(kk, i, j)] = buf[kk * w + j];
            }
        }
    }
    Ok(out)
}

/// Projects `cube` through `model` and min-max normalizes each output
/// channel to `[0, 1]` over the valid pixels.
///
/// Output channels are named `pca1..`, `mnf1..` or `ica1..` after the model
/// kind. Void pixels are 0, and a channel whose scores are constant (or a
/// cube with no valid pixels) comes back all-zero rather than dividing by
/// a vanishing range.
pub fn transform<T: Real>(model: &ReductionModel, cube: &FeatureCube<T>) -> Result<FeatureCube<T>> {
    let raw = scores(model, cube)?;
    let k = model.num_components();
    let valid = cube.valid();
    let (h, w) = valid.dim();
    let mut data = Array3::zeros((k, h, w));
    let mut names = Vec::with_capacity(k);
    for kk in 0..k {
        names.push(format!("{}{}", model.kind.prefix(), kk + 1));
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ((i, j), &v) in valid.indexed_iter() {
            if v {
                lo = lo.min(raw[(kk, i, j)]);
                hi = hi.max(raw[(kk, i, j)]);
            }
        }
        let range = hi - lo;
        if !(range > 0.0) {
            continue;
        }
        for ((i, j), &v) in valid.indexed_iter() {
            if v {
                data[(kk, i, j)] = T::from_f64_lossy((raw[(kk, i, j)] - lo) / range);
            }
        }
    }
    FeatureCube::new(names, data, valid.clone())
}

/// Writes a model as a human-readable JSON document.
pub fn save_model(model: &ReductionModel, path: &Path) -> Result<()> {
    let doc = ModelDoc {
        kind: model.kind,
        mean: model.mean.clone(),
        components: matrix_to_rows(&model.components),
        noise_whitening: model.noise_whitening.as_ref().map(matrix_to_rows),
        diagnostics: model.diagnostics.clone(),
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Format(format!("model serialization failed: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

/// Reads a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<ReductionModel> {
    let text = fs::read_to_string(path)?;
    let doc: ModelDoc = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("bad reduction model JSON: {e}")))?;
    let components = rows_to_matrix(&doc.components, "components")?;
    let noise_whitening = match &doc.noise_whitening {
        Some(rows) => Some(rows_to_matrix(rows, "noise_whitening")?),
        None => None,
    };
    if doc.mean.len() != components.nrows() {
        return Err(Error::Format(format!(
            "mean length {} does not match the {}-row component matrix",
            doc.mean.len(),
            components.nrows()
        )));
    }
    Ok(ReductionModel {
        kind: doc.kind,
        mean: doc.mean,
        components,
        noise_whitening,
        diagnostics: doc.diagnostics,
    })
}

/// On-disk layout: matrices as nested row arrays.
#[derive(Serialize, Deserialize)]
struct ModelDoc {
    kind: ReductionKind,
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_whitening: Option<Vec<Vec<f64>>>,
    diagnostics: FitDiagnostics,
}

fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Format(format!("empty {what} matrix")));
    }
    let mut m = Array2::zeros((nrows, ncols));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Format(format!(
                "ragged {what} matrix: row {i} has {} entries, expected {ncols}",
                row.len()
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn fit_guards<T: Real>(cube: &FeatureCube<T>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "component count must be at least 1".into(),
        ));
    }
    let c = cube.num_channels();
    if c < k {
        return Err(Error::InvalidArgument(format!(
            "requested {k} components from a {c}-channel cube"
        )));
    }
    let n = cube.num_valid();
    if n < k.max(2) {
        return Err(Error::DegenerateInput(format!(
            "only {n} valid pixels; fitting {k} components needs at least {}",
            k.max(2)
        )));
    }
    Ok(())
}

/// Valid pixels as a dense `n x channels` matrix, rejecting non-finite
/// values (the moment arithmetic would silently poison everything).
fn valid_matrix<T: Real>(cube: &FeatureCube<T>) -> Result<Array2<f64>> {
    let c = cube.num_channels();
    let data = cube.data();
    let mut x = Array2::zeros((cube.num_valid(), c));
    let mut row = 0;
    for ((i, j), &v) in cube.valid().indexed_iter() {
        if !v {
            continue;
        }
        for ch in 0..c {
            let value = data[(ch, i, j)].as_f64();
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite value in channel {ch} at pixel ({i}, {j})"
                )));
            }
            x[(row, ch)] = value;
        }
        row += 1;
    }
    Ok(x)
}

/// Subtracts the column means in place and returns them.
fn center(x: &mut Array2<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    let mean: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).sum() / n).collect();
    for mut row in x.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v -= mean[j];
        }
    }
    mean
}

/// Sample covariance of already-centred rows.
fn covariance(centered: &Array2<f64>) -> Array2<f64> {
    let n = centered.nrows();
    centered.t().dot(centered) / (n as f64 - 1.0)
}

/// Noise covariance from horizontal first differences of valid pixel pairs.
fn noise_covariance<T: Real>(cube: &FeatureCube<T>) -> Result<Array2<f64>> {
    let c = cube.num_channels();
    let (h, w) = cube.valid().dim();
    let data = cube.data();
    let valid = cube.valid();
    let mut acc = Array2::zeros((c, c));
    let mut d = vec![0.0; c];
    let mut pairs = 0u64;
    for i in 0..h {
        for j in 0..w.saturating_sub(1) {
            if !(valid[(i, j)] && valid[(i, j + 1)]) {
                continue;
            }
            for (ch, slot) in d.iter_mut().enumerate() {
                *slot = data[(ch, i, j + 1)].as_f64() - data[(ch, i, j)].as_f64();
            }
            for a in 0..c {
                for b in a..c {
                    acc[(a, b)] += d[a] * d[b];
                }
            }
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::DegenerateInput(
            "no horizontally adjacent valid pixel pairs to estimate noise from".into(),
        ));
    }
    let scale = 1.0 / (2.0 * pairs as f64);
    for a in 0..c {
        for b in a..c {
            let v = acc[(a, b)] * scale;
            acc[(a, b)] = v;
            acc[(b, a)] = v;
        }
    }
    Ok(acc)
}

/// Errors when fewer than `k` eigenvalues clear the relative rank
/// threshold. Expects eigenvalues in descending order.
fn require_rank(eigvals: &[f64], k: usize) -> Result<()> {
    let largest = eigvals.first().copied().unwrap_or(0.0).max(0.0);
    let rank = if largest <= 0.0 {
        0
    } else {
        eigvals.iter().filter(|&&l| l > largest * RANK_TOL).count()
    };
    if rank < k {
        return Err(Error::DegenerateInput(format!(
            "requested {k} components but the data have rank {rank}"
        )));
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order with matching eigenvectors as
/// the columns of the second result. Input asymmetry (a few ulps from
/// accumulated products) is removed up front. Intended for the small
/// `channels x channels` matrices of this module, where Jacobi converges
/// to near machine precision in a handful of sweeps.
fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols(), "jacobi_eigen needs a square matrix");
    let mut m = (a + &a.t()) / 2.0;
    let mut v: Array2<f64> = Array2::eye(n);
    for _sweep in 0..64 {
        let mut off = 0.0;
        let mut diag = 0.0;
        for p in 0..n {
            diag += m[(p, p)] * m[(p, p)];
            for q in p + 1..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off <= (diag + 2.0 * off) * 1e-30 + f64::MIN_POSITIVE {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    // Far past any rotation that matters; avoid theta^2
                    // overflow.
                    1.0 / (2.0 * theta)
                } else {
                    theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                m[(p, p)] = app - t * apq;
                m[(q, q)] = aqq + t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = m[(i, p)];
                        let aiq = m[(i, q)];
                        m[(i, p)] = aip - s * (aiq + tau * aip);
                        m[(p, i)] = m[(i, p)];
                        m[(i, q)] = aiq + s * (aip - tau * aiq);
                        m[(q, i)] = m[(i, q)];
                    }
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = vip - s * (viq + tau * vip);
                    v[(i, q)] = viq + s * (vip - tau * viq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).expect("finite eigenvalues"));
    let eigvals: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigvecs = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        eigvecs.column_mut(dst).assign(&v.column(src));
    }
    (eigvals, eigvecs)
}

/// Symmetric inverse square root `U diag(1/sqrt(max(lambda, floor))) U^T`
/// with the [`RIDGE_EPS`] eigenvalue floor.
fn inverse_sqrt_sym(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let (eigvals, eigvecs) = jacobi_eigen(a);
    let floor = RIDGE_EPS * eigvals.first().copied().unwrap_or(0.0).max(1.0);
    let mut scaled = eigvecs.clone();
    for j in 0..n {
        let inv = 1.0 / eigvals[j].max(floor).sqrt();
        scaled.column_mut(j).mapv_inplace(|v| v * inv);
    }
    scaled.dot(&eigvecs.t())
}

/// Symmetric decorrelation `W <- (W W^T)^{-1/2} W`, leaving the rows
/// orthonormal.
fn orthonormalize(w: &mut Array2<f64>) {
    let wwt = w.dot(&w.t());
    *w = inverse_sqrt_sym(&wwt).dot(w);
}

/// Flips each column so its largest-magnitude entry is positive (first such
/// entry on ties), making component signs deterministic.
fn fix_signs(m: &mut Array2<f64>) {
    for j in 0..m.ncols() {
        let mut arg = 0;
        let mut best = 0.0;
        for (i, &value) in m.column(j).iter().enumerate() {
            if value.abs() > best {
                best = value.abs();
                arg = i;
            }
        }
        if m[(arg, j)] < 0.0 {
            m.column_mut(j).mapv_inplace(|v| -v);
        }
    }
}
