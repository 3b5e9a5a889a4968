//! Ensemble fusion, uncertainty decomposition, and segmentation losses.
//!
//! An ensemble of per-class logit maps is fused by averaging logits and
//! taking a per-pixel softmax. Disagreement between members is quantified
//! by splitting the predictive entropy into an expected (data) part and an
//! epistemic (model-disagreement) part. All entropies are in nats.

pub mod baseline;
pub mod io;

pub use baseline::{baseline_segment, derive_member_seeds, BaselineConfig};
pub use io::{load_logits, save_logits};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::LabelMask;
use ndarray::{Array2, Array3, Array4, ArrayView3};
use rayon::prelude::*;

/// Floor applied inside logarithms so `ln` never sees zero.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-class probability planes, shape `(C, H, W)`; every pixel's class
/// probabilities sum to 1.
pub type ProbabilityMap<T> = Array3<T>;

/// Logits from `M` ensemble members, shape `(M, C, H, W)`.
///
/// Construction validates the shape (`M >= 1`, `2 <= C <= 256`) and that
/// every value is finite, so downstream fusion never has to re-check.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitStack<T> {
    data: Array4<T>,
}

impl<T: Real> LogitStack<T> {
    pub fn new(data: Array4<T>) -> Result<Self> {
        let (m, c, _, _) = data.dim();
        if m == 0 {
            return Err(Error::InvalidArgument(
                "a logit stack needs at least one ensemble member".into(),
            ));
        }
        if c < 2 {
            return Err(Error::InvalidArgument(format!(
                "a logit stack needs at least two classes, got {c}"
            )));
        }
        if c > 256 {
            return Err(Error::InvalidArgument(format!(
                "class count {c} exceeds the 256 representable by 8-bit labels"
            )));
        }
        if let Some((idx, _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite logit at (member {}, class {}, row {}, col {})",
                idx.0, idx.1, idx.2, idx.3
            )));
        }
        Ok(Self { data })
    }

    pub fn num_members(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_classes(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn data(&self) -> &Array4<T> {
        &self.data
    }

    /// Logit planes of one member, shape `(C, H, W)`.
    pub fn member(&self, m: usize) -> ArrayView3<'_, T> {
        self.data.index_axis(ndarray::Axis(0), m)
    }

    /// Stacks several ensembles into one, preserving member order.
    pub fn concat(stacks: &[LogitStack<T>]) -> Result<LogitStack<T>> {
        let first = stacks
            .first()
            .ok_or_else(|| Error::InvalidArgument("no logit stacks to concatenate".into()))?;
        let (_, c, h, w) = first.data.dim();
        let mut members = Vec::new();
        for (k, s) in stacks.iter().enumerate() {
            let (sm, sc, sh, sw) = s.data.dim();
            if (sc, sh, sw) != (c, h, w) {
                return Err(Error::dims(
                    format!("logit stack {k}"),
                    format!("{c}x{h}x{w}"),
                    format!("{sc}x{sh}x{sw}"),
                ));
            }
            for m in 0..sm {
                members.push(s.member(m).to_owned());
            }
        }
        let mut data = Array4::from_elem((members.len(), c, h, w), T::zero());
        for (m, planes) in members.iter().enumerate() {
            data.index_axis_mut(ndarray::Axis(0), m).assign(planes);
        }
        LogitStack::new(data)
    }
}

/// Entropy maps over the grid, all in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMaps<T> {
    /// Entropy of the fused (ensemble-mean) prediction; at most `ln C`.
    pub total: Array2<T>,
    /// Mean over members of each member's own predictive entropy.
    pub expected: Array2<T>,
    /// `total - expected`, clamped at zero: the share of uncertainty due to
    /// member disagreement (mutual information between prediction and
    /// member identity).
    pub epistemic: Array2<T>,
}

fn softmax_in_place<T: Real>(z: &mut [T]) {
    let mut max = z[0];
    for &v in z.iter().skip(1) {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Shannon entropy of a probability vector, in nats, with the probability
/// floored inside the logarithm; zero entries contribute exactly zero.
fn entropy<T: Real>(p: &[T]) -> T {
    let floor = T::from_f64_lossy(PROB_FLOOR);
    let mut h = T::zero();
    for &v in p {
        h -= v * v.max(floor).ln();
    }
    h
}

fn argmax_smallest<T: Real>(p: &[T]) -> u8 {
    let mut best = 0usize;
    for (c, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = c;
        }
    }
    best as u8
}

/// Fuses the ensemble: mean logits, per-pixel softmax, argmax labels
/// (smallest class id on ties).
pub fn fuse<T: Real>(stack: &LogitStack<T>) -> (ProbabilityMap<T>, LabelMask) {
    let (m, c, h, w) = stack.data.dim();
    let inv_m = T::one() / T::from_usize_lossy(m);
    let rows: Vec<(Vec<T>, Vec<u8>)> = (0..h)
        .into_par_iter()
        .map(|i| {
            let mut probs = vec![T::zero(); c * w];
            let mut labels = vec![0u8; w];
            let mut z = vec![T::zero(); c];
            for j in 0..w {
                for (cc, zc) in z.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for mm in 0..m {
                        acc += stack.data[(mm, cc, i, j)];
                    }
                    *zc = acc * inv_m;
                }
                softmax_in_place(&mut z);
                labels[j] = argmax_smallest(&z);
                for cc in 0..c {
                    probs[cc * w + j] = z[cc];
                }
            }
            (probs, labels)
        })
        .collect();
    let mut prob_map = Array3::from_elem((c, h, w), T::zero());
    let mut label_mask = Array2::zeros((h, w));
    for (i, (probs, labels)) in rows.into_iter().enumerate() {
        for cc in 0..c {
            for j in 0..w {
                prob_map[(cc, i, j)] = probs[cc * w + j];
            }
        }
        for j in 0..w {
            label_mask[(i, j)] = labels[j];
        }
    }
    (prob_map, label_mask)
}

/// Decomposes predictive uncertainty per pixel.
pub fn uncertainty<T: Real>(stack: &LogitStack<T>) -> UncertaintyMaps<T> {
    let (m, c, h, w) = stack.data.dim();
    let inv_m = T::one() / T::from_usize_lossy(m);
    let rows: Vec<(Vec<T>, Vec<T>)> = (0..h)
        .into_par_iter()
        .map(|i| {
            let mut total = vec![T::zero(); w];
            let mut expected = vec![T::zero(); w];
            let mut z = vec![T::zero(); c];
            let mut zbar = vec![T::zero(); c];
            for j in 0..w {
                zbar.iter_mut().for_each(|v| *v = T::zero());
                let mut h_sum = T::zero();
                for mm in 0..m {
                    for (cc, zc) in z.iter_mut().enumerate() {
                        *zc = stack.data[(mm, cc, i, j)];
                        zbar[cc] += *zc;
                    }
                    softmax_in_place(&mut z);
                    h_sum += entropy(&z);
                }
                expected[j] = h_sum * inv_m;
                zbar.iter_mut().for_each(|v| *v *= inv_m);
                softmax_in_place(&mut zbar);
                total[j] = entropy(&zbar);
            }
            (total, expected)
        })
        .collect();
    let mut total = Array2::from_elem((h, w), T::zero());
    let mut expected = Array2::from_elem((h, w), T::zero());
    for (i, (t, e)) in rows.into_iter().enumerate() {
        for j in 0..w {
            total[(i, j)] = t[j];
            expected[(i, j)] = e[j];
        }
    }
    let epistemic = Array2::from_shape_fn((h, w), |(i, j)| {
        (total[(i, j)] - expected[(i, j)]).max(T::zero())
    });
    UncertaintyMaps {
        total,
        expected,
        epistemic,
    }
}

/// Soft Dice loss of a single-class probability plane against a binary mask:
/// `1 - 2*sum(p*g) / (sum(p) + sum(g))`, defined as 0 when both are empty.
pub fn dice_loss<T: Real>(pred: &Array2<T>, gt: &Array2<bool>) -> Result<T> {
    if pred.dim() != gt.dim() {
        return Err(Error::dims(
            "dice mask",
            format!("{:?}", pred.dim()),
            format!("{:?}", gt.dim()),
        ));
    }
    let mut inter = T::zero();
    let mut p_sum = T::zero();
    let mut g_sum = T::zero();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        p_sum += p;
        if g {
            g_sum += T::one();
            inter += p;
        }
    }
    let denom = p_sum + g_sum;
    if denom == T::zero() {
        return Ok(T::zero());
    }
    Ok(T::one() - (inter + inter) / denom)
}

/// Mean over classes of one-vs-rest [`dice_loss`].
pub fn dice_loss_multi<T: Real>(pred: &ProbabilityMap<T>, gt: &LabelMask) -> Result<T> {
    let (c, h, w) = pred.dim();
    if gt.dim() != (h, w) {
        return Err(Error::dims(
            "dice label mask",
            format!("{h}x{w}"),
            format!("{:?}", gt.dim()),
        ));
    }
    let mut sum = T::zero();
    for cc in 0..c {
        let plane = pred.index_axis(ndarray::Axis(0), cc).to_owned();
        let mask = gt.mapv(|l| l as usize == cc);
        sum += dice_loss(&plane, &mask)?;
    }
    Ok(sum / T::from_usize_lossy(c))
}

/// Mean negative log-likelihood of the true class, with the probability
/// floored at [`PROB_FLOOR`] before the logarithm.
pub fn cross_entropy_loss<T: Real>(pred: &ProbabilityMap<T>, gt: &LabelMask) -> Result<T> {
    let (c, h, w) = pred.dim();
    if gt.dim() != (h, w) {
        return Err(Error::dims(
            "cross-entropy label mask",
            format!("{h}x{w}"),
            format!("{:?}", gt.dim()),
        ));
    }
    let floor = T::from_f64_lossy(PROB_FLOOR);
    let mut sum = T::zero();
    for ((i, j), &label) in gt.indexed_iter() {
        let cc = label as usize;
        if cc >= c {
            return Err(Error::InvalidArgument(format!(
                "label {label} at ({i}, {j}) exceeds the {c} probability planes"
            )));
        }
        sum -= pred[(cc, i, j)].max(floor).ln();
    }
    Ok(sum / T::from_usize_lossy(h * w))
}

/// Equal-weight blend of multi-class Dice and cross-entropy.
pub fn combined_loss<T: Real>(pred: &ProbabilityMap<T>, gt: &LabelMask) -> Result<T> {
    let half = T::from_f64_lossy(0.5);
    Ok(half * dice_loss_multi(pred, gt)? + half * cross_entropy_loss(pred, gt)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array2, Array4};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn stack_from(data: Array4<f64>) -> LogitStack<f64> {
        LogitStack::new(data).unwrap()
    }

    #[test]
    fn construction_rejects_bad_stacks() {
        assert!(LogitStack::new(Array4::<f64>::zeros((0, 2, 1, 1))).is_err());
        assert!(LogitStack::new(Array4::<f64>::zeros((1, 1, 1, 1))).is_err());
        let mut bad = Array4::<f64>::zeros((1, 2, 1, 1));
        bad[(0, 1, 0, 0)] = f64::NAN;
        let err = LogitStack::new(bad).unwrap_err().to_string();
        assert!(err.contains("class 1"), "{err}");
    }

    #[test]
    fn single_member_fuse_is_its_softmax() {
        let mut data = Array4::zeros((1, 3, 1, 2));
        for (c, v) in [0.3, -1.0, 2.5].iter().enumerate() {
            data[(0, c, 0, 0)] = *v;
            data[(0, c, 0, 1)] = -*v;
        }
        let (probs, _) = fuse(&stack_from(data.clone()));
        for j in 0..2 {
            let z: Vec<f64> = (0..3).map(|c| data[(0, c, 0, j)]).collect();
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            for c in 0..3 {
                assert_abs_diff_eq!(probs[(c, 0, j)], exps[c] / s, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn opposed_members_cancel_to_uniform() {
        let mut data = Array4::zeros((2, 4, 1, 1));
        for c in 0..4 {
            data[(0, c, 0, 0)] = 0.7 * c as f64 - 1.0;
            data[(1, c, 0, 0)] = -(0.7 * c as f64 - 1.0);
        }
        let (probs, labels) = fuse(&stack_from(data));
        for c in 0..4 {
            assert_abs_diff_eq!(probs[(c, 0, 0)], 0.25, epsilon = 1e-15);
        }
        assert_eq!(labels[(0, 0)], 0); // tie resolves to the smallest class
    }

    #[test]
    fn two_class_softmax_arithmetic() {
        // logits (ln 3, 0): exp gives (3, 1), so probabilities (3/4, 1/4)
        let mut data = Array4::zeros((1, 2, 1, 1));
        data[(0, 0, 0, 0)] = 3f64.ln();
        let (probs, labels) = fuse(&stack_from(data));
        assert_abs_diff_eq!(probs[(0, 0, 0)], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[(1, 0, 0)], 0.25, epsilon = 1e-15);
        assert_eq!(labels[(0, 0)], 0);
    }

    #[test]
    fn per_pixel_logit_shift_leaves_fusion_unchanged() {
        let mut rng = StdRng::seed_from_u64(7);
        let data = Array4::from_shape_fn((3, 5, 4, 6), |_| rng.random_range(-3.0..3.0));
        let mut shifted = data.clone();
        for i in 0..4 {
            for j in 0..6 {
                let delta = rng.random_range(-10.0..10.0);
                for m in 0..3 {
                    for c in 0..5 {
                        shifted[(m, c, i, j)] += delta;
                    }
                }
            }
        }
        let (p0, l0) = fuse(&stack_from(data));
        let (p1, l1) = fuse(&stack_from(shifted));
        assert_eq!(l0, l1);
        for (a, b) in p0.iter().zip(p1.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn identical_members_have_zero_epistemic() {
        let member = Array2::from_shape_fn((3, 4), |(c, j)| 0.3 * c as f64 - 0.1 * j as f64);
        let mut data = Array4::zeros((2, 3, 1, 4));
        for m in 0..2 {
            for c in 0..3 {
                for j in 0..4 {
                    data[(m, c, 0, j)] = member[(c, j)];
                }
            }
        }
        let u = uncertainty(&stack_from(data));
        for &e in u.epistemic.iter() {
            assert_eq!(e, 0.0);
        }
        for (&t, &e) in u.total.iter().zip(u.expected.iter()) {
            assert_abs_diff_eq!(t, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn certain_disagreement_splits_entropy() {
        // two members, each certain of a different class
        let mut data = Array4::zeros((2, 2, 1, 1));
        data[(0, 0, 0, 0)] = 50.0;
        data[(1, 1, 0, 0)] = 50.0;
        let u = uncertainty(&stack_from(data));
        assert_abs_diff_eq!(u.total[(0, 0)], 2f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(u.expected[(0, 0)], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(u.epistemic[(0, 0)], 2f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn uniform_six_class_prediction_attains_max_entropy() {
        let u = uncertainty(&stack_from(Array4::zeros((1, 6, 2, 2))));
        for &t in u.total.iter() {
            assert_abs_diff_eq!(t, 6f64.ln(), epsilon = 1e-9);
        }
    }

    #[test]
    fn entropy_bounds_hold_on_random_stacks() {
        let mut rng = StdRng::seed_from_u64(11);
        let data = Array4::from_shape_fn((4, 6, 8, 8), |_| rng.random_range(-5.0..5.0));
        let u = uncertainty(&stack_from(data));
        let cap = 6f64.ln() + 1e-9;
        for ((i, j), &t) in u.total.indexed_iter() {
            let e = u.expected[(i, j)];
            assert!((0.0..=cap).contains(&t), "total {t} outside [0, ln C]");
            assert!((0.0..=cap).contains(&e), "expected {e} outside [0, ln C]");
            // Logit averaging can land the fused entropy below the mean
            // member entropy, which is exactly what the clamp absorbs.
            let ep = u.epistemic[(i, j)];
            assert!((ep - (t - e).max(0.0)).abs() < 1e-12);
            assert!(ep <= t + 1e-12, "epistemic {ep} above total {t}");
        }
    }

    #[test]
    fn member_order_does_not_matter() {
        let mut rng = StdRng::seed_from_u64(13);
        let data = Array4::from_shape_fn((3, 4, 3, 3), |_| rng.random_range(-4.0..4.0));
        let mut swapped = data.clone();
        for c in 0..4 {
            for i in 0..3 {
                for j in 0..3 {
                    swapped[(0, c, i, j)] = data[(2, c, i, j)];
                    swapped[(2, c, i, j)] = data[(0, c, i, j)];
                }
            }
        }
        let a = uncertainty(&stack_from(data));
        let b = uncertainty(&stack_from(swapped));
        for (x, y) in a.total.iter().zip(b.total.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        for (x, y) in a.expected.iter().zip(b.expected.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn dice_identities() {
        let ones = Array2::from_elem((2, 2), 1.0f64);
        let gt_all = Array2::from_elem((2, 2), true);
        let gt_none = Array2::from_elem((2, 2), false);
        assert_eq!(dice_loss(&ones, &gt_all).unwrap(), 0.0);
        assert_eq!(dice_loss(&ones, &gt_none).unwrap(), 1.0);
        let zeros = Array2::from_elem((2, 2), 0.0f64);
        assert_eq!(dice_loss(&zeros, &gt_none).unwrap(), 0.0); // both empty
        let pred = Array2::from_shape_vec((1, 4), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let gt = Array2::from_shape_vec((1, 4), vec![true, false, false, false]).unwrap();
        assert_abs_diff_eq!(dice_loss(&pred, &gt).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_identities() {
        // probability 1 on the true class -> 0 loss
        let mut pred = Array3::zeros((2, 1, 2));
        pred[(0, 0, 0)] = 1.0;
        pred[(1, 0, 1)] = 1.0;
        let gt = Array2::from_shape_vec((1, 2), vec![0u8, 1]).unwrap();
        assert_eq!(cross_entropy_loss(&pred, &gt).unwrap(), 0.0);
        // uniform over 6 classes -> ln 6 per pixel
        let uniform = Array3::from_elem((6, 2, 2), 1.0 / 6.0);
        let gt = Array2::zeros((2, 2));
        assert_abs_diff_eq!(
            cross_entropy_loss(&uniform, &gt).unwrap(),
            6f64.ln(),
            epsilon = 1e-12
        );
        // single pixel with p_true = 0.5 -> ln 2
        let mut pred = Array3::zeros((2, 1, 1));
        pred[(0, 0, 0)] = 0.5;
        pred[(1, 0, 0)] = 0.5;
        let gt = Array2::zeros((1, 1));
        assert_abs_diff_eq!(
            cross_entropy_loss(&pred, &gt).unwrap(),
            2f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn losses_match_direct_formula_oracles() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..20 {
            let c = 4usize;
            // random distribution per pixel
            let mut pred = Array3::zeros((c, 8, 8));
            for i in 0..8 {
                for j in 0..8 {
                    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    for (cc, r) in raw.iter().enumerate() {
                        pred[(cc, i, j)] = r / s;
                    }
                }
            }
            let gt = Array2::from_shape_fn((8, 8), |_| rng.random_range(0..c as u8));
            // oracle CE: explicit one-hot double loop
            let mut ce = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    for cc in 0..c {
                        let g = if gt[(i, j)] as usize == cc { 1.0 } else { 0.0 };
                        ce -= g * pred[(cc, i, j)].max(1e-12).ln();
                    }
                }
            }
            ce /= 64.0;
            assert_abs_diff_eq!(cross_entropy_loss(&pred, &gt).unwrap(), ce, epsilon = 1e-10);
            // oracle Dice: formula per class on flattened vectors
            let mut dice = 0.0;
            for cc in 0..c {
                let p: Vec<f64> = (0..64).map(|k| pred[(cc, k / 8, k % 8)]).collect();
                let g: Vec<f64> = (0..64)
                    .map(|k| (gt[(k / 8, k % 8)] as usize == cc) as u8 as f64)
                    .collect();
                let inter: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
                let denom: f64 = p.iter().sum::<f64>() + g.iter().sum::<f64>();
                dice += if denom == 0.0 { 0.0 } else { 1.0 - 2.0 * inter / denom };
            }
            dice /= c as f64;
            assert_abs_diff_eq!(dice_loss_multi(&pred, &gt).unwrap(), dice, epsilon = 1e-10);
            let blend = combined_loss(&pred, &gt).unwrap();
            assert_abs_diff_eq!(blend, 0.5 * dice + 0.5 * ce, epsilon = 1e-10);
        }
    }

    #[test]
    fn concat_stacks_members() {
        let a = stack_from(Array4::from_elem((1, 2, 2, 2), 1.0));
        let b = stack_from(Array4::from_elem((2, 2, 2, 2), 2.0));
        let joined = LogitStack::concat(&[a, b]).unwrap();
        assert_eq!(joined.num_members(), 3);
        assert_eq!(joined.data()[(0, 0, 0, 0)], 1.0);
        assert_eq!(joined.data()[(2, 1, 1, 1)], 2.0);
        let tiny = stack_from(Array4::from_elem((1, 2, 1, 2), 0.0));
        let big = stack_from(Array4::from_elem((1, 2, 2, 2), 0.0));
        assert!(LogitStack::concat(&[tiny, big]).is_err());
    }
}
