//! Forest-backed baseline segmenter.
//!
//! Stands in for externally trained neural ensembles: each member is a
//! random forest trained on a bootstrap of the labeled pixels, and its
//! per-pixel logits are the logs of Laplace-smoothed tree-vote fractions,
//! so the whole fusion/uncertainty stage can run from features alone.

use crate::ensemble::LogitStack;
use crate::error::{Error, Result};
use crate::features::FeatureCube;
use crate::real::Real;
use crate::refine::{rf_train, RandomForestConfig};
use crate::LabelMask;
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Forest hyperparameters; the seed field is replaced per member.
    pub forest: RandomForestConfig,
    /// Cap on bootstrap size, keeping training tractable on dense masks.
    pub max_train_pixels: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            forest: RandomForestConfig::default(),
            max_train_pixels: 20_000,
        }
    }
}

/// Expands one pipeline seed into per-member seeds. Equal inputs give equal
/// (and reusable) outputs, so member count changes do not reshuffle the
/// seeds of earlier members.
pub fn derive_member_seeds(seed: u64, members: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..members).map(|_| rng.random()).collect()
}

/// Trains one forest per entry of `member_seeds` on the labeled pixels of
/// `train_mask` (class 0 pixels and invalid pixels are never trained on)
/// and emits a logit stack over the full grid. Invalid pixels receive
/// logits as if every tree had voted class 0.
pub fn baseline_segment<T: Real>(
    features: &FeatureCube<T>,
    train_mask: &LabelMask,
    num_classes: usize,
    member_seeds: &[u64],
    config: &BaselineConfig,
) -> Result<LogitStack<T>> {
    let (h, w) = (features.height(), features.width());
    if train_mask.dim() != (h, w) {
        return Err(Error::dims(
            "baseline training mask",
            format!("{h}x{w}"),
            format!("{:?}", train_mask.dim()),
        ));
    }
    if member_seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "baseline needs at least one member seed".into(),
        ));
    }
    if !(2..=256).contains(&num_classes) {
        return Err(Error::InvalidArgument(format!(
            "num_classes must be in 2..=256, got {num_classes}"
        )));
    }
    if let Some(&l) = train_mask.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "mask label {l} exceeds num_classes {num_classes}"
        )));
    }
    let d = features.num_channels();
    if d == 0 {
        return Err(Error::InvalidArgument(
            "baseline needs at least one feature channel".into(),
        ));
    }
    // gather valid pixels once; prediction and training index into this set
    let valid_pixels: Vec<(usize, usize)> = features
        .valid()
        .indexed_iter()
        .filter(|(_, &v)| v)
        .map(|((i, j), _)| (i, j))
        .collect();
    let mut matrix = Array2::zeros((valid_pixels.len(), d));
    for (row, &(i, j)) in valid_pixels.iter().enumerate() {
        for c in 0..d {
            matrix[(row, c)] = features.channel_at(c)[(i, j)];
        }
    }
    let train_rows: Vec<(usize, u8)> = valid_pixels
        .iter()
        .enumerate()
        .filter_map(|(row, &(i, j))| {
            let l = train_mask[(i, j)];
            (l != 0).then_some((row, l))
        })
        .collect();
    let distinct = {
        let mut seen = vec![false; num_classes];
        for &(_, l) in &train_rows {
            seen[l as usize] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::DegenerateInput(format!(
            "baseline training mask covers {distinct} class(es); need at least 2"
        )));
    }
    let trees = config.forest.num_trees;
    let smooth = |votes: u32| -> T {
        (T::from_usize_lossy(votes as usize + 1)
            / T::from_usize_lossy(trees + num_classes))
        .ln()
    };
    let void_logits: Vec<T> = (0..num_classes)
        .map(|c| if c == 0 { smooth(trees as u32) } else { smooth(0) })
        .collect();
    let m = member_seeds.len();
    let mut data = Array4::from_elem((m, num_classes, h, w), T::zero());
    for (mm, &seed) in member_seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_boot = train_rows.len().min(config.max_train_pixels);
        let mut boot_features = Array2::zeros((n_boot, d));
        let mut boot_labels = Vec::with_capacity(n_boot);
        for k in 0..n_boot {
            let (row, l) = train_rows[rng.random_range(0..train_rows.len())];
            boot_features.row_mut(k).assign(&matrix.row(row));
            boot_labels.push(l);
        }
        let forest_config = RandomForestConfig {
            seed: rng.random(),
            ..config.forest.clone()
        };
        let forest = match rf_train(&boot_features, &boot_labels, num_classes, &forest_config) {
            Ok(f) => f,
            Err(Error::DegenerateInput(_)) => {
                return Err(Error::DegenerateInput(format!(
                    "member {mm}'s bootstrap collapsed to one class; \
                     enlarge the training mask"
                )))
            }
            Err(e) => return Err(e),
        };
        let logits: Vec<Vec<T>> = (0..valid_pixels.len())
            .into_par_iter()
            .map(|row| {
                forest
                    .votes(matrix.row(row))
                    .into_iter()
                    .map(&smooth)
                    .collect()
            })
            .collect();
        for c in 0..num_classes {
            for i in 0..h {
                for j in 0..w {
                    data[(mm, c, i, j)] = void_logits[c];
                }
            }
        }
        for (row, &(i, j)) in valid_pixels.iter().enumerate() {
            for c in 0..num_classes {
                data[(mm, c, i, j)] = logits[row][c];
            }
        }
    }
    LogitStack::new(data)
}
