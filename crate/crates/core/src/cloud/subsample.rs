//! Class-aware cloud thinning.
//!
//! [`hybrid_subsample`] keeps rare classes intact (stratified allocation)
//! while thinning the rest with a voxel grid, so downstream training sets
//! stay spatially uniform without losing minority classes.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::real::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Parameters for [`hybrid_subsample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleConfig<T> {
    /// Approximate number of points to keep (rare-class retention may push
    /// the result slightly above this).
    pub target: usize,
    /// Share of `target` reserved for rare classes, split evenly among them.
    pub rare_frac: T,
    /// A class is rare when its frequency is at or below this threshold.
    pub rare_threshold: T,
    /// Voxel edge length (metres) for thinning the non-rare remainder.
    pub voxel: T,
    /// RNG seed; equal seeds give bit-identical selections.
    pub seed: u64,
}

impl<T: Real> Default for SubsampleConfig<T> {
    fn default() -> Self {
        SubsampleConfig {
            target: 1_000_000,
            rare_frac: T::from_f64_lossy(0.05),
            rare_threshold: T::from_f64_lossy(0.01),
            voxel: T::from_f64_lossy(0.01),
            seed: 42,
        }
    }
}

/// Voxel-grid downsampling over a candidate subset: one survivor per
/// occupied voxel, the point nearest to the voxel centre (ties by smallest
/// id). Returns kept ids in ascending order.
pub fn voxel_downsample_ids<T: Real>(
    positions: &[[T; 3]],
    candidates: impl IntoIterator<Item = usize>,
    voxel: T,
) -> Result<Vec<usize>> {
    if voxel <= T::zero() {
        return Err(Error::InvalidArgument(format!(
            "voxel edge must be positive, got {voxel}"
        )));
    }
    let half = T::from_f64_lossy(0.5);
    let mut best: HashMap<(i64, i64, i64), (usize, T)> = HashMap::new();
    for id in candidates {
        let p = positions[id];
        let cell = (
            (p[0] / voxel).floor().to_i64().expect("finite coordinate"),
            (p[1] / voxel).floor().to_i64().expect("finite coordinate"),
            (p[2] / voxel).floor().to_i64().expect("finite coordinate"),
        );
        let centre = [
            (T::from_f64_lossy(cell.0 as f64) + half) * voxel,
            (T::from_f64_lossy(cell.1 as f64) + half) * voxel,
            (T::from_f64_lossy(cell.2 as f64) + half) * voxel,
        ];
        let dx = p[0] - centre[0];
        let dy = p[1] - centre[1];
        let dz = p[2] - centre[2];
        let d2 = dx * dx + dy * dy + dz * dz;
        match best.get_mut(&cell) {
            None => {
                best.insert(cell, (id, d2));
            }
            Some(slot) => {
                if d2 < slot.1 || (d2 == slot.1 && id < slot.0) {
                    *slot = (id, d2);
                }
            }
        }
    }
    let mut kept: Vec<usize> = best.into_values().map(|(id, _)| id).collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Voxel-grid downsampling of a whole cloud; see [`voxel_downsample_ids`].
pub fn voxel_downsample<T: Real>(cloud: &PointCloud<T>, voxel: T) -> Result<PointCloud<T>> {
    let kept = voxel_downsample_ids(cloud.positions(), 0..cloud.len(), voxel)?;
    Ok(cloud.select(&kept))
}

/// Stratified-plus-voxel subsampling of a labelled cloud.
///
/// Classes at or below `rare_threshold` frequency receive an even split of
/// `rare_frac * target` points each (all of them if fewer exist) drawn
/// without replacement; every other point goes through voxel downsampling.
/// If the combined selection still exceeds `target`, non-rare survivors are
/// dropped at random — rare selections are never dropped, so every rare
/// class with at least one point survives. Output order follows the input.
pub fn hybrid_subsample<T: Real>(
    cloud: &PointCloud<T>,
    config: &SubsampleConfig<T>,
) -> Result<PointCloud<T>> {
    let n = cloud.len();
    let labels = cloud
        .labels()
        .ok_or_else(|| Error::InvalidArgument("hybrid_subsample needs a labelled cloud".into()))?;
    if config.target == 0 || config.target >= n {
        return Err(Error::InvalidArgument(format!(
            "target must be in 1..{n}, got {}",
            config.target
        )));
    }
    if config.rare_frac < T::zero() || config.rare_frac > T::one() {
        return Err(Error::InvalidArgument(format!(
            "rare_frac must be in [0, 1], got {}",
            config.rare_frac
        )));
    }

    let mut counts: HashMap<u8, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let n_t = T::from_usize_lossy(n);
    let mut rare_classes: Vec<u8> = counts
        .iter()
        .filter(|&(_, &c)| T::from_usize_lossy(c) / n_t <= config.rare_threshold)
        .map(|(&l, _)| l)
        .collect();
    rare_classes.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut keep = vec![false; n];
    let mut rare_kept = 0usize;
    if !rare_classes.is_empty() {
        let total_alloc = (config.rare_frac * T::from_usize_lossy(config.target))
            .floor()
            .to_usize()
            .unwrap_or(0);
        let per_class = (total_alloc / rare_classes.len()).max(1);
        for &class in &rare_classes {
            let ids: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            if ids.len() <= per_class {
                for &i in &ids {
                    keep[i] = true;
                }
                rare_kept += ids.len();
            } else {
                for slot in rand::seq::index::sample(&mut rng, ids.len(), per_class) {
                    keep[ids[slot]] = true;
                }
                rare_kept += per_class;
            }
        }
    }

    let is_rare = |l: u8| rare_classes.binary_search(&l).is_ok();
    let remainder: Vec<usize> = (0..n).filter(|&i| !is_rare(labels[i])).collect();
    let mut voxel_kept = voxel_downsample_ids(cloud.positions(), remainder, config.voxel)?;

    // Trim only the voxel part when the union overshoots the target.
    let budget = config.target.saturating_sub(rare_kept);
    if voxel_kept.len() > budget {
        let chosen = rand::seq::index::sample(&mut rng, voxel_kept.len(), budget);
        let mut trimmed: Vec<usize> = chosen.iter().map(|slot| voxel_kept[slot]).collect();
        trimmed.sort_unstable();
        voxel_kept = trimmed;
    }
    for i in voxel_kept {
        keep[i] = true;
    }

    let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    log::debug!(
        "hybrid_subsample: {} -> {} points ({} rare across {} classes)",
        n,
        kept.len(),
        rare_kept,
        rare_classes.len()
    );
    Ok(cloud.select(&kept))
}
