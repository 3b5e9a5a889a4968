//! 3D label refinement: neighbor voting, reliable-core extraction, and
//! confidence-thresholded forest relabeling.
//!
//! The stage runs on a labeled cloud (labels usually arrive by
//! back-projection from a 2D mask) in a fixed order: simultaneous k-nearest
//! majority voting, extraction of the reliable core (points whose label the
//! vote confirms), training a balanced random forest on that core, and
//! finally re-labeling the suspect points for which the forest is
//! sufficiently confident. Unlabeled (class 0) points neither vote nor get
//! relabeled by voting; they are reconsidered only when explicitly enabled.

pub mod forest;

pub use forest::{rf_train, RandomForest, RandomForestConfig};

use crate::cloud::{PointCloud, SpatialIndex};
use crate::error::{Error, Result};
use crate::features::eigen::{features_from_neighborhood, view_vector};
use crate::real::Real;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Knobs for the full refinement pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig<T> {
    /// Neighbors consulted by the majority vote.
    pub k_vote: usize,
    /// Forest confidence needed to overwrite a suspect label, in (0, 1].
    pub tau: T,
    /// Neighborhood radii (meters) for multiscale point descriptors.
    pub scales: Vec<T>,
    pub forest: RandomForestConfig,
    /// Allow the forest to assign classes to unlabeled (class 0) points.
    pub relabel_void: bool,
}

impl<T: Real> Default for RefinementConfig<T> {
    fn default() -> Self {
        RefinementConfig {
            k_vote: 9,
            tau: T::from_f64_lossy(0.8),
            scales: vec![
                T::from_f64_lossy(0.05),
                T::from_f64_lossy(0.15),
                T::from_f64_lossy(0.30),
            ],
            forest: RandomForestConfig::default(),
            relabel_void: false,
        }
    }
}

/// Outcome counters of one refinement pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub num_points: usize,
    pub core_size: usize,
    pub suspect_count: usize,
    /// Points whose label changed in the voting step.
    pub vote_changes: usize,
    /// Suspects for which the forest met the confidence threshold.
    pub forest_adoptions: usize,
    /// Points whose final label differs from the input, keyed by final class.
    pub changed_per_class: Vec<u64>,
}

/// Simultaneous k-nearest majority vote over the labels of `cloud`.
///
/// Every point is re-labeled from the *original* labels of its `k_vote`
/// nearest neighbors (the point itself does not vote). Class 0 neighbors
/// cast no vote and class 0 points are returned unchanged; a point whose
/// neighbors are all unlabeled keeps its label. Ties go to the class with
/// the larger summed inverse neighbor distance, then to the smaller id.
pub fn knn_smooth<T: Real>(
    cloud: &PointCloud<T>,
    index: &SpatialIndex<T>,
    k_vote: usize,
) -> Result<Vec<u8>> {
    let labels = cloud
        .labels()
        .ok_or_else(|| Error::InvalidArgument("knn_smooth needs a labeled cloud".into()))?;
    if index.len() != cloud.len() {
        return Err(Error::dims("knn_smooth index", cloud.len(), index.len()));
    }
    if k_vote == 0 {
        return Err(Error::InvalidArgument("k_vote must be at least 1".into()));
    }
    if k_vote >= cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "k_vote {} must be below the point count {}",
            k_vote,
            cloud.len()
        )));
    }
    let smoothed: Vec<u8> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let original = labels[i];
            if original == 0 {
                return 0;
            }
            let mut counts: Vec<u32> = Vec::new();
            let mut inv_dist: Vec<T> = Vec::new();
            for (id, dist) in index.knn(i, k_vote) {
                let class = labels[id] as usize;
                if class == 0 {
                    continue;
                }
                if class >= counts.len() {
                    counts.resize(class + 1, 0);
                    inv_dist.resize(class + 1, T::zero());
                }
                counts[class] += 1;
                inv_dist[class] += T::one() / dist;
            }
            if counts.iter().all(|&c| c == 0) {
                return original;
            }
            let mut best = 0usize;
            for c in 1..counts.len() {
                if counts[c] > counts[best]
                    || (counts[c] == counts[best] && inv_dist[c] > inv_dist[best])
                {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    Ok(smoothed)
}

/// Ids where the vote confirmed a non-void label: `{i | y_i = ŷ_i ∧ y_i ≠ 0}`.
pub fn core_set(original: &[u8], smoothed: &[u8]) -> Result<Vec<u32>> {
    if original.len() != smoothed.len() {
        return Err(Error::dims("core_set labels", original.len(), smoothed.len()));
    }
    Ok(original
        .iter()
        .zip(smoothed)
        .enumerate()
        .filter(|(_, (&y, &s))| y == s && y != 0)
        .map(|(i, _)| i as u32)
        .collect())
}

/// Per-point descriptor matrix for forest training, one row per point:
/// height above the scan's lowest point, range from the scanner, intensity
/// (0 when absent), the surface normal at the largest scale, and
/// (curvature, anisotropy, planarity) at each scale — `6 + 3·|scales|`
/// columns.
pub fn point_features<T: Real>(
    cloud: &PointCloud<T>,
    index: &SpatialIndex<T>,
    scales: &[T],
) -> Result<Array2<T>> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument(
            "point_features needs at least one scale".into(),
        ));
    }
    if index.len() != cloud.len() {
        return Err(Error::dims("point_features index", cloud.len(), index.len()));
    }
    let d = 6 + 3 * scales.len();
    let n = cloud.len();
    let min_z = cloud.min_z().unwrap_or(T::zero());
    let origin = cloud.meta.scanner_origin;
    let largest = scales
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite scales"))
        .map(|(k, _)| k)
        .expect("nonempty scales");
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = cloud.position(i);
            let mut row = vec![T::zero(); d];
            row[0] = p[2] - min_z;
            row[1] = cloud.range(i);
            row[2] = cloud
                .intensities()
                .map(|ints| ints[i])
                .unwrap_or_else(T::zero);
            let view = view_vector(p, origin);
            for (k, &scale) in scales.iter().enumerate() {
                let neighbors: Vec<[T; 3]> = index
                    .neighbors_in_radius(i, scale)
                    .into_iter()
                    .map(|(id, _)| index.position(id))
                    .collect();
                let f = features_from_neighborhood(p, &neighbors, view);
                if k == largest {
                    row[3] = f.normal[0];
                    row[4] = f.normal[1];
                    row[5] = f.normal[2];
                }
                row[6 + 3 * k] = f.curvature;
                row[7 + 3 * k] = f.anisotropy;
                row[8 + 3 * k] = f.planarity;
            }
            row
        })
        .collect();
    let mut out = Array2::zeros((n, d));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Overwrites suspect labels with the forest's prediction where its vote
/// fraction reaches `tau`; all other labels pass through unchanged.
/// Returns the final labels and the number of adoptions.
pub fn rf_relabel<T: Real>(
    forest: &RandomForest<T>,
    suspects: &[u32],
    features: &Array2<T>,
    smoothed: &[u8],
    tau: T,
) -> Result<(Vec<u8>, usize)> {
    if tau <= T::zero() || tau > T::one() {
        return Err(Error::InvalidArgument(format!(
            "tau must be in (0, 1], got {tau}"
        )));
    }
    let (n, d) = features.dim();
    if d != forest.num_features() {
        return Err(Error::dims("rf_relabel features", forest.num_features(), d));
    }
    if n != smoothed.len() {
        return Err(Error::dims("rf_relabel labels", n, smoothed.len()));
    }
    if let Some(&s) = suspects.iter().find(|&&s| s as usize >= n) {
        return Err(Error::InvalidArgument(format!(
            "suspect id {s} out of range for {n} points"
        )));
    }
    let mut labels = smoothed.to_vec();
    let decisions: Vec<(u32, Option<u8>)> = suspects
        .par_iter()
        .map(|&s| {
            let proba = forest.predict_proba(features.row(s as usize));
            let mut best = 0usize;
            for (c, &p) in proba.iter().enumerate().skip(1) {
                if p > proba[best] {
                    best = c;
                }
            }
            let adopted = if proba[best] >= tau { Some(best as u8) } else { None };
            (s, adopted)
        })
        .collect();
    let mut adoptions = 0usize;
    for (s, adopted) in decisions {
        if let Some(class) = adopted {
            labels[s as usize] = class;
            adoptions += 1;
        }
    }
    Ok((labels, adoptions))
}

/// Runs the whole refinement pass and reports what changed.
///
/// The forest step is skipped (with zero adoptions) when there are no
/// suspects or the reliable core does not span two classes.
pub fn refine_labels<T: Real>(
    cloud: &PointCloud<T>,
    config: &RefinementConfig<T>,
) -> Result<(Vec<u8>, RefinementReport)> {
    let original = cloud
        .labels()
        .ok_or_else(|| Error::InvalidArgument("refine_labels needs a labeled cloud".into()))?
        .to_vec();
    let index = SpatialIndex::build(cloud.positions());
    let smoothed = knn_smooth(cloud, &index, config.k_vote)?;
    let core = core_set(&original, &smoothed)?;
    let suspects: Vec<u32> = (0..cloud.len() as u32)
        .filter(|&i| {
            let y = original[i as usize];
            let s = smoothed[i as usize];
            (y != s && s != 0) || (config.relabel_void && s == 0)
        })
        .collect();
    let vote_changes = original
        .iter()
        .zip(&smoothed)
        .filter(|(y, s)| y != s)
        .count();
    let num_classes = class_count(&original).max(class_count(&smoothed));
    let mut final_labels = smoothed.clone();
    let mut adoptions = 0usize;
    if !suspects.is_empty() {
        let core_classes = {
            let mut seen = vec![false; num_classes];
            for &i in &core {
                seen[smoothed[i as usize] as usize] = true;
            }
            seen.iter().filter(|&&s| s).count()
        };
        if core.is_empty() || core_classes < 2 {
            log::warn!(
                "skipping forest relabeling: core has {} points across {} classes",
                core.len(),
                core_classes
            );
        } else {
            let features = point_features(cloud, &index, &config.scales)?;
            let mut core_features = Array2::zeros((core.len(), features.ncols()));
            let mut core_labels = Vec::with_capacity(core.len());
            for (row, &i) in core.iter().enumerate() {
                core_features.row_mut(row).assign(&features.row(i as usize));
                core_labels.push(smoothed[i as usize]);
            }
            let forest = rf_train(&core_features, &core_labels, num_classes, &config.forest)?;
            let (labels, n) =
                rf_relabel(&forest, &suspects, &features, &smoothed, config.tau)?;
            final_labels = labels;
            adoptions = n;
        }
    }
    let mut changed_per_class = vec![0u64; num_classes];
    for (i, (&y, &f)) in original.iter().zip(&final_labels).enumerate() {
        debug_assert!(core.binary_search(&(i as u32)).is_err() || y == f);
        if y != f {
            changed_per_class[f as usize] += 1;
        }
    }
    let report = RefinementReport {
        num_points: cloud.len(),
        core_size: core.len(),
        suspect_count: suspects.len(),
        vote_changes,
        forest_adoptions: adoptions,
        changed_per_class,
    };
    Ok((final_labels, report))
}

fn class_count(labels: &[u8]) -> usize {
    labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1)
}
