//! Declarative pipeline configuration.
//!
//! One JSON document configures every stage; command-line flags override
//! individual keys afterwards. All sections are optional and default to the
//! values below, but unknown keys are rejected so typos surface as
//! configuration errors instead of silently falling back to defaults.

use crate::error::{CliError, CliResult};
use crate::featureset::parse_feature_set;
use lidarsphere::ensemble::BaselineConfig;
use lidarsphere::features::PreprocessConfig;
use lidarsphere::projection::VirtualSphereSpec;
use lidarsphere::refine::{RandomForestConfig, RefinementConfig};
use lidarsphere::GridSpecD;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Schema version this build reads and writes.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Schema version; must equal [`CONFIG_VERSION`].
    pub version: u32,
    pub grid: GridSection,
    pub preprocess: PreprocessSection,
    /// Channel union materialized by `featurize`, e.g. `"IRZ_N3_CAP"`.
    pub feature_set: String,
    pub tiling: TilingSection,
    pub reduction: ReductionSection,
    pub ensemble: EnsembleSection,
    pub refinement: RefinementSection,
    pub evaluation: EvaluationSection,
    pub sphere: SphereSection,
    pub io: IoSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            grid: GridSection::default(),
            preprocess: PreprocessSection::default(),
            feature_set: "IRZ_N3_CAP".to_string(),
            tiling: TilingSection::default(),
            reduction: ReductionSection::default(),
            ensemble: EnsembleSection::default(),
            refinement: RefinementSection::default(),
            evaluation: EvaluationSection::default(),
            sphere: SphereSection::default(),
            io: IoSection::default(),
        }
    }
}

/// Projection raster: angular spans in degrees plus the cell size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub zenith_deg: [f64; 2],
    pub azimuth_deg: [f64; 2],
    pub resolution_deg: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            zenith_deg: [0.0, 135.0],
            azimuth_deg: [0.0, 360.0],
            resolution_deg: 0.25,
        }
    }
}

impl GridSection {
    pub fn to_grid(&self) -> CliResult<GridSpecD> {
        Ok(GridSpecD::from_degrees(
            (self.zenith_deg[0], self.zenith_deg[1]),
            (self.azimuth_deg[0], self.azimuth_deg[1]),
            self.resolution_deg,
        )?)
    }
}

/// Robust-stretch percentiles for the intensity and range channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub lo_percentile: f64,
    pub hi_percentile: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            lo_percentile: 1.0,
            hi_percentile: 99.0,
        }
    }
}

impl PreprocessSection {
    pub fn to_core(&self) -> PreprocessConfig<f64> {
        PreprocessConfig {
            lo_percentile: self.lo_percentile,
            hi_percentile: self.hi_percentile,
        }
    }
}

/// Canvas tiling for fixed-size consumers; 1 tile disables splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingSection {
    pub n_tiles: usize,
    /// Wrapped context columns on each side of a tile core.
    pub buffer: usize,
}

impl Default for TilingSection {
    fn default() -> Self {
        TilingSection {
            n_tiles: 1,
            buffer: 32,
        }
    }
}

/// Component count for the standalone `reduce` stage (the trios inside
/// feature sets are always 3 components).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionSection {
    pub components: usize,
}

impl Default for ReductionSection {
    fn default() -> Self {
        ReductionSection { components: 3 }
    }
}

/// Ensemble size, the pipeline seed, and the baseline members' forests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub members: usize,
    /// Master seed; drives member seeds, component analysis and refinement.
    pub seed: u64,
    pub trees: usize,
    pub max_depth: usize,
    pub max_train_pixels: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            members: 3,
            seed: 7,
            trees: 30,
            max_depth: 16,
            max_train_pixels: 20_000,
        }
    }
}

impl EnsembleSection {
    pub fn to_baseline(&self) -> BaselineConfig {
        BaselineConfig {
            forest: RandomForestConfig {
                num_trees: self.trees,
                max_depth: self.max_depth,
                ..RandomForestConfig::default()
            },
            max_train_pixels: self.max_train_pixels,
        }
    }
}

/// 3-D refinement knobs; mirrors the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementSection {
    pub k_vote: usize,
    /// Forest confidence needed to overwrite a suspect label, in (0, 1].
    pub tau: f64,
    /// Descriptor radii in meters.
    pub scales: Vec<f64>,
    pub trees: usize,
    pub max_depth: usize,
    pub relabel_void: bool,
}

impl Default for RefinementSection {
    fn default() -> Self {
        let core = RefinementConfig::<f64>::default();
        RefinementSection {
            k_vote: core.k_vote,
            tau: core.tau,
            scales: core.scales,
            trees: core.forest.num_trees,
            max_depth: core.forest.max_depth,
            relabel_void: core.relabel_void,
        }
    }
}

impl RefinementSection {
    pub fn to_core(&self, seed: u64) -> RefinementConfig<f64> {
        RefinementConfig {
            k_vote: self.k_vote,
            tau: self.tau,
            scales: self.scales.clone(),
            forest: RandomForestConfig {
                num_trees: self.trees,
                max_depth: self.max_depth,
                seed,
                ..RandomForestConfig::default()
            },
            relabel_void: self.relabel_void,
        }
    }
}

/// Metric options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Ground-truth classes dropped from every metric (void is additionally
    /// dropped in the void-excluded variant).
    pub exclude_classes: Vec<u8>,
    /// Histogram bins for map entropies.
    pub entropy_bins: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            exclude_classes: Vec::new(),
            entropy_bins: 256,
        }
    }
}

/// Virtual-sphere rendering; spans default to the projection grid's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereSection {
    pub radius: f64,
    pub resolution_deg: f64,
    pub zenith_span_deg: Option<[f64; 2]>,
    pub azimuth_span_deg: Option<[f64; 2]>,
}

impl Default for SphereSection {
    fn default() -> Self {
        SphereSection {
            radius: 1.0,
            resolution_deg: 1.0,
            zenith_span_deg: None,
            azimuth_span_deg: None,
        }
    }
}

impl SphereSection {
    pub fn to_spec(&self, grid: &GridSection) -> VirtualSphereSpec {
        let span = |explicit: Option<[f64; 2]>, fallback: [f64; 2]| {
            let [a, b] = explicit.unwrap_or(fallback);
            (a, b)
        };
        VirtualSphereSpec {
            radius: self.radius,
            res_deg: self.resolution_deg,
            zenith_span_deg: span(self.zenith_span_deg, grid.zenith_deg),
            azimuth_span_deg: span(self.azimuth_span_deg, grid.azimuth_deg),
        }
    }
}

/// Where scans come from and where per-scan artifacts go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    /// A PLY file or a directory of PLY files.
    pub input: PathBuf,
    /// Root of the `<output>/<scan_id>/<stage>/` artifact tree.
    pub output: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            input: PathBuf::from("."),
            output: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    /// Reads a config file, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(PipelineConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Config(format!("invalid config {}: {e}", p.display()))
                })
            }
        }
    }

    /// Applies command-line overrides on top of the loaded file.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        feature_set: Option<&str>,
    ) -> CliResult<()> {
        if let Some(s) = seed {
            self.ensemble.seed = s;
        }
        if let Some(fs) = feature_set {
            parse_feature_set(fs)?;
            self.feature_set = fs.to_string();
        }
        Ok(())
    }

    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> CliResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} is not supported; this build reads version {}",
                self.version, CONFIG_VERSION
            )));
        }
        self.grid.to_grid()?;
        parse_feature_set(&self.feature_set)?;
        if self.ensemble.members == 0 {
            return Err(CliError::Config("ensemble.members must be at least 1".into()));
        }
        if self.ensemble.trees == 0 || self.refinement.trees == 0 {
            return Err(CliError::Config("forests need at least one tree".into()));
        }
        if !(self.refinement.tau > 0.0 && self.refinement.tau <= 1.0) {
            return Err(CliError::Config(format!(
                "refinement.tau must lie in (0, 1], got {}",
                self.refinement.tau
            )));
        }
        if self.refinement.k_vote == 0 {
            return Err(CliError::Config("refinement.k_vote must be at least 1".into()));
        }
        if self.refinement.scales.is_empty() {
            return Err(CliError::Config("refinement.scales must not be empty".into()));
        }
        if self.tiling.n_tiles == 0 {
            return Err(CliError::Config("tiling.n_tiles must be at least 1".into()));
        }
        if self.reduction.components == 0 {
            return Err(CliError::Config("reduction.components must be at least 1".into()));
        }
        if self.evaluation.entropy_bins < 2 {
            return Err(CliError::Config(
                "evaluation.entropy_bins must be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Seed for the refinement forest, derived from the master seed so that
    /// refinement and baseline members never share RNG streams.
    pub fn refinement_seed(&self) -> u64 {
        self.ensemble.seed ^ 0x5eed_c0de_0000_0001
    }
}
