//! Feature-set names.
//!
//! A feature set is a `_`-separated union of channel trios, e.g.
//! `IRZ_N3_CAP` (9 channels) or `IRZ_N3_CAP_PCA` (12). Dots are cosmetic
//! and stripped, so `I.R.Z` and `IRZ` name the same trio; case is ignored.
//! The statistical trios (PCA, MNF, ICA) are always derived from the full
//! nine-channel base stack, independent of which base trios appear in the
//! requested union.

use crate::error::{CliError, CliResult};

/// One three-channel building block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturePart {
    /// Preprocessed intensity, range, inverted height.
    Irz,
    /// Normal-vector pseudo-RGB.
    N3,
    /// Curvature, anisotropy, planarity.
    Cap,
    /// Principal-component trio of the base stack.
    Pca,
    /// Minimum-noise-fraction trio of the base stack.
    Mnf,
    /// Independent-component trio of the base stack.
    Ica,
}

/// Canonical spellings, in documentation order.
pub const KNOWN_SETS: [&str; 6] = ["IRZ", "N3", "CAP", "PCA", "MNF", "ICA"];

impl FeaturePart {
    /// Canonical token used in set names and file names.
    pub fn token(self) -> &'static str {
        match self {
            FeaturePart::Irz => "IRZ",
            FeaturePart::N3 => "N3",
            FeaturePart::Cap => "CAP",
            FeaturePart::Pca => "PCA",
            FeaturePart::Mnf => "MNF",
            FeaturePart::Ica => "ICA",
        }
    }

    /// Channel names this trio contributes to a cube.
    pub fn channels(self) -> [&'static str; 3] {
        match self {
            FeaturePart::Irz => ["intensity", "range", "z_inv"],
            FeaturePart::N3 => ["normal_r", "normal_g", "normal_b"],
            FeaturePart::Cap => ["curvature", "anisotropy", "planarity"],
            FeaturePart::Pca => ["pca1", "pca2", "pca3"],
            FeaturePart::Mnf => ["mnf1", "mnf2", "mnf3"],
            FeaturePart::Ica => ["ica1", "ica2", "ica3"],
        }
    }

    /// Whether this trio is fitted from the base stack rather than computed
    /// directly from the scan.
    pub fn is_statistical(self) -> bool {
        matches!(self, FeaturePart::Pca | FeaturePart::Mnf | FeaturePart::Ica)
    }
}

/// Parses a set name into its parts, preserving order.
pub fn parse_feature_set(name: &str) -> CliResult<Vec<FeaturePart>> {
    let cleaned: String = name
        .chars()
        .filter(|&c| c != '.')
        .collect::<String>()
        .to_ascii_uppercase();
    let mut parts = Vec::new();
    for token in cleaned.split('_') {
        let part = match token {
            "IRZ" => FeaturePart::Irz,
            "N3" => FeaturePart::N3,
            "CAP" => FeaturePart::Cap,
            "PCA" => FeaturePart::Pca,
            "MNF" => FeaturePart::Mnf,
            "ICA" => FeaturePart::Ica,
            _ => {
                return Err(CliError::Config(format!(
                    "unknown feature set '{token}' in '{name}'; known sets: {} \
                     (join with '_')",
                    KNOWN_SETS.join(", ")
                )))
            }
        };
        if parts.contains(&part) {
            return Err(CliError::Config(format!(
                "feature set '{name}' lists {token} twice"
            )));
        }
        parts.push(part);
    }
    Ok(parts)
}

/// Total channel count of a parsed set.
pub fn channel_count(parts: &[FeaturePart]) -> usize {
    3 * parts.len()
}
