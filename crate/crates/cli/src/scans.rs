//! Scan discovery and the per-scan artifact layout.
//!
//! Every scan gets its own directory under the output root, with one
//! subdirectory per stage (`<output>/<scan_id>/project/`, `.../featurize/`,
//! ...), so stages can be re-run independently and artifacts never collide
//! across scans. The scan id is the PLY file stem.

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use std::path::PathBuf;

/// One scan's input file and artifact root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanJob {
    pub scan_id: String,
    /// Source point cloud.
    pub ply: PathBuf,
    /// `<output>/<scan_id>`.
    pub out_dir: PathBuf,
}

impl ScanJob {
    /// Path of a stage artifact (not created).
    pub fn stage_path(&self, stage: &str, file: &str) -> PathBuf {
        self.out_dir.join(stage).join(file)
    }

    /// Stage directory, created on demand.
    pub fn stage_dir(&self, stage: &str) -> CliResult<PathBuf> {
        let dir = self.out_dir.join(stage);
        std::fs::create_dir_all(&dir).map_err(|e| {
            CliError::Data(format!("cannot create {}: {e}", dir.display()))
        })?;
        Ok(dir)
    }
}

/// Lists the scans under the configured input, applying the `--scan` filter.
///
/// The input may be a single PLY file or a directory scanned (one level
/// deep) for `*.ply`; results are sorted by scan id so every run processes
/// scans in the same order.
pub fn discover_scans(cfg: &PipelineConfig, filter: Option<&str>) -> CliResult<Vec<ScanJob>> {
    let input = &cfg.io.input;
    let mut files: Vec<PathBuf> = if input.is_file() {
        vec![input.clone()]
    } else if input.is_dir() {
        let entries = std::fs::read_dir(input).map_err(|e| {
            CliError::Data(format!("cannot list {}: {e}", input.display()))
        })?;
        let mut out = Vec::new();
        for entry in entries {
            let path = entry
                .map_err(|e| CliError::Data(format!("cannot list {}: {e}", input.display())))?
                .path();
            let is_ply = path.is_file()
                && path
                    .extension()
                    .map_or(false, |e| e.eq_ignore_ascii_case("ply"));
            if is_ply {
                out.push(path);
            }
        }
        out
    } else {
        return Err(CliError::Data(format!(
            "input path {} does not exist",
            input.display()
        )));
    };
    files.sort();
    let mut jobs: Vec<ScanJob> = files
        .into_iter()
        .filter_map(|ply| {
            let scan_id = ply.file_stem()?.to_string_lossy().into_owned();
            let out_dir = cfg.io.output.join(&scan_id);
            Some(ScanJob { scan_id, ply, out_dir })
        })
        .collect();
    if let Some(pattern) = filter {
        jobs.retain(|j| wildcard_match(pattern, &j.scan_id));
    }
    if jobs.is_empty() {
        let suffix = match filter {
            Some(p) => format!(" matching --scan '{p}'"),
            None => String::new(),
        };
        return Err(CliError::Data(format!(
            "found 0 scans in {}{suffix}",
            input.display()
        )));
    }
    Ok(jobs)
}

/// Shell-style wildcard match: `*` spans any run of characters, `?` exactly
/// one; everything else is literal.
pub fn wildcard_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0usize, 0usize);
    // most recent star and the text position it is currently absorbing to
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}
