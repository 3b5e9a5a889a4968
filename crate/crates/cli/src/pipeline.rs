//! The stage implementations behind the subcommands.
//!
//! Each `cmd_*` function runs one stage for one scan: it reads the scan's
//! earlier artifacts from `<output>/<scan_id>/<stage>/`, writes its own
//! outputs there, and returns a one-line summary for the terminal. Stages
//! are deterministic functions of the config, the seed, and the bytes on
//! disk, so re-running one reproduces its outputs exactly.

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::featureset::{parse_feature_set, FeaturePart};
use crate::scans::ScanJob;
use lidarsphere::cloud::{load_ply, save_ply, AdaptiveRadius, PlyEncoding, SpatialIndex};
use lidarsphere::cloud::{default_classes, PointCloud};
use lidarsphere::ensemble::{
    baseline_segment, derive_member_seeds, fuse, load_logits, uncertainty, LogitStack,
};
use lidarsphere::eval::{
    auprc, confusion, map_entropy, metrics, metrics_table, pr_curve, pr_curve_csv,
    ConfusionMatrix, SegMetrics,
};
use lidarsphere::features::{
    eigen_descriptors, load_cube, merge_tiles, normals_to_pseudo_rgb, preprocess_basic,
    save_cube, tile, FeatureCube,
};
use lidarsphere::png::{
    load_label_mask, save_hot_preview, save_label_colors, save_label_mask, save_rgb_preview,
};
use lidarsphere::projection::{
    back_project, density_map, load_index, project, rasterize_channel, rasterize_labels,
    save_index, virtual_sphere, ProjectionIndex, Reducer,
};
use lidarsphere::reduce::{ica_fit, mnf_fit, pca_fit, save_model, transform};
use lidarsphere::refine::refine_labels;
use lidarsphere::LabelMask;
use ndarray::{Array2, Array3};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Milliseconds elapsed since `start`, for summary lines.
fn ms(start: Instant) -> u128 {
    start.elapsed().as_millis()
}

fn read_cloud(job: &ScanJob) -> CliResult<PointCloud<f64>> {
    if !job.ply.is_file() {
        return Err(CliError::Data(format!(
            "scan file {} does not exist",
            job.ply.display()
        )));
    }
    Ok(load_ply(&job.ply)?)
}

/// Loads the cloud together with its projection index, the pair most stages
/// start from.
fn load_projection(job: &ScanJob) -> CliResult<(PointCloud<f64>, ProjectionIndex<f64>)> {
    let cloud = read_cloud(job)?;
    let path = job.stage_path("project", "index.pidx");
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "no projection index for scan '{}' at {}; run `lidarsphere project` first",
            job.scan_id,
            path.display()
        )));
    }
    let index = load_index(&path, &cloud)?;
    Ok((cloud, index))
}

fn load_features(job: &ScanJob) -> CliResult<FeatureCube<f64>> {
    let path = job.stage_path("featurize", "features.fcub");
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "no feature cube for scan '{}' at {}; run `lidarsphere featurize` first",
            job.scan_id,
            path.display()
        )));
    }
    Ok(load_cube(&path)?)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Internal(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Per-point intensities, or zeros with a warning when the scan has none.
fn intensities_or_zero(cloud: &PointCloud<f64>) -> Vec<f64> {
    match cloud.intensities() {
        Some(v) => v.to_vec(),
        None => {
            log::warn!(
                "scan '{}' has no intensity column; using zeros",
                cloud.meta.source_id
            );
            vec![0.0; cloud.len()]
        }
    }
}

/// Nearest-return rasters of the unprocessed intensity, range, and height.
fn raw_rasters(
    cloud: &PointCloud<f64>,
    index: &ProjectionIndex<f64>,
) -> CliResult<[Array2<f64>; 3]> {
    let intensity = intensities_or_zero(cloud);
    let ranges: Vec<f64> = (0..index.n_points()).map(|i| index.range_of(i)).collect();
    let zs: Vec<f64> = cloud.positions().iter().map(|p| p[2]).collect();
    Ok([
        rasterize_channel(index, &intensity, Reducer::Nearest)?,
        rasterize_channel(index, &ranges, Reducer::Nearest)?,
        rasterize_channel(index, &zs, Reducer::Nearest)?,
    ])
}

#[derive(Serialize)]
struct DensityReport {
    height: usize,
    width: usize,
    total_points: usize,
    /// Points that landed inside the grid span.
    projected_points: u64,
    mode: u32,
    max_count: u32,
    /// `histogram[c]` = pixels holding exactly `c` points.
    histogram: Vec<u64>,
}

fn density_report(index: &ProjectionIndex<f64>) -> DensityReport {
    let density = density_map(index);
    DensityReport {
        height: index.grid.height,
        width: index.grid.width,
        total_points: index.n_points(),
        projected_points: density.counts.iter().map(|&c| u64::from(c)).sum(),
        mode: density.mode(),
        max_count: density.counts.iter().copied().max().unwrap_or(0),
        histogram: density.histogram,
    }
}

/// `project`: raster geometry, density report, raw channels, and (for
/// labelled scans) the rasterized ground truth.
pub fn cmd_project(cfg: &PipelineConfig, job: &ScanJob) -> CliResult<String> {
    let start = Instant::now();
    let cloud = read_cloud(job)?;
    let grid = cfg.grid.to_grid()?;
    let index = project(&cloud, &grid)?;
    let dir = job.stage_dir("project")?;
    save_index(&index, &dir.join("index.pidx"))?;

    let report = density_report(&index);
    write_json(&dir.join("density.json"), &report)?;

    let [intensity, range, z] = raw_rasters(&cloud, &index)?;
    let mut raw = FeatureCube::empty(index.valid_mask());
    raw.push_channel("intensity", intensity)?;
    raw.push_channel("range", range)?;
    raw.push_channel("z", z)?;
    save_cube(&raw, &dir.join("raw.fcub"))?;

    if cloud.has_labels() {
        let gt = rasterize_labels(&index, cloud.labels().unwrap())?;
        save_label_mask(&gt, &dir.join("gt_mask.png"))?;
        save_label_colors(&gt, &cloud.meta.classes, &dir.join("gt_colors.png"))?;
    }
    Ok(format!(
        "project {}: {}x{} grid, {} of {} points in span, density mode {} ({} ms)",
        job.scan_id,
        grid.height,
        grid.width,
        report.projected_points,
        report.total_points,
        report.mode,
        ms(start)
    ))
}

/// `density`: the density report alone, without writing rasters.
pub fn cmd_density(cfg: &PipelineConfig, job: &ScanJob) -> CliResult<String> {
    let start = Instant::now();
    let cloud = read_cloud(job)?;
    let grid = cfg.grid.to_grid()?;
    let index = project(&cloud, &grid)?;
    let report = density_report(&index);
    let dir = job.stage_dir("density")?;
    write_json(&dir.join("density.json"), &report)?;
    let filled: u64 = report
        .histogram
        .iter()
        .enumerate()
        .skip(1)
        .map(|(_, &n)| n)
        .sum();
    Ok(format!(
        "density {}: mode {}, max {}, {} of {} pixels filled ({} ms)",
        job.scan_id,
        report.mode,
        report.max_count,
        filled,
        report.height * report.width,
        ms(start)
    ))
}

/// Rasters of the covariance trio and the normal pseudo-colours.
fn geometry_planes(
    cloud: &PointCloud<f64>,
    index: &ProjectionIndex<f64>,
) -> CliResult<([Array2<f64>; 3], [Array2<f64>; 3])> {
    let spatial = SpatialIndex::build(cloud.positions());
    let descriptors = eigen_descriptors(cloud, &spatial, &AdaptiveRadius::default())?;
    let pull = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..cloud.len()).map(f).collect() };
    let curvature = pull(&|i| descriptors[i].curvature);
    let anisotropy = pull(&|i| descriptors[i].anisotropy);
    let planarity = pull(&|i| descriptors[i].planarity);
    let cap = [
        rasterize_channel(index, &curvature, Reducer::Nearest)?,
        rasterize_channel(index, &anisotropy, Reducer::Nearest)?,
        rasterize_channel(index, &planarity, Reducer::Nearest)?,
    ];
    let nx = rasterize_channel(
        index,
        &pull(&|i| descriptors[i].normal[0]),
        Reducer::Nearest,
    )?;
    let ny = rasterize_channel(
        index,
        &pull(&|i| descriptors[i].normal[1]),
        Reducer::Nearest,
    )?;
    let nz = rasterize_channel(
        index,
        &pull(&|i| descriptors[i].normal[2]),
        Reducer::Nearest,
    )?;
    let rgb = normals_to_pseudo_rgb(&nx, &ny, &nz, &index.valid_mask())?;
    Ok((cap, rgb))
}

/// Materializes the configured feature set for one scan.
///
/// The statistical trios (PCA, MNF, ICA) are always fitted on the full
/// nine-channel base stack so their meaning does not depend on which other
/// trios were requested alongside them.
pub fn featurize_cube(
    cfg: &PipelineConfig,
    cloud: &PointCloud<f64>,
    index: &ProjectionIndex<f64>,
) -> CliResult<FeatureCube<f64>> {
    let parts = parse_feature_set(&cfg.feature_set)?;
    let valid = index.valid_mask();

    let [intensity, range, z] = raw_rasters(cloud, index)?;
    let irz = preprocess_basic(&intensity, &range, &z, &valid, &cfg.preprocess.to_core())?;

    let needs_geometry = parts.iter().any(|p| *p != FeaturePart::Irz);
    let geometry = if needs_geometry {
        Some(geometry_planes(cloud, index)?)
    } else {
        None
    };

    let base = if parts.iter().any(|p| p.is_statistical()) {
        let (cap, rgb) = geometry.as_ref().unwrap();
        let mut cube = irz.clone();
        for (name, plane) in FeaturePart::N3.channels().iter().zip(rgb) {
            cube.push_channel(name, plane.clone())?;
        }
        for (name, plane) in FeaturePart::Cap.channels().iter().zip(cap) {
            cube.push_channel(name, plane.clone())?;
        }
        Some(cube)
    } else {
        None
    };

    let mut out = FeatureCube::empty(valid);
    for part in parts {
        match part {
            FeaturePart::Irz => {
                for name in part.channels() {
                    out.push_channel(name, irz.channel(name).unwrap().to_owned())?;
                }
            }
            FeaturePart::N3 => {
                let (_, rgb) = geometry.as_ref().unwrap();
                for (name, plane) in part.channels().iter().zip(rgb) {
                    out.push_channel(name, plane.clone())?;
                }
            }
            FeaturePart::Cap => {
                let (cap, _) = geometry.as_ref().unwrap();
                for (name, plane) in part.channels().iter().zip(cap) {
                    out.push_channel(name, plane.clone())?;
                }
            }
            FeaturePart::Pca | FeaturePart::Mnf | FeaturePart::Ica => {
                let base = base.as_ref().unwrap();
                let model = match part {
                    FeaturePart::Pca => pca_fit(base, 3)?,
                    FeaturePart::Mnf => mnf_fit(base, 3)?,
                    _ => ica_fit(base, 3, cfg.ensemble.seed)?,
                };
                let trio = transform(&model, base)?;
                for name in part.channels() {
                    out.push_channel(name, trio.channel(name).unwrap().to_owned())?;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct TileGeometry {
    name: String,
    core_col: usize,
    core_width: usize,
    padded_height: usize,
    padded_width: usize,
}

#[derive(Serialize)]
struct TilingReport {
    n_tiles: usize,
    buffer: usize,
    canvas_height: usize,
    canvas_width: usize,
    tiles: Vec<TileGeometry>,
}

/// `featurize`: the configured channel union plus previews, verified
/// against the tiling round trip when tiling is enabled.
pub fn cmd_featurize(cfg: &PipelineConfig, job: &ScanJob) -> CliResult<String> {
    let start = Instant::now();
    let (cloud, index) = load_projection(job)?;
    let cube = featurize_cube(cfg, &cloud, &index)?;
    let dir = job.stage_dir("featurize")?;

    let parts = parse_feature_set(&cfg.feature_set)?;
    for part in &parts {
        let [a, b, c] = part.channels();
        let (a, b, c) = (
            cube.channel(a).unwrap().to_owned(),
            cube.channel(b).unwrap().to_owned(),
            cube.channel(c).unwrap().to_owned(),
        );
        let file = format!("preview_{}.png", part.token().to_ascii_lowercase());
        save_rgb_preview([&a, &b, &c], &dir.join(file))?;
    }

    if cfg.tiling.n_tiles > 1 {
        let set = tile(&cube, cfg.tiling.n_tiles, cfg.tiling.buffer)?;
        let merged = merge_tiles(&set)?;
        if merged.data() != cube.data() || merged.valid() != cube.valid() {
            return Err(CliError::Internal(
                "tile/merge round trip diverged from the source cube".into(),
            ));
        }
        let report = TilingReport {
            n_tiles: cfg.tiling.n_tiles,
            buffer: cfg.tiling.buffer,
            canvas_height: set.canvas_height,
            canvas_width: set.canvas_width,
            tiles: set
                .tiles
                .iter()
                .zip(&set.names)
                .map(|(t, name)| {
                    let (_, ph, pw) = t.data.dim();
                    TileGeometry {
                        name: name.clone(),
                        core_col: t.core_col,
                        core_width: t.core_width,
                        padded_height: ph,
                        padded_width: pw,
                    }
                })
                .collect(),
        };
        write_json(&dir.join("tiling.json"), &report)?;
    }

    save_cube(&cube, &dir.join("features.fcub"))?;
    Ok(format!(
        "featurize {}: {} channels [{}] ({} ms)",
        job.scan_id,
        cube.num_channels(),
        cube.names().join(", "),
        ms(start)
    ))
}

/// `reduce`: fits all three component models on the feature cube and writes
/// the transformed trios alongside the model files.
pub fn cmd_reduce(cfg: &PipelineConfig, job: &ScanJob) -> CliResult<String> {
    let start = Instant::now();
    let cube = load_features(job)?;
    let k = cfg.reduction.components;
    let dir = job.stage_dir("reduce")?;
    let models = [
        pca_fit(&cube, k)?,
        mnf_fit(&cube, k)?,
        ica_fit(&cube, k, cfg.ensemble.seed)?,
    ];
    for model in &models {
        let prefix = model.kind.prefix();
        save_model(model, &dir.join(format!("{prefix}.json")))?;
        let reduced = transform(model, &cube)?;
        save_cube(&reduced, &dir.join(format!("{prefix}.fcub")))?;
    }
    Ok(format!(
        "reduce {}: {} components from {} channels, 3 models ({} ms)",
        job.scan_id,
        k,
        cube.num_channels(),
        ms(start)
    ))
}

/// Sorted member logit files under `<output>/<scan_id>/logits/`.
fn member_logit_files(job: &ScanJob) -> CliResult<Vec<PathBuf>> {
    let dir = job.out_dir.join("logits");
    let mut files = Vec::new();
    if dir.is_dir() {
        let entries = std::fs::read_dir(&dir)
            .map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry
                .map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?
                .path();
            if path.is_file() && path.extension().map_or(false, |e| e == "lgts") {
                files.push(path);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "no member logits under {}; deposit .lgts files there or run `lidarsphere fuse --baseline`",
            dir.display()
        )));
    }
    Ok(files)
}

fn load_member_stacks(files: &[PathBuf]) -> CliResult<LogitStack<f64>> {
    let mut members: Vec<LogitStack<f64>> = Vec::with_capacity(files.len());
    let mut first: Option<(&Path, (usize, usize, usize))> = None;
    for path in files {
        let stack: LogitStack<f64> = load_logits(path)?;
        let shape = (stack.num_classes(), stack.height(), stack.width());
        match first {
            None => first = Some((path, shape)),
            Some((first_path, want)) if want != shape => {
                return Err(CliError::Data(format!(
                    "logit shape mismatch: {} holds {}x{}x{} but {} holds {}x{}x{}",
                    first_path.display(),
                    want.0,
                    want.1,
                    want.2,
                    path.display(),
                    shape.0,
                    shape.1,
                    shape.2,
                )));
            }
            Some(_) => {}
        }
        members.push(stack);
    }
    Ok(LogitStack::concat(&members)?)
}

#[derive(Serialize)]
struct MapStats {
    mean: f64,
    max: f64,
    /// Shannon entropy of the valid-pixel value histogram, in nats.
    histogram_entropy: f64,
}

fn map_stats(map: &Array2<f64>, valid: &Array2<bool>, bins: usize) -> CliResult<MapStats> {
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut n = 0usize;
    for (v, &ok) in map.iter().zip(valid.iter()) {
        if ok {
            sum += v;
            max = max.max(*v);
            n += 1;
        }
    }
    if n == 0 {
        return Err(CliError::Data(
            "cannot summarize uncertainty: no valid pixels".into(),
        ));
    }
    Ok(MapStats {
        mean: sum / n as f64,
        max,
        histogram_entropy: map_entropy(map, Some(valid), bins)?,
    })
}

#[derive(Serialize)]
struct EntropyStats {
    members: usize,
    classes: usize,
    total: MapStats,
    expected: MapStats,
    epistemic: MapStats,
}

/// `fuse`: combines member logits (from files, or trained in place with
/// `--baseline`) into pseudo-labels and uncertainty maps.
pub fn cmd_fuse(cfg: &PipelineConfig, job: &ScanJob, baseline: bool) -> CliResult<String> {
    let start = Instant::now();
    let cube = load_features(job)?;
    let stack = if baseline {
        let gt_path = job.stage_path("project", "gt_mask.png");
        if !gt_path.is_file() {
            return Err(CliError::Data(format!(
                "baseline fusion needs rasterized training labels at {}; run `lidarsphere project` on a labelled scan first",
                gt_path.display()
            )));
        }
        let train = load_label_mask(&gt_path)?;
        let num_classes = usize::from(train.iter().copied().max().unwrap_or(0)).max(1) + 1;
        let seeds = derive_member_seeds(cfg.ensemble.seed, cfg.ensemble.members);
        baseline_segment(&cube, &train, num_classes, &seeds, &cfg.ensemble.to_baseline())?
    } else {
        let files = member_logit_files(job)?;
        load_member_stacks(&files)?
    };
    if (stack.height(), stack.width()) != (cube.height(), cube.width()) {
        return Err(CliError::Data(format!(
            "logits are {}x{} but the feature cube is {}x{}",
            stack.height(),
            stack.width(),
            cube.height(),
            cube.width()
        )));
    }

    let (_, labels) = fuse(&stack);
    let maps = uncertainty(&stack);
    let dir = job.stage_dir("fuse")?;
    save_label_mask(&labels, &dir.join("pseudo_labels.png"))?;
    save_label_colors(&labels, &default_classes(), &dir.join("pseudo_colors.png"))?;

    let valid = cube.valid().clone();
    let mut unc = FeatureCube::empty(valid.clone());
    unc.push_channel("total", maps.total.clone())?;
    unc.push_channel("expected", maps.expected.clone())?;
    unc.push_channel("epistemic", maps.epistemic.clone())?;
    save_cube(&unc, &dir.join("uncertainty.fcub"))?;
    save_hot_preview(&maps.total, Some(&valid), &dir.join("total.png"))?;
    save_hot_preview(&maps.expected, Some(&valid), &dir.join("expected.png"))?;
    save_hot_preview(&maps.epistemic, Some(&valid), &dir.join("epistemic.png"))?;

    let bins = cfg.evaluation.entropy_bins;
    let stats = EntropyStats {
        members: stack.num_members(),
        classes: stack.num_classes(),
        total: map_stats(&maps.total, &valid, bins)?,
        expected: map_stats(&maps.expected, &valid, bins)?,
        epistemic: map_stats(&maps.epistemic, &valid, bins)?,
    };
    write_json(&dir.join("entropy_stats.json"), &stats)?;
    Ok(format!(
        "fuse {}: {} members, {} classes, mean total uncertainty {:.4} ({} ms)",
        job.scan_id,
        stats.members,
        stats.classes,
        stats.total.mean,
        ms(start)
    ))
}

/// Pseudo-labels transferred back onto the points of the scan.
fn backprojected_cloud(job: &ScanJob) -> CliResult<(PointCloud<f64>, ProjectionIndex<f64>)> {
    let (mut cloud, index) = load_projection(job)?;
    let mask_path = job.stage_path("fuse", "pseudo_labels.png");
    if !mask_path.is_file() {
        return Err(CliError::Data(format!(
            "no pseudo-labels for scan '{}' at {}; run `lidarsphere fuse` first",
            job.scan_id,
            mask_path.display()
        )));
    }
    let mask = load_label_mask(&mask_path)?;
    let labels = back_project(&index, &mask)?;
    cloud.set_labels(labels)?;
    Ok((cloud, index))
}

/// `backproject`: writes the pseudo-labelled cloud without refining it.
pub fn cmd_backproject(_cfg: &PipelineConfig, job: &ScanJob) -> CliResult<String> {
    let start = Instant::now();
    let (cloud, _) = backprojected_cloud(job)?;
    let dir = job.stage_dir("backproject")?;
    save_ply(&cloud, &dir.join("labeled.ply"), PlyEncoding::BinaryLittleEndian)?;
    let labelled = cloud
        .labels()
        .unwrap()
        .iter()
        .filter(|&&l| l != 0)
        .count();
    Ok(format!(
        "backproject {}: {} of {} points labelled ({} ms)",
        job.scan_id,
        labelled,
        cloud.len(),
        ms(start)
    ))
}

/// `refine`: back-projects the pseudo-labels and runs the 3-D refinement
/// pass, then re-rasterizes the result for 2-D consumers.
pub fn cmd_refine(cfg: &PipelineConfig, job: &ScanJob) -> CliResult<String> {
    let start = Instant::now();
    let (mut cloud, index) = backprojected_cloud(job)?;
    let refine_cfg = cfg.refinement.to_core(cfg.refinement_seed());
    let (refined, report) = refine_labels(&cloud, &refine_cfg)?;
    let dir = job.stage_dir("refine")?;
    cloud.set_labels(refined.clone())?;
    save_ply(&cloud, &dir.join("refined.ply"), PlyEncoding::BinaryLittleEndian)?;
    write_json(&dir.join("report.json"), &report)?;
    let mask = rasterize_labels(&index, &refined)?;
    save_label_mask(&mask, &dir.join("refined_mask.png"))?;
    save_label_colors(&mask, &cloud.meta.classes, &dir.join("refined_colors.png"))?;
    Ok(format!(
        "refine {}: {} suspects, {} vote changes, {} forest adoptions ({} ms)",
        job.scan_id,
        report.suspect_count,
        report.vote_changes,
        report.forest_adoptions,
        ms(start)
    ))
}

/// `sphere`: renders the first three feature channels onto a virtual sphere
/// for quick 3-D inspection.
pub fn cmd_sphere(cfg: &PipelineConfig, job: &ScanJob) -> CliResult<String> {
    let start = Instant::now();
    let cube = load_features(job)?;
    let grid = cfg.grid.to_grid()?;
    if (cube.height(), cube.width()) != (grid.height, grid.width) {
        return Err(CliError::Data(format!(
            "feature cube is {}x{} but the configured grid is {}x{}; re-run featurize with this config",
            cube.height(),
            cube.width(),
            grid.height,
            grid.width
        )));
    }
    let (h, w) = (cube.height(), cube.width());
    let last = cube.num_channels() - 1;
    let map = Array3::from_shape_fn((h, w, 3), |(i, j, c)| {
        if !cube.valid()[(i, j)] {
            return 0u8;
        }
        let v = cube.channel_at(c.min(last))[(i, j)];
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    });
    let spec = cfg.sphere.to_spec(&cfg.grid);
    let sphere = virtual_sphere(&map, &grid, &spec)?;
    let dir = job.stage_dir("sphere")?;
    sphere.save(&dir.join("sphere.ply"), PlyEncoding::BinaryLittleEndian)?;
    Ok(format!(
        "sphere {}: {} points at {} deg, radius {} m ({} ms)",
        job.scan_id,
        sphere.len(),
        spec.res_deg,
        spec.radius,
        ms(start)
    ))
}

/// Class display names, padded with generated names past the default
/// palette.
fn class_names(num_classes: usize) -> Vec<String> {
    let defaults = default_classes();
    (0..num_classes)
        .map(|c| match defaults.get(c) {
            Some(def) => def.name.clone(),
            None => format!("class {c}"),
        })
        .collect()
}

/// One scan's evaluation, kept for cross-scan aggregation.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub scan_id: String,
    /// Which stage produced the evaluated mask (`refine` or `fuse`).
    pub prediction: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub all: SegMetrics,
    /// `None` when every evaluated pixel is void.
    pub void_excluded: Option<SegMetrics>,
    pub confusion_all: Vec<Vec<u64>>,
    pub confusion_void_excluded: Vec<Vec<u64>>,
    /// Area under the precision-recall curve of epistemic uncertainty as an
    /// error detector; `None` without uncertainty maps or error pixels.
    pub auprc: Option<f64>,
}

fn metrics_or_none(cm: &ConfusionMatrix) -> Option<SegMetrics> {
    match metrics(cm) {
        Ok(m) => Some(m),
        Err(lidarsphere::Error::DegenerateInput(_)) => None,
        Err(_) => None,
    }
}

/// Ranks ground-truth-labelled pixels by epistemic uncertainty and scores
/// how well that ranking detects prediction errors.
fn error_detection_auprc(
    job: &ScanJob,
    gt: &LabelMask,
    pred: &LabelMask,
) -> CliResult<Option<(f64, String)>> {
    let unc_path = job.stage_path("fuse", "uncertainty.fcub");
    if !unc_path.is_file() {
        return Ok(None);
    }
    let unc: FeatureCube<f64> = load_cube(&unc_path)?;
    let epistemic = match unc.channel("epistemic") {
        Some(c) => c,
        None => return Ok(None),
    };
    if epistemic.dim() != gt.dim() {
        return Err(CliError::Data(format!(
            "uncertainty maps are {:?} but the masks are {:?}",
            epistemic.dim(),
            gt.dim()
        )));
    }
    let mut scores = Vec::new();
    let mut errors = Vec::new();
    for ((g, p), s) in gt.iter().zip(pred.iter()).zip(epistemic.iter()) {
        if *g != 0 {
            scores.push(*s);
            errors.push(p != g);
        }
    }
    if scores.is_empty() || !errors.iter().any(|&e| e) {
        return Ok(None);
    }
    let n = scores.len();
    let score_row = Array2::from_shape_vec((1, n), scores)
        .map_err(|e| CliError::Internal(format!("cannot shape scores: {e}")))?;
    let error_row = Array2::from_shape_vec((1, n), errors)
        .map_err(|e| CliError::Internal(format!("cannot shape error mask: {e}")))?;
    let curve = pr_curve(&score_row, &error_row)?;
    Ok(Some((auprc(&curve)?, pr_curve_csv(&curve))))
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

/// `eval`: per-scan segmentation metrics against the rasterized ground
/// truth, preferring refined masks over fused ones.
pub fn cmd_eval(cfg: &PipelineConfig, job: &ScanJob) -> CliResult<(String, EvalSummary)> {
    let start = Instant::now();
    let gt_path = job.stage_path("project", "gt_mask.png");
    if !gt_path.is_file() {
        return Err(CliError::Data(format!(
            "no ground-truth mask for scan '{}' at {}; run `lidarsphere project` on a labelled scan first",
            job.scan_id,
            gt_path.display()
        )));
    }
    let gt = load_label_mask(&gt_path)?;
    let refined_path = job.stage_path("refine", "refined_mask.png");
    let fused_path = job.stage_path("fuse", "pseudo_labels.png");
    let (pred_path, prediction) = if refined_path.is_file() {
        (refined_path, "refine")
    } else if fused_path.is_file() {
        (fused_path, "fuse")
    } else {
        return Err(CliError::Data(format!(
            "no predictions for scan '{}'; run `lidarsphere fuse` (and optionally `refine`) first",
            job.scan_id
        )));
    };
    let pred = load_label_mask(&pred_path)?;

    let max_label = gt
        .iter()
        .chain(pred.iter())
        .copied()
        .max()
        .unwrap_or(0);
    let num_classes = usize::from(max_label).max(1) + 1;
    let exclude_all = cfg.evaluation.exclude_classes.clone();
    let mut exclude_void = exclude_all.clone();
    if !exclude_void.contains(&0) {
        exclude_void.push(0);
    }
    let cm_all = confusion(&gt, &pred, num_classes, &exclude_all)?;
    let cm_void = confusion(&gt, &pred, num_classes, &exclude_void)?;
    let all = metrics(&cm_all)?;
    let void_excluded = metrics_or_none(&cm_void);
    let names = class_names(num_classes);

    let dir = job.stage_dir("eval")?;
    let detection = error_detection_auprc(job, &gt, &pred)?;
    let auprc_value = detection.as_ref().map(|(a, _)| *a);
    if let Some((_, csv)) = &detection {
        write_text(&dir.join("pr_curve.csv"), csv)?;
    }

    let summary = EvalSummary {
        scan_id: job.scan_id.clone(),
        prediction: prediction.to_string(),
        num_classes,
        class_names: names.clone(),
        all: all.clone(),
        void_excluded: void_excluded.clone(),
        confusion_all: cm_all.to_rows(),
        confusion_void_excluded: cm_void.to_rows(),
        auprc: auprc_value,
    };
    write_json(&dir.join("metrics.json"), &summary)?;

    let mut text = format!(
        "scan {}  (predictions from {prediction})\n\nall classes:\n{}\n",
        job.scan_id,
        metrics_table(&all, &names)
    );
    match &void_excluded {
        Some(m) => {
            text.push_str(&format!("\nvoid excluded:\n{}\n", metrics_table(m, &names)))
        }
        None => text.push_str("\nvoid excluded: no labelled pixels\n"),
    }
    text.push_str(&format!(
        "\nmIoU Void excl.: {}\n",
        fmt_opt(void_excluded.as_ref().map(|m| m.mean_iou))
    ));
    match auprc_value {
        Some(a) => text.push_str(&format!("error-detection AUPRC: {a:.4}\n")),
        None => text.push_str("error-detection AUPRC: omitted (no uncertainty maps or no errors)\n"),
    }
    write_text(&dir.join("metrics.txt"), &text)?;

    let line = format!(
        "eval {}: oAcc {:.4}, mIoU {:.4}, mIoU void-excl {}, AUPRC {} ({} ms)",
        job.scan_id,
        all.overall_accuracy,
        all.mean_iou,
        fmt_opt(void_excluded.as_ref().map(|m| m.mean_iou)),
        fmt_opt(auprc_value),
        ms(start)
    );
    Ok((line, summary))
}

fn padded_sum(rows_per_scan: &[&Vec<Vec<u64>>]) -> Vec<Vec<u64>> {
    let size = rows_per_scan.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut sum = vec![vec![0u64; size]; size];
    for rows in rows_per_scan {
        for (g, row) in rows.iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                sum[g][p] += count;
            }
        }
    }
    sum
}

#[derive(Serialize)]
struct AggregateReport {
    scans: Vec<String>,
    num_classes: usize,
    class_names: Vec<String>,
    all: SegMetrics,
    void_excluded: Option<SegMetrics>,
    confusion_all: Vec<Vec<u64>>,
    confusion_void_excluded: Vec<Vec<u64>>,
}

/// Sums the per-scan confusions and writes the cross-scan report under
/// `<output>/_aggregate/eval/`. Returns the terminal summary line.
pub fn write_aggregate(cfg: &PipelineConfig, summaries: &[EvalSummary]) -> CliResult<String> {
    let rows_all: Vec<&Vec<Vec<u64>>> = summaries.iter().map(|s| &s.confusion_all).collect();
    let rows_void: Vec<&Vec<Vec<u64>>> = summaries
        .iter()
        .map(|s| &s.confusion_void_excluded)
        .collect();
    let sum_all = padded_sum(&rows_all);
    let sum_void = padded_sum(&rows_void);
    let cm_all = ConfusionMatrix::from_rows(&sum_all)?;
    let cm_void = ConfusionMatrix::from_rows(&sum_void)?;
    let all = metrics(&cm_all)?;
    let void_excluded = metrics_or_none(&cm_void);
    let names = class_names(cm_all.num_classes());

    let dir = cfg.io.output.join("_aggregate").join("eval");
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let report = AggregateReport {
        scans: summaries.iter().map(|s| s.scan_id.clone()).collect(),
        num_classes: cm_all.num_classes(),
        class_names: names.clone(),
        all: all.clone(),
        void_excluded: void_excluded.clone(),
        confusion_all: sum_all,
        confusion_void_excluded: sum_void,
    };
    write_json(&dir.join("metrics.json"), &report)?;

    let mut text = String::from(
        "scan                          oAcc     mAcc     mIoU     mIoU Void excl.   AUPRC\n",
    );
    for s in summaries {
        text.push_str(&format!(
            "{:<28}{:>7.4}  {:>7.4}  {:>7.4}  {:>16}  {:>6}\n",
            s.scan_id,
            s.all.overall_accuracy,
            s.all.mean_accuracy,
            s.all.mean_iou,
            fmt_opt(s.void_excluded.as_ref().map(|m| m.mean_iou)),
            fmt_opt(s.auprc),
        ));
    }
    text.push_str(&format!(
        "{:<28}{:>7.4}  {:>7.4}  {:>7.4}  {:>16}  {:>6}\n",
        "all scans",
        all.overall_accuracy,
        all.mean_accuracy,
        all.mean_iou,
        fmt_opt(void_excluded.as_ref().map(|m| m.mean_iou)),
        "-",
    ));
    text.push_str(&format!("\nall classes:\n{}\n", metrics_table(&all, &names)));
    write_text(&dir.join("metrics.txt"), &text)?;

    Ok(format!(
        "eval aggregate over {} scans: oAcc {:.4}, mIoU {:.4}, mIoU void-excl {}",
        summaries.len(),
        all.overall_accuracy,
        all.mean_iou,
        fmt_opt(void_excluded.as_ref().map(|m| m.mean_iou)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lidarsphere::cloud::PlyEncoding;
    use lidarsphere::ensemble::save_logits;
    use lidarsphere::synth::layered_scan;
    use ndarray::Array4;
    use tempfile::tempdir;

    /// A small labelled scan on disk plus a config pointing at it.
    fn scene(dir: &Path) -> (PipelineConfig, ScanJob) {
        let mut cfg = PipelineConfig::default();
        cfg.grid.zenith_deg = [30.0, 90.0];
        cfg.grid.azimuth_deg = [0.0, 120.0];
        cfg.grid.resolution_deg = 5.0;
        cfg.ensemble.members = 2;
        cfg.ensemble.trees = 8;
        cfg.ensemble.max_depth = 8;
        cfg.refinement.trees = 8;
        cfg.refinement.max_depth = 8;
        cfg.io.input = dir.to_path_buf();
        cfg.io.output = dir.join("out");
        let grid = cfg.grid.to_grid().unwrap();
        let cloud = layered_scan::<f64>(&grid, "tiny", 11);
        let ply = dir.join("tiny.ply");
        save_ply(&cloud, &ply, PlyEncoding::BinaryLittleEndian).unwrap();
        let job = ScanJob {
            scan_id: "tiny".into(),
            ply,
            out_dir: cfg.io.output.join("tiny"),
        };
        (cfg, job)
    }

    #[test]
    fn stages_chain_end_to_end() {
        let dir = tempdir().unwrap();
        let (cfg, job) = scene(dir.path());

        let line = cmd_project(&cfg, &job).unwrap();
        assert!(line.contains("12x24 grid"), "{line}");
        for file in ["index.pidx", "density.json", "raw.fcub", "gt_mask.png", "gt_colors.png"] {
            assert!(job.stage_path("project", file).is_file(), "missing {file}");
        }

        let line = cmd_featurize(&cfg, &job).unwrap();
        assert!(line.contains("9 channels"), "{line}");
        assert!(job.stage_path("featurize", "features.fcub").is_file());
        for part in ["irz", "n3", "cap"] {
            let preview = format!("preview_{part}.png");
            assert!(job.stage_path("featurize", &preview).is_file(), "{preview}");
        }

        let line = cmd_fuse(&cfg, &job, true).unwrap();
        assert!(line.contains("2 members"), "{line}");
        for file in [
            "pseudo_labels.png",
            "pseudo_colors.png",
            "uncertainty.fcub",
            "total.png",
            "expected.png",
            "epistemic.png",
            "entropy_stats.json",
        ] {
            assert!(job.stage_path("fuse", file).is_file(), "missing {file}");
        }

        cmd_backproject(&cfg, &job).unwrap();
        assert!(job.stage_path("backproject", "labeled.ply").is_file());

        cmd_refine(&cfg, &job).unwrap();
        for file in ["refined.ply", "report.json", "refined_mask.png", "refined_colors.png"] {
            assert!(job.stage_path("refine", file).is_file(), "missing {file}");
        }

        let line = cmd_sphere(&cfg, &job).unwrap();
        assert!(job.stage_path("sphere", "sphere.ply").is_file());
        assert!(line.contains("7200 points"), "{line}"); // 60x120 span at 1 deg

        let (line, summary) = cmd_eval(&cfg, &job).unwrap();
        assert!(job.stage_path("eval", "metrics.json").is_file());
        assert!(job.stage_path("eval", "metrics.txt").is_file());
        assert_eq!(summary.prediction, "refine");
        assert!(summary.all.overall_accuracy > 0.5, "{line}");

        let agg = write_aggregate(&cfg, &[summary]).unwrap();
        assert!(cfg.io.output.join("_aggregate/eval/metrics.json").is_file());
        assert!(cfg.io.output.join("_aggregate/eval/metrics.txt").is_file());
        assert!(agg.contains("1 scans"), "{agg}");
    }

    #[test]
    fn stages_demand_their_inputs_in_order() {
        let dir = tempdir().unwrap();
        let (cfg, job) = scene(dir.path());
        let err = cmd_featurize(&cfg, &job).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("project"), "{err}");
        let err = cmd_fuse(&cfg, &job, true).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("featurize"), "{err}");
        let err = cmd_refine(&cfg, &job).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let err = cmd_eval(&cfg, &job).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn density_reports_without_rasters() {
        let dir = tempdir().unwrap();
        let (cfg, job) = scene(dir.path());
        let line = cmd_density(&cfg, &job).unwrap();
        assert!(job.stage_path("density", "density.json").is_file());
        assert!(!job.stage_path("density", "raw.fcub").exists());
        assert!(line.contains("mode 1"), "{line}"); // one beam per cell
    }

    #[test]
    fn reduce_writes_three_models_and_trios() {
        let dir = tempdir().unwrap();
        let (cfg, job) = scene(dir.path());
        cmd_project(&cfg, &job).unwrap();
        cmd_featurize(&cfg, &job).unwrap();
        cmd_reduce(&cfg, &job).unwrap();
        for prefix in ["pca", "mnf", "ica"] {
            assert!(job.stage_path("reduce", &format!("{prefix}.json")).is_file());
            let cube: FeatureCube<f64> =
                load_cube(&job.stage_path("reduce", &format!("{prefix}.fcub"))).unwrap();
            assert_eq!(cube.num_channels(), 3);
        }
    }

    #[test]
    fn fuse_reads_member_logit_files() {
        let dir = tempdir().unwrap();
        let (cfg, job) = scene(dir.path());
        cmd_project(&cfg, &job).unwrap();
        cmd_featurize(&cfg, &job).unwrap();
        let logits_dir = job.out_dir.join("logits");
        std::fs::create_dir_all(&logits_dir).unwrap();
        let (h, w) = (12, 24);
        for m in 0..2 {
            let data = Array4::from_shape_fn((1, 3, h, w), |(_, c, i, j)| {
                ((c + m) as f64) - 0.01 * (i + j) as f64
            });
            let stack = LogitStack::new(data).unwrap();
            save_logits(&stack, &logits_dir.join(format!("member_{m}.lgts"))).unwrap();
        }
        let line = cmd_fuse(&cfg, &job, false).unwrap();
        assert!(line.contains("2 members"), "{line}");

        // a third member with a different width must be rejected by name
        let bad = LogitStack::new(Array4::from_elem((1, 3, h, w + 1), 0.0)).unwrap();
        save_logits(&bad, &logits_dir.join("member_2.lgts")).unwrap();
        let err = cmd_fuse(&cfg, &job, false).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("member_2.lgts"), "{err}");
    }

    #[test]
    fn twelve_channel_sets_append_the_component_trio() {
        let dir = tempdir().unwrap();
        let (mut cfg, job) = scene(dir.path());
        cfg.feature_set = "IRZ_N3_CAP_PCA".into();
        cmd_project(&cfg, &job).unwrap();
        let line = cmd_featurize(&cfg, &job).unwrap();
        assert!(line.contains("12 channels"), "{line}");
        let cube: FeatureCube<f64> =
            load_cube(&job.stage_path("featurize", "features.fcub")).unwrap();
        assert_eq!(cube.num_channels(), 12);
        assert_eq!(cube.names()[9..], ["pca1", "pca2", "pca3"]);
        assert!(job.stage_path("featurize", "preview_pca.png").is_file());
    }

    #[test]
    fn tiling_verifies_and_records_geometry() {
        let dir = tempdir().unwrap();
        let (mut cfg, job) = scene(dir.path());
        cfg.tiling.n_tiles = 2;
        cfg.tiling.buffer = 4;
        cmd_project(&cfg, &job).unwrap();
        cmd_featurize(&cfg, &job).unwrap();
        let text = std::fs::read_to_string(job.stage_path("featurize", "tiling.json")).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["n_tiles"], 2);
        assert_eq!(json["tiles"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn rerunning_a_stage_reproduces_its_bytes() {
        let dir = tempdir().unwrap();
        let (cfg, job) = scene(dir.path());
        cmd_project(&cfg, &job).unwrap();
        cmd_featurize(&cfg, &job).unwrap();
        let cube_path = job.stage_path("featurize", "features.fcub");
        let first = std::fs::read(&cube_path).unwrap();
        cmd_featurize(&cfg, &job).unwrap();
        assert_eq!(std::fs::read(&cube_path).unwrap(), first);
    }
}
