//! Shipping checks for the whole pipeline, one test per criterion.
//!
//! Each test prints `criterion N: pass` once its assertions hold, so a full
//! run of this target reads as a checklist. The heavyweight criteria (bulk
//! density, the throughput floor, and the end-to-end binary run) share a
//! mutex so their wall-clock budgets are not distorted by each other.

use lidarsphere::cloud::{
    save_ply, AdaptiveRadius, PlyEncoding, Point3, PointCloud, ScanMeta, SpatialIndex,
};
use lidarsphere::ensemble::{
    cross_entropy_loss, dice_loss, dice_loss_multi, uncertainty, LogitStack,
};
use lidarsphere::eval::{auprc, confusion, metrics, pr_curve};
use lidarsphere::features::{eigen_descriptors, merge_tiles, tile, EigenFeatures, FeatureCube};
use lidarsphere::projection::{
    back_project, density_map, project, rasterize_labels, virtual_sphere, VirtualSphereSpec,
};
use lidarsphere::refine::{core_set, knn_smooth, refine_labels, RefinementConfig};
use lidarsphere::synth::{
    beam_grid_scan, boundary_noise_scene, layered_scan, random_shell_scan, BeamSample,
};
use lidarsphere::{GridSpecD, LabelMask};
use lidarsphere_cli::config::PipelineConfig;
use lidarsphere_cli::pipeline::featurize_cube;
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};
use tempfile::tempdir;

static HEAVY: Mutex<()> = Mutex::new(());

/// Serializes the tests with wall-clock budgets; a poisoned lock only means
/// an earlier heavy test failed, which must not mask this one.
fn heavy_guard() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn cbl_grid() -> GridSpecD {
    GridSpecD::from_degrees((0.0, 135.0), (0.0, 360.0), 0.25).unwrap()
}

#[test]
fn criterion_01_grid_constant() {
    let start = Instant::now();
    let grid = cbl_grid();
    assert_eq!((grid.height, grid.width), (540, 1440));
    let from_config = PipelineConfig::default().grid.to_grid().unwrap();
    assert_eq!((from_config.height, from_config.width), (540, 1440));
    assert!(
        start.elapsed() < Duration::from_secs(1),
        "grid construction took {:?}",
        start.elapsed()
    );
    println!("criterion 1: pass");
}

#[test]
fn criterion_02_beam_aligned_density() {
    let _guard = heavy_guard();
    let start = Instant::now();
    let grid = cbl_grid();
    let cloud = beam_grid_scan(&grid, "beam-aligned", |_, _, _, _| BeamSample {
        range: 12.0,
        intensity: None,
        label: None,
    });
    assert_eq!(cloud.len(), 777_600);
    let index = project(&cloud, &grid).unwrap();
    let density = density_map(&index);
    assert_eq!(density.mode(), 1);
    assert_eq!(density.histogram.get(1).copied().unwrap_or(0), 777_600);
    let crowded: u64 = density.histogram.iter().skip(2).sum();
    assert_eq!(crowded, 0, "no pixel may hold more than one point");
    assert!(density.counts.iter().all(|&c| c <= 1));
    assert!(
        start.elapsed() < Duration::from_secs(10),
        "density run took {:?}",
        start.elapsed()
    );
    println!("criterion 2: pass");
}

#[test]
fn criterion_03_virtual_sphere_counts() {
    let grid = cbl_grid();
    let map = Array3::<u8>::zeros((grid.height, grid.width, 3));
    let start = Instant::now();
    let spec = VirtualSphereSpec {
        radius: 1.0,
        res_deg: 1.0,
        zenith_span_deg: (0.0, 135.0),
        azimuth_span_deg: (0.0, 360.0),
    };
    let sphere = virtual_sphere(&map, &grid, &spec).unwrap();
    assert_eq!(sphere.len(), 48_600);
    assert!(
        start.elapsed() < Duration::from_secs(5),
        "1-degree sphere took {:?}",
        start.elapsed()
    );

    let ring = GridSpecD::from_degrees((0.0, 91.0), (0.0, 360.0), 0.25).unwrap();
    let map = Array3::<u8>::zeros((ring.height, ring.width, 3));
    let start = Instant::now();
    let spec = VirtualSphereSpec {
        radius: 2.0,
        res_deg: 0.2,
        zenith_span_deg: (0.0, 91.0),
        azimuth_span_deg: (0.0, 360.0),
    };
    let sphere = virtual_sphere(&map, &ring, &spec).unwrap();
    assert_eq!(sphere.len(), 819_000);
    assert!(
        start.elapsed() < Duration::from_secs(5),
        "0.2-degree ring took {:?}",
        start.elapsed()
    );
    println!("criterion 3: pass");
}

/// Runs the full descriptor pipeline (spatial index, adaptive radius,
/// covariance, eigendecomposition) on one explicit neighborhood. The first
/// point is the query; the clamped radius pulls in every other point.
fn descriptor_of(points: &[[f64; 3]]) -> EigenFeatures<f64> {
    let mut cloud = PointCloud::new(ScanMeta::new("neighborhood"));
    for p in points {
        cloud.push(Point3 {
            x: p[0],
            y: p[1],
            z: p[2],
            intensity: None,
            label: None,
        });
    }
    let index = SpatialIndex::build(cloud.positions());
    let radius = AdaptiveRadius {
        lambda: 1.0,
        k_ref: 1,
        r_min: 1.0e6,
        r_max: 1.0e6,
    };
    eigen_descriptors(&cloud, &index, &radius).unwrap()[0].clone()
}

/// Independent eigenvalue oracle: greedy Jacobi rotations on the symmetric
/// 3x3 matrix until the off-diagonal is annihilated. Returns ascending
/// eigenvalues.
fn jacobi_eigenvalues(mut a: [[f64; 3]; 3]) -> [f64; 3] {
    for _ in 0..200 {
        let mut p = 0;
        let mut q = 1;
        let mut mag = a[0][1].abs();
        for (i, j) in [(0usize, 2usize), (1, 2)] {
            if a[i][j].abs() > mag {
                mag = a[i][j].abs();
                p = i;
                q = j;
            }
        }
        if mag == 0.0 {
            break;
        }
        let apq = a[p][q];
        let theta = 0.5 * (a[q][q] - a[p][p]) / apq;
        let t = if theta >= 0.0 {
            1.0 / (theta + (theta * theta + 1.0).sqrt())
        } else {
            -1.0 / (-theta + (theta * theta + 1.0).sqrt())
        };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        let r = 3 - p - q;
        let arp = a[r][p];
        let arq = a[r][q];
        a[p][p] -= t * apq;
        a[q][q] += t * apq;
        a[p][q] = 0.0;
        a[q][p] = 0.0;
        a[r][p] = c * arp - s * arq;
        a[p][r] = a[r][p];
        a[r][q] = s * arp + c * arq;
        a[q][r] = a[r][q];
    }
    let mut ev = [a[0][0], a[1][1], a[2][2]];
    ev.sort_by(f64::total_cmp);
    ev
}

/// Brute-force descriptor: sample covariance of the whole neighborhood
/// (query included, n-1 denominator) fed through the Jacobi oracle.
fn oracle_descriptor(points: &[[f64; 3]]) -> ([f64; 3], f64, f64, f64) {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for d in 0..3 {
            mean[d] += p[d];
        }
    }
    for d in 0..3 {
        mean[d] /= n;
    }
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    for r in 0..3 {
        for c in 0..3 {
            cov[r][c] /= n - 1.0;
        }
    }
    let ev = jacobi_eigenvalues(cov);
    let sum = ev[0] + ev[1] + ev[2];
    let kappa = (ev[0] / sum).clamp(0.0, 1.0).min(1.0 / 3.0);
    let anisotropy = (ev[2] - ev[1]) / ev[2];
    let planarity = (ev[1] - ev[0]) / ev[2];
    (ev, kappa, anisotropy, planarity)
}

#[test]
fn criterion_04_descriptor_limits_and_eigen_oracle() {
    let tol = 1e-9;
    let c = [0.0, 0.0, 5.0];

    let mut line = vec![c];
    for k in [-2.0, -1.0, 1.0, 2.0] {
        line.push([c[0] + 0.1 * k, c[1], c[2]]);
    }
    let f = descriptor_of(&line);
    assert!(f.curvature.abs() < tol, "line curvature {}", f.curvature);
    assert!((f.anisotropy - 1.0).abs() < tol, "line anisotropy {}", f.anisotropy);
    assert!(f.planarity.abs() < tol, "line planarity {}", f.planarity);

    let plane = vec![
        c,
        [c[0] + 1.0, c[1], c[2]],
        [c[0] - 1.0, c[1], c[2]],
        [c[0], c[1] + 1.0, c[2]],
        [c[0], c[1] - 1.0, c[2]],
    ];
    let f = descriptor_of(&plane);
    assert!(f.curvature.abs() < tol, "plane curvature {}", f.curvature);
    assert!(f.anisotropy.abs() < tol, "plane anisotropy {}", f.anisotropy);
    assert!((f.planarity - 1.0).abs() < tol, "plane planarity {}", f.planarity);
    // the normal of a horizontal patch above the scanner points back down
    assert!((f.normal[2] + 1.0).abs() < tol, "plane normal {:?}", f.normal);

    let mut ball = vec![c];
    for d in 0..3 {
        for sign in [-1.0, 1.0] {
            let mut p = c;
            p[d] += sign;
            ball.push(p);
        }
    }
    let f = descriptor_of(&ball);
    assert!((f.curvature - 1.0 / 3.0).abs() < tol, "ball curvature {}", f.curvature);
    assert!(f.anisotropy.abs() < tol, "ball anisotropy {}", f.anisotropy);
    assert!(f.planarity.abs() < tol, "ball planarity {}", f.planarity);

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..1000 {
        let centre = [
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(2.0..8.0),
        ];
        let mut points = vec![centre];
        for _ in 0..rng.random_range(10..40) {
            points.push([
                centre[0] + rng.random_range(-0.5..0.5),
                centre[1] + rng.random_range(-0.5..0.5),
                centre[2] + rng.random_range(-0.5..0.5),
            ]);
        }
        let f = descriptor_of(&points);
        let (ev, kappa, anisotropy, planarity) = oracle_descriptor(&points);
        for d in 0..3 {
            assert!(
                (f.eigenvalues[d] - ev[d]).abs() < tol,
                "case {case}: eigenvalue {d}: {} vs oracle {}",
                f.eigenvalues[d],
                ev[d]
            );
        }
        assert!((f.curvature - kappa).abs() < tol, "case {case} curvature");
        assert!((f.anisotropy - anisotropy).abs() < tol, "case {case} anisotropy");
        assert!((f.planarity - planarity).abs() < tol, "case {case} planarity");
    }
    println!("criterion 4: pass");
}

#[test]
fn criterion_05_uncertainty_identities() {
    let tol = 1e-9;

    // identical members carry no disagreement
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let member = Array3::<f64>::from_shape_fn((3, 6, 7), |_| rng.random_range(-4.0..4.0));
    let data = Array4::from_shape_fn((4, 3, 6, 7), |(_, c, i, j)| member[(c, i, j)]);
    let maps = uncertainty(&LogitStack::new(data).unwrap());
    for &e in maps.epistemic.iter() {
        assert!((0.0..tol).contains(&e), "epistemic {e} for identical members");
    }

    // two opposed certain members: pure disagreement
    let data = Array4::from_shape_fn(
        (2, 2, 5, 4),
        |(m, c, _, _)| if m == c { 50.0 } else { -50.0 },
    );
    let maps = uncertainty(&LogitStack::new(data).unwrap());
    let ln2 = std::f64::consts::LN_2;
    for ((t, e), ep) in maps
        .total
        .iter()
        .zip(maps.expected.iter())
        .zip(maps.epistemic.iter())
    {
        assert!((t - ln2).abs() < tol, "total {t} vs ln 2");
        assert!(e.abs() < tol, "expected {e} vs 0");
        assert!((ep - ln2).abs() < tol, "epistemic {ep} vs ln 2");
    }

    // uniform six-way logits peg the total at ln 6
    let maps = uncertainty(&LogitStack::new(Array4::<f64>::zeros((3, 6, 4, 4))).unwrap());
    let ln6 = 6.0f64.ln();
    for (t, ep) in maps.total.iter().zip(maps.epistemic.iter()) {
        assert!((t - ln6).abs() < tol, "total {t} vs ln 6");
        assert!(ep.abs() < tol, "epistemic {ep} vs 0");
    }
    println!("criterion 5: pass");
}

struct OracleMetrics {
    overall: f64,
    mean_recall: f64,
    recalls: Vec<Option<f64>>,
    ious: Vec<Option<f64>>,
    mean_iou: f64,
    total: u64,
}

/// Recomputes every metric from the raw label pairs with plain loops.
fn oracle_metrics(gt: &[u8], pred: &[u8], num_classes: usize, exclude: &[u8]) -> OracleMetrics {
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&g, &p) in gt.iter().zip(pred) {
        if !exclude.contains(&g) {
            counts[g as usize][p as usize] += 1;
        }
    }
    let total: u64 = counts.iter().flatten().sum();
    let mut trace = 0u64;
    let mut recalls = Vec::new();
    let mut ious = Vec::new();
    for k in 0..num_classes {
        let tp = counts[k][k];
        trace += tp;
        let gt_k: u64 = counts[k].iter().sum();
        let pred_k: u64 = (0..num_classes).map(|g| counts[g][k]).sum();
        recalls.push((gt_k > 0).then(|| tp as f64 / gt_k as f64));
        let union = gt_k + pred_k - tp;
        ious.push((union > 0).then(|| tp as f64 / union as f64));
    }
    let mean = |v: &[Option<f64>]| {
        let defined: Vec<f64> = v.iter().flatten().copied().collect();
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let mean_recall = mean(&recalls);
    let mean_iou = mean(&ious);
    OracleMetrics {
        overall: trace as f64 / total as f64,
        mean_recall,
        recalls,
        ious,
        mean_iou,
        total,
    }
}

struct OraclePr {
    thresholds: Vec<f64>,
    precisions: Vec<f64>,
    recalls: Vec<f64>,
    auprc: f64,
}

/// Recomputes the PR sweep by testing every unique score as a threshold.
fn oracle_pr(scores: &[f64], errors: &[bool]) -> OraclePr {
    let mut unique: Vec<f64> = scores.to_vec();
    unique.sort_by(|a, b| b.total_cmp(a));
    unique.dedup();
    let positives = errors.iter().filter(|&&e| e).count() as f64;
    let mut thresholds = vec![f64::INFINITY];
    let mut precisions = vec![f64::NAN]; // patched to the first real point below
    let mut recalls = vec![0.0];
    for &t in &unique {
        let mut hit = 0u64;
        let mut tp = 0u64;
        for (&s, &e) in scores.iter().zip(errors) {
            if s >= t {
                hit += 1;
                if e {
                    tp += 1;
                }
            }
        }
        thresholds.push(t);
        precisions.push(tp as f64 / hit as f64);
        recalls.push(tp as f64 / positives);
    }
    precisions[0] = precisions[1];
    let mut area = 0.0;
    for j in 0..thresholds.len() - 1 {
        area += (recalls[j + 1] - recalls[j]) * precisions[j + 1];
    }
    OraclePr {
        thresholds,
        precisions,
        recalls,
        auprc: area,
    }
}

#[test]
fn criterion_06_metric_and_pr_oracles() {
    let tol = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..100 {
        let num_classes = rng.random_range(2..8usize);
        let (h, w) = (rng.random_range(3..10), rng.random_range(3..10));
        let gt = LabelMask::from_shape_fn((h, w), |_| rng.random_range(0..num_classes) as u8);
        let pred = LabelMask::from_shape_fn((h, w), |_| rng.random_range(0..num_classes) as u8);
        let exclude: Vec<u8> = match case % 3 {
            0 => vec![],
            1 => vec![0],
            _ => vec![rng.random_range(0..num_classes) as u8],
        };
        let gt_flat: Vec<u8> = gt.iter().copied().collect();
        let pred_flat: Vec<u8> = pred.iter().copied().collect();
        let oracle = oracle_metrics(&gt_flat, &pred_flat, num_classes, &exclude);
        let cm = confusion(&gt, &pred, num_classes, &exclude).unwrap();
        if oracle.total == 0 {
            assert!(metrics(&cm).is_err());
            continue;
        }
        let m = metrics(&cm).unwrap();
        assert!((m.overall_accuracy - oracle.overall).abs() < tol, "case {case}");
        assert!((m.mean_accuracy - oracle.mean_recall).abs() < tol, "case {case}");
        assert!((m.mean_iou - oracle.mean_iou).abs() < tol, "case {case}");
        for k in 0..num_classes {
            match (m.per_class_recall[k], oracle.recalls[k]) {
                (Some(a), Some(b)) => assert!((a - b).abs() < tol, "case {case} recall {k}"),
                (None, None) => {}
                other => panic!("case {case} recall {k} definedness differs: {other:?}"),
            }
            match (m.per_class_iou[k], oracle.ious[k]) {
                (Some(a), Some(b)) => assert!((a - b).abs() < tol, "case {case} iou {k}"),
                (None, None) => {}
                other => panic!("case {case} iou {k} definedness differs: {other:?}"),
            }
        }

        // precision-recall sweep with deliberate score ties on odd cases
        let n = rng.random_range(5..60usize);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if case % 2 == 1 {
                    f64::from(rng.random_range(0..5u8)) / 4.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let mut errors: Vec<bool> = (0..n).map(|_| rng.random_range(0.0..1.0) < 0.3).collect();
        if !errors.iter().any(|&e| e) {
            errors[n / 2] = true;
        }
        let score_row = Array2::from_shape_vec((1, n), scores.clone()).unwrap();
        let error_row = Array2::from_shape_vec((1, n), errors.clone()).unwrap();
        let curve = pr_curve(&score_row, &error_row).unwrap();
        let oracle = oracle_pr(&scores, &errors);
        assert_eq!(curve.points.len(), oracle.thresholds.len(), "case {case}");
        for (j, point) in curve.points.iter().enumerate() {
            if j > 0 {
                assert_eq!(point.threshold, oracle.thresholds[j], "case {case} point {j}");
            }
            assert!((point.precision - oracle.precisions[j]).abs() < tol, "case {case}");
            assert!((point.recall - oracle.recalls[j]).abs() < tol, "case {case}");
        }
        assert!(
            (auprc(&curve).unwrap() - oracle.auprc).abs() < tol,
            "case {case}: auprc {} vs oracle {}",
            auprc(&curve).unwrap(),
            oracle.auprc
        );
    }

    // a perfect ranking closes the curve at exactly 1.0
    let scores: Vec<f64> = vec![0.9, 0.8, 0.7, 0.2, 0.1, 0.0];
    let errors = vec![true, true, true, false, false, false];
    let curve = pr_curve(
        &Array2::from_shape_vec((1, 6), scores).unwrap(),
        &Array2::from_shape_vec((1, 6), errors).unwrap(),
    )
    .unwrap();
    assert_eq!(auprc(&curve).unwrap(), 1.0);
    println!("criterion 6: pass");
}

#[test]
fn criterion_07_loss_identities() {
    // exact one-hot prediction: both losses vanish
    let gt = LabelMask::from_shape_fn((3, 4), |(i, j)| ((i + j) % 3) as u8);
    let pred = Array3::<f64>::from_shape_fn((3, 3, 4), |(c, i, j)| {
        if gt[(i, j)] as usize == c {
            1.0
        } else {
            0.0
        }
    });
    assert!(dice_loss_multi(&pred, &gt).unwrap().abs() < 1e-12);
    assert!(cross_entropy_loss(&pred, &gt).unwrap().abs() < 1e-12);

    // the binary textbook case: prediction {1,1,0,0} against truth {1,0,0,0}
    let pred = Array2::from_shape_vec((1, 4), vec![1.0f64, 1.0, 0.0, 0.0]).unwrap();
    let gt = Array2::from_shape_vec((1, 4), vec![true, false, false, false]).unwrap();
    let dice = dice_loss(&pred, &gt).unwrap();
    assert!(
        (dice - 1.0 / 3.0).abs() < 1e-12,
        "dice {dice} vs 1/3"
    );
    println!("criterion 7: pass");
}

#[test]
fn criterion_08_refinement_contract() {
    let start = Instant::now();
    let (cloud, gt) = boundary_noise_scene::<f64>(80, 80, 0.05, 0.05, 8);
    let noisy = cloud.labels().unwrap().to_vec();
    let errors_before = noisy.iter().zip(&gt).filter(|(a, b)| a != b).count();
    assert!(errors_before > 0, "the scene must start with label noise");

    let config = RefinementConfig::<f64>::default();
    assert_eq!(config.tau, 0.8);
    let (refined, report) = refine_labels(&cloud, &config).unwrap();
    let errors_after = refined.iter().zip(&gt).filter(|(a, b)| a != b).count();
    assert!(
        errors_after < errors_before,
        "refinement must strictly reduce errors: {errors_before} -> {errors_after}"
    );

    // points whose vote agrees with their label are never touched
    let index = SpatialIndex::build(cloud.positions());
    let smoothed = knn_smooth(&cloud, &index, config.k_vote).unwrap();
    let core = core_set(&noisy, &smoothed).unwrap();
    assert_eq!(report.core_size, core.len());
    for &i in &core {
        assert_eq!(
            refined[i as usize], noisy[i as usize],
            "core point {i} must keep its label"
        );
    }

    let (again, report_again) = refine_labels(&cloud, &config).unwrap();
    assert_eq!(refined, again, "refinement must be bit-reproducible");
    assert_eq!(report, report_again);
    assert!(
        start.elapsed() < Duration::from_secs(60),
        "refinement contract took {:?}",
        start.elapsed()
    );
    println!("criterion 8: pass");
}

#[test]
fn criterion_09_label_round_trip_and_tiling_identity() {
    // one point per pixel: labels survive the 2-D round trip untouched
    let grid = GridSpecD::from_degrees((0.0, 135.0), (0.0, 360.0), 2.5).unwrap();
    let cloud = layered_scan::<f64>(&grid, "round-trip", 9);
    let index = project(&cloud, &grid).unwrap();
    let labels = cloud.labels().unwrap();
    let mask = rasterize_labels(&index, labels).unwrap();
    let recovered = back_project(&index, &mask).unwrap();
    assert_eq!(recovered.as_slice(), labels, "all labels must survive");

    // tiling splits and reassembles arbitrary cubes without loss
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    for (n_tiles, buffer) in [(1, 4), (2, 8), (3, 16), (5, 32), (4, 1)] {
        let (c, h, w) = (4, rng.random_range(10..40), rng.random_range(64..128));
        let names = (0..c).map(|k| format!("ch{k}")).collect();
        let data = Array3::from_shape_fn((c, h, w), |_| rng.random_range(-10.0..10.0));
        let valid = Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0) < 0.8);
        let cube = FeatureCube::new(names, data, valid).unwrap();
        let set = tile(&cube, n_tiles, buffer).unwrap();
        let merged = merge_tiles(&set).unwrap();
        assert_eq!(merged.data(), cube.data(), "{n_tiles} tiles, buffer {buffer}");
        assert_eq!(merged.valid(), cube.valid());
        assert_eq!(merged.names(), cube.names());
    }
    println!("criterion 9: pass");
}

fn peak_memory_kb() -> u64 {
    let status = std::fs::read_to_string("/proc/self/status").unwrap();
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            return rest
                .trim()
                .trim_end_matches("kB")
                .trim()
                .parse()
                .unwrap();
        }
    }
    panic!("VmHWM not reported");
}

#[test]
fn criterion_10_throughput_floor() {
    let _guard = heavy_guard();
    let cfg = PipelineConfig::default();
    let grid = cfg.grid.to_grid().unwrap();
    let cloud = random_shell_scan::<f64>(1_000_000, &grid, "bulk", 10);
    let start = Instant::now();
    let index = project(&cloud, &grid).unwrap();
    let cube = featurize_cube(&cfg, &cloud, &index).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(cube.num_channels(), 9);
    assert_eq!(
        cube.names(),
        [
            "intensity",
            "range",
            "z_inv",
            "normal_r",
            "normal_g",
            "normal_b",
            "curvature",
            "anisotropy",
            "planarity"
        ]
    );
    assert!(
        elapsed < Duration::from_secs(120),
        "project + featurize took {elapsed:?} for 1M points"
    );
    let peak = peak_memory_kb();
    assert!(
        peak < 4 * 1024 * 1024,
        "peak memory {peak} kB exceeds the 4 GB budget"
    );
    println!("criterion 10: pass");
}

#[test]
fn criterion_11_end_to_end_cli() {
    let _guard = heavy_guard();
    let start = Instant::now();
    let dir = tempdir().unwrap();
    let input = dir.path().join("scans");
    std::fs::create_dir(&input).unwrap();
    let grid = GridSpecD::from_degrees((0.0, 90.0), (0.0, 360.0), 1.5).unwrap();
    for (k, name) in ["plot_a", "plot_b", "plot_c"].iter().enumerate() {
        let cloud = layered_scan::<f64>(&grid, name, 21 + k as u64);
        save_ply(
            &cloud,
            &input.join(format!("{name}.ply")),
            PlyEncoding::BinaryLittleEndian,
        )
        .unwrap();
    }
    let out = dir.path().join("out");
    let config = serde_json::json!({
        "version": 1,
        "grid": {
            "zenith_deg": [0.0, 90.0],
            "azimuth_deg": [0.0, 360.0],
            "resolution_deg": 1.5
        },
        "ensemble": {"members": 3, "seed": 7, "trees": 30, "max_depth": 16},
        "io": {
            "input": input.to_str().unwrap(),
            "output": out.to_str().unwrap()
        }
    });
    let config_path = dir.path().join("pipeline.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let run = |args: &[&str]| {
        let output = std::process::Command::new(env!("CARGO_BIN_EXE_lidarsphere"))
            .args(args)
            .arg("--config")
            .arg(&config_path)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "`lidarsphere {}` failed:\nstdout: {}\nstderr: {}",
            args.join(" "),
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        );
    };
    run(&["project"]);
    run(&["featurize"]);
    run(&["fuse", "--baseline"]);
    run(&["refine"]);
    run(&["sphere"]);
    run(&["eval"]);

    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("_aggregate").join("eval").join("metrics.json"))
            .unwrap(),
    )
    .unwrap();
    assert_eq!(report["scans"].as_array().unwrap().len(), 3);
    let oacc = report["all"]["overall_accuracy"].as_f64().unwrap();
    assert!(oacc >= 0.95, "aggregate overall accuracy {oacc} below 0.95");
    for scan in ["plot_a", "plot_b", "plot_c"] {
        for artifact in [
            "project/index.pidx",
            "featurize/features.fcub",
            "fuse/pseudo_labels.png",
            "refine/refined.ply",
            "sphere/sphere.ply",
            "eval/metrics.json",
        ] {
            assert!(
                out.join(scan).join(artifact).is_file(),
                "{scan}/{artifact} missing"
            );
        }
    }
    assert!(
        start.elapsed() < Duration::from_secs(300),
        "end-to-end pipeline took {:?}",
        start.elapsed()
    );
    println!("criterion 11: pass");
}
