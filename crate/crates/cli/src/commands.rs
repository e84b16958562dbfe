//! Implementations behind the CLI subcommands, kept binary-free so tests can
//! call them in-process.

use std::fs;
use std::path::{Path, PathBuf};

use geomoe::depthprior::DepthMap;
use geomoe::eval::{
    depth_metrics, icp, normal_metrics, pointmap_metrics, pose_metrics_angular,
    pose_metrics_distance, umeyama, DepthAlignment, IcpParams, MetricReport, PointCloud, Pose,
};
use geomoe::linalg::{Sim3, Vec3};
use geomoe::losses::{grid_normals, NormalMap, PointMap};
use geomoe::synth::{perturb, render, RenderedView, SceneData};

use crate::error::{io_err, load_err, metric_err, CliError};
use crate::gradcheck::{run_gradient_suite, GradCheck};
use crate::scene::{NoiseConfig, SceneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointmapAlign {
    /// Umeyama on pixel correspondences, refined with ICP.
    Sim3Icp,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseMode {
    Angular,
    Distance,
    Both,
}

/// Serializes reports as a JSON array (deterministic, no timestamps) and
/// returns the printable tables.
pub fn write_reports(path: Option<&Path>, reports: &[MetricReport]) -> Result<String, CliError> {
    let mut tables = String::new();
    for r in reports {
        tables.push_str(&r.to_table());
    }
    if let Some(p) = path {
        if let Some(parent) = p.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(io_err)?;
            }
        }
        let json = serde_json::to_string_pretty(reports)
            .map_err(|e| CliError::Io(format!("report serialization: {e}")))?;
        fs::write(p, json).map_err(io_err)?;
    }
    Ok(tables)
}

fn stamp(report: &mut MetricReport) {
    report.set_config("build", crate::BUILD_ID);
}

// ---------------------------------------------------------------------------
// gen-scene
// ---------------------------------------------------------------------------

fn write_view_set(dir: &Path, data: &SceneData) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err)?;
    geomoe::io::save_cameras(&dir.join("cameras.mrtf"), &data.cameras)
        .map_err(|e| CliError::Io(e.to_string()))?;
    for (i, view) in data.views.iter().enumerate() {
        let base = format!("cam_{i:03}");
        geomoe::io::save_depth_map(&dir.join(format!("{base}_depth.mrtf")), &view.depth)
            .map_err(|e| CliError::Io(e.to_string()))?;
        geomoe::io::save_point_map(&dir.join(format!("{base}_points.mrtf")), &view.points)
            .map_err(|e| CliError::Io(e.to_string()))?;
        geomoe::io::save_normal_map(&dir.join(format!("{base}_normals.mrtf")), &view.normals)
            .map_err(|e| CliError::Io(e.to_string()))?;
        // PLY for visual inspection: pixels with both a point and a normal.
        let mut pts = Vec::new();
        let mut nrm = Vec::new();
        for p in 0..view.points.points().len() {
            if view.points.valid()[p] && view.normals.valid()[p] {
                pts.push(view.points.points()[p]);
                nrm.push(view.normals.normals()[p]);
            }
        }
        geomoe::io::write_ply(&dir.join(format!("{base}.ply")), &pts, Some(&nrm))
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Renders every camera of the scene into `out/gt/`; with a noise config,
/// also writes the perturbed copies into `out/pred/` plus the perturbation
/// record.
pub fn cmd_gen_scene(
    scene_path: &Path,
    out_dir: &Path,
    perturb_path: Option<&Path>,
) -> Result<(), CliError> {
    let scene_cfg = SceneConfig::load(scene_path)?;
    let scene = scene_cfg.to_scene()?;
    let views: Vec<RenderedView> = (0..scene.cameras.len())
        .map(|i| render(&scene, i).map_err(metric_err))
        .collect::<Result<_, _>>()?;
    let data = SceneData {
        views,
        cameras: scene.cameras.clone(),
    };
    write_view_set(&out_dir.join("gt"), &data)?;

    if let Some(noise_path) = perturb_path {
        let noise_cfg = NoiseConfig::load(noise_path)?;
        let spec = noise_cfg.to_noise_spec()?;
        let (perturbed, record) = perturb(&data, &spec).map_err(metric_err)?;
        write_view_set(&out_dir.join("pred"), &perturbed)?;
        #[derive(serde::Serialize)]
        struct RecordFile<'a> {
            build: &'a str,
            spec: &'a geomoe::synth::NoiseSpec,
        }
        let json = serde_json::to_string_pretty(&RecordFile {
            build: crate::BUILD_ID,
            spec: &record.spec,
        })
        .map_err(|e| CliError::Io(format!("record serialization: {e}")))?;
        fs::write(out_dir.join("perturb_record.json"), json).map_err(io_err)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval-pointmap
// ---------------------------------------------------------------------------

/// Point cloud with normals from the pixels of a pointmap that carry both a
/// valid point and a valid grid normal, subsampled by `stride`.
fn cloud_from_pointmap(pm: &PointMap, stride: usize) -> (PointCloud, NormalMap) {
    let normals = grid_normals(pm);
    let mut pts = Vec::new();
    let mut nrm = Vec::new();
    for i in (0..pm.height()).step_by(stride) {
        for j in (0..pm.width()).step_by(stride) {
            if pm.valid_at(i, j) && normals.valid_at(i, j) {
                pts.push(pm.at(i, j));
                nrm.push(normals.at(i, j));
            }
        }
    }
    (
        PointCloud::with_normals(pts, nrm).expect("lengths match by construction"),
        normals,
    )
}

pub fn cmd_eval_pointmap(
    pred_path: &Path,
    gt_path: &Path,
    align: PointmapAlign,
    pixel_stride: usize,
    report_path: Option<&Path>,
) -> Result<MetricReport, CliError> {
    if pixel_stride == 0 {
        return Err(CliError::Config("pixel stride must be positive".to_string()));
    }
    let pred_pm = geomoe::io::load_point_map(pred_path).map_err(load_err)?;
    let gt_pm = geomoe::io::load_point_map(gt_path).map_err(load_err)?;
    let (mut pred_cloud, _) = cloud_from_pointmap(&pred_pm, pixel_stride);
    let (gt_cloud, _) = cloud_from_pointmap(&gt_pm, pixel_stride);

    let mut applied = Sim3::identity();
    if align == PointmapAlign::Sim3Icp {
        if !pred_pm.same_shape(&gt_pm) {
            return Err(CliError::Validation(
                "pred/gt pointmap shapes differ".to_string(),
            ));
        }
        // Coarse alignment from per-pixel correspondences.
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for p in 0..pred_pm.points().len() {
            if pred_pm.valid()[p] && gt_pm.valid()[p] {
                src.push(pred_pm.points()[p]);
                dst.push(gt_pm.points()[p]);
            }
        }
        let coarse = umeyama(&src, &dst, true).map_err(metric_err)?;
        let refined = icp(
            &pred_cloud.points,
            &gt_cloud.points,
            &coarse,
            IcpParams::default(),
        )
        .map_err(metric_err)?;
        applied = refined.transform;
        pred_cloud = pred_cloud.transformed(&applied);
    }

    let mut report = pointmap_metrics(&pred_cloud, &gt_cloud).map_err(metric_err)?;
    report.set_config(
        "align",
        match align {
            PointmapAlign::Sim3Icp => "sim3-icp",
            PointmapAlign::None => "none",
        },
    );
    report.set_config("pixel_stride", &pixel_stride.to_string());
    report.set_config("applied_scale", &format!("{}", applied.scale));
    stamp(&mut report);
    write_reports(report_path, std::slice::from_ref(&report)).map(|t| print!("{t}"))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// eval-depth
// ---------------------------------------------------------------------------

pub fn parse_depth_alignment(s: &str) -> Result<DepthAlignment, CliError> {
    match s {
        "median-scale" => Ok(DepthAlignment::MedianScale),
        "none" => Ok(DepthAlignment::None),
        other => Err(CliError::Config(format!(
            "unknown depth alignment {other:?}, expected \"median-scale\" or \"none\""
        ))),
    }
}

pub fn cmd_eval_depth(
    pred_path: &Path,
    gt_path: &Path,
    alignment: DepthAlignment,
    report_path: Option<&Path>,
) -> Result<MetricReport, CliError> {
    let pred: DepthMap = geomoe::io::load_depth_map(pred_path).map_err(load_err)?;
    let gt: DepthMap = geomoe::io::load_depth_map(gt_path).map_err(load_err)?;
    let mut report = depth_metrics(&pred, &gt, alignment).map_err(metric_err)?;
    stamp(&mut report);
    write_reports(report_path, std::slice::from_ref(&report)).map(|t| print!("{t}"))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// eval-pose
// ---------------------------------------------------------------------------

fn load_trajectory(path: &Path, keyframe_stride: usize) -> Result<Vec<Pose>, CliError> {
    let cams = geomoe::io::load_cameras(path).map_err(load_err)?;
    Ok(cams
        .iter()
        .step_by(keyframe_stride)
        .map(|c| c.pose())
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval_pose(
    pred_path: &Path,
    gt_path: &Path,
    mode: PoseMode,
    max_threshold_deg: u32,
    rpe_stride: usize,
    keyframe_stride: usize,
    report_path: Option<&Path>,
) -> Result<Vec<MetricReport>, CliError> {
    if keyframe_stride == 0 {
        return Err(CliError::Config("keyframe stride must be positive".to_string()));
    }
    let pred = load_trajectory(pred_path, keyframe_stride)?;
    let gt = load_trajectory(gt_path, keyframe_stride)?;
    let mut reports = Vec::new();
    if mode == PoseMode::Angular || mode == PoseMode::Both {
        let mut r = pose_metrics_angular(&pred, &gt, max_threshold_deg).map_err(metric_err)?;
        r.set_config("keyframe_stride", &keyframe_stride.to_string());
        stamp(&mut r);
        reports.push(r);
    }
    if mode == PoseMode::Distance || mode == PoseMode::Both {
        let mut r = pose_metrics_distance(&pred, &gt, rpe_stride).map_err(metric_err)?;
        r.set_config("keyframe_stride", &keyframe_stride.to_string());
        stamp(&mut r);
        reports.push(r);
    }
    write_reports(report_path, &reports).map(|t| print!("{t}"))?;
    Ok(reports)
}

// ---------------------------------------------------------------------------
// eval-normal
// ---------------------------------------------------------------------------

pub fn cmd_eval_normal(
    pred_path: &Path,
    gt_path: &Path,
    report_path: Option<&Path>,
) -> Result<MetricReport, CliError> {
    let pred: NormalMap = geomoe::io::load_normal_map(pred_path).map_err(load_err)?;
    let gt: NormalMap = geomoe::io::load_normal_map(gt_path).map_err(load_err)?;
    let mut report = normal_metrics(&pred, &gt).map_err(metric_err)?;
    stamp(&mut report);
    write_reports(report_path, std::slice::from_ref(&report)).map(|t| print!("{t}"))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// check-grad
// ---------------------------------------------------------------------------

/// Runs the finite-difference suite and prints one line per comparison.
/// Returns the checks; the caller decides the exit code.
pub fn cmd_check_grad(seed: u64, instances: usize) -> Vec<GradCheck> {
    let checks = run_gradient_suite(seed, instances);
    for c in &checks {
        println!(
            "GRADCHECK {} seed={} params={} max_rel_err={:.3e} {}",
            c.name,
            c.seed,
            c.parameters,
            c.max_rel_err,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!(
        "GRADCHECK SUMMARY {}/{} comparisons passed",
        checks.len() - failed,
        checks.len()
    );
    checks
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Pretty-prints stored reports (a JSON array or a single report per file).
pub fn cmd_report(paths: &[PathBuf]) -> Result<String, CliError> {
    let mut out = String::new();
    for path in paths {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let reports: Vec<MetricReport> = match serde_json::from_str::<Vec<MetricReport>>(&text) {
            Ok(v) => v,
            Err(_) => vec![MetricReport::from_json(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?],
        };
        for r in &reports {
            out.push_str(&r.to_table());
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// shared helpers for tests
// ---------------------------------------------------------------------------

/// Merged cloud across views of a generated set, used by tests that evaluate
/// a whole directory.
pub fn merged_cloud(dir: &Path, views: usize) -> Result<Vec<Vec3>, CliError> {
    let mut pts = Vec::new();
    for i in 0..views {
        let pm = geomoe::io::load_point_map(&dir.join(format!("cam_{i:03}_points.mrtf")))
            .map_err(load_err)?;
        for p in 0..pm.points().len() {
            if pm.valid()[p] {
                pts.push(pm.points()[p]);
            }
        }
    }
    Ok(pts)
}
