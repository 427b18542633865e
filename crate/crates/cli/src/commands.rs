//! Stage implementations behind the subcommands. Every stage reads its
//! inputs from disk and writes its artifacts back, so `pipeline` is
//! byte-identical to running the stages one by one.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use radalign::dataset_io::{read_dataset, write_dataset};
use radalign::eval::{lateral_errors, mean_map_entropy, pose_rmse, LateralRoi};
use radalign::fleet::{generate_fleet, ClassifiedPolyline, FleetDataset};
use radalign::mapgen::{
    aggregate, histogram_in_frame, occupancy_from_histogram, write_cloud_csv, write_raster,
    GlobalCloud, PoseTable,
};
use radalign::pipeline::{
    align, make_pool, read_aligned_csv, read_edges_csv, solve_from_edges, write_aligned_csv,
    write_edges_csv,
};
use radalign::sampling::write_pairs_csv;
use radalign::{Error, Result};

use crate::config::PipelineConfig;

fn require_file(path: &Path, hint: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::InvalidInput(format!(
            "missing {hint}: '{}' (run the earlier stage first)",
            path.display()
        )));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn cmd_generate(config: &PipelineConfig) -> Result<()> {
    let dataset = generate_fleet(&config.scene_spec(), &config.drive_specs(), config.seed)?;
    write_dataset(&dataset, &config.paths.dataset_dir)?;
    eprintln!(
        "generated {} drives, {} poses -> {}",
        dataset.drives.len(),
        dataset.pose_count(),
        config.paths.dataset_dir.display()
    );
    Ok(())
}

pub fn cmd_align(config: &PipelineConfig, resume: bool) -> Result<()> {
    require_file(&config.paths.dataset_dir.join("scene.json"), "dataset")?;
    let dataset = read_dataset(&config.paths.dataset_dir)?;
    let artifacts = &config.paths.artifacts_dir;
    fs::create_dir_all(artifacts)?;
    let params = config.align_params();
    let edges_path = artifacts.join("edges.csv");

    let (edges, outcome, aligned) = if resume && edges_path.exists() {
        let reader = std::io::BufReader::new(fs::File::open(&edges_path)?);
        let edges = read_edges_csv(reader, &dataset)?;
        eprintln!("resuming from {} ({} edges)", edges_path.display(), edges.len());
        let (outcome, aligned) = solve_from_edges(&dataset, &edges, &params.solver)?;
        (edges, outcome, aligned)
    } else {
        let pool = make_pool(config.workers)?;
        let out = align(&dataset, &params, &pool)?;
        let mut pw = create(&artifacts.join("pairs.csv"))?;
        write_pairs_csv(&mut pw, &dataset, &out.pairs)?;
        pw.flush()?;
        let mut w = create(&edges_path)?;
        write_edges_csv(&mut w, &dataset, &out.edges)?;
        w.flush()?;
        (out.edges, out.outcome, out.aligned)
    };

    let mut w = create(&artifacts.join("aligned_poses.csv"))?;
    write_aligned_csv(&mut w, &dataset, &aligned)?;
    w.flush()?;

    let report_json = serde_json::to_string_pretty(&outcome.report)
        .map_err(|e| Error::InvalidInput(format!("report serialization: {e}")))?;
    fs::write(artifacts.join("optimization_report.json"), report_json + "\n")?;

    eprintln!(
        "aligned {} poses with {} edges: chi2 {:.3} -> {:.3}, converged = {}",
        dataset.pose_count(),
        edges.len(),
        outcome.report.chi2_initial,
        outcome.report.chi2_final,
        outcome.report.converged
    );
    Ok(())
}

pub fn cmd_map(config: &PipelineConfig) -> Result<()> {
    require_file(&config.paths.dataset_dir.join("scene.json"), "dataset")?;
    let artifacts = &config.paths.artifacts_dir;
    let aligned_path = artifacts.join("aligned_poses.csv");
    require_file(&aligned_path, "aligned poses")?;
    let dataset = read_dataset(&config.paths.dataset_dir)?;
    if dataset.pose_count() == 0 {
        return Err(Error::InvalidInput("dataset has no poses".into()));
    }
    let reader = std::io::BufReader::new(fs::File::open(&aligned_path)?);
    let aligned = read_aligned_csv(reader, &dataset)?;

    let cloud_aligned = aggregate(&dataset, &aligned)?;
    let cloud_unaligned = aggregate(&dataset, &PoseTable::from_noisy(&dataset))?;

    // One frame for both rasters so they compare pixelwise.
    let params = config.occupancy_params();
    let frame = union_frame(&cloud_aligned, &cloud_unaligned, params.cell_size);
    let hist_aligned = histogram_in_frame(&cloud_aligned, &frame);
    let hist_unaligned = histogram_in_frame(&cloud_unaligned, &frame);
    write_raster(
        &occupancy_from_histogram(&hist_aligned, &params),
        &artifacts.join("occupancy_aligned"),
    )?;
    write_raster(
        &occupancy_from_histogram(&hist_unaligned, &params),
        &artifacts.join("occupancy_unaligned"),
    )?;

    if config.occupancy.dump_cloud {
        let mut w = create(&artifacts.join("global_cloud.csv"))?;
        write_cloud_csv(&mut w, &dataset, &cloud_aligned)?;
        w.flush()?;
    }

    eprintln!(
        "rendered {}x{} occupancy rasters -> {}",
        frame.nx,
        frame.ny,
        artifacts.display()
    );
    Ok(())
}

fn union_frame(
    a: &GlobalCloud,
    b: &GlobalCloud,
    cell_size: f64,
) -> radalign::correlation::GridFrame {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in a.points.iter().chain(b.points.iter()) {
        for k in 0..2 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    radalign::correlation::GridFrame::covering(min, max, cell_size, cell_size)
}

#[derive(Serialize)]
struct MetricsReport {
    schema_version: u32,
    mme_aligned: f64,
    mme_unaligned: f64,
    pose_rmse: RmsePair,
    pose_rmse_unaligned: RmsePair,
    lateral: radalign::eval::LateralErrorReport,
}

#[derive(Serialize)]
struct RmsePair {
    trans: f64,
    rot: f64,
}

pub fn cmd_eval(config: &PipelineConfig) -> Result<()> {
    require_file(&config.paths.dataset_dir.join("scene.json"), "dataset")?;
    let artifacts = &config.paths.artifacts_dir;
    let aligned_path = artifacts.join("aligned_poses.csv");
    require_file(&aligned_path, "aligned poses")?;
    let dataset = read_dataset(&config.paths.dataset_dir)?;
    let reader = std::io::BufReader::new(fs::File::open(&aligned_path)?);
    let aligned = read_aligned_csv(reader, &dataset)?;
    let truth = PoseTable::from_truth(&dataset);
    let noisy = PoseTable::from_noisy(&dataset);

    let mme_cfg = config.mme_config();
    let cloud_aligned = aggregate(&dataset, &aligned)?;
    let cloud_unaligned = aggregate(&dataset, &noisy)?;
    let mme_aligned = mean_map_entropy(&cloud_aligned, &mme_cfg)?;
    let mme_unaligned = mean_map_entropy(&cloud_unaligned, &mme_cfg)?;

    let (at, ar) = pose_rmse(&aligned, &truth)?;
    let (nt, nr) = pose_rmse(&noisy, &truth)?;

    let generated = world_detections(&dataset, &aligned);
    let reference = dataset.centerline();
    let roi = LateralRoi {
        s_min: 0.0,
        s_max: dataset.scene.corridor_length,
        max_lateral: config.evaluation.max_lateral.unwrap_or(30.0),
    };
    let step = config.evaluation.lateral_step.unwrap_or(1.0);
    let lateral = lateral_errors(
        &generated,
        &dataset.geometry.gt_polylines,
        &reference,
        step,
        &roi,
    )?;

    let report = MetricsReport {
        schema_version: crate::config::SCHEMA_VERSION,
        mme_aligned: mme_aligned.mme,
        mme_unaligned: mme_unaligned.mme,
        pose_rmse: RmsePair { trans: at, rot: ar },
        pose_rmse_unaligned: RmsePair { trans: nt, rot: nr },
        lateral,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidInput(format!("metrics serialization: {e}")))?;
    fs::write(artifacts.join("metrics.json"), json + "\n")?;

    let mut w = create(&artifacts.join("lateral_series.csv"))?;
    writeln!(w, "s,offset,non_offset,pairs")?;
    for s in &report.lateral.series {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        writeln!(
            w,
            "{},{},{},{}",
            s.s,
            fmt(s.offset),
            fmt(s.non_offset),
            s.pairs
        )?;
    }
    w.flush()?;

    eprintln!(
        "metrics: mme {:.4} (aligned) vs {:.4} (unaligned), rmse {:.3} m vs {:.3} m",
        report.mme_aligned, report.mme_unaligned, report.pose_rmse.trans, report.pose_rmse_unaligned.trans
    );
    Ok(())
}

/// Per-pose detections mapped into the world frame with the given
/// poses, forming the generated polyline set of the lateral metrics.
fn world_detections(dataset: &FleetDataset, poses: &PoseTable) -> Vec<ClassifiedPolyline> {
    let mut out = Vec::new();
    for (di, drive) in dataset.drives.iter().enumerate() {
        for (pi, rec) in drive.records.iter().enumerate() {
            let pose = poses.pose(di, pi);
            for det in &rec.detections {
                out.push(ClassifiedPolyline {
                    class: det.class,
                    pts: det.pts.iter().map(|p| pose.transform_point(*p)).collect(),
                });
            }
        }
    }
    out
}

pub fn cmd_pipeline(config: &PipelineConfig, resume: bool) -> Result<()> {
    cmd_generate(config)?;
    cmd_align(config, resume)?;
    cmd_map(config)?;
    cmd_eval(config)?;
    Ok(())
}
