//! End-to-end orchestration: pair sampling, per-pair correlation on a
//! bounded worker pool, graph construction and the solve, plus the CSV
//! interfaces of the intermediate artifacts.
//!
//! Pairs are processed in parallel but reduced in pair order, so
//! results are byte-identical for any worker count.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{correlate_with_covariance, icp_baseline, IcpParams, SearchWindow};
use crate::fleet::FleetDataset;
use crate::geometry::relative_transform;
use crate::mapgen::PoseTable;
use crate::posegraph::{
    build_graph, optimize, AlignmentEdge, EdgeData, OptimizeOutcome, SolverConfig,
};
use crate::sampling::{sample_pairs, PairCandidate, PairKind, PoseRef, SamplingConfig};
use crate::{Error, Result};

/// Correlation method of the alignment stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grid,
    Icp,
}

/// Parameters of the alignment stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignParams {
    pub sampling: SamplingConfig,
    pub window: SearchWindow,
    pub solver: SolverConfig,
    pub icp: IcpParams,
    pub method: Method,
    /// Splat covariance per axis, m^2.
    pub point_covariance: f64,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            sampling: SamplingConfig::default(),
            window: SearchWindow::default(),
            solver: SolverConfig::default(),
            icp: IcpParams::default(),
            method: Method::Grid,
            point_covariance: crate::correlation::DEFAULT_POINT_COVARIANCE,
        }
    }
}

/// Build a worker pool of the requested size.
pub fn make_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))
}

/// Measure every candidate pair with the configured method. Runs on the
/// given pool; output order matches the input pair order.
pub fn compute_edges(
    dataset: &FleetDataset,
    pairs: &[PairCandidate],
    params: &AlignParams,
    pool: &rayon::ThreadPool,
) -> Result<Vec<AlignmentEdge>> {
    pool.install(|| {
        pairs
            .par_iter()
            .map(|&pair| measure_pair(dataset, pair, params))
            .collect()
    })
}

fn measure_pair(
    dataset: &FleetDataset,
    pair: PairCandidate,
    params: &AlignParams,
) -> Result<AlignmentEdge> {
    let ra = &dataset.drives[pair.a.drive].records[pair.a.index];
    let rb = &dataset.drives[pair.b.drive].records[pair.b.index];
    let guess = relative_transform(&ra.noisy, &rb.noisy);
    let data = match params.method {
        Method::Grid => {
            match correlate_with_covariance(
                &ra.scan,
                &rb.scan,
                &guess,
                &params.window,
                params.point_covariance,
            ) {
                Ok((result, _)) => EdgeData::Grid(result),
                Err(Error::DegenerateCorrelation) | Err(Error::EmptyScan) => EdgeData::Degenerate,
                Err(e) => return Err(e),
            }
        }
        Method::Icp => match icp_baseline(&ra.scan, &rb.scan, &guess, &params.icp) {
            Ok(r) => EdgeData::Icp {
                transform: r.transform,
                converged: r.converged,
            },
            Err(Error::InvalidInput(_)) => EdgeData::Degenerate,
            Err(e) => return Err(e),
        },
    };
    Ok(AlignmentEdge { pair, data })
}

/// Everything the alignment stage produces.
#[derive(Debug, Clone)]
pub struct AlignOutput {
    pub pairs: Vec<PairCandidate>,
    pub edges: Vec<AlignmentEdge>,
    pub outcome: OptimizeOutcome,
    pub aligned: PoseTable,
}

/// Full alignment: sample pairs, measure them, build and solve the
/// graph.
pub fn align(
    dataset: &FleetDataset,
    params: &AlignParams,
    pool: &rayon::ThreadPool,
) -> Result<AlignOutput> {
    let pairs = sample_pairs(dataset, &params.sampling)?;
    let edges = compute_edges(dataset, &pairs, params, pool)?;
    let (outcome, aligned) = solve_from_edges(dataset, &edges, &params.solver)?;
    Ok(AlignOutput {
        pairs,
        edges,
        outcome,
        aligned,
    })
}

/// Graph construction + solve from precomputed edges (the `--resume`
/// path).
pub fn solve_from_edges(
    dataset: &FleetDataset,
    edges: &[AlignmentEdge],
    solver: &SolverConfig,
) -> Result<(OptimizeOutcome, PoseTable)> {
    let problem = build_graph(dataset, edges, solver)?;
    let outcome = optimize(&problem, solver)?;
    let mut table = PoseTable::from_noisy(dataset);
    for (i, r) in problem.node_refs.iter().enumerate() {
        table.poses[r.drive][r.index] = outcome.poses[i];
    }
    Ok((outcome, table))
}

/// Edge dump, one row per pair:
/// `drive_a,idx_a,drive_b,idx_b,dx,dy,dtheta,peak,z,flag`.
pub fn write_edges_csv<W: Write>(
    w: &mut W,
    dataset: &FleetDataset,
    edges: &[AlignmentEdge],
) -> Result<()> {
    writeln!(w, "drive_a,idx_a,drive_b,idx_b,dx,dy,dtheta,peak,z,flag")?;
    for e in edges {
        let (t, peak, z, flag) = match e.data {
            EdgeData::Grid(r) => (
                Some(r.transform),
                Some(r.peak),
                Some(r.z_score),
                if r.on_boundary { "boundary" } else { "ok" },
            ),
            EdgeData::Icp {
                transform,
                converged,
            } => (
                Some(transform),
                None,
                None,
                if converged { "icp_ok" } else { "icp_fail" },
            ),
            EdgeData::Degenerate => (None, None, None, "degenerate"),
        };
        let num = |v: Option<f64>| v.map_or("nan".to_string(), |x| x.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            dataset.drives[e.pair.a.drive].drive_id,
            e.pair.a.index,
            dataset.drives[e.pair.b.drive].drive_id,
            e.pair.b.index,
            num(t.map(|t| t.dx)),
            num(t.map(|t| t.dy)),
            num(t.map(|t| t.dtheta)),
            num(peak),
            num(z),
            flag,
        )?;
    }
    Ok(())
}

/// Parse an edge dump back, resolving drive ids against the dataset.
pub fn read_edges_csv<R: BufRead>(r: R, dataset: &FleetDataset) -> Result<Vec<AlignmentEdge>> {
    let drive_index: HashMap<&str, usize> = dataset
        .drives
        .iter()
        .enumerate()
        .map(|(i, d)| (d.drive_id.as_str(), i))
        .collect();
    let invalid = |line: usize, msg: String| Error::Parse {
        file: "edges.csv".into(),
        line,
        field: "row".into(),
        message: msg,
    };

    let mut edges = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(invalid(lineno, format!("expected 10 columns, got {}", cols.len())));
        }
        let drive = |id: &str| {
            drive_index
                .get(id)
                .copied()
                .ok_or_else(|| invalid(lineno, format!("unknown drive id '{id}'")))
        };
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| invalid(lineno, format!("bad index '{s}': {e}")))
        };
        let float = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| invalid(lineno, format!("bad float '{s}': {e}")))
        };
        let a = PoseRef {
            drive: drive(cols[0])?,
            index: int(cols[1])?,
        };
        let b = PoseRef {
            drive: drive(cols[2])?,
            index: int(cols[3])?,
        };
        let kind = if a.drive == b.drive && b.index == a.index + 1 {
            PairKind::Consecutive
        } else {
            PairKind::CrossDrive
        };
        let pair = PairCandidate { a, b, kind };
        let data = match cols[9] {
            "ok" | "boundary" => EdgeData::Grid(crate::correlation::CorrelationResult {
                transform: crate::geometry::Transform2::new(
                    float(cols[4])?,
                    float(cols[5])?,
                    float(cols[6])?,
                ),
                peak: float(cols[7])?,
                z_score: float(cols[8])?,
                on_boundary: cols[9] == "boundary",
            }),
            "icp_ok" | "icp_fail" => EdgeData::Icp {
                transform: crate::geometry::Transform2::new(
                    float(cols[4])?,
                    float(cols[5])?,
                    float(cols[6])?,
                ),
                converged: cols[9] == "icp_ok",
            },
            "degenerate" => EdgeData::Degenerate,
            other => return Err(invalid(lineno, format!("unknown flag '{other}'"))),
        };
        edges.push(AlignmentEdge { pair, data });
    }
    Ok(edges)
}

/// Aligned pose dump: `drive_id,pose_index,t,x,y,theta`.
pub fn write_aligned_csv<W: Write>(
    w: &mut W,
    dataset: &FleetDataset,
    table: &PoseTable,
) -> Result<()> {
    writeln!(w, "drive_id,pose_index,t,x,y,theta")?;
    for (di, drive) in dataset.drives.iter().enumerate() {
        for (pi, rec) in drive.records.iter().enumerate() {
            let p = table.poses[di][pi];
            writeln!(
                w,
                "{},{},{},{},{},{}",
                drive.drive_id, pi, rec.t, p[0], p[1], p[2]
            )?;
        }
    }
    Ok(())
}

/// Parse an aligned pose dump against the dataset shape.
pub fn read_aligned_csv<R: BufRead>(r: R, dataset: &FleetDataset) -> Result<PoseTable> {
    let drive_index: HashMap<&str, usize> = dataset
        .drives
        .iter()
        .enumerate()
        .map(|(i, d)| (d.drive_id.as_str(), i))
        .collect();
    let mut table = PoseTable::from_noisy(dataset);
    let mut seen = vec![vec![false; 0]; table.poses.len()];
    for (di, p) in table.poses.iter().enumerate() {
        seen[di] = vec![false; p.len()];
    }
    let invalid = |line: usize, msg: String| Error::Parse {
        file: "aligned_poses.csv".into(),
        line,
        field: "row".into(),
        message: msg,
    };
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(invalid(lineno, format!("expected 6 columns, got {}", cols.len())));
        }
        let di = *drive_index
            .get(cols[0])
            .ok_or_else(|| invalid(lineno, format!("unknown drive id '{}'", cols[0])))?;
        let pi: usize = cols[1]
            .parse()
            .map_err(|e| invalid(lineno, format!("bad pose index: {e}")))?;
        if pi >= table.poses[di].len() {
            return Err(invalid(lineno, format!("pose index {pi} out of range")));
        }
        let mut vals = [0.0f64; 3];
        for (k, c) in cols[3..6].iter().enumerate() {
            vals[k] = c
                .parse()
                .map_err(|e| invalid(lineno, format!("bad float '{c}': {e}")))?;
        }
        table.poses[di][pi] = vals;
        seen[di][pi] = true;
    }
    if seen.iter().flatten().any(|s| !s) {
        return Err(Error::Mismatch(
            "aligned pose file does not cover every pose of the dataset".into(),
        ));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::{generate_fleet, Direction, DriveSpec, SceneSpec};

    fn small_dataset() -> FleetDataset {
        let scene = SceneSpec {
            corridor_length: 150.0,
            ..SceneSpec::default()
        };
        let mut drives = vec![
            DriveSpec::new("d0", Direction::Forward, 1),
            DriveSpec::new("d1", Direction::Reverse, 2),
        ];
        for d in &mut drives {
            // Small scans keep the correlation cheap in unit tests.
            d.radar_range = 25.0;
        }
        generate_fleet(&scene, &drives, 7).unwrap()
    }

    #[test]
    fn align_is_deterministic_across_worker_counts() {
        let dataset = small_dataset();
        let params = AlignParams {
            sampling: SamplingConfig {
                rate: 0.4,
                seed: 3,
                ..SamplingConfig::default()
            },
            ..AlignParams::default()
        };
        let pool1 = make_pool(1).unwrap();
        let pool4 = make_pool(4).unwrap();
        let a = align(&dataset, &params, &pool1).unwrap();
        let b = align(&dataset, &params, &pool4).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.aligned, b.aligned);
    }

    #[test]
    fn aligned_poses_beat_noisy_poses_on_small_scene() {
        let dataset = small_dataset();
        let params = AlignParams {
            sampling: SamplingConfig {
                rate: 1.0,
                seed: 1,
                ..SamplingConfig::default()
            },
            ..AlignParams::default()
        };
        let pool = make_pool(2).unwrap();
        let out = align(&dataset, &params, &pool).unwrap();
        let truth = PoseTable::from_truth(&dataset);
        let noisy = PoseTable::from_noisy(&dataset);
        let (rmse_aligned, _) = crate::eval::pose_rmse(&out.aligned, &truth).unwrap();
        let (rmse_noisy, _) = crate::eval::pose_rmse(&noisy, &truth).unwrap();
        assert!(
            rmse_aligned < rmse_noisy,
            "aligned {rmse_aligned} vs noisy {rmse_noisy}"
        );
    }

    #[test]
    fn edges_csv_round_trips() {
        let dataset = small_dataset();
        let params = AlignParams {
            sampling: SamplingConfig {
                rate: 0.5,
                seed: 9,
                ..SamplingConfig::default()
            },
            ..AlignParams::default()
        };
        let pool = make_pool(2).unwrap();
        let pairs = sample_pairs(&dataset, &params.sampling).unwrap();
        let edges = compute_edges(&dataset, &pairs, &params, &pool).unwrap();
        let mut buf = Vec::new();
        write_edges_csv(&mut buf, &dataset, &edges).unwrap();
        let back = read_edges_csv(std::io::BufReader::new(&buf[..]), &dataset).unwrap();
        assert_eq!(edges, back);
    }

    #[test]
    fn icp_method_produces_edges() {
        let dataset = small_dataset();
        let params = AlignParams {
            method: Method::Icp,
            sampling: SamplingConfig {
                rate: 0.3,
                seed: 5,
                ..SamplingConfig::default()
            },
            ..AlignParams::default()
        };
        let pool = make_pool(2).unwrap();
        let out = align(&dataset, &params, &pool).unwrap();
        assert!(out
            .edges
            .iter()
            .any(|e| matches!(e.data, EdgeData::Icp { .. })));
        let mut buf = Vec::new();
        write_edges_csv(&mut buf, &dataset, &out.edges).unwrap();
        let back = read_edges_csv(std::io::BufReader::new(&buf[..]), &dataset).unwrap();
        assert_eq!(out.edges, back);
    }

    #[test]
    fn aligned_csv_round_trips() {
        let dataset = small_dataset();
        let table = PoseTable::from_truth(&dataset);
        let mut buf = Vec::new();
        write_aligned_csv(&mut buf, &dataset, &table).unwrap();
        let back = read_aligned_csv(std::io::BufReader::new(&buf[..]), &dataset).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn resume_from_edges_matches_direct_align() {
        let dataset = small_dataset();
        let params = AlignParams {
            sampling: SamplingConfig {
                rate: 0.5,
                seed: 2,
                ..SamplingConfig::default()
            },
            ..AlignParams::default()
        };
        let pool = make_pool(2).unwrap();
        let direct = align(&dataset, &params, &pool).unwrap();

        let mut buf = Vec::new();
        write_edges_csv(&mut buf, &dataset, &direct.edges).unwrap();
        let edges = read_edges_csv(std::io::BufReader::new(&buf[..]), &dataset).unwrap();
        let (_, aligned) = solve_from_edges(&dataset, &edges, &params.solver).unwrap();
        // Round-tripped float text is exact, so the solve is identical.
        assert_eq!(direct.aligned, aligned);
    }
}
