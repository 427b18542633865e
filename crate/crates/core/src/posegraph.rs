//! Robust pose-graph optimization.
//!
//! Every pose of every drive becomes an SE(2) node anchored by a GNSS
//! prior; accepted correlation edges become relative factors whose
//! noise shrinks with the standard score of their correlation peak.
//! The robustified nonlinear least squares problem is minimized with
//! Levenberg-Marquardt over sparse normal equations.

use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationResult;
use crate::fleet::FleetDataset;
use crate::geometry::{relative_transform, wrap_angle, Pose2, Transform2};
use crate::sampling::{PairCandidate, PairKind, PoseRef};
use crate::sparse::{dense_solve_spd, SparseCholesky, SparseSym};
use crate::{Error, Result};

/// Sigma floor applied to priors so zero-noise synthetic datasets stay
/// solvable (a zero sigma would mean infinite information).
const PRIOR_SIGMA_FLOOR: f64 = 1e-6;

/// Constant noise model for baseline ICP edges.
const ICP_SIGMA_XY: f64 = 0.2;
const ICP_SIGMA_THETA: f64 = 0.2 * std::f64::consts::PI / 180.0;

/// Measurement attached to a candidate pair by the correlation stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EdgeData {
    /// Grid correlation outcome.
    Grid(CorrelationResult),
    /// ICP baseline outcome.
    Icp {
        transform: Transform2,
        converged: bool,
    },
    /// The correlation volume was flat; the pair carries no information.
    Degenerate,
}

/// One scheduled pair together with its measured relative transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEdge {
    pub pair: PairCandidate,
    pub data: EdgeData,
}

/// Unary GNSS anchor.
#[derive(Debug, Clone)]
pub struct PriorFactor {
    pub node: PoseRef,
    pub measured: Pose2,
    /// Noise sigmas (x, y, theta); all > 0.
    pub noise: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSource {
    Correlation,
    Consecutive,
    BaselineIcp,
}

/// Binary relative-pose constraint.
#[derive(Debug, Clone)]
pub struct RelativeFactor {
    pub a: PoseRef,
    pub b: PoseRef,
    pub measured: Transform2,
    /// Noise sigmas (x, y, theta); all > 0 and finite.
    pub noise: [f64; 3],
    /// Huber scale, or `None` for a plain quadratic factor.
    pub robust: Option<f64>,
    pub source: EdgeSource,
}

/// Solver and graph-construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    pub rel_error_tol: f64,
    pub abs_error_tol: f64,
    /// Huber threshold on the whitened residual norm.
    pub huber_k: f64,
    /// Relative-edge noise is `z_weight_constant / Z` meters (and the
    /// same over 1 m/degree for rotation).
    pub z_weight_constant: f64,
    /// Edges with a standard score below this are dropped (0 disables).
    pub z_min: f64,
    /// Apply the Huber robust model to relative edges.
    pub robust: bool,
    /// Solve the normal equations densely (reference mode for small
    /// problems; rejected above 2000 nodes).
    pub use_dense_solver: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 100,
            lambda_init: 1e-4,
            lambda_factor: 10.0,
            rel_error_tol: 1e-6,
            abs_error_tol: 1e-8,
            huber_k: 1.345,
            z_weight_constant: 1.0,
            z_min: 3.0,
            robust: true,
            use_dense_solver: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.lambda_init > 0.0
            && self.lambda_factor > 1.0
            && self.rel_error_tol > 0.0
            && self.abs_error_tol > 0.0
            && self.huber_k > 0.0
            && self.z_weight_constant > 0.0
            && self.z_min >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "solver config values must be positive (z_min >= 0, lambda_factor > 1)".into(),
            ))
        }
    }

    /// Noise sigmas of a correlation edge from its standard score.
    pub fn edge_noise_from_z(&self, z: f64) -> [f64; 3] {
        let s = self.z_weight_constant / z;
        [s, s, s * std::f64::consts::PI / 180.0]
    }
}

/// The assembled nonlinear factor graph.
#[derive(Debug, Clone)]
pub struct PoseGraphProblem {
    /// Flat node order; `node_refs[i]` identifies node `i`.
    pub node_refs: Vec<PoseRef>,
    /// Initial state per node (x, y, theta), from the noisy poses.
    pub initial: Vec<[f64; 3]>,
    pub priors: Vec<PriorFactor>,
    pub relatives: Vec<RelativeFactor>,
    /// Edges rejected during construction (low Z, boundary peak,
    /// degenerate volume, unconverged ICP).
    pub dropped_edges: usize,
    node_lookup: std::collections::HashMap<PoseRef, usize>,
}

impl PoseGraphProblem {
    pub fn node_count(&self) -> usize {
        self.node_refs.len()
    }

    pub fn factor_count(&self) -> usize {
        self.priors.len() + self.relatives.len()
    }

    pub fn node_id(&self, r: PoseRef) -> Option<usize> {
        self.node_lookup.get(&r).copied()
    }
}

/// Build the factor graph: one node per pose initialized at its noisy
/// GNSS pose, one prior per node, one relative factor per accepted
/// edge.
pub fn build_graph(
    dataset: &FleetDataset,
    edges: &[AlignmentEdge],
    config: &SolverConfig,
) -> Result<PoseGraphProblem> {
    config.validate()?;

    let mut node_refs = Vec::new();
    let mut initial = Vec::new();
    let mut priors = Vec::new();
    let mut node_lookup = std::collections::HashMap::new();
    for (di, drive) in dataset.drives.iter().enumerate() {
        for (pi, rec) in drive.records.iter().enumerate() {
            let r = PoseRef {
                drive: di,
                index: pi,
            };
            node_lookup.insert(r, node_refs.len());
            node_refs.push(r);
            initial.push([rec.noisy.x, rec.noisy.y, rec.noisy.theta]);
            priors.push(PriorFactor {
                node: r,
                measured: rec.noisy,
                noise: [
                    rec.noisy.sigma_xy.max(PRIOR_SIGMA_FLOOR),
                    rec.noisy.sigma_xy.max(PRIOR_SIGMA_FLOOR),
                    rec.noisy.sigma_theta.max(PRIOR_SIGMA_FLOOR),
                ],
            });
        }
    }

    let mut relatives = Vec::new();
    let mut dropped = 0usize;
    for edge in edges {
        for r in [edge.pair.a, edge.pair.b] {
            if !node_lookup.contains_key(&r) {
                return Err(Error::GraphConstruction(format!(
                    "edge references unknown node {r:?}"
                )));
            }
        }
        match edge.data {
            EdgeData::Grid(res) => {
                if res.on_boundary || res.z_score < config.z_min {
                    dropped += 1;
                    continue;
                }
                relatives.push(RelativeFactor {
                    a: edge.pair.a,
                    b: edge.pair.b,
                    measured: res.transform,
                    noise: config.edge_noise_from_z(res.z_score),
                    robust: config.robust.then_some(config.huber_k),
                    source: match edge.pair.kind {
                        PairKind::Consecutive => EdgeSource::Consecutive,
                        PairKind::CrossDrive => EdgeSource::Correlation,
                    },
                });
            }
            EdgeData::Icp {
                transform,
                converged,
            } => {
                if !converged {
                    dropped += 1;
                    continue;
                }
                relatives.push(RelativeFactor {
                    a: edge.pair.a,
                    b: edge.pair.b,
                    measured: transform,
                    noise: [ICP_SIGMA_XY, ICP_SIGMA_XY, ICP_SIGMA_THETA],
                    robust: config.robust.then_some(config.huber_k),
                    source: EdgeSource::BaselineIcp,
                });
            }
            EdgeData::Degenerate => {
                dropped += 1;
            }
        }
    }

    for f in &relatives {
        if f.noise.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::GraphConstruction(format!(
                "relative factor {:?}-{:?} has invalid noise {:?}",
                f.a, f.b, f.noise
            )));
        }
    }

    Ok(PoseGraphProblem {
        node_refs,
        initial,
        priors,
        relatives,
        dropped_edges: dropped,
        node_lookup,
    })
}

/// Optimization summary. The JSON report interface serializes the
/// scalar fields; per-factor residuals stay in memory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub chi2_initial: f64,
    pub chi2_final: f64,
    pub dropped_edge_count: usize,
    pub converged: bool,
    /// Whitened residual norm of every factor at the solution
    /// (priors first, then relatives).
    #[serde(skip)]
    pub final_residuals: Vec<f64>,
}

/// Result of [`optimize`].
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    /// Aligned (x, y, theta) per node, ordered like
    /// `problem.node_refs`.
    pub poses: Vec<[f64; 3]>,
    pub report: OptimizeReport,
}

/// Huber loss on the squared whitened norm `s`: returns (rho(s),
/// weight) where weight is d rho / d s, used for IRLS reweighting.
fn robust_loss(s: f64, k: Option<f64>) -> (f64, f64) {
    match k {
        Some(k) if s > k * k => {
            let r = s.sqrt();
            (2.0 * k * r - k * k, k / r)
        }
        _ => (s, 1.0),
    }
}

struct FactorEval {
    /// Whitened residual.
    r: [f64; 3],
    /// Whitened Jacobian blocks: (node, 3x3 row-major).
    jacobians: Vec<(usize, [[f64; 3]; 3])>,
}

fn eval_prior(f: &PriorFactor, node: usize, x: &[[f64; 3]]) -> FactorEval {
    let p = x[node];
    let r = [
        (p[0] - f.measured.x) / f.noise[0],
        (p[1] - f.measured.y) / f.noise[1],
        wrap_angle(p[2] - f.measured.theta) / f.noise[2],
    ];
    let mut j = [[0.0; 3]; 3];
    for k in 0..3 {
        j[k][k] = 1.0 / f.noise[k];
    }
    FactorEval {
        r,
        jacobians: vec![(node, j)],
    }
}

fn eval_relative(f: &RelativeFactor, na: usize, nb: usize, x: &[[f64; 3]]) -> FactorEval {
    let a = x[na];
    let b = x[nb];
    let pa = Pose2::from_xytheta(a[0], a[1], a[2]);
    let pb = Pose2::from_xytheta(b[0], b[1], b[2]);
    let rel = relative_transform(&pa, &pb);
    let r = [
        (rel.dx - f.measured.dx) / f.noise[0],
        (rel.dy - f.measured.dy) / f.noise[1],
        wrap_angle(rel.dtheta - f.measured.dtheta) / f.noise[2],
    ];
    let (s, c) = a[2].sin_cos();
    // d rel / d (xa, ya, theta_a) and d rel / d (xb, yb, theta_b).
    let ja = [
        [-c / f.noise[0], -s / f.noise[0], rel.dy / f.noise[0]],
        [s / f.noise[1], -c / f.noise[1], -rel.dx / f.noise[1]],
        [0.0, 0.0, -1.0 / f.noise[2]],
    ];
    let jb = [
        [c / f.noise[0], s / f.noise[0], 0.0],
        [-s / f.noise[1], c / f.noise[1], 0.0],
        [0.0, 0.0, 1.0 / f.noise[2]],
    ];
    FactorEval {
        r,
        jacobians: vec![(na, ja), (nb, jb)],
    }
}

/// Whitened residual and Jacobian of a prior factor at a node state.
pub fn prior_residual_jacobian(f: &PriorFactor, node_state: [f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let ev = eval_prior(f, 0, &[node_state]);
    (ev.r, ev.jacobians[0].1)
}

/// Whitened residual and the two Jacobian blocks (w.r.t. node a, then
/// node b) of a relative factor.
pub fn relative_residual_jacobian(
    f: &RelativeFactor,
    state_a: [f64; 3],
    state_b: [f64; 3],
) -> ([f64; 3], [[[f64; 3]; 3]; 2]) {
    let ev = eval_relative(f, 0, 1, &[state_a, state_b]);
    (ev.r, [ev.jacobians[0].1, ev.jacobians[1].1])
}

fn evaluate_factor(problem: &PoseGraphProblem, idx: usize, x: &[[f64; 3]]) -> (FactorEval, Option<f64>) {
    if idx < problem.priors.len() {
        let f = &problem.priors[idx];
        let node = problem.node_id(f.node).unwrap();
        (eval_prior(f, node, x), None)
    } else {
        let f = &problem.relatives[idx - problem.priors.len()];
        let na = problem.node_id(f.a).unwrap();
        let nb = problem.node_id(f.b).unwrap();
        (eval_relative(f, na, nb, x), f.robust)
    }
}

fn total_chi2(problem: &PoseGraphProblem, x: &[[f64; 3]]) -> f64 {
    let nf = problem.factor_count();
    let mut chi2 = 0.0;
    for idx in 0..nf {
        let (ev, robust) = evaluate_factor(problem, idx, x);
        let s = ev.r.iter().map(|v| v * v).sum::<f64>();
        chi2 += robust_loss(s, robust).0;
    }
    chi2
}

/// Minimize the robustified error with Levenberg-Marquardt. Accepted
/// steps never increase chi2; the damping grows by `lambda_factor` on
/// rejection and shrinks on acceptance.
pub fn optimize(problem: &PoseGraphProblem, config: &SolverConfig) -> Result<OptimizeOutcome> {
    config.validate()?;
    let n = problem.node_count();
    if n == 0 {
        return Err(Error::GraphConstruction("graph has no nodes".into()));
    }
    if config.use_dense_solver && n > 2000 {
        return Err(Error::InvalidInput(format!(
            "dense reference solver limited to 2000 nodes, graph has {n}"
        )));
    }

    let mut x = problem.initial.clone();
    let nf = problem.factor_count();

    // Initial error; non-finite residuals are an input error.
    let mut chi2 = 0.0;
    for idx in 0..nf {
        let (ev, robust) = evaluate_factor(problem, idx, &x);
        let s = ev.r.iter().map(|v| v * v).sum::<f64>();
        if !s.is_finite() {
            return Err(Error::NonFiniteResidual {
                factor: idx,
                detail: format!("residual {:?}", ev.r),
            });
        }
        chi2 += robust_loss(s, robust).0;
    }
    let chi2_initial = chi2;

    let mut lambda = config.lambda_init;
    let mut iterations = 0usize;
    let mut converged = false;
    const LAMBDA_MAX: f64 = 1e12;

    'outer: while iterations < config.max_iterations {
        if chi2 <= config.abs_error_tol {
            converged = true;
            break;
        }

        // Assemble the weighted normal equations at the current state.
        let dim = 3 * n;
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut g = vec![0.0f64; dim];
        for idx in 0..nf {
            let (ev, robust) = evaluate_factor(problem, idx, &x);
            let s = ev.r.iter().map(|v| v * v).sum::<f64>();
            let (_, w) = robust_loss(s, robust);
            for &(ni, ji) in &ev.jacobians {
                // Gradient: w * J^T r.
                for col in 0..3 {
                    let mut v = 0.0;
                    for row in 0..3 {
                        v += ji[row][col] * ev.r[row];
                    }
                    g[3 * ni + col] += w * v;
                }
                for &(nj, jj) in &ev.jacobians {
                    if nj < ni {
                        continue; // each unordered block pair once
                    }
                    let block = |rr: usize, cc: usize| -> f64 {
                        let mut v = 0.0;
                        for kk in 0..3 {
                            v += jj[kk][rr] * ji[kk][cc];
                        }
                        w * v
                    };
                    if nj == ni {
                        // Symmetric diagonal block: lower triangle only.
                        for rr in 0..3 {
                            for cc in 0..=rr {
                                triplets.push((3 * ni + rr, 3 * ni + cc, block(rr, cc)));
                            }
                        }
                    } else {
                        // Cross block H[nj, ni] = w * Jj^T * Ji lies in
                        // the strict lower triangle (nj > ni).
                        for rr in 0..3 {
                            for cc in 0..3 {
                                triplets.push((3 * nj + rr, 3 * ni + cc, block(rr, cc)));
                            }
                        }
                    }
                }
            }
        }

        let h = SparseSym::from_triplets(dim, &triplets);
        let mut diag = vec![0.0f64; dim];
        for c in 0..dim {
            for k in h.col_ptr[c]..h.col_ptr[c + 1] {
                if h.row_idx[k] == c {
                    diag[c] = h.values[k];
                }
            }
        }

        let grad_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_inf < 1e-14 {
            converged = true;
            break;
        }

        loop {
            // Damped system: H + lambda * diag(H).
            let mut damped_triplets = Vec::with_capacity(dim);
            for c in 0..dim {
                damped_triplets.push((c, c, lambda * diag[c].max(1e-12)));
            }
            let mut all = triplets.clone();
            all.extend_from_slice(&damped_triplets);
            let damped = SparseSym::from_triplets(dim, &all);
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();

            let delta = if config.use_dense_solver {
                dense_solve_spd(&damped, &rhs)
            } else {
                SparseCholesky::factor(&damped).map(|f| f.solve(&rhs))
            };

            let step_ok = match delta {
                Ok(delta) => {
                    let mut cand = x.clone();
                    for i in 0..n {
                        cand[i][0] += delta[3 * i];
                        cand[i][1] += delta[3 * i + 1];
                        cand[i][2] = wrap_angle(cand[i][2] + delta[3 * i + 2]);
                    }
                    let new_chi2 = total_chi2(problem, &cand);
                    if new_chi2.is_finite() && new_chi2 < chi2 {
                        let rel_change = (chi2 - new_chi2) / chi2.max(1e-300);
                        x = cand;
                        chi2 = new_chi2;
                        lambda = (lambda / config.lambda_factor).max(1e-12);
                        iterations += 1;
                        if rel_change < config.rel_error_tol || chi2 <= config.abs_error_tol {
                            converged = true;
                            break 'outer;
                        }
                        true
                    } else {
                        false
                    }
                }
                Err(_) => false,
            };

            if step_ok {
                break;
            }
            lambda *= config.lambda_factor;
            if lambda > LAMBDA_MAX {
                // Cannot improve further: treat as a (local) minimum.
                converged = true;
                break 'outer;
            }
        }
    }

    let mut final_residuals = Vec::with_capacity(nf);
    for idx in 0..nf {
        let (ev, _) = evaluate_factor(problem, idx, &x);
        final_residuals.push(ev.r.iter().map(|v| v * v).sum::<f64>().sqrt());
    }

    Ok(OptimizeOutcome {
        poses: x,
        report: OptimizeReport {
            iterations,
            chi2_initial,
            chi2_final: chi2,
            dropped_edge_count: problem.dropped_edges,
            converged,
            final_residuals,
        },
    })
}
