//! Acceptance suite: one test per criterion, each printing a
//! `ACCEPTANCE <n> ...: PASS` line with its measured numbers. Criteria
//! 4, 5a, 6 and 8 share one end-to-end fixture (1 km corridor, 5 drives
//! at default noise) built once.

#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::sync::OnceLock;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use radalign::correlation::{
    correlate_with_covariance, find_peak, icp_baseline, IcpParams, SearchWindow,
};
use radalign::eval::{lateral_errors, mean_map_entropy, pose_rmse, LateralRoi, MmeConfig};
use radalign::fleet::{
    generate_fleet, generate_scene, ClassifiedPolyline, Direction, Drive, DriveSpec, FleetDataset,
    LineClass, PoseRecord, SceneGeometry, SceneSpec,
};
use radalign::geometry::{relative_transform, wrap_angle, Pose2, Transform2};
use radalign::mapgen::{aggregate, histogram, PoseTable};
use radalign::pipeline::{align, make_pool, solve_from_edges, AlignParams, Method};
use radalign::posegraph::{
    build_graph, optimize, prior_residual_jacobian, relative_residual_jacobian, AlignmentEdge,
    EdgeData, PriorFactor, RelativeFactor, SolverConfig,
};
use radalign::sampling::{PairCandidate, PairKind, PoseRef};
use radalign::seeding::derive_seed;

// ---------------------------------------------------------------------
// Shared end-to-end fixture
// ---------------------------------------------------------------------

struct Fixture {
    dataset: FleetDataset,
    grid: radalign::pipeline::AlignOutput,
    icp: radalign::pipeline::AlignOutput,
    truth: PoseTable,
    noisy: PoseTable,
    rmse_grid: f64,
    rmse_icp: f64,
    rmse_unaligned: f64,
    build_secs: f64,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let start = Instant::now();
        // 6 m post spacing keeps lattice aliases outside the +-2 m
        // search window even for pairs whose GNSS error breaches it:
        // such pairs hit the window boundary and are dropped instead of
        // producing confident wrong edges.
        let scene = SceneSpec {
            corridor_length: 1000.0,
            guardrail_post_spacing: 6.0,
            ..SceneSpec::default()
        };
        let seed = 42u64;
        let drives: Vec<DriveSpec> = (0..5)
            .map(|i| {
                let id = format!("d{i}");
                let dir = if i % 2 == 0 {
                    Direction::Forward
                } else {
                    Direction::Reverse
                };
                DriveSpec::new(id.clone(), dir, derive_seed(seed, &id))
            })
            .collect();
        let dataset = generate_fleet(&scene, &drives, seed).unwrap();

        let mut params = AlignParams::default();
        params.sampling.seed = derive_seed(seed, "sampling");
        // Five drives offer far fewer cross pairs than the fleets the
        // 10% default rate is sized for; sample half of the eligible
        // pairs to reach comparable graph connectivity.
        params.sampling.rate = 0.5;
        // Calibrated edge weighting: at the default window the accepted
        // edges are accurate to ~0.05 m (quantization plus peak noise)
        // while their standard scores sit near 8, so 0.4/Z puts the
        // pseudo-noise at the measured accuracy.
        params.solver.z_weight_constant = 0.4;
        let pool = make_pool(2).unwrap();
        let grid = align(&dataset, &params, &pool).unwrap();
        let icp_params = AlignParams {
            method: Method::Icp,
            ..params.clone()
        };
        let icp = align(&dataset, &icp_params, &pool).unwrap();

        let truth = PoseTable::from_truth(&dataset);
        let noisy = PoseTable::from_noisy(&dataset);
        let (rmse_grid, _) = pose_rmse(&grid.aligned, &truth).unwrap();
        let (rmse_icp, _) = pose_rmse(&icp.aligned, &truth).unwrap();
        let (rmse_unaligned, _) = pose_rmse(&noisy, &truth).unwrap();
        Fixture {
            dataset,
            grid,
            icp,
            truth,
            noisy,
            rmse_grid,
            rmse_icp,
            rmse_unaligned,
            build_secs: start.elapsed().as_secs_f64(),
        }
    })
}

// ---------------------------------------------------------------------
// 1. Correlation recovery
// ---------------------------------------------------------------------

#[test]
fn acceptance_1_correlation_recovery() {
    let start = Instant::now();
    let window = SearchWindow::default();
    let step_l = window.step_l;
    let step_r = window.step_r;

    let cases: Vec<(f64, f64, f64, u64)> = {
        let mut rng = StdRng::seed_from_u64(4242);
        (0..100)
            .map(|i| {
                (
                    rng.gen_range(-1.8..1.8),
                    rng.gen_range(-1.8..1.8),
                    rng.gen_range(-0.9f64..0.9).to_radians(),
                    1000 + i,
                )
            })
            .collect()
    };

    let pool = make_pool(2).unwrap();
    let hits: usize = pool.install(|| {
        cases
            .par_iter()
            .map(|&(dx, dy, dth, seed)| {
                let mut rng = StdRng::seed_from_u64(seed);
                let scan1 = oracle::random_scan(60, 30.0, &mut rng);
                let t = Transform2::new(dx, dy, dth);
                let moved = oracle::transform_points(&scan1, &t);
                let scan2 = oracle::add_noise(&moved, 0.05, &mut rng);
                let (_, volume) = correlate_with_covariance(
                    &scan1,
                    &scan2,
                    &Transform2::identity(),
                    &window,
                    0.05,
                )
                .unwrap();
                let peak = find_peak(&volume).unwrap();
                let (r, x, y) = volume.offsets(peak.index.0, peak.index.1, peak.index.2);
                let ok = (x - dx).abs() <= step_l + 1e-9
                    && (y - dy).abs() <= step_l + 1e-9
                    && (r - dth).abs() <= step_r + 1e-9;
                usize::from(ok)
            })
            .sum()
    });

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        hits >= 95,
        "only {hits}/100 pairs recovered within one search step"
    );
    assert!(elapsed <= 120.0, "runtime {elapsed:.1}s exceeds 2 min");
    println!(
        "ACCEPTANCE 1 correlation recovery: PASS ({hits}/100 within one step, {elapsed:.1}s)"
    );
}

// ---------------------------------------------------------------------
// 2. Oracle equivalence
// ---------------------------------------------------------------------

#[test]
fn acceptance_2_oracle_equivalence() {
    let start = Instant::now();
    let window = SearchWindow {
        eps_l: 0.5,
        eps_r: 0.5f64.to_radians(),
        ..SearchWindow::default()
    };
    let mut rng = StdRng::seed_from_u64(2020);
    let mut worst_rel = 0.0f64;
    for case in 0..20 {
        let n1 = rng.gen_range(5..=50);
        let n2 = rng.gen_range(5..=50);
        let scan1 = oracle::random_scan(n1, 2.5, &mut rng);
        let scan2 = oracle::random_scan(n2, 2.5, &mut rng);
        let guess = Transform2::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.005..0.005),
        );
        let (_, volume) =
            correlate_with_covariance(&scan1, &scan2, &guess, &window, 0.05).unwrap();
        let naive = oracle::naive_correlation_volume(&scan1, &scan2, &guess, &window, 0.05);
        assert_eq!(volume.values.len(), naive.len());
        for (k, (a, b)) in volume.values.iter().zip(naive.iter()).enumerate() {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
            worst_rel = worst_rel.max(rel);
            assert!(
                rel <= 1e-9,
                "case {case} cell {k}: optimized {a} vs naive {b} (rel {rel:.3e})"
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 30.0, "runtime {elapsed:.1}s exceeds 30 s");
    println!(
        "ACCEPTANCE 2 oracle equivalence: PASS (20 cases, worst rel diff {worst_rel:.3e}, {elapsed:.1}s)"
    );
}

// ---------------------------------------------------------------------
// 3. Pose-graph exactness
// ---------------------------------------------------------------------

/// Minimal hand-built dataset: one drive, three poses, no scans.
fn chain_dataset(init: &[[f64; 3]; 3], prior0: Pose2) -> FleetDataset {
    let mut records = Vec::new();
    for (i, p) in init.iter().enumerate() {
        let (pose, sigmas) = if i == 0 {
            (prior0, (0.1, 0.01))
        } else {
            (Pose2::from_xytheta(p[0], p[1], p[2]), (1e6, 1e6))
        };
        records.push(PoseRecord {
            t: i as f64,
            truth: Pose2::new(pose.x, pose.y, pose.theta, sigmas.0, sigmas.1),
            noisy: Pose2::new(p[0], p[1], p[2], sigmas.0, sigmas.1),
            scan: vec![],
            detections: vec![],
        });
    }
    // Node 0 must initialize at (and be anchored to) the prior pose.
    records[0].noisy = Pose2::new(prior0.x, prior0.y, prior0.theta, 0.1, 0.01);
    FleetDataset {
        scene: SceneSpec::default(),
        geometry: SceneGeometry {
            posts: vec![],
            gt_polylines: vec![],
        },
        drives: vec![Drive {
            drive_id: "chain".into(),
            records,
        }],
    }
}

#[test]
fn acceptance_3_pose_graph_exactness() {
    // Noise-free 3-pose chain: oracle = hand-composed transforms.
    let t01 = Transform2::new(2.0, 0.3, 0.2);
    let t12 = Transform2::new(1.5, -0.2, -0.4);
    let p0 = Pose2::from_xytheta(0.5, -0.25, 0.1);
    let p1 = p0.apply(&t01);
    let p2 = p1.apply(&t12);

    let init = [[0.4, -0.3, 0.15], [2.2, 0.4, 0.25], [3.6, 0.1, -0.3]];
    let dataset = chain_dataset(&init, p0);
    let pair = |i: usize| PairCandidate {
        a: PoseRef { drive: 0, index: i },
        b: PoseRef {
            drive: 0,
            index: i + 1,
        },
        kind: PairKind::Consecutive,
    };
    let edge = |i: usize, t: Transform2| AlignmentEdge {
        pair: pair(i),
        data: EdgeData::Grid(radalign::correlation::CorrelationResult {
            transform: t,
            peak: 1.0,
            z_score: 1000.0,
            on_boundary: false,
        }),
    };
    let config = SolverConfig {
        rel_error_tol: 1e-14,
        abs_error_tol: 1e-18,
        ..SolverConfig::default()
    };
    let problem = build_graph(&dataset, &[edge(0, t01), edge(1, t12)], &config).unwrap();
    let out = optimize(&problem, &config).unwrap();
    let truth = [[p0.x, p0.y, p0.theta], [p1.x, p1.y, p1.theta], [p2.x, p2.y, p2.theta]];
    let mut worst = 0.0f64;
    for (got, want) in out.poses.iter().zip(truth.iter()) {
        worst = worst
            .max((got[0] - want[0]).abs())
            .max((got[1] - want[1]).abs())
            .max(wrap_angle(got[2] - want[2]).abs());
    }
    assert!(worst < 1e-9, "chain error {worst:.3e} exceeds 1e-9");

    // Jacobians vs central finite differences on 100 random factors.
    let mut rng = StdRng::seed_from_u64(33);
    let h = 1e-6;
    let mut worst_rel = 0.0f64;
    for trial in 0..100 {
        let state = |rng: &mut StdRng| {
            [
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-3.0..3.0),
            ]
        };
        let noise = [
            rng.gen_range(0.05..2.0),
            rng.gen_range(0.05..2.0),
            rng.gen_range(0.01..0.5),
        ];
        let a = state(&mut rng);
        let b = state(&mut rng);
        if trial % 2 == 0 {
            let f = PriorFactor {
                node: PoseRef { drive: 0, index: 0 },
                measured: Pose2::from_xytheta(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-3.0..3.0),
                ),
                noise,
            };
            let (_, jac) = prior_residual_jacobian(&f, a);
            for col in 0..3 {
                let mut ap = a;
                ap[col] += h;
                let mut am = a;
                am[col] -= h;
                let (rp, _) = prior_residual_jacobian(&f, ap);
                let (rm, _) = prior_residual_jacobian(&f, am);
                for row in 0..3 {
                    let fd = (rp[row] - rm[row]) / (2.0 * h);
                    let an = jac[row][col];
                    let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1.0);
                    worst_rel = worst_rel.max(rel);
                    assert!(rel <= 1e-5, "prior J[{row}][{col}]: fd {fd} vs {an}");
                }
            }
        } else {
            let f = RelativeFactor {
                a: PoseRef { drive: 0, index: 0 },
                b: PoseRef { drive: 0, index: 1 },
                measured: Transform2::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-1.0..1.0),
                ),
                noise,
                robust: None,
                source: radalign::posegraph::EdgeSource::Correlation,
            };
            let (_, jacs) = relative_residual_jacobian(&f, a, b);
            for (which, base) in [(0usize, a), (1usize, b)] {
                for col in 0..3 {
                    let perturb = |sign: f64| {
                        let mut s = base;
                        s[col] += sign * h;
                        if which == 0 {
                            relative_residual_jacobian(&f, s, b).0
                        } else {
                            relative_residual_jacobian(&f, a, s).0
                        }
                    };
                    let rp = perturb(1.0);
                    let rm = perturb(-1.0);
                    for row in 0..3 {
                        let fd = (rp[row] - rm[row]) / (2.0 * h);
                        let an = jacs[which][row][col];
                        let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1.0);
                        worst_rel = worst_rel.max(rel);
                        assert!(
                            rel <= 1e-5,
                            "relative J{which}[{row}][{col}]: fd {fd} vs {an}"
                        );
                    }
                }
            }
        }
    }
    println!(
        "ACCEPTANCE 3 pose-graph exactness: PASS (chain error {worst:.2e}, worst jacobian rel {worst_rel:.2e})"
    );
}

// ---------------------------------------------------------------------
// 4. End-to-end improvement
// ---------------------------------------------------------------------

#[test]
fn acceptance_4_end_to_end_improvement() {
    let f = fixture();
    let mme_cfg = MmeConfig::default();
    let cloud_aligned = aggregate(&f.dataset, &f.grid.aligned).unwrap();
    let cloud_unaligned = aggregate(&f.dataset, &f.noisy).unwrap();
    let mme_aligned = mean_map_entropy(&cloud_aligned, &mme_cfg).unwrap().mme;
    let mme_unaligned = mean_map_entropy(&cloud_unaligned, &mme_cfg).unwrap().mme;

    assert!(
        f.rmse_grid < 0.5 * f.rmse_unaligned,
        "aligned RMSE {:.3} not below 50% of unaligned {:.3}",
        f.rmse_grid,
        f.rmse_unaligned
    );
    assert!(
        mme_aligned < mme_unaligned,
        "MME aligned {mme_aligned:.4} not below unaligned {mme_unaligned:.4}"
    );
    assert!(
        f.build_secs <= 600.0,
        "fixture build took {:.0}s, budget 600s",
        f.build_secs
    );
    println!(
        "ACCEPTANCE 4 end-to-end improvement: PASS (RMSE {:.3} vs {:.3} m, MME {:.4} vs {:.4}, {:.0}s)",
        f.rmse_grid, f.rmse_unaligned, mme_aligned, mme_unaligned, f.build_secs
    );
}

// ---------------------------------------------------------------------
// 5. Baseline ordering
// ---------------------------------------------------------------------

#[test]
fn acceptance_5_baseline_ordering() {
    let f = fixture();
    assert!(
        f.rmse_grid <= f.rmse_icp,
        "grid RMSE {:.3} not <= ICP RMSE {:.3}",
        f.rmse_grid,
        f.rmse_icp
    );

    // Controlled sub-experiment: initial guesses displaced by 1.9 m
    // longitudinally on a 3 m post lattice. ICP locks onto the wrong
    // lattice alignment; grid either recovers the true transform or
    // flags the peak, never emitting a confident wrong edge.
    let scene = SceneSpec {
        corridor_length: 400.0,
        guardrail_post_spacing: 3.0,
        reflector_jitter: 0.10,
        ..SceneSpec::default()
    };
    let mut drives = vec![
        DriveSpec::new("a", Direction::Forward, 7),
        DriveSpec::new("b", Direction::Forward, 8),
    ];
    for d in &mut drives {
        d.gnss_sigma_xy = 0.0;
        d.gnss_sigma_theta = 0.0;
        d.gnss_bias_walk_sigma = 0.0;
    }
    let dataset = generate_fleet(&scene, &drives, 11).unwrap();
    let window = SearchWindow::default();
    let icp_params = IcpParams::default();
    let n_pairs = 20.min(dataset.drives[0].records.len().min(dataset.drives[1].records.len()) - 5);

    let mut icp_wrong = 0usize;
    let mut grid_wrong = 0usize;
    let mut grid_recovered = 0usize;
    for i in 5..5 + n_pairs {
        let ra = &dataset.drives[0].records[i];
        let rb = &dataset.drives[1].records[i];
        let truth_rel = relative_transform(&ra.truth, &rb.truth);
        let mut guess = truth_rel;
        guess.dx += 1.9;

        let icp = icp_baseline(&ra.scan, &rb.scan, &guess, &icp_params).unwrap();
        if icp.converged {
            let err = ((icp.transform.dx - truth_rel.dx).powi(2)
                + (icp.transform.dy - truth_rel.dy).powi(2))
            .sqrt();
            if err > 0.5 {
                icp_wrong += 1;
            }
        }

        let (res, _) =
            correlate_with_covariance(&ra.scan, &rb.scan, &guess, &window, 0.05).unwrap();
        if !res.on_boundary {
            let err = ((res.transform.dx - truth_rel.dx).powi(2)
                + (res.transform.dy - truth_rel.dy).powi(2))
            .sqrt();
            if err > 0.5 {
                grid_wrong += 1;
            } else {
                grid_recovered += 1;
            }
        }
    }
    assert!(
        icp_wrong >= 1,
        "expected at least one converged-but-wrong ICP edge out of {n_pairs}"
    );
    assert_eq!(
        grid_wrong, 0,
        "grid produced {grid_wrong} confident wrong edges"
    );
    println!(
        "ACCEPTANCE 5 baseline ordering: PASS (RMSE grid {:.3} <= icp {:.3}; lattice test: icp wrong {}/{n_pairs}, grid wrong 0, grid recovered {grid_recovered})",
        f.rmse_grid, f.rmse_icp, icp_wrong
    );
}

// ---------------------------------------------------------------------
// 6. Huber robustness
// ---------------------------------------------------------------------

#[test]
fn acceptance_6_huber_robustness() {
    let f = fixture();
    // Corrupt 5% of the accepted grid edges by 5 m.
    let mut edges = f.grid.edges.clone();
    let mut accepted_seen = 0usize;
    let mut corrupted = 0usize;
    for e in edges.iter_mut() {
        if let EdgeData::Grid(r) = &mut e.data {
            if !r.on_boundary && r.z_score >= 3.0 {
                accepted_seen += 1;
                if accepted_seen % 20 == 0 {
                    r.transform.dx += 5.0;
                    corrupted += 1;
                }
            }
        }
    }
    assert!(corrupted > 0);

    let huber_cfg = SolverConfig {
        z_weight_constant: 0.4,
        ..SolverConfig::default()
    };
    let quad_cfg = SolverConfig {
        robust: false,
        ..huber_cfg.clone()
    };
    let (_, huber_table) = solve_from_edges(&f.dataset, &edges, &huber_cfg).unwrap();
    let (_, quad_table) = solve_from_edges(&f.dataset, &edges, &quad_cfg).unwrap();
    let (rmse_huber, _) = pose_rmse(&huber_table, &f.truth).unwrap();
    let (rmse_quad, _) = pose_rmse(&quad_table, &f.truth).unwrap();

    assert!(
        rmse_huber < f.rmse_unaligned,
        "huber RMSE {rmse_huber:.3} not below unaligned {:.3}",
        f.rmse_unaligned
    );
    assert!(
        rmse_quad > rmse_huber,
        "quadratic RMSE {rmse_quad:.3} not worse than huber {rmse_huber:.3}"
    );
    println!(
        "ACCEPTANCE 6 huber robustness: PASS ({corrupted} outlier edges; huber {rmse_huber:.3} < unaligned {:.3}, quadratic {rmse_quad:.3} > huber)",
        f.rmse_unaligned
    );
}

// ---------------------------------------------------------------------
// 7. Lateral metric correctness
// ---------------------------------------------------------------------

#[test]
fn acceptance_7_lateral_metric_correctness() {
    let straight = |class: LineClass, y: f64| ClassifiedPolyline {
        class,
        pts: vec![[0.0, y], [100.0, y]],
    };
    let reference = vec![[0.0, 0.0], [100.0, 0.0]];
    let roi = LateralRoi {
        s_min: 0.0,
        s_max: 100.0,
        max_lateral: 30.0,
    };

    // Constant lateral shift b = 0.4 m on all classes.
    let truth = vec![
        straight(LineClass::Solid, 2.0),
        straight(LineClass::Dashed, 5.5),
        straight(LineClass::Boundary, 9.0),
    ];
    let generated: Vec<ClassifiedPolyline> = truth
        .iter()
        .map(|p| ClassifiedPolyline {
            class: p.class,
            pts: p.pts.iter().map(|q| [q[0], q[1] + 0.4]).collect(),
        })
        .collect();
    let r = lateral_errors(&generated, &truth, &reference, 1.0, &roi).unwrap();
    assert!(
        (r.overall.offset_error - 0.4).abs() <= 1e-6,
        "offset {} != 0.400",
        r.overall.offset_error
    );
    assert!(
        r.overall.non_offset_error.abs() <= 1e-6,
        "non-offset {} != 0",
        r.overall.non_offset_error
    );

    // Squeezed dividers: truth +-1.75 m, generated +-1.60 m.
    let truth2 = vec![
        straight(LineClass::Dashed, 1.75),
        straight(LineClass::Dashed, -1.75),
    ];
    let generated2 = vec![
        straight(LineClass::Dashed, 1.60),
        straight(LineClass::Dashed, -1.60),
    ];
    let r2 = lateral_errors(&generated2, &truth2, &reference, 1.0, &roi).unwrap();
    assert!((r2.overall.offset_error - 0.0).abs() <= 1e-12);
    assert!((r2.overall.non_offset_error - 0.15).abs() <= 1e-12);

    println!(
        "ACCEPTANCE 7 lateral metric correctness: PASS (shift: offset {:.6}, non-offset {:.2e}; squeeze: {:.1e}, {})",
        r.overall.offset_error,
        r.overall.non_offset_error,
        r2.overall.offset_error,
        r2.overall.non_offset_error
    );
}

// ---------------------------------------------------------------------
// 8. Occupancy sharpening
// ---------------------------------------------------------------------

fn post_hit_fraction(
    dataset: &FleetDataset,
    table: &PoseTable,
    min_count: u32,
    radius: f64,
) -> f64 {
    let cloud = aggregate(dataset, table).unwrap();
    let hist = histogram(&cloud, 0.1).unwrap();
    let maxima = hist.local_maxima(min_count);
    let mut hit = 0usize;
    for post in &dataset.geometry.posts {
        let found = maxima.iter().any(|m| {
            (m[0] - post.pos[0]).powi(2) + (m[1] - post.pos[1]).powi(2) <= radius * radius
        });
        if found {
            hit += 1;
        }
    }
    hit as f64 / dataset.geometry.posts.len() as f64
}

#[test]
fn acceptance_8_occupancy_sharpening() {
    let f = fixture();
    let aligned_frac = post_hit_fraction(&f.dataset, &f.grid.aligned, 4, 0.2);
    let unaligned_frac = post_hit_fraction(&f.dataset, &f.noisy, 4, 0.2);
    assert!(
        aligned_frac >= 0.95,
        "aligned map localizes only {:.1}% of posts",
        aligned_frac * 100.0
    );
    assert!(
        unaligned_frac < 0.95,
        "unaligned map unexpectedly passes with {:.1}%",
        unaligned_frac * 100.0
    );
    println!(
        "ACCEPTANCE 8 occupancy sharpening: PASS (aligned {:.1}% >= 95%, unaligned {:.1}%)",
        aligned_frac * 100.0,
        unaligned_frac * 100.0
    );
}

// ---------------------------------------------------------------------
// 9. Determinism
// ---------------------------------------------------------------------

#[test]
fn acceptance_9_determinism() {
    let base = tempfile::tempdir().unwrap();
    let config_body = r#"
schema_version = 1
seed = 777

[scene]
corridor_length = 200.0

[sampling]
rate = 0.2

[[drive]]
drive_id = "d0"
direction = "forward"

[[drive]]
drive_id = "d1"
direction = "reverse"

[[drive]]
drive_id = "d2"
direction = "forward"
"#;

    let run = |name: &str, workers: usize| -> std::path::PathBuf {
        let dir = base.path().join(name);
        std::fs::create_dir_all(&dir).unwrap();
        let config_path = dir.join("radalign.toml");
        let config = format!(
            "{config_body}\n[paths]\ndataset_dir = \"{}\"\nartifacts_dir = \"{}\"\n",
            dir.join("dataset").display(),
            dir.join("artifacts").display()
        );
        std::fs::write(&config_path, config).unwrap();
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_radalign"))
            .args([
                "--config",
                config_path.to_str().unwrap(),
                "--workers",
                &workers.to_string(),
                "pipeline",
            ])
            .status()
            .unwrap();
        assert!(status.success(), "pipeline run '{name}' failed");
        dir
    };

    let a = run("w1", 1);
    let b = run("w1_again", 1);
    let c = run("w3", 3);

    let mut compared = 0usize;
    for rel in [
        "dataset/scene.json",
        "dataset/drive_d0.jsonl",
        "dataset/drive_d1.jsonl",
        "dataset/drive_d2.jsonl",
        "artifacts/pairs.csv",
        "artifacts/edges.csv",
        "artifacts/aligned_poses.csv",
        "artifacts/optimization_report.json",
        "artifacts/occupancy_aligned.pgm",
        "artifacts/occupancy_aligned.pgw",
        "artifacts/occupancy_unaligned.pgm",
        "artifacts/occupancy_unaligned.pgw",
        "artifacts/metrics.json",
        "artifacts/lateral_series.csv",
    ] {
        let fa = std::fs::read(a.join(rel)).unwrap();
        let fb = std::fs::read(b.join(rel)).unwrap();
        let fc = std::fs::read(c.join(rel)).unwrap();
        assert_eq!(fa, fb, "repeat run differs in {rel}");
        assert_eq!(fa, fc, "worker-count run differs in {rel}");
        compared += 1;
    }
    println!(
        "ACCEPTANCE 9 determinism: PASS ({compared} artifacts byte-identical across reruns and worker counts)"
    );
}
