//! Shared test support: a deliberately naive reference implementation
//! of the grid correlation, plus scan generators.
//!
//! The oracle re-derives everything from the documented conventions of
//! `radalign::correlation` (lattice-aligned frames, canonical cell
//! centers, 3-sigma-truncated splats, Eq.-style shifted cell products)
//! and shares no code with the optimized path: grids are rebuilt from
//! scratch for every single (rotation, x, y) volume entry.

use radalign::correlation::SearchWindow;
use radalign::geometry::{Point2, Transform2};
use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Dense grid used only by the oracle.
pub struct NaiveGrid {
    pub lattice_x: i64,
    pub lattice_y: i64,
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    pub values: Vec<f64>,
}

impl NaiveGrid {
    fn value(&self, ix: i64, iy: i64) -> f64 {
        if ix < 0 || iy < 0 || ix >= self.nx as i64 || iy >= self.ny as i64 {
            0.0
        } else {
            self.values[ix as usize * self.ny + iy as usize]
        }
    }
}

/// Splat `points` on the lattice-aligned frame spanning
/// `[min - pad, max + pad]`, cells outer, points inner.
pub fn naive_splat(
    points: &[Point2],
    min: Point2,
    max: Point2,
    pad: f64,
    cell: f64,
    point_covariance: f64,
) -> NaiveGrid {
    let lattice_x = ((min[0] - pad) / cell).floor() as i64;
    let lattice_y = ((min[1] - pad) / cell).floor() as i64;
    let hi_x = ((max[0] + pad) / cell).ceil() as i64;
    let hi_y = ((max[1] + pad) / cell).ceil() as i64;
    let nx = (hi_x - lattice_x + 1) as usize;
    let ny = (hi_y - lattice_y + 1) as usize;

    let sigma2 = point_covariance;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma2);
    let inv_2s2 = 1.0 / (2.0 * sigma2);
    let r_trunc2 = 9.0 * sigma2;

    let mut values = vec![0.0f64; nx * ny];
    for ix in 0..nx {
        for iy in 0..ny {
            let cx = (lattice_x + ix as i64) as f64 * cell + 0.5 * cell;
            let cy = (lattice_y + iy as i64) as f64 * cell + 0.5 * cell;
            let mut v = 0.0;
            for p in points {
                let dx = cx - p[0];
                let dy = cy - p[1];
                let d2 = dx * dx + dy * dy;
                if d2 <= r_trunc2 {
                    v += norm * (-d2 * inv_2s2).exp();
                }
            }
            values[ix * ny + iy] = v;
        }
    }
    NaiveGrid {
        lattice_x,
        lattice_y,
        nx,
        ny,
        cell,
        values,
    }
}

/// Full correlation volume, recomputing both grids for every
/// (rotation, x, y) entry. Returns values indexed `[ir][ix][iy]` like
/// `CorrelationVolume`.
pub fn naive_correlation_volume(
    scan1: &[Point2],
    scan2: &[Point2],
    guess: &Transform2,
    window: &SearchWindow,
    point_covariance: f64,
) -> Vec<f64> {
    let (nr, nl) = window.half_counts().unwrap();
    let cell = window.step_l;

    let guessed: Vec<Point2> = scan2.iter().map(|p| guess.transform_point(*p)).collect();
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in scan1.iter().chain(guessed.iter()) {
        for k in 0..2 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    let max_radius = guessed
        .iter()
        .map(|p| ((p[0] - guess.dx).powi(2) + (p[1] - guess.dy).powi(2)).sqrt())
        .fold(0.0, f64::max);
    // Deliberately more generous padding than the optimized path: the
    // result must not depend on grid extent.
    let pad = window.eps_l + 3.0 * point_covariance.sqrt() + max_radius * window.eps_r + 5.0 * cell;

    let side = 2 * nl as i64 + 1;
    let mut out = vec![0.0f64; (2 * nr + 1) * (side * side) as usize];
    for ir in 0..=2 * nr {
        let rot_offset = (ir as f64 - nr as f64) * window.step_r;
        let angle = guess.dtheta - rot_offset;
        for ox in -(nl as i64)..=nl as i64 {
            for oy in -(nl as i64)..=nl as i64 {
                // Rebuild everything for this single entry.
                let g1 = naive_splat(scan1, min, max, pad, cell, point_covariance);
                let (s, c) = angle.sin_cos();
                let cloud: Vec<Point2> = scan2
                    .iter()
                    .map(|p| {
                        [
                            c * p[0] - s * p[1] + guess.dx,
                            s * p[0] + c * p[1] + guess.dy,
                        ]
                    })
                    .collect();
                let g2 = naive_splat(&cloud, min, max, pad, cell, point_covariance);

                // rho = sum_ij G1[i, j] * G2[i + x, j + y], with indices
                // anchored to the shared world lattice.
                let mut rho = 0.0;
                for i in 0..g1.nx as i64 {
                    for j in 0..g1.ny as i64 {
                        let v1 = g1.value(i, j);
                        let gi = g1.lattice_x + i + ox - g2.lattice_x;
                        let gj = g1.lattice_y + j + oy - g2.lattice_y;
                        rho += v1 * g2.value(gi, gj);
                    }
                }
                let idx = (ir as i64 * side + (ox + nl as i64)) * side + (oy + nl as i64);
                out[idx as usize] = rho;
            }
        }
    }
    out
}

pub fn random_scan(n: usize, extent: f64, rng: &mut StdRng) -> Vec<Point2> {
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-extent..extent),
                rng.gen_range(-extent..extent),
            ]
        })
        .collect()
}

/// Apply a rigid transform to every point.
pub fn transform_points(points: &[Point2], t: &Transform2) -> Vec<Point2> {
    points.iter().map(|p| t.transform_point(*p)).collect()
}

/// Add iid Gaussian noise per axis.
pub fn add_noise(points: &[Point2], sigma: f64, rng: &mut StdRng) -> Vec<Point2> {
    if sigma <= 0.0 {
        return points.to_vec();
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    points
        .iter()
        .map(|p| [p[0] + normal.sample(rng), p[1] + normal.sample(rng)])
        .collect()
}
