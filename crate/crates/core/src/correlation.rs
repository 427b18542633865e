//! Grid-based scan correlation and a point-to-point ICP baseline.
//!
//! The registration kernel rasterizes scan 1 into a Gaussian-splatted
//! grid, sweeps scan 2 over a small set of rotations and integer-cell
//! translations, scores every candidate by cell-wise multiply-and-sum,
//! and reports the best transform together with the standard score of
//! its correlation peak.
//!
//! # Conventions
//!
//! These are pinned so that an independent reference implementation can
//! reproduce the correlation volume cell for cell:
//!
//! * Grids live on the global cell lattice: cell corner coordinates are
//!   integer multiples of the cell size, and the center of cell `i` is
//!   `(lattice_index + i) as f64 * cell + 0.5 * cell`.
//! * Splatting adds, for every scan point, the isotropic bivariate
//!   normal density (variance = `point_covariance` per axis) evaluated
//!   at each cell center within 3 sigma of the point; contributions
//!   accumulate in scan order.
//! * The rotation slice with axis value `r` splats scan 2 mapped by
//!   `p -> R(guess.dtheta - r) * p + (guess.dx, guess.dy)`.
//! * The volume entry at offsets `(r, x, y)` is
//!   `rho = sum_ij G1[i, j] * G2r[i + x, j + y]` over the in-bounds
//!   overlap, summed in ascending `(i + x, j + y)` order.
//!
//! With these conventions the volume axes read as the apparent motion
//! of scan 2's content relative to scan 1's: a scan 2 that equals
//! scan 1 translated by `d` and rotated by `a` (about the guess origin)
//! peaks at `(a, d)`. The reported transform composes the inverse of
//! that apparent motion with the initial guess, which is the corrected
//! relative pose between the two scan frames.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Point2, Transform2};
use crate::{Error, Result};

/// Default per-point covariance of the splat, m^2 per axis.
pub const DEFAULT_POINT_COVARIANCE: f64 = 0.05;

/// Placement of a grid on the global cell lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    /// Cell edge length, meters.
    pub cell_size: f64,
    /// Lattice index of cell (0, 0): its corner is at
    /// `(lattice_x as f64 * cell_size, lattice_y as f64 * cell_size)`.
    pub lattice_x: i64,
    pub lattice_y: i64,
    pub nx: usize,
    pub ny: usize,
}

impl GridFrame {
    /// Smallest lattice-aligned frame covering `[min, max]` inflated by
    /// `pad` on every side.
    pub fn covering(min: Point2, max: Point2, pad: f64, cell_size: f64) -> GridFrame {
        let lo_x = ((min[0] - pad) / cell_size).floor() as i64;
        let lo_y = ((min[1] - pad) / cell_size).floor() as i64;
        let hi_x = ((max[0] + pad) / cell_size).ceil() as i64;
        let hi_y = ((max[1] + pad) / cell_size).ceil() as i64;
        GridFrame {
            cell_size,
            lattice_x: lo_x,
            lattice_y: lo_y,
            nx: (hi_x - lo_x + 1) as usize,
            ny: (hi_y - lo_y + 1) as usize,
        }
    }

    /// World coordinates of the corner of cell (0, 0).
    pub fn origin(&self) -> Point2 {
        [
            self.lattice_x as f64 * self.cell_size,
            self.lattice_y as f64 * self.cell_size,
        ]
    }

    /// Center of cell (ix, iy), computed canonically on the lattice.
    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        [
            (self.lattice_x + ix as i64) as f64 * self.cell_size + 0.5 * self.cell_size,
            (self.lattice_y + iy as i64) as f64 * self.cell_size + 0.5 * self.cell_size,
        ]
    }

    /// Cell containing the point, which may lie outside the grid.
    pub fn cell_of(&self, p: Point2) -> (i64, i64) {
        (
            (p[0] / self.cell_size).floor() as i64 - self.lattice_x,
            (p[1] / self.cell_size).floor() as i64 - self.lattice_y,
        )
    }
}

/// Gaussian-splatted raster of one scan.
#[derive(Debug, Clone)]
pub struct SplatGrid {
    pub frame: GridFrame,
    /// Row-major by x: `values[ix * ny + iy]`, all >= 0 and finite.
    pub values: Vec<f64>,
}

impl SplatGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.frame.ny + iy]
    }

    /// Total of `value * cell_area` over all cells.
    pub fn mass(&self) -> f64 {
        let area = self.frame.cell_size * self.frame.cell_size;
        self.values.iter().sum::<f64>() * area
    }
}

/// Splat a scan onto a frame chosen to cover it plus the 3-sigma
/// truncation margin.
pub fn splat(scan: &[Point2], cell_size: f64, point_covariance: f64) -> Result<SplatGrid> {
    if scan.is_empty() {
        return Err(Error::EmptyScan);
    }
    if !(cell_size > 0.0) || !(point_covariance > 0.0) {
        return Err(Error::InvalidInput(
            "cell_size and point_covariance must be > 0".into(),
        ));
    }
    let (min, max) = bounding_box(scan);
    let pad = 3.0 * point_covariance.sqrt() + cell_size;
    let frame = GridFrame::covering(min, max, pad, cell_size);
    Ok(splat_into(&frame, scan, point_covariance))
}

/// Splat onto a caller-provided frame. Cells whose centers fall outside
/// the frame are silently dropped, so the frame must be padded by at
/// least the 3-sigma truncation radius for mass to be preserved.
pub fn splat_into(frame: &GridFrame, points: &[Point2], point_covariance: f64) -> SplatGrid {
    let mut values = vec![0.0f64; frame.nx * frame.ny];
    let sigma2 = point_covariance;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma2);
    let inv_2s2 = 1.0 / (2.0 * sigma2);
    let r_trunc2 = 9.0 * sigma2;
    let reach = (3.0 * sigma2.sqrt() / frame.cell_size).ceil() as i64 + 1;

    for p in points {
        let (cx, cy) = frame.cell_of(*p);
        for ix in (cx - reach).max(0)..=(cx + reach).min(frame.nx as i64 - 1) {
            for iy in (cy - reach).max(0)..=(cy + reach).min(frame.ny as i64 - 1) {
                let c = frame.cell_center(ix as usize, iy as usize);
                let dx = c[0] - p[0];
                let dy = c[1] - p[1];
                let d2 = dx * dx + dy * dy;
                if d2 <= r_trunc2 {
                    values[ix as usize * frame.ny + iy as usize] += norm * (-d2 * inv_2s2).exp();
                }
            }
        }
    }
    SplatGrid {
        frame: *frame,
        values,
    }
}

fn bounding_box(points: &[Point2]) -> (Point2, Point2) {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    (min, max)
}

/// Discrete search window of the correlation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchWindow {
    /// Maximum rotation offset, radians (default 1 degree).
    pub eps_r: f64,
    /// Maximum translation offset per axis, meters (default 2 m).
    pub eps_l: f64,
    /// Rotation step, radians (default 0.1 degree).
    pub step_r: f64,
    /// Translation step = grid cell size, meters (default 0.1 m).
    pub step_l: f64,
}

impl Default for SearchWindow {
    fn default() -> Self {
        SearchWindow {
            eps_r: 1.0f64.to_radians(),
            eps_l: 2.0,
            step_r: 0.1f64.to_radians(),
            step_l: 0.1,
        }
    }
}

impl SearchWindow {
    /// Half-counts (nr, nl): rotations span `-nr..=nr`, translations
    /// `-nl..=nl` per axis. Errors unless eps/step are integer
    /// multiples within 1e-9.
    pub fn half_counts(&self) -> Result<(usize, usize)> {
        if !(self.step_r > 0.0 && self.step_l > 0.0 && self.eps_r >= 0.0 && self.eps_l >= 0.0) {
            return Err(Error::InvalidInput(
                "search window steps must be > 0 and extents >= 0".into(),
            ));
        }
        let check = |eps: f64, step: f64, name: &str| -> Result<usize> {
            let n = (eps / step).round();
            if (n * step - eps).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "{name}: extent {eps} is not an integer multiple of step {step}"
                )));
            }
            Ok(n as usize)
        };
        Ok((
            check(self.eps_r, self.step_r, "eps_r/step_r")?,
            check(self.eps_l, self.step_l, "eps_l/step_l")?,
        ))
    }
}

/// The 3D correlation volume over (rotation, x, y) offsets.
#[derive(Debug, Clone)]
pub struct CorrelationVolume {
    /// Rotation half-count: slice index `ir` maps to offset
    /// `(ir - nr) * step_r`.
    pub nr: usize,
    /// Translation half-count per axis.
    pub nl: usize,
    pub step_r: f64,
    pub step_l: f64,
    /// Indexed `[ir][ix][iy]`, sizes (2nr+1, 2nl+1, 2nl+1).
    pub values: Vec<f64>,
}

impl CorrelationVolume {
    pub fn rot_count(&self) -> usize {
        2 * self.nr + 1
    }

    pub fn side(&self) -> usize {
        2 * self.nl + 1
    }

    pub fn value(&self, ir: usize, ix: usize, iy: usize) -> f64 {
        self.values[(ir * self.side() + ix) * self.side() + iy]
    }

    /// Offsets (rotation radians, dx meters, dy meters) of an index.
    pub fn offsets(&self, ir: usize, ix: usize, iy: usize) -> (f64, f64, f64) {
        (
            (ir as f64 - self.nr as f64) * self.step_r,
            (ix as f64 - self.nl as f64) * self.step_l,
            (iy as f64 - self.nl as f64) * self.step_l,
        )
    }
}

/// Peak of a correlation volume.
#[derive(Debug, Clone, Copy)]
pub struct VolumePeak {
    pub index: (usize, usize, usize),
    pub value: f64,
    pub mean: f64,
    pub std: f64,
    pub z_score: f64,
    pub on_boundary: bool,
}

/// Locate the argmax and its standard score. Ties prefer the smallest
/// |rotation|, then the smallest translation radius, then lexicographic
/// index order. A flat volume (zero standard deviation) is an error and
/// the pair must be discarded.
pub fn find_peak(volume: &CorrelationVolume) -> Result<VolumePeak> {
    let side = volume.side();
    let nrot = volume.rot_count();
    let mut best: Option<((usize, usize, usize), f64)> = None;
    for ir in 0..nrot {
        for ix in 0..side {
            for iy in 0..side {
                let v = volume.value(ir, ix, iy);
                let replace = match best {
                    None => true,
                    Some((bidx, bv)) => {
                        if v != bv {
                            v > bv
                        } else {
                            tie_key(volume, (ir, ix, iy)) < tie_key(volume, bidx)
                        }
                    }
                };
                if replace {
                    best = Some(((ir, ix, iy), v));
                }
            }
        }
    }
    let (index, value) = best.ok_or(Error::DegenerateCorrelation)?;

    let n = volume.values.len() as f64;
    let mean = volume.values.iter().sum::<f64>() / n;
    let var = volume
        .values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::DegenerateCorrelation);
    }

    let (ir, ix, iy) = index;
    let on_boundary = ir == 0
        || ir + 1 == nrot
        || ix == 0
        || ix + 1 == side
        || iy == 0
        || iy + 1 == side;
    Ok(VolumePeak {
        index,
        value,
        mean,
        std,
        z_score: (value - mean) / std,
        on_boundary,
    })
}

fn tie_key(v: &CorrelationVolume, idx: (usize, usize, usize)) -> (i64, i64, usize, usize, usize) {
    let (ir, ix, iy) = idx;
    let dr = (ir as i64 - v.nr as i64).abs();
    let dx = ix as i64 - v.nl as i64;
    let dy = iy as i64 - v.nl as i64;
    (dr, dx * dx + dy * dy, ir, ix, iy)
}

/// Outcome of correlating one scan pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    /// Corrected relative transform between the scan frames
    /// (initial guess composed with the inverse apparent offset).
    pub transform: Transform2,
    /// Peak correlation value.
    pub peak: f64,
    /// Standard score of the peak within its volume.
    pub z_score: f64,
    /// The argmax lies on the search window boundary; the true optimum
    /// may be outside the window and the edge should be dropped.
    pub on_boundary: bool,
}

/// Exhaustive grid correlation of two scans around an initial guess.
///
/// `window.step_l` doubles as the grid cell size. Returns the
/// correlation result and the full volume.
pub fn correlate(
    scan1: &[Point2],
    scan2: &[Point2],
    initial_guess: &Transform2,
    window: &SearchWindow,
) -> Result<(CorrelationResult, CorrelationVolume)> {
    correlate_with_covariance(scan1, scan2, initial_guess, window, DEFAULT_POINT_COVARIANCE)
}

pub fn correlate_with_covariance(
    scan1: &[Point2],
    scan2: &[Point2],
    initial_guess: &Transform2,
    window: &SearchWindow,
    point_covariance: f64,
) -> Result<(CorrelationResult, CorrelationVolume)> {
    if scan1.is_empty() || scan2.is_empty() {
        return Err(Error::EmptyScan);
    }
    if !(point_covariance > 0.0) {
        return Err(Error::InvalidInput("point_covariance must be > 0".into()));
    }
    let (nr, nl) = window.half_counts()?;
    let cell = window.step_l;

    // Common lattice frame: union bounding box of scan 1 and guessed
    // scan 2, padded so every rotation, translation and splat stays in
    // bounds.
    let guessed: Vec<Point2> = scan2
        .iter()
        .map(|p| initial_guess.transform_point(*p))
        .collect();
    let (min1, max1) = bounding_box(scan1);
    let (min2, max2) = bounding_box(&guessed);
    let min = [min1[0].min(min2[0]), min1[1].min(min2[1])];
    let max = [max1[0].max(max2[0]), max1[1].max(max2[1])];
    let rot_center = [initial_guess.dx, initial_guess.dy];
    let max_radius = guessed
        .iter()
        .map(|p| ((p[0] - rot_center[0]).powi(2) + (p[1] - rot_center[1]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    let pad = window.eps_l + 3.0 * point_covariance.sqrt() + max_radius * window.eps_r + 2.0 * cell;
    let frame = GridFrame::covering(min, max, pad, cell);

    let g1 = splat_into(&frame, scan1, point_covariance);

    let side = 2 * nl + 1;
    let nrot = 2 * nr + 1;
    let mut values = vec![0.0f64; nrot * side * side];

    let (ny, nx) = (frame.ny, frame.nx);

    // Nonzero column span of every G1 row: post scans are sparse, so
    // most row segments of the sweep can be skipped outright (skipping
    // zero terms leaves every sum bit-identical).
    let g1_spans: Vec<(i64, i64)> = (0..nx)
        .map(|i| {
            let row = &g1.values[i * ny..(i + 1) * ny];
            match row.iter().position(|&v| v != 0.0) {
                Some(lo) => {
                    let hi = row.iter().rposition(|&v| v != 0.0).unwrap();
                    (lo as i64, hi as i64)
                }
                None => (1, 0),
            }
        })
        .collect();

    for ir in 0..nrot {
        let rot_offset = (ir as f64 - nr as f64) * window.step_r;
        let angle = initial_guess.dtheta - rot_offset;
        let (s, c) = angle.sin_cos();
        let cloud: Vec<Point2> = scan2
            .iter()
            .map(|p| {
                [
                    c * p[0] - s * p[1] + initial_guess.dx,
                    s * p[0] + c * p[1] + initial_guess.dy,
                ]
            })
            .collect();
        let g2 = splat_into(&frame, &cloud, point_covariance);

        let slice = &mut values[ir * side * side..(ir + 1) * side * side];
        // rho(x, y) = sum over G2 nonzeros at (a, b) of v * G1[a-x, b-y];
        // iterating nonzeros in ascending index order makes each cell's
        // summation order identical to a dense ascending-(i, j) sweep.
        for a in 0..nx {
            let g2_row = &g2.values[a * ny..(a + 1) * ny];
            for (b, &v) in g2_row.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let a = a as i64;
                let b = b as i64;
                let nl = nl as i64;
                let ox_min = (-nl).max(a - (nx as i64 - 1));
                let ox_max = nl.min(a);
                let oy_min = (-nl).max(b - (ny as i64 - 1));
                let oy_max = nl.min(b);
                for ox in ox_min..=ox_max {
                    let i = (a - ox) as usize;
                    // j = b - oy runs ascending as oy descends; clip the
                    // window to the row's nonzero span.
                    let (span_lo, span_hi) = g1_spans[i];
                    let j_lo = (b - oy_max).max(span_lo);
                    let j_hi = (b - oy_min).min(span_hi);
                    if j_lo > j_hi {
                        continue;
                    }
                    let g1_row = &g1.values[i * ny..(i + 1) * ny];
                    let g1_seg = &g1_row[j_lo as usize..=j_hi as usize];
                    // Accumulator indices pair reversed with j.
                    let acc_lo = (b - j_hi + nl) as usize;
                    let acc_hi = (b - j_lo + nl) as usize;
                    let acc_row =
                        &mut slice[(ox + nl) as usize * side..][acc_lo..=acc_hi];
                    for (acc, &g) in acc_row.iter_mut().rev().zip(g1_seg.iter()) {
                        *acc += v * g;
                    }
                }
            }
        }
    }

    let volume = CorrelationVolume {
        nr,
        nl,
        step_r: window.step_r,
        step_l: window.step_l,
        values,
    };
    let peak = find_peak(&volume)?;
    let (rot, ux, uy) = volume.offsets(peak.index.0, peak.index.1, peak.index.2);

    // Undo the apparent motion M = [rotate by `rot` about the guess
    // origin, then translate by u]: corrected = M^-1 o guess.
    let (s, c) = rot.sin_cos();
    let transform = Transform2 {
        dx: initial_guess.dx - (c * ux + s * uy),
        dy: initial_guess.dy - (-s * ux + c * uy),
        dtheta: wrap_angle(initial_guess.dtheta - rot),
    };

    Ok((
        CorrelationResult {
            transform,
            peak: peak.value,
            z_score: peak.z_score,
            on_boundary: peak.on_boundary,
        },
        volume,
    ))
}

/// Parameters of the ICP baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iter: usize,
    pub tol: f64,
    pub max_corr_dist: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iter: 50,
            tol: 1e-6,
            max_corr_dist: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub transform: Transform2,
    pub converged: bool,
    pub iterations: usize,
}

/// Classic point-to-point ICP with a closed-form SE(2) update per
/// iteration. Serves as the comparison baseline for the grid method.
pub fn icp_baseline(
    scan1: &[Point2],
    scan2: &[Point2],
    initial_guess: &Transform2,
    params: &IcpParams,
) -> Result<IcpResult> {
    if scan1.len() < 3 || scan2.len() < 3 {
        return Err(Error::InvalidInput(
            "icp needs at least 3 points per scan".into(),
        ));
    }
    let mut t = *initial_guess;
    let max_d2 = params.max_corr_dist * params.max_corr_dist;

    for iter in 0..params.max_iter {
        // Correspondences: nearest scan1 point within range.
        let mut pairs: Vec<(Point2, Point2)> = Vec::new();
        for p in scan2 {
            let m = t.transform_point(*p);
            let mut best = (f64::INFINITY, [0.0, 0.0]);
            for q in scan1 {
                let d2 = (q[0] - m[0]).powi(2) + (q[1] - m[1]).powi(2);
                if d2 < best.0 {
                    best = (d2, *q);
                }
            }
            if best.0 <= max_d2 {
                pairs.push((m, best.1));
            }
        }
        if pairs.len() < 3 {
            return Ok(IcpResult {
                transform: t,
                converged: false,
                iterations: iter,
            });
        }

        // Closed-form least-squares SE(2) alignment of the pairs.
        let n = pairs.len() as f64;
        let mut mc = [0.0f64; 2];
        let mut tc = [0.0f64; 2];
        for (m, q) in &pairs {
            mc[0] += m[0];
            mc[1] += m[1];
            tc[0] += q[0];
            tc[1] += q[1];
        }
        mc[0] /= n;
        mc[1] /= n;
        tc[0] /= n;
        tc[1] /= n;
        let (mut sxx, mut sxy) = (0.0f64, 0.0f64);
        for (m, q) in &pairs {
            let (mx, my) = (m[0] - mc[0], m[1] - mc[1]);
            let (qx, qy) = (q[0] - tc[0], q[1] - tc[1]);
            sxx += mx * qx + my * qy;
            sxy += mx * qy - my * qx;
        }
        let dth = sxy.atan2(sxx);
        let (s, c) = dth.sin_cos();
        let update = Transform2 {
            dx: tc[0] - (c * mc[0] - s * mc[1]),
            dy: tc[1] - (s * mc[0] + c * mc[1]),
            dtheta: dth,
        };
        t = update.compose(&t);

        let delta = update
            .dx
            .abs()
            .max(update.dy.abs())
            .max(update.dtheta.abs());
        if delta < params.tol {
            return Ok(IcpResult {
                transform: t,
                converged: true,
                iterations: iter + 1,
            });
        }
    }
    Ok(IcpResult {
        transform: t,
        converged: false,
        iterations: params.max_iter,
    })
}
