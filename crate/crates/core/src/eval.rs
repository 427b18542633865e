//! Quantitative map and pose quality metrics.
//!
//! * Mean Map Entropy over the global radar cloud (2D form; lower
//!   means crisper structure).
//! * Pose RMSE against the synthetic ground truth.
//! * Lateral offset / non-offset errors between generated and
//!   ground-truth polylines, sampled stepwise along a reference line.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fleet::{ClassifiedPolyline, LineClass};
use crate::geometry::{wrap_angle, Point2};
use crate::mapgen::{GlobalCloud, PoseTable};
use crate::{Error, Result};

/// Mean Map Entropy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmeConfig {
    /// Neighbor search radius, meters.
    pub radius: f64,
    /// Minimum neighbor count (excluding the point itself) for a point
    /// to contribute.
    pub min_neighbors: usize,
}

impl Default for MmeConfig {
    fn default() -> Self {
        MmeConfig {
            radius: 1.0,
            min_neighbors: 5,
        }
    }
}

/// Covariance regularization preventing -inf entropies on collinear
/// neighborhoods, m^2.
const MME_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmeReport {
    pub mme: f64,
    pub evaluated_points: usize,
    pub skipped_points: usize,
}

/// Mean over points of the differential entropy of the local 2D
/// neighborhood covariance: `h = 0.5 * ln((2 pi e)^2 * det(Cov + eps I))`.
pub fn mean_map_entropy(cloud: &GlobalCloud, cfg: &MmeConfig) -> Result<MmeReport> {
    if !(cfg.radius > 0.0) {
        return Err(Error::InvalidInput("mme radius must be > 0".into()));
    }
    let pts = &cloud.points;
    if pts.len() < cfg.min_neighbors + 1 {
        return Err(Error::UndefinedMme);
    }

    // Bucket grid with cell = radius; neighbors live in the 3x3 block.
    let cell = cfg.radius;
    let key = |p: &Point2| -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    };
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }

    let r2 = cfg.radius * cfg.radius;
    let mut sum = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    let ln_2pie = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();

    let mut neighborhood: Vec<usize> = Vec::new();
    for p in pts.iter() {
        neighborhood.clear();
        let (kx, ky) = key(p);
        for nx in kx - 1..=kx + 1 {
            for ny in ky - 1..=ky + 1 {
                if let Some(b) = buckets.get(&(nx, ny)) {
                    for &j in b {
                        let q = pts[j];
                        let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
                        if d2 <= r2 {
                            neighborhood.push(j);
                        }
                    }
                }
            }
        }
        // The neighborhood always contains the point itself.
        if neighborhood.len() < cfg.min_neighbors + 1 {
            skipped += 1;
            continue;
        }
        let n = neighborhood.len() as f64;
        let mut mean = [0.0f64; 2];
        for &j in &neighborhood {
            mean[0] += pts[j][0];
            mean[1] += pts[j][1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let (mut cxx, mut cxy, mut cyy) = (0.0f64, 0.0, 0.0);
        for &j in &neighborhood {
            let dx = pts[j][0] - mean[0];
            let dy = pts[j][1] - mean[1];
            cxx += dx * dx;
            cxy += dx * dy;
            cyy += dy * dy;
        }
        let denom = n - 1.0;
        cxx = cxx / denom + MME_EPSILON;
        cyy = cyy / denom + MME_EPSILON;
        cxy /= denom;
        let det = cxx * cyy - cxy * cxy;
        // det > 0 is guaranteed by the epsilon on the diagonal.
        sum += 0.5 * (2.0 * ln_2pie + det.ln());
        evaluated += 1;
    }

    if evaluated == 0 {
        return Err(Error::UndefinedMme);
    }
    Ok(MmeReport {
        mme: sum / evaluated as f64,
        evaluated_points: evaluated,
        skipped_points: skipped,
    })
}

/// Translational and angular RMSE between two pose tables of identical
/// shape, e.g. aligned vs ground truth.
pub fn pose_rmse(a: &PoseTable, b: &PoseTable) -> Result<(f64, f64)> {
    if a.poses.len() != b.poses.len()
        || a.poses
            .iter()
            .zip(b.poses.iter())
            .any(|(x, y)| x.len() != y.len())
    {
        return Err(Error::Mismatch("pose table shapes differ".into()));
    }
    let mut n = 0usize;
    let mut trans = 0.0;
    let mut rot = 0.0;
    for (da, db) in a.poses.iter().zip(b.poses.iter()) {
        for (pa, pb) in da.iter().zip(db.iter()) {
            trans += (pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2);
            rot += wrap_angle(pa[2] - pb[2]).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Mismatch("empty pose tables".into()));
    }
    Ok(((trans / n as f64).sqrt(), (rot / n as f64).sqrt()))
}

/// Region of interest of the lateral evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateralRoi {
    /// Arclength range along the reference line.
    pub s_min: f64,
    pub s_max: f64,
    /// Intersections beyond this |lateral| are ignored.
    pub max_lateral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OffsetStats {
    pub offset_error: f64,
    pub non_offset_error: f64,
}

/// One reference-line station of the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Arclength along the reference line, meters.
    pub s: f64,
    /// Mean signed (generated - truth) lateral difference, when any
    /// association exists at this step.
    pub offset: Option<f64>,
    /// Mean |difference - offset| after removing the per-step offset.
    pub non_offset: Option<f64>,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateralErrorReport {
    pub per_class: BTreeMap<LineClass, OffsetStats>,
    pub overall: OffsetStats,
    pub series: Vec<StepRecord>,
    pub steps_total: usize,
    pub steps_with_pairs: usize,
}

/// Stepwise lateral comparison of generated vs ground-truth polylines.
///
/// At every arclength step of the reference line, the perpendicular
/// line is intersected with both polyline sets; intersections are
/// associated per class by nearest lateral position (greedy,
/// one-to-one). The per-step offset is the mean signed difference of
/// the associated pairs; the non-offset error is the mean residual
/// after removing it.
pub fn lateral_errors(
    generated: &[ClassifiedPolyline],
    truth: &[ClassifiedPolyline],
    reference: &[Point2],
    step: f64,
    roi: &LateralRoi,
) -> Result<LateralErrorReport> {
    if reference.len() < 2 {
        return Err(Error::InvalidInput(
            "reference line needs at least 2 points".into(),
        ));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidInput("step must be > 0".into()));
    }

    let stations = walk_reference(reference, step, roi);
    let mut series = Vec::with_capacity(stations.len());
    let mut class_acc: BTreeMap<LineClass, (f64, f64, usize)> = BTreeMap::new();
    let (mut overall_off, mut overall_non, mut steps_with_pairs) = (0.0, 0.0, 0usize);

    for (s, point, normal) in stations.iter().copied() {
        // Lateral positions of every intersection, per class.
        let mut pairs_at_step: Vec<(LineClass, f64)> = Vec::new(); // (class, diff)
        for class in [LineClass::Solid, LineClass::Dashed, LineClass::Boundary] {
            let gen_lat = intersections(generated, class, point, normal, roi.max_lateral);
            let truth_lat = intersections(truth, class, point, normal, roi.max_lateral);
            for (g, t) in associate(&gen_lat, &truth_lat) {
                pairs_at_step.push((class, g - t));
            }
        }

        if pairs_at_step.is_empty() {
            series.push(StepRecord {
                s,
                offset: None,
                non_offset: None,
                pairs: 0,
            });
            continue;
        }

        let n = pairs_at_step.len() as f64;
        let offset = pairs_at_step.iter().map(|(_, d)| d).sum::<f64>() / n;
        let non_offset = pairs_at_step
            .iter()
            .map(|(_, d)| (d - offset).abs())
            .sum::<f64>()
            / n;
        overall_off += offset;
        overall_non += non_offset;
        steps_with_pairs += 1;
        series.push(StepRecord {
            s,
            offset: Some(offset),
            non_offset: Some(non_offset),
            pairs: pairs_at_step.len(),
        });

        // Per-class step statistics computed against the class's own
        // per-step offset.
        for class in [LineClass::Solid, LineClass::Dashed, LineClass::Boundary] {
            let ds: Vec<f64> = pairs_at_step
                .iter()
                .filter(|(c, _)| *c == class)
                .map(|(_, d)| *d)
                .collect();
            if ds.is_empty() {
                continue;
            }
            let off = ds.iter().sum::<f64>() / ds.len() as f64;
            let non = ds.iter().map(|d| (d - off).abs()).sum::<f64>() / ds.len() as f64;
            let e = class_acc.entry(class).or_insert((0.0, 0.0, 0));
            e.0 += off;
            e.1 += non;
            e.2 += 1;
        }
    }

    if steps_with_pairs == 0 {
        return Err(Error::EmptyLateralOverlap);
    }

    let per_class = class_acc
        .into_iter()
        .map(|(c, (off, non, n))| {
            (
                c,
                OffsetStats {
                    offset_error: off / n as f64,
                    non_offset_error: non / n as f64,
                },
            )
        })
        .collect();

    Ok(LateralErrorReport {
        per_class,
        overall: OffsetStats {
            offset_error: overall_off / steps_with_pairs as f64,
            non_offset_error: overall_non / steps_with_pairs as f64,
        },
        steps_total: stations.len(),
        steps_with_pairs,
        series,
    })
}

/// Stations (arclength, point, unit normal) along the reference line.
fn walk_reference(reference: &[Point2], step: f64, roi: &LateralRoi) -> Vec<(f64, Point2, Point2)> {
    let mut cum = Vec::with_capacity(reference.len());
    let mut total = 0.0;
    cum.push(0.0);
    for w in reference.windows(2) {
        total += ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cum.push(total);
    }

    let mut out = Vec::new();
    let mut s = roi.s_min.max(0.0);
    let s_end = roi.s_max.min(total);
    let mut seg = 0usize;
    while s <= s_end + 1e-9 {
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        if seg_len > 0.0 {
            let u = ((s - cum[seg]) / seg_len).clamp(0.0, 1.0);
            let a = reference[seg];
            let b = reference[seg + 1];
            let p = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
            let t = [(b[0] - a[0]) / seg_len, (b[1] - a[1]) / seg_len];
            let normal = [-t[1], t[0]];
            out.push((s, p, normal));
        }
        s += step;
    }
    out
}

/// Lateral coordinates of all intersections of class `class` polylines
/// with the lateral line through `point` along `normal`.
fn intersections(
    polylines: &[ClassifiedPolyline],
    class: LineClass,
    point: Point2,
    normal: Point2,
    max_lateral: f64,
) -> Vec<f64> {
    let mut out = Vec::new();
    for pl in polylines.iter().filter(|p| p.class == class) {
        for (si, w) in pl.pts.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            // Solve a + u (b - a) = point + v * normal.
            let dx = b[0] - a[0];
            let dy = b[1] - a[1];
            let det = dx * (-normal[1]) - dy * (-normal[0]);
            if det.abs() < 1e-12 {
                continue; // segment parallel to the lateral line
            }
            let rx = point[0] - a[0];
            let ry = point[1] - a[1];
            let u = (rx * (-normal[1]) - ry * (-normal[0])) / det;
            let v = (dx * ry - dy * rx) / det;
            // Half-open segment range so shared vertices count once.
            let last = si + 2 == pl.pts.len();
            let in_seg = u >= 0.0 && (u < 1.0 || (last && u <= 1.0));
            if in_seg && v.abs() <= max_lateral {
                out.push(v);
            }
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Greedy nearest one-to-one association of two lateral position
/// lists, returning (generated, truth) pairs.
fn associate(gen: &[f64], truth: &[f64]) -> Vec<(f64, f64)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, g) in gen.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            cand.push(((g - t).abs(), i, j));
        }
    }
    cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut used_g = vec![false; gen.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (_, i, j) in cand {
        if used_g[i] || used_t[j] {
            continue;
        }
        used_g[i] = true;
        used_t[j] = true;
        out.push((gen[i], truth[j]));
    }
    out
}
