//! Deterministic synthetic highway fleet generator.
//!
//! Stands in for a proprietary fleet recording: a straight divided
//! highway corridor lined with guardrail posts (the dominant radar
//! feature), driven by several vehicles per direction. Every drive
//! carries ground-truth poses, GNSS-degraded poses, per-pose radar
//! scans of the posts and per-pose lane-boundary detections.
//!
//! All geometry is generated from explicit seeds; identical
//! (spec, seed) inputs produce bit-identical datasets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Point2, Pose2, Trajectory};
use crate::{Error, Result};

/// Lateral distance from the corridor centerline to each median
/// guardrail line. Real divided highways carry a guardrail on each side
/// of the median strip; keeping two lines also gives the ghost mirror a
/// non-degenerate target.
pub const MEDIAN_HALF_WIDTH: f64 = 1.5;
/// Paved shoulder between the median guardrail and the first lane line.
pub const SHOULDER_WIDTH: f64 = 1.0;
/// Distance from the outer road boundary line to the edge guardrail.
pub const EDGE_MARGIN: f64 = 1.0;
/// Radar range noise, meters (1 sigma).
pub const RANGE_SIGMA: f64 = 0.05;
/// Radar bearing noise, radians (1 sigma) = 0.2 degrees.
pub const BEARING_SIGMA: f64 = 0.2 * std::f64::consts::PI / 180.0;
/// The GNSS bias random walk is clamped so |bias| never exceeds this.
pub const BIAS_CLAMP: f64 = 1.5;
/// Forward field of view of the lane detector, ego-frame x in meters.
pub const DETECT_NEAR: f64 = 4.0;
pub const DETECT_FAR: f64 = 12.0;

/// Static description of the synthetic corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Corridor length in meters (along +x).
    pub corridor_length: f64,
    /// Lanes per driving direction.
    pub lane_count: u32,
    /// Lane width in meters.
    pub lane_width: f64,
    /// Nominal spacing of guardrail posts, meters.
    pub guardrail_post_spacing: f64,
    /// Std dev of the per-post position perturbation, meters.
    pub reflector_jitter: f64,
    /// Mirror median posts across the centerline into each scan,
    /// mimicking repeatable multipath ghost returns.
    pub ghost_reflection_enabled: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            corridor_length: 500.0,
            lane_count: 2,
            lane_width: 3.5,
            guardrail_post_spacing: 4.0,
            reflector_jitter: 0.05,
            ghost_reflection_enabled: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.corridor_length > 0.0) {
            return Err(Error::InvalidInput("corridor_length must be > 0".into()));
        }
        if !(self.guardrail_post_spacing > 0.0) {
            return Err(Error::InvalidInput(
                "guardrail_post_spacing must be > 0".into(),
            ));
        }
        if self.lane_count < 1 {
            return Err(Error::InvalidInput("lane_count must be >= 1".into()));
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::InvalidInput("lane_width must be > 0".into()));
        }
        if !(self.reflector_jitter >= 0.0) {
            return Err(Error::InvalidInput("reflector_jitter must be >= 0".into()));
        }
        Ok(())
    }

    /// Lateral position of the innermost lane line of the forward side.
    pub fn inner_line_y(&self) -> f64 {
        MEDIAN_HALF_WIDTH + SHOULDER_WIDTH
    }

    /// Lateral position of the outer road boundary line (forward side).
    pub fn outer_line_y(&self) -> f64 {
        self.inner_line_y() + self.lane_count as f64 * self.lane_width
    }

    /// Lateral center of lane `lane` (0 = innermost) on the given side.
    pub fn lane_center_y(&self, direction: Direction, lane: u32) -> f64 {
        let y = self.inner_line_y() + (lane as f64 + 0.5) * self.lane_width;
        match direction {
            Direction::Forward => y,
            Direction::Reverse => -y,
        }
    }
}

/// Driving direction along the corridor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// +x travel, heading 0.
    Forward,
    /// -x travel, heading pi.
    Reverse,
}

/// One guardrail line of the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RailLine {
    #[serde(rename = "median_fwd")]
    MedianForward,
    #[serde(rename = "median_rev")]
    MedianReverse,
    #[serde(rename = "edge_fwd")]
    EdgeForward,
    #[serde(rename = "edge_rev")]
    EdgeReverse,
}

impl RailLine {
    pub const ALL: [RailLine; 4] = [
        RailLine::MedianForward,
        RailLine::MedianReverse,
        RailLine::EdgeForward,
        RailLine::EdgeReverse,
    ];

    pub fn is_median(self) -> bool {
        matches!(self, RailLine::MedianForward | RailLine::MedianReverse)
    }
}

/// Lane-boundary classification, matching the drive file schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineClass {
    Solid,
    Dashed,
    Boundary,
}

/// A classified polyline in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedPolyline {
    pub class: LineClass,
    pub pts: Vec<Point2>,
}

/// One guardrail post.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub rail: RailLine,
    pub pos: Point2,
}

/// Generated scene geometry: jittered posts plus ground-truth lane
/// polylines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub posts: Vec<Post>,
    pub gt_polylines: Vec<ClassifiedPolyline>,
}

impl SceneGeometry {
    pub fn posts_of(&self, rail: RailLine) -> impl Iterator<Item = &Post> {
        self.posts.iter().filter(move |p| p.rail == rail)
    }
}

/// Generation parameters of one drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub drive_id: String,
    pub direction: Direction,
    /// Speed range in m/s; the drive holds a smoothly varying speed
    /// inside this range.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Pose sampling rate, Hz.
    pub pose_rate: f64,
    /// White GNSS position noise per axis, meters.
    pub gnss_sigma_xy: f64,
    /// White GNSS heading noise, radians.
    pub gnss_sigma_theta: f64,
    /// Std dev of the per-step position bias random walk, meters.
    pub gnss_bias_walk_sigma: f64,
    /// Radar visibility range, meters.
    pub radar_range: f64,
    pub rng_seed: u64,
}

impl DriveSpec {
    /// Drive with the default noise model (sigma_xy 0.7 m, sigma_theta
    /// 0.3 deg, bias walk 0.01 m/step).
    pub fn new(drive_id: impl Into<String>, direction: Direction, rng_seed: u64) -> Self {
        DriveSpec {
            drive_id: drive_id.into(),
            direction,
            speed_min: 20.0,
            speed_max: 28.0,
            pose_rate: 2.0,
            gnss_sigma_xy: 0.7,
            gnss_sigma_theta: 0.3 * std::f64::consts::PI / 180.0,
            gnss_bias_walk_sigma: 0.01,
            radar_range: 50.0,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, ok: bool| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "drive '{}': invalid {name}",
                    self.drive_id
                )))
            }
        };
        field("drive_id (empty)", !self.drive_id.is_empty())?;
        field(
            "drive_id (must be [A-Za-z0-9_-])",
            self.drive_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'),
        )?;
        field(
            "speed range (must satisfy 0 <= min <= max <= 36)",
            self.speed_min >= 0.0 && self.speed_min <= self.speed_max && self.speed_max <= 36.0,
        )?;
        field("pose_rate (must be > 0)", self.pose_rate > 0.0)?;
        field("gnss_sigma_xy (must be >= 0)", self.gnss_sigma_xy >= 0.0)?;
        field(
            "gnss_sigma_theta (must be >= 0)",
            self.gnss_sigma_theta >= 0.0,
        )?;
        field(
            "gnss_bias_walk_sigma (must be >= 0)",
            self.gnss_bias_walk_sigma >= 0.0,
        )?;
        field("radar_range (must be > 0)", self.radar_range > 0.0)?;
        Ok(())
    }
}

/// A lane-boundary detection attached to one pose, in the ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: LineClass,
    pub pts: Vec<Point2>,
}

/// One pose record of a drive.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub t: f64,
    pub truth: Pose2,
    pub noisy: Pose2,
    /// Radar returns in the truth ego frame.
    pub scan: Vec<Point2>,
    pub detections: Vec<Detection>,
}

/// All records of one drive.
#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    pub drive_id: String,
    pub records: Vec<PoseRecord>,
}

impl Drive {
    pub fn truth_trajectory(&self) -> Trajectory {
        Trajectory::new(
            self.drive_id.clone(),
            self.records.iter().map(|r| (r.t, r.truth)).collect(),
        )
        .expect("drive timestamps are strictly increasing")
    }

    pub fn noisy_trajectory(&self) -> Trajectory {
        Trajectory::new(
            self.drive_id.clone(),
            self.records.iter().map(|r| (r.t, r.noisy)).collect(),
        )
        .expect("drive timestamps are strictly increasing")
    }
}

/// The full synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetDataset {
    pub scene: SceneSpec,
    pub geometry: SceneGeometry,
    pub drives: Vec<Drive>,
}

impl FleetDataset {
    pub fn pose_count(&self) -> usize {
        self.drives.iter().map(|d| d.records.len()).sum()
    }

    /// The corridor centerline, used as the reference line for lateral
    /// evaluation.
    pub fn centerline(&self) -> Vec<Point2> {
        vec![[0.0, 0.0], [self.scene.corridor_length, 0.0]]
    }
}

/// Place guardrail posts and derive lane polylines. Deterministic for a
/// fixed (spec, seed).
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SceneGeometry> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, spec.reflector_jitter.max(f64::MIN_POSITIVE)).unwrap();
    let edge_y = spec.outer_line_y() + EDGE_MARGIN;

    let mut posts = Vec::new();
    for rail in RailLine::ALL {
        let y = match rail {
            RailLine::MedianForward => MEDIAN_HALF_WIDTH,
            RailLine::MedianReverse => -MEDIAN_HALF_WIDTH,
            RailLine::EdgeForward => edge_y,
            RailLine::EdgeReverse => -edge_y,
        };
        let count = (spec.corridor_length / spec.guardrail_post_spacing).floor() as usize + 1;
        for k in 0..count {
            let x = k as f64 * spec.guardrail_post_spacing;
            let (jx, jy) = if spec.reflector_jitter > 0.0 {
                (jitter.sample(&mut rng), jitter.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            posts.push(Post {
                rail,
                pos: [x + jx, y + jy],
            });
        }
    }

    // Lane lines, innermost to outermost per side: solid, dashed...,
    // boundary. Straight lines sampled every 25 m.
    let mut gt_polylines = Vec::new();
    for side in [1.0, -1.0] {
        for k in 0..=spec.lane_count {
            let y = side * (spec.inner_line_y() + k as f64 * spec.lane_width);
            let class = if k == 0 {
                LineClass::Solid
            } else if k == spec.lane_count {
                LineClass::Boundary
            } else {
                LineClass::Dashed
            };
            gt_polylines.push(ClassifiedPolyline {
                class,
                pts: sample_line(spec.corridor_length, y, 25.0),
            });
        }
    }

    Ok(SceneGeometry {
        posts,
        gt_polylines,
    })
}

fn sample_line(length: f64, y: f64, step: f64) -> Vec<Point2> {
    let n = (length / step).ceil() as usize;
    let mut pts: Vec<Point2> = (0..n).map(|i| [i as f64 * step, y]).collect();
    pts.push([length, y]);
    pts
}

/// Simulate one drive through the scene. The truth trajectory follows a
/// lane centerline; the noisy trajectory adds white GNSS noise plus a
/// slowly varying bias random walk; scans return every post within
/// radar range with range/bearing noise, expressed in the truth ego
/// frame.
pub fn simulate_drive(
    scene: &SceneSpec,
    geometry: &SceneGeometry,
    spec: &DriveSpec,
) -> Result<Drive> {
    scene.validate()?;
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.rng_seed);
    let std_norm = Normal::new(0.0, 1.0).unwrap();
    let normal = |rng: &mut ChaCha12Rng, sigma: f64| -> f64 {
        if sigma > 0.0 {
            std_norm.sample(rng) * sigma
        } else {
            // Keep the draw sequence stable whether or not a noise term
            // is enabled.
            let _ = std_norm.sample(rng);
            0.0
        }
    };

    let lane = rng.gen_range(0..scene.lane_count);
    let lane_y = scene.lane_center_y(spec.direction, lane);
    let heading = match spec.direction {
        Direction::Forward => 0.0,
        Direction::Reverse => std::f64::consts::PI,
    };
    let dt = 1.0 / spec.pose_rate;
    let speed_walk_sigma = 0.05 * (spec.speed_max - spec.speed_min);
    let mut speed = rng.gen_range(spec.speed_min..=spec.speed_max);

    let mut records = Vec::new();
    let mut s = 0.0; // distance driven along the corridor
    let mut bias = [0.0f64; 2];
    let mut step = 0usize;
    while s <= scene.corridor_length {
        let t = step as f64 * dt;
        let x = match spec.direction {
            Direction::Forward => s,
            Direction::Reverse => scene.corridor_length - s,
        };
        let truth = Pose2::new(x, lane_y, heading, spec.gnss_sigma_xy, spec.gnss_sigma_theta);

        // GNSS noise: white + bias walk (bias on position only).
        for b in bias.iter_mut() {
            *b = (*b + normal(&mut rng, spec.gnss_bias_walk_sigma)).clamp(-BIAS_CLAMP, BIAS_CLAMP);
        }
        let noisy = Pose2::new(
            truth.x + normal(&mut rng, spec.gnss_sigma_xy) + bias[0],
            truth.y + normal(&mut rng, spec.gnss_sigma_xy) + bias[1],
            wrap_angle(truth.theta + normal(&mut rng, spec.gnss_sigma_theta)),
            spec.gnss_sigma_xy,
            spec.gnss_sigma_theta,
        );

        let scan = make_scan(geometry, scene, spec, &truth, &mut rng, &std_norm);
        let detections = make_detections(geometry, &truth, &mut rng);

        records.push(PoseRecord {
            t,
            truth,
            noisy,
            scan,
            detections,
        });

        speed = (speed + normal(&mut rng, speed_walk_sigma)).clamp(spec.speed_min, spec.speed_max);
        // Guarantee forward progress even for speed_min = 0 so the
        // drive terminates; a crawl still advances.
        s += (speed * dt).max(0.05);
        step += 1;
    }

    if records.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "drive '{}': corridor too short for 2 poses",
            spec.drive_id
        )));
    }

    Ok(Drive {
        drive_id: spec.drive_id.clone(),
        records,
    })
}

fn make_scan(
    geometry: &SceneGeometry,
    scene: &SceneSpec,
    spec: &DriveSpec,
    truth: &Pose2,
    rng: &mut ChaCha12Rng,
    std_norm: &Normal<f64>,
) -> Vec<Point2> {
    let mut scan = Vec::new();
    let push_return = |world: Point2, rng: &mut ChaCha12Rng, scan: &mut Vec<Point2>| {
        let ego = truth.inverse_transform_point(world);
        let r = (ego[0] * ego[0] + ego[1] * ego[1]).sqrt();
        if r > spec.radar_range {
            return;
        }
        let phi = ego[1].atan2(ego[0]);
        // Measurement noise clamped at 3 sigma: every return stays
        // within its 3-sigma bound of the true reflector (the dataset's
        // scan-consistency contract).
        let rn = r + (std_norm.sample(rng) * RANGE_SIGMA).clamp(-3.0 * RANGE_SIGMA, 3.0 * RANGE_SIGMA);
        let phin = phi
            + (std_norm.sample(rng) * BEARING_SIGMA).clamp(-3.0 * BEARING_SIGMA, 3.0 * BEARING_SIGMA);
        scan.push([rn * phin.cos(), rn * phin.sin()]);
    };

    for post in &geometry.posts {
        push_return(post.pos, rng, &mut scan);
    }
    if scene.ghost_reflection_enabled {
        // Repeatable multipath artifact: median posts mirrored across
        // the centerline.
        for post in geometry.posts.iter().filter(|p| p.rail.is_median()) {
            push_return([post.pos[0], -post.pos[1]], rng, &mut scan);
        }
    }
    scan
}

fn make_detections(
    geometry: &SceneGeometry,
    truth: &Pose2,
    rng: &mut ChaCha12Rng,
) -> Vec<Detection> {
    let mut detections = Vec::new();
    for line in &geometry.gt_polylines {
        // Generator lines are straight; clip the chord to the forward
        // detection window in the ego frame.
        let a = truth.inverse_transform_point(line.pts[0]);
        let b = truth.inverse_transform_point(*line.pts.last().unwrap());
        let (mut p, mut q) = (a, b);
        if p[0] > q[0] {
            std::mem::swap(&mut p, &mut q);
        }
        if q[0] < DETECT_NEAR || p[0] > DETECT_FAR {
            continue;
        }
        let clip = |lo: Point2, hi: Point2, x: f64| -> Point2 {
            let u = (x - lo[0]) / (hi[0] - lo[0]);
            [x, lo[1] + u * (hi[1] - lo[1])]
        };
        let start = if p[0] < DETECT_NEAR {
            clip(p, q, DETECT_NEAR)
        } else {
            p
        };
        let end = if q[0] > DETECT_FAR { clip(p, q, DETECT_FAR) } else { q };
        if end[0] - start[0] < 1.0 || start[1].abs().min(end[1].abs()) > 20.0 {
            continue;
        }
        let n = rng.gen_range(2..=5usize);
        let pts = (0..n)
            .map(|i| {
                let u = i as f64 / (n - 1) as f64;
                [
                    start[0] + u * (end[0] - start[0]),
                    start[1] + u * (end[1] - start[1]),
                ]
            })
            .collect();
        detections.push(Detection {
            class: line.class,
            pts,
        });
    }
    detections
}

/// Generate a full dataset. The scene seed is derived from
/// `dataset_seed`; each drive uses its own `rng_seed`, so distinct
/// drives can be generated concurrently with identical results.
pub fn generate_fleet(
    scene: &SceneSpec,
    drives: &[DriveSpec],
    dataset_seed: u64,
) -> Result<FleetDataset> {
    let geometry = generate_scene(scene, crate::seeding::derive_seed(dataset_seed, "scene"))?;
    let mut ids = std::collections::BTreeSet::new();
    for d in drives {
        if !ids.insert(&d.drive_id) {
            return Err(Error::InvalidInput(format!(
                "duplicate drive_id '{}'",
                d.drive_id
            )));
        }
    }
    let drives = drives
        .par_iter()
        .map(|spec| simulate_drive(scene, &geometry, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(FleetDataset {
        scene: scene.clone(),
        geometry,
        drives,
    })
}
