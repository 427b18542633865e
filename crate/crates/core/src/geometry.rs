//! Planar rigid-body math and trajectory interpolation.
//!
//! Poses are SE(2): the radar data is planar and every downstream
//! computation consumes only (x, y, heading). Headings are kept
//! normalized to (-pi, pi] after every operation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Normalize an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Smallest signed difference `a - b` of two angles, in (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// A 2D point in meters. Used for radar returns, posts and polyline vertices.
pub type Point2 = [f64; 2];

/// Planar vehicle pose with its GNSS uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    /// East position in meters.
    pub x: f64,
    /// North position in meters.
    pub y: f64,
    /// Heading in radians, normalized to (-pi, pi].
    pub theta: f64,
    /// GNSS translational standard deviation (per axis), meters.
    pub sigma_xy: f64,
    /// GNSS heading standard deviation, radians.
    pub sigma_theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64, sigma_xy: f64, sigma_theta: f64) -> Self {
        Pose2 {
            x,
            y,
            theta: wrap_angle(theta),
            sigma_xy,
            sigma_theta,
        }
    }

    /// Pose without meaningful uncertainty (sigmas zeroed).
    pub fn from_xytheta(x: f64, y: f64, theta: f64) -> Self {
        Self::new(x, y, theta, 0.0, 0.0)
    }

    /// Map a point from this pose's ego frame into the world frame.
    pub fn transform_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        [
            self.x + c * p[0] - s * p[1],
            self.y + s * p[0] + c * p[1],
        ]
    }

    /// Map a world-frame point into this pose's ego frame.
    pub fn inverse_transform_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Apply a relative transform expressed in this pose's frame,
    /// yielding the resulting global pose. Sigma fields are carried
    /// over from `self`.
    pub fn apply(&self, t: &Transform2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2 {
            x: self.x + c * t.dx - s * t.dy,
            y: self.y + s * t.dx + c * t.dy,
            theta: wrap_angle(self.theta + t.dtheta),
            sigma_xy: self.sigma_xy,
            sigma_theta: self.sigma_theta,
        }
    }
}

/// Relative planar rigid transform (frame-to-frame or correction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2 {
    pub dx: f64,
    pub dy: f64,
    /// Rotation in radians, normalized to (-pi, pi].
    pub dtheta: f64,
}

impl Transform2 {
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Transform2 {
            dx,
            dy,
            dtheta: wrap_angle(dtheta),
        }
    }

    pub fn identity() -> Self {
        Transform2 {
            dx: 0.0,
            dy: 0.0,
            dtheta: 0.0,
        }
    }

    /// Standard SE(2) composition: `self` followed by `other` in `self`'s
    /// target frame (i.e. the map `p -> self(other(p))`).
    pub fn compose(&self, other: &Transform2) -> Transform2 {
        let (s, c) = self.dtheta.sin_cos();
        Transform2 {
            dx: self.dx + c * other.dx - s * other.dy,
            dy: self.dy + s * other.dx + c * other.dy,
            dtheta: wrap_angle(self.dtheta + other.dtheta),
        }
    }

    pub fn inverse(&self) -> Transform2 {
        let (s, c) = self.dtheta.sin_cos();
        Transform2 {
            dx: -(c * self.dx + s * self.dy),
            dy: -(-s * self.dx + c * self.dy),
            dtheta: wrap_angle(-self.dtheta),
        }
    }

    /// Map a point through this transform.
    pub fn transform_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.dtheta.sin_cos();
        [
            self.dx + c * p[0] - s * p[1],
            self.dy + s * p[0] + c * p[1],
        ]
    }

    /// Component-wise maximum absolute difference to another transform,
    /// with the angle compared on the circle.
    pub fn max_component_diff(&self, other: &Transform2) -> f64 {
        (self.dx - other.dx)
            .abs()
            .max((self.dy - other.dy).abs())
            .max(angle_diff(self.dtheta, other.dtheta).abs())
    }
}

/// Express pose `b` in the frame of pose `a`: the transform `T` with
/// `a.apply(&T) == b` (up to angle wrapping).
pub fn relative_transform(a: &Pose2, b: &Pose2) -> Transform2 {
    let (s, c) = a.theta.sin_cos();
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    Transform2 {
        dx: c * dx + s * dy,
        dy: -s * dx + c * dy,
        dtheta: wrap_angle(b.theta - a.theta),
    }
}

/// Time-ordered pose stream of one drive.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub drive_id: String,
    /// (timestamp seconds, pose), timestamps strictly increasing.
    pub samples: Vec<(f64, Pose2)>,
}

impl Trajectory {
    /// Build a trajectory, validating that timestamps strictly increase.
    pub fn new(drive_id: impl Into<String>, samples: Vec<(f64, Pose2)>) -> Result<Self> {
        let drive_id = drive_id.into();
        if let Some((t, _)) = samples.iter().find(|(t, _)| !t.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "trajectory '{drive_id}': non-finite timestamp {t}"
            )));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidInput(format!(
                    "trajectory '{drive_id}': timestamps not strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(Trajectory { drive_id, samples })
    }

    pub fn first_time(&self) -> Option<f64> {
        self.samples.first().map(|s| s.0)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.0)
    }

    /// Cubic Hermite interpolation of the pose stream at time `t`.
    ///
    /// Position and (unwrapped) heading use Catmull-Rom tangents from
    /// finite differences of neighboring samples, one-sided at the ends.
    /// Sigma fields are interpolated linearly. Exact at sample times.
    pub fn interpolate(&self, t: f64) -> Result<Pose2> {
        if self.samples.len() < 2 {
            return Err(Error::DegenerateTrajectory(self.drive_id.clone()));
        }
        let first = self.samples[0].0;
        let last = self.samples[self.samples.len() - 1].0;
        if t < first || t > last {
            return Err(Error::TimeOutOfRange { t, first, last });
        }

        // Segment index k with t in [t_k, t_{k+1}].
        let k = match self
            .samples
            .binary_search_by(|(ts, _)| ts.partial_cmp(&t).unwrap())
        {
            Ok(i) => return Ok(self.samples[i].1),
            Err(i) => i - 1, // i >= 1 because t >= first
        };

        let (t0, p0) = self.samples[k];
        let (t1, p1) = self.samples[k + 1];
        let h = t1 - t0;
        let s = (t - t0) / h;

        // Unwrapped headings of the four-point neighborhood around the
        // segment, so that interpolation crosses +-pi without a jump.
        let th0 = p0.theta;
        let th1 = th0 + angle_diff(p1.theta, p0.theta);
        let (x0, y0) = (p0.x, p0.y);
        let (x1, y1) = (p1.x, p1.y);

        // Catmull-Rom tangents (dx/dt) at the segment ends.
        let tangent = |i: usize, unwrapped_at_i: f64| -> (f64, f64, f64) {
            let (prev, next) = (i.checked_sub(1), i + 1);
            match (prev, next) {
                (Some(im1), ip1) if ip1 < self.samples.len() => {
                    let (ta, pa) = self.samples[im1];
                    let (tb, pb) = self.samples[ip1];
                    let dt = tb - ta;
                    // Unwrap pa/pb headings relative to the segment's frame.
                    let tha = unwrapped_at_i + angle_diff(pa.theta, self.samples[i].1.theta);
                    let thb = unwrapped_at_i + angle_diff(pb.theta, self.samples[i].1.theta);
                    ((pb.x - pa.x) / dt, (pb.y - pa.y) / dt, (thb - tha) / dt)
                }
                _ => {
                    // One-sided difference at the ends.
                    let (ia, ib) = if i == 0 { (0, 1) } else { (i - 1, i) };
                    let (ta, pa) = self.samples[ia];
                    let (tb, pb) = self.samples[ib];
                    let dt = tb - ta;
                    let dth = angle_diff(pb.theta, pa.theta);
                    ((pb.x - pa.x) / dt, (pb.y - pa.y) / dt, dth / dt)
                }
            }
        };

        let m0 = tangent(k, th0);
        let m1 = tangent(k + 1, th1);

        // Hermite basis.
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let hermite = |v0: f64, m0: f64, v1: f64, m1: f64| {
            h00 * v0 + h10 * h * m0 + h01 * v1 + h11 * h * m1
        };

        let x = hermite(x0, m0.0, x1, m1.0);
        let y = hermite(y0, m0.1, y1, m1.1);
        let th = hermite(th0, m0.2, th1, m1.2);

        Ok(Pose2 {
            x,
            y,
            theta: wrap_angle(th),
            sigma_xy: p0.sigma_xy + s * (p1.sigma_xy - p0.sigma_xy),
            sigma_theta: p0.sigma_theta + s * (p1.sigma_theta - p0.sigma_theta),
        })
    }
}
