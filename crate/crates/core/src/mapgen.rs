//! Global radar cloud aggregation and occupancy map rendering.
//!
//! Scans are pushed through their (aligned or unaligned) poses into the
//! world frame, histogrammed on a 0.1 m grid, max-normalized and
//! contrast-stretched with a sigmoid. The raster exports as 16-bit PGM
//! plus an ESRI-style world file.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlation::GridFrame;
use crate::fleet::FleetDataset;
use crate::geometry::{Point2, Pose2};
use crate::{Error, Result};

/// Poses of every drive, indexed `[drive][pose] -> (x, y, theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTable {
    pub poses: Vec<Vec<[f64; 3]>>,
}

impl PoseTable {
    pub fn from_truth(dataset: &FleetDataset) -> PoseTable {
        PoseTable {
            poses: dataset
                .drives
                .iter()
                .map(|d| {
                    d.records
                        .iter()
                        .map(|r| [r.truth.x, r.truth.y, r.truth.theta])
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_noisy(dataset: &FleetDataset) -> PoseTable {
        PoseTable {
            poses: dataset
                .drives
                .iter()
                .map(|d| {
                    d.records
                        .iter()
                        .map(|r| [r.noisy.x, r.noisy.y, r.noisy.theta])
                        .collect()
                })
                .collect(),
        }
    }

    pub fn pose(&self, drive: usize, index: usize) -> Pose2 {
        let p = self.poses[drive][index];
        Pose2::from_xytheta(p[0], p[1], p[2])
    }

    fn matches_shape(&self, dataset: &FleetDataset) -> bool {
        self.poses.len() == dataset.drives.len()
            && self
                .poses
                .iter()
                .zip(dataset.drives.iter())
                .all(|(p, d)| p.len() == d.records.len())
    }
}

/// All radar points in the world frame, with per-point provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalCloud {
    pub points: Vec<Point2>,
    /// (drive, pose index) of the scan each point came from.
    pub provenance: Vec<(usize, usize)>,
}

/// Transform every scan by its pose. Whether the poses are aligned,
/// noisy or ground truth is the caller's choice, so both map variants
/// can be produced.
pub fn aggregate(dataset: &FleetDataset, poses: &PoseTable) -> Result<GlobalCloud> {
    if !poses.matches_shape(dataset) {
        return Err(Error::Mismatch(
            "pose table shape does not match dataset drives/poses".into(),
        ));
    }
    let total: usize = dataset
        .drives
        .iter()
        .map(|d| d.records.iter().map(|r| r.scan.len()).sum::<usize>())
        .sum();
    let mut points = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(total);
    for (di, drive) in dataset.drives.iter().enumerate() {
        for (pi, rec) in drive.records.iter().enumerate() {
            let pose = poses.pose(di, pi);
            for p in &rec.scan {
                points.push(pose.transform_point(*p));
                provenance.push((di, pi));
            }
        }
    }
    Ok(GlobalCloud { points, provenance })
}

/// Per-cell point counts of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2 {
    pub frame: GridFrame,
    /// Row-major by x: `counts[ix * ny + iy]`.
    pub counts: Vec<u32>,
}

impl Histogram2 {
    pub fn count(&self, ix: usize, iy: usize) -> u32 {
        self.counts[ix * self.frame.ny + iy]
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Cell centers of local maxima: cells with count >= every 8-neighbor
    /// and >= `min_count`.
    pub fn local_maxima(&self, min_count: u32) -> Vec<Point2> {
        let (nx, ny) = (self.frame.nx, self.frame.ny);
        let mut out = Vec::new();
        for ix in 0..nx {
            for iy in 0..ny {
                let c = self.count(ix, iy);
                if c < min_count.max(1) {
                    continue;
                }
                let mut is_max = true;
                'nbrs: for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let jx = ix as i64 + dx;
                        let jy = iy as i64 + dy;
                        if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                            continue;
                        }
                        if self.count(jx as usize, jy as usize) > c {
                            is_max = false;
                            break 'nbrs;
                        }
                    }
                }
                if is_max {
                    out.push(self.frame.cell_center(ix, iy));
                }
            }
        }
        out
    }
}

/// Histogram a cloud on a frame covering it.
pub fn histogram(cloud: &GlobalCloud, cell_size: f64) -> Result<Histogram2> {
    if cloud.points.is_empty() {
        return Err(Error::InvalidInput("cannot histogram an empty cloud".into()));
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in &cloud.points {
        for k in 0..2 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    let frame = GridFrame::covering(min, max, cell_size, cell_size);
    Ok(histogram_in_frame(cloud, &frame))
}

/// Histogram on a caller-provided frame (e.g. a union frame shared by
/// an aligned and an unaligned rendering). Points outside are dropped.
pub fn histogram_in_frame(cloud: &GlobalCloud, frame: &GridFrame) -> Histogram2 {
    let mut counts = vec![0u32; frame.nx * frame.ny];
    for p in &cloud.points {
        let (ix, iy) = frame.cell_of(*p);
        if ix >= 0 && iy >= 0 && (ix as usize) < frame.nx && (iy as usize) < frame.ny {
            counts[ix as usize * frame.ny + iy as usize] += 1;
        }
    }
    Histogram2 {
        frame: *frame,
        counts,
    }
}

/// Occupancy rendering parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyParams {
    /// Grid size, meters.
    pub cell_size: f64,
    /// Sigmoid shift: the normalized count mapped to 0.5. Isolated
    /// single returns land well below it, stable multi-drive structure
    /// saturates above it.
    pub shift: f64,
    /// Sigmoid steepness.
    pub scale: f64,
}

impl Default for OccupancyParams {
    fn default() -> Self {
        OccupancyParams {
            cell_size: 0.1,
            shift: 0.05,
            scale: 60.0,
        }
    }
}

/// Georeferenced occupancy raster with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub frame: GridFrame,
    /// Row-major by x: `values[ix * ny + iy]`, each in [0, 1].
    pub values: Vec<f64>,
    pub sigmoid_shift: f64,
    pub sigmoid_scale: f64,
}

impl OccupancyGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.frame.ny + iy]
    }
}

/// Render the occupancy map: max-normalized histogram put through
/// `v -> 1 / (1 + exp(-scale * (v - shift)))`.
pub fn render_occupancy(cloud: &GlobalCloud, params: &OccupancyParams) -> Result<OccupancyGrid> {
    let hist = histogram(cloud, params.cell_size)?;
    Ok(occupancy_from_histogram(&hist, params))
}

pub fn occupancy_from_histogram(hist: &Histogram2, params: &OccupancyParams) -> OccupancyGrid {
    let max = hist.max_count().max(1) as f64;
    let values = hist
        .counts
        .iter()
        .map(|&c| {
            let v = c as f64 / max;
            1.0 / (1.0 + (-params.scale * (v - params.shift)).exp())
        })
        .collect();
    OccupancyGrid {
        frame: hist.frame,
        values,
        sigmoid_shift: params.shift,
        sigmoid_scale: params.scale,
    }
}

/// Write the raster as a 16-bit binary PGM, north-up (row 0 = maximum
/// y). Values map as `round(v * 65535)`.
pub fn write_pgm<W: Write>(grid: &OccupancyGrid, w: &mut W) -> Result<()> {
    let (nx, ny) = (grid.frame.nx, grid.frame.ny);
    write!(w, "P5\n{nx} {ny}\n65535\n")?;
    let mut buf = Vec::with_capacity(nx * ny * 2);
    for row in (0..ny).rev() {
        for ix in 0..nx {
            let v = (grid.value(ix, row) * 65535.0).round().clamp(0.0, 65535.0) as u16;
            buf.extend_from_slice(&v.to_be_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Write the 6-line ESRI world file georeferencing the PGM: x cell
/// size, two rotation terms, negative y cell size, and the world
/// coordinates of the top-left pixel center.
pub fn write_world_file<W: Write>(grid: &OccupancyGrid, w: &mut W) -> Result<()> {
    let cell = grid.frame.cell_size;
    let origin = grid.frame.origin();
    let top_left_x = origin[0] + 0.5 * cell;
    let top_left_y = origin[1] + (grid.frame.ny as f64 - 0.5) * cell;
    write!(
        w,
        "{}\n0\n0\n{}\n{}\n{}\n",
        cell, -cell, top_left_x, top_left_y
    )?;
    Ok(())
}

/// Convenience wrapper writing `<stem>.pgm` and `<stem>.pgw`.
pub fn write_raster(grid: &OccupancyGrid, stem: &Path) -> Result<()> {
    let mut pgm = std::io::BufWriter::new(std::fs::File::create(stem.with_extension("pgm"))?);
    write_pgm(grid, &mut pgm)?;
    pgm.flush()?;
    let mut wld = std::io::BufWriter::new(std::fs::File::create(stem.with_extension("pgw"))?);
    write_world_file(grid, &mut wld)?;
    wld.flush()?;
    Ok(())
}

/// Optional CSV dump of the global cloud: `x,y,drive_id,pose_index`.
pub fn write_cloud_csv<W: Write>(
    w: &mut W,
    dataset: &FleetDataset,
    cloud: &GlobalCloud,
) -> Result<()> {
    writeln!(w, "x,y,drive_id,pose_index")?;
    for (p, (di, pi)) in cloud.points.iter().zip(cloud.provenance.iter()) {
        writeln!(
            w,
            "{},{},{},{}",
            p[0], p[1], dataset.drives[*di].drive_id, pi
        )?;
    }
    Ok(())
}
