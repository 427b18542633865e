//! Dataset serialization: one `scene.json` plus one `drive_<id>.jsonl`
//! per drive, all floats written with full round-trip precision.
//!
//! The format is line-oriented and language-neutral so other tooling
//! can stream it. `read_dataset(write_dataset(d)) == d` exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fleet::{
    ClassifiedPolyline, Detection, Drive, FleetDataset, PoseRecord, Post, SceneGeometry, SceneSpec,
};
use crate::geometry::{Point2, Pose2};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct SceneFile {
    spec: SceneSpec,
    posts: Vec<Post>,
    gt_polylines: Vec<ClassifiedPolyline>,
}

/// One line of a drive file.
#[derive(Serialize, Deserialize)]
struct RecordLine {
    t: f64,
    truth: [f64; 3],
    noisy: [f64; 3],
    sigma: [f64; 2],
    scan: Vec<Point2>,
    detections: Vec<Detection>,
}

/// Write the dataset into `dir` (created if missing).
pub fn write_dataset(dataset: &FleetDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let scene = SceneFile {
        spec: dataset.scene.clone(),
        posts: dataset.geometry.posts.clone(),
        gt_polylines: dataset.geometry.gt_polylines.clone(),
    };
    let scene_json = serde_json::to_string_pretty(&scene)
        .map_err(|e| Error::InvalidInput(format!("scene serialization: {e}")))?;
    fs::write(dir.join("scene.json"), scene_json + "\n")?;

    for drive in &dataset.drives {
        let path = dir.join(format!("drive_{}.jsonl", drive.drive_id));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for r in &drive.records {
            let line = RecordLine {
                t: r.t,
                truth: [r.truth.x, r.truth.y, r.truth.theta],
                noisy: [r.noisy.x, r.noisy.y, r.noisy.theta],
                sigma: [r.truth.sigma_xy, r.truth.sigma_theta],
                scan: r.scan.clone(),
                detections: r.detections.clone(),
            };
            serde_json::to_writer(&mut w, &line)
                .map_err(|e| Error::InvalidInput(format!("record serialization: {e}")))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Read a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<FleetDataset> {
    let scene_path = dir.join("scene.json");
    let scene_text = fs::read_to_string(&scene_path)?;
    let scene: SceneFile = serde_json::from_str(&scene_text).map_err(|e| Error::Parse {
        file: scene_path.clone(),
        line: e.line(),
        field: "scene".into(),
        message: e.to_string(),
    })?;

    let mut drive_paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("drive_") && n.ends_with(".jsonl"))
                .unwrap_or(false)
        })
        .collect();
    drive_paths.sort();

    let mut drives = Vec::new();
    for path in drive_paths {
        drives.push(read_drive(&path)?);
    }

    Ok(FleetDataset {
        scene: scene.spec,
        geometry: SceneGeometry {
            posts: scene.posts,
            gt_polylines: scene.gt_polylines,
        },
        drives,
    })
}

fn read_drive(path: &Path) -> Result<Drive> {
    let name = path
        .file_stem()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let drive_id = name.trim_start_matches("drive_").to_string();
    if drive_id.is_empty() {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            line: 0,
            field: "filename".into(),
            message: "cannot derive drive id from filename".into(),
        });
    }

    let parse_err = |line: usize, field: &str, message: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        field: field.into(),
        message,
    };

    let reader = BufReader::new(fs::File::open(path)?);
    let mut records: Vec<PoseRecord> = Vec::new();
    let mut prev_t: Option<f64> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line)
            .map_err(|e| parse_err(lineno, "record", e.to_string()))?;
        if !rec.t.is_finite() {
            return Err(parse_err(lineno, "t", "timestamp must be finite".into()));
        }
        if let Some(pt) = prev_t {
            if rec.t <= pt {
                return Err(parse_err(
                    lineno,
                    "t",
                    format!("timestamps must strictly increase ({pt} then {})", rec.t),
                ));
            }
        }
        prev_t = Some(rec.t);
        for (label, v) in [("truth", &rec.truth), ("noisy", &rec.noisy)] {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(parse_err(lineno, label, "pose must be finite".into()));
            }
        }
        if rec.sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(parse_err(
                lineno,
                "sigma",
                "sigmas must be finite and >= 0".into(),
            ));
        }

        let [sxy, sth] = rec.sigma;
        records.push(PoseRecord {
            t: rec.t,
            truth: Pose2 {
                x: rec.truth[0],
                y: rec.truth[1],
                theta: rec.truth[2],
                sigma_xy: sxy,
                sigma_theta: sth,
            },
            noisy: Pose2 {
                x: rec.noisy[0],
                y: rec.noisy[1],
                theta: rec.noisy[2],
                sigma_xy: sxy,
                sigma_theta: sth,
            },
            scan: rec.scan,
            detections: rec.detections,
        });
    }

    Ok(Drive { drive_id, records })
}
