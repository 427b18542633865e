//! Pipeline configuration: one TOML file, every value overridable with
//! `--set dotted.key=value`. All randomness derives from the single
//! root `seed` unless a drive pins its own `rng_seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use radalign::correlation::SearchWindow;
use radalign::eval::MmeConfig;
use radalign::fleet::{Direction, DriveSpec, SceneSpec};
use radalign::mapgen::OccupancyParams;
use radalign::pipeline::{AlignParams, Method};
use radalign::posegraph::SolverConfig;
use radalign::sampling::SamplingConfig;
use radalign::seeding::derive_seed;
use radalign::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Root seed; scene, drive and sampling seeds derive from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default, rename = "drive")]
    pub drives: Vec<DriveConfig>,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub window: WindowSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub icp: IcpSection,
    #[serde(default)]
    pub occupancy: OccupancySection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Splat covariance per axis, m^2.
    #[serde(default = "default_point_covariance")]
    pub point_covariance: f64,
}

fn default_method() -> Method {
    Method::Grid
}

fn default_workers() -> usize {
    2
}

fn default_point_covariance() -> f64 {
    radalign::correlation::DEFAULT_POINT_COVARIANCE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset_dir: PathBuf,
    pub artifacts_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset_dir: "out/dataset".into(),
            artifacts_dir: "out".into(),
        }
    }
}

/// Drive entry; unset fields fall back to the defaults of
/// [`DriveSpec::new`], and `rng_seed` derives from the root seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub drive_id: String,
    pub direction: Direction,
    pub speed_min: Option<f64>,
    pub speed_max: Option<f64>,
    pub pose_rate: Option<f64>,
    pub gnss_sigma_xy: Option<f64>,
    pub gnss_sigma_theta: Option<f64>,
    pub gnss_bias_walk_sigma: Option<f64>,
    pub radar_range: Option<f64>,
    pub rng_seed: Option<u64>,
}

impl DriveConfig {
    pub fn to_spec(&self, root_seed: u64) -> DriveSpec {
        let mut spec = DriveSpec::new(
            self.drive_id.clone(),
            self.direction,
            self.rng_seed
                .unwrap_or_else(|| derive_seed(root_seed, &self.drive_id)),
        );
        if let Some(v) = self.speed_min {
            spec.speed_min = v;
        }
        if let Some(v) = self.speed_max {
            spec.speed_max = v;
        }
        if let Some(v) = self.pose_rate {
            spec.pose_rate = v;
        }
        if let Some(v) = self.gnss_sigma_xy {
            spec.gnss_sigma_xy = v;
        }
        if let Some(v) = self.gnss_sigma_theta {
            spec.gnss_sigma_theta = v;
        }
        if let Some(v) = self.gnss_bias_walk_sigma {
            spec.gnss_bias_walk_sigma = v;
        }
        if let Some(v) = self.radar_range {
            spec.radar_range = v;
        }
        spec
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub corridor_length: Option<f64>,
    pub lane_count: Option<u32>,
    pub lane_width: Option<f64>,
    pub guardrail_post_spacing: Option<f64>,
    pub reflector_jitter: Option<f64>,
    pub ghost_reflection_enabled: Option<bool>,
}

impl SceneSection {
    pub fn to_spec(&self) -> SceneSpec {
        let d = SceneSpec::default();
        SceneSpec {
            corridor_length: self.corridor_length.unwrap_or(d.corridor_length),
            lane_count: self.lane_count.unwrap_or(d.lane_count),
            lane_width: self.lane_width.unwrap_or(d.lane_width),
            guardrail_post_spacing: self
                .guardrail_post_spacing
                .unwrap_or(d.guardrail_post_spacing),
            reflector_jitter: self.reflector_jitter.unwrap_or(d.reflector_jitter),
            ghost_reflection_enabled: self
                .ghost_reflection_enabled
                .unwrap_or(d.ghost_reflection_enabled),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub eps_r: Option<f64>,
    pub eps_l: Option<f64>,
    pub step_r: Option<f64>,
    pub step_l: Option<f64>,
}

impl WindowSection {
    pub fn to_window(&self) -> SearchWindow {
        let d = SearchWindow::default();
        SearchWindow {
            eps_r: self.eps_r.unwrap_or(d.eps_r),
            eps_l: self.eps_l.unwrap_or(d.eps_l),
            step_r: self.step_r.unwrap_or(d.step_r),
            step_l: self.step_l.unwrap_or(d.step_l),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub max_iterations: Option<usize>,
    pub lambda_init: Option<f64>,
    pub lambda_factor: Option<f64>,
    pub rel_error_tol: Option<f64>,
    pub abs_error_tol: Option<f64>,
    pub huber_k: Option<f64>,
    pub z_weight_constant: Option<f64>,
    pub z_min: Option<f64>,
    pub robust: Option<bool>,
    pub use_dense_solver: Option<bool>,
}

impl SolverSection {
    pub fn to_config(&self) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig {
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            lambda_init: self.lambda_init.unwrap_or(d.lambda_init),
            lambda_factor: self.lambda_factor.unwrap_or(d.lambda_factor),
            rel_error_tol: self.rel_error_tol.unwrap_or(d.rel_error_tol),
            abs_error_tol: self.abs_error_tol.unwrap_or(d.abs_error_tol),
            huber_k: self.huber_k.unwrap_or(d.huber_k),
            z_weight_constant: self.z_weight_constant.unwrap_or(d.z_weight_constant),
            z_min: self.z_min.unwrap_or(d.z_min),
            robust: self.robust.unwrap_or(d.robust),
            use_dense_solver: self.use_dense_solver.unwrap_or(d.use_dense_solver),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub max_distance: Option<f64>,
    pub rate: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcpSection {
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub max_corr_dist: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancySection {
    pub cell_size: Option<f64>,
    pub shift: Option<f64>,
    pub scale: Option<f64>,
    /// Also dump the global cloud as CSV during `map`.
    #[serde(default)]
    pub dump_cloud: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub mme_radius: Option<f64>,
    pub mme_min_neighbors: Option<usize>,
    pub lateral_step: Option<f64>,
    pub max_lateral: Option<f64>,
}

impl PipelineConfig {
    /// Parse the file, apply `--set` overrides, validate.
    pub fn load(path: &Path, sets: &[String]) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidInput(format!("cannot read config '{}': {e}", path.display()))
        })?;
        Self::from_toml_str(&text, sets)
    }

    pub fn from_toml_str(text: &str, sets: &[String]) -> Result<PipelineConfig> {
        let mut value: toml::Value = text
            .parse()
            .map_err(|e| Error::InvalidInput(format!("config parse error: {e}")))?;
        for set in sets {
            apply_set(&mut value, set)?;
        }
        let config: PipelineConfig = value
            .try_into()
            .map_err(|e| Error::InvalidInput(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.workers < 1 {
            return Err(Error::InvalidInput("workers must be >= 1".into()));
        }
        if !(self.point_covariance > 0.0) {
            return Err(Error::InvalidInput("point_covariance must be > 0".into()));
        }
        self.scene_spec().validate()?;
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.drives {
            d.to_spec(self.seed).validate()?;
            if !ids.insert(&d.drive_id) {
                return Err(Error::InvalidInput(format!(
                    "duplicate drive_id '{}'",
                    d.drive_id
                )));
            }
        }
        self.sampling_config().validate()?;
        self.window.to_window().half_counts()?;
        self.solver.to_config().validate()?;
        Ok(())
    }

    pub fn scene_spec(&self) -> SceneSpec {
        self.scene.to_spec()
    }

    pub fn drive_specs(&self) -> Vec<DriveSpec> {
        self.drives.iter().map(|d| d.to_spec(self.seed)).collect()
    }

    pub fn sampling_config(&self) -> SamplingConfig {
        let d = SamplingConfig::default();
        SamplingConfig {
            max_distance: self.sampling.max_distance.unwrap_or(d.max_distance),
            rate: self.sampling.rate.unwrap_or(d.rate),
            seed: self
                .sampling
                .seed
                .unwrap_or_else(|| derive_seed(self.seed, "sampling")),
        }
    }

    pub fn align_params(&self) -> AlignParams {
        let icp_d = radalign::correlation::IcpParams::default();
        AlignParams {
            sampling: self.sampling_config(),
            window: self.window.to_window(),
            solver: self.solver.to_config(),
            icp: radalign::correlation::IcpParams {
                max_iter: self.icp.max_iter.unwrap_or(icp_d.max_iter),
                tol: self.icp.tol.unwrap_or(icp_d.tol),
                max_corr_dist: self.icp.max_corr_dist.unwrap_or(icp_d.max_corr_dist),
            },
            method: self.method,
            point_covariance: self.point_covariance,
        }
    }

    pub fn occupancy_params(&self) -> OccupancyParams {
        let d = OccupancyParams::default();
        OccupancyParams {
            cell_size: self.occupancy.cell_size.unwrap_or(d.cell_size),
            shift: self.occupancy.shift.unwrap_or(d.shift),
            scale: self.occupancy.scale.unwrap_or(d.scale),
        }
    }

    pub fn mme_config(&self) -> MmeConfig {
        let d = MmeConfig::default();
        MmeConfig {
            radius: self.evaluation.mme_radius.unwrap_or(d.radius),
            min_neighbors: self
                .evaluation
                .mme_min_neighbors
                .unwrap_or(d.min_neighbors),
        }
    }
}

/// Apply one `dotted.path=value` override to a TOML tree. Array
/// elements are addressed by numeric segments (`drive.0.pose_rate`).
fn apply_set(root: &mut toml::Value, set: &str) -> Result<()> {
    let (path, raw) = set
        .split_once('=')
        .ok_or_else(|| Error::InvalidInput(format!("--set expects key=value, got '{set}'")))?;
    // Parse the value as TOML; fall back to a plain string.
    let parsed: toml::Value = format!("v = {raw}")
        .parse::<toml::Value>()
        .ok()
        .and_then(|mut t| t.as_table_mut().and_then(|m| m.remove("v")))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let segments: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if let Ok(idx) = seg.parse::<usize>() {
            let arr = node.as_array_mut().ok_or_else(|| {
                Error::InvalidInput(format!("--set {path}: '{seg}' indexes a non-array"))
            })?;
            if idx >= arr.len() {
                return Err(Error::InvalidInput(format!(
                    "--set {path}: index {idx} out of bounds"
                )));
            }
            if last {
                arr[idx] = parsed;
                return Ok(());
            }
            node = &mut arr[idx];
        } else {
            let table = node.as_table_mut().ok_or_else(|| {
                Error::InvalidInput(format!("--set {path}: '{seg}' indexes a non-table"))
            })?;
            if last {
                table.insert(seg.to_string(), parsed);
                return Ok(());
            }
            node = table
                .entry(seg.to_string())
                .or_insert(toml::Value::Table(Default::default()));
        }
    }
    Ok(())
}
