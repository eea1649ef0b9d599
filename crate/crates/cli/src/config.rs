//! JSON pipeline configuration and the acquisition sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use qsm_core::invert::{CosmosConfig, L2Config, TkdConfig};
use qsm_core::{Orientation, PhantomSpec, SmvConfig, VolumeGrid};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Orientation vectors in configs must be unit length to this tolerance.
pub const ORIENTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Tkd,
    Cosmos,
    L2,
    Ndi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

impl GridConfig {
    pub fn to_grid(&self) -> Result<VolumeGrid> {
        VolumeGrid::new(self.dims, self.spacing).map_err(|e| CliError::Usage(format!("grid: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub seed: u64,
}

/// Tikhonov weight, given either as a fraction (`0.001`) or a percentage (`"0.1%"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaValue {
    Fraction(f64),
    Text(String),
}

impl LambdaValue {
    pub fn fraction(&self) -> Result<f64> {
        match self {
            LambdaValue::Fraction(v) => Ok(*v),
            LambdaValue::Text(s) => parse_lambda(s),
        }
    }
}

/// Parses `"0.1%"` as 0.001 and `"0.001"` as 0.001.
pub fn parse_lambda(s: &str) -> Result<f64> {
    let s = s.trim();
    let (number, scale) = match s.strip_suffix('%') {
        Some(n) => (n.trim(), 0.01),
        None => (s, 1.0),
    };
    let v: f64 = number
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid lambda `{s}` (expected e.g. 0.001 or 0.1%)")))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(CliError::Usage(format!("lambda must be >= 0, got `{s}`")));
    }
    Ok(v * scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NdiParams {
    pub step_size: f64,
    pub lambda: LambdaValue,
    pub max_iters: usize,
}

impl Default for NdiParams {
    fn default() -> Self {
        let d = qsm_core::NdiConfig::default();
        Self {
            step_size: d.step_size,
            lambda: LambdaValue::Fraction(d.lambda),
            max_iters: d.max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid: Option<GridConfig>,
    pub phantom: Option<PhantomSpec>,
    pub noise: NoiseConfig,
    pub orientations: Vec<[f64; 3]>,
    /// Radians of phase per unit susceptibility (2π·γ·B0·TE for ppm input).
    pub phase_scale: f64,
    pub smv: SmvConfig,
    pub algorithm: Algorithm,
    pub tkd: TkdConfig,
    pub cosmos: CosmosConfig,
    pub l2: L2Config,
    pub ndi: NdiParams,
    pub outputs: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: None,
            phantom: None,
            noise: NoiseConfig::default(),
            orientations: Vec::new(),
            phase_scale: 1.0,
            smv: SmvConfig::default(),
            algorithm: Algorithm::Ndi,
            tkd: TkdConfig::default(),
            cosmos: CosmosConfig::default(),
            l2: L2Config::default(),
            ndi: NdiParams::default(),
            outputs: OutputConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::MissingInput {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.grid {
            g.to_grid()?;
        }
        if let Some(p) = &self.phantom {
            p.validate()?;
        }
        if !(self.noise.sigma.is_finite() && self.noise.sigma >= 0.0) {
            return Err(CliError::Usage(format!("noise.sigma must be >= 0, got {}", self.noise.sigma)));
        }
        self.orientation_list()?;
        validate_phase_scale(self.phase_scale)?;
        self.smv.validate()?;
        self.tkd.validate()?;
        self.cosmos.validate()?;
        self.l2.validate()?;
        self.ndi_config()?.validate()?;
        if let Some(dir) = &self.outputs.dir {
            check_parent_exists(dir)?;
        }
        Ok(())
    }

    /// Configured orientations, defaulting to a single `ẑ`.
    pub fn orientation_list(&self) -> Result<Vec<Orientation>> {
        if self.orientations.is_empty() {
            return Ok(vec![Orientation::z()]);
        }
        self.orientations.iter().map(|&b| orientation_from(b)).collect()
    }

    pub fn ndi_config(&self) -> Result<qsm_core::NdiConfig> {
        Ok(qsm_core::NdiConfig {
            step_size: self.ndi.step_size,
            lambda: self.ndi.lambda.fraction()?,
            max_iters: self.ndi.max_iters,
            record_history: true,
            reference: None,
        })
    }
}

pub fn validate_phase_scale(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("phase_scale must be > 0, got {s}")))
    }
}

/// Accepts vectors within [`ORIENTATION_TOLERANCE`] of unit length and renormalizes them.
pub fn orientation_from(b: [f64; 3]) -> Result<Orientation> {
    let n = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if !n.is_finite() || (n - 1.0).abs() > ORIENTATION_TOLERANCE {
        return Err(CliError::Usage(format!(
            "orientation {b:?} is not unit length (|b| = {n})"
        )));
    }
    Ok(Orientation::normalized(b)?)
}

/// Parses `"x,y,z"`.
pub fn parse_vector(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got `{s}`"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("invalid number `{p}`"))?;
    }
    Ok(out)
}

fn check_parent_exists(path: &Path) -> Result<()> {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() && !parent.exists() => Err(CliError::Usage(format!(
            "output directory parent {} does not exist",
            parent.display()
        ))),
        _ => Ok(()),
    }
}

/// One orientation's files, relative to the sidecar's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub orientation: [f64; 3],
    pub phase: PathBuf,
    pub magnitude: PathBuf,
}

/// Metadata written next to simulated acquisitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSidecar {
    pub seed: u64,
    pub sigma: f64,
    pub phase_scale: f64,
    pub entries: Vec<SidecarEntry>,
}

impl AcquisitionSidecar {
    pub const FILE_NAME: &'static str = "acquisition.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::MissingInput {
            path: path.to_path_buf(),
            source,
        })?;
        let sidecar: Self = serde_json::from_str(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })?;
        if sidecar.entries.is_empty() {
            return Err(CliError::Usage(format!("{}: no orientations listed", path.display())));
        }
        for e in &sidecar.entries {
            orientation_from(e.orientation)?;
        }
        validate_phase_scale(sidecar.phase_scale)?;
        Ok(sidecar)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("sidecar serializes");
        fs::write(path, text + "\n").map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        })
    }
}
