//! Subcommands and their flags.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qsm_core::invert::{CosmosConfig, L2Config, TkdConfig};
use qsm_core::{
    cosmos, data_consistency, dipole_kernel, l2_closedform, laplacian_unwrap, make_magnitude, make_mask,
    make_phantom, ndi_reconstruct, nrmse, simulate_acquisition, smv_filter, ssim3d, tkd, Axis, NdiConfig,
    NoiseSpec, Orientation, OrientationDataset, OrientationEntry, PhantomSpec, ScalarVolume, SmvConfig,
    SsimConfig, VolumeGrid,
};
use serde::Serialize;

use crate::config::{
    orientation_from, parse_lambda, parse_vector, validate_phase_scale, AcquisitionSidecar, Algorithm,
    PipelineConfig, SidecarEntry,
};
use crate::error::{CliError, Result};
use crate::{nifti, pgm};

#[derive(Debug, Parser)]
#[command(name = "qsm", version, about = "Quantitative susceptibility mapping from GRE phase")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write ground-truth susceptibility, magnitude and mask volumes.
    Phantom(PhantomArgs),
    /// Simulate wrapped phase and magnitude for each orientation.
    Simulate(SimulateArgs),
    /// Laplacian phase unwrapping.
    Unwrap(UnwrapArgs),
    /// SMV background field removal.
    Smv(SmvArgs),
    /// Dipole inversion.
    Invert(InvertArgs),
    /// NRMSE, SSIM and data consistency against a reference.
    Metrics(MetricsArgs),
    /// Export one slice as an 8-bit PGM image.
    Slice(SliceArgs),
    /// phantom → simulate → unwrap → smv → invert → metrics in one run.
    Pipeline(PipelineArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Unwrap(a) => cmd_unwrap(&a),
        Command::Smv(a) => cmd_smv(&a),
        Command::Invert(a) => cmd_invert(&a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Slice(a) => cmd_slice(&a),
        Command::Pipeline(a) => cmd_pipeline(&a),
    }
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [n] => n.parse().map(|n| [n; 3]).map_err(|_| format!("invalid size `{n}`")),
        [a, b, c] => {
            let p = |t: &str| t.parse::<usize>().map_err(|_| format!("invalid size `{t}`"));
            Ok([p(a)?, p(b)?, p(c)?])
        }
        _ => Err(format!("expected N or NX,NY,NZ, got `{s}`")),
    }
}

fn parse_spacing(s: &str) -> std::result::Result<[f64; 3], String> {
    if s.contains(',') {
        parse_vector(s)
    } else {
        s.trim().parse().map(|v| [v; 3]).map_err(|_| format!("invalid spacing `{s}`"))
    }
}

fn parse_ndi_lambda(s: &str) -> std::result::Result<f64, String> {
    parse_lambda(s).map_err(|e| e.to_string())
}

fn out_dir(flag: &Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf> {
    let dir = flag.clone().or_else(|| cfg.outputs.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|source| CliError::Output { path: dir.clone(), source })?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_orientations(vectors: &[[f64; 3]]) -> Result<Vec<Orientation>> {
    vectors.iter().map(|&b| orientation_from(b)).collect()
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Grid size, `N` or `NX,NY,NZ`.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<[usize; 3]>,
    /// Voxel size in mm, `D` or `DX,DY,DZ`.
    #[arg(long, value_parser = parse_spacing)]
    pub spacing: Option<[f64; 3]>,
}

impl GridArgs {
    fn resolve(&self, cfg: &PipelineConfig) -> Result<VolumeGrid> {
        let base = cfg.grid;
        let dims = self
            .dims
            .or(base.map(|g| g.dims))
            .ok_or_else(|| CliError::Usage("grid size required (--dims or `grid` in --config)".into()))?;
        let spacing = self.spacing.or(base.map(|g| g.spacing)).unwrap_or([1.0; 3]);
        VolumeGrid::new(dims, spacing).map_err(|e| CliError::Usage(format!("grid: {e}")))
    }
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Files written by `phantom`.
pub const CHI_FILE: &str = "chi.nii";
pub const MAGNITUDE_FILE: &str = "magnitude.nii";
pub const MASK_FILE: &str = "mask.nii";

struct PhantomVolumes {
    chi: ScalarVolume,
    magnitude: ScalarVolume,
    mask: ScalarVolume,
}

fn build_phantom(grid: &VolumeGrid, cfg: &PipelineConfig) -> Result<PhantomVolumes> {
    let spec = cfg.phantom.clone().unwrap_or_else(|| PhantomSpec::numerical_head(grid));
    Ok(PhantomVolumes {
        chi: make_phantom(grid, &spec)?,
        magnitude: make_magnitude(grid, &spec)?,
        mask: make_mask(grid, &spec)?,
    })
}

pub fn cmd_phantom(args: &PhantomArgs) -> Result<()> {
    let cfg = PipelineConfig::load_or_default(args.config.as_deref())?;
    let grid = args.grid.resolve(&cfg)?;
    let phantom = build_phantom(&grid, &cfg)?;
    let dir = out_dir(&args.out_dir, &cfg)?;
    nifti::write_volume(&dir.join(CHI_FILE), &phantom.chi)?;
    nifti::write_volume(&dir.join(MAGNITUDE_FILE), &phantom.magnitude)?;
    nifti::write_volume(&dir.join(MASK_FILE), &phantom.mask)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground-truth susceptibility volume.
    #[arg(long)]
    pub chi: PathBuf,
    /// Magnitude template.
    #[arg(long)]
    pub magnitude: PathBuf,
    /// B0 direction `x,y,z`; repeat for several orientations.
    #[arg(long = "orientation", value_parser = parse_vector, allow_hyphen_values = true)]
    pub orientations: Vec<[f64; 3]>,
    /// Complex noise standard deviation per channel.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Radians of phase per unit susceptibility.
    #[arg(long)]
    pub phase_scale: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn phase_file(r: usize) -> String {
    format!("phase_{r}.nii")
}

pub fn magnitude_file(r: usize) -> String {
    format!("magnitude_{r}.nii")
}

fn simulate_into(
    dir: &Path,
    chi: &ScalarVolume,
    magnitude: &ScalarVolume,
    orientations: &[Orientation],
    noise: NoiseSpec,
    phase_scale: f64,
) -> Result<(OrientationDataset, AcquisitionSidecar)> {
    let dataset = simulate_acquisition(&chi.scale(phase_scale), magnitude, orientations, &noise)?;
    let mut entries = Vec::with_capacity(dataset.len());
    for (r, e) in dataset.entries().iter().enumerate() {
        let (phase, mag) = (phase_file(r), magnitude_file(r));
        nifti::write_volume(&dir.join(&phase), &e.phase)?;
        nifti::write_volume(&dir.join(&mag), &e.magnitude)?;
        entries.push(SidecarEntry {
            orientation: e.orientation.vector(),
            phase: phase.into(),
            magnitude: mag.into(),
        });
    }
    let sidecar = AcquisitionSidecar {
        seed: noise.seed,
        sigma: noise.sigma,
        phase_scale,
        entries,
    };
    sidecar.save(&dir.join(AcquisitionSidecar::FILE_NAME))?;
    Ok((dataset, sidecar))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = PipelineConfig::load_or_default(args.config.as_deref())?;
    let orientations = if args.orientations.is_empty() {
        cfg.orientation_list()?
    } else {
        parse_orientations(&args.orientations)?
    };
    let phase_scale = args.phase_scale.unwrap_or(cfg.phase_scale);
    validate_phase_scale(phase_scale)?;
    let noise = NoiseSpec::new(args.sigma.unwrap_or(cfg.noise.sigma), args.seed.unwrap_or(cfg.noise.seed))?;
    let chi = nifti::read_volume(&args.chi)?;
    let magnitude = nifti::read_volume(&args.magnitude)?;
    let dir = out_dir(&args.out_dir, &cfg)?;
    simulate_into(&dir, &chi, &magnitude, &orientations, noise, phase_scale)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct UnwrapArgs {
    /// Wrapped phase.
    #[arg(long)]
    pub phase: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_unwrap(args: &UnwrapArgs) -> Result<()> {
    let phase = nifti::read_volume(&args.phase)?;
    let mask = nifti::read_volume(&args.mask)?;
    let unwrapped = laplacian_unwrap(&phase, &mask)?;
    nifti::write_volume(&args.out, &unwrapped)
}

#[derive(Debug, Args)]
pub struct SmvArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Unwrapped total phase.
    #[arg(long)]
    pub phase: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Tissue phase output.
    #[arg(long)]
    pub out: PathBuf,
    /// Eroded (reliable) mask output.
    #[arg(long)]
    pub reliable_mask_out: Option<PathBuf>,
    /// Sphere radius in mm.
    #[arg(long)]
    pub smv_radius: Option<f64>,
    /// Truncation threshold on |1 − s(k)|.
    #[arg(long)]
    pub smv_threshold: Option<f64>,
}

fn smv_config(cfg: &PipelineConfig, radius: Option<f64>, threshold: Option<f64>) -> Result<SmvConfig> {
    let smv = SmvConfig {
        radius_mm: radius.unwrap_or(cfg.smv.radius_mm),
        tsvd_threshold: threshold.unwrap_or(cfg.smv.tsvd_threshold),
    };
    smv.validate()?;
    Ok(smv)
}

pub fn cmd_smv(args: &SmvArgs) -> Result<()> {
    let cfg = PipelineConfig::load_or_default(args.config.as_deref())?;
    let smv = smv_config(&cfg, args.smv_radius, args.smv_threshold)?;
    let phase = nifti::read_volume(&args.phase)?;
    let mask = nifti::read_volume(&args.mask)?;
    let (tissue, reliable) = smv_filter(&phase, &mask, &smv)?;
    nifti::write_volume(&args.out, &tissue)?;
    if let Some(path) = &args.reliable_mask_out {
        nifti::write_volume(path, &reliable)?;
    }
    Ok(())
}

/// Phase inputs given either through a sidecar or as explicit lists.
#[derive(Debug, Args)]
pub struct AcquisitionArgs {
    /// Acquisition sidecar; its file paths are relative to its directory.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// Phase volume; repeat once per orientation.
    #[arg(long = "phase")]
    pub phases: Vec<PathBuf>,
    /// Magnitude volume; repeat once per orientation.
    #[arg(long = "magnitude")]
    pub magnitudes: Vec<PathBuf>,
    /// B0 direction `x,y,z`; repeat once per orientation.
    #[arg(long = "orientation", value_parser = parse_vector, allow_hyphen_values = true)]
    pub orientations: Vec<[f64; 3]>,
    /// Radians of phase per unit susceptibility; defaults to the sidecar's value, else 1.
    #[arg(long)]
    pub phase_scale: Option<f64>,
}

struct Acquisition {
    phases: Vec<PathBuf>,
    magnitudes: Option<Vec<PathBuf>>,
    orientations: Vec<Orientation>,
    phase_scale: f64,
}

impl AcquisitionArgs {
    fn is_empty(&self) -> bool {
        self.sidecar.is_none() && self.phases.is_empty()
    }

    fn resolve(&self, cfg: &PipelineConfig) -> Result<Acquisition> {
        let acq = if let Some(path) = &self.sidecar {
            if !self.phases.is_empty() || !self.magnitudes.is_empty() || !self.orientations.is_empty() {
                return Err(CliError::Usage(
                    "--sidecar cannot be combined with --phase, --magnitude or --orientation".into(),
                ));
            }
            let sidecar = AcquisitionSidecar::load(path)?;
            let base = path.parent().unwrap_or(Path::new(""));
            Acquisition {
                phases: sidecar.entries.iter().map(|e| base.join(&e.phase)).collect(),
                magnitudes: Some(sidecar.entries.iter().map(|e| base.join(&e.magnitude)).collect()),
                orientations: sidecar
                    .entries
                    .iter()
                    .map(|e| orientation_from(e.orientation))
                    .collect::<Result<_>>()?,
                phase_scale: self.phase_scale.unwrap_or(sidecar.phase_scale),
            }
        } else {
            if self.phases.is_empty() {
                return Err(CliError::Usage("no phase input (use --sidecar or --phase)".into()));
            }
            let orientations = if self.orientations.is_empty() {
                cfg.orientation_list()?
            } else {
                parse_orientations(&self.orientations)?
            };
            if orientations.len() != self.phases.len() {
                return Err(CliError::Usage(format!(
                    "{} phase volumes but {} orientations",
                    self.phases.len(),
                    orientations.len()
                )));
            }
            if !self.magnitudes.is_empty() && self.magnitudes.len() != self.phases.len() {
                return Err(CliError::Usage(format!(
                    "{} phase volumes but {} magnitude volumes",
                    self.phases.len(),
                    self.magnitudes.len()
                )));
            }
            Acquisition {
                phases: self.phases.clone(),
                magnitudes: (!self.magnitudes.is_empty()).then(|| self.magnitudes.clone()),
                orientations,
                phase_scale: self.phase_scale.unwrap_or(cfg.phase_scale),
            }
        };
        validate_phase_scale(acq.phase_scale)?;
        Ok(acq)
    }
}

impl Acquisition {
    /// Reads the volumes; without magnitudes the mask serves as a uniform weight.
    fn load(&self, mask: &ScalarVolume) -> Result<OrientationDataset> {
        let mut entries = Vec::with_capacity(self.phases.len());
        for (r, (phase, orientation)) in self.phases.iter().zip(&self.orientations).enumerate() {
            let magnitude = match &self.magnitudes {
                Some(m) => nifti::read_volume(&m[r])?,
                None => mask.clone(),
            };
            entries.push(OrientationEntry {
                phase: nifti::read_volume(phase)?,
                magnitude,
                orientation: *orientation,
            });
        }
        Ok(OrientationDataset::new(entries, mask.clone())?)
    }
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub algorithm: Option<Algorithm>,
    #[command(flatten)]
    pub acquisition: AcquisitionArgs,
    /// Region in which susceptibility is reconstructed.
    #[arg(long)]
    pub mask: PathBuf,
    /// Susceptibility output, in phase units divided by the phase scale.
    #[arg(long)]
    pub out: PathBuf,
    /// TKD truncation threshold on |d(k)|.
    #[arg(long)]
    pub tkd_delta: Option<f64>,
    /// COSMOS threshold on Σ d².
    #[arg(long)]
    pub cosmos_eps: Option<f64>,
    /// Gradient-penalty weight for the closed-form L2 inversion.
    #[arg(long)]
    pub l2_lambda: Option<f64>,
    /// NDI Tikhonov weight, as a fraction (0.001) or a percentage (0.1%).
    #[arg(long, value_parser = parse_ndi_lambda)]
    pub ndi_lambda: Option<f64>,
    #[arg(long)]
    pub ndi_iters: Option<usize>,
    /// Requested NDI step; capped at the stability bound.
    #[arg(long)]
    pub ndi_step: Option<f64>,
    /// CSV of `iteration,cost[,nrmse]` for NDI.
    #[arg(long)]
    pub history_out: Option<PathBuf>,
    /// Ground truth (same units as --out) for the NRMSE history column.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

/// Everything an inversion needs beyond the data.
#[derive(Debug, Clone)]
pub struct InversionSettings {
    pub algorithm: Algorithm,
    pub tkd: TkdConfig,
    pub cosmos: CosmosConfig,
    pub l2: L2Config,
    pub ndi: NdiConfig,
}

impl InversionSettings {
    fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            algorithm: cfg.algorithm,
            tkd: cfg.tkd,
            cosmos: cfg.cosmos,
            l2: cfg.l2,
            ndi: cfg.ndi_config()?,
        })
    }

    fn validate(&self) -> Result<()> {
        self.tkd.validate()?;
        self.cosmos.validate()?;
        self.l2.validate()?;
        self.ndi.validate()?;
        Ok(())
    }
}

/// Result of [`invert_dataset`], in phase units.
pub struct Inversion {
    pub chi: ScalarVolume,
    pub history: Option<(Vec<f64>, Option<Vec<f64>>)>,
}

/// Runs the selected inversion. TKD and L2 use the first orientation only.
pub fn invert_dataset(dataset: &OrientationDataset, s: &InversionSettings) -> Result<Inversion> {
    let first = &dataset.entries()[0];
    let mask = dataset.mask();
    let (chi, history) = match s.algorithm {
        Algorithm::Tkd => {
            let kernel = dipole_kernel(dataset.grid(), &first.orientation)?;
            (tkd(&first.phase, &kernel, &s.tkd)?, None)
        }
        Algorithm::L2 => {
            let kernel = dipole_kernel(dataset.grid(), &first.orientation)?;
            (l2_closedform(&first.phase, &kernel, &s.l2)?, None)
        }
        Algorithm::Cosmos => (cosmos(dataset, &s.cosmos)?, None),
        Algorithm::Ndi => {
            let r = ndi_reconstruct(dataset, &s.ndi)?;
            (r.chi, Some((r.cost_history, r.nrmse_history)))
        }
    };
    Ok(Inversion {
        chi: chi.masked(mask)?,
        history,
    })
}

fn history_csv(cost: &[f64], nrmse: Option<&[f64]>) -> String {
    let mut out = String::from(if nrmse.is_some() { "iteration,cost,nrmse\n" } else { "iteration,cost\n" });
    for (i, c) in cost.iter().enumerate() {
        match nrmse {
            Some(n) => out.push_str(&format!("{},{:e},{:e}\n", i + 1, c, n[i])),
            None => out.push_str(&format!("{},{:e}\n", i + 1, c)),
        }
    }
    out
}

pub fn cmd_invert(args: &InvertArgs) -> Result<()> {
    let cfg = PipelineConfig::load_or_default(args.config.as_deref())?;
    let mut settings = InversionSettings::from_config(&cfg)?;
    if let Some(a) = args.algorithm {
        settings.algorithm = a;
    }
    if let Some(v) = args.tkd_delta {
        settings.tkd.delta = v;
    }
    if let Some(v) = args.cosmos_eps {
        settings.cosmos.eps = v;
    }
    if let Some(v) = args.l2_lambda {
        settings.l2.lambda = v;
    }
    if let Some(v) = args.ndi_lambda {
        settings.ndi.lambda = v;
    }
    if let Some(v) = args.ndi_iters {
        settings.ndi.max_iters = v;
    }
    if let Some(v) = args.ndi_step {
        settings.ndi.step_size = v;
    }
    settings.validate()?;

    let acquisition = args.acquisition.resolve(&cfg)?;
    let mask = nifti::read_volume(&args.mask)?;
    let dataset = acquisition.load(&mask)?;
    let scale = acquisition.phase_scale;
    if let Some(path) = &args.reference {
        settings.ndi.reference = Some(nifti::read_volume(path)?.scale(scale));
    }
    let inversion = invert_dataset(&dataset, &settings)?;
    nifti::write_volume(&args.out, &inversion.chi.scale(1.0 / scale))?;
    if let Some(path) = &args.history_out {
        let (cost, nrmse) = inversion.history.ok_or_else(|| {
            CliError::Usage("--history-out is only available with --algorithm ndi".into())
        })?;
        write_text(path, &history_csv(&cost, nrmse.as_deref()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Reconstruction to score; repeat to score several against the same reference.
    #[arg(long = "chi", required = true)]
    pub chis: Vec<PathBuf>,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Phase data for the data-consistency score (optional).
    #[command(flatten)]
    pub acquisition: AcquisitionArgs,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsEntry {
    pub chi: PathBuf,
    pub nrmse: f64,
    pub ssim: f64,
    pub data_consistency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub reference: PathBuf,
    pub mask: PathBuf,
    pub results: Vec<MetricsEntry>,
}

fn score(
    chi: &ScalarVolume,
    reference: &ScalarVolume,
    mask: &ScalarVolume,
    data: Option<(&OrientationDataset, f64)>,
) -> Result<(f64, f64, Option<f64>)> {
    let n = nrmse(chi, reference, mask)?;
    let s = ssim3d(chi, reference, mask, &SsimConfig::default())?;
    let dc = match data {
        Some((dataset, scale)) => Some(data_consistency(&chi.scale(scale), dataset)?),
        None => None,
    };
    Ok((n, s, dc))
}

fn report_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

pub fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    let reference = nifti::read_volume(&args.reference)?;
    let mask = nifti::read_volume(&args.mask)?;
    let data = if args.acquisition.is_empty() {
        None
    } else {
        let acq = args.acquisition.resolve(&PipelineConfig::default())?;
        Some((acq.load(&mask)?, acq.phase_scale))
    };
    let mut results = Vec::with_capacity(args.chis.len());
    for path in &args.chis {
        let chi = nifti::read_volume(path)?;
        let (nrmse, ssim, data_consistency) =
            score(&chi, &reference, &mask, data.as_ref().map(|(d, s)| (d, *s)))?;
        results.push(MetricsEntry {
            chi: path.clone(),
            nrmse,
            ssim,
            data_consistency,
        });
    }
    let text = report_json(&MetricsReport {
        reference: args.reference.clone(),
        mask: args.mask.clone(),
        results,
    });
    match &args.out {
        Some(path) => write_text(path, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Output { path: "<stdout>".into(), source }),
    }
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub axis: Axis,
    #[arg(long)]
    pub index: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub window_min: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub window_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_slice(args: &SliceArgs) -> Result<()> {
    let volume = nifti::read_volume(&args.volume)?;
    let image = pgm::slice_image(&volume, args.axis, args.index, args.window_min, args.window_max)?;
    pgm::write_slice(&args.out, &image)
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub smv_radius: Option<f64>,
    #[arg(long)]
    pub smv_threshold: Option<f64>,
    #[arg(long, value_parser = parse_ndi_lambda)]
    pub ndi_lambda: Option<f64>,
    #[arg(long)]
    pub ndi_iters: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Report written by `pipeline`.
pub const REPORT_FILE: &str = "report.json";
pub const RELIABLE_MASK_FILE: &str = "reliable_mask.nii";

fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Tkd => "tkd",
        Algorithm::Cosmos => "cosmos",
        Algorithm::L2 => "l2",
        Algorithm::Ndi => "ndi",
    }
}

/// Symmetric-ish display window from the reference's in-mask range.
fn display_window(reference: &ScalarVolume, mask: &ScalarVolume) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&v, &m) in reference.data().iter().zip(mask.data()) {
        if m != 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo < hi {
        (lo, hi)
    } else {
        (lo - 1.0, lo + 1.0)
    }
}

pub fn cmd_pipeline(args: &PipelineArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&args.config)?;
    let grid = args.grid.resolve(&cfg)?;
    let dir = out_dir(&args.out_dir, &cfg)?;
    let mut settings = InversionSettings::from_config(&cfg)?;
    if let Some(a) = args.algorithm {
        settings.algorithm = a;
    }
    if let Some(v) = args.ndi_lambda {
        settings.ndi.lambda = v;
    }
    if let Some(v) = args.ndi_iters {
        settings.ndi.max_iters = v;
    }
    settings.validate()?;
    let smv = smv_config(&cfg, args.smv_radius, args.smv_threshold)?;
    let noise = NoiseSpec::new(args.sigma.unwrap_or(cfg.noise.sigma), args.seed.unwrap_or(cfg.noise.seed))?;
    let orientations = cfg.orientation_list()?;
    let scale = cfg.phase_scale;

    let phantom = build_phantom(&grid, &cfg)?;
    nifti::write_volume(&dir.join(CHI_FILE), &phantom.chi)?;
    nifti::write_volume(&dir.join(MAGNITUDE_FILE), &phantom.magnitude)?;
    nifti::write_volume(&dir.join(MASK_FILE), &phantom.mask)?;

    let (acquired, _) = simulate_into(&dir, &phantom.chi, &phantom.magnitude, &orientations, noise, scale)?;

    let mut entries = Vec::with_capacity(acquired.len());
    let mut reliable = None;
    for (r, e) in acquired.entries().iter().enumerate() {
        let unwrapped = laplacian_unwrap(&e.phase, &phantom.mask)?;
        nifti::write_volume(&dir.join(format!("unwrapped_{r}.nii")), &unwrapped)?;
        let (tissue, rel) = smv_filter(&unwrapped, &phantom.mask, &smv)?;
        nifti::write_volume(&dir.join(format!("tissue_{r}.nii")), &tissue)?;
        reliable = Some(rel);
        entries.push(OrientationEntry {
            phase: tissue,
            magnitude: e.magnitude.clone(),
            orientation: e.orientation,
        });
    }
    let reliable = reliable.expect("at least one orientation");
    nifti::write_volume(&dir.join(RELIABLE_MASK_FILE), &reliable)?;
    let dataset = OrientationDataset::new(entries, reliable.clone())?;

    let truth = phantom.chi.masked(&reliable)?;
    settings.ndi.reference = Some(truth.scale(scale));
    let inversion = invert_dataset(&dataset, &settings)?;
    let chi = inversion.chi.scale(1.0 / scale);
    let name = algorithm_name(settings.algorithm);
    let chi_path = dir.join(format!("chi_{name}.nii"));
    nifti::write_volume(&chi_path, &chi)?;
    if let Some((cost, nrmse)) = &inversion.history {
        write_text(&dir.join("history.csv"), &history_csv(cost, nrmse.as_deref()))?;
    }

    let (n, s, dc) = score(&chi, &truth, &reliable, Some((&dataset, scale)))?;
    let report = MetricsReport {
        reference: CHI_FILE.into(),
        mask: RELIABLE_MASK_FILE.into(),
        results: vec![MetricsEntry {
            chi: format!("chi_{name}.nii").into(),
            nrmse: n,
            ssim: s,
            data_consistency: dc,
        }],
    };
    write_text(&dir.join(REPORT_FILE), &report_json(&report))?;

    let (lo, hi) = display_window(&truth, &reliable);
    let mid = grid.dims()[2] / 2;
    for (volume, file) in [(&truth, "chi_truth_z.pgm"), (&chi, &*format!("chi_{name}_z.pgm"))] {
        let image = pgm::slice_image(volume, Axis::Z, mid, lo, hi)?;
        pgm::write_slice(&dir.join(file), &image)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_spacing_flags() {
        assert_eq!(parse_dims("64").unwrap(), [64; 3]);
        assert_eq!(parse_dims("8,16,32").unwrap(), [8, 16, 32]);
        assert!(parse_dims("8,16").is_err());
        assert_eq!(parse_spacing("0.5").unwrap(), [0.5; 3]);
        assert_eq!(parse_spacing("1,1,2").unwrap(), [1.0, 1.0, 2.0]);
    }

    #[test]
    fn history_csv_layout() {
        assert_eq!(history_csv(&[2.0, 1.0], None), "iteration,cost\n1,2e0\n2,1e0\n");
        assert_eq!(
            history_csv(&[2.0], Some(&[0.5])),
            "iteration,cost,nrmse\n1,2e0,5e-1\n"
        );
    }

    #[test]
    fn cli_parses_repeated_orientations() {
        let cli = Cli::try_parse_from([
            "qsm", "invert", "--phase", "a.nii", "--phase", "b.nii", "--orientation", "0,0,1",
            "--orientation", "-0.1,0,0.99", "--mask", "m.nii", "--out", "o.nii", "--ndi-lambda", "0.1%",
        ])
        .unwrap();
        let Command::Invert(a) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(a.acquisition.orientations.len(), 2);
        assert!((a.ndi_lambda.unwrap() - 0.001).abs() < 1e-18);
    }

    #[test]
    fn unknown_algorithm_is_a_usage_error() {
        let err = Cli::try_parse_from(["qsm", "invert", "--algorithm", "medi", "--mask", "m", "--out", "o"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
