//! Command-line front end tying the pipeline together: simulate frames
//! and histograms, localize emitters, design pillars, characterize
//! photon statistics, and estimate resonance yield. Every command takes
//! a JSON config and/or data files, writes machine-readable artifacts
//! into `--out-dir`, and prints a short human summary.
//!
//! Exit codes: 0 success, 1 runtime/data error, 2 usage/config error.

mod json;

pub use json::canonical;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::cavity::{
    energy_to_wavelength_nm, estimate_yield, mode_curve, select_radius, wavelength_to_energy_ev,
    ModeIndex, PlanarCavity, YieldSpec,
};
use crate::imaging::{
    read_frame, render_frame, write_frame, FrameGeometry, ImagingError, NoiseSpec, SceneSpec,
};
use crate::localization::{localize, LocalizationError, LocalizeOptions, MarkLayout};
use crate::photon::{
    efficiency_budget, extraction_efficiency, fit_lifetime, fit_saturation, g2_zero, io as pio,
    purcell_factor, q_factor, simulate_histogram, HistogramSpec, PhotonError, SourceReport,
    Uncertain,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config content; exit code 2.
    Usage(String),
    /// I/O, malformed data files, or failed analysis; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "dotfoundry",
    version,
    about = "Quantum-dot source pipeline: synthetic frames, two-color localization, \
             pillar design, photon statistics"
)]
struct Cli {
    /// Directory receiving output artifacts (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Seed override; beats any seed in the config file. The
    /// DOTFOUNDRY_SEED environment variable is the fallback when
    /// neither is given.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug); warnings always
    /// print.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one synthetic frame through the detector chain; writes
    /// PGM + sidecar and prints the ground-truth scene JSON.
    SimulateFrame {
        /// JSON: { geometry, scene, noise?, output_basename? }.
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw a pulsed coincidence histogram and write it as CSV with a
    /// timing sidecar.
    SimulateHistogram {
        /// JSON matching the histogram scenario (g2_target, recapture,
        /// rep_period_ns, total_pairs, ...).
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path (default <out-dir>/histogram.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Locate the emitter against alignment marks in a two-color frame
    /// pair and write the full uncertainty report.
    Localize {
        /// Surface-focus frame (PGM + sidecar).
        #[arg(long)]
        surface: PathBuf,
        /// Emitter-focus frame (PGM + sidecar).
        #[arg(long)]
        emitter: PathBuf,
        /// Mark layout JSON: windows and known separations per axis.
        #[arg(long)]
        layout: PathBuf,
        /// Optional fitting options JSON.
        #[arg(long)]
        options: Option<PathBuf>,
        /// Report path (default <out-dir>/localization.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick the pillar diameter matching a target line and dump the
    /// mode curve over the fabrication grid.
    Design {
        /// JSON: { cavity, target_wavelength_nm | target_energy_ev,
        /// mode?, diameter_grid_um, curve_diameters_um? }.
        #[arg(long)]
        config: PathBuf,
        /// Design report path (default <out-dir>/design.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Mode curve CSV path (default <out-dir>/mode_curve.csv).
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Assemble a source report from measurement files: lifetimes,
    /// Purcell factor, Q, g2(0), saturation, efficiency budget.
    Characterize {
        /// Cavity-coupled decay trace CSV (time_ps,counts).
        #[arg(long)]
        decay: Option<PathBuf>,
        /// Reference (planar) decay trace CSV for the Purcell ratio.
        #[arg(long)]
        reference_decay: Option<PathBuf>,
        /// Fit window for --decay as "start,end" in ps (default: two
        /// bins past the peak through the end of the trace).
        #[arg(long)]
        lifetime_window_ps: Option<String>,
        /// Mode spectrum CSV (wavelength_nm,counts or energy_ev,counts).
        #[arg(long)]
        spectrum: Option<PathBuf>,
        /// Coincidence histogram CSV (requires its .json sidecar).
        #[arg(long)]
        histogram: Option<PathBuf>,
        /// Integration halfwidth for g2 peak areas in ns (default: a
        /// quarter rep period).
        #[arg(long)]
        g2_halfwidth_ns: Option<f64>,
        /// Direct g2(0) value when no histogram is available.
        #[arg(long)]
        g2: Option<f64>,
        /// One-sigma uncertainty on --g2.
        #[arg(long, default_value_t = 0.0)]
        g2_sigma: f64,
        /// Saturation curve CSV (power_mw,counts_per_s).
        #[arg(long)]
        saturation: Option<PathBuf>,
        /// Detection-path budget JSON: {"elements": [...]}.
        #[arg(long)]
        budget: Option<PathBuf>,
        /// Detected count rate feeding the extraction-efficiency step
        /// (default: the fitted saturated rate when --saturation is
        /// given).
        #[arg(long)]
        detected_counts_per_s: Option<f64>,
        /// One-sigma uncertainty on the detected count rate.
        #[arg(long, default_value_t = 0.0)]
        detected_sigma_counts_per_s: f64,
        /// Excitation repetition rate; enables the extraction step.
        #[arg(long)]
        rep_rate_hz: Option<f64>,
        /// Recorded pump power density (metadata, copied to the report).
        #[arg(long)]
        pump_power_density_w_per_cm2: Option<f64>,
        /// Report path (default <out-dir>/source_report.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo fraction of emitters that can be tuned onto their
    /// designed pillar mode.
    Yield {
        /// JSON: { cavity, spec: { emitter, diameter_grid_um, trials,
        /// ... } }.
        #[arg(long)]
        config: PathBuf,
        /// Estimate path (default <out-dir>/yield.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses flags, runs the command, and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init()
        .ok();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let out_dir = cli.out_dir;
    let seed = cli.seed;
    match cli.command {
        Command::SimulateFrame { config } => cmd_simulate_frame(&config, seed, &out_dir),
        Command::SimulateHistogram { config, out } => {
            cmd_simulate_histogram(&config, seed, &out_dir, out)
        }
        Command::Localize { surface, emitter, layout, options, out } => {
            cmd_localize(&surface, &emitter, &layout, options.as_deref(), &out_dir, out)
        }
        Command::Design { config, out, curve_out } => {
            cmd_design(&config, &out_dir, out, curve_out)
        }
        Command::Characterize {
            decay,
            reference_decay,
            lifetime_window_ps,
            spectrum,
            histogram,
            g2_halfwidth_ns,
            g2,
            g2_sigma,
            saturation,
            budget,
            detected_counts_per_s,
            detected_sigma_counts_per_s,
            rep_rate_hz,
            pump_power_density_w_per_cm2,
            out,
        } => cmd_characterize(CharacterizeArgs {
            decay,
            reference_decay,
            lifetime_window_ps,
            spectrum,
            histogram,
            g2_halfwidth_ns,
            g2,
            g2_sigma,
            saturation,
            budget,
            detected_counts_per_s,
            detected_sigma_counts_per_s,
            rep_rate_hz,
            pump_power_density_w_per_cm2,
            out,
            out_dir,
        }),
        Command::Yield { config, out } => cmd_yield(&config, seed, &out_dir, out),
    }
}

/// Reads and types a JSON config. Missing/unreadable files are runtime
/// errors; malformed content (syntax, unknown keys, wrong types) is a
/// usage error. Returns the raw value too so callers can test key
/// presence.
fn parse_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, Value), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let raw: Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let typed: T = serde_json::from_value(raw.clone())
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok((typed, raw))
}

/// DOTFOUNDRY_SEED, if set; the value must be a bare unsigned integer.
fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("DOTFOUNDRY_SEED") {
        Ok(text) => text
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|e| usage(format!("DOTFOUNDRY_SEED={text:?}: {e}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(usage(format!("DOTFOUNDRY_SEED: {e}"))),
    }
}

/// Flag > explicit config value > environment > whatever the config
/// defaulted to.
fn resolve_seed(
    flag: Option<u64>,
    config_had_seed: bool,
    slot: &mut u64,
) -> Result<(), CliError> {
    if let Some(s) = flag {
        *slot = s;
    } else if !config_had_seed {
        if let Some(s) = env_seed()? {
            *slot = s;
        }
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn resolve_out(out: Option<PathBuf>, out_dir: &Path, default_name: &str) -> PathBuf {
    out.unwrap_or_else(|| out_dir.join(default_name))
}

fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    std::fs::write(path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Config errors keep exit code 2; everything else is a runtime
/// failure.
fn imaging_err(e: ImagingError) -> CliError {
    match e {
        ImagingError::InvalidField { .. } | ImagingError::OutOfFrame { .. } => usage(e),
        _ => runtime(e),
    }
}

fn localization_err(e: LocalizationError) -> CliError {
    match e {
        LocalizationError::InvalidField { .. } | LocalizationError::OutOfBounds { .. } => usage(e),
        _ => runtime(e),
    }
}

fn default_frame_basename() -> String {
    "frame".to_string()
}

/// Everything one frame render needs; doubles as the ground truth the
/// command prints for test harnesses.
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameConfig {
    geometry: FrameGeometry,
    scene: SceneSpec,
    #[serde(default = "NoiseSpec::disabled")]
    noise: NoiseSpec,
    #[serde(default = "default_frame_basename")]
    output_basename: String,
}

fn cmd_simulate_frame(
    config: &Path,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let (mut cfg, raw) = parse_config::<FrameConfig>(config)?;
    resolve_seed(seed, raw.pointer("/noise/seed").is_some(), &mut cfg.noise.seed)?;
    cfg.geometry.validate().map_err(usage)?;
    cfg.scene.validate(&cfg.geometry).map_err(usage)?;
    cfg.noise.validate().map_err(usage)?;

    let frame = render_frame(&cfg.scene, &cfg.noise, &cfg.geometry).map_err(imaging_err)?;
    ensure_dir(out_dir)?;
    let pgm_path = out_dir.join(format!("{}.pgm", cfg.output_basename));
    write_frame(&frame, &pgm_path).map_err(|e| runtime(e))?;

    // Ground truth (with the resolved seed) for harnesses scoring the
    // downstream localization.
    print!("{}", canonical(&cfg));
    Ok(())
}

fn cmd_simulate_histogram(
    config: &Path,
    seed: Option<u64>,
    out_dir: &Path,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (mut spec, raw) = parse_config::<HistogramSpec>(config)?;
    resolve_seed(seed, raw.get("seed").is_some(), &mut spec.seed)?;
    let hist = simulate_histogram(&spec).map_err(usage)?;

    ensure_dir(out_dir)?;
    let path = resolve_out(out, out_dir, "histogram.csv");
    pio::write_histogram_csv(&hist, &path).map_err(|e| runtime(e))?;
    println!(
        "histogram: {} bins, {} total counts -> {}",
        hist.delay_ns.len(),
        hist.counts.iter().sum::<f64>(),
        path.display()
    );
    Ok(())
}

fn cmd_localize(
    surface: &Path,
    emitter: &Path,
    layout: &Path,
    options: Option<&Path>,
    out_dir: &Path,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let surface_frame = read_frame(surface).map_err(|e| runtime(e))?;
    let emitter_frame = read_frame(emitter).map_err(|e| runtime(e))?;
    let (layout, _) = parse_config::<MarkLayout>(layout)?;
    let options = match options {
        Some(path) => parse_config::<LocalizeOptions>(path)?.0,
        None => LocalizeOptions::default(),
    };

    let report =
        localize(&surface_frame, &emitter_frame, &layout, &options).map_err(localization_err)?;
    ensure_dir(out_dir)?;
    let path = resolve_out(out, out_dir, "localization.json");
    write_text(&path, &canonical(&report))?;

    for (name, axis) in [("x", &report.x), ("y", &report.y)] {
        println!(
            "{name}: emitter {:.2} +/- {:.2} nm | separation from {} {:.2} +/- {:.2} nm | \
             scale {:.4} +/- {:.4} nm/px",
            axis.emitter.center_nm,
            axis.emitter.sigma_center_nm,
            axis.calibration.source_marks.0,
            axis.separation.delta_nm,
            axis.separation.sigma_nm,
            axis.calibration.nm_per_px,
            axis.calibration.sigma_nm_per_px,
        );
    }
    println!("report -> {}", path.display());
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignConfig {
    cavity: PlanarCavity,
    #[serde(default)]
    target_energy_ev: Option<f64>,
    #[serde(default)]
    target_wavelength_nm: Option<f64>,
    #[serde(default)]
    mode: ModeIndex,
    /// Diameters the fab can actually write; the pick minimizes
    /// detuning over this grid.
    diameter_grid_um: Vec<f64>,
    /// Diameters for the dumped mode curve (default: the grid).
    #[serde(default)]
    curve_diameters_um: Option<Vec<f64>>,
}

fn cmd_design(
    config: &Path,
    out_dir: &Path,
    out: Option<PathBuf>,
    curve_out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (cfg, _) = parse_config::<DesignConfig>(config)?;
    let target_ev = match (cfg.target_energy_ev, cfg.target_wavelength_nm) {
        (Some(e), None) => e,
        (None, Some(w)) => {
            if !(w.is_finite() && w > 0.0) {
                return Err(usage(format!("target_wavelength_nm must be > 0, got {w}")));
            }
            wavelength_to_energy_ev(w)
        }
        _ => {
            return Err(usage(
                "config must set exactly one of target_energy_ev, target_wavelength_nm",
            ));
        }
    };

    // Cavity errors (invalid fields, infeasible target, unsupported
    // mode) are all config problems: exit 2.
    let design =
        select_radius(&cfg.cavity, target_ev, cfg.mode, &cfg.diameter_grid_um).map_err(usage)?;
    let curve_diams = cfg.curve_diameters_um.as_ref().unwrap_or(&cfg.diameter_grid_um);
    let curve = mode_curve(&cfg.cavity, cfg.mode, curve_diams).map_err(usage)?;

    if design.lambda_mode_nm < cfg.cavity.stopband_nm.low_nm
        || design.lambda_mode_nm > cfg.cavity.stopband_nm.high_nm
    {
        log::warn!(
            "designed mode at {:.2} nm falls outside the mirror stopband [{}, {}] nm",
            design.lambda_mode_nm,
            cfg.cavity.stopband_nm.low_nm,
            cfg.cavity.stopband_nm.high_nm
        );
    }

    ensure_dir(out_dir)?;
    let design_path = resolve_out(out, out_dir, "design.json");
    let mut doc = serde_json::Map::new();
    doc.insert("target_energy_ev".to_string(), serde_json::json!(target_ev));
    doc.insert(
        "target_wavelength_nm".to_string(),
        serde_json::json!(energy_to_wavelength_nm(target_ev)),
    );
    doc.insert("design".to_string(), serde_json::to_value(design).expect("design serializes"));
    write_text(&design_path, &canonical(&Value::Object(doc)))?;

    let curve_path = resolve_out(curve_out, out_dir, "mode_curve.csv");
    let mut csv = Vec::new();
    crate::cavity::write_mode_curve_csv(&curve, &mut csv).map_err(|e| runtime(e))?;
    write_text(&curve_path, &String::from_utf8(csv).expect("csv is utf-8"))?;

    println!(
        "pillar {:.3} um -> {:.4} nm ({:.6} eV), detuning {:+.4} meV",
        design.diameter_um, design.lambda_mode_nm, design.e_mode_ev, design.detuning_mev
    );
    println!("design -> {} | curve -> {}", design_path.display(), curve_path.display());
    Ok(())
}

struct CharacterizeArgs {
    decay: Option<PathBuf>,
    reference_decay: Option<PathBuf>,
    lifetime_window_ps: Option<String>,
    spectrum: Option<PathBuf>,
    histogram: Option<PathBuf>,
    g2_halfwidth_ns: Option<f64>,
    g2: Option<f64>,
    g2_sigma: f64,
    saturation: Option<PathBuf>,
    budget: Option<PathBuf>,
    detected_counts_per_s: Option<f64>,
    detected_sigma_counts_per_s: f64,
    rep_rate_hz: Option<f64>,
    pump_power_density_w_per_cm2: Option<f64>,
    out: Option<PathBuf>,
    out_dir: PathBuf,
}

/// Flag-shaped inputs map to usage errors; data files map to runtime
/// errors.
fn photon_flag_err(e: PhotonError) -> CliError {
    match &e {
        PhotonError::InvalidField { field, .. }
            if matches!(*field, "fit_window_ps" | "integration_halfwidth_ns") =>
        {
            usage(e)
        }
        _ => runtime(e),
    }
}

fn parse_window(text: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(usage(format!("--lifetime-window-ps expects \"start,end\", got {text:?}")));
    }
    let lo = parts[0].trim().parse::<f64>().map_err(|e| usage(format!("{text:?}: {e}")))?;
    let hi = parts[1].trim().parse::<f64>().map_err(|e| usage(format!("{text:?}: {e}")))?;
    Ok((lo, hi))
}

fn cmd_characterize(args: CharacterizeArgs) -> Result<(), CliError> {
    if args.decay.is_none()
        && args.reference_decay.is_none()
        && args.spectrum.is_none()
        && args.histogram.is_none()
        && args.saturation.is_none()
        && args.budget.is_none()
    {
        return Err(usage(
            "nothing to analyze: pass at least one of --decay, --reference-decay, \
             --spectrum, --histogram, --saturation, --budget",
        ));
    }
    if args.histogram.is_some() && args.g2.is_some() {
        return Err(usage("--histogram and --g2 are mutually exclusive"));
    }

    let window = args.lifetime_window_ps.as_deref().map(parse_window).transpose()?;
    let mut report = SourceReport {
        pump_power_density_w_per_cm2: args.pump_power_density_w_per_cm2,
        ..SourceReport::default()
    };
    let mut lines = Vec::new();

    if let Some(path) = &args.decay {
        let trace = pio::read_decay_csv(path).map_err(|e| runtime(e))?;
        let fit = fit_lifetime(&trace, window).map_err(photon_flag_err)?;
        report.lifetime_cavity_ps = Some(Uncertain::new(fit.tau_ps, fit.sigma_tau_ps));
        lines.push(format!("lifetime (cavity): {:.1} +/- {:.1} ps", fit.tau_ps, fit.sigma_tau_ps));
    }
    if let Some(path) = &args.reference_decay {
        let trace = pio::read_decay_csv(path).map_err(|e| runtime(e))?;
        let fit = fit_lifetime(&trace, None).map_err(|e| runtime(e))?;
        report.lifetime_reference_ps = Some(Uncertain::new(fit.tau_ps, fit.sigma_tau_ps));
        lines.push(format!(
            "lifetime (reference): {:.1} +/- {:.1} ps",
            fit.tau_ps, fit.sigma_tau_ps
        ));
    }
    if let (Some(cav), Some(reference)) = (report.lifetime_cavity_ps, report.lifetime_reference_ps)
    {
        let f = purcell_factor(reference, cav).map_err(|e| runtime(e))?;
        lines.push(format!("Purcell factor: {:.2} +/- {:.2}", f.value, f.sigma));
        report.purcell = Some(f);
    }

    if let Some(path) = &args.spectrum {
        let spectrum = pio::read_spectrum_csv(path).map_err(|e| runtime(e))?;
        let q = q_factor(&spectrum).map_err(|e| runtime(e))?;
        report.q_factor = Some(Uncertain::new(q.q, q.sigma_q));
        lines.push(format!(
            "Q factor: {:.1} +/- {:.1} (center {:.4}, hwhm {:.5})",
            q.q, q.sigma_q, q.center, q.hwhm
        ));
    }

    if let Some(path) = &args.histogram {
        let hist = pio::read_histogram_csv(path).map_err(|e| runtime(e))?;
        let g2 = g2_zero(&hist, args.g2_halfwidth_ns).map_err(photon_flag_err)?;
        report.g2_zero = Some(Uncertain::new(g2.g2, g2.sigma_g2));
        lines.push(format!("g2(0): {:.4} +/- {:.4}", g2.g2, g2.sigma_g2));
    } else if let Some(g2) = args.g2 {
        if !(g2.is_finite() && g2 >= 0.0 && args.g2_sigma >= 0.0) {
            return Err(usage(format!(
                "--g2 needs a value >= 0 and --g2-sigma >= 0, got {g2} / {}",
                args.g2_sigma
            )));
        }
        report.g2_zero = Some(Uncertain::new(g2, args.g2_sigma));
    }

    if let Some(path) = &args.saturation {
        let (powers, counts) = pio::read_saturation_csv(path).map_err(|e| runtime(e))?;
        let fit = fit_saturation(&powers, &counts).map_err(|e| runtime(e))?;
        report.saturated_counts_per_s =
            Some(Uncertain::new(fit.saturated_counts_per_s, fit.sigma_saturated));
        report.saturation_power = Some(Uncertain::new(fit.p_sat, fit.sigma_p_sat));
        lines.push(format!(
            "saturation: {:.0} +/- {:.0} counts/s at P_sat {:.4} +/- {:.4}",
            fit.saturated_counts_per_s, fit.sigma_saturated, fit.p_sat, fit.sigma_p_sat
        ));
    }

    if let Some(path) = &args.budget {
        let elements = pio::read_budget_json(path).map_err(|e| runtime(e))?;
        let budget = efficiency_budget(&elements).map_err(|e| runtime(e))?;
        lines.push(format!(
            "detection path: {:.4} transmission, {:.1}% relative",
            budget.overall.transmission,
            100.0 * budget.overall.rel_err
        ));
        report.detection_path = Some(budget);
    }

    if let Some(rep_rate) = args.rep_rate_hz {
        let detected = match (args.detected_counts_per_s, report.saturated_counts_per_s) {
            (Some(v), _) => Uncertain::new(v, args.detected_sigma_counts_per_s),
            (None, Some(sat)) => sat,
            (None, None) => {
                return Err(usage(
                    "--rep-rate-hz needs a detected rate: pass --detected-counts-per-s or \
                     --saturation",
                ));
            }
        };
        let budget = report.detection_path.as_ref().ok_or_else(|| {
            usage("--rep-rate-hz needs the detection path: pass --budget")
        })?;
        let g2 = report.g2_zero.ok_or_else(|| {
            usage("--rep-rate-hz needs a g2(0) value: pass --histogram or --g2")
        })?;
        let eta = extraction_efficiency(detected, rep_rate, budget, g2).map_err(usage)?;
        lines.push(format!(
            "extraction efficiency: {:.3} +/- {:.3}",
            eta.value, eta.sigma
        ));
        report.extraction_efficiency = Some(eta);
    }

    ensure_dir(&args.out_dir)?;
    let path = resolve_out(args.out, &args.out_dir, "source_report.json");
    write_text(&path, &canonical(&report))?;
    for line in &lines {
        println!("{line}");
    }
    println!("report -> {}", path.display());
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct YieldConfig {
    cavity: PlanarCavity,
    spec: YieldSpec,
}

fn cmd_yield(
    config: &Path,
    seed: Option<u64>,
    out_dir: &Path,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (mut cfg, raw) = parse_config::<YieldConfig>(config)?;
    resolve_seed(seed, raw.pointer("/spec/seed").is_some(), &mut cfg.spec.seed)?;
    let estimate = estimate_yield(&cfg.cavity, &cfg.spec).map_err(usage)?;

    ensure_dir(out_dir)?;
    let path = resolve_out(out, out_dir, "yield.json");
    write_text(&path, &canonical(&estimate))?;
    println!(
        "yield {:.4} ({}/{} trials), 95% CI [{:.4}, {:.4}] -> {}",
        estimate.yield_fraction,
        estimate.successes,
        estimate.trials,
        estimate.ci_low,
        estimate.ci_high,
        path.display()
    );
    Ok(())
}
