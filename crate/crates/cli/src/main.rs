//! Batch front end: parse scenario files, run evaluations, sweeps and
//! calibrations, and emit CSV/JSON artifacts suitable for external
//! plotting. Outputs are byte-identical for identical scenario, seed and
//! version, independent of the thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use nearfield_core::calibration::{fit_coefficients, generate_dataset, CoefficientId, SettingsGrid};
use nearfield_core::config::SystemConfig;
use nearfield_core::metrics::{psf_cuts, FocusReport};
use nearfield_core::unfd::{evaluate_at_on_grid, sweep_layer_count};
use nearfield_core::{aperture::build_aperture, selfcheck, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_PROPERTY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "nearfield",
    version,
    about = "Near-field focusing simulator for stacked programmable phase layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario JSON file.
    #[arg(long, value_name = "PATH")]
    scenario: PathBuf,

    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Scenario override as dotted-key=value, repeatable
    /// (e.g. --override imperfections.transmission_efficiency=0.8).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker thread cap; falls back to NEARFIELD_SIM_THREADS, then auto.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,

    /// Override the imperfection RNG seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one (layer count, distance) operating point.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Focal distance in meters; defaults to the sweep-range midpoint.
        #[arg(long, value_name = "R")]
        focal_distance: Option<f64>,
    },
    /// Sweep distances per layer count and report usable boundaries.
    SweepUnfd {
        #[command(flatten)]
        common: CommonArgs,
        /// Layer counts to sweep, e.g. --layers 1,2,3.
        #[arg(long, value_delimiter = ',', value_name = "L,..")]
        layers: Option<Vec<usize>>,
    },
    /// Emit lateral/axial PSF cut CSVs per layer count.
    Psf {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "R")]
        focal_distance: Option<f64>,
        #[arg(long, value_delimiter = ',', value_name = "L,..")]
        layers: Option<Vec<usize>>,
    },
    /// Generate a calibration dataset and fit the correction coefficients.
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        /// Layer counts in the settings grid.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        layers: Vec<usize>,
        /// Number of calibration distances across the sweep range.
        #[arg(long, default_value_t = 4)]
        distances: usize,
        /// Hold out every k-th row and report the prediction RMS.
        #[arg(long, value_name = "K")]
        holdout: Option<usize>,
    },
    /// Run the built-in property suite and print pass/fail per check.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        /// Multiply every check tolerance (0 forces failure).
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
        /// Corrupt the operator dump on purpose (negative control).
        #[arg(long, default_value_t = false)]
        corrupt_dump: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Core(e)) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_NUMERIC)
            }
        }
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(AppError::PropertyFailure) => ExitCode::from(EXIT_PROPERTY),
    }
}

enum AppError {
    Core(Error),
    Usage(String),
    PropertyFailure,
}

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        AppError::Core(e)
    }
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Run {
            common,
            focal_distance,
        } => {
            let (config, meta) = load_scenario(&common)?;
            let r = focal_distance.unwrap_or_else(|| default_distance(&config));
            run_single(&config, r, &common.out, &meta)
        }
        Command::SweepUnfd { common, layers } => {
            let (config, meta) = load_scenario(&common)?;
            let layer_counts =
                layers.unwrap_or_else(|| (1..=config.layer_count).collect::<Vec<_>>());
            run_sweep(&config, &layer_counts, &common.out, &meta)
        }
        Command::Psf {
            common,
            focal_distance,
            layers,
        } => {
            let (config, meta) = load_scenario(&common)?;
            let r = focal_distance.unwrap_or_else(|| default_distance(&config));
            let layer_counts = layers.unwrap_or_else(|| vec![config.layer_count]);
            run_psf(&config, r, &layer_counts, &common.out, &meta)
        }
        Command::Calibrate {
            common,
            layers,
            distances,
            holdout,
        } => {
            let (config, meta) = load_scenario(&common)?;
            run_calibrate(&config, &layers, distances, holdout, &common.out, &meta)
        }
        Command::Validate {
            common,
            tolerance_scale,
            corrupt_dump,
        } => {
            let (config, _) = load_scenario(&common)?;
            run_validate(&config, tolerance_scale, corrupt_dump, &common.out)
        }
    }
}

/// Provenance line embedded at the top of every CSV.
struct Meta {
    version: &'static str,
    scenario_sha256: String,
}

impl Meta {
    fn comment(&self) -> String {
        format!(
            "# tool=nearfield v{} scenario_sha256={}",
            self.version, self.scenario_sha256
        )
    }
}

fn load_scenario(common: &CommonArgs) -> Result<(SystemConfig, Meta), AppError> {
    if let Some(n) = threads_from(common) {
        // A failure here means a pool already exists (e.g. in tests);
        // the explicit cap is best-effort.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let text = std::fs::read_to_string(&common.scenario)
        .map_err(|e| Error::Scenario(format!("{}: {e}", common.scenario.display())))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Scenario(e.to_string()))?;

    for pair in &common.overrides {
        apply_override(&mut value, pair)?;
    }
    if let Some(seed) = common.seed {
        apply_override(&mut value, &format!("imperfections.rng_seed={seed}"))?;
    }

    // Hash the effective scenario (file + overrides) so reruns with the
    // same inputs produce identical provenance lines.
    let effective = serde_json::to_string(&value).map_err(Error::from)?;
    let mut hasher = Sha256::new();
    hasher.update(effective.as_bytes());
    let digest = hasher.finalize();
    let meta = Meta {
        version: env!("CARGO_PKG_VERSION"),
        scenario_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    };

    let config = SystemConfig::from_json_value(value)?;
    Ok((config, meta))
}

fn threads_from(common: &CommonArgs) -> Option<usize> {
    common.threads.or_else(|| {
        std::env::var("NEARFIELD_SIM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}

/// Set a dotted-path key in the scenario document, e.g.
/// "thresholds.gain_loss_db=2.5". The path must already exist or be a
/// legal new leaf under an existing object.
fn apply_override(value: &mut serde_json::Value, pair: &str) -> Result<(), AppError> {
    let (path, raw) = pair
        .split_once('=')
        .ok_or_else(|| AppError::Usage(format!("override '{pair}' is not KEY=VALUE")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| AppError::Usage(format!("override path '{path}' crosses a non-object")))?;
        if i + 1 == segments.len() {
            obj.insert((*seg).to_string(), parsed);
            return Ok(());
        }
        cursor = obj
            .entry((*seg).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!()
}

fn default_distance(config: &SystemConfig) -> f64 {
    let r_ray = config.rayleigh_distance();
    let lo = config.sweep.r_min_frac * r_ray;
    let hi = config.sweep.r_max_frac * r_ray;
    (lo * hi).sqrt()
}

fn write_csv(path: &Path, meta: &Meta, header: &str, rows: &[String]) -> Result<(), AppError> {
    let mut text = String::new();
    text.push_str(&meta.comment());
    text.push('\n');
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn run_single(
    config: &SystemConfig,
    r: f64,
    out: &Path,
    meta: &Meta,
) -> Result<(), AppError> {
    let r_ray = config.rayleigh_distance();
    if !(r > 0.0 && r <= r_ray) {
        return Err(Error::Config(format!(
            "focal distance {r} m lies outside (0, {r_ray}] (the Rayleigh distance for this aperture)"
        ))
        .into());
    }
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let grid = build_aperture(config)?;
    let report = evaluate_at_on_grid(config, &grid, r)?;

    write_csv(
        &out.join("focus_report.csv"),
        meta,
        FocusReport::CSV_HEADER,
        &[report.csv_row()],
    )?;
    let json = serde_json::json!({
        "tool_version": meta.version,
        "scenario_sha256": meta.scenario_sha256,
        "L": config.layer_count,
        "r": report.r,
        "coherence": report.coherence,
        "gain_loss_db": report.gain_loss_db,
        "fwhm_lat": report.fwhm_lat,
        "fwhm_ax": report.fwhm_ax,
        "retention_lat": report.retention_lat,
        "retention_ax": report.retention_ax,
        "wrms": report.wrms,
        "max_residual_phase": report.max_residual_phase,
        "R_ray": r_ray,
    });
    std::fs::write(
        out.join("focus_report.json"),
        serde_json::to_string_pretty(&json).map_err(Error::from)? + "\n",
    )
    .map_err(Error::from)?;
    println!(
        "L={} r={:.4} m: coherence {:.6}, gain loss {:.4} dB",
        config.layer_count, r, report.coherence, report.gain_loss_db
    );
    Ok(())
}

fn run_sweep(
    config: &SystemConfig,
    layer_counts: &[usize],
    out: &Path,
    meta: &Meta,
) -> Result<(), AppError> {
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let mut summaries = Vec::new();
    println!("{:>3} {:>12} {:>12} {:>12} {:>12}  {}", "L", "R_gain", "R_res", "R_phi", "R_unfd", "binding");
    for &layer_count in layer_counts {
        let report = sweep_layer_count(config, layer_count)?;
        let rows: Vec<String> = report.reports.iter().map(|r| r.csv_row()).collect();
        write_csv(
            &out.join(format!("unfd_L{layer_count}.csv")),
            meta,
            FocusReport::CSV_HEADER,
            &rows,
        )?;
        println!(
            "{:>3} {:>12.4} {:>12.4} {:>12.4} {:>12.4}  {:?}",
            layer_count, report.r_gain.r, report.r_res, report.r_phi.r, report.r_unfd, report.binding
        );
        summaries.push(report.summary_json());
    }
    let json = serde_json::json!({
        "tool_version": meta.version,
        "scenario_sha256": meta.scenario_sha256,
        "results": summaries,
    });
    std::fs::write(
        out.join("unfd_summary.json"),
        serde_json::to_string_pretty(&json).map_err(Error::from)? + "\n",
    )
    .map_err(Error::from)?;
    Ok(())
}

fn run_psf(
    config: &SystemConfig,
    r: f64,
    layer_counts: &[usize],
    out: &Path,
    meta: &Meta,
) -> Result<(), AppError> {
    std::fs::create_dir_all(out).map_err(Error::from)?;
    for &layer_count in layer_counts {
        let cfg = config.with_layer_count(layer_count);
        let grid = build_aperture(&cfg)?;
        let (stack, _) = nearfield_core::optimizer::optimize_on_grid(
            &cfg,
            &grid,
            r,
            &nearfield_core::optimizer::OptimizerSettings::default(),
        )?;
        let stack =
            nearfield_core::optimizer::inject_imperfections(&stack, &cfg.imperfections, &grid)?;
        std::fs::write(
            out.join(format!("stack_L{layer_count}.json")),
            serde_json::to_string(&stack.export_json(&grid)).map_err(Error::from)? + "\n",
        )
        .map_err(Error::from)?;
        let (lat, ax) = psf_cuts(&stack, &cfg, &grid, r)?;
        for (cut, name) in [(lat, "lateral"), (ax, "axial")] {
            let rows: Vec<String> = cut
                .coordinates
                .iter()
                .zip(&cut.intensity)
                .map(|(c, i)| format!("{c},{i}"))
                .collect();
            write_csv(
                &out.join(format!("psf_{name}_L{layer_count}.csv")),
                meta,
                "coordinate,intensity",
                &rows,
            )?;
        }
        println!("L={layer_count}: psf cuts written for r={r:.4} m");
    }
    Ok(())
}

fn run_calibrate(
    config: &SystemConfig,
    layers: &[usize],
    num_distances: usize,
    holdout: Option<usize>,
    out: &Path,
    meta: &Meta,
) -> Result<(), AppError> {
    std::fs::create_dir_all(out).map_err(Error::from)?;
    // Calibration rows need measurable PSF widths, which limits the
    // distances to the lower part of the Rayleigh region.
    let r_ray = config.rayleigh_distance();
    let lo = 0.03 * r_ray;
    let hi = 0.06 * r_ray;
    let distances: Vec<f64> = (0..num_distances.max(2))
        .map(|i| lo * (hi / lo).powf(i as f64 / (num_distances.max(2) - 1) as f64))
        .collect();
    let base = config.imperfections;
    let varied = vec![
        base,
        nearfield_core::config::ImperfectionParams {
            transmission_efficiency: 0.9 * base.transmission_efficiency,
            ..base
        },
        nearfield_core::config::ImperfectionParams {
            phase_bits: Some(3),
            ..base
        },
        nearfield_core::config::ImperfectionParams {
            misalignment: base.misalignment + 0.3 * config.element_pitch,
            ..base
        },
    ];
    let grid_of = SettingsGrid {
        layer_counts: layers.to_vec(),
        distances,
        imperfections: varied,
    };
    let dataset = generate_dataset(config, &grid_of)?;
    write_csv(
        &out.join("calibration_dataset.csv"),
        meta,
        nearfield_core::calibration::CalibrationDataset::csv_header(),
        &dataset.csv_rows(),
    )?;

    let which = [
        CoefficientId::XiLat,
        CoefficientId::XiAx,
        CoefficientId::GammaLoss,
        CoefficientId::GammaQuant,
        CoefficientId::Beta,
    ];
    let fit = fit_coefficients(&dataset, &which, &config.calibration, holdout)?;
    let coeff_json = serde_json::to_value(&fit.coefficients).map_err(Error::from)?;
    let json = serde_json::json!({
        "tool_version": meta.version,
        "scenario_sha256": meta.scenario_sha256,
        "coefficients": coeff_json,
        "loss_lat": fit.loss_lat,
        "loss_ax": fit.loss_ax,
        "holdout_rms": fit.holdout_rms,
        "per_coefficient_residual": fit.residuals,
    });
    std::fs::write(
        out.join("calibration_fit.json"),
        serde_json::to_string_pretty(&json).map_err(Error::from)? + "\n",
    )
    .map_err(Error::from)?;
    println!(
        "calibration fit: {} rows, lateral rms {:.3e}, axial rms {:.3e}",
        dataset.rows.len(),
        fit.loss_lat,
        fit.loss_ax
    );
    Ok(())
}

fn run_validate(
    config: &SystemConfig,
    tolerance_scale: f64,
    corrupt_dump: bool,
    out: &Path,
) -> Result<(), AppError> {
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let results = selfcheck::run_all(config.wavelength, tolerance_scale, corrupt_dump, out)?;
    let mut all_passed = true;
    for check in &results {
        println!(
            "{} {} ({})",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
        all_passed &= check.passed;
    }
    if all_passed {
        Ok(())
    } else {
        Err(AppError::PropertyFailure)
    }
}
