use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use optosync::config::{Config, Override};
use optosync::covariance::{self};
use optosync::floquet::{self, FloquetReport};
use optosync::meanfield::{limit_cycle_metrics, MeanState};
use optosync::params::SystemParams;
use optosync::spectrum::{self, SpectralContext};
use optosync::sweep::{run_sweep, time_average, Engine, PointSettings, SweepSpec};
use optosync::{Error, Result};

#[derive(Parser)]
#[command(name = "optosync", version, about = "Synchronization and entanglement of two optomechanical oscillators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; the reference parameters are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Override a config entry, e.g. `--set kappa=0.2` or `--set simulation.horizon=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate means and covariance; writes the time series CSV.
    Simulate(Common),
    /// Analytic Fourier steady state and effective constants (JSON).
    Floquet(Common),
    /// Spectral fluctuation moments and the K-condition.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Parameter sweep from the `[sweep]` section; writes the sweep table CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Routh–Hurwitz report for the analytic steady state (JSON).
    Stability(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn load(common: &Common) -> Result<Config> {
    let overrides = common.overrides.iter().map(|s| s.parse::<Override>()).collect::<Result<Vec<_>>>()?;
    match &common.config {
        Some(path) => Config::load(path, &overrides),
        None => Config::parse("", &overrides),
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut w = open_out(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::other)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn simulate(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let s = &cfg.settings;
    let sim = covariance::simulate(
        &MeanState::zero(),
        &s.initial_covariance.state(&cfg.params),
        &cfg.params,
        s.horizon,
        &s.simulation,
    )?;
    let mut w = open_out(common.out.as_deref())?;
    sim.write_csv(&mut w)?;
    w.flush()?;

    // summary on stderr so the CSV stays clean on stdout
    if let Ok(window) = s.window(&cfg.params) {
        let t = sim.times();
        let sq = time_average(t, &sim.series(|m| m.sq), window);
        let ed = time_average(t, &sim.series(|m| m.ed), window);
        if let (Ok(sq), Ok(ed)) = (sq, ed) {
            eprintln!("tail averages over {window:.4}: Sq = {sq:.6}, ED = {ed:.6}");
        }
        if let Ok(lc) = limit_cycle_metrics(&sim.trajectory, window) {
            eprintln!(
                "RMS(Q-)/RMS(Q+) = {:.3e}, recurrence error = {:.3e}",
                lc.rms_q_minus / lc.rms_q_plus,
                lc.recurrence_error
            );
        }
    }
    eprintln!("max Sq over steps = {:.6}", sim.audit.max_sq);
    Ok(())
}

fn floquet_cmd(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let report = FloquetReport::compute(&cfg.params, cfg.weak_coupling_ratio)?;
    if !report.weak_coupling.bare_couplings_weak {
        eprintln!("warning: couplings exceed the weak-coupling ratio {}", cfg.weak_coupling_ratio);
    }
    write_json(&report, common.out.as_deref())
}

fn spectrum_cmd(common: &Common, format: Format) -> Result<()> {
    let cfg = load(common)?;
    let ctx = SpectralContext::analytic(&cfg.params)?;
    let report = spectrum::mean_square_fluctuations(&ctx, &cfg.settings.spectrum)?.report()?;
    if !report.satisfies_uncertainty {
        eprintln!("warning: ⟨δq₋²⟩ + ⟨δp₋²⟩ = {:.6} is below 1", report.moments.uncertainty_sum());
    }
    match format {
        Format::Json => write_json(&report, common.out.as_deref()),
        Format::Csv => {
            let mut w = open_out(common.out.as_deref())?;
            report.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn sweep_cmd(common: &Common, threads: Option<usize>) -> Result<()> {
    let cfg = load(common)?;
    let spec = cfg.sweep.as_ref().ok_or_else(|| Error::Config("no [sweep] section in the configuration".into()))?;
    if threads == Some(0) {
        return Err(Error::Config("--threads must be ≥ 1".into()));
    }
    let table = run_sweep(spec, &cfg.params, &cfg.settings, threads)?;
    let mut w = open_out(common.out.as_deref())?;
    table.write_csv(&mut w)?;
    w.flush()?;
    if let Some(out) = &common.out {
        let meta = SweepMetadata {
            version: env!("CARGO_PKG_VERSION"),
            engine: table.engine,
            spec,
            params: &cfg.params,
            settings: &cfg.settings,
            config_path: common.config.as_deref(),
            config_text: common.config.as_deref().map(std::fs::read_to_string).transpose()?,
            overrides: &common.overrides,
        };
        write_json(&meta, Some(&metadata_path(out)))?;
    }
    let failed = table.rows.iter().filter(|r| r.status != optosync::sweep::PointStatus::Ok).count();
    if failed > 0 {
        eprintln!("{failed} of {} points did not evaluate cleanly (see status column)", table.rows.len());
    }
    Ok(())
}

/// Provenance written next to a sweep table as `<out>.meta.json`.
#[derive(Serialize)]
struct SweepMetadata<'a> {
    version: &'static str,
    engine: Engine,
    spec: &'a SweepSpec,
    params: &'a SystemParams,
    settings: &'a PointSettings,
    config_path: Option<&'a Path>,
    config_text: Option<String>,
    overrides: &'a [String],
}

fn metadata_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Serialize)]
struct StabilityOutput {
    constants: floquet::EffectiveConstants,
    #[serde(flatten)]
    report: floquet::StabilityReport,
}

fn stability_cmd(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let sol = floquet::FloquetSolution::solve(&cfg.params)?;
    let report = floquet::stability_check(&sol.constants, &cfg.params)?;
    write_json(&StabilityOutput { constants: sol.constants, report }, common.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Floquet(c) => floquet_cmd(c),
        Command::Spectrum { common, format } => spectrum_cmd(common, *format),
        Command::Sweep { common, threads } => sweep_cmd(common, *threads),
        Command::Stability(c) => stability_cmd(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
