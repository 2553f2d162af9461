//! `memlab`: simulate, synthesize, analyze and fit warm-vapor EIT memory
//! experiments from the command line.
//!
//! Results go to stdout (or `--out` files); every error path exits nonzero
//! with a one-line JSON object on stderr.

mod commands;
mod config;
mod svg;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{validate_config, RunConfig, SweepAxis};

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: String) -> Self {
        CliError { code, message }
    }

    fn to_json(&self) -> String {
        serde_json::json!({"error": {"code": self.code, "message": self.message}}).to_string()
    }
}

#[derive(Parser)]
#[command(
    name = "memlab",
    about = "Warm-vapor EIT memory: simulation, photon counting and noise analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// JSON configuration file; omitted keys take the built-in operating point.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (overrides MEMLAB_SEED and the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the empirical efficiency/noise/SNR models at one point.
    Models {
        #[command(subcommand)]
        cmd: ModelsCmd,
    },
    /// Run the Maxwell-Bloch storage/retrieval simulator.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Photon-counting histogram synthesis.
    Counts {
        #[command(subcommand)]
        cmd: CountsCmd,
    },
    /// Analyze a measured or synthetic histogram pair into memory metrics.
    Analyze {
        #[command(flatten)]
        common: CommonOpts,
        /// Signal histogram CSV (with its .meta.json sidecar).
        #[arg(long)]
        signal: PathBuf,
        /// Noise (blocked-input) histogram CSV.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Write the metrics JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the eta/SNR window trade-off as CSV.
        #[arg(long)]
        tradeoff: Option<PathBuf>,
    },
    /// Nonlinear least-squares fits of the noise models.
    Fit {
        #[command(subcommand)]
        cmd: FitCmd,
    },
    /// Evaluate the models over a parameter grid and emit a CSV table.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Output CSV path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker pool width for the sweep.
        #[arg(long)]
        jobs: Option<usize>,
        /// Also render the efficiency column as an SVG polyline.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Combine metrics and fit results into one versioned JSON report.
    Report {
        /// Metrics JSON produced by `analyze`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Fit JSON files produced by `fit`.
        #[arg(long)]
        fit: Vec<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Render a sweep CSV (via --series) as an SVG polyline.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Sweep CSV backing the --svg plot.
        #[arg(long)]
        series: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ModelsCmd {
    /// Evaluate eta(x), noise(x) and SNR(x) on one axis.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Sweep axis the point lives on.
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Axis value (ns, pJ or MHz according to the axis).
        #[arg(long)]
        x: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    /// Storage + retrieval at the configured operating point.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Output directory for envelopes and the run summary.
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CountsCmd {
    /// Synthesize arrival-time histograms from envelopes and a noise rate.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        /// Retrieved-signal envelope CSV (simulation time; from `sim run`).
        #[arg(long)]
        signal_env: Option<PathBuf>,
        /// Leakage envelope CSV.
        #[arg(long)]
        leak_env: Option<PathBuf>,
        /// Detected noise counts per attempt across the span
        /// (defaults to the configured noise model at the operating detuning).
        #[arg(long)]
        noise_per_attempt: Option<f64>,
        /// Signal histogram output CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also synthesize a blocked-input histogram here.
        #[arg(long)]
        noise_out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum FitCmd {
    /// Fit N(E) = b E^2 + c E + d E/(e+E) to an x,y,sigma_y dataset.
    NoiseEnergy {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit N(delta) = n_srs + n_fl V(delta) + n_fwm with fixed Voigt widths.
    NoiseDetuning {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        /// FWM level held fixed during the fit (counts/attempt).
        #[arg(long, default_value_t = 0.0)]
        n_fwm: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum AxisArg {
    PulseWidth,
    Energy,
    Detuning,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::PulseWidth => SweepAxis::PulseWidthNs,
            AxisArg::Energy => SweepAxis::ControlEnergyPj,
            AxisArg::Detuning => SweepAxis::DetuningMhz,
        }
    }
}

fn load_config(common: &CommonOpts) -> Result<RunConfig, CliError> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut cfg = validate_config(&text).map_err(|m| CliError::new("config", m))?;
    // Seed precedence: CLI flag > MEMLAB_SEED > config > default 0.
    if let Ok(env_seed) = std::env::var("MEMLAB_SEED") {
        cfg.seed = env_seed
            .parse()
            .map_err(|_| CliError::new("config", format!("bad MEMLAB_SEED: '{env_seed}'")))?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, format!("{text}\n"))
            .map_err(|e| CliError::new("io", format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Models {
            cmd: ModelsCmd::Eval {
                common,
                axis,
                x,
                out,
            },
        } => {
            let cfg = load_config(&common)?;
            let text = commands::models_eval(&cfg, axis.into(), x)?;
            emit(&text, &out)
        }
        Command::Sim {
            cmd: SimCmd::Run { common, out },
        } => {
            let cfg = load_config(&common)?;
            let result = commands::sim_run(&cfg, &out)?;
            println!("{}", result.summary);
            Ok(())
        }
        Command::Counts {
            cmd:
                CountsCmd::Synth {
                    common,
                    signal_env,
                    leak_env,
                    noise_per_attempt,
                    out,
                    noise_out,
                },
        } => {
            let cfg = load_config(&common)?;
            let text = commands::counts_synth(
                &cfg,
                signal_env.as_deref(),
                leak_env.as_deref(),
                noise_per_attempt,
                cfg.seed,
                &out,
                noise_out.as_deref(),
            )?;
            println!("{text}");
            Ok(())
        }
        Command::Analyze {
            common,
            signal,
            noise,
            out,
            tradeoff,
        } => {
            let cfg = load_config(&common)?;
            let result =
                commands::analyze(&cfg, &signal, noise.as_deref(), tradeoff.as_deref())?;
            emit(&result.json, &out)
        }
        Command::Fit { cmd } => match cmd {
            FitCmd::NoiseEnergy { common, data, out } => {
                let _ = load_config(&common)?; // config validated for consistency
                let text = commands::fit_noise_energy_cmd(&data, out.as_deref())?;
                println!("{text}");
                Ok(())
            }
            FitCmd::NoiseDetuning {
                common,
                data,
                n_fwm,
                out,
            } => {
                let cfg = load_config(&common)?;
                let text =
                    commands::fit_noise_detuning_cmd(&cfg, &data, n_fwm, out.as_deref())?;
                println!("{text}");
                Ok(())
            }
        },
        Command::Sweep {
            common,
            out,
            jobs,
            svg: svg_out,
        } => {
            let cfg = load_config(&common)?;
            let csv = commands::run_sweep(&cfg, jobs)?;
            if let Some(svg_path) = &svg_out {
                let pts = commands::sweep_eta_series(&csv);
                let plot = svg::polyline_plot(&pts, "efficiency sweep", "x", "eta_e2e");
                fs::write(svg_path, plot)
                    .map_err(|e| CliError::new("io", format!("{}: {e}", svg_path.display())))?;
            }
            match out {
                Some(path) => fs::write(&path, csv)
                    .map_err(|e| CliError::new("io", format!("{}: {e}", path.display()))),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Report {
            metrics,
            fit,
            out,
            svg: svg_out,
            series,
        } => {
            let text = commands::report(
                metrics.as_deref(),
                &fit,
                svg_out.as_deref(),
                series.as_deref(),
            )?;
            emit(&text, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
