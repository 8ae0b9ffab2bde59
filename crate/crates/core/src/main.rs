use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dentres::commands::{
    cmd_align, cmd_detect, cmd_enroll, cmd_eval, cmd_extract, cmd_select, load_config,
    BenchmarkSpec, SelectTarget,
};
use dentres::pipeline::{PipelineConfig, MODEL_BAND, USER_BAND};
use dentres::scenario::{render_scenario, Scenario};
use dentres::spectral::Band;
use dentres::{Error, Result};

/// Tooth resonance signatures from sonic-toothbrush audio.
///
/// Exit codes: 0 success, 2 validation error, 3 I/O error, 4 insufficient data.
#[derive(Debug, Parser)]
#[command(name = "dentres", version)]
struct Cli {
    /// Pipeline configuration (JSON); defaults: 44.1 kHz, 50 ms windows,
    /// 75% overlap, 2-16 kHz, partition 5/80, alpha 1, Scott bandwidth,
    /// 2 kept IMFs.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the seed of the config, scenario or benchmark.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Skip EMD denoising.
    #[arg(long, global = true)]
    skip_denoise: bool,
    /// Analysis band: `user` (2-16 kHz), `model` (2-18 kHz) or `LO:HI` in Hz.
    #[arg(long, global = true)]
    band: Option<String>,
    /// Measurements aggregated per tooth by `detect`.
    #[arg(long, global = true, default_value_t = 1)]
    k: usize,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Target {
    Condition,
    Tooth,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize recordings and ground truth from a scenario file.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract one signature per session entry.
    Extract {
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write spectrogram, cepstrum and slice CSVs per recording.
        #[arg(long)]
        plot_data: bool,
    },
    /// Choose discriminative feature ranges from a labeled session.
    Select {
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Target::Condition)]
        by: Target,
        /// Write per-dimension gains as CSV.
        #[arg(long)]
        gains_csv: Option<PathBuf>,
    },
    /// Fit reference profiles from healthy measurements.
    Enroll {
        session: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Range set from `select`; full signatures otherwise.
        #[arg(long)]
        ranges: Option<PathBuf>,
    },
    /// Score measurements against enrolled profiles.
    Detect {
        session: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Align a brushing recording to a labeled reference.
    Align {
        /// Reference session manifest, or WAV with --reference-truth.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        reference_truth: Option<PathBuf>,
        /// Test session manifest or WAV.
        #[arg(long)]
        test: PathBuf,
        /// Ground truth with frame labels, for accuracy metrics.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        ranges: Option<PathBuf>,
        /// Sakoe-Chiba band half-width in frames.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a detection and alignment benchmark (bundled one by default).
    Eval {
        bench: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_band(s: &str) -> Result<Band> {
    match s {
        "user" => Ok(USER_BAND),
        "model" => Ok(MODEL_BAND),
        _ => {
            let (lo, hi) = s
                .split_once(':')
                .ok_or_else(|| Error::Validation(format!("band {s:?}: expected user, model or LO:HI")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Validation(format!("band {s:?}: {v:?} is not a number")))
            };
            Ok(Band::new(parse(lo)?, parse(hi)?))
        }
    }
}

fn apply_overrides(mut cfg: PipelineConfig, cli: &Cli) -> Result<PipelineConfig> {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.skip_denoise {
        cfg.skip_denoise = true;
    }
    if let Some(b) = &cli.band {
        cfg.band = parse_band(b)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pipeline(cli: &Cli) -> Result<PipelineConfig> {
    let base = match &cli.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    apply_overrides(base, cli)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { scenario, out } => {
            let mut s = Scenario::load(scenario)?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            print_json(&render_scenario(&s, out)?)
        }
        Command::Extract {
            session,
            out,
            plot_data,
        } => {
            let records = cmd_extract(session, &pipeline(cli)?, out, *plot_data)?;
            log::info!("extracted {} signatures into {}", records.len(), out.display());
            print_json(&records.iter().map(|r| &r.audio).collect::<Vec<_>>())
        }
        Command::Select {
            session,
            out,
            by,
            gains_csv,
        } => {
            let target = match by {
                Target::Condition => SelectTarget::Condition,
                Target::Tooth => SelectTarget::Tooth,
            };
            let report = cmd_select(session, &pipeline(cli)?, target, out, gains_csv.as_deref())?;
            print_json(&report.ranges)
        }
        Command::Enroll {
            session,
            store,
            ranges,
        } => print_json(&cmd_enroll(session, &pipeline(cli)?, store, ranges.as_deref())?),
        Command::Detect {
            session,
            store,
            out,
        } => {
            let report = cmd_detect(session, &pipeline(cli)?, store, cli.k)?;
            if let Some(p) = out {
                write_report(p, &report)?;
            }
            print_json(&report)
        }
        Command::Align {
            reference,
            reference_truth,
            test,
            truth,
            ranges,
            window,
            out,
        } => {
            let result = cmd_align(
                reference,
                reference_truth.as_deref(),
                test,
                truth.as_deref(),
                &pipeline(cli)?,
                ranges.as_deref(),
                *window,
                out,
            )?;
            print_json(&serde_json::json!({
                "range": result.range,
                "total_cost": result.report.total_cost,
                "dtw": result.report.dtw,
                "baseline": result.report.baseline,
                "frames": result.report.frames.len(),
            }))
        }
        Command::Eval { bench, out } => {
            let mut spec = match bench {
                Some(p) => BenchmarkSpec::load(p)?,
                None => BenchmarkSpec::bundled(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            if let Some(p) = &cli.config {
                spec.pipeline = load_config(p)?;
            }
            spec.pipeline = apply_overrides(spec.pipeline, cli)?;
            print_json(&cmd_eval(&spec, out)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
