use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfbd_cli::bench::{bench, bench_csv, BenchConfig};
use mfbd_cli::config::ExperimentConfig;
use mfbd_cli::error::{exit_code, StageError, Staged};
use mfbd_cli::figures::{all_figures, collect_spectra, FigureSizes};
use mfbd_cli::pipeline::{generate, open_dataset, run, save_dataset};
use mfbd_cli::{pgm, presets};
use mfbd_core::subspace::SvdBackend;
use mfbd_core::MfbdError;

#[derive(Parser)]
#[command(name = "mfbd", version, about = "Multi-frame blind deconvolution without filter estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (key = value lines).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset; see `mfbd presets`.
    #[arg(long)]
    preset: Option<String>,
    /// Override one configuration key, e.g. `--set n=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, StageError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(MfbdError::from).stage("config")?;
                ExperimentConfig::from_text(&text).stage("config")?
            }
            (None, Some(name)) => presets::preset(name).stage("config")?,
            (None, None) => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| MfbdError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))
                .stage("config")?;
            cfg.set(k, v).stage("config")?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let cfg = cfg.with_env_overrides();
        cfg.validate().stage("config")?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an observation sequence and write it as a dataset file.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore the image from a dataset (or from freshly generated data).
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset file; without it the configured sequence is generated.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Result directory; defaults to the configured output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the SVD backends over a grid of sequence lengths and frame sizes.
    BenchSvd {
        #[arg(long, value_delimiter = ',', default_values_t = [500, 4000])]
        n: Vec<usize>,
        /// Pixels per frame.
        #[arg(long = "frame-size", value_delimiter = ',', default_values_t = [100, 1_000, 10_000, 100_000])]
        frame_size: Vec<usize>,
        #[arg(long, default_value_t = 25)]
        rank: usize,
        #[arg(long, value_delimiter = ',', default_values_t = ["dense".to_string(), "randomized".to_string(), "single-pass".to_string()])]
        backends: Vec<String>,
        /// Largest matrix, in MiB, the dense backend accepts.
        #[arg(long, default_value_t = 256)]
        dense_budget_mib: usize,
        /// Cells with larger observation matrices, in MiB, are skipped.
        #[arg(long, default_value_t = 1024)]
        data_budget_mib: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the figure data, or collect spectra from run results.
    Figures {
        /// Directory to write to.
        #[arg(long, default_value = "figures")]
        out: PathBuf,
        /// Collect `spectrum.csv` from existing run bundles instead.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Use the long sequence lengths (slow).
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List presets, or print one as a configuration file.
    Presets { name: Option<String> },
}

fn write_text(path: &Path, text: &str) -> Result<(), StageError> {
    std::fs::write(path, text).map_err(MfbdError::from).stage("write")
}

fn execute(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Generate { cfg, out } => {
            let cfg = cfg.load()?;
            let data = generate(&cfg)?;
            save_dataset(&out, &data)?;
            if let Some(t) = &data.truth {
                let side = out.with_extension("truth.pgm");
                pgm::write_pgm(&side, t.shape(), &pgm::encode_gray(t)).stage("write dataset")?;
            }
            println!("wrote {} frames of {} to {}", data.y.len(), data.y.y_shape(), out.display());
        }
        Command::Run { cfg, dataset, out } => {
            let cfg = cfg.load()?;
            let data = match &dataset {
                Some(path) => open_dataset(path)?,
                None => generate(&cfg)?,
            };
            let result = run(&cfg, &data)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            result.write_bundle(&cfg, &dir)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            match result.ni_rms() {
                Some(e) => println!("{}: NI-RMS {e:.4}, results in {}", cfg.name, dir.display()),
                None => println!("{}: results in {}", cfg.name, dir.display()),
            }
        }
        Command::BenchSvd { n, frame_size, rank, backends, dense_budget_mib, data_budget_mib, out } => {
            let backends = backends
                .iter()
                .map(|b| b.parse::<SvdBackend>())
                .collect::<Result<Vec<_>, _>>()
                .stage("config")?;
            let cfg = BenchConfig {
                ns: n,
                frame_sizes: frame_size,
                rank,
                backends,
                dense_budget: dense_budget_mib << 20,
                data_budget: data_budget_mib << 20,
                ..BenchConfig::default()
            };
            let cells = bench(&cfg, |c| log::info!("n={} |y|={}: {:?}", c.n, c.frame_size, c.seconds)).stage("bench")?;
            let csv = bench_csv(&cfg, &cells);
            match out {
                Some(path) => write_text(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Figures { out, results, full, seed } => match results {
            Some(dir) => match collect_spectra(&dir).stage("figures")? {
                Some(csv) => {
                    std::fs::create_dir_all(&out).map_err(MfbdError::from).stage("write figures")?;
                    write_text(&out.join("spectra.csv"), &csv)?;
                    println!("wrote {}", out.join("spectra.csv").display());
                }
                None => println!("no run results in {}; nothing to do", dir.display()),
            },
            None => {
                let sizes = if full { FigureSizes::FULL } else { FigureSizes::DESK };
                for note in all_figures(&out, sizes, seed)? {
                    println!("{note}");
                }
                println!("figure data in {}", out.display());
            }
        },
        Command::Presets { name: None } => {
            for name in presets::NAMES {
                println!("{name}");
            }
        }
        Command::Presets { name: Some(name) } => print!("{}", presets::preset(&name).stage("config")?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e.source) as u8)
        }
    }
}
