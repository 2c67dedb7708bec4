use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tss::cli::{oracle, run_experiment, validate, ExperimentConfig, ModelSpec, StateSampler};

#[derive(Parser)]
#[command(name = "tss", version, about = "Free energy estimation with windowed, visit-controlled simulated tempering")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment from a TOML config (or a run manifest). TSS_SEED overrides the seed.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and print the derived epoch growth factor.
    Validate { config: PathBuf },
    /// Analytic and baseline reference values.
    Oracle {
        #[command(subcommand)]
        sub: Oracle,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// Asymptotic TSS variance on the uniform pair.
    VarTss {
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1)]
        nu: u32,
    },
    /// Asymptotic MBAR variance on the uniform pair.
    VarMbar {
        #[arg(long)]
        delta: f64,
    },
    /// Overlap matrix of an analytic model under uniform weights.
    Overlap {
        /// uniform_pair, gaussian_ladder or identical_pair
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 3)]
        l: usize,
    },
    /// MBAR free energies from a CSV of `rung,H_0,...,H_{K-1}` rows.
    Mbar {
        #[arg(long)]
        samples_file: PathBuf,
    },
    /// Closed-form and pipeline visit-control drift for two rungs.
    Meanfield {
        #[arg(long, default_value_t = 2.0)]
        eta: f64,
        #[arg(long, conflicts_with = "delta_range")]
        delta: Option<f64>,
        /// lo:hi:n
        #[arg(long)]
        delta_range: Option<String>,
    },
}

fn oracle_cmd(sub: Oracle) -> tss::Result<String> {
    match sub {
        Oracle::VarTss { delta, nu } => oracle::var_tss(delta, nu),
        Oracle::VarMbar { delta } => oracle::var_mbar(delta),
        Oracle::Overlap { model, delta, l } => {
            let spec = match model.as_str() {
                "uniform_pair" => ModelSpec::UniformPair { delta },
                "gaussian_ladder" => ModelSpec::GaussianLadder { l, sampler: StateSampler::Exact },
                "identical_pair" => ModelSpec::IdenticalPair,
                other => return Err(tss::TssError::Config(format!("unknown model {other:?}"))),
            };
            oracle::overlap(&spec)
        }
        Oracle::Mbar { samples_file } => oracle::mbar(&samples_file),
        Oracle::Meanfield { eta, delta, delta_range } => {
            let deltas = match (delta, delta_range) {
                (_, Some(r)) => oracle::parse_range(&r)?,
                (Some(d), None) => vec![d],
                (None, None) => vec![0.0],
            };
            oracle::meanfield(eta, &deltas)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config, out } => ExperimentConfig::load(&config).and_then(|cfg| {
            let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("tss-out"));
            let r = run_experiment(&cfg, Some(&dir))?;
            Ok(format!("{} cycles, outputs in {}", r.cycles, dir.display()))
        }),
        Cmd::Validate { config } => ExperimentConfig::load(&config).map(|cfg| {
            let rep = validate(&cfg);
            let s = rep.to_string();
            if rep.is_ok() {
                s
            } else {
                print!("{s}");
                std::process::exit(1);
            }
        }),
        Cmd::Oracle { sub } => oracle_cmd(sub),
    };
    match res {
        Ok(s) => {
            println!("{}", s.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
