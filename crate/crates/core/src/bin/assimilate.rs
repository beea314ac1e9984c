use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use assimilate::harness::{
    chain_csv, coupling_csv, experiment_twin_data, parse_weighted_points, run_twin_experiment, twin_csv,
    ExperimentConfig,
};
use assimilate::rng::RngStream;
use assimilate::samplers::{hmc_chain, TargetDensity, DEFAULT_STEP_SIZE};
use assimilate::transport::{discrete_optimal_coupling, squared_distance_cost};
use assimilate::{Error, Result};

#[derive(Parser)]
#[command(name = "assimilate", version, about = "Ensemble data assimilation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate truth and observations and write them as CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for twin.csv; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a twin experiment and write per-step metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics.csv; overrides `run.output`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Add the exact Kalman reference columns.
        #[arg(long)]
        oracle: bool,
    },
    /// Draw MCMC samples from a built-in target.
    Sample {
        /// "gaussian" or "bayes-linear".
        #[arg(long, default_value = "bayes-linear")]
        target: String,
        #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
        eps: f64,
        /// Leapfrog steps per proposal (1 gives MALA).
        #[arg(short = 'L', long = "leapfrog", default_value_t = 1)]
        leapfrog: usize,
        #[arg(short = 'n', long = "samples", default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for chain.csv; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Optimal coupling between two weighted point sets.
    Transport {
        /// Lines `x1,...,xd,weight`.
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Directory for coupling.csv; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path).map_err(|e| match e {
        Error::Io(io) => Error::config(format!("{}: {io}", path.display())),
        other => other,
    })?;
    if let Some(s) = seed {
        cfg.filter.seed = s;
    }
    Ok(cfg)
}

fn emit(dir: Option<&Path>, name: &str, contents: &str) -> Result<()> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            std::fs::write(d.join(name), contents)?;
        }
        None => print!("{contents}"),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, output } => {
            let cfg = load_config(&config, seed)?;
            let ex = cfg.validate()?;
            let twin = experiment_twin_data(&ex)?.ok_or_else(|| Error::config("run.n_steps must be at least 1"))?;
            emit(output.as_deref(), "twin.csv", &twin_csv(&twin))
        }
        Command::Run { config, seed, output, oracle } => {
            let mut cfg = load_config(&config, seed)?;
            cfg.run.oracle |= oracle;
            let to_stdout = output.is_none() && cfg.run.output.is_none();
            if let Some(dir) = &output {
                cfg.run.output = Some(dir.join("metrics.csv").to_string_lossy().into_owned());
            }
            let out = run_twin_experiment(&cfg)?;
            if to_stdout {
                print!("{}", out.metrics.to_csv());
            }
            let m = &out.metrics;
            if !m.steps.is_empty() {
                eprintln!("mean rmse {:.6}  mean spread {:.6}", m.mean_rmse(), m.mean_spread());
                if let Some(gap) = m.max_oracle_gap() {
                    eprintln!("max oracle gap {gap:.3e}");
                }
            }
            Ok(())
        }
        Command::Sample { target, eps, leapfrog, samples, seed, output } => {
            let t = TargetDensity::builtin(&target)?;
            if leapfrog == 0 || samples == 0 || !(eps > 0.0) {
                return Err(Error::config("eps, L and n must be positive"));
            }
            let mut rng = RngStream::new(seed, "sampler").rng();
            let chain = hmc_chain(&t, &DVector::zeros(t.dim()), eps, leapfrog, samples, &mut rng)?;
            emit(output.as_deref(), "chain.csv", &chain_csv(&chain))?;
            let kept = chain.default_samples();
            let mean = kept.column_sum() / kept.ncols().max(1) as f64;
            eprintln!("acceptance rate {:.4}", chain.acceptance_rate);
            eprintln!("mean after burn-in {:?}", mean.as_slice());
            Ok(())
        }
        Command::Transport { source, target, output } => {
            let read = |p: &Path| -> Result<_> {
                let text = std::fs::read_to_string(p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
                parse_weighted_points(&text)
            };
            let (xs, ws) = read(&source)?;
            let (xt, wt) = read(&target)?;
            if xs.nrows() != xt.nrows() {
                return Err(Error::config("source and target points have different dimensions"));
            }
            let cost = squared_distance_cost(&xs, &xt)?;
            let plan = discrete_optimal_coupling(&ws, &wt, &cost)?;
            emit(output.as_deref(), "coupling.csv", &coupling_csv(&plan))?;
            eprintln!("W2 {:.17e}", plan.objective(&cost).max(0.0).sqrt());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
