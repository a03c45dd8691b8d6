use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use vvc_core::feeder::load_feeder;
use vvc_core::grid::NetworkModel;
use vvc_core::profiles::{save_profiles, synthesize_profiles};
use vvc_core::replay::Correction;
use vvc_core::trainer::{
    baseline_agents, evaluate, load_agents, seed_sweep, EvalSummary, RunConfig, Scenario, TrainError,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "vvc", version, about = "Two-timescale Volt/VAR control with bi-level soft actor-critic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the first configured seed (or --seed) and evaluate it on held-out days.
    Train(RunArgs),
    /// Train every configured seed and write per-episode aggregates.
    Sweep(RunArgs),
    /// Greedy evaluation of saved checkpoints, or of untrained agents with --baseline.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Directory holding fast.ckpt and slow.ckpt.
        #[arg(long, conflicts_with = "baseline")]
        checkpoints: Option<PathBuf>,
        /// Evaluate freshly initialized agents for this seed.
        #[arg(long)]
        baseline: Option<u64>,
    },
    /// Write synthetic load and solar profiles as CSV.
    SynthProfiles {
        #[arg(long)]
        feeder: Option<PathBuf>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 31)]
        days: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectionArg {
    Mtopc,
    Off,
}

/// Overrides applied on top of the config file (or defaults).
#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    feeder: Option<PathBuf>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    synth_seed: Option<u64>,
    #[arg(long)]
    train_days: Option<usize>,
    #[arg(long)]
    eval_days: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Seeds (repeat or comma-separate).
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    correction: Option<CorrectionArg>,
    #[arg(long)]
    alpha_fast: Option<f64>,
    #[arg(long)]
    alpha_slow: Option<f64>,
    #[arg(long)]
    gamma_fast: Option<f64>,
    #[arg(long)]
    gamma_slow: Option<f64>,
    #[arg(long)]
    lr_fast: Option<f64>,
    #[arg(long)]
    lr_slow: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    #[arg(long)]
    warmup_slow: Option<usize>,
    /// Gradient steps per fast control step.
    #[arg(long)]
    fast_update_steps: Option<usize>,
    /// Gradient steps per slow control step.
    #[arg(long)]
    slow_update_steps: Option<usize>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    no_checkpoints: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, TrainError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        if self.feeder.is_some() {
            c.feeder = self.feeder.clone();
        }
        if self.profiles.is_some() {
            c.profiles.path = self.profiles.clone();
        }
        set!(c.profiles.synth_seed, self.synth_seed);
        set!(c.profiles.train_days, self.train_days);
        set!(c.profiles.eval_days, self.eval_days);
        set!(c.episodes, self.episodes);
        if !self.seeds.is_empty() {
            c.seeds = self.seeds.clone();
        }
        set!(c.out_dir, self.out_dir);
        if let Some(k) = self.correction {
            c.correction = match k {
                CorrectionArg::Mtopc => Correction::Mtopc,
                CorrectionArg::Off => Correction::Off,
            };
        }
        set!(c.fast.alpha, self.alpha_fast);
        set!(c.slow.alpha, self.alpha_slow);
        set!(c.fast.gamma, self.gamma_fast);
        set!(c.slow.gamma, self.gamma_slow);
        set!(c.fast.adam.lr, self.lr_fast);
        set!(c.slow.adam.lr, self.lr_slow);
        if let Some(b) = self.batch_size {
            c.fast.batch_size = b;
            c.slow.batch_size = b;
        }
        set!(c.buffer_capacity, self.buffer_capacity);
        set!(c.warmup_slow, self.warmup_slow);
        set!(c.fast_updates.steps, self.fast_update_steps);
        set!(c.slow_updates.steps, self.slow_update_steps);
        if self.sequential {
            c.parallel = false;
        }
        if self.no_checkpoints {
            c.save_checkpoints = false;
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_eval(label: &str, s: &EvalSummary) {
    println!(
        "{label}: days={} cost=${:.2} p_loss={:.4} MWh vvr_sum={:.5} oltc={:.1} cb={:.1} failures={}",
        s.days, s.cost, s.p_loss_mwh, s.vvr_sum, s.oltc_switches, s.cb_switches, s.failures
    );
}

fn run(cli: Cli) -> Result<(), TrainError> {
    match cli.command {
        Command::Train(args) => {
            let mut cfg = args.config()?;
            cfg.seeds.truncate(1);
            train_and_report(&cfg)
        }
        Command::Sweep(args) => train_and_report(&args.config()?),
        Command::Evaluate {
            run,
            checkpoints,
            baseline,
        } => {
            let cfg = run.config()?;
            let scenario = Scenario::load(&cfg)?;
            let (fast, slow) = match (checkpoints, baseline) {
                (Some(dir), _) => load_agents(&cfg, &scenario, &dir)?,
                (None, Some(seed)) => baseline_agents(&cfg, &scenario, seed)?,
                (None, None) => {
                    return Err(TrainError::Config("evaluate needs --checkpoints or --baseline".into()));
                }
            };
            let s = evaluate(&cfg, &scenario.net, &fast, &slow, &scenario.eval_days, cfg.exec())?;
            print_eval("evaluation", &s);
            Ok(())
        }
        Command::SynthProfiles { feeder, seed, days, out } => {
            let net = match feeder {
                Some(p) => load_feeder(&p)?,
                None => NetworkModel::ieee33(),
            };
            save_profiles(&out, &net, &synthesize_profiles(&net, seed, days))?;
            println!("wrote {days} days to {}", out.display());
            Ok(())
        }
    }
}

fn train_and_report(cfg: &RunConfig) -> Result<(), TrainError> {
    let scenario = Scenario::load(cfg)?;
    let start = Instant::now();
    let sweep = seed_sweep(cfg, &scenario, true)?;
    let mut failed = 0;
    for (seed, run) in cfg.seeds.iter().zip(&sweep.runs) {
        match run {
            Ok(run) => {
                let last = run.metrics.last();
                println!(
                    "seed {seed}: {} episodes, final reward {:.2}, failures {}",
                    run.metrics.len(),
                    last.map_or(f64::NAN, |m| m.reward),
                    run.metrics.iter().filter(|m| m.failed).count()
                );
                let s = evaluate(cfg, &scenario.net, &run.fast, &run.slow, &scenario.eval_days, cfg.exec())?;
                print_eval(&format!("seed {seed} held-out"), &s);
            }
            Err(e) => {
                eprintln!("seed {seed} failed: {e}");
                failed += 1;
            }
        }
    }
    println!("outputs in {} ({:.1}s)", cfg.out_dir.display(), start.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(TrainError::SeedsFailed(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).context("vvc") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = matches!(
                e.downcast_ref::<TrainError>(),
                Some(TrainError::Config(_) | TrainError::Feeder(_) | TrainError::Profile(_))
            );
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
