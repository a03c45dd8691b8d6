//! End-to-end training, evaluation and seed sweeps.
//!
//! The loop is deterministic per (config, seed): after every fast step the
//! fast agent takes its configured gradient steps, and after every slow step
//! the slow agent does, in that order.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{slow_reward, Environment, FastAction, RewardParams, SlowAction, Timescale};
use crate::exec::Exec;
use crate::fast_agent::{FastAgent, FastAgentConfig};
use crate::feeder::{load_feeder, FeederError};
use crate::grid::NetworkModel;
use crate::profiles::{load_profiles, synthesize_profiles, DayProfile, ProfileError};
use crate::replay::{ClipBounds, Correction, FastTransition, ReplayBuffer, SlowTransition};
use crate::slow_agent::{SlowAgent, SlowAgentConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("seed {seed}, episode {episode}, slow step {slow_step}: {message}")]
    At {
        seed: u64,
        episode: usize,
        slow_step: usize,
        message: String,
    },
    #[error("{0} seed(s) failed")]
    SeedsFailed(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing metrics: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Run `steps` gradient steps after every `every`-th control step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateSchedule {
    pub every: usize,
    pub steps: usize,
}

impl Default for UpdateSchedule {
    fn default() -> Self {
        Self { every: 1, steps: 1 }
    }
}

impl UpdateSchedule {
    pub fn due(&self, control_step: usize) -> usize {
        if control_step % self.every == 0 {
            self.steps
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    /// Profile CSV; synthetic days are generated when absent.
    pub path: Option<PathBuf>,
    pub synth_seed: u64,
    pub train_days: usize,
    /// Held-out days, taken from the end of the day list.
    pub eval_days: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            path: None,
            synth_seed: 2024,
            train_days: 30,
            eval_days: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Feeder file; the bundled 33-bus feeder when absent.
    pub feeder: Option<PathBuf>,
    pub profiles: ProfileConfig,
    pub reward: RewardParams,
    pub timescale: Timescale,
    pub fast: FastAgentConfig,
    pub slow: SlowAgentConfig,
    pub fast_updates: UpdateSchedule,
    pub slow_updates: UpdateSchedule,
    /// Replay capacity in fast steps.
    pub buffer_capacity: usize,
    /// Slow transitions required before any gradient step.
    pub warmup_slow: usize,
    pub clip: ClipBounds,
    pub correction: Correction,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub save_checkpoints: bool,
    /// Fan independent seeds and evaluation days out across threads.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            feeder: None,
            profiles: ProfileConfig::default(),
            reward: RewardParams::default(),
            timescale: Timescale::default(),
            fast: FastAgentConfig::default(),
            slow: SlowAgentConfig::default(),
            fast_updates: UpdateSchedule::default(),
            slow_updates: UpdateSchedule::default(),
            buffer_capacity: 24_000,
            warmup_slow: 10,
            clip: ClipBounds::default(),
            correction: Correction::Mtopc,
            episodes: 200,
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("runs"),
            save_checkpoints: true,
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.reward.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.timescale.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if self.fast_updates.every == 0 || self.slow_updates.every == 0 {
            return bad("update schedules need every >= 1".into());
        }
        if self.buffer_capacity < self.timescale.k {
            return bad(format!("buffer capacity {} is below one block", self.buffer_capacity));
        }
        if !(self.clip.lo > 0.0 && self.clip.lo <= 1.0 && self.clip.hi >= 1.0 && self.clip.hi.is_finite()) {
            return bad(format!("clip bounds [{}, {}] must bracket 1", self.clip.lo, self.clip.hi));
        }
        if self.fast.batch_size == 0 || self.slow.batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        for (name, g, a, p) in [
            ("fast", self.fast.gamma, self.fast.alpha, self.fast.polyak),
            ("slow", self.slow.gamma, self.slow.alpha, self.slow.polyak),
        ] {
            if !(0.0..=1.0).contains(&g) || !(a >= 0.0) || !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} agent gamma/alpha/polyak out of range"));
            }
        }
        if self.fast.hidden.contains(&0) || self.slow.trunk.contains(&0) || self.slow.head_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.profiles.train_days == 0 && self.profiles.path.is_none() {
            return bad("at least one training day is required".into());
        }
        Ok(())
    }
}

/// Feeder plus training and held-out days.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub net: Arc<NetworkModel>,
    pub train_days: Vec<Arc<DayProfile>>,
    pub eval_days: Vec<Arc<DayProfile>>,
}

impl Scenario {
    pub fn load(cfg: &RunConfig) -> Result<Self, TrainError> {
        let net = match &cfg.feeder {
            Some(p) => load_feeder(p)?,
            None => NetworkModel::ieee33(),
        };
        let mut days = match &cfg.profiles.path {
            Some(p) => load_profiles(p, &net)?,
            None => synthesize_profiles(
                &net,
                cfg.profiles.synth_seed,
                cfg.profiles.train_days + cfg.profiles.eval_days,
            ),
        };
        if days.len() <= cfg.profiles.eval_days {
            return Err(TrainError::Config(format!(
                "{} days cannot cover {} held-out days plus training",
                days.len(),
                cfg.profiles.eval_days
            )));
        }
        let eval = days.split_off(days.len() - cfg.profiles.eval_days);
        Ok(Self {
            net: Arc::new(net),
            train_days: days.into_iter().map(Arc::new).collect(),
            eval_days: eval.into_iter().map(Arc::new).collect(),
        })
    }
}

/// One row per episode per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub seed: u64,
    pub day: usize,
    pub reward: f64,
    pub p_loss_mwh: f64,
    /// Sum of the per-step violation rate over the day.
    pub vvr_sum: f64,
    pub oltc_switches: usize,
    pub cb_switches: usize,
    pub fast_critic_loss: f64,
    pub fast_policy_loss: f64,
    pub fast_entropy: f64,
    pub slow_critic_loss: f64,
    pub slow_policy_loss: f64,
    pub slow_entropy: f64,
    pub omega_mean: f64,
    pub omega_std: f64,
    pub omega_non_finite: usize,
    pub fast_updates: usize,
    pub slow_updates: usize,
    pub failed: bool,
}

/// Raw reward stream of one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub slow_rewards: Vec<f64>,
    /// Fast rewards grouped by slow step. A failure during a slow step shows
    /// up as a single failure reward in its group.
    pub fast_rewards: Vec<Vec<f64>>,
    pub oltc_switches: Vec<usize>,
    pub cb_switches: Vec<usize>,
}

/// Batch statistics of ω′ at one slow gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaPoint {
    pub step: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub seed: u64,
    pub metrics: Vec<MetricsRow>,
    pub omega: Vec<OmegaPoint>,
    pub episodes: Vec<EpisodeLog>,
    pub fast: FastAgent,
    pub slow: SlowAgent,
    pub buffer: ReplayBuffer,
}

#[derive(Default)]
struct Running {
    sum: f64,
    n: usize,
}

impl Running {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }
    fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Fresh agents for a scenario, initialized from `seed`.
pub fn init_agents(cfg: &RunConfig, env: &Environment, rng: &mut ChaCha8Rng) -> (FastAgent, SlowAgent) {
    let fast = FastAgent::new(env.state_dim(), env.fast_action_dim(), cfg.fast.clone(), rng);
    let slow = SlowAgent::new(env.state_dim(), &env.slow_action_dims(), cfg.slow.clone(), rng);
    (fast, slow)
}

/// Trains one seed in memory.
pub fn train_seed(cfg: &RunConfig, scenario: &Scenario, seed: u64) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if scenario.train_days.is_empty() {
        return Err(TrainError::Config("no training days".into()));
    }
    let mut env = Environment::new(scenario.net.clone(), cfg.reward, cfg.timescale)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fast, mut slow) = init_agents(cfg, &env, &mut rng);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.timescale.k);
    let k = cfg.timescale.k;
    let neutral = SlowAction(scenario.net.neutral_taps());
    let step_minutes = cfg.reward.step_minutes;

    let mut metrics = Vec::with_capacity(cfg.episodes);
    let mut logs = Vec::with_capacity(cfg.episodes);
    let mut omega = Vec::new();
    let (mut fast_steps_total, mut slow_steps_total) = (0usize, 0usize);
    let mut slow_updates_total = 0usize;

    for episode in 0..cfg.episodes {
        let day = rng.gen_range(0..scenario.train_days.len());
        let at = |slow_step: usize, e: &dyn std::fmt::Display| TrainError::At {
            seed,
            episode,
            slow_step,
            message: e.to_string(),
        };
        env.reset(scenario.train_days[day].clone(), &neutral).map_err(|e| at(0, &e))?;
        let mut log = EpisodeLog::default();
        let mut row = MetricsRow {
            episode,
            seed,
            day,
            reward: 0.0,
            p_loss_mwh: 0.0,
            vvr_sum: 0.0,
            oltc_switches: 0,
            cb_switches: 0,
            fast_critic_loss: f64::NAN,
            fast_policy_loss: f64::NAN,
            fast_entropy: f64::NAN,
            slow_critic_loss: f64::NAN,
            slow_policy_loss: f64::NAN,
            slow_entropy: f64::NAN,
            omega_mean: f64::NAN,
            omega_std: f64::NAN,
            omega_non_finite: 0,
            fast_updates: 0,
            slow_updates: 0,
            failed: false,
        };
        let (mut fc, mut fp, mut fe) = (Running::default(), Running::default(), Running::default());
        let (mut sc, mut sp, mut se) = (Running::default(), Running::default(), Running::default());
        let (mut om, mut os) = (Running::default(), Running::default());

        for t in 0..cfg.timescale.slow_steps {
            let s_slow = env.state().expect("reset").features();
            let taps = slow.act(&s_slow, true, &mut rng).map_err(|e| at(t, &e))?;
            let out = env.step_slow(&SlowAction(taps.clone())).map_err(|e| at(t, &e))?;
            let mut block = Vec::with_capacity(k);
            let mut fast_rewards = Vec::with_capacity(k);
            if out.failed {
                fast_rewards.push(cfg.reward.failure_reward);
            } else {
                for _ in 0..k {
                    let s = env.state().expect("reset").features();
                    let a = fast.act(&s, true, &mut rng).map_err(|e| at(t, &e))?;
                    let logp = fast.policy().log_density(&s, &a, 1).map_err(|e| at(t, &e))?[0];
                    let step = env.step_fast(&FastAction(a.clone())).map_err(|e| at(t, &e))?;
                    fast_rewards.push(step.reward);
                    if !step.failed {
                        row.p_loss_mwh += step.p_loss_mw * step_minutes / 60.0;
                        row.vvr_sum += step.vvr;
                    }
                    block.push(FastTransition {
                        state: s,
                        action: a,
                        reward: step.reward,
                        next_state: step.state.features(),
                        terminal: step.block_end,
                        density: logp.exp(),
                    });
                    fast_steps_total += 1;
                    if buffer.len() >= cfg.warmup_slow && buffer.fast_len() >= cfg.fast.batch_size {
                        for _ in 0..cfg.fast_updates.due(fast_steps_total) {
                            let batch = buffer
                                .sample_fast_batch(cfg.fast.batch_size, &mut rng)
                                .map_err(|e| at(t, &e))?;
                            let l = fast.update(&batch, &mut rng).map_err(|e| at(t, &e))?;
                            fc.add(l.critic);
                            fp.add(l.policy);
                            fe.add(l.entropy);
                            row.fast_updates += 1;
                        }
                    }
                    if step.block_end {
                        break;
                    }
                }
            }
            let r_s = slow_reward(&cfg.reward, out.oltc_switches, out.cb_switches, &fast_rewards);
            row.reward += r_s;
            row.oltc_switches += out.oltc_switches;
            row.cb_switches += out.cb_switches;
            log.slow_rewards.push(r_s);
            log.fast_rewards.push(fast_rewards);
            log.oltc_switches.push(out.oltc_switches);
            log.cb_switches.push(out.cb_switches);
            let terminal = env.is_done();
            buffer
                .push(SlowTransition {
                    state: s_slow,
                    action: taps,
                    reward: r_s,
                    next_state: env.state().expect("reset").features(),
                    terminal,
                    block,
                })
                .map_err(|e| at(t, &e))?;
            slow_steps_total += 1;
            if buffer.len() >= cfg.warmup_slow.max(cfg.slow.batch_size) {
                for _ in 0..cfg.slow_updates.due(slow_steps_total) {
                    let (batch, stats) = buffer
                        .sample_slow_batch(
                            cfg.slow.batch_size,
                            &mut rng,
                            fast.policy(),
                            cfg.correction,
                            cfg.clip,
                            Exec::Sequential,
                        )
                        .map_err(|e| at(t, &e))?;
                    let l = slow.update(&batch).map_err(|e| at(t, &e))?;
                    sc.add(l.critic);
                    sp.add(l.policy);
                    se.add(l.entropy);
                    om.add(stats.mean);
                    os.add(stats.std);
                    row.omega_non_finite += stats.non_finite;
                    omega.push(OmegaPoint {
                        step: slow_updates_total,
                        mean: stats.mean,
                        std: stats.std,
                    });
                    row.slow_updates += 1;
                    slow_updates_total += 1;
                }
            }
            if terminal {
                break;
            }
        }
        row.failed = env.failed();
        row.fast_critic_loss = fc.mean();
        row.fast_policy_loss = fp.mean();
        row.fast_entropy = fe.mean();
        row.slow_critic_loss = sc.mean();
        row.slow_policy_loss = sp.mean();
        row.slow_entropy = se.mean();
        row.omega_mean = om.mean();
        row.omega_std = os.mean();
        metrics.push(row);
        logs.push(log);
    }
    Ok(TrainOutcome {
        seed,
        metrics,
        omega,
        episodes: logs,
        fast,
        slow,
        buffer,
    })
}

/// Per-day averages of a greedy evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalSummary {
    pub days: usize,
    pub p_loss_mwh: f64,
    pub vvr_sum: f64,
    pub oltc_switches: f64,
    pub cb_switches: f64,
    /// Daily operating cost, the negated slow-reward sum.
    pub cost: f64,
    pub failures: usize,
}

/// One day in exploitation mode. Returns (loss MWh, VVR sum, OLTC, CB, cost, failed).
fn evaluate_day(
    cfg: &RunConfig,
    net: &Arc<NetworkModel>,
    fast: &FastAgent,
    slow: &SlowAgent,
    day: &Arc<DayProfile>,
) -> Result<(f64, f64, usize, usize, f64, bool), TrainError> {
    let mut env = Environment::new(net.clone(), cfg.reward, cfg.timescale).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let wrap = |e: &dyn std::fmt::Display| TrainError::Config(format!("evaluation: {e}"));
    env.reset(day.clone(), &SlowAction(net.neutral_taps())).map_err(|e| wrap(&e))?;
    let (mut loss, mut vvr, mut o, mut b, mut reward) = (0.0, 0.0, 0, 0, 0.0);
    while !env.is_done() {
        let s = env.state().expect("reset").features();
        if env.slow_due() {
            let taps = slow.act(&s, false, &mut rng).map_err(|e| wrap(&e))?;
            let out = env.step_slow(&SlowAction(taps)).map_err(|e| wrap(&e))?;
            o += out.oltc_switches;
            b += out.cb_switches;
            reward -= cfg.reward.c_o * out.oltc_switches as f64 + cfg.reward.c_b * out.cb_switches as f64;
            if out.failed {
                reward += cfg.reward.failure_reward;
            }
        } else {
            let a = fast.act(&s, false, &mut rng).map_err(|e| wrap(&e))?;
            let step = env.step_fast(&FastAction(a)).map_err(|e| wrap(&e))?;
            reward += step.reward;
            if !step.failed {
                loss += step.p_loss_mw * cfg.reward.step_minutes / 60.0;
                vvr += step.vvr;
            }
        }
    }
    Ok((loss, vvr, o, b, -reward, env.failed()))
}

/// Greedy evaluation over `days`: per-head argmax taps and `tanh(mu)` setpoints.
pub fn evaluate(
    cfg: &RunConfig,
    net: &Arc<NetworkModel>,
    fast: &FastAgent,
    slow: &SlowAgent,
    days: &[Arc<DayProfile>],
    exec: Exec,
) -> Result<EvalSummary, TrainError> {
    let dims = Environment::new(net.clone(), cfg.reward, cfg.timescale)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    if fast.policy().state_dim() != dims.state_dim()
        || fast.policy().action_dim() != dims.fast_action_dim()
        || slow.dims() != dims.slow_action_dims()
    {
        return Err(TrainError::Config("agent shapes do not match the feeder".into()));
    }
    let per_day = exec.map(days, |d| evaluate_day(cfg, net, fast, slow, d));
    let mut s = EvalSummary {
        days: days.len(),
        ..EvalSummary::default()
    };
    for r in per_day {
        let (loss, vvr, o, b, cost, failed) = r?;
        s.p_loss_mwh += loss;
        s.vvr_sum += vvr;
        s.oltc_switches += o as f64;
        s.cb_switches += b as f64;
        s.cost += cost;
        s.failures += failed as usize;
    }
    let n = days.len().max(1) as f64;
    s.p_loss_mwh /= n;
    s.vvr_sum /= n;
    s.oltc_switches /= n;
    s.cb_switches /= n;
    s.cost /= n;
    Ok(s)
}

/// Untrained agents for `seed`, the reference point for learning gains.
pub fn baseline_agents(cfg: &RunConfig, scenario: &Scenario, seed: u64) -> Result<(FastAgent, SlowAgent), TrainError> {
    let env = Environment::new(scenario.net.clone(), cfg.reward, cfg.timescale)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(init_agents(cfg, &env, &mut rng))
}

/// Per-episode mean and standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub episode: usize,
    pub seeds: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub omega_mean: f64,
    pub omega_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Aggregates per-seed metrics episode by episode (population std).
pub fn aggregate(runs: &[Vec<MetricsRow>]) -> Vec<AggregateRow> {
    let episodes = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..episodes)
        .map(|e| {
            let rewards: Vec<f64> = runs.iter().map(|r| r[e].reward).collect();
            let omegas: Vec<f64> = runs.iter().map(|r| r[e].omega_mean).collect();
            let (reward_mean, reward_std) = mean_std(&rewards);
            let (omega_mean, omega_std) = mean_std(&omegas);
            AggregateRow {
                episode: e,
                seeds: runs.len(),
                reward_mean,
                reward_std,
                omega_mean,
                omega_std,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => TrainError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => TrainError::Config(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes `metrics.csv`, `omega.csv` and optionally checkpoints under `dir`.
pub fn write_run(dir: &Path, outcome: &TrainOutcome, checkpoints: bool) -> Result<(), TrainError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(&dir.join("metrics.csv"), &outcome.metrics)?;
    write_csv(&dir.join("omega.csv"), &outcome.omega)?;
    if checkpoints {
        for (name, res) in [
            ("fast.ckpt", save_to(&dir.join("fast.ckpt"), |f| outcome.fast.save(f))),
            ("slow.ckpt", save_to(&dir.join("slow.ckpt"), |f| outcome.slow.save(f))),
        ] {
            res.map_err(|e| TrainError::Config(format!("{name}: {e}")))?;
        }
    }
    Ok(())
}

fn save_to(
    path: &Path,
    f: impl FnOnce(std::io::BufWriter<fs::File>) -> Result<(), crate::nn::NnError>,
) -> Result<(), crate::nn::NnError> {
    f(std::io::BufWriter::new(fs::File::create(path)?))
}

/// Loads agents saved by [`write_run`] into freshly shaped agents.
pub fn load_agents(cfg: &RunConfig, scenario: &Scenario, dir: &Path) -> Result<(FastAgent, SlowAgent), TrainError> {
    let (mut fast, mut slow) = baseline_agents(cfg, scenario, 0)?;
    let open = |name: &str| {
        let p = dir.join(name);
        fs::File::open(&p).map(std::io::BufReader::new).map_err(io_err(&p))
    };
    fast.load(open("fast.ckpt")?).map_err(|e| TrainError::Config(format!("fast.ckpt: {e}")))?;
    slow.load(open("slow.ckpt")?).map_err(|e| TrainError::Config(format!("slow.ckpt: {e}")))?;
    Ok((fast, slow))
}

/// Result of a sweep: per-seed outcomes (or the error that stopped a seed).
pub struct SweepOutcome {
    pub runs: Vec<Result<TrainOutcome, TrainError>>,
    pub aggregate: Vec<AggregateRow>,
}

/// Trains every configured seed, writes `seed-<n>/` directories and
/// `aggregate.csv` under the output directory.
pub fn seed_sweep(cfg: &RunConfig, scenario: &Scenario, write: bool) -> Result<SweepOutcome, TrainError> {
    cfg.validate()?;
    let runs = cfg.exec().map(&cfg.seeds, |&seed| train_seed(cfg, scenario, seed));
    if write {
        for run in runs.iter().flatten() {
            write_run(&cfg.out_dir.join(format!("seed-{}", run.seed)), run, cfg.save_checkpoints)?;
        }
    }
    let ok: Vec<Vec<MetricsRow>> = runs.iter().flatten().map(|r| r.metrics.clone()).collect();
    let aggregate = aggregate(&ok);
    if write && !ok.is_empty() {
        fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
        write_csv(&cfg.out_dir.join("aggregate.csv"), &aggregate)?;
    }
    Ok(SweepOutcome { runs, aggregate })
}
