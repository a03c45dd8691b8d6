//! Bi-level MDP over the feeder: one slow (tap) decision every `k` fast
//! (reactive power) decisions.
//!
//! An episode is one day. Fast step `tau` applies reactive setpoints and
//! solves the power flow at profile row `tau + 1` (the last row is held for
//! the final step). A slow step re-solves the current row with new taps.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    active_loss, solve_power_flow, switching_cost, voltage_violation_rate, GridError,
    GridOperatingPoint, NetworkModel, PowerFlowSolution,
};
use crate::profiles::{DayProfile, STEPS_PER_DAY};

/// Voltage features are reported as `(V - 1) / VOLTAGE_FEATURE_SCALE`.
pub const VOLTAGE_FEATURE_SCALE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("no episode in progress; call reset first")]
    NotStarted,
    #[error("episode is over")]
    EpisodeOver,
    #[error("a {expected} step is due at fast step {step}")]
    OutOfPhase { expected: &'static str, step: usize },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Prices, limits and the failure rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// Energy price, $/MWh.
    pub c_p: f64,
    /// OLTC switching price, $/tap.
    pub c_o: f64,
    /// CB switching price, $/tap.
    pub c_b: f64,
    /// Voltage violation price, $/(p.u. x fast step).
    pub c_v: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub failure_reward: f64,
    pub failure_lo: f64,
    pub failure_hi: f64,
    /// Length of a fast step in minutes.
    pub step_minutes: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            c_p: 40.0,
            c_o: 0.1,
            c_b: 0.1,
            c_v: 100.0,
            v_lo: 0.95,
            v_hi: 1.05,
            failure_reward: -500.0,
            failure_lo: 0.85,
            failure_hi: 1.15,
            step_minutes: 5.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if [self.c_p, self.c_o, self.c_b, self.c_v].iter().any(|c| !(*c >= 0.0)) {
            return bad("prices must be nonnegative");
        }
        if !(self.v_lo < self.v_hi) {
            return bad("v_lo must be below v_hi");
        }
        if !(self.failure_lo < self.v_lo && self.failure_hi > self.v_hi) {
            return bad("failure band must strictly contain the voltage limits");
        }
        if !(self.step_minutes > 0.0) || !self.failure_reward.is_finite() {
            return bad("step length must be positive and the failure reward finite");
        }
        Ok(())
    }

    /// Fast-timescale reward for a converged, non-failed step.
    pub fn fast_reward(&self, p_loss_mw: f64, vvr: f64) -> f64 {
        -self.c_p * p_loss_mw * self.step_minutes / 60.0 - self.c_v * vvr
    }

    pub fn is_failure(&self, sol: &PowerFlowSolution) -> bool {
        !sol.converged
            || sol
                .voltages
                .iter()
                .any(|&v| !(v >= self.failure_lo && v <= self.failure_hi))
    }
}

/// Slow reward: switching costs plus the cumulative fast reward of the block.
pub fn slow_reward(params: &RewardParams, oltc_switches: usize, cb_switches: usize, fast_rewards: &[f64]) -> f64 {
    -params.c_o * oltc_switches as f64 - params.c_b * cb_switches as f64 + fast_rewards.iter().sum::<f64>()
}

/// Episode structure: `slow_steps` decisions of `k` fast steps each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timescale {
    pub slow_steps: usize,
    pub k: usize,
}

impl Default for Timescale {
    fn default() -> Self {
        Self { slow_steps: 24, k: 12 }
    }
}

impl Timescale {
    pub fn fast_steps(&self) -> usize {
        self.slow_steps * self.k
    }
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.slow_steps == 0 || self.k == 0 || self.fast_steps() > STEPS_PER_DAY {
            return Err(EnvError::Config(format!(
                "{} slow steps of {} fast steps do not fit in a {STEPS_PER_DAY}-step day",
                self.slow_steps, self.k
            )));
        }
        Ok(())
    }
}

/// The common observation shared by both agents.
#[derive(Debug, Clone, PartialEq)]
pub struct BmdpState {
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub v_mag: Vec<f64>,
    pub oltc_onehot: Vec<f64>,
    pub cb_onehot: Vec<f64>,
    pub time_frac: f64,
}

impl BmdpState {
    pub fn feature_len(net: &NetworkModel) -> usize {
        3 * net.n_buses() + net.slow_tap_counts().iter().sum::<usize>() + 1
    }

    /// Flat network input: P and Q in MW/MVar, scaled voltage deviations,
    /// tap one-hots and the time of day.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(
            self.p_inj.len() * 3 + self.oltc_onehot.len() + self.cb_onehot.len() + 1,
        );
        f.extend_from_slice(&self.p_inj);
        f.extend_from_slice(&self.q_inj);
        f.extend(self.v_mag.iter().map(|v| (v - 1.0) / VOLTAGE_FEATURE_SCALE));
        f.extend_from_slice(&self.oltc_onehot);
        f.extend_from_slice(&self.cb_onehot);
        f.push(self.time_frac);
        f
    }
}

/// Tap index per slow device (OLTCs, then CBs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlowAction(pub Vec<usize>);

/// Normalized setpoint in `[-1, 1]` per fast device (DGs, then SVCs).
#[derive(Debug, Clone, PartialEq)]
pub struct FastAction(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct ResetOutcome {
    pub state: BmdpState,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlowOutcome {
    pub state: BmdpState,
    pub failed: bool,
    pub oltc_switches: usize,
    pub cb_switches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastOutcome {
    pub state: BmdpState,
    pub reward: f64,
    pub failed: bool,
    pub p_loss_mw: f64,
    pub vvr: f64,
    /// The block of `k` fast steps is complete.
    pub block_end: bool,
    /// The day is complete or failed.
    pub done: bool,
}

/// One stateful BMDP instance. Not shareable across threads while stepping;
/// independent instances may run concurrently.
#[derive(Debug, Clone)]
pub struct Environment {
    net: Arc<NetworkModel>,
    params: RewardParams,
    timescale: Timescale,
    day: Option<Arc<DayProfile>>,
    taps: Vec<usize>,
    fast_setpoints: Vec<f64>,
    fast_step: usize,
    slow_due: bool,
    done: bool,
    failed: bool,
    state: Option<BmdpState>,
}

impl Environment {
    pub fn new(net: Arc<NetworkModel>, params: RewardParams, timescale: Timescale) -> Result<Self, EnvError> {
        params.validate()?;
        timescale.validate()?;
        let n_fast = net.n_fast_devices();
        Ok(Self {
            taps: net.neutral_taps(),
            net,
            params,
            timescale,
            day: None,
            fast_setpoints: vec![0.0; n_fast],
            fast_step: 0,
            slow_due: false,
            done: true,
            failed: false,
            state: None,
        })
    }

    pub fn network(&self) -> &Arc<NetworkModel> {
        &self.net
    }
    pub fn params(&self) -> &RewardParams {
        &self.params
    }
    pub fn timescale(&self) -> Timescale {
        self.timescale
    }
    pub fn taps(&self) -> &[usize] {
        &self.taps
    }
    pub fn fast_step(&self) -> usize {
        self.fast_step
    }
    pub fn is_done(&self) -> bool {
        self.done
    }
    pub fn failed(&self) -> bool {
        self.failed
    }
    pub fn slow_due(&self) -> bool {
        self.slow_due && !self.done
    }
    pub fn state(&self) -> Option<&BmdpState> {
        self.state.as_ref()
    }
    pub fn state_dim(&self) -> usize {
        BmdpState::feature_len(&self.net)
    }
    pub fn slow_action_dims(&self) -> Vec<usize> {
        self.net.slow_tap_counts()
    }
    pub fn fast_action_dim(&self) -> usize {
        self.net.n_fast_devices()
    }

    pub fn reset(&mut self, day: Arc<DayProfile>, initial_taps: &SlowAction) -> Result<ResetOutcome, EnvError> {
        self.check_slow_action(initial_taps)?;
        self.day = Some(day);
        self.taps = initial_taps.0.clone();
        self.fast_setpoints.iter_mut().for_each(|q| *q = 0.0);
        self.fast_step = 0;
        self.slow_due = true;
        self.done = false;
        self.failed = false;
        let sol = self.solve(0)?;
        let failed = self.params.is_failure(&sol);
        let state = self.assemble(&sol, 0);
        self.state = Some(state.clone());
        if failed {
            self.fail();
        }
        Ok(ResetOutcome { state, failed })
    }

    pub fn step_slow(&mut self, action: &SlowAction) -> Result<SlowOutcome, EnvError> {
        self.check_active()?;
        if !self.slow_due {
            return Err(EnvError::OutOfPhase {
                expected: "fast",
                step: self.fast_step,
            });
        }
        self.check_slow_action(action)?;
        let n_oltc = self.net.oltcs().len();
        let (oltc_switches, cb_switches) = if self.fast_step == 0 {
            (0, 0)
        } else {
            (
                switching_cost(&self.taps[..n_oltc], &action.0[..n_oltc])?,
                switching_cost(&self.taps[n_oltc..], &action.0[n_oltc..])?,
            )
        };
        self.taps = action.0.clone();
        let row = self.current_row();
        let sol = self.solve(row)?;
        let failed = self.params.is_failure(&sol);
        if sol.converged {
            self.state = Some(self.assemble(&sol, row));
        }
        self.slow_due = false;
        if failed {
            self.fail();
        }
        Ok(SlowOutcome {
            state: self.state.clone().expect("state exists after reset"),
            failed,
            oltc_switches,
            cb_switches,
        })
    }

    pub fn step_fast(&mut self, action: &FastAction) -> Result<FastOutcome, EnvError> {
        self.check_active()?;
        if self.slow_due {
            return Err(EnvError::OutOfPhase {
                expected: "slow",
                step: self.fast_step,
            });
        }
        if action.0.len() != self.fast_setpoints.len()
            || action.0.iter().any(|a| !(a.abs() <= 1.0))
        {
            return Err(EnvError::InvalidAction(format!(
                "expected {} setpoints in [-1, 1], got {:?}",
                self.fast_setpoints.len(),
                action.0
            )));
        }
        self.fast_setpoints.copy_from_slice(&action.0);
        let row = (self.fast_step + 1).min(STEPS_PER_DAY - 1);
        let sol = self.solve(row)?;
        self.fast_step += 1;
        let failed = self.params.is_failure(&sol);
        let (reward, p_loss_mw, vvr) = if failed {
            (self.params.failure_reward, f64::NAN, f64::NAN)
        } else {
            let p = active_loss(&sol);
            let v = voltage_violation_rate(&sol, self.params.v_lo, self.params.v_hi);
            (self.params.fast_reward(p, v), p, v)
        };
        if sol.converged {
            self.state = Some(self.assemble(&sol, row));
        }
        let block_end = self.fast_step % self.timescale.k == 0;
        if failed {
            self.fail();
        } else if self.fast_step == self.timescale.fast_steps() {
            self.done = true;
        } else if block_end {
            self.slow_due = true;
        }
        Ok(FastOutcome {
            state: self.state.clone().expect("state exists after reset"),
            reward,
            failed,
            p_loss_mw,
            vvr,
            block_end: block_end || failed,
            done: self.done,
        })
    }

    /// Power flow for the current taps and fast setpoints at a profile row.
    pub fn solve(&self, row: usize) -> Result<PowerFlowSolution, EnvError> {
        let day = self.day.as_ref().ok_or(EnvError::NotStarted)?;
        Ok(solve_power_flow(&self.net, &self.operating_point(day, row))?)
    }

    fn operating_point(&self, day: &DayProfile, row: usize) -> GridOperatingPoint {
        let n_oltc = self.net.oltcs().len();
        let n_dg = self.net.dgs().len();
        let dg_active = day.dg_row(row).to_vec();
        let dg_reactive = self.net.dgs().iter().enumerate().map(|(i, dg)| {
            self.fast_setpoints[i] * dg.q_bound_at(dg_active[i])
        });
        let svc_reactive = self.net.svcs().iter().enumerate().map(|(i, svc)| {
            let a = self.fast_setpoints[n_dg + i];
            svc.q_min_mvar + (a + 1.0) * 0.5 * (svc.q_max_mvar - svc.q_min_mvar)
        });
        GridOperatingPoint {
            oltc_taps: self.taps[..n_oltc].to_vec(),
            cb_taps: self.taps[n_oltc..].to_vec(),
            dg_reactive: dg_reactive.collect(),
            svc_reactive: svc_reactive.collect(),
            dg_active,
            load_scale: day.load_row(row).to_vec(),
        }
    }

    fn current_row(&self) -> usize {
        self.fast_step.min(STEPS_PER_DAY - 1)
    }

    fn assemble(&self, sol: &PowerFlowSolution, row: usize) -> BmdpState {
        let n_oltc = self.net.oltcs().len();
        let counts = self.net.slow_tap_counts();
        let onehot = |range: std::ops::Range<usize>| {
            let mut v = Vec::new();
            for d in range {
                let mut block = vec![0.0; counts[d]];
                block[self.taps[d]] = 1.0;
                v.extend(block);
            }
            v
        };
        BmdpState {
            p_inj: sol.p_inj_mw.clone(),
            q_inj: sol.q_inj_mvar.clone(),
            v_mag: sol.voltages.clone(),
            oltc_onehot: onehot(0..n_oltc),
            cb_onehot: onehot(n_oltc..counts.len()),
            time_frac: row as f64 / STEPS_PER_DAY as f64,
        }
    }

    fn fail(&mut self) {
        self.failed = true;
        self.done = true;
    }

    fn check_active(&self) -> Result<(), EnvError> {
        if self.day.is_none() {
            return Err(EnvError::NotStarted);
        }
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        Ok(())
    }

    fn check_slow_action(&self, action: &SlowAction) -> Result<(), EnvError> {
        let counts = self.net.slow_tap_counts();
        if action.0.len() != counts.len() || action.0.iter().zip(&counts).any(|(t, c)| t >= c) {
            return Err(EnvError::InvalidAction(format!(
                "tap vector {:?} does not fit tap counts {counts:?}",
                action.0
            )));
        }
        Ok(())
    }
}
