//! Nested two-timescale replay and the multi-timescale off-policy
//! correction (MTOPC) weight.
//!
//! Each slow transition carries the block of fast transitions that ran under
//! its tap setting, together with the behavior density of every fast action.
//! When the slow agent samples old transitions, the block is re-weighted by
//! the likelihood ratio of the current fast policy to the one that acted.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::fast_agent::{FastBatch, GaussianPolicy};
use crate::nn::NnError;
use crate::slow_agent::SlowBatch;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("malformed transition: {0}")]
    Malformed(String),
    #[error("requested {requested} samples but only {available} are stored")]
    Insufficient { requested: usize, available: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastTransition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    /// Behavior density `pi0(a | s)` at acting time.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlowTransition {
    pub state: Vec<f64>,
    pub action: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub block: Vec<FastTransition>,
}

/// Anything that can report log-densities of fast actions.
pub trait ActionDensity: Sync {
    fn log_density(&self, states: &[f64], actions: &[f64], n: usize) -> Result<Vec<f64>, NnError>;
}

impl ActionDensity for GaussianPolicy {
    fn log_density(&self, states: &[f64], actions: &[f64], n: usize) -> Result<Vec<f64>, NnError> {
        GaussianPolicy::log_density(self, states, actions, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Correction {
    #[default]
    Mtopc,
    /// Ablation: every weight is 1.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        Self { lo: 0.1, hi: 10.0 }
    }
}

impl ClipBounds {
    pub fn clip(&self, w: f64) -> f64 {
        w.clamp(self.lo, self.hi)
    }
}

/// A correction weight and whether it had to be forced to the lower clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weight {
    pub value: f64,
    pub non_finite: bool,
}

/// Clipped `exp(sum(log pi - log pi0))` over a block. An empty block has
/// weight 1; a non-finite log ratio falls to the lower bound.
pub fn weight_from_logs(current: &[f64], behavior_density: &[f64], clip: ClipBounds) -> Weight {
    let log_w: f64 = current
        .iter()
        .zip(behavior_density)
        .map(|(lp, p0)| lp.exp().ln() - p0.ln())
        .sum();
    let w = log_w.exp();
    if log_w.is_nan() || w.is_nan() {
        Weight {
            value: clip.lo,
            non_finite: true,
        }
    } else {
        Weight {
            value: clip.clip(w),
            non_finite: false,
        }
    }
}

/// Weight of one slow transition under `policy`.
pub fn correction_weight<P: ActionDensity + ?Sized>(
    slow: &SlowTransition,
    policy: &P,
    clip: ClipBounds,
) -> Result<Weight, NnError> {
    let n = slow.block.len();
    if n == 0 {
        return Ok(Weight {
            value: clip.clip(1.0),
            non_finite: false,
        });
    }
    let states: Vec<f64> = slow.block.iter().flat_map(|f| f.state.iter().copied()).collect();
    let actions: Vec<f64> = slow.block.iter().flat_map(|f| f.action.iter().copied()).collect();
    let lp = policy.log_density(&states, &actions, n)?;
    let p0: Vec<f64> = slow.block.iter().map(|f| f.density).collect();
    Ok(weight_from_logs(&lp, &p0, clip))
}

/// Summary of the weights attached to one slow batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightStats {
    pub mean: f64,
    pub std: f64,
    pub non_finite: usize,
}

impl WeightStats {
    pub fn of(weights: &[Weight]) -> Self {
        let n = weights.len().max(1) as f64;
        let mean = weights.iter().map(|w| w.value).sum::<f64>() / n;
        let var = weights.iter().map(|w| (w.value - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            non_finite: weights.iter().filter(|w| w.non_finite).count(),
        }
    }
}

/// FIFO of slow transitions, bounded in fast steps.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    k: usize,
    max_slow: usize,
    slots: VecDeque<SlowTransition>,
    fast_len: usize,
}

impl ReplayBuffer {
    /// `capacity` counts fast steps; the buffer keeps `capacity / k` slow transitions.
    pub fn new(capacity: usize, k: usize) -> Self {
        assert!(k > 0 && capacity >= k, "capacity {capacity} cannot hold a block of {k}");
        Self {
            k,
            max_slow: capacity / k,
            slots: VecDeque::with_capacity(capacity / k),
            fast_len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }
    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
    pub fn fast_len(&self) -> usize {
        self.fast_len
    }
    pub fn slow_capacity(&self) -> usize {
        self.max_slow
    }
    pub fn get(&self, i: usize) -> Option<&SlowTransition> {
        self.slots.get(i)
    }
    pub fn iter(&self) -> impl Iterator<Item = &SlowTransition> {
        self.slots.iter()
    }

    pub fn push(&mut self, slow: SlowTransition) -> Result<(), ReplayError> {
        self.validate(&slow)?;
        if self.slots.len() == self.max_slow {
            let old = self.slots.pop_front().expect("full buffer");
            self.fast_len -= old.block.len();
        }
        self.fast_len += slow.block.len();
        self.slots.push_back(slow);
        Ok(())
    }

    fn validate(&self, slow: &SlowTransition) -> Result<(), ReplayError> {
        let bad = |m: String| Err(ReplayError::Malformed(m));
        let len = slow.block.len();
        if len > self.k || (len < self.k && !slow.terminal) {
            return bad(format!("block of {len} fast steps (k = {}) on a non-terminal transition", self.k));
        }
        if slow.state.len() != slow.next_state.len() || !slow.reward.is_finite() {
            return bad("slow state shapes differ or reward is not finite".into());
        }
        if let Some(last) = slow.block.last() {
            if last.next_state != slow.next_state {
                return bad("slow next state differs from the last fast next state".into());
            }
        }
        if let Some(first) = self.slots.front() {
            if first.state.len() != slow.state.len() || first.action.len() != slow.action.len() {
                return bad("transition shape differs from stored transitions".into());
            }
        }
        let dim = slow.block.first().map(|f| f.action.len());
        for (i, f) in slow.block.iter().enumerate() {
            if !(f.density > 0.0 && f.density.is_finite()) {
                return bad(format!("fast step {i} has behavior density {}", f.density));
            }
            if f.state.len() != slow.state.len() || f.next_state.len() != slow.state.len() {
                return bad(format!("fast step {i} has a state of the wrong length"));
            }
            if Some(f.action.len()) != dim || !f.reward.is_finite() {
                return bad(format!("fast step {i} has a malformed action or reward"));
            }
        }
        Ok(())
    }

    /// Uniform sample without replacement over all stored fast transitions.
    pub fn sample_fast_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<FastBatch, ReplayError> {
        if n > self.fast_len || n == 0 {
            return Err(ReplayError::Insufficient {
                requested: n,
                available: self.fast_len,
            });
        }
        let mut starts = Vec::with_capacity(self.slots.len());
        let mut acc = 0;
        for s in &self.slots {
            starts.push(acc);
            acc += s.block.len();
        }
        let mut batch = FastBatch {
            n,
            ..FastBatch::default()
        };
        for flat in index::sample(rng, self.fast_len, n).into_iter() {
            let slot = starts.partition_point(|&s| s <= flat) - 1;
            let f = &self.slots[slot].block[flat - starts[slot]];
            batch.states.extend_from_slice(&f.state);
            batch.actions.extend_from_slice(&f.action);
            batch.rewards.push(f.reward);
            batch.next_states.extend_from_slice(&f.next_state);
            batch.dones.push(f.terminal);
        }
        Ok(batch)
    }

    /// Uniform sample without replacement over slow transitions, each with
    /// its correction weight computed against `policy` now.
    pub fn sample_slow_batch<R: Rng + ?Sized, P: ActionDensity + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        policy: &P,
        correction: Correction,
        clip: ClipBounds,
        exec: Exec,
    ) -> Result<(SlowBatch, WeightStats), ReplayError> {
        if n > self.slots.len() || n == 0 {
            return Err(ReplayError::Insufficient {
                requested: n,
                available: self.slots.len(),
            });
        }
        let picks: Vec<usize> = index::sample(rng, self.slots.len(), n).into_vec();
        let weights: Vec<Weight> = match correction {
            Correction::Off => vec![
                Weight {
                    value: 1.0,
                    non_finite: false
                };
                n
            ],
            Correction::Mtopc => exec
                .map(&picks, |&i| correction_weight(&self.slots[i], policy, clip))
                .into_iter()
                .collect::<Result<_, _>>()?,
        };
        let mut batch = SlowBatch {
            n,
            ..SlowBatch::default()
        };
        for (&i, w) in picks.iter().zip(&weights) {
            let s = &self.slots[i];
            batch.states.extend_from_slice(&s.state);
            batch.actions.extend_from_slice(&s.action);
            batch.rewards.push(s.reward);
            batch.next_states.extend_from_slice(&s.next_state);
            batch.dones.push(s.terminal);
            batch.weights.push(w.value);
        }
        Ok((batch, WeightStats::of(&weights)))
    }
}
