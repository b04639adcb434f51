//! DQN with epsilon-greedy behavior, experience replay, a periodically
//! synchronized target network, and pluggable auxiliary heads sharing the
//! representation trunk. Stage 1 trains the full network (early-saving the
//! representation); stage 2 trains a fresh value head on frozen features.

mod dqn;
mod replay;
mod stage2;
mod targets;

pub use dqn::{features_and_values, DqnAgent, RunMode, SavedNet, Stage1Output};
pub use replay::ReplayBuffer;
pub use stage2::{phi_table_from_trunk, phi_table_identity, PhiTable, ValueOnlyLearner};
pub use targets::TargetCache;

use serde::{Deserialize, Serialize};

use crate::aux::AuxConfig;
use crate::error::{Error, Result};
use crate::gridworld::ACTION_COUNT;
use crate::model::{Activation, ValueHeadKind};
use crate::num::Real;
use crate::properties::PropertySnapshot;
use crate::rng::Stream;

/// Learner settings shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub activation: Activation,
    pub value_head: ValueHeadKind,
    pub epsilon: f64,
    /// Linear decay 1 -> 0.1 over the first 1e5 steps (linear-value-head
    /// representation training mode); otherwise epsilon is fixed.
    pub epsilon_decay: bool,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync_period: u64,
    pub learning_rate: f64,
    pub train_steps: u64,
    pub transfer_steps: u64,
    pub record_period: u64,
    pub aux: AuxConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            activation: Activation::Relu32,
            value_head: ValueHeadKind::Nonlinear,
            epsilon: 0.1,
            epsilon_decay: false,
            batch_size: 32,
            buffer_capacity: 100_000,
            target_sync_period: 64,
            learning_rate: 1e-4,
            train_steps: 300_000,
            transfer_steps: 100_000,
            record_period: 10_000,
            aux: AuxConfig::none(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("epsilon must lie in [0, 1]"));
        }
        if self.target_sync_period < 1 {
            return Err(Error::config("target sync period must be >= 1"));
        }
        if self.batch_size < 1 || self.buffer_capacity < self.batch_size {
            return Err(Error::config("buffer capacity must hold at least one batch"));
        }
        if self.record_period < 1 {
            return Err(Error::config("record period must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        self.aux.validate()
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        if self.epsilon_decay {
            let frac = (step as f64 / 1e5).min(1.0);
            (1.0 - 0.9 * frac).max(self.epsilon)
        } else {
            self.epsilon
        }
    }
}

/// Epsilon-greedy over the four action values; greedy ties break toward the
/// lowest action index, and NaN action values are a numerical error.
pub fn select_action(q: &[Real], epsilon: f64, rng: &mut Stream) -> Result<usize> {
    debug_assert_eq!(q.len(), ACTION_COUNT);
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("NaN/Inf in action values"));
    }
    if rng.chance(epsilon) {
        Ok(rng.below(ACTION_COUNT))
    } else {
        crate::model::argmax_q(q)
    }
}

/// One finished episode: goal-reaching episodes carry the discounted return
/// gamma^(len-1) * reward; truncated episodes return 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub end_step: u64,
    pub len: u32,
    pub reached_goal: bool,
    pub ret: f64,
}

/// Return checkpoint taken every `record_period` steps: the average return
/// of the last (up to) 100 episodes, plus the mean TD loss since the
/// previous checkpoint (training-convergence telemetry).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReturnRecord {
    pub step: u64,
    pub avg_return: f64,
    pub avg_td_loss: f64,
}

/// Everything a training run produces besides parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<ReturnRecord>,
    pub episodes: Vec<EpisodeRecord>,
    /// Update interference per completed sync window (when tracked).
    pub ui_trace: Vec<f64>,
    pub snapshots: Vec<PropertySnapshot>,
    pub saved_at: Option<u64>,
    pub converged: bool,
    pub final_step: u64,
}

impl TrainingTrace {
    /// Area under the learning curve: the sum of checkpoint returns.
    pub fn auc(&self) -> f64 {
        self.records.iter().map(|r| r.avg_return).sum()
    }
}

/// Episode bookkeeping shared by both learners: tracks the consecutive-goal
/// window for early saving and the last-100-episode return average.
#[derive(Debug, Default)]
pub(crate) struct EpisodeTracker {
    pub episodes: Vec<EpisodeRecord>,
    pub consecutive_goals: u32,
    pub episode_id: u32,
    len: u32,
}

impl EpisodeTracker {
    pub fn on_step(&mut self) {
        self.len += 1;
    }


    pub fn on_goal(&mut self, end_step: u64, gamma: f64, reward: f64) {
        let ret = reward * gamma.powi(self.len as i32 - 1);
        self.episodes.push(EpisodeRecord {
            end_step,
            len: self.len,
            reached_goal: true,
            ret,
        });
        self.consecutive_goals += 1;
        self.episode_id += 1;
        self.len = 0;
    }

    pub fn on_truncation(&mut self, end_step: u64) {
        self.episodes.push(EpisodeRecord {
            end_step,
            len: self.len,
            reached_goal: false,
            ret: 0.0,
        });
        self.consecutive_goals = 0;
        self.episode_id += 1;
        self.len = 0;
    }

    /// Mean return of the last `k` completed episodes (all of them when
    /// fewer exist; 0 when none).
    pub fn avg_return_last(&self, k: usize) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        let start = self.episodes.len().saturating_sub(k);
        let tail = &self.episodes[start..];
        tail.iter().map(|e| e.ret).sum::<f64>() / tail.len() as f64
    }
}
