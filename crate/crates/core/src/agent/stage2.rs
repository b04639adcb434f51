use std::sync::Arc;

use crate::error::Result;
use crate::gridworld::{Maze, ObsTable, Transition, ACTION_COUNT};
use crate::model::{Trunk, ValueHead, ValueHeadKind};
use crate::nn::Adam;
use crate::num::Real;
use crate::rng::{Seed, Stream};
use crate::tensor::Parameterized;

use super::replay::ReplayBuffer;
use super::{select_action, AgentConfig, EpisodeTracker, ReturnRecord, TrainingTrace};

/// Per-state features for a frozen representation: the trunk's output for
/// every free cell (or the flattened observation for the Input baseline).
#[derive(Debug, Clone)]
pub struct PhiTable {
    pub d: usize,
    pub n_states: usize,
    phi: Vec<Real>,
}

impl PhiTable {
    #[inline]
    pub fn get(&self, id: u16) -> &[Real] {
        &self.phi[id as usize * self.d..(id as usize + 1) * self.d]
    }

    pub fn rows(&self) -> &[Real] {
        &self.phi
    }
}

/// Runs every observation through a (frozen) trunk once.
pub fn phi_table_from_trunk(trunk: &mut Trunk<Real>, obs: &ObsTable) -> PhiTable {
    let n = obs.n_states;
    let d = trunk.rep_dim();
    let mut phi = Vec::with_capacity(n * d);
    let chunk = 64;
    let mut obs_buf = Vec::new();
    let mut phi_buf = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        obs.gather((start..end).map(|i| i as u16), &mut obs_buf);
        trunk.forward(&obs_buf, end - start, &mut phi_buf);
        phi.extend_from_slice(&phi_buf);
        start = end;
    }
    PhiTable {
        d,
        n_states: n,
        phi,
    }
}

/// The Input baseline: observations fed directly to the value head.
pub fn phi_table_identity(obs: &ObsTable) -> PhiTable {
    let n = obs.n_states;
    let mut phi = Vec::with_capacity(n * obs.dim);
    for i in 0..n {
        phi.extend_from_slice(obs.get(i as u16));
    }
    PhiTable {
        d: obs.dim,
        n_states: n,
        phi,
    }
}

/// Stage-2 learner for frozen representations (transfer, Random, Input):
/// only the value head trains; the representation enters as a lookup table,
/// receives no gradient, and has no optimizer state.
pub struct ValueOnlyLearner {
    pub maze: Maze,
    phi: Arc<PhiTable>,
    cfg: AgentConfig,
    pub value: ValueHead<Real>,
    target_value: ValueHead<Real>,
    adam: Adam,
    replay: ReplayBuffer,
    q_max_cache: Vec<Real>,
    env_rng: Stream,
    eps_rng: Stream,
    replay_rng: Stream,
    learner_steps: u64,
    td_loss_sum: f64,
    td_loss_count: u64,
    batch: Vec<Transition>,
    phi_batch: Vec<Real>,
    qb: Vec<Real>,
    dq: Vec<Real>,
    act_q: Vec<Real>,
}

impl ValueOnlyLearner {
    pub fn new(
        maze: Maze,
        phi: Arc<PhiTable>,
        value_kind: ValueHeadKind,
        cfg: AgentConfig,
        run_seed: Seed,
    ) -> Result<ValueOnlyLearner> {
        cfg.validate()?;
        let mut value_rng = run_seed.child("init").child("value").stream();
        let value = ValueHead::new(phi.d, ACTION_COUNT, value_kind, &mut value_rng);
        let mut learner = ValueOnlyLearner {
            target_value: value.clone(),
            value,
            adam: Adam::new(cfg.learning_rate),
            replay: ReplayBuffer::new(cfg.buffer_capacity),
            q_max_cache: Vec::new(),
            env_rng: run_seed.child("env").stream(),
            eps_rng: run_seed.child("eps").stream(),
            replay_rng: run_seed.child("replay").stream(),
            learner_steps: 0,
            td_loss_sum: 0.0,
            td_loss_count: 0,
            batch: Vec::new(),
            phi_batch: Vec::new(),
            qb: Vec::new(),
            dq: Vec::new(),
            act_q: Vec::new(),
            maze,
            phi,
            cfg,
        };
        learner.rebuild_cache();
        Ok(learner)
    }

    fn take_mean_td_loss(&mut self) -> f64 {
        let mean = if self.td_loss_count == 0 {
            0.0
        } else {
            self.td_loss_sum / self.td_loss_count as f64
        };
        self.td_loss_sum = 0.0;
        self.td_loss_count = 0;
        mean
    }

    fn rebuild_cache(&mut self) {
        let n = self.phi.n_states;
        let mut q = Vec::new();
        self.target_value.forward_eval(self.phi.rows(), n, &mut q);
        self.q_max_cache.clear();
        for row in q.chunks_exact(ACTION_COUNT) {
            self.q_max_cache
                .push(row.iter().copied().fold(Real::NEG_INFINITY, Real::max));
        }
    }

    /// Runs `steps` environment steps; the representation table is immutable
    /// throughout.
    pub fn run(&mut self, steps: u64) -> Result<TrainingTrace> {
        let mut trace = TrainingTrace::default();
        let mut tracker = EpisodeTracker::default();
        let mut state = self.maze.reset(&mut self.env_rng);
        let gamma = self.maze.cfg.gamma as f64;
        let reward_goal = self.maze.cfg.reward_goal as f64;
        for step in 1..=steps {
            let eps = self.cfg.epsilon_at(step);
            let a = {
                self.value
                    .forward_eval(self.phi.get(state.cell), 1, &mut self.act_q);
                crate::gridworld::Action::from_index(select_action(
                    &self.act_q,
                    eps,
                    &mut self.eps_rng,
                )?)
            };
            let (tr, next) = self.maze.step(&state, a, &mut self.env_rng)?;
            tracker.on_step();
            if tr.truncated {
                tracker.on_truncation(step);
                state = next;
            } else {
                self.replay.push(tr, tracker.episode_id);
                if next.terminated {
                    tracker.on_goal(step, gamma, reward_goal);
                    state = self.maze.reset(&mut self.env_rng);
                } else {
                    state = next;
                }
            }
            if self.replay.len() >= self.cfg.batch_size {
                self.learn_step()?;
            }
            if step % self.cfg.record_period == 0 {
                trace.records.push(ReturnRecord {
                    step,
                    avg_return: tracker.avg_return_last(100),
                    avg_td_loss: self.take_mean_td_loss(),
                });
            }
            trace.final_step = step;
        }
        trace.episodes = tracker.episodes;
        Ok(trace)
    }

    fn learn_step(&mut self) -> Result<()> {
        let b = self.cfg.batch_size;
        self.replay.sample(b, &mut self.replay_rng, &mut self.batch);
        self.phi_batch.clear();
        for tr in &self.batch {
            self.phi_batch.extend_from_slice(self.phi.get(tr.s));
        }
        self.value.forward(&self.phi_batch, b, &mut self.qb);
        self.dq.clear();
        self.dq.resize(b * ACTION_COUNT, 0.0);
        let mut loss = 0.0f64;
        for (i, tr) in self.batch.iter().enumerate() {
            let qsel = self.qb[i * ACTION_COUNT + tr.a.index()];
            let y = tr.reward + tr.discount * self.q_max_cache[tr.s_next as usize];
            let diff = qsel - y;
            loss += (diff as f64) * (diff as f64);
            self.dq[i * ACTION_COUNT + tr.a.index()] = 2.0 * diff / b as Real;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(crate::error::Error::numerical("non-finite TD loss"));
        }
        self.td_loss_sum += loss;
        self.td_loss_count += 1;
        self.value.backward(&self.dq, None);
        self.adam.step(&mut self.value);
        self.learner_steps += 1;
        if self.learner_steps % self.cfg.target_sync_period == 0 {
            self.target_value.copy_values_from(&mut self.value);
            self.rebuild_cache();
        }
        Ok(())
    }
}
