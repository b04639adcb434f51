use std::sync::Arc;

use crate::aux::{random_shift, AuxCtx, AuxHead};
use crate::error::{Error, Result};
use crate::gridworld::{Maze, ObsTable, Transition, ACTION_COUNT};
use crate::model::QNetwork;
use crate::nn::Adam;
use crate::num::Real;
use crate::properties::{self, ProbeSet, PropertySnapshot};
use crate::rng::{Seed, Stream};
use crate::tensor::{Param, Parameterized};

use super::replay::ReplayBuffer;
use super::targets::TargetCache;
use super::{select_action, AgentConfig, EpisodeTracker, ReturnRecord, TrainingTrace};

/// How a run terminates and what it watches for.
#[derive(Debug, Clone, Copy)]
pub struct RunMode {
    pub steps: u64,
    /// Track the 100-consecutive-goal-episodes criterion and snapshot the
    /// network the first time it holds.
    pub early_save: bool,
    /// Stop right after the early save fires (otherwise training continues
    /// for property-over-time tracking).
    pub stop_after_save: bool,
    /// Measure property snapshots at every return checkpoint (needs a probe).
    pub track_properties: bool,
    /// Record update interference at every target sync (needs a probe).
    pub track_interference: bool,
}

impl RunMode {
    pub fn stage1(steps: u64) -> RunMode {
        RunMode {
            steps,
            early_save: true,
            stop_after_save: false,
            track_properties: true,
            track_interference: true,
        }
    }

    pub fn plain(steps: u64) -> RunMode {
        RunMode {
            steps,
            early_save: false,
            stop_after_save: false,
            track_properties: false,
            track_interference: false,
        }
    }
}

/// Parameters captured when the early-saving criterion fires (or at the end
/// of an unconverged run).
pub struct SavedNet {
    pub net: QNetwork<Real>,
    pub step: u64,
    pub converged: bool,
}

pub struct Stage1Output {
    pub trace: TrainingTrace,
    pub saved: SavedNet,
}

struct LearnerParams<'a> {
    net: &'a mut QNetwork<Real>,
    aux: &'a mut AuxHead<Real>,
}

impl Parameterized<Real> for LearnerParams<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<Real>)) {
        self.net.visit_params(f);
        self.aux.visit_params(f);
    }
}

/// The stage-1 learner (also used for the Scratch baseline in stage 2):
/// full network, one gradient update per environment step once the buffer
/// holds a batch, target sync every `target_sync_period` learner steps.
pub struct DqnAgent {
    pub maze: Maze,
    pub obs: Arc<ObsTable>,
    pub cfg: AgentConfig,
    pub net: QNetwork<Real>,
    target: QNetwork<Real>,
    aux: AuxHead<Real>,
    aux_target: AuxHead<Real>,
    adam: Adam,
    replay: ReplayBuffer,
    cache: TargetCache,
    probe: Option<Arc<ProbeSet>>,
    env_rng: Stream,
    eps_rng: Stream,
    replay_rng: Stream,
    aux_rng: Stream,
    learner_steps: u64,
    sync_count: u64,
    vvf_goal_ids: Vec<crate::gridworld::CellId>,
    // interference window state
    window_open: bool,
    window_bootstrap: Vec<Real>,
    window_err_start: f64,
    // mean TD loss between return records
    td_loss_sum: f64,
    td_loss_count: u64,
    // scratch buffers
    batch: Vec<Transition>,
    obs_batch: Vec<Real>,
    phi: Vec<Real>,
    qb: Vec<Real>,
    dq: Vec<Real>,
    dphi: Vec<Real>,
    dphi_head: Vec<Real>,
    sf_targets: Vec<Real>,
    vvf_targets: Vec<Real>,
    xy_targets: Vec<Real>,
    neg_idx: Vec<usize>,
    act_phi: Vec<Real>,
    act_q: Vec<Real>,
    pairs: Vec<(Transition, Transition)>,
    anchor_obs: Vec<Real>,
    positive_obs: Vec<Real>,
    shift_buf: Vec<Real>,
}

impl DqnAgent {
    pub fn new(
        maze: Maze,
        obs: Arc<ObsTable>,
        cfg: AgentConfig,
        run_seed: Seed,
        probe: Option<Arc<ProbeSet>>,
    ) -> Result<DqnAgent> {
        cfg.validate()?;
        let init = run_seed.child("init");
        let net = QNetwork::new(
            maze.map.height,
            maze.map.width,
            cfg.activation,
            cfg.value_head,
            ACTION_COUNT,
            init,
        );
        let aux = AuxHead::build(&cfg.aux, &net.trunk, &maze.map, init)?;
        let vvf_goal_ids = aux.virtual_goal_ids().to_vec();
        let mut agent = DqnAgent {
            target: net.clone(),
            aux_target: AuxHead::build(&cfg.aux, &net.trunk, &maze.map, init)?,
            net,
            aux,
            vvf_goal_ids,
            adam: Adam::new(cfg.learning_rate),
            replay: ReplayBuffer::new(cfg.buffer_capacity),
            cache: TargetCache::default(),
            probe,
            env_rng: run_seed.child("env").stream(),
            eps_rng: run_seed.child("eps").stream(),
            replay_rng: run_seed.child("replay").stream(),
            aux_rng: run_seed.child("aux").stream(),
            learner_steps: 0,
            sync_count: 0,
            window_open: false,
            window_bootstrap: Vec::new(),
            window_err_start: 0.0,
            td_loss_sum: 0.0,
            td_loss_count: 0,
            batch: Vec::new(),
            obs_batch: Vec::new(),
            phi: Vec::new(),
            qb: Vec::new(),
            dq: Vec::new(),
            dphi: Vec::new(),
            dphi_head: Vec::new(),
            sf_targets: Vec::new(),
            vvf_targets: Vec::new(),
            xy_targets: Vec::new(),
            neg_idx: Vec::new(),
            act_phi: Vec::new(),
            act_q: Vec::new(),
            pairs: Vec::new(),
            anchor_obs: Vec::new(),
            positive_obs: Vec::new(),
            shift_buf: Vec::new(),
            maze,
            obs,
            cfg,
        };
        // aux_target mirrors aux exactly (same init stream would differ via
        // fresh draws; copy values instead).
        agent.aux_target.copy_values_from(&mut agent.aux);
        agent.cache.rebuild(
            &mut agent.target,
            &agent.aux_target,
            &agent.obs,
            agent.cfg.aux.lambda,
        );
        Ok(agent)
    }

    pub fn rep_dim(&self) -> usize {
        self.net.trunk.rep_dim()
    }

    pub fn learner_steps(&self) -> u64 {
        self.learner_steps
    }

    pub fn sync_count(&self) -> u64 {
        self.sync_count
    }

    /// Runs the interaction/learning loop for `mode.steps` environment steps.
    pub fn run(&mut self, mode: RunMode) -> Result<Stage1Output> {
        let mut trace = TrainingTrace::default();
        let mut tracker = EpisodeTracker::default();
        let mut saved: Option<SavedNet> = None;
        let mut state = self.maze.reset(&mut self.env_rng);
        let gamma = self.maze.cfg.gamma as f64;
        let reward_goal = self.maze.cfg.reward_goal as f64;

        for step in 1..=mode.steps {
            let eps = self.cfg.epsilon_at(step);
            let a = {
                let obs_s = self.obs.get(state.cell);
                self.net.q_eval(obs_s, &mut self.act_phi, &mut self.act_q);
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
                state = next; // already teleported to a fresh start
            } else {
                self.replay.push(tr, tracker.episode_id);
                if next.terminated {
                    tracker.on_goal(step, gamma, reward_goal);
                    if mode.early_save && saved.is_none() && tracker.consecutive_goals >= 100 {
                        saved = Some(SavedNet {
                            net: self.net.clone(),
                            step,
                            converged: true,
                        });
                        trace.saved_at = Some(step);
                        if self.probe.is_some() {
                            let snap = self.measure_snapshot(step, true, &trace.ui_trace)?;
                            trace.snapshots.push(snap);
                        }
                    }
                    state = self.maze.reset(&mut self.env_rng);
                } else {
                    state = next;
                }
            }

            if self.replay.len() >= self.cfg.batch_size {
                self.learn_step(mode.track_interference, &mut trace)?;
            }

            if step % self.cfg.record_period == 0 {
                trace.records.push(ReturnRecord {
                    step,
                    avg_return: tracker.avg_return_last(100),
                    avg_td_loss: self.take_mean_td_loss(),
                });
                if mode.track_properties && self.probe.is_some() {
                    let snap = self.measure_snapshot(step, false, &trace.ui_trace)?;
                    trace.snapshots.push(snap);
                }
            }

            if mode.stop_after_save && saved.is_some() {
                trace.final_step = step;
                break;
            }
            trace.final_step = step;
        }

        trace.converged = saved.is_some();
        trace.episodes = tracker.episodes;
        if mode.early_save && saved.is_none() && self.probe.is_some() {
            // unconverged: the final-step parameters become the checkpoint,
            // so measure the freeze-time properties here
            let snap = self.measure_snapshot(trace.final_step, true, &trace.ui_trace)?;
            trace.snapshots.push(snap);
        }
        let saved = saved.unwrap_or_else(|| SavedNet {
            net: self.net.clone(),
            step: trace.final_step,
            converged: false,
        });
        Ok(Stage1Output { trace, saved })
    }

    /// One mini-batch gradient update, plus target sync and interference
    /// bookkeeping when due.
    fn learn_step(&mut self, track_interference: bool, trace: &mut TrainingTrace) -> Result<()> {
        let (loss_td, _aux) = self.compute_gradients()?;
        self.td_loss_sum += loss_td;
        self.td_loss_count += 1;
        self.apply_update();
        self.learner_steps += 1;
        if self.learner_steps % self.cfg.target_sync_period == 0 {
            self.sync_target(track_interference, trace)?;
        }
        Ok(())
    }

    /// Samples a batch and accumulates all gradients (TD through trunk and
    /// value head, plus the weighted auxiliary loss). Returns (td, aux) loss
    /// values. Split from [`Self::apply_update`] so tests can inspect the
    /// accumulated gradients.
    pub(crate) fn compute_gradients(&mut self) -> Result<(f64, f64)> {
        let b = self.cfg.batch_size;
        let d = self.net.trunk.rep_dim();
        self.replay.sample(b, &mut self.replay_rng, &mut self.batch);
        let needs_next = self.aux.needs_next_phi();
        let rows = if needs_next { 2 * b } else { b };
        self.obs_batch.clear();
        for tr in &self.batch {
            self.obs_batch.extend_from_slice(self.obs.get(tr.s));
        }
        if needs_next {
            for tr in &self.batch {
                self.obs_batch.extend_from_slice(self.obs.get(tr.s_next));
            }
        }
        self.net.trunk.forward(&self.obs_batch, rows, &mut self.phi);
        self.net.value.forward(&self.phi[..b * d], b, &mut self.qb);

        // TD loss against the cached target bootstrap.
        self.dq.clear();
        self.dq.resize(b * ACTION_COUNT, 0.0);
        let mut loss_td = 0.0f64;
        for (i, tr) in self.batch.iter().enumerate() {
            let qsel = self.qb[i * ACTION_COUNT + tr.a.index()];
            let y = tr.reward + tr.discount * self.cache.q_max[tr.s_next as usize];
            let diff = qsel - y;
            loss_td += (diff as f64) * (diff as f64);
            self.dq[i * ACTION_COUNT + tr.a.index()] = 2.0 * diff / b as Real;
        }
        loss_td /= b as f64;
        if !loss_td.is_finite() {
            return Err(Error::numerical("non-finite TD loss"));
        }

        self.dphi.clear();
        self.dphi.resize(rows * d, 0.0);
        self.net.value.backward(&self.dq, Some(&mut self.dphi_head));
        for (dst, &g) in self.dphi[..b * d].iter_mut().zip(&self.dphi_head) {
            *dst += g;
        }

        let mut loss_aux = 0.0f64;
        if !self.aux.is_none() && !self.aux.is_atc() {
            self.prepare_aux_targets(b, d);
            let ctx = AuxCtx {
                weight: self.cfg.aux.weight(),
                batch: &self.batch,
                obs_t: &self.obs_batch[..b * self.obs.dim],
                xy_targets: &self.xy_targets,
                sf_targets: &self.sf_targets,
                vvf_targets: &self.vvf_targets,
                neg_idx: &self.neg_idx,
            };
            let v = self.aux.compute(&ctx, &self.phi, &mut self.dphi, d);
            if !v.is_finite() {
                return Err(Error::numerical("non-finite auxiliary loss"));
            }
            loss_aux = v as f64;
        }
        self.net.trunk.backward(&self.dphi);

        if self.aux.is_atc() {
            loss_aux = self.atc_step()?;
        }
        Ok((loss_td, loss_aux))
    }

    /// One Adam step over the union of trunk, value, and auxiliary
    /// parameters (ATC parameters take their own stepsize when configured),
    /// then the ATC momentum blend.
    pub(crate) fn apply_update(&mut self) {
        let atc_lr = self.aux.atc_lr();
        let mut union = LearnerParams {
            net: &mut self.net,
            aux: &mut self.aux,
        };
        self.adam.step_with(&mut union, |name| {
            if name.starts_with("aux.atc") {
                atc_lr
            } else {
                None
            }
        });
        self.aux.momentum_step(&mut self.net.trunk);
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

    /// Gathers per-batch aux targets from the sync-time cache.
    fn prepare_aux_targets(&mut self, b: usize, d: usize) {
        self.xy_targets.clear();
        for tr in &self.batch {
            let (row, col) = self.maze.map.cell_of(tr.s);
            self.xy_targets.push(col as Real); // x
            self.xy_targets.push(row as Real); // y
        }
        self.sf_targets.clear();
        if self.aux.needs_sf_targets() {
            for tr in &self.batch {
                let s = tr.s_next as usize;
                self.sf_targets
                    .extend_from_slice(&self.cache.sf_target[s * d..(s + 1) * d]);
            }
        }
        self.vvf_targets.clear();
        if !self.vvf_goal_ids.is_empty() {
            let aux_gamma = self.cfg.aux.aux_gamma as Real;
            for (gi, &g) in self.vvf_goal_ids.iter().enumerate() {
                for tr in &self.batch {
                    let entered = tr.s_next == g;
                    let r = if entered { 1.0 } else { 0.0 };
                    let bootstrap = if entered {
                        0.0
                    } else {
                        aux_gamma * self.cache.vvf_qmax_at(gi, tr.s_next)
                    };
                    self.vvf_targets.push(r + bootstrap);
                }
            }
        }
        self.neg_idx.clear();
        if self.aux.needs_next_phi() {
            for i in 0..b {
                let j = self.aux_rng.below(b - 1);
                self.neg_idx.push(if j >= i { j + 1 } else { j });
            }
        }
    }

    /// Samples temporal pairs, augments both sides, and runs the ATC loss
    /// (its own trunk forward/backward).
    fn atc_step(&mut self) -> Result<f64> {
        let b = self.cfg.batch_size;
        let (k, pad, prob) = {
            let c = &self.cfg.aux.atc;
            (c.temporal_offset, c.shift_pad, c.shift_prob)
        };
        self.replay
            .sample_temporal_pairs(b, k, &mut self.aux_rng, &mut self.pairs);
        if self.pairs.len() < 2 {
            return Ok(0.0); // too few pairs this early; skip the loss
        }
        let n = self.pairs.len();
        let (h, w) = (self.maze.map.height, self.maze.map.width);
        self.anchor_obs.clear();
        self.positive_obs.clear();
        for i in 0..n {
            let (a, p) = (self.pairs[i].0.s, self.pairs[i].1.s);
            random_shift(
                self.obs.get(a),
                h,
                w,
                3,
                pad,
                prob,
                &mut self.aux_rng,
                &mut self.shift_buf,
            );
            self.anchor_obs.extend_from_slice(&self.shift_buf);
            random_shift(
                self.obs.get(p),
                h,
                w,
                3,
                pad,
                prob,
                &mut self.aux_rng,
                &mut self.shift_buf,
            );
            self.positive_obs.extend_from_slice(&self.shift_buf);
        }
        let loss = self.aux.compute_atc(
            &mut self.net.trunk,
            &self.anchor_obs,
            &self.positive_obs,
            n,
            self.cfg.aux.weight(),
        );
        if !loss.is_finite() {
            return Err(Error::numerical("non-finite ATC loss"));
        }
        Ok(loss as f64)
    }

    /// Completes the interference window, copies the online parameters into
    /// the target copies, rebuilds the per-state cache, and opens the next
    /// window.
    fn sync_target(&mut self, track_interference: bool, trace: &mut TrainingTrace) -> Result<()> {
        if track_interference && self.window_open {
            let err_now = self.probe_td_error_mean()?;
            trace.ui_trace.push(err_now - self.window_err_start);
        }
        self.sync_count += 1;
        self.target.copy_values_from(&mut self.net);
        self.aux_target.copy_values_from(&mut self.aux);
        self.cache.rebuild(
            &mut self.target,
            &self.aux_target,
            &self.obs,
            self.cfg.aux.lambda,
        );
        if track_interference {
            if let Some(probe) = self.probe.clone() {
                self.window_bootstrap.clear();
                for tr in &probe.transitions {
                    self.window_bootstrap
                        .push(tr.reward + tr.discount * self.cache.q_max[tr.s_next as usize]);
                }
                self.window_err_start = self.probe_td_error_mean()?;
                self.window_open = true;
            }
        }
        Ok(())
    }

    /// Mean squared TD error over the probe with the bootstrap fixed at the
    /// window-start target parameters.
    fn probe_td_error_mean(&mut self) -> Result<f64> {
        let probe = self
            .probe
            .clone()
            .ok_or_else(|| Error::usage("interference tracking requires a probe set"))?;
        let n = probe.transitions.len();
        debug_assert_eq!(self.window_bootstrap.len(), n);
        let mut total = 0.0f64;
        let chunk = 125;
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            self.obs_batch.clear();
            for tr in &probe.transitions[start..end] {
                self.obs_batch.extend_from_slice(self.obs.get(tr.s));
            }
            self.net
                .trunk
                .forward(&self.obs_batch, end - start, &mut self.phi);
            self.net
                .value
                .forward_eval(&self.phi, end - start, &mut self.qb);
            for (i, tr) in probe.transitions[start..end].iter().enumerate() {
                let q = self.qb[i * ACTION_COUNT + tr.a.index()];
                let e = (self.window_bootstrap[start + i] - q) as f64;
                total += e * e;
            }
            start = end;
        }
        Ok(total / n as f64)
    }

    /// Current update-interference value for the window in progress (test
    /// and measurement hook).
    pub fn pending_interference(&mut self) -> Result<Option<f64>> {
        if !self.window_open {
            return Ok(None);
        }
        let err_now = self.probe_td_error_mean()?;
        Ok(Some(err_now - self.window_err_start))
    }

    /// Measures the six properties on the probe with the current parameters.
    pub fn measure_snapshot(
        &mut self,
        step: u64,
        is_freeze: bool,
        ui_trace: &[f64],
    ) -> Result<PropertySnapshot> {
        let probe = self
            .probe
            .clone()
            .ok_or_else(|| Error::usage("property measurement requires a probe set"))?;
        let (phi, phi_next, v) = features_and_values(&mut self.net, &self.obs, &probe)?;
        let n = probe.transitions.len();
        let d = self.net.trunk.rep_dim();
        let raw = properties::measure_raw(&phi, &phi_next, &v, &probe.pairing, n, d, ui_trace);
        Ok(PropertySnapshot {
            step,
            is_freeze,
            raw,
        })
    }
}

/// Probe features Φ, successor features Φ', and values V = max_a Q for a
/// network, as f64 matrices for the metric kernels.
pub fn features_and_values(
    net: &mut QNetwork<Real>,
    obs: &ObsTable,
    probe: &ProbeSet,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = probe.transitions.len();
    let d = net.trunk.rep_dim();
    let mut phi = Vec::with_capacity(n * d);
    let mut phi_next = Vec::with_capacity(n * d);
    let mut v = Vec::with_capacity(n);
    let chunk = 125;
    let mut obs_buf: Vec<Real> = Vec::new();
    let mut phi_buf: Vec<Real> = Vec::new();
    let mut q_buf: Vec<Real> = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let m = end - start;
        // current states: features + values
        obs_buf.clear();
        for tr in &probe.transitions[start..end] {
            obs_buf.extend_from_slice(obs.get(tr.s));
        }
        net.trunk.forward(&obs_buf, m, &mut phi_buf);
        phi.extend(phi_buf.iter().map(|&x| x as f64));
        net.value.forward_eval(&phi_buf, m, &mut q_buf);
        for row in q_buf.chunks_exact(ACTION_COUNT) {
            let mx = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            if !mx.is_finite() {
                return Err(Error::numerical("non-finite value during measurement"));
            }
            v.push(mx as f64);
        }
        // successor states
        obs_buf.clear();
        for tr in &probe.transitions[start..end] {
            obs_buf.extend_from_slice(obs.get(tr.s_next));
        }
        net.trunk.forward(&obs_buf, m, &mut phi_buf);
        phi_next.extend(phi_buf.iter().map(|&x| x as f64));
        start = end;
    }
    Ok((phi, phi_next, v))
}
