use crate::aux::AuxHead;
use crate::gridworld::{CellId, ObsTable, ACTION_COUNT};
use crate::model::QNetwork;
use crate::num::Real;

/// Everything the learner needs from the target network, precomputed for all
/// free cells at each sync. The target parameters are constant between
/// syncs and the observation space is finite, so per-state evaluation here is
/// mathematically identical to per-sample evaluation inside the TD update.
#[derive(Debug, Clone, Default)]
pub struct TargetCache {
    pub n_states: usize,
    pub rep_dim: usize,
    /// max_a Q_target(s, a) per state.
    pub q_max: Vec<Real>,
    /// argmax_a Q_target(s, a) per state (ties toward the lower index).
    pub q_argmax: Vec<u8>,
    /// Target-trunk features, [n_states, rep_dim].
    pub phi: Vec<Real>,
    /// SF bootstrap targets (1-lambda) phi'(s) + lambda F_target(phi'(s), a*(s)),
    /// [n_states, rep_dim]; empty unless the SF head is active.
    pub sf_target: Vec<Real>,
    /// max_a Q^g_target(s, a) per virtual goal then state, [n_goals, n_states].
    pub vvf_qmax: Vec<Real>,
}

const CHUNK: usize = 64;

impl TargetCache {
    /// Recomputes every table from the just-synced target network.
    pub fn rebuild(
        &mut self,
        target: &mut QNetwork<Real>,
        aux_target: &AuxHead<Real>,
        obs: &ObsTable,
        lambda: f64,
    ) {
        let n = obs.n_states;
        let d = target.trunk.rep_dim();
        self.n_states = n;
        self.rep_dim = d;
        self.phi.clear();
        self.phi.reserve(n * d);
        let mut obs_chunk: Vec<Real> = Vec::new();
        let mut phi_chunk: Vec<Real> = Vec::new();
        let mut start = 0usize;
        while start < n {
            let end = (start + CHUNK).min(n);
            obs.gather((start..end).map(|i| i as CellId), &mut obs_chunk);
            target
                .trunk
                .forward(&obs_chunk, end - start, &mut phi_chunk);
            self.phi.extend_from_slice(&phi_chunk);
            start = end;
        }

        let mut q: Vec<Real> = Vec::new();
        target.value.forward_eval(&self.phi, n, &mut q);
        self.q_max.clear();
        self.q_argmax.clear();
        for row in q.chunks_exact(ACTION_COUNT) {
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            self.q_max.push(row[best]);
            self.q_argmax.push(best as u8);
        }

        self.sf_target.clear();
        if aux_target.needs_sf_targets() {
            // F_target(phi'(s), a*(s)) with a* the target net's greedy action.
            let mut input: Vec<Real> = vec![0.0; n * (d + ACTION_COUNT)];
            for s in 0..n {
                let row = s * (d + ACTION_COUNT);
                input[row..row + d].copy_from_slice(&self.phi[s * d..(s + 1) * d]);
                input[row + d + self.q_argmax[s] as usize] = 1.0;
            }
            let mut pred = Vec::new();
            aux_target.sf_predict_eval(&input, n, &mut pred);
            let lam = lambda as Real;
            self.sf_target.reserve(n * d);
            for i in 0..n * d {
                self.sf_target.push((1.0 - lam) * self.phi[i] + lam * pred[i]);
            }
        }

        self.vvf_qmax.clear();
        let n_goals = aux_target.n_virtual_goals();
        if n_goals > 0 {
            let mut qg = Vec::new();
            for gi in 0..n_goals {
                aux_target.vvf_q_eval(gi, &self.phi, n, &mut qg);
                for row in qg.chunks_exact(ACTION_COUNT) {
                    let m = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
                    self.vvf_qmax.push(m);
                }
            }
        }
    }

    #[inline]
    pub fn vvf_qmax_at(&self, goal_index: usize, state: CellId) -> Real {
        self.vvf_qmax[goal_index * self.n_states + state as usize]
    }
}
