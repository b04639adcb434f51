use crate::gridworld::CellId;
use crate::model::Trunk;
use crate::nn::{mse_grad, mse_loss, relu_backward, relu_forward, visit_prefixed, ConvTranspose2d, Linear, Mlp};
use crate::num::Scalar;
use crate::rng::Stream;
use crate::tensor::{Param, Parameterized};

use super::AuxCtx;

const N_ACTIONS: usize = crate::gridworld::ACTION_COUNT;

/// phi rows concatenated with a one-hot action encoding.
fn action_input<S: Scalar>(phi: &[S], batch: &[crate::gridworld::Transition], d: usize, out: &mut Vec<S>) {
    let b = batch.len();
    out.clear();
    out.resize(b * (d + N_ACTIONS), S::ZERO);
    for (i, tr) in batch.iter().enumerate() {
        let row = i * (d + N_ACTIONS);
        out[row..row + d].copy_from_slice(&phi[i * d..(i + 1) * d]);
        out[row + d + tr.a.index()] = S::ONE;
    }
}

/// Adds the phi-part of an action-input gradient back into dphi rows 0..B.
fn add_dphi_from_action_input<S: Scalar>(dinput: &[S], b: usize, d: usize, dphi: &mut [S]) {
    for i in 0..b {
        let src = i * (d + N_ACTIONS);
        let dst = i * d;
        for j in 0..d {
            dphi[dst + j] += dinput[src + j];
        }
    }
}

/// Input reconstruction: representation -> 1024 hidden -> two deconvolutions
/// back to the input image, trained with squared error against the
/// (normalized) observation.
pub struct IrHead<S: Scalar> {
    fc: Linear<S>,
    dec1: ConvTranspose2d<S>,
    dec2: ConvTranspose2d<S>,
    fc_pre: Vec<S>,
    fc_out: Vec<S>,
    d1_pre: Vec<S>,
    d1_out: Vec<S>,
    recon: Vec<S>,
    scratch: Vec<S>,
    scratch2: Vec<S>,
}

impl<S: Scalar> IrHead<S> {
    pub fn new(trunk: &Trunk<S>, rng: &mut Stream) -> Self {
        let (c2h, c2w) = (trunk.conv2.out_h, trunk.conv2.out_w);
        let flat = trunk.conv2.out_len();
        let fc = Linear::new(trunk.rep_dim(), flat, rng);
        let dec1 = ConvTranspose2d::new(c2h, c2w, 16, 32, 4, 2, 2, rng);
        let dec2 = ConvTranspose2d::new(dec1.out_h, dec1.out_w, 32, 3, 4, 1, 1, rng);
        assert_eq!(
            dec2.out_h * dec2.out_w * 3,
            trunk.obs_dim,
            "decoder must mirror the trunk geometry"
        );
        IrHead {
            fc,
            dec1,
            dec2,
            fc_pre: Vec::new(),
            fc_out: Vec::new(),
            d1_pre: Vec::new(),
            d1_out: Vec::new(),
            recon: Vec::new(),
            scratch: Vec::new(),
            scratch2: Vec::new(),
        }
    }

    pub fn compute(&mut self, ctx: &AuxCtx<'_, S>, phi: &[S], dphi: &mut [S], d: usize) -> S {
        let b = ctx.batch.len();
        self.fc.forward(&phi[..b * d], b, &mut self.fc_pre);
        relu_forward(&self.fc_pre, &mut self.fc_out);
        self.dec1.forward(&self.fc_out, b, &mut self.d1_pre);
        relu_forward(&self.d1_pre, &mut self.d1_out);
        self.dec2.forward(&self.d1_out, b, &mut self.recon);
        let loss = mse_loss(&self.recon, ctx.obs_t, b);

        mse_grad(&self.recon, ctx.obs_t, b, &mut self.scratch);
        let w = S::from_f64(ctx.weight);
        self.scratch.iter_mut().for_each(|v| *v *= w);
        self.dec2.backward(&self.scratch, Some(&mut self.scratch2));
        relu_backward(&self.d1_pre, &self.scratch2, &mut self.scratch);
        self.dec1.backward(&self.scratch, Some(&mut self.scratch2));
        relu_backward(&self.fc_pre, &self.scratch2, &mut self.scratch);
        self.fc.backward(&self.scratch, Some(&mut self.scratch2));
        for (dp, &g) in dphi[..b * d].iter_mut().zip(&self.scratch2) {
            *dp += g;
        }
        loss
    }
}

impl<S: Scalar> Parameterized<S> for IrHead<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        visit_prefixed("aux.ir.fc", &mut self.fc, f);
        visit_prefixed("aux.ir.dec1", &mut self.dec1, f);
        visit_prefixed("aux.ir.dec2", &mut self.dec2, f);
    }
}

/// Loss core for next-agent-state prediction: squared error to the feature
/// delta plus a hinge pushing a random other transition's prediction at
/// least unit distance away. Returns (loss, dpred, dtargets).
pub fn nas_loss_core<S: Scalar>(
    pred: &[S],
    targets: &[S],
    neg_idx: &[usize],
    b: usize,
    d: usize,
) -> (S, Vec<S>, Vec<S>) {
    let inv_b = S::from_f64(1.0 / b as f64);
    let two = S::from_f64(2.0);
    let mut loss = S::ZERO;
    let mut dpred = vec![S::ZERO; b * d];
    let mut dt = vec![S::ZERO; b * d];
    for i in 0..b {
        let p = &pred[i * d..(i + 1) * d];
        let t = &targets[i * d..(i + 1) * d];
        let mut sq = S::ZERO;
        for j in 0..d {
            let diff = p[j] - t[j];
            sq += diff * diff;
            dpred[i * d + j] += two * inv_b * diff;
            dt[i * d + j] -= two * inv_b * diff;
        }
        loss += sq * inv_b;

        let k = neg_idx[i];
        debug_assert_ne!(k, i);
        let pk = &pred[k * d..(k + 1) * d];
        let mut nsq = S::ZERO;
        for j in 0..d {
            let nd = pk[j] - t[j];
            nsq += nd * nd;
        }
        let margin = S::ONE - nsq;
        if margin > S::ZERO {
            loss += margin * inv_b;
            for j in 0..d {
                let nd = pk[j] - t[j];
                dpred[k * d + j] -= two * inv_b * nd;
                dt[i * d + j] += two * inv_b * nd;
            }
        }
    }
    (loss, dpred, dt)
}

/// Next-agent-state prediction head: F(phi_t, a_t) regresses the feature
/// delta phi_{t+1} - phi_t, with an in-batch negative hinge. Gradients flow
/// through prediction and both target halves (no stop-gradient).
pub struct NasHead<S: Scalar> {
    mlp: Mlp<S>,
    input: Vec<S>,
    pred: Vec<S>,
    targets: Vec<S>,
    dinput: Vec<S>,
}

impl<S: Scalar> NasHead<S> {
    pub fn new(d: usize, rng: &mut Stream) -> Self {
        NasHead {
            mlp: Mlp::new(d + N_ACTIONS, &[64, 64], d, rng),
            input: Vec::new(),
            pred: Vec::new(),
            targets: Vec::new(),
            dinput: Vec::new(),
        }
    }

    pub fn compute(&mut self, ctx: &AuxCtx<'_, S>, phi: &[S], dphi: &mut [S], d: usize) -> S {
        let b = ctx.batch.len();
        debug_assert!(phi.len() >= 2 * b * d, "NAS needs phi rows for s and s'");
        action_input(phi, ctx.batch, d, &mut self.input);
        self.mlp.forward(&self.input, b, &mut self.pred);
        self.targets.clear();
        for i in 0..b {
            for j in 0..d {
                self.targets.push(phi[(b + i) * d + j] - phi[i * d + j]);
            }
        }
        let (loss, mut dpred, dt) = nas_loss_core(&self.pred, &self.targets, ctx.neg_idx, b, d);
        let w = S::from_f64(ctx.weight);
        dpred.iter_mut().for_each(|v| *v *= w);
        self.mlp.backward(&dpred, Some(&mut self.dinput));
        add_dphi_from_action_input(&self.dinput, b, d, dphi);
        // target = phi' - phi: dphi' += dt, dphi -= dt
        for i in 0..b {
            for j in 0..d {
                let g = w * dt[i * d + j];
                dphi[(b + i) * d + j] += g;
                dphi[i * d + j] -= g;
            }
        }
        loss
    }
}

impl<S: Scalar> Parameterized<S> for NasHead<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        visit_prefixed("aux.nas", &mut self.mlp, f);
    }
}

/// Successor-feature head: F(phi_t, a_t) regresses the stop-gradient target
/// (1-lambda) phi_{t+1} + lambda F_target(phi_{t+1}, a_{t+1}) provided by the
/// agent, plus a linear reward predictor on phi_t.
pub struct SfHead<S: Scalar> {
    mlp: Mlp<S>,
    reward: Linear<S>,
    input: Vec<S>,
    pred: Vec<S>,
    rpred: Vec<S>,
    scratch: Vec<S>,
    dinput: Vec<S>,
}

impl<S: Scalar> SfHead<S> {
    pub fn new(d: usize, rng: &mut Stream) -> Self {
        SfHead {
            mlp: Mlp::new(d + N_ACTIONS, &[64, 64], d, rng),
            reward: Linear::new(d, 1, rng),
            input: Vec::new(),
            pred: Vec::new(),
            rpred: Vec::new(),
            scratch: Vec::new(),
            dinput: Vec::new(),
        }
    }

    /// Evaluation of the head at given inputs, used when building bootstrap
    /// targets from the target copy.
    pub fn predict_eval(&self, input: &[S], n: usize, out: &mut Vec<S>) {
        self.mlp.forward_eval(input, n, out);
    }

    pub fn compute(&mut self, ctx: &AuxCtx<'_, S>, phi: &[S], dphi: &mut [S], d: usize) -> S {
        let b = ctx.batch.len();
        let w = S::from_f64(ctx.weight);
        action_input(phi, ctx.batch, d, &mut self.input);
        self.mlp.forward(&self.input, b, &mut self.pred);
        let loss_sf = mse_loss(&self.pred, ctx.sf_targets, b);
        mse_grad(&self.pred, ctx.sf_targets, b, &mut self.scratch);
        self.scratch.iter_mut().for_each(|v| *v *= w);
        self.mlp.backward(&self.scratch, Some(&mut self.dinput));
        add_dphi_from_action_input(&self.dinput, b, d, dphi);

        // Linear reward prediction from phi_t.
        self.reward.forward(&phi[..b * d], b, &mut self.rpred);
        let mut loss_r = S::ZERO;
        self.scratch.clear();
        let inv_b = S::from_f64(1.0 / b as f64);
        let two = S::from_f64(2.0);
        for (i, tr) in ctx.batch.iter().enumerate() {
            let diff = self.rpred[i] - S::from_f64(tr.reward as f64);
            loss_r += diff * diff * inv_b;
            self.scratch.push(w * two * inv_b * diff);
        }
        self.reward.backward(&self.scratch, Some(&mut self.dinput));
        for (dp, &g) in dphi[..b * d].iter_mut().zip(&self.dinput) {
            *dp += g;
        }
        loss_sf + loss_r
    }
}

impl<S: Scalar> Parameterized<S> for SfHead<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        visit_prefixed("aux.sf", &mut self.mlp, f);
        visit_prefixed("aux.sf.reward", &mut self.reward, f);
    }
}

/// Immediate-reward prediction from (phi_t, a_t).
pub struct RewardHead<S: Scalar> {
    mlp: Mlp<S>,
    input: Vec<S>,
    pred: Vec<S>,
    scratch: Vec<S>,
    dinput: Vec<S>,
}

impl<S: Scalar> RewardHead<S> {
    pub fn new(d: usize, rng: &mut Stream) -> Self {
        RewardHead {
            mlp: Mlp::new(d + N_ACTIONS, &[64, 64], 1, rng),
            input: Vec::new(),
            pred: Vec::new(),
            scratch: Vec::new(),
            dinput: Vec::new(),
        }
    }

    pub fn compute(&mut self, ctx: &AuxCtx<'_, S>, phi: &[S], dphi: &mut [S], d: usize) -> S {
        let b = ctx.batch.len();
        let w = S::from_f64(ctx.weight);
        action_input(phi, ctx.batch, d, &mut self.input);
        self.mlp.forward(&self.input, b, &mut self.pred);
        let mut loss = S::ZERO;
        self.scratch.clear();
        let inv_b = S::from_f64(1.0 / b as f64);
        let two = S::from_f64(2.0);
        for (i, tr) in ctx.batch.iter().enumerate() {
            let diff = self.pred[i] - S::from_f64(tr.reward as f64);
            loss += diff * diff * inv_b;
            self.scratch.push(w * two * inv_b * diff);
        }
        self.mlp.backward(&self.scratch, Some(&mut self.dinput));
        add_dphi_from_action_input(&self.dinput, b, d, dphi);
        loss
    }
}

impl<S: Scalar> Parameterized<S> for RewardHead<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        visit_prefixed("aux.reward", &mut self.mlp, f);
    }
}

/// Expert-target prediction: the agent's (x, y) grid coordinates from phi_t.
pub struct XyHead<S: Scalar> {
    mlp: Mlp<S>,
    pred: Vec<S>,
    scratch: Vec<S>,
    dinput: Vec<S>,
}

impl<S: Scalar> XyHead<S> {
    pub fn new(d: usize, rng: &mut Stream) -> Self {
        XyHead {
            mlp: Mlp::new(d, &[64, 64], 2, rng),
            pred: Vec::new(),
            scratch: Vec::new(),
            dinput: Vec::new(),
        }
    }

    pub fn compute(&mut self, ctx: &AuxCtx<'_, S>, phi: &[S], dphi: &mut [S], d: usize) -> S {
        let b = ctx.batch.len();
        let w = S::from_f64(ctx.weight);
        self.mlp.forward(&phi[..b * d], b, &mut self.pred);
        let loss = mse_loss(&self.pred, ctx.xy_targets, b);
        mse_grad(&self.pred, ctx.xy_targets, b, &mut self.scratch);
        self.scratch.iter_mut().for_each(|v| *v *= w);
        self.mlp.backward(&self.scratch, Some(&mut self.dinput));
        for (dp, &g) in dphi[..b * d].iter_mut().zip(&self.dinput) {
            *dp += g;
        }
        loss
    }
}

impl<S: Scalar> Parameterized<S> for XyHead<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        visit_prefixed("aux.xy", &mut self.mlp, f);
    }
}

/// Virtual value functions: one DQN-style Q-head per imagined goal, trained
/// with TD targets (virtual reward, virtual termination, discount 0.9)
/// supplied by the agent from the target copy.
pub struct VvfHead<S: Scalar> {
    heads: Vec<Mlp<S>>,
    goal_ids: Vec<CellId>,
    out: Vec<S>,
    dout: Vec<S>,
    dinput: Vec<S>,
}

impl<S: Scalar> VvfHead<S> {
    pub fn new(d: usize, goal_ids: Vec<CellId>, rng: &mut Stream) -> Self {
        let heads = (0..goal_ids.len())
            .map(|_| Mlp::new(d, &[64, 64], N_ACTIONS, rng))
            .collect();
        VvfHead {
            heads,
            goal_ids,
            out: Vec::new(),
            dout: Vec::new(),
            dinput: Vec::new(),
        }
    }

    pub fn goal_ids(&self) -> &[CellId] {
        &self.goal_ids
    }

    pub fn n_goals(&self) -> usize {
        self.goal_ids.len()
    }

    /// Q-values of goal-head `gi` at given features (used for the target
    /// cache on the target copy).
    pub fn q_eval(&self, gi: usize, phi: &[S], n: usize, out: &mut Vec<S>) {
        self.heads[gi].forward_eval(phi, n, out);
    }

    pub fn compute(&mut self, ctx: &AuxCtx<'_, S>, phi: &[S], dphi: &mut [S], d: usize) -> S {
        let b = ctx.batch.len();
        let w = S::from_f64(ctx.weight);
        let inv_b = S::from_f64(1.0 / b as f64);
        let two = S::from_f64(2.0);
        let mut total = S::ZERO;
        for gi in 0..self.heads.len() {
            self.heads[gi].forward(&phi[..b * d], b, &mut self.out);
            self.dout.clear();
            self.dout.resize(b * N_ACTIONS, S::ZERO);
            for (i, tr) in ctx.batch.iter().enumerate() {
                let a = tr.a.index();
                let pred = self.out[i * N_ACTIONS + a];
                let target = ctx.vvf_targets[gi * b + i];
                let diff = pred - target;
                total += diff * diff * inv_b;
                self.dout[i * N_ACTIONS + a] = w * two * inv_b * diff;
            }
            self.heads[gi].backward(&self.dout, Some(&mut self.dinput));
            for (dp, &g) in dphi[..b * d].iter_mut().zip(&self.dinput) {
                *dp += g;
            }
        }
        total
    }
}

impl<S: Scalar> Parameterized<S> for VvfHead<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (gi, head) in self.heads.iter_mut().enumerate() {
            let prefix = format!("aux.vvf.g{gi}");
            head.visit_params(&mut |name, p| {
                let full = format!("{prefix}.{name}");
                f(&full, p);
            });
        }
    }
}

/// InfoNCE over a square logit matrix with positives on the diagonal.
/// Returns the mean negative log-softmax of the diagonal and writes
/// d(loss)/d(logits).
pub fn infonce_from_logits<S: Scalar>(logits: &[S], b: usize, dlogits: &mut Vec<S>) -> S {
    debug_assert_eq!(logits.len(), b * b);
    dlogits.clear();
    dlogits.resize(b * b, S::ZERO);
    let inv_b = S::from_f64(1.0 / b as f64);
    let mut loss = S::ZERO;
    for i in 0..b {
        let row = &logits[i * b..(i + 1) * b];
        let mut m = row[0];
        for &v in row {
            m = m.max_s(v);
        }
        let mut z = S::ZERO;
        for &v in row {
            z += (v - m).exp();
        }
        let lse = m + z.ln();
        loss += (lse - row[i]) * inv_b;
        for j in 0..b {
            let soft = (row[j] - m).exp() / z;
            let delta = if j == i { S::ONE } else { S::ZERO };
            dlogits[i * b + j] = (soft - delta) * inv_b;
        }
    }
    loss
}
