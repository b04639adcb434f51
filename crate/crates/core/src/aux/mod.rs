//! The nine auxiliary objectives: each one is a head (or head set) on the
//! shared representation trunk contributing `weight * loss` to the total
//! objective. Heads accumulate their own parameter gradients and add the
//! weighted dL/dphi into the trunk's upstream gradient buffer.
//!
//! Bootstrapped targets (SF, VirtualVF) and greedy next actions are supplied
//! by the agent from its sync-time target cache, so every head here is a
//! deterministic function of (parameters, inputs, targets) — which is what
//! the finite-difference checks exercise.

mod atc;
mod heads;

pub use atc::AtcHead;
pub use heads::{
    infonce_from_logits, nas_loss_core, IrHead, NasHead, RewardHead, SfHead, VvfHead, XyHead,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Cell, MazeMap, Transition};
use crate::model::Trunk;
use crate::num::Scalar;
use crate::rng::{Seed, Stream};
use crate::tensor::{Param, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    None,
    Ir,
    Nas,
    Sf,
    Reward,
    Xy,
    VirtualVf1,
    VirtualVf5,
    Atc,
}

impl AuxKind {
    pub fn label(self) -> &'static str {
        match self {
            AuxKind::None => "none",
            AuxKind::Ir => "ir",
            AuxKind::Nas => "nas",
            AuxKind::Sf => "sf",
            AuxKind::Reward => "reward",
            AuxKind::Xy => "xy",
            AuxKind::VirtualVf1 => "virtual_vf1",
            AuxKind::VirtualVf5 => "virtual_vf5",
            AuxKind::Atc => "atc",
        }
    }

    /// Loss weight when the config does not override it.
    pub fn default_weight(self) -> f64 {
        match self {
            AuxKind::None => 0.0,
            AuxKind::Ir => 1e-4,
            AuxKind::Nas => 1e-3,
            AuxKind::Sf => 1.0,
            AuxKind::Reward => 1.0,
            AuxKind::Xy => 1e-4,
            AuxKind::VirtualVf1 | AuxKind::VirtualVf5 => 1.0,
            AuxKind::Atc => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtcConfig {
    /// Positive pairs are (s_t, s_{t+k}).
    pub temporal_offset: usize,
    pub shift_prob: f64,
    pub shift_pad: usize,
    pub embed_dim: usize,
    pub predictor_hidden: usize,
    /// Momentum-encoder blend rate, applied every learner step.
    pub tau: f64,
    /// Stepsize for the ATC head parameters (swept separately); the trunk
    /// keeps the main stepsize.
    pub lr: Option<f64>,
}

impl Default for AtcConfig {
    fn default() -> Self {
        AtcConfig {
            temporal_offset: 3,
            shift_prob: 0.1,
            shift_pad: 4,
            embed_dim: 32,
            predictor_hidden: 64,
            tau: 0.01,
            lr: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuxConfig {
    pub kind: AuxKind,
    /// None = the per-kind default weight.
    pub weight: Option<f64>,
    /// Discount for the virtual value functions.
    pub aux_gamma: f64,
    /// SF bootstrap mixing coefficient.
    pub lambda: f64,
    pub atc: AtcConfig,
}

impl Default for AuxConfig {
    fn default() -> Self {
        AuxConfig {
            kind: AuxKind::None,
            weight: None,
            aux_gamma: 0.9,
            lambda: 0.99,
            atc: AtcConfig::default(),
        }
    }
}

impl AuxConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn of_kind(kind: AuxKind) -> Self {
        AuxConfig {
            kind,
            ..Self::default()
        }
    }

    pub fn weight(&self) -> f64 {
        self.weight.unwrap_or_else(|| self.kind.default_weight())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.weight {
            if !(w > 0.0) && self.kind != AuxKind::None {
                return Err(Error::config("aux weight must be > 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.aux_gamma) {
            return Err(Error::config("aux_gamma must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.atc.tau) || self.atc.tau == 0.0 {
            return Err(Error::config("atc tau must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Virtual goal cells for the VirtualVF variants: the grid center, or the
    /// four corners plus the center ([7,7] and friends on the default map).
    pub fn virtual_goals(kind: AuxKind, map: &MazeMap) -> Vec<Cell> {
        let (h, w) = (map.height, map.width);
        let center = (h / 2, w / 2);
        match kind {
            AuxKind::VirtualVf1 => vec![center],
            AuxKind::VirtualVf5 => vec![
                (0, 0),
                (0, w - 1),
                (h - 1, 0),
                (h - 1, w - 1),
                center,
            ],
            _ => Vec::new(),
        }
    }
}

/// Per-step inputs shared by the batch-driven heads. Targets are produced by
/// the agent (from the synced target network) so heads stay pure.
pub struct AuxCtx<'a, S> {
    /// Loss weight applied to every gradient this head emits.
    pub weight: f64,
    pub batch: &'a [Transition],
    /// [B, obs_dim] observations of s_t (IR reconstruction target).
    pub obs_t: &'a [S],
    /// [B, 2] (x, y) grid coordinates of s_t as reals.
    pub xy_targets: &'a [S],
    /// [B, d] SF bootstrap targets, already stop-gradient.
    pub sf_targets: &'a [S],
    /// [n_goals * B] completed virtual TD targets r^g + gamma_aux * mask * maxQ.
    pub vvf_targets: &'a [S],
    /// [B] in-batch negative index for NAS (never equal to the row index).
    pub neg_idx: &'a [usize],
}

/// One auxiliary objective bound to a trunk geometry.
pub enum AuxHead<S: Scalar> {
    None,
    Ir(IrHead<S>),
    Nas(NasHead<S>),
    Sf(SfHead<S>),
    Reward(RewardHead<S>),
    Xy(XyHead<S>),
    VirtualVf(VvfHead<S>),
    Atc(Box<AtcHead<S>>),
}

impl<S: Scalar> AuxHead<S> {
    /// Builds the head for `cfg`, drawing initialization from `seed`.
    /// `trunk` supplies geometry (and, for ATC, the momentum copy).
    pub fn build(
        cfg: &AuxConfig,
        trunk: &Trunk<S>,
        map: &MazeMap,
        seed: Seed,
    ) -> Result<AuxHead<S>> {
        cfg.validate()?;
        let mut rng = seed.child("aux").stream();
        let d = trunk.rep_dim();
        Ok(match cfg.kind {
            AuxKind::None => AuxHead::None,
            AuxKind::Ir => AuxHead::Ir(IrHead::new(trunk, &mut rng)),
            AuxKind::Nas => AuxHead::Nas(NasHead::new(d, &mut rng)),
            AuxKind::Sf => AuxHead::Sf(SfHead::new(d, &mut rng)),
            AuxKind::Reward => AuxHead::Reward(RewardHead::new(d, &mut rng)),
            AuxKind::Xy => AuxHead::Xy(XyHead::new(d, &mut rng)),
            AuxKind::VirtualVf1 | AuxKind::VirtualVf5 => {
                let goals = AuxConfig::virtual_goals(cfg.kind, map);
                let mut ids = Vec::with_capacity(goals.len());
                for g in goals {
                    let id = map.id_of(g).ok_or_else(|| {
                        Error::config(format!("virtual goal {g:?} is not a free cell"))
                    })?;
                    ids.push(id);
                }
                AuxHead::VirtualVf(VvfHead::new(d, ids, &mut rng))
            }
            AuxKind::Atc => AuxHead::Atc(Box::new(AtcHead::new(trunk, &cfg.atc, &mut rng))),
        })
    }

    pub fn is_none(&self) -> bool {
        matches!(self, AuxHead::None)
    }

    pub fn is_atc(&self) -> bool {
        matches!(self, AuxHead::Atc(_))
    }

    /// True when the loss needs on-line trunk features of s_{t+1} (with
    /// gradient flow), i.e. the trunk must forward both halves of the batch.
    pub fn needs_next_phi(&self) -> bool {
        matches!(self, AuxHead::Nas(_))
    }

    pub fn needs_sf_targets(&self) -> bool {
        matches!(self, AuxHead::Sf(_))
    }

    pub fn virtual_goal_ids(&self) -> &[crate::gridworld::CellId] {
        match self {
            AuxHead::VirtualVf(h) => h.goal_ids(),
            _ => &[],
        }
    }

    /// Computes the (unweighted) loss over the batch and accumulates
    /// weighted gradients: parameter gradients internally, dL/dphi into
    /// `dphi` (laid out like `phi`: B rows for s_t, then B rows for s_{t+1}
    /// when [`Self::needs_next_phi`]).
    pub fn compute(
        &mut self,
        ctx: &AuxCtx<'_, S>,
        phi: &[S],
        dphi: &mut [S],
        rep_dim: usize,
    ) -> S {
        match self {
            AuxHead::None => S::ZERO,
            AuxHead::Ir(h) => h.compute(ctx, phi, dphi, rep_dim),
            AuxHead::Nas(h) => h.compute(ctx, phi, dphi, rep_dim),
            AuxHead::Sf(h) => h.compute(ctx, phi, dphi, rep_dim),
            AuxHead::Reward(h) => h.compute(ctx, phi, dphi, rep_dim),
            AuxHead::Xy(h) => h.compute(ctx, phi, dphi, rep_dim),
            AuxHead::VirtualVf(h) => h.compute(ctx, phi, dphi, rep_dim),
            AuxHead::Atc(_) => S::ZERO, // driven through compute_atc instead
        }
    }

    /// ATC-only entry point: runs its own trunk forward/backward on the
    /// augmented pair batch.
    pub fn compute_atc(
        &mut self,
        trunk: &mut Trunk<S>,
        aug_anchor: &[S],
        aug_positive: &[S],
        b: usize,
        weight: f64,
    ) -> S {
        match self {
            AuxHead::Atc(h) => h.compute(trunk, aug_anchor, aug_positive, b, weight),
            _ => S::ZERO,
        }
    }

    /// Per-step momentum-encoder update (ATC only; no-op otherwise).
    pub fn momentum_step(&mut self, trunk: &mut Trunk<S>) {
        if let AuxHead::Atc(h) = self {
            h.momentum_step(trunk);
        }
    }

    /// The SF bootstrap needs the target copy's head output at
    /// (phi_target(s'), a'); exposed for the agent's target cache.
    pub fn sf_predict_eval(&self, input: &[S], n: usize, out: &mut Vec<S>) {
        if let AuxHead::Sf(h) = self {
            h.predict_eval(input, n, out);
        }
    }

    /// Target-copy Q-values of virtual goal head `gi` (for the target cache).
    pub fn vvf_q_eval(&self, gi: usize, phi: &[S], n: usize, out: &mut Vec<S>) {
        if let AuxHead::VirtualVf(h) = self {
            h.q_eval(gi, phi, n, out);
        }
    }

    pub fn n_virtual_goals(&self) -> usize {
        match self {
            AuxHead::VirtualVf(h) => h.n_goals(),
            _ => 0,
        }
    }

    pub fn atc_lr(&self) -> Option<f64> {
        match self {
            AuxHead::Atc(h) => h.cfg.lr,
            _ => None,
        }
    }
}

impl<S: Scalar> Parameterized<S> for AuxHead<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        match self {
            AuxHead::None => {}
            AuxHead::Ir(h) => h.visit_params(f),
            AuxHead::Nas(h) => h.visit_params(f),
            AuxHead::Sf(h) => h.visit_params(f),
            AuxHead::Reward(h) => h.visit_params(f),
            AuxHead::Xy(h) => h.visit_params(f),
            AuxHead::VirtualVf(h) => h.visit_params(f),
            AuxHead::Atc(h) => h.visit_params(f),
        }
    }
}

/// Crop-window offset for [`random_shift`], uniform over {0..2*pad}^2.
pub fn draw_shift_offset(pad: usize, rng: &mut Stream) -> (usize, usize) {
    (rng.below(2 * pad + 1), rng.below(2 * pad + 1))
}

/// Data augmentation for ATC: with probability `prob`, zero-pad the image by
/// `pad` on every side and crop back to the original size at a uniformly
/// random window offset; otherwise the identity.
pub fn random_shift<S: Scalar>(
    obs: &[S],
    h: usize,
    w: usize,
    c: usize,
    pad: usize,
    prob: f64,
    rng: &mut Stream,
    out: &mut Vec<S>,
) {
    debug_assert_eq!(obs.len(), h * w * c);
    out.clear();
    if !rng.chance(prob) {
        out.extend_from_slice(obs);
        return;
    }
    let (oy, ox) = draw_shift_offset(pad, rng);
    out.resize(h * w * c, S::ZERO);
    // Output pixel (y, x) reads padded-image pixel (y + oy, x + ox), i.e.
    // source pixel (y + oy - pad, x + ox - pad) or zero outside.
    for y in 0..h {
        let sy = y as isize + oy as isize - pad as isize;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        for x in 0..w {
            let sx = x as isize + ox as isize - pad as isize;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            let src = ((sy as usize) * w + sx as usize) * c;
            let dst = (y * w + x) * c;
            out[dst..dst + c].copy_from_slice(&obs[src..src + c]);
        }
    }
}

/// dst <- (1 - tau) * dst + tau * src, pairing parameters in visitation order.
pub fn momentum_update<S: Scalar>(
    dst: &mut dyn Parameterized<S>,
    src: &mut dyn Parameterized<S>,
    tau: f64,
    scratch: &mut Vec<S>,
) {
    scratch.clear();
    src.visit_params(&mut |_, p| scratch.extend_from_slice(p.value.data()));
    let t = S::from_f64(tau);
    let keep = S::from_f64(1.0 - tau);
    let mut off = 0;
    dst.visit_params(&mut |_, p| {
        let data = p.value.data_mut();
        let len = data.len();
        for (d, &s) in data.iter_mut().zip(&scratch[off..off + len]) {
            *d = keep * *d + t * s;
        }
        off += len;
    });
    debug_assert_eq!(off, scratch.len());
}
