use crate::model::Trunk;
use crate::nn::{visit_prefixed, xavier_uniform, Linear, Mlp};
use crate::num::{matmul, matmul_nt, matmul_tn_acc, Scalar};
use crate::rng::Stream;
use crate::tensor::{Param, Parameterized, Tensor};

use super::{infonce_from_logits, momentum_update, AtcConfig};

/// Augmented temporal contrast: anchors go through the online trunk, a linear
/// projection and a residual predictor; positives (the observation k steps
/// later, independently augmented) go through momentum copies of the trunk
/// and projection. Bilinear logits l_ij = p_i W c_j feed an InfoNCE loss
/// whose negatives are the other batch rows.
pub struct AtcHead<S: Scalar> {
    pub cfg: AtcConfig,
    proj: Linear<S>,
    predictor: Mlp<S>,
    w_bilinear: Param<S>,
    momentum_trunk: Trunk<S>,
    momentum_proj: Linear<S>,
    phi_a: Vec<S>,
    embed: Vec<S>,
    pred_out: Vec<S>,
    p: Vec<S>,
    phi_c: Vec<S>,
    c: Vec<S>,
    pw: Vec<S>,
    logits: Vec<S>,
    dlogits: Vec<S>,
    cw: Vec<S>,
    dp: Vec<S>,
    dl_c: Vec<S>,
    de: Vec<S>,
    dphi: Vec<S>,
    momentum_scratch: Vec<S>,
}

impl<S: Scalar> AtcHead<S> {
    pub fn new(trunk: &Trunk<S>, cfg: &AtcConfig, rng: &mut Stream) -> Self {
        let d = trunk.rep_dim();
        let m = cfg.embed_dim;
        let proj = Linear::new(d, m, rng);
        let predictor = Mlp::new(m, &[cfg.predictor_hidden], m, rng);
        let mut w = Tensor::zeros(&[m, m]);
        xavier_uniform(w.data_mut(), m, m, rng);
        AtcHead {
            cfg: *cfg,
            momentum_trunk: trunk.clone(),
            momentum_proj: proj.clone(),
            proj,
            predictor,
            w_bilinear: Param::new(w),
            phi_a: Vec::new(),
            embed: Vec::new(),
            pred_out: Vec::new(),
            p: Vec::new(),
            phi_c: Vec::new(),
            c: Vec::new(),
            pw: Vec::new(),
            logits: Vec::new(),
            dlogits: Vec::new(),
            cw: Vec::new(),
            dp: Vec::new(),
            dl_c: Vec::new(),
            de: Vec::new(),
            dphi: Vec::new(),
            momentum_scratch: Vec::new(),
        }
    }

    /// Full ATC step: forwards the online trunk on the augmented anchors,
    /// computes InfoNCE against momentum-encoded positives, and backprops
    /// through predictor, projection, and trunk (weighted).
    pub fn compute(
        &mut self,
        trunk: &mut Trunk<S>,
        aug_anchor: &[S],
        aug_positive: &[S],
        b: usize,
        weight: f64,
    ) -> S {
        let m = self.cfg.embed_dim;
        trunk.forward(aug_anchor, b, &mut self.phi_a);
        self.proj.forward(&self.phi_a, b, &mut self.embed);
        self.predictor.forward(&self.embed, b, &mut self.pred_out);
        self.p.clear();
        self.p
            .extend(self.pred_out.iter().zip(&self.embed).map(|(&h, &e)| h + e));

        self.momentum_trunk.forward(aug_positive, b, &mut self.phi_c);
        self.momentum_proj.forward_eval(&self.phi_c, b, &mut self.c);

        self.pw.clear();
        self.pw.resize(b * m, S::ZERO);
        matmul(b, m, m, &self.p, self.w_bilinear.value.data(), &mut self.pw);
        self.logits.clear();
        self.logits.resize(b * b, S::ZERO);
        matmul_nt(b, m, b, &self.pw, &self.c, &mut self.logits);

        let loss = infonce_from_logits(&self.logits, b, &mut self.dlogits);
        let w = S::from_f64(weight);
        self.dlogits.iter_mut().for_each(|v| *v *= w);

        // dW += p^T (dlogits c); dp = dlogits (c W^T)
        self.dl_c.clear();
        self.dl_c.resize(b * m, S::ZERO);
        matmul(b, b, m, &self.dlogits, &self.c, &mut self.dl_c);
        matmul_tn_acc(m, b, m, &self.p, &self.dl_c, self.w_bilinear.grad.data_mut());
        self.cw.clear();
        self.cw.resize(b * m, S::ZERO);
        matmul_nt(b, m, m, &self.c, self.w_bilinear.value.data(), &mut self.cw);
        self.dp.clear();
        self.dp.resize(b * m, S::ZERO);
        matmul(b, b, m, &self.dlogits, &self.cw, &mut self.dp);

        // residual: p = predictor(e) + e
        self.predictor.backward(&self.dp, Some(&mut self.de));
        for (d, &extra) in self.de.iter_mut().zip(&self.dp) {
            *d += extra;
        }
        self.proj.backward(&self.de, Some(&mut self.dphi));
        trunk.backward(&self.dphi);
        loss
    }

    /// Momentum blend after the optimizer step: theta_mom <- (1-tau) theta_mom + tau theta.
    pub fn momentum_step(&mut self, trunk: &mut Trunk<S>) {
        let tau = self.cfg.tau;
        momentum_update(&mut self.momentum_trunk, trunk, tau, &mut self.momentum_scratch);
        let AtcHead {
            momentum_proj,
            proj,
            momentum_scratch,
            ..
        } = self;
        momentum_update(momentum_proj, proj, tau, momentum_scratch);
    }

    /// Max absolute difference between momentum and online trunk parameters
    /// (diagnostics/tests).
    pub fn momentum_gap(&mut self, trunk: &mut Trunk<S>) -> f64 {
        let mut online = Vec::new();
        trunk.visit_params(&mut |_, p| online.extend(p.value.data().iter().map(|v| v.to_f64())));
        let mut gap: f64 = 0.0;
        let mut off = 0;
        self.momentum_trunk.visit_params(&mut |_, p| {
            for v in p.value.data() {
                gap = gap.max((v.to_f64() - online[off]).abs());
                off += 1;
            }
        });
        gap
    }
}

impl<S: Scalar> Parameterized<S> for AtcHead<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        visit_prefixed("aux.atc.proj", &mut self.proj, f);
        visit_prefixed("aux.atc.predictor", &mut self.predictor, f);
        f("aux.atc.w", &mut self.w_bilinear);
    }
}
