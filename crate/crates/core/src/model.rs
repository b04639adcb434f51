//! The shared network: a two-conv + linear representation trunk with a ReLU
//! or FTA representation layer, and a value head (two hidden layers of 64,
//! or a single linear map) on top of the representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    fta_backward, fta_forward, relu_backward, relu_forward, Conv2d, FtaConfig, Linear,
};
use crate::num::Scalar;
use crate::rng::Stream;
use crate::tensor::{Param, Parameterized};

/// Representation-layer activation. Fixes the representation width: 32 for
/// relu32, 640 for relu640, and k x 32 for FTA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu32")]
    Relu32,
    #[serde(rename = "relu640")]
    Relu640,
    #[serde(rename = "fta")]
    Fta(FtaConfig),
}

impl Activation {
    /// Width of the linear layer feeding the activation.
    pub fn pre_dim(&self) -> usize {
        match self {
            Activation::Relu32 => 32,
            Activation::Relu640 => 640,
            Activation::Fta(_) => 32,
        }
    }

    /// Width of the representation layer (the feature vector).
    pub fn rep_dim(&self) -> usize {
        match self {
            Activation::Relu32 => 32,
            Activation::Relu640 => 640,
            Activation::Fta(cfg) => cfg.k * 32,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Activation::Relu32 => "relu32",
            Activation::Relu640 => "relu640",
            Activation::Fta(_) => "fta",
        }
    }
}

/// Representation function: conv(4,1,1,32) -> ReLU -> conv(4,2,2,16) -> ReLU
/// -> flatten -> linear -> activation.
#[derive(Debug, Clone)]
pub struct Trunk<S: Scalar> {
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
    pub fc: Linear<S>,
    pub activation: Activation,
    pub obs_dim: usize,
    // forward caches
    c1_pre: Vec<S>,
    c1_out: Vec<S>,
    c2_pre: Vec<S>,
    c2_out: Vec<S>,
    fc_pre: Vec<S>,
    // backward scratch
    d_buf_a: Vec<S>,
    d_buf_b: Vec<S>,
    cached_n: usize,
}

impl<S: Scalar> Trunk<S> {
    pub fn new(obs_h: usize, obs_w: usize, activation: Activation, rng: &mut Stream) -> Self {
        let mut conv1 = Conv2d::new(obs_h, obs_w, 3, 32, 4, 1, 1, rng);
        conv1.grad_input = false; // nothing upstream of the first layer
        let conv2 = Conv2d::new(conv1.out_h, conv1.out_w, 32, 16, 4, 2, 2, rng);
        let flat = conv2.out_len();
        let fc = Linear::new(flat, activation.pre_dim(), rng);
        Trunk {
            conv1,
            conv2,
            fc,
            activation,
            obs_dim: obs_h * obs_w * 3,
            c1_pre: Vec::new(),
            c1_out: Vec::new(),
            c2_pre: Vec::new(),
            c2_out: Vec::new(),
            fc_pre: Vec::new(),
            d_buf_a: Vec::new(),
            d_buf_b: Vec::new(),
            cached_n: 0,
        }
    }

    pub fn rep_dim(&self) -> usize {
        self.activation.rep_dim()
    }

    /// Forward over `n` flattened observations, caching for backward.
    pub fn forward(&mut self, obs: &[S], n: usize, phi: &mut Vec<S>) {
        debug_assert_eq!(obs.len(), n * self.obs_dim);
        self.cached_n = n;
        self.conv1.forward(obs, n, &mut self.c1_pre);
        relu_forward(&self.c1_pre, &mut self.c1_out);
        self.conv2.forward(&self.c1_out, n, &mut self.c2_pre);
        relu_forward(&self.c2_pre, &mut self.c2_out);
        self.fc.forward(&self.c2_out, n, &mut self.fc_pre);
        match &self.activation {
            Activation::Relu32 | Activation::Relu640 => relu_forward(&self.fc_pre, phi),
            Activation::Fta(cfg) => fta_forward(&self.fc_pre, cfg, phi),
        }
    }

    /// Accumulates parameter gradients given dL/dphi for the cached batch.
    pub fn backward(&mut self, dphi: &[S]) {
        debug_assert_eq!(dphi.len(), self.cached_n * self.rep_dim());
        match &self.activation {
            Activation::Relu32 | Activation::Relu640 => {
                relu_backward(&self.fc_pre, dphi, &mut self.d_buf_a)
            }
            Activation::Fta(cfg) => fta_backward(&self.fc_pre, cfg, dphi, &mut self.d_buf_a),
        }
        self.fc.backward(&self.d_buf_a, Some(&mut self.d_buf_b));
        relu_backward(&self.c2_pre, &self.d_buf_b, &mut self.d_buf_a);
        self.conv2.backward(&self.d_buf_a, Some(&mut self.d_buf_b));
        relu_backward(&self.c1_pre, &self.d_buf_b, &mut self.d_buf_a);
        self.conv1.backward(&self.d_buf_a, None);
    }
}

impl<S: Scalar> Parameterized<S> for Trunk<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f("trunk.conv1.w", &mut self.conv1.w);
        f("trunk.conv1.b", &mut self.conv1.b);
        f("trunk.conv2.w", &mut self.conv2.w);
        f("trunk.conv2.b", &mut self.conv2.b);
        f("trunk.fc.w", &mut self.fc.w);
        f("trunk.fc.b", &mut self.fc.b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueHeadKind {
    Nonlinear,
    Linear,
}

/// Action-value head on the representation: 64x64 MLP or a single linear map.
#[derive(Debug, Clone)]
pub struct ValueHead<S: Scalar> {
    pub kind: ValueHeadKind,
    pub rep_dim: usize,
    pub n_actions: usize,
    layers: Vec<Linear<S>>,
    pre: Vec<Vec<S>>,
    post: Vec<Vec<S>>,
    d_a: Vec<S>,
    d_b: Vec<S>,
}

impl<S: Scalar> ValueHead<S> {
    pub fn new(rep_dim: usize, n_actions: usize, kind: ValueHeadKind, rng: &mut Stream) -> Self {
        let layers = match kind {
            ValueHeadKind::Nonlinear => vec![
                Linear::new(rep_dim, 64, rng),
                Linear::new(64, 64, rng),
                Linear::new(64, n_actions, rng),
            ],
            ValueHeadKind::Linear => vec![Linear::new(rep_dim, n_actions, rng)],
        };
        let n_hidden = layers.len() - 1;
        ValueHead {
            kind,
            rep_dim,
            n_actions,
            layers,
            pre: vec![Vec::new(); n_hidden],
            post: vec![Vec::new(); n_hidden],
            d_a: Vec::new(),
            d_b: Vec::new(),
        }
    }

    /// Number of learnable parameters.
    pub fn n_params(&mut self) -> usize {
        self.param_count()
    }

    pub fn forward(&mut self, phi: &[S], n: usize, q: &mut Vec<S>) {
        let n_hidden = self.layers.len() - 1;
        if n_hidden == 0 {
            self.layers[0].forward(phi, n, q);
            return;
        }
        let ValueHead {
            layers, pre, post, ..
        } = self;
        layers[0].forward(phi, n, &mut pre[0]);
        relu_forward(&pre[0], &mut post[0]);
        for i in 1..n_hidden {
            let (done, rest) = post.split_at_mut(i);
            layers[i].forward(&done[i - 1], n, &mut pre[i]);
            relu_forward(&pre[i], &mut rest[0]);
        }
        layers[n_hidden].forward(&post[n_hidden - 1], n, q);
    }

    /// Evaluation-only forward (no caches touched).
    pub fn forward_eval(&self, phi: &[S], n: usize, q: &mut Vec<S>) {
        let n_hidden = self.layers.len() - 1;
        if n_hidden == 0 {
            self.layers[0].forward_eval(phi, n, q);
            return;
        }
        let mut cur: Vec<S> = Vec::new();
        let mut tmp: Vec<S> = Vec::new();
        self.layers[0].forward_eval(phi, n, &mut tmp);
        relu_forward(&tmp, &mut cur);
        for i in 1..n_hidden {
            self.layers[i].forward_eval(&cur, n, &mut tmp);
            relu_forward(&tmp, &mut cur);
        }
        self.layers[n_hidden].forward_eval(&cur, n, q);
    }

    /// Accumulates parameter gradients; writes dL/dphi into `dphi`.
    pub fn backward(&mut self, dq: &[S], dphi: Option<&mut Vec<S>>) {
        let n_hidden = self.layers.len() - 1;
        if n_hidden == 0 {
            self.layers[0].backward(dq, dphi);
            return;
        }
        let mut d_post = std::mem::take(&mut self.d_a);
        let mut d_pre = std::mem::take(&mut self.d_b);
        self.layers[n_hidden].backward(dq, Some(&mut d_post));
        for i in (1..n_hidden).rev() {
            relu_backward(&self.pre[i], &d_post, &mut d_pre);
            self.layers[i].backward(&d_pre, Some(&mut d_post));
        }
        relu_backward(&self.pre[0], &d_post, &mut d_pre);
        self.layers[0].backward(&d_pre, dphi);
        self.d_a = d_post;
        self.d_b = d_pre;
    }
}

impl<S: Scalar> Parameterized<S> for ValueHead<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            // Stable names independent of layer count changes per kind.
            let w = format!("value.l{i}.w");
            let b = format!("value.l{i}.b");
            f(&w, &mut layer.w);
            f(&b, &mut layer.b);
        }
    }
}

/// Full Q-network: representation trunk plus value head.
#[derive(Debug, Clone)]
pub struct QNetwork<S: Scalar> {
    pub trunk: Trunk<S>,
    pub value: ValueHead<S>,
}

impl<S: Scalar> QNetwork<S> {
    pub fn new(
        obs_h: usize,
        obs_w: usize,
        activation: Activation,
        value_kind: ValueHeadKind,
        n_actions: usize,
        init: crate::rng::Seed,
    ) -> Self {
        let mut trunk_rng = init.child("trunk").stream();
        let trunk = Trunk::new(obs_h, obs_w, activation, &mut trunk_rng);
        let mut value_rng = init.child("value").stream();
        let value = ValueHead::new(trunk.rep_dim(), n_actions, value_kind, &mut value_rng);
        QNetwork { trunk, value }
    }

    /// Q-values for a batch, training caches engaged.
    pub fn forward(&mut self, obs: &[S], n: usize, phi: &mut Vec<S>, q: &mut Vec<S>) {
        self.trunk.forward(obs, n, phi);
        self.value.forward(phi, n, q);
    }

    /// Q-values for a single observation without touching training caches.
    pub fn q_eval(&mut self, obs: &[S], phi: &mut Vec<S>, q: &mut Vec<S>) {
        // Trunk forward always caches; safe between learn steps.
        self.trunk.forward(obs, 1, phi);
        self.value.forward_eval(phi, 1, q);
    }
}

impl<S: Scalar> Parameterized<S> for QNetwork<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.trunk.visit_params(f);
        self.value.visit_params(f);
    }
}

/// Greedy argmax with ties broken by the lowest action index; NaN is a
/// numerical error.
pub fn argmax_q<S: Scalar>(q: &[S]) -> Result<usize> {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::numerical("NaN/Inf in action values"));
        }
        if v > q[best] {
            best = i;
        }
    }
    Ok(best)
}
