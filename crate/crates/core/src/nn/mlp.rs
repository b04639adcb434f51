use crate::num::Scalar;
use crate::rng::Stream;
use crate::tensor::{Param, Parameterized};

use super::activation::{relu_backward, relu_forward};
use super::linear::Linear;

/// Plain MLP with ReLU hidden layers and a linear output, used by the
/// auxiliary heads.
#[derive(Debug, Clone)]
pub struct Mlp<S: Scalar> {
    pub in_dim: usize,
    pub out_dim: usize,
    layers: Vec<Linear<S>>,
    pre: Vec<Vec<S>>,
    post: Vec<Vec<S>>,
    d_a: Vec<S>,
    d_b: Vec<S>,
}

impl<S: Scalar> Mlp<S> {
    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize, rng: &mut Stream) -> Self {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let layers: Vec<Linear<S>> = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        let n_hidden = hidden.len();
        Mlp {
            in_dim,
            out_dim,
            layers,
            pre: vec![Vec::new(); n_hidden],
            post: vec![Vec::new(); n_hidden],
            d_a: Vec::new(),
            d_b: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &[S], n: usize, out: &mut Vec<S>) {
        let n_hidden = self.layers.len() - 1;
        if n_hidden == 0 {
            self.layers[0].forward(x, n, out);
            return;
        }
        let Mlp {
            layers, pre, post, ..
        } = self;
        layers[0].forward(x, n, &mut pre[0]);
        relu_forward(&pre[0], &mut post[0]);
        for i in 1..n_hidden {
            let (done, rest) = post.split_at_mut(i);
            layers[i].forward(&done[i - 1], n, &mut pre[i]);
            relu_forward(&pre[i], &mut rest[0]);
        }
        layers[n_hidden].forward(&post[n_hidden - 1], n, out);
    }

    pub fn forward_eval(&self, x: &[S], n: usize, out: &mut Vec<S>) {
        let n_hidden = self.layers.len() - 1;
        if n_hidden == 0 {
            self.layers[0].forward_eval(x, n, out);
            return;
        }
        let mut cur: Vec<S> = Vec::new();
        let mut tmp: Vec<S> = Vec::new();
        self.layers[0].forward_eval(x, n, &mut tmp);
        relu_forward(&tmp, &mut cur);
        for i in 1..n_hidden {
            self.layers[i].forward_eval(&cur, n, &mut tmp);
            relu_forward(&tmp, &mut cur);
        }
        self.layers[n_hidden].forward_eval(&cur, n, out);
    }

    pub fn backward(&mut self, dout: &[S], dx: Option<&mut Vec<S>>) {
        let n_hidden = self.layers.len() - 1;
        if n_hidden == 0 {
            self.layers[0].backward(dout, dx);
            return;
        }
        let mut d_post = std::mem::take(&mut self.d_a);
        let mut d_pre = std::mem::take(&mut self.d_b);
        self.layers[n_hidden].backward(dout, Some(&mut d_post));
        for i in (1..n_hidden).rev() {
            relu_backward(&self.pre[i], &d_post, &mut d_pre);
            self.layers[i].backward(&d_pre, Some(&mut d_post));
        }
        relu_backward(&self.pre[0], &d_post, &mut d_pre);
        self.layers[0].backward(&d_pre, dx);
        self.d_a = d_post;
        self.d_b = d_pre;
    }
}

impl<S: Scalar> Parameterized<S> for Mlp<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let w = format!("l{i}.w");
            let b = format!("l{i}.b");
            f(&w, &mut layer.w);
            f(&b, &mut layer.b);
        }
    }
}

/// Re-exposes an inner module's parameters under a dotted prefix.
pub fn visit_prefixed<S: Scalar>(
    prefix: &str,
    inner: &mut dyn Parameterized<S>,
    f: &mut dyn FnMut(&str, &mut Param<S>),
) {
    inner.visit_params(&mut |name, p| {
        let full = format!("{prefix}.{name}");
        f(&full, p);
    });
}
