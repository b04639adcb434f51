use crate::num::{matmul, matmul_nt, matmul_tn_acc, Scalar};
use crate::rng::Stream;
use crate::tensor::{Param, Parameterized, Tensor};

use super::init::xavier_uniform;

/// Fully connected layer; weights stored [in_dim, out_dim].
#[derive(Debug, Clone)]
pub struct Linear<S: Scalar> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Param<S>,
    pub b: Param<S>,
    input_cache: Vec<S>,
    cached_n: usize,
}

impl<S: Scalar> Linear<S> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Stream) -> Self {
        let mut w = Tensor::zeros(&[in_dim, out_dim]);
        xavier_uniform(w.data_mut(), in_dim, out_dim, rng);
        Linear {
            in_dim,
            out_dim,
            w: Param::new(w),
            b: Param::new(Tensor::zeros(&[out_dim])),
            input_cache: Vec::new(),
            cached_n: 0,
        }
    }

    pub fn forward(&mut self, x: &[S], n: usize, out: &mut Vec<S>) {
        debug_assert_eq!(x.len(), n * self.in_dim);
        self.input_cache.clear();
        self.input_cache.extend_from_slice(x);
        self.cached_n = n;
        out.clear();
        out.resize(n * self.out_dim, S::ZERO);
        matmul(n, self.in_dim, self.out_dim, x, self.w.value.data(), out);
        for row in out.chunks_exact_mut(self.out_dim) {
            for (o, &bv) in row.iter_mut().zip(self.b.value.data()) {
                *o += bv;
            }
        }
    }

    /// Forward without caching, for evaluation-only passes.
    pub fn forward_eval(&self, x: &[S], n: usize, out: &mut Vec<S>) {
        debug_assert_eq!(x.len(), n * self.in_dim);
        out.clear();
        out.resize(n * self.out_dim, S::ZERO);
        matmul(n, self.in_dim, self.out_dim, x, self.w.value.data(), out);
        for row in out.chunks_exact_mut(self.out_dim) {
            for (o, &bv) in row.iter_mut().zip(self.b.value.data()) {
                *o += bv;
            }
        }
    }

    pub fn backward(&mut self, dout: &[S], dx: Option<&mut Vec<S>>) {
        let n = self.cached_n;
        debug_assert_eq!(dout.len(), n * self.out_dim);
        matmul_tn_acc(
            self.in_dim,
            n,
            self.out_dim,
            &self.input_cache,
            dout,
            self.w.grad.data_mut(),
        );
        let bg = self.b.grad.data_mut();
        for row in dout.chunks_exact(self.out_dim) {
            for (g, &d) in bg.iter_mut().zip(row) {
                *g += d;
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(n * self.in_dim, S::ZERO);
            matmul_nt(n, self.out_dim, self.in_dim, dout, self.w.value.data(), dx);
        }
    }
}

impl<S: Scalar> Parameterized<S> for Linear<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    #[test]
    fn forward_matches_hand_computation() {
        let mut rng = Seed(0).stream();
        let mut lin = Linear::<f64>::new(2, 2, &mut rng);
        lin.w.value.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        lin.b.value.data_mut().copy_from_slice(&[0.5, -0.5]);
        let mut out = Vec::new();
        lin.forward(&[1.0, 1.0, 2.0, 0.0], 2, &mut out);
        assert_eq!(out, vec![4.5, 5.5, 2.5, 3.5]);
    }

    #[test]
    fn backward_accumulates_grads() {
        let mut rng = Seed(0).stream();
        let mut lin = Linear::<f64>::new(2, 1, &mut rng);
        lin.w.value.data_mut().copy_from_slice(&[1.0, 1.0]);
        let mut out = Vec::new();
        lin.forward(&[3.0, 4.0], 1, &mut out);
        let mut dx = Vec::new();
        lin.backward(&[2.0], Some(&mut dx));
        assert_eq!(lin.w.grad.data(), &[6.0, 8.0]);
        assert_eq!(lin.b.grad.data(), &[2.0]);
        assert_eq!(dx, vec![2.0, 2.0]);
        // second backward accumulates
        lin.backward(&[1.0], None);
        assert_eq!(lin.w.grad.data(), &[9.0, 12.0]);
    }
}
