use crate::num::Scalar;
use crate::tensor::{Param, Parameterized};

/// Adam optimizer over a parameterized module. One shared step counter;
/// per-parameter learning-rate overrides keyed by name support the ATC head,
/// which sweeps its own stepsize.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    /// Applies one update from accumulated gradients, then clears them.
    pub fn step<S: Scalar>(&mut self, module: &mut dyn Parameterized<S>) {
        self.step_with(module, |_| None)
    }

    pub fn step_with<S: Scalar>(
        &mut self,
        module: &mut dyn Parameterized<S>,
        lr_override: impl Fn(&str) -> Option<f64>,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one_m_b1 = S::from_f64(1.0 - self.beta1);
        let one_m_b2 = S::from_f64(1.0 - self.beta2);
        let eps = S::from_f64(self.eps);
        let base_lr = self.lr;
        module.visit_params(&mut |name, p: &mut Param<S>| {
            let lr = lr_override(name).unwrap_or(base_lr);
            let step1 = S::from_f64(lr / bc1);
            let inv_bc2 = 1.0 / bc2;
            let g = p.grad.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            let w = p.value.data_mut();
            for i in 0..g.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + one_m_b1 * gi;
                v[i] = b2 * v[i] + one_m_b2 * gi * gi;
                let vhat = v[i].to_f64() * inv_bc2;
                w[i] -= step1 * m[i] / (S::from_f64(vhat.sqrt()) + eps);
                g[i] = S::ZERO;
            }
        });
    }
}
