//! Finite-difference gradient checking utilities, shared by the layer tests
//! and the acceptance suite. Checks run at f64 against central differences;
//! sample points are kept away from ReLU/FTA kinks by the caller.

use crate::num::Scalar;
use crate::rng::Stream;
use crate::tensor::Parameterized;

/// Central-difference step for f64 checks.
pub const FD_STEP: f64 = 1e-6;

/// Relative tolerance for all gradient checks.
pub const FD_TOL: f64 = 1e-4;

/// Relative error with an absolute floor so near-zero pairs compare cleanly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Result of one checked coordinate.
#[derive(Debug, Clone)]
pub struct CheckPoint {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compares analytic parameter gradients of `module` against central finite
/// differences of `loss_fn` at `n_points` randomly chosen parameter
/// coordinates, resampling coordinates whose ±h interval straddles an
/// activation kink (detected by disagreeing one-sided differences).
/// `loss_fn` must evaluate the full forward pass from scratch.
pub fn check_param_grads<M, F>(
    module: &mut M,
    mut loss_fn: F,
    analytic_grads: &[(String, Vec<f64>)],
    n_points: usize,
    rng: &mut Stream,
) -> Vec<CheckPoint>
where
    M: Parameterized<f64>,
    F: FnMut(&mut M) -> f64,
{
    // Collect (name, len) to sample coordinates.
    let mut layout: Vec<(String, usize)> = Vec::new();
    module.visit_params(&mut |name, p| layout.push((name.to_string(), p.value.len())));
    let total: usize = layout.iter().map(|(_, l)| l).sum();
    assert!(total > 0);
    let mid = loss_fn(module);
    let mut results = Vec::with_capacity(n_points);
    let mut attempts = 0;
    while results.len() < n_points {
        attempts += 1;
        assert!(
            attempts < n_points * 20,
            "too many kink rejections; check the loss for smooth regions"
        );
        let flat = rng.below(total);
        let mut acc = 0;
        let (name, index) = layout
            .iter()
            .find_map(|(n, l)| {
                if flat < acc + l {
                    Some((n.clone(), flat - acc))
                } else {
                    acc += l;
                    None
                }
            })
            .unwrap();
        let analytic = analytic_grads
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| g[index])
            .unwrap_or_else(|| panic!("no analytic grad recorded for {name}"));
        // Central differences lose the signal when |grad| * h falls near the
        // f64 roundoff of the loss value itself; grow h per coordinate so the
        // difference stays ~1e5 ulps above the noise floor.
        let noise = f64::EPSILON * mid.abs().max(1.0);
        let h = FD_STEP
            .max(1e5 * noise / analytic.abs().max(1e-12))
            .min(1e-3);
        let perturb = |module: &mut M, delta: f64| {
            module.visit_params(&mut |n, p| {
                if n == name {
                    p.value.data_mut()[index] += delta;
                }
            });
        };
        perturb(module, h);
        let up = loss_fn(module);
        perturb(module, -2.0 * h);
        let down = loss_fn(module);
        perturb(module, h);
        // One-sided slopes disagree near a kink (piecewise-linear break
        // inside the ±h window); resample such coordinates.
        let right = (up - mid) / h;
        let left = (mid - down) / h;
        let bend = (right - left).abs();
        if bend > 0.3 * FD_TOL * right.abs().max(left.abs()) + 20.0 * noise / h {
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        results.push(CheckPoint {
            rel_err: rel_err(analytic, numeric),
            name,
            index,
            analytic,
            numeric,
        });
    }
    results
}

/// Extracts a copy of every parameter gradient, keyed by name.
pub fn snapshot_grads<S: Scalar>(module: &mut dyn Parameterized<S>) -> Vec<(String, Vec<f64>)> {
    let mut grads = Vec::new();
    module.visit_params(&mut |name, p| {
        grads.push((name.to_string(), p.grad.map_to_f64()));
    });
    grads
}

/// Worst relative error in a batch of check points.
pub fn worst(results: &[CheckPoint]) -> &CheckPoint {
    results
        .iter()
        .max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).unwrap())
        .unwrap()
}
