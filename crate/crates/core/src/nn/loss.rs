use crate::num::Scalar;

/// Squared-error loss: sums over feature dimensions and averages over the
/// `n_rows` batch rows (the convention used by every head in this crate).
pub fn mse_loss<S: Scalar>(pred: &[S], target: &[S], n_rows: usize) -> S {
    debug_assert_eq!(pred.len(), target.len());
    debug_assert!(n_rows > 0);
    let mut acc = S::ZERO;
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        acc += d * d;
    }
    acc / S::from_f64(n_rows as f64)
}

/// Gradient of [`mse_loss`] w.r.t. `pred`: 2(p - t)/n_rows, written into `dpred`.
pub fn mse_grad<S: Scalar>(pred: &[S], target: &[S], n_rows: usize, dpred: &mut Vec<S>) {
    debug_assert_eq!(pred.len(), target.len());
    let scale = S::from_f64(2.0 / n_rows as f64);
    dpred.clear();
    dpred.extend(pred.iter().zip(target).map(|(&p, &t)| scale * (p - t)));
}
