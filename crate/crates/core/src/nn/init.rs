use crate::num::Scalar;
use crate::rng::Stream;

/// Xavier/Glorot uniform initialization: U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
pub fn xavier_uniform<S: Scalar>(data: &mut [S], fan_in: usize, fan_out: usize, rng: &mut Stream) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in data.iter_mut() {
        *v = S::from_f64(rng.uniform_in(-a, a));
    }
}
