//! Weight initialization.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{arg_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Number of inputs feeding one output unit.
///
/// OIHW kernels: `I*KH*KW`. Dense weights are stored `in x out`, so the fan-in
/// of a 2-d shape is its first dimension.
pub fn fan_in(shape: &[usize]) -> Result<usize> {
    let fan = match shape {
        [] => return Err(arg_err!("msra_init", "empty shape")),
        [n] => *n,
        [f, _] => *f,
        [_, rest @ ..] => rest.iter().product(),
    };
    if fan == 0 {
        return Err(arg_err!("msra_init", "zero fan-in for shape {:?}", shape));
    }
    Ok(fan)
}

/// He/MSRA normal initialization for leaky-ReLU networks, multiplied by
/// `scale`: samples `N(0, 2 / ((1 + leak^2) * fan_in))`.
pub fn msra_init<T: Real>(shape: &[usize], leak: f64, scale: f64, seed: u64) -> Result<Tensor<T>> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(arg_err!("msra_init", "scale {} outside (0, 1]", scale));
    }
    let fan = fan_in(shape)?;
    let std = Float::sqrt(2.0 / ((1.0 + leak * leak) * fan as f64)) * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::from_f64(z * std)
    }))
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
