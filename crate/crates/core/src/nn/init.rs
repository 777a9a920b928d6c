//! DCGAN-style parameter initialisation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Module;
use crate::Scalar;

pub const WEIGHT_STD: f64 = 0.02;

/// Convolution weights ~ N(0, 0.02), normalisation scales ~ N(1, 0.02),
/// normalisation offsets = 0. Deterministic in `seed`.
pub fn init_parameters<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let around_zero = Normal::new(0.0, WEIGHT_STD).unwrap();
    let around_one = Normal::new(1.0, WEIGHT_STD).unwrap();
    module.visit_params("", &mut |name, p| {
        let is_norm = name.split('.').any(|part| part == "norm");
        if is_norm && name.ends_with(".bias") {
            p.value.fill(T::zero());
        } else {
            let dist = if is_norm { around_one } else { around_zero };
            p.value.mapv_inplace(|_| T::lit(dist.sample(&mut rng)));
        }
        p.zero_grad();
    });
}
