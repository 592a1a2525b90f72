use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::ComplexImage;

pub fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexImage::from_fn(h, w, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

/// `‖a − b‖ / ‖b‖`, or the absolute error when `b` is zero.
pub fn rel_err(a: &ComplexImage, b: &ComplexImage) -> f64 {
    let d = a.sub(b).norm();
    let n = b.norm();
    if n == 0.0 {
        d
    } else {
        d / n
    }
}
