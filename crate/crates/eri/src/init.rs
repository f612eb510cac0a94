//! Weight initialization helpers.

use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Xavier/Glorot uniform: U(−a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// N(0, std²) via Box-Muller.
pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| std * sample_gauss(rng)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

pub fn sample_gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u clamped away from 0.
    let u: f64 = rng.gen::<f64>().max(1e-12);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}
