#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use s6_dynamics::{Matrix, S6Params, TokenSequence};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * normal(rng)).collect();
    Matrix::from_row_major(rows, cols, data).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, d: usize, n: usize) -> S6Params {
    let a = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    S6Params::new(
        a,
        normal_matrix(rng, d, d, 1.0),
        normal_matrix(rng, n, d, 1.0),
        normal_matrix(rng, n, d, 1.0),
    )
    .unwrap()
}

pub fn random_tokens(rng: &mut ChaCha8Rng, d: usize, l: usize) -> TokenSequence {
    let rows: Vec<Vec<f64>> = (0..d).map(|_| (0..l).map(|_| normal(rng)).collect()).collect();
    TokenSequence::from_channels(&rows).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
