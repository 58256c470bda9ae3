//! Low-rank contraction against reconstruct-then-contract.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topotensor::tensor::{CpWeight, DenseTensor, LowRankWeight, TtWeight, TuckerWeight};

pub const TOLERANCE: f64 = 1e-9;

fn relative(a: &DenseTensor, b: &DenseTensor) -> f64 {
    let diff = a.sub(b).unwrap().norm();
    diff / b.norm().max(1e-300)
}

fn random_instance(format: usize, rng: &mut ChaCha8Rng) -> (LowRankWeight, DenseTensor) {
    let modes = rng.random_range(2..=4);
    let shape: Vec<usize> = (0..modes).map(|_| rng.random_range(2..=5)).collect();
    let w = match format {
        0 => LowRankWeight::Cp(CpWeight::random(&shape, rng.random_range(1..=4), rng)),
        1 => {
            let ranks: Vec<usize> = shape.iter().map(|&d| rng.random_range(1..=d)).collect();
            LowRankWeight::Tucker(TuckerWeight::random(&shape, &ranks, rng).unwrap())
        }
        _ => {
            let ranks: Vec<usize> = (0..modes - 1).map(|_| rng.random_range(1..=3)).collect();
            LowRankWeight::Tt(TtWeight::random(&shape, &ranks, rng).unwrap())
        }
    };
    // contract over all modes or all but the last
    let k = if rng.random::<bool>() { modes } else { modes - 1 };
    let h = DenseTensor::from_fn(&shape[..k], |_| rng.random_range(-1.0..1.0));
    (w, h)
}

/// Worst relative error over `count` random instances of CP (0), Tucker (1) or TT (2).
pub fn worst_error(format: usize, count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (w, h) = random_instance(format, &mut rng);
            let fast = w.inner_product(&h).unwrap();
            let dense = w.reconstruct().contract_leading(&h).unwrap();
            relative(&fast, &dense)
        })
        .fold(0.0, f64::max)
}
