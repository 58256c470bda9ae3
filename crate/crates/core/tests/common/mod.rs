#![allow(dead_code)]

pub mod formats;
pub mod suite;

use rand::seq::SliceRandom;
use rand::Rng;
use topotensor::Graph;

/// Erdős–Rényi style graph with `n` nodes and edge probability `p`.
pub fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> Graph {
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                pairs.push((a, b));
            }
        }
    }
    Graph::from_edges(n, &pairs).unwrap()
}

/// Distinct values in `[0, 1]` in random order.
pub fn injective_values(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random::<f64>() * 0.9) / n as f64).collect();
    v.shuffle(rng);
    v
}

/// Uniform random spanning tree on `n` nodes (random attachment).
pub fn random_tree(rng: &mut impl Rng, n: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (1..n).map(|i| (order[rng.random_range(0..i)], order[i])).collect()
}

pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
