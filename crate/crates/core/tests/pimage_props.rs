use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topotensor::eph::{ExtendedPersistenceDiagram, PairClass, PersistencePoint};
use topotensor::filtration::FiltrationKind;
use topotensor::pimage::{build_epi_tensor, inject_noise, persistence_image, EpiConfig, EpiTensor};
use topotensor::tensor::DenseTensor;
use topotensor::Graph;

const CLASSES: [PairClass; 4] = [PairClass::Ordinary0, PairClass::Extended0, PairClass::Relative1, PairClass::Extended1];

fn diagram(points: &[(f64, f64, usize)]) -> ExtendedPersistenceDiagram {
    ExtendedPersistenceDiagram {
        points: points.iter().map(|&(b, d, c)| PersistencePoint::new(b, d, CLASSES[c])).collect(),
        filtration_kind: None,
    }
}

fn points() -> impl Strategy<Value = Vec<(f64, f64, usize)>> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0usize..4), 0..12)
}

proptest! {
    #[test]
    fn image_is_additive_over_union(a in points(), b in points(), dim in 0usize..2) {
        let union: Vec<_> = a.iter().chain(&b).copied().collect();
        let lhs = persistence_image(&diagram(&union), dim, 12, 0.07).unwrap();
        let rhs = persistence_image(&diagram(&a), dim, 12, 0.07).unwrap()
            .add(&persistence_image(&diagram(&b), dim, 12, 0.07).unwrap()).unwrap();
        let scale = lhs.max_abs().max(1.0);
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn entries_are_finite_and_non_negative(a in points(), dim in 0usize..2) {
        let img = persistence_image(&diagram(&a), dim, 9, 0.05).unwrap();
        prop_assert!(img.data().iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    /// Points whose doubled persistence stays at least three bandwidths away
    /// from the grid edge.
    #[test]
    fn doubling_persistence_does_not_lose_mass(a in prop::collection::vec((0.0..1.0f64, 0.0..0.35f64, 0usize..4), 1..8)) {
        let bw = 0.05;
        let base: Vec<_> = a.iter().map(|&(b, p, c)| (b, (b + p).min(1.0), c)).collect();
        let doubled: Vec<_> = base.iter().map(|&(b, d, c)| (b, (b + 2.0 * (d - b)).min(1.0), c)).collect();
        for dim in 0..2 {
            let m0 = persistence_image(&diagram(&base), dim, 50, bw).unwrap().sum();
            let m1 = persistence_image(&diagram(&doubled), dim, 50, bw).unwrap().sum();
            prop_assert!(m1 >= m0 - 1e-12, "{m1} < {m0}");
        }
    }
}

#[test]
fn noise_moments_over_three_seeds() {
    let t = EpiTensor { data: DenseTensor::filled(&[4, 2, 50, 50], 0.25) };
    for seed in [1u64, 2, 3] {
        let out = inject_noise(&t, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let diff: Vec<f64> = out.data.data().iter().zip(t.data.data()).map(|(a, b)| a - b).collect();
        let n = diff.len() as f64;
        let mean = diff.iter().sum::<f64>() / n;
        let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.02, "seed {seed}: mean {mean}");
        assert!((var - 1.0).abs() <= 0.05, "seed {seed}: variance {var}");
    }
}

#[test]
fn cycle_free_graph_without_branching_maxima_has_zero_dimension_one_images() {
    let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
    let cfg = EpiConfig { kinds: vec![FiltrationKind::Degree], resolution: 16, ..EpiConfig::default() };
    let t = build_epi_tensor(&g, &cfg).unwrap();
    assert_eq!(t.shape(), &[1, 2, 16, 16]);
    let dim1 = t.data.index_first(0).index_first(1);
    assert_eq!(dim1.max_abs(), 0.0);
}

#[test]
fn build_is_deterministic() {
    let g = Graph::from_edges(6, &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)]).unwrap();
    let cfg = EpiConfig { resolution: 12, ..EpiConfig::default() };
    assert_eq!(build_epi_tensor(&g, &cfg).unwrap(), build_epi_tensor(&g, &cfg).unwrap());
    let t = build_epi_tensor(&g, &cfg).unwrap();
    assert!(t.data.index_first(0).index_first(1).max_abs() > 0.0, "two cycles give dimension-1 mass");
}
