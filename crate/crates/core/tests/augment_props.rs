mod common;

use common::random_graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topotensor::augment::{Augmentation, AugmentationKind};
use topotensor::tensor::DenseTensor;
use topotensor::Graph;

fn random_featured_graph(rng: &mut ChaCha8Rng) -> Graph {
    let n = rng.random_range(1..=25);
    let p = rng.random::<f64>() * 0.5;
    let g = random_graph(rng, n, p);
    let features = DenseTensor::from_fn(&[n, 3], |i| (i[0] * 3 + i[1]) as f64 + 1.0);
    g.with_features(features).unwrap()
}

#[test]
fn thousand_random_triples_stay_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..1000 {
        let g = random_featured_graph(&mut rng);
        let kind = AugmentationKind::ALL[trial % AugmentationKind::ALL.len()];
        let ratio = 0.05 + 0.9 * rng.random::<f64>();
        let aug = Augmentation::new(kind, ratio).unwrap();
        let seed: u64 = rng.random();
        let (h, map) = aug.apply_with_map(&g, &mut ChaCha8Rng::seed_from_u64(seed));
        h.validate().unwrap();
        assert!(h.node_count() >= 1);
        assert_eq!(map.len(), h.node_count());
        assert_eq!(h.feature_dim(), g.feature_dim());

        let again = aug.apply(&g, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(again, h, "same seed must give the same graph");

        let n = g.node_count();
        let m = g.edge_count();
        match kind {
            AugmentationKind::NodeDrop => {
                let expected = n - (ratio * n as f64).floor() as usize;
                assert_eq!(h.node_count(), expected.max(1));
                for &(u, v, _) in h.edges() {
                    assert!(g.has_edge(map[u], map[v]));
                }
            }
            AugmentationKind::EdgePert => {
                assert_eq!(h.edge_count(), m);
                assert_eq!(h.node_count(), n);
            }
            AugmentationKind::Subgraph => {
                let target = ((1.0 - ratio) * n as f64).ceil().max(1.0) as usize;
                assert_eq!(h.node_count(), target);
                let start_component_large = g.component_count() == 1;
                if start_component_large {
                    assert_eq!(h.component_count(), 1);
                }
            }
            AugmentationKind::AttrMask => {
                let zeroed = (0..n).filter(|&i| h.features().row(i).iter().all(|&x| x == 0.0)).count();
                assert_eq!(zeroed, (ratio * n as f64).floor() as usize);
                assert_eq!(h.edges(), g.edges());
            }
            AugmentationKind::Identical => assert_eq!(h, g),
        }
    }
}
