mod common;

use common::{random_graph, random_permutation};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topotensor::filtration::{compute_filtration, min_max_normalize, FiltrationKind};
use topotensor::Graph;

/// Hop distances by Floyd–Warshall.
fn distances(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.node_count();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(u, v, _) in g.edges() {
        d[u][v] = 1.0;
        d[v][u] = 1.0;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Number of shortest paths between every pair, by dynamic programming over distance layers.
fn path_counts(g: &Graph, d: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = g.node_count();
    let adj = g.neighbors();
    let mut sigma = vec![vec![0.0; n]; n];
    for s in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&v| d[s][v].is_finite()).collect();
        order.sort_by(|a, b| d[s][*a].total_cmp(&d[s][*b]));
        sigma[s][s] = 1.0;
        for &v in order.iter().skip(1) {
            sigma[s][v] = adj[v].iter().filter(|&&u| d[s][u] + 1.0 == d[s][v]).map(|&u| sigma[s][u]).sum();
        }
    }
    sigma
}

/// Betweenness from the pair-dependency definition.
fn betweenness_oracle(g: &Graph) -> Vec<f64> {
    let n = g.node_count();
    let d = distances(g);
    let sigma = path_counts(g, &d);
    (0..n)
        .map(|v| {
            let mut total = 0.0;
            for s in 0..n {
                for t in s + 1..n {
                    if s == v || t == v || !d[s][t].is_finite() {
                        continue;
                    }
                    if d[s][v] + d[v][t] == d[s][t] {
                        total += sigma[s][v] * sigma[v][t] / sigma[s][t];
                    }
                }
            }
            total
        })
        .collect()
}

fn closeness_oracle(g: &Graph) -> Vec<f64> {
    distances(g)
        .iter()
        .map(|row| row.iter().filter(|x| x.is_finite() && **x > 0.0).map(|x| 1.0 / x).sum())
        .collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{what}: {a:?} vs {b:?}");
    }
}

#[test]
fn betweenness_and_closeness_match_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..200 {
        let n = 2 + trial % 12;
        let g = random_graph(&mut rng, n, 0.3);
        let bc = compute_filtration(&g, FiltrationKind::Betweenness).values;
        assert_close(&bc, &min_max_normalize(&betweenness_oracle(&g)), 1e-9, "betweenness");
        let cc = compute_filtration(&g, FiltrationKind::Closeness).values;
        assert_close(&cc, &min_max_normalize(&closeness_oracle(&g)), 1e-9, "closeness");
    }
}

#[test]
fn eigenvector_matches_dense_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut compared = 0;
    for _ in 0..100 {
        let g = random_graph(&mut rng, 12, 0.35);
        if g.component_count() != 1 {
            continue;
        }
        let n = g.node_count();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for &(u, v, w) in g.edges() {
            a[(u, v)] = w;
            a[(v, u)] = w;
        }
        let eig = SymmetricEigen::new(a);
        let top = eig.eigenvalues.imax();
        let vec: Vec<f64> = eig.eigenvectors.column(top).iter().map(|x| x.abs()).collect();
        let got = compute_filtration(&g, FiltrationKind::Eigenvector).values;
        assert_close(&got, &min_max_normalize(&vec), 1e-6, "eigenvector");
        compared += 1;
    }
    assert!(compared > 50);
}

#[test]
fn relabeling_permutes_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let g = random_graph(&mut rng, 10, 0.3);
        let perm = random_permutation(&mut rng, 10);
        let h = g.permuted(&perm).unwrap();
        for kind in FiltrationKind::ALL {
            let a = compute_filtration(&g, kind).values;
            let b = compute_filtration(&h, kind).values;
            let tol = if kind == FiltrationKind::Degree { 0.0 } else { 1e-9 };
            for i in 0..10 {
                assert!((a[i] - b[perm[i]]).abs() <= tol, "{kind}");
            }
        }
    }
}

#[test]
fn values_lie_in_unit_interval_with_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..100 {
        let g = random_graph(&mut rng, 9, 0.4);
        for kind in FiltrationKind::ALL {
            let v = compute_filtration(&g, kind).values;
            assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            let constant = v.iter().all(|&x| x == 0.5);
            let spans = v.contains(&0.0) && v.contains(&1.0);
            assert!(constant || spans, "{kind}: {v:?}");
        }
    }
}
