//! Vertex filtration functions, min-max normalized to `[0, 1]`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FiltrationKind {
    Degree,
    Betweenness,
    Closeness,
    Eigenvector,
}

impl FiltrationKind {
    pub const ALL: [FiltrationKind; 4] = [Self::Degree, Self::Betweenness, Self::Closeness, Self::Eigenvector];
}

impl FromStr for FiltrationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "degree" => Ok(Self::Degree),
            "betweenness" => Ok(Self::Betweenness),
            "closeness" => Ok(Self::Closeness),
            "eigenvector" => Ok(Self::Eigenvector),
            other => Err(Error::Config(format!("unknown filtration {other:?}"))),
        }
    }
}

impl fmt::Display for FiltrationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Degree => "degree",
            Self::Betweenness => "betweenness",
            Self::Closeness => "closeness",
            Self::Eigenvector => "eigenvector",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexFiltration {
    pub kind: FiltrationKind,
    pub values: Vec<f64>,
}

pub const EIGEN_TOLERANCE: f64 = 1e-8;
pub const EIGEN_MAX_ITER: usize = 1000;

pub fn compute_filtration(g: &Graph, kind: FiltrationKind) -> VertexFiltration {
    let raw = match kind {
        FiltrationKind::Degree => g.degrees().into_iter().map(|d| d as f64).collect(),
        FiltrationKind::Betweenness => betweenness(g),
        FiltrationKind::Closeness => harmonic_closeness(g),
        FiltrationKind::Eigenvector => eigenvector(g).unwrap_or_else(|| {
            log::warn!("eigenvector centrality did not converge; using degree");
            g.degrees().into_iter().map(|d| d as f64).collect()
        }),
    };
    VertexFiltration {
        kind,
        values: min_max_normalize(&raw),
    }
}

/// Scale to `[0, 1]`; a constant vector maps to all `0.5`.
pub fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.is_empty() || hi - lo <= 1e-9 * hi.abs().max(1.0) {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Hop distances from `s`; `usize::MAX` marks unreachable nodes.
fn bfs(adj: &[Vec<usize>], s: usize, order: &mut Vec<usize>, sigma: &mut [f64], dist: &mut [usize]) {
    dist.fill(usize::MAX);
    sigma.fill(0.0);
    order.clear();
    dist[s] = 0;
    sigma[s] = 1.0;
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
            }
        }
    }
}

/// Exact shortest-path betweenness (Brandes), hop distances.
pub fn betweenness(g: &Graph) -> Vec<f64> {
    let n = g.node_count();
    let adj = g.neighbors();
    let mut cb = vec![0.0; n];
    let (mut order, mut sigma, mut dist, mut delta) = (Vec::new(), vec![0.0; n], vec![0; n], vec![0.0; n]);
    for s in 0..n {
        bfs(&adj, s, &mut order, &mut sigma, &mut dist);
        delta.fill(0.0);
        for &w in order.iter().rev() {
            for &v in &adj[w] {
                if dist[v] != usize::MAX && dist[v] + 1 == dist[w] {
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
                }
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    cb.iter().map(|x| x / 2.0).collect()
}

/// Harmonic closeness: sum of `1/d(u, v)` over reachable `v != u`.
pub fn harmonic_closeness(g: &Graph) -> Vec<f64> {
    let n = g.node_count();
    let adj = g.neighbors();
    let (mut order, mut sigma, mut dist) = (Vec::new(), vec![0.0; n], vec![0; n]);
    (0..n)
        .map(|s| {
            bfs(&adj, s, &mut order, &mut sigma, &mut dist);
            dist.iter()
                .filter(|&&d| d != usize::MAX && d > 0)
                .map(|&d| 1.0 / d as f64)
                .sum()
        })
        .collect()
}

/// Principal eigenvector of the adjacency matrix by power iteration on `A + I`
/// (same eigenvectors, but bipartite graphs no longer oscillate). `None` if
/// the iteration does not converge.
pub fn eigenvector(g: &Graph) -> Option<Vec<f64>> {
    let n = g.node_count();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0; n];
    for _ in 0..EIGEN_MAX_ITER {
        next.copy_from_slice(&x);
        for &(u, v, w) in g.edges() {
            next[u] += w * x[v];
            next[v] += w * x[u];
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        next.iter_mut().for_each(|v| *v /= norm);
        let change = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if change < EIGEN_TOLERANCE {
            return Some(x);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_degree() {
        let g = Graph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let f = compute_filtration(&g, FiltrationKind::Degree);
        assert_eq!(f.values, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn path_betweenness() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(compute_filtration(&g, FiltrationKind::Betweenness).values, vec![0.0, 1.0, 0.0]);
        assert_eq!(betweenness(&g), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn harmonic_closeness_handles_disconnection() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(harmonic_closeness(&g), vec![1.5, 2.0, 1.5, 0.0]);
    }

    #[test]
    fn single_node_is_half() {
        let g = Graph::from_edges(1, &[]).unwrap();
        for kind in FiltrationKind::ALL {
            assert_eq!(compute_filtration(&g, kind).values, vec![0.5]);
        }
    }

    #[test]
    fn bipartite_eigenvector_converges() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let x = eigenvector(&g).unwrap();
        assert!((x[0] - x[3]).abs() < 1e-7 && x[1] > x[0]);
    }

    #[test]
    fn kind_round_trips_through_strings() {
        for kind in FiltrationKind::ALL {
            assert_eq!(kind.to_string().parse::<FiltrationKind>().unwrap(), kind);
        }
    }
}
