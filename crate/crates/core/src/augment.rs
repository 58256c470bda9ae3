//! Stochastic graph augmentations for the two contrastive views.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

pub const DEFAULT_RATIO: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentationKind {
    NodeDrop,
    EdgePert,
    Subgraph,
    AttrMask,
    Identical,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 5] = [
        Self::NodeDrop,
        Self::EdgePert,
        Self::Subgraph,
        Self::AttrMask,
        Self::Identical,
    ];
}

impl FromStr for AugmentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "nodedrop" => Ok(Self::NodeDrop),
            "edgepert" => Ok(Self::EdgePert),
            "subgraph" => Ok(Self::Subgraph),
            "attrmask" => Ok(Self::AttrMask),
            "identical" | "identity" | "none" => Ok(Self::Identical),
            other => Err(Error::Config(format!("unknown augmentation {other:?}"))),
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NodeDrop => "NodeDrop",
            Self::EdgePert => "EdgePert",
            Self::Subgraph => "Subgraph",
            Self::AttrMask => "AttrMask",
            Self::Identical => "Identical",
        })
    }
}

/// An augmentation kind with its strength. `Identical` always has ratio 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    kind: AugmentationKind,
    ratio: f64,
}

impl Augmentation {
    pub fn new(kind: AugmentationKind, ratio: f64) -> Result<Self> {
        if kind == AugmentationKind::Identical {
            return Ok(Self { kind, ratio: 0.0 });
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Config(format!("augmentation ratio must be in (0, 1), got {ratio}")));
        }
        Ok(Self { kind, ratio })
    }

    pub fn kind(&self) -> AugmentationKind {
        self.kind
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn apply(&self, g: &Graph, rng: &mut impl Rng) -> Graph {
        self.apply_with_map(g, rng).0
    }

    /// The augmented graph and, for each of its nodes, the source node index.
    pub fn apply_with_map(&self, g: &Graph, rng: &mut impl Rng) -> (Graph, Vec<usize>) {
        let n = g.node_count();
        let identity = || (0..n).collect::<Vec<_>>();
        match self.kind {
            AugmentationKind::Identical => (g.clone(), identity()),
            AugmentationKind::NodeDrop => {
                let drop = ((self.ratio * n as f64).floor() as usize).min(n.saturating_sub(1));
                let mut keep = sample(rng, n, n - drop).into_vec();
                keep.sort_unstable();
                (induced(g, &keep), keep)
            }
            AugmentationKind::Subgraph => {
                let target = ((1.0 - self.ratio) * n as f64).ceil().clamp(1.0, n as f64) as usize;
                let keep = grow_connected(g, target, rng);
                (induced(g, &keep), keep)
            }
            AugmentationKind::AttrMask => {
                let k = (self.ratio * n as f64).floor() as usize;
                let mut features = g.features().clone();
                for i in sample(rng, n, k) {
                    features.row_mut(i).fill(0.0);
                }
                let out = g.clone().with_features(features).expect("same feature shape");
                (out, identity())
            }
            AugmentationKind::EdgePert => (perturb_edges(g, self.ratio, rng), identity()),
        }
    }
}

fn induced(g: &Graph, keep: &[usize]) -> Graph {
    g.induced(keep).expect("kept nodes are distinct and in range")
}

/// Connected node set of size `target` grown from a uniform start by drawing
/// uniformly from the frontier. When a component is exhausted, growth restarts
/// from a uniform unvisited node.
fn grow_connected(g: &Graph, target: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = g.node_count();
    let adj = g.neighbors();
    let mut kept = vec![false; n];
    let mut queued = vec![false; n];
    let mut frontier = Vec::new();
    let mut count = 0;
    while count < target {
        let v = if frontier.is_empty() {
            let unvisited: Vec<usize> = (0..n).filter(|&v| !kept[v]).collect();
            unvisited[rng.random_range(0..unvisited.len())]
        } else {
            frontier.swap_remove(rng.random_range(0..frontier.len()))
        };
        kept[v] = true;
        count += 1;
        for &w in &adj[v] {
            if !kept[w] && !queued[w] {
                queued[w] = true;
                frontier.push(w);
            }
        }
    }
    (0..n).filter(|&v| kept[v]).collect()
}

/// Remove `floor(ratio * |E|)` edges and add as many unit-weight non-edges.
fn perturb_edges(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Graph {
    let n = g.node_count();
    let m = g.edge_count();
    let pairs = n * n.saturating_sub(1) / 2;
    let k = ((ratio * m as f64).floor() as usize).min(pairs - m);
    if k == 0 {
        return g.clone();
    }
    let existing: BTreeSet<(usize, usize)> = g.edges().iter().map(|&(u, v, _)| (u, v)).collect();
    let added: Vec<(usize, usize)> = if pairs - m <= 4 * k {
        let free: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|p| !existing.contains(p))
            .collect();
        sample(rng, free.len(), k).into_iter().map(|i| free[i]).collect()
    } else {
        let mut chosen = BTreeSet::new();
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            let p = (u.min(v), u.max(v));
            if u != v && !existing.contains(&p) && chosen.insert(p) {
                out.push(p);
            }
        }
        out
    };
    let removed: BTreeSet<usize> = sample(rng, m, k).into_iter().collect();
    let mut edges: Vec<(usize, usize, f64)> = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, &e)| e)
        .collect();
    edges.extend(added.into_iter().map(|(u, v)| (u, v, 1.0)));
    Graph::new(n, edges, g.features().clone(), g.label()).expect("perturbed edges stay valid")
}

/// Augmentation pair for a benchmark dataset name.
pub fn pair_for_dataset(name: &str) -> (AugmentationKind, AugmentationKind) {
    use AugmentationKind::*;
    let key = name.trim().to_ascii_uppercase().replace('-', "_");
    match key.as_str() {
        "NCI1" | "BZR" => (NodeDrop, AttrMask),
        "PROTEINS" | "MUTAG" | "PTC_MR" | "PTC_FM" => (NodeDrop, EdgePert),
        "DD" | "COX2" => (NodeDrop, Subgraph),
        "DHFR" => (EdgePert, Identical),
        "IMDB_B" | "IMDB_BINARY" | "REDDIT_B" | "REDDIT_BINARY" => (Subgraph, Identical),
        _ => {
            log::warn!("no augmentation table entry for {name:?}; using NodeDrop + EdgePert");
            (NodeDrop, EdgePert)
        }
    }
}
