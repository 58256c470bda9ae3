//! Small labelled datasets with known answers.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, GraphDataset};
use crate::rng::stream;

fn random_tree(rng: &mut impl Rng, n: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (1..n).map(|i| (order[rng.random_range(0..i)], order[i])).collect()
}

/// `per_class` random trees (label 0) and as many graphs with exactly one
/// cycle (label 1), each a random tree plus one chord, on 6 to 12 nodes.
pub fn trees_vs_cycles(per_class: usize, seed: u64) -> Result<GraphDataset> {
    let mut rng = stream(seed, &[0x7265_6573]);
    let mut graphs = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let n = rng.random_range(6..=12);
        let mut edges = random_tree(&mut rng, n);
        let label = i % 2;
        if label == 1 {
            let g = Graph::from_edges(n, &edges)?;
            let chords: Vec<(usize, usize)> = (0..n)
                .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                .filter(|&(u, v)| !g.has_edge(u, v))
                .collect();
            edges.push(chords[rng.random_range(0..chords.len())]);
        }
        graphs.push(Graph::from_edges(n, &edges)?.with_label(Some(label)));
    }
    GraphDataset::new("TREES_CYCLES", graphs)
}

/// The same graphs with labels permuted at random.
pub fn shuffle_labels(ds: &GraphDataset, seed: u64) -> Result<GraphDataset> {
    let mut labels = ds.labels()?;
    labels.shuffle(&mut stream(seed, &[0x7368_7566]));
    let graphs = ds
        .graphs
        .iter()
        .zip(labels)
        .map(|(g, l)| g.clone().with_label(Some(l)))
        .collect();
    GraphDataset::new(format!("{}_SHUFFLED", ds.name), graphs)
}
