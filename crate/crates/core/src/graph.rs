//! Graphs, datasets and TUDataset flat-file ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{arg_err, Error, Result};
use crate::tensor::DenseTensor;

/// Undirected weighted graph with node features.
///
/// Edges are stored once with `u < v`, sorted; self-loops are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize, f64)>,
    features: DenseTensor,
    label: Option<usize>,
}

/// Diagonal of the (weighted) degree matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeMatrix {
    pub diagonal: Vec<f64>,
}

impl Graph {
    /// Build a graph, normalizing edge orientation and order. Duplicate edges
    /// and self-loops are rejected.
    pub fn new(
        node_count: usize,
        edges: Vec<(usize, usize, f64)>,
        features: DenseTensor,
        label: Option<usize>,
    ) -> Result<Self> {
        let mut edges: Vec<_> = edges.into_iter().map(|(u, v, w)| (u.min(v), u.max(v), w)).collect();
        edges.sort_by_key(|&(u, v, _)| (u, v));
        let g = Self {
            node_count,
            edges,
            features,
            label,
        };
        g.validate()?;
        Ok(g)
    }

    /// Unit-weight graph with a constant feature of 1 per node.
    pub fn from_edges(node_count: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            node_count,
            pairs.iter().map(|&(u, v)| (u, v, 1.0)).collect(),
            DenseTensor::filled(&[node_count, 1], 1.0),
            None,
        )
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.node_count;
        if self.features.ndim() != 2 || self.features.rows() != n {
            return Err(arg_err!(
                "feature matrix {:?} does not have {} rows",
                self.features.shape(),
                n
            ));
        }
        let mut seen = BTreeSet::new();
        for &(u, v, w) in &self.edges {
            if u >= n || v >= n {
                return Err(arg_err!("edge ({u}, {v}) outside node range 0..{n}"));
            }
            if u == v {
                return Err(arg_err!("self-loop on node {u}"));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(arg_err!("edge ({u}, {v}) has non-positive weight {w}"));
            }
            if !seen.insert((u, v)) {
                return Err(arg_err!("duplicate edge ({u}, {v})"));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn features(&self) -> &DenseTensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn with_features(mut self, features: DenseTensor) -> Result<Self> {
        self.features = features;
        self.validate()?;
        Ok(self)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let key = (u.min(v), u.max(v));
        self.edges.iter().any(|&(a, b, _)| (a, b) == key)
    }

    /// Sorted neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v, _) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Unweighted node degrees.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count];
        for &(u, v, _) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    pub fn degree_matrix(&self) -> DegreeMatrix {
        let mut d = vec![0.0; self.node_count];
        for &(u, v, w) in &self.edges {
            d[u] += w;
            d[v] += w;
        }
        DegreeMatrix { diagonal: d }
    }

    /// Number of connected components.
    pub fn component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.node_count);
        for &(u, v, _) in &self.edges {
            uf.union(u, v);
        }
        (0..self.node_count).filter(|&x| uf.find(x) == x).count()
    }

    /// `A + I` as a dense matrix.
    pub fn adjacency_with_self_loops(&self) -> DenseTensor {
        let n = self.node_count;
        let mut a = DenseTensor::identity(n);
        for &(u, v, w) in &self.edges {
            a.data_mut()[u * n + v] = w;
            a.data_mut()[v * n + u] = w;
        }
        a
    }

    /// `(D^-1/2 (A + I) D^-1/2)^tau` where `D` is the degree matrix of `A + I`.
    pub fn normalized_adjacency_power(&self, tau: usize) -> Result<DenseTensor> {
        if tau == 0 {
            return Err(arg_err!("propagation power must be at least 1"));
        }
        let n = self.node_count;
        let mut a = self.adjacency_with_self_loops();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / a.row(i).iter().sum::<f64>().sqrt())
            .collect();
        for i in 0..n {
            for (j, x) in a.row_mut(i).iter_mut().enumerate() {
                *x *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
        let mut p = a.clone();
        for _ in 1..tau {
            p = p.matmul(&a)?;
        }
        Ok(p)
    }

    /// Relabel nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count;
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(arg_err!("not a permutation of 0..{n}"));
        }
        let f = self.feature_dim();
        let mut features = DenseTensor::zeros(&[n, f]);
        for i in 0..n {
            features.row_mut(perm[i]).copy_from_slice(self.features.row(i));
        }
        let edges = self.edges.iter().map(|&(u, v, w)| (perm[u], perm[v], w)).collect();
        Self::new(n, edges, features, self.label)
    }

    /// Induced subgraph on `keep` (in the given order) and the index map used.
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        let mut index = vec![usize::MAX; self.node_count];
        for (new, &old) in keep.iter().enumerate() {
            index[old] = new;
        }
        let f = self.feature_dim();
        let mut features = DenseTensor::zeros(&[keep.len(), f]);
        for (new, &old) in keep.iter().enumerate() {
            features.row_mut(new).copy_from_slice(self.features.row(old));
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(u, v, _)| index[u] != usize::MAX && index[v] != usize::MAX)
            .map(|&(u, v, w)| (index[u], index[v], w))
            .collect();
        Self::new(keep.len(), edges, features, self.label)
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

/// A labelled graph collection sharing one feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl GraphDataset {
    /// Validate labels and feature widths. `num_classes` is inferred.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>) -> Result<Self> {
        let feature_dim = graphs.first().map_or(0, Graph::feature_dim);
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim {
                return Err(arg_err!(
                    "graph {i} has feature width {}, expected {feature_dim}",
                    g.feature_dim()
                ));
            }
        }
        let num_classes = graphs.iter().filter_map(Graph::label).max().map_or(0, |m| m + 1);
        Ok(Self {
            name: name.into(),
            graphs,
            num_classes,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Labels of every graph; errors if any graph is unlabelled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.graphs
            .iter()
            .enumerate()
            .map(|(i, g)| g.label().ok_or_else(|| arg_err!("graph {i} has no label")))
            .collect()
    }

    pub fn average_nodes(&self) -> f64 {
        self.graphs.iter().map(|g| g.node_count() as f64).sum::<f64>() / self.len().max(1) as f64
    }

    pub fn average_edges(&self) -> f64 {
        self.graphs.iter().map(|g| g.edge_count() as f64).sum::<f64>() / self.len().max(1) as f64
    }
}

/// Degree cap for the one-hot degree feature fallback.
pub const MAX_DEGREE_FEATURE: usize = 400;

fn read_lines(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?.lines().map(str::to_string).collect())
}

fn read_optional(path: &Path) -> Result<Option<Vec<String>>> {
    if path.exists() {
        read_lines(path).map(Some)
    } else {
        Ok(None)
    }
}

fn format_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parse comma-separated numbers with arbitrary surrounding whitespace.
/// Blank lines yield `None`.
fn parse_row<T: std::str::FromStr>(file: &Path, line: usize, text: &str) -> Result<Option<Vec<T>>> {
    if text.trim().is_empty() {
        return Ok(None);
    }
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| format_err(file, line, format!("cannot parse {:?}", tok.trim())))
        })
        .collect::<Result<Vec<T>>>()
        .map(Some)
}

/// Nonblank rows with their 1-based line numbers.
fn rows<T: std::str::FromStr>(file: &Path, lines: &[String]) -> Result<Vec<(usize, Vec<T>)>> {
    let mut out = Vec::new();
    for (i, l) in lines.iter().enumerate() {
        if let Some(r) = parse_row(file, i + 1, l)? {
            out.push((i + 1, r));
        }
    }
    Ok(out)
}

fn single<T: Copy + std::str::FromStr>(file: &Path, lines: &[String]) -> Result<Vec<T>> {
    rows::<T>(file, lines)?
        .into_iter()
        .map(|(line, r)| {
            if r.len() == 1 {
                Ok(r[0])
            } else {
                Err(format_err(file, line, "expected a single value"))
            }
        })
        .collect()
}

/// Load `{root}/{name}/{name}_*.txt`, or `{root}/{name}_*.txt` when `root`
/// itself holds the files.
pub fn load_tudataset(root: &Path, name: &str) -> Result<GraphDataset> {
    let dir = if root.join(name).is_dir() {
        root.join(name)
    } else {
        root.to_path_buf()
    };
    let file = |suffix: &str| -> PathBuf { dir.join(format!("{name}_{suffix}.txt")) };

    let a_path = file("A");
    let ind_path = file("graph_indicator");
    let lab_path = file("graph_labels");
    let a_lines = read_lines(&a_path)?;
    let ind_lines = read_lines(&ind_path)?;
    let lab_lines = read_lines(&lab_path)?;

    let indicator: Vec<i64> = single(&ind_path, &ind_lines)?;
    let raw_labels: Vec<i64> = single(&lab_path, &lab_lines)?;
    let num_graphs = raw_labels.len();
    let total_nodes = indicator.len();

    // graph index and local index of every global node
    let mut graph_of = Vec::with_capacity(total_nodes);
    let mut local_of = Vec::with_capacity(total_nodes);
    let mut sizes = vec![0usize; num_graphs];
    for (i, &gid) in indicator.iter().enumerate() {
        if gid < 1 || gid as usize > num_graphs {
            return Err(format_err(
                &ind_path,
                i + 1,
                format!("graph id {gid} outside 1..={num_graphs}"),
            ));
        }
        let gi = gid as usize - 1;
        graph_of.push(gi);
        local_of.push(sizes[gi]);
        sizes[gi] += 1;
    }

    let weights = match read_optional(&file("edge_attributes"))? {
        Some(lines) => Some(rows::<f64>(&file("edge_attributes"), &lines)?),
        None => None,
    };

    let mut edge_sets: Vec<BTreeMap<(usize, usize), f64>> = vec![BTreeMap::new(); num_graphs];
    let a_rows = rows::<i64>(&a_path, &a_lines)?;
    for (k, (line, r)) in a_rows.iter().enumerate() {
        if r.len() != 2 {
            return Err(format_err(&a_path, *line, "expected an edge pair"));
        }
        let (u, v) = (r[0], r[1]);
        if u < 1 || v < 1 || u as usize > total_nodes || v as usize > total_nodes {
            return Err(format_err(&a_path, *line, format!("node id outside 1..={total_nodes}")));
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if graph_of[u] != graph_of[v] {
            return Err(format_err(
                &a_path,
                *line,
                format!("edge ({}, {}) crosses graphs {} and {}", u + 1, v + 1, graph_of[u] + 1, graph_of[v] + 1),
            ));
        }
        if u == v {
            continue;
        }
        let w = weights
            .as_ref()
            .and_then(|ws| ws.get(k))
            .and_then(|(_, r)| r.first().copied())
            .filter(|&w| w > 0.0 && w.is_finite())
            .unwrap_or(1.0);
        let (a, b) = (local_of[u].min(local_of[v]), local_of[u].max(local_of[v]));
        edge_sets[graph_of[u]].entry((a, b)).or_insert(w);
    }

    let features = node_features(&file, total_nodes, &graph_of, &local_of, &sizes, &edge_sets)?;

    let classes: BTreeSet<i64> = raw_labels.iter().copied().collect();
    let class_index: BTreeMap<i64, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let mut graphs = Vec::with_capacity(num_graphs);
    for (gi, feats) in features.into_iter().enumerate() {
        let edges = edge_sets[gi].iter().map(|(&(u, v), &w)| (u, v, w)).collect();
        graphs.push(Graph::new(sizes[gi], edges, feats, Some(class_index[&raw_labels[gi]]))?);
    }
    let mut ds = GraphDataset::new(name, graphs)?;
    ds.num_classes = classes.len();
    log::info!(
        "loaded {}: {} graphs, {} classes, feature width {}",
        name,
        ds.len(),
        ds.num_classes,
        ds.feature_dim
    );
    Ok(ds)
}

/// Per-graph feature matrices by the fallback order attributes, node labels, degree.
fn node_features(
    file: &dyn Fn(&str) -> PathBuf,
    total_nodes: usize,
    graph_of: &[usize],
    local_of: &[usize],
    sizes: &[usize],
    edge_sets: &[BTreeMap<(usize, usize), f64>],
) -> Result<Vec<DenseTensor>> {
    let attr_path = file("node_attributes");
    let label_path = file("node_labels");
    let per_node: Vec<Vec<f64>> = if let Some(lines) = read_optional(&attr_path)? {
        let r = rows::<f64>(&attr_path, &lines)?;
        if r.len() != total_nodes {
            return Err(format_err(&attr_path, lines.len(), format!("expected {total_nodes} rows")));
        }
        let width = r[0].1.len();
        for (line, row) in &r {
            if row.len() != width {
                return Err(format_err(&attr_path, *line, format!("expected {width} values")));
            }
        }
        r.into_iter().map(|(_, row)| row).collect()
    } else if let Some(lines) = read_optional(&label_path)? {
        let labels: Vec<i64> = single(&label_path, &lines)?;
        if labels.len() != total_nodes {
            return Err(format_err(&label_path, lines.len(), format!("expected {total_nodes} rows")));
        }
        let values: BTreeSet<i64> = labels.iter().copied().collect();
        let index: BTreeMap<i64, usize> = values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        labels
            .iter()
            .map(|l| {
                let mut row = vec![0.0; values.len()];
                row[index[l]] = 1.0;
                row
            })
            .collect()
    } else {
        let mut degree = vec![0usize; total_nodes];
        let mut global = vec![Vec::new(); sizes.len()];
        for (i, &g) in graph_of.iter().enumerate() {
            global[g].push(i);
        }
        for (g, set) in edge_sets.iter().enumerate() {
            for &(u, v) in set.keys() {
                degree[global[g][u]] += 1;
                degree[global[g][v]] += 1;
            }
        }
        let cap = degree.iter().copied().max().unwrap_or(0).min(MAX_DEGREE_FEATURE);
        degree
            .iter()
            .map(|&d| {
                let mut row = vec![0.0; cap + 1];
                row[d.min(cap)] = 1.0;
                row
            })
            .collect()
    };
    let width = per_node.first().map_or(1, Vec::len);
    let mut out: Vec<DenseTensor> = sizes.iter().map(|&n| DenseTensor::zeros(&[n, width])).collect();
    for (i, row) in per_node.into_iter().enumerate() {
        out[graph_of[i]].row_mut(local_of[i]).copy_from_slice(&row);
    }
    Ok(out)
}

/// Write a dataset in TUDataset format with features as node attributes.
pub fn write_tudataset(ds: &GraphDataset, root: &Path) -> Result<()> {
    let dir = root.join(&ds.name);
    fs::create_dir_all(&dir)?;
    let file = |suffix: &str| dir.join(format!("{}_{suffix}.txt", ds.name));
    let (mut a, mut ind, mut labels, mut attrs, mut ew) =
        (String::new(), String::new(), String::new(), String::new(), String::new());
    let weighted = ds.graphs.iter().any(|g| g.edges().iter().any(|e| e.2 != 1.0));
    let mut offset = 0;
    for (gi, g) in ds.graphs.iter().enumerate() {
        for i in 0..g.node_count() {
            ind.push_str(&format!("{}\n", gi + 1));
            let row: Vec<String> = g.features().row(i).iter().map(|x| format!("{x:?}")).collect();
            attrs.push_str(&row.join(", "));
            attrs.push('\n');
        }
        for &(u, v, w) in g.edges() {
            for (x, y) in [(u, v), (v, u)] {
                a.push_str(&format!("{}, {}\n", offset + x + 1, offset + y + 1));
                ew.push_str(&format!("{w:?}\n"));
            }
        }
        let label = g.label().ok_or_else(|| arg_err!("graph {gi} has no label"))?;
        labels.push_str(&format!("{label}\n"));
        offset += g.node_count();
    }
    fs::write(file("A"), a)?;
    fs::write(file("graph_indicator"), ind)?;
    fs::write(file("graph_labels"), labels)?;
    fs::write(file("node_attributes"), attrs)?;
    if weighted {
        fs::write(file("edge_attributes"), ew)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn adjacency_examples() {
        let e = Graph::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(e.adjacency_with_self_loops().data(), &[1.0, 1.0, 1.0, 1.0]);
        let empty = Graph::from_edges(3, &[]).unwrap();
        assert_eq!(empty.adjacency_with_self_loops(), DenseTensor::identity(3));
        let tri = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(tri.adjacency_with_self_loops().data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn normalized_adjacency_examples() {
        let single = Graph::from_edges(1, &[]).unwrap();
        assert_eq!(single.normalized_adjacency_power(1).unwrap().data(), &[1.0]);
        let e = Graph::from_edges(2, &[(0, 1)]).unwrap();
        for &x in e.normalized_adjacency_power(1).unwrap().data() {
            assert!((x - 0.5).abs() < 1e-15);
        }
        let p = path3();
        let a1 = p.normalized_adjacency_power(1).unwrap();
        let mut want = DenseTensor::zeros(&[3, 3]);
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| a1.get(&[i, k]) * a1.get(&[k, j])).sum();
                want.set(&[i, j], s);
            }
        }
        let a2 = p.normalized_adjacency_power(2).unwrap();
        for (x, y) in a2.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(p.normalized_adjacency_power(0).is_err());
    }

    #[test]
    fn rejects_invalid_graphs() {
        assert!(Graph::from_edges(2, &[(0, 2)]).is_err());
        assert!(Graph::from_edges(2, &[(1, 1)]).is_err());
        assert!(Graph::from_edges(2, &[(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(2, vec![(0, 1, 0.0)], DenseTensor::zeros(&[2, 1]), None).is_err());
    }

    #[test]
    fn degree_matrix_and_components() {
        let g = Graph::new(4, vec![(0, 1, 2.0), (2, 1, 0.5)], DenseTensor::zeros(&[4, 1]), None).unwrap();
        assert_eq!(g.degree_matrix().diagonal, vec![2.0, 2.5, 0.5, 0.0]);
        assert_eq!(g.degrees(), vec![1, 2, 1, 0]);
        assert_eq!(g.component_count(), 2);
    }

    #[test]
    fn induced_subgraph_keeps_internal_edges() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let s = g.induced(&[3, 2, 0]).unwrap();
        assert_eq!(s.node_count(), 3);
        assert_eq!(s.edges(), &[(0, 1, 1.0)]);
    }
}
