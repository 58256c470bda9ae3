//! Extended persistence of vertex-filtered graphs.
//!
//! Vertices are totally ordered by `(f, index)`. In the ascending pass an edge
//! enters right after its later endpoint (lower star); in the descending pass
//! the cone over the superlevel set grows, an edge entering with its earlier
//! endpoint (upper star). Pairs whose birth and death come from the same
//! vertex star have zero persistence and are dropped.
//!
//! [`extended_persistence`] computes the diagram with two union-find passes
//! and a small cycle reduction. [`brute_force_extended_persistence`] reduces
//! the full boundary matrix of the coned filtration and is kept as an oracle.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{arg_err, Error, Result};
use crate::filtration::{FiltrationKind, VertexFiltration};
use crate::graph::{Graph, UnionFind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairClass {
    /// Sublevel component merges.
    Ordinary0,
    /// One per connected component: (min, max).
    Extended0,
    /// Superlevel component merges, reported with birth >= death.
    Relative1,
    /// One per independent cycle.
    Extended1,
    /// Sublevel-only diagrams: never-dying components, death capped at 1.
    Essential0,
    /// Sublevel-only diagrams: never-dying cycles, death capped at 1.
    Essential1,
}

impl PairClass {
    pub fn dim(self) -> usize {
        match self {
            Self::Ordinary0 | Self::Extended0 | Self::Essential0 => 0,
            Self::Relative1 | Self::Extended1 | Self::Essential1 => 1,
        }
    }
}

impl fmt::Display for PairClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ordinary0 => "ordinary0",
            Self::Extended0 => "extended0",
            Self::Relative1 => "relative1",
            Self::Extended1 => "extended1",
            Self::Essential0 => "essential0",
            Self::Essential1 => "essential1",
        })
    }
}

impl FromStr for PairClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ordinary0" => Self::Ordinary0,
            "extended0" => Self::Extended0,
            "relative1" => Self::Relative1,
            "extended1" => Self::Extended1,
            "essential0" => Self::Essential0,
            "essential1" => Self::Essential1,
            other => return Err(arg_err!("unknown pair class {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistencePoint {
    pub birth: f64,
    pub death: f64,
    pub class: PairClass,
}

impl PersistencePoint {
    pub fn new(birth: f64, death: f64, class: PairClass) -> Self {
        Self { birth, death, class }
    }

    pub fn dim(&self) -> usize {
        self.class.dim()
    }

    pub fn persistence(&self) -> f64 {
        (self.death - self.birth).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtendedPersistenceDiagram {
    pub points: Vec<PersistencePoint>,
    pub filtration_kind: Option<FiltrationKind>,
}

impl ExtendedPersistenceDiagram {
    pub fn count(&self, class: PairClass) -> usize {
        self.points.iter().filter(|p| p.class == class).count()
    }

    /// Points sorted and rounded to `1e-9`, for multiset comparison.
    pub fn canonical(&self) -> Vec<(PairClass, i64, i64)> {
        let r = |x: f64| (x * 1e9).round() as i64;
        let mut v: Vec<_> = self.points.iter().map(|p| (p.class, r(p.birth), r(p.death))).collect();
        v.sort_unstable();
        v
    }

    /// One point per line: `dim pair_class birth death`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            writeln!(s, "{} {} {:.6} {:.6}", p.dim(), p.class, p.birth, p.death).expect("string write");
        }
        s
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || arg_err!("diagram dump line {}: {:?}", i + 1, line);
            if parts.len() != 4 {
                return Err(bad());
            }
            let class: PairClass = parts[1].parse()?;
            let birth = parts[2].parse().map_err(|_| bad())?;
            let death = parts[3].parse().map_err(|_| bad())?;
            if parts[0].parse::<usize>().ok() != Some(class.dim()) {
                return Err(bad());
            }
            points.push(PersistencePoint::new(birth, death, class));
        }
        Ok(Self {
            points,
            filtration_kind: None,
        })
    }
}

/// Vertex ordering and the edge stars it induces.
struct Order {
    /// `rank[v]` = position of `v` in the ascending order.
    rank: Vec<usize>,
    /// Vertices in ascending order.
    ascending: Vec<usize>,
    /// Lower-star edges of each vertex as `(other endpoint, edge id)`, by ascending rank of the other endpoint.
    lower: Vec<Vec<(usize, usize)>>,
    /// Upper-star edges of each vertex, by descending rank of the other endpoint.
    upper: Vec<Vec<(usize, usize)>>,
}

impl Order {
    fn new(g: &Graph, f: &[f64]) -> Result<Self> {
        let n = g.node_count();
        if f.len() != n {
            return Err(arg_err!("filtration has {} values for {} nodes", f.len(), n));
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(arg_err!("filtration values must be finite"));
        }
        let mut ascending: Vec<usize> = (0..n).collect();
        ascending.sort_by(|&a, &b| f[a].total_cmp(&f[b]).then(a.cmp(&b)));
        let mut rank = vec![0; n];
        for (r, &v) in ascending.iter().enumerate() {
            rank[v] = r;
        }
        let mut lower = vec![Vec::new(); n];
        let mut upper = vec![Vec::new(); n];
        for (id, &(u, v, _)) in g.edges().iter().enumerate() {
            let (lo, hi) = if rank[u] < rank[v] { (u, v) } else { (v, u) };
            lower[hi].push((lo, id));
            upper[lo].push((hi, id));
        }
        for l in &mut lower {
            l.sort_by_key(|&(o, _)| rank[o]);
        }
        for u in &mut upper {
            u.sort_by_key(|&(o, _)| std::cmp::Reverse(rank[o]));
        }
        Ok(Self {
            rank,
            ascending,
            lower,
            upper,
        })
    }
}

pub fn extended_persistence(g: &Graph, f: &VertexFiltration) -> Result<ExtendedPersistenceDiagram> {
    let mut d = extended_persistence_values(g, &f.values)?;
    d.filtration_kind = Some(f.kind);
    Ok(d)
}

/// Fast path on raw vertex values.
pub fn extended_persistence_values(g: &Graph, f: &[f64]) -> Result<ExtendedPersistenceDiagram> {
    let n = g.node_count();
    let ord = Order::new(g, f)?;
    let edges = g.edges();
    let endpoints = |id: usize| -> (usize, usize) {
        let (u, v, _) = edges[id];
        if ord.rank[u] < ord.rank[v] {
            (u, v)
        } else {
            (v, u)
        }
    };
    let mut points = Vec::new();

    // Ascending pass: elder rule with component births tracked at roots.
    let mut uf = UnionFind::new(n);
    let mut birth: Vec<usize> = (0..n).collect();
    let mut asc_index = vec![usize::MAX; edges.len()];
    let mut asc_edge = Vec::with_capacity(edges.len());
    for &v in &ord.ascending {
        for &(_, id) in &ord.lower[v] {
            asc_index[id] = asc_edge.len();
            asc_edge.push(id);
            let (a, b) = endpoints(id);
            let (ra, rb) = (uf.find(a), uf.find(b));
            if ra == rb {
                continue;
            }
            let (ba, bb) = (birth[ra], birth[rb]);
            let (young, old) = if ord.rank[ba] > ord.rank[bb] { (ba, bb) } else { (bb, ba) };
            uf.union(ra, rb);
            let root = uf.find(a);
            birth[root] = old;
            if young != v {
                points.push(PersistencePoint::new(f[young], f[v], PairClass::Ordinary0));
            }
        }
    }

    // Components: (min, max) over each.
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for v in 0..n {
        let r = uf.find(v);
        lo[r] = lo[r].min(f[v]);
        hi[r] = hi[r].max(f[v]);
    }
    for v in 0..n {
        if uf.find(v) == v {
            points.push(PersistencePoint::new(lo[v], hi[v], PairClass::Extended0));
        }
    }

    // Descending pass: superlevel merges, and cycles closed by upper-star edges.
    let mut uf = UnionFind::new(n);
    let mut birth: Vec<usize> = (0..n).collect();
    let mut forest: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut reduced: HashMap<usize, Vec<usize>> = HashMap::new();
    for &x in ord.ascending.iter().rev() {
        for &(other, id) in &ord.upper[x] {
            let (rx, ro) = (uf.find(x), uf.find(other));
            if rx != ro {
                let (bx, bo) = (birth[rx], birth[ro]);
                let (young, old) = if ord.rank[bx] < ord.rank[bo] { (bx, bo) } else { (bo, bx) };
                uf.union(rx, ro);
                let root = uf.find(x);
                birth[root] = old;
                forest[x].push((other, id));
                forest[other].push((x, id));
                if young != x {
                    points.push(PersistencePoint::new(f[young], f[x], PairClass::Relative1));
                }
                continue;
            }
            // Cycle: this edge plus the forest path, as ascending edge indices.
            let mut cycle: Vec<usize> = forest_path(&forest, x, other)
                .into_iter()
                .map(|e| asc_index[e])
                .collect();
            cycle.push(asc_index[id]);
            cycle.sort_unstable();
            loop {
                let pivot = *cycle.last().expect("a cycle never reduces to zero");
                match reduced.get(&pivot) {
                    Some(prev) => cycle = symmetric_difference(&cycle, prev),
                    None => {
                        let (_, top) = endpoints(asc_edge[pivot]);
                        let (a, d) = (f[top], f[x]);
                        points.push(PersistencePoint::new(a.min(d), a.max(d), PairClass::Extended1));
                        reduced.insert(pivot, cycle);
                        break;
                    }
                }
            }
        }
    }
    Ok(ExtendedPersistenceDiagram {
        points,
        filtration_kind: None,
    })
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len() + b.len());
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
    out
}

/// Edge ids on the forest path from `s` to `t` (both in one tree).
fn forest_path(forest: &[Vec<(usize, usize)>], s: usize, t: usize) -> Vec<usize> {
    let mut via = vec![None; forest.len()];
    let mut seen = vec![false; forest.len()];
    let mut stack = vec![s];
    seen[s] = true;
    while let Some(v) = stack.pop() {
        if v == t {
            break;
        }
        for &(w, e) in &forest[v] {
            if !seen[w] {
                seen[w] = true;
                via[w] = Some((v, e));
                stack.push(w);
            }
        }
    }
    let mut path = Vec::new();
    let mut v = t;
    while let Some((p, e)) = via[v] {
        path.push(e);
        v = p;
    }
    path
}

/// Ordinary persistence of the sublevel filtration. Classes that never die
/// get death `1.0`.
pub fn sublevel_persistence(g: &Graph, f: &VertexFiltration) -> Result<ExtendedPersistenceDiagram> {
    let mut d = sublevel_persistence_values(g, &f.values)?;
    d.filtration_kind = Some(f.kind);
    Ok(d)
}

pub fn sublevel_persistence_values(g: &Graph, f: &[f64]) -> Result<ExtendedPersistenceDiagram> {
    let n = g.node_count();
    let ord = Order::new(g, f)?;
    let mut points = Vec::new();
    let mut uf = UnionFind::new(n);
    let mut birth: Vec<usize> = (0..n).collect();
    for &v in &ord.ascending {
        for &(other, _) in &ord.lower[v] {
            let (ra, rb) = (uf.find(v), uf.find(other));
            if ra == rb {
                points.push(PersistencePoint::new(f[v], 1.0, PairClass::Essential1));
                continue;
            }
            let (ba, bb) = (birth[ra], birth[rb]);
            let (young, old) = if ord.rank[ba] > ord.rank[bb] { (ba, bb) } else { (bb, ba) };
            uf.union(ra, rb);
            let root = uf.find(v);
            birth[root] = old;
            if young != v {
                points.push(PersistencePoint::new(f[young], f[v], PairClass::Ordinary0));
            }
        }
    }
    for v in 0..n {
        if uf.find(v) == v {
            points.push(PersistencePoint::new(f[birth[v]], 1.0, PairClass::Essential0));
        }
    }
    Ok(ExtendedPersistenceDiagram {
        points,
        filtration_kind: None,
    })
}

/// Largest graph the oracle accepts.
pub const BRUTE_FORCE_MAX_NODES: usize = 12;

#[derive(Debug, Clone, Copy)]
enum Cell {
    Cone,
    Vertex(usize),
    Edge(usize),
    ConeVertex(usize),
    ConeEdge(usize),
}

/// Full boundary-matrix reduction over Z/2 of the ascending complex followed
/// by the cone over the descending complex.
pub fn brute_force_extended_persistence(g: &Graph, f: &[f64]) -> Result<ExtendedPersistenceDiagram> {
    let n = g.node_count();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(arg_err!(
            "brute-force persistence refuses graphs over {} nodes (got {})",
            BRUTE_FORCE_MAX_NODES,
            n
        ));
    }
    let ord = Order::new(g, f)?;
    let edges = g.edges();
    let low_high = |id: usize| {
        let (u, v, _) = edges[id];
        if ord.rank[u] < ord.rank[v] {
            (u, v)
        } else {
            (v, u)
        }
    };

    let mut cells = vec![Cell::Cone];
    let mut vertex_cell = vec![0; n];
    let mut edge_cell = vec![0; edges.len()];
    let mut cone_vertex_cell = vec![0; n];
    let mut boundary: Vec<Vec<usize>> = vec![vec![]];
    for &v in &ord.ascending {
        vertex_cell[v] = cells.len();
        cells.push(Cell::Vertex(v));
        boundary.push(vec![]);
        for &(other, id) in &ord.lower[v] {
            edge_cell[id] = cells.len();
            cells.push(Cell::Edge(id));
            let mut b = vec![vertex_cell[v], vertex_cell[other]];
            b.sort_unstable();
            boundary.push(b);
        }
    }
    for &x in ord.ascending.iter().rev() {
        cone_vertex_cell[x] = cells.len();
        cells.push(Cell::ConeVertex(x));
        boundary.push(vec![0, vertex_cell[x]]);
        for &(other, id) in &ord.upper[x] {
            cells.push(Cell::ConeEdge(id));
            let mut b = vec![edge_cell[id], cone_vertex_cell[x], cone_vertex_cell[other]];
            b.sort_unstable();
            boundary.push(b);
        }
    }

    let mut low_owner: HashMap<usize, usize> = HashMap::new();
    let mut pairs = Vec::new();
    for j in 0..boundary.len() {
        let mut col = std::mem::take(&mut boundary[j]);
        while let Some(&low) = col.last() {
            match low_owner.get(&low) {
                Some(&k) => col = symmetric_difference(&col, &boundary[k]),
                None => break,
            }
        }
        if let Some(&low) = col.last() {
            low_owner.insert(low, j);
            pairs.push((low, j));
        }
        boundary[j] = col;
    }

    let mut points = Vec::new();
    for (b, d) in pairs {
        match (cells[b], cells[d]) {
            (Cell::Vertex(v), Cell::Edge(id)) => {
                let (_, top) = low_high(id);
                if v != top {
                    points.push(PersistencePoint::new(f[v], f[top], PairClass::Ordinary0));
                }
            }
            (Cell::Vertex(v), Cell::ConeVertex(x)) => {
                points.push(PersistencePoint::new(f[v], f[x], PairClass::Extended0));
            }
            (Cell::Edge(a), Cell::ConeEdge(id)) => {
                let (_, top) = low_high(a);
                let (bottom, _) = low_high(id);
                let (p, q) = (f[top], f[bottom]);
                points.push(PersistencePoint::new(p.min(q), p.max(q), PairClass::Extended1));
            }
            (Cell::ConeVertex(x), Cell::ConeEdge(id)) => {
                let (bottom, _) = low_high(id);
                if x != bottom {
                    points.push(PersistencePoint::new(f[x], f[bottom], PairClass::Relative1));
                }
            }
            (bc, dc) => return Err(Error::State(format!("unexpected persistence pair {bc:?} / {dc:?}"))),
        }
    }
    Ok(ExtendedPersistenceDiagram {
        points,
        filtration_kind: None,
    })
}
