//! Graphs, generators, normalized adjacency matrices and Laplacians.
//!
//! An edge `(i, j, w)` places `w` at row `i`, column `j` of the adjacency
//! matrix, so row `i` lists the nodes that send messages to `i`. Undirected
//! graphs store both orientations of every non-loop edge.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    directed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Complete(usize),
    Cycle(usize),
    Path(usize),
    Star(usize),
    ErdosRenyi { n: usize, p: f64, seed: u64 },
    KarateClub,
}

impl Graph {
    /// Builds a graph from edge entries. Undirected input is symmetrized;
    /// an entry whose reverse is already listed with the same weight is kept once.
    pub fn from_edges(n: usize, entries: &[(usize, usize, f64)], directed: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, w) in entries {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("weight of edge ({i}, {j})")));
            }
            if map.insert((i, j), w).is_some() {
                return Err(Error::DuplicateEdge(i, j));
            }
        }
        if !directed {
            let listed: Vec<_> = map.iter().map(|(&k, &w)| (k, w)).collect();
            for ((i, j), w) in listed {
                match map.get(&(j, i)) {
                    Some(&back) if back != w => {
                        return Err(Error::InvalidArgument(format!(
                            "edge ({i}, {j}) has weight {w} but its reverse has {back}"
                        )))
                    }
                    Some(_) => {}
                    None => {
                        map.insert((j, i), w);
                    }
                }
            }
        }
        Ok(Self {
            n,
            edges: map.into_iter().map(|((i, j), w)| (i, j, w)).collect(),
            directed,
        })
    }

    pub fn generate(kind: Generator) -> Result<Self> {
        let pairs = |n: usize, list: Vec<(usize, usize)>| {
            let entries: Vec<_> = list.into_iter().map(|(i, j)| (i, j, 1.0)).collect();
            Self::from_edges(n, &entries, false)
        };
        match kind {
            Generator::Complete(n) => {
                let list = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
                pairs(n, list)
            }
            Generator::Cycle(n) => {
                if n < 3 {
                    return Err(Error::InvalidArgument("cycle needs at least 3 nodes".into()));
                }
                pairs(n, (0..n).map(|i| (i, (i + 1) % n)).collect())
            }
            Generator::Path(n) => pairs(n, (1..n).map(|i| (i - 1, i)).collect()),
            Generator::Star(k) => pairs(k + 1, (1..=k).map(|i| (0, i)).collect()),
            Generator::ErdosRenyi { n, p, seed } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidArgument(format!("edge probability {p}")));
                }
                let mut r = rng::stream(seed, "erdos_renyi");
                let mut list = Vec::new();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if r.random::<f64>() < p {
                            list.push((i, j));
                        }
                    }
                }
                pairs(n, list)
            }
            Generator::KarateClub => pairs(34, KARATE_EDGES.to_vec()),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Directed edge entries, sorted by `(i, j)`.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Number of undirected edges (each loop counts once), or of entries if directed.
    pub fn edge_count(&self) -> usize {
        if self.directed {
            self.edges.len()
        } else {
            let loops = self.edges.iter().filter(|e| e.0 == e.1).count();
            (self.edges.len() - loops) / 2 + loops
        }
    }

    pub fn adjacency(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for &(i, j, w) in &self.edges {
            a[(i, j)] = w;
        }
        a
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges
            .binary_search_by(|e| (e.0, e.1).cmp(&(i, j)))
            .is_ok()
    }

    /// Nodes `j` with an entry `(i, j)`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|e| e.0 == i)
            .map(|e| e.1)
            .collect()
    }

    /// Weighted row degrees.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(i, _, w) in &self.edges {
            d[i] += w;
        }
        d
    }

    /// Copy with unit self-loops added to every node lacking one.
    pub fn with_self_loops(&self) -> Self {
        let mut entries = self.edges.clone();
        for i in 0..self.n {
            if !self.has_edge(i, i) {
                entries.push((i, i, 1.0));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));
        Self {
            n: self.n,
            edges: entries,
            directed: self.directed,
        }
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Dimension(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.n
            )));
        }
        let entries: Vec<_> = self
            .edges
            .iter()
            .map(|&(i, j, w)| (perm[i], perm[j], w))
            .collect();
        Self::from_edges(self.n, &entries, true).map(|mut g| {
            g.directed = self.directed;
            g
        })
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(i, j, w) in &self.edges {
            if !self.directed && j < i {
                continue;
            }
            if w == 1.0 {
                out.push_str(&format!("{i} {j}\n"));
            } else {
                out.push_str(&format!("{i} {j} {w:?}\n"));
            }
        }
        out
    }
}

/// Parses an undirected edge list: one `i j [w]` per line, `#` starts a comment.
pub fn load_edge_list(text: &str) -> Result<Graph> {
    parse_edge_list(text, false)
}

pub fn parse_edge_list(text: &str, directed: bool) -> Result<Graph> {
    let mut entries = Vec::new();
    let mut seen = BTreeMap::new();
    let mut max_id = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected \"i j [w]\", found {line:?}"),
            });
        }
        let node = |s: &str| -> Result<usize> {
            let v: i64 = s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid node id {s:?}"),
            })?;
            usize::try_from(v).map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("negative node id {v}"),
            })
        };
        let i = node(fields[0])?;
        let j = node(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => s.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid weight {s:?}"),
            })?,
            None => 1.0,
        };
        if seen.insert((i, j), lineno).is_some() {
            return Err(Error::DuplicateEdge(i, j));
        }
        max_id = Some(max_id.map_or(i.max(j), |m: usize| m.max(i).max(j)));
        entries.push((i, j, w));
    }
    let n = max_id.map(|m| m + 1).ok_or(Error::EmptyGraph)?;
    Graph::from_edges(n, &entries, directed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggKind {
    Raw,
    Sym,
    Rw,
    Pr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMatrix {
    pub matrix: DenseMatrix,
    pub kind: AggKind,
    pub self_loops: bool,
}

/// `Raw` returns the adjacency (plus identity when `self_loops`); `Sym` is
/// `D^(-1/2) A D^(-1/2)`, `Rw` is `D^(-1) A` and `Pr` is `A D^(-1)` with
/// column degrees. Zero degrees are rejected.
pub fn normalize(g: &Graph, kind: AggKind, self_loops: bool) -> Result<AggregationMatrix> {
    let mut a = g.adjacency();
    if self_loops {
        for i in 0..g.n() {
            a[(i, i)] += 1.0;
        }
    }
    let n = g.n();
    let check = |deg: &[f64]| -> Result<()> {
        for (i, d) in deg.iter().enumerate() {
            if *d == 0.0 {
                return Err(Error::IsolatedNode(i));
            }
        }
        Ok(())
    };
    let matrix = match kind {
        AggKind::Raw => a,
        AggKind::Sym => {
            let deg = a.row_sums();
            check(&deg)?;
            if let Some(i) = deg.iter().position(|d| *d < 0.0) {
                return Err(Error::InvalidArgument(format!("node {i} has negative degree")));
            }
            let s: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
            DenseMatrix::from_fn(n, n, |i, j| s[i] * a[(i, j)] * s[j])
        }
        AggKind::Rw => {
            let deg = a.row_sums();
            check(&deg)?;
            DenseMatrix::from_fn(n, n, |i, j| a[(i, j)] / deg[i])
        }
        AggKind::Pr => {
            let deg = a.col_sums();
            check(&deg)?;
            DenseMatrix::from_fn(n, n, |i, j| a[(i, j)] / deg[j])
        }
    };
    Ok(AggregationMatrix {
        matrix,
        kind,
        self_loops,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    Unnormalized,
    Sym,
    Rw,
}

pub fn laplacian(g: &Graph, kind: LaplacianKind) -> Result<DenseMatrix> {
    if g.is_directed() {
        return Err(Error::Directed);
    }
    let n = g.n();
    let id = DenseMatrix::identity(n);
    match kind {
        LaplacianKind::Unnormalized => {
            let a = g.adjacency();
            let d = DenseMatrix::diag(&a.row_sums());
            d.sub(&a)
        }
        LaplacianKind::Sym => id.sub(&normalize(g, AggKind::Sym, false)?.matrix),
        LaplacianKind::Rw => id.sub(&normalize(g, AggKind::Rw, false)?.matrix),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub connected: bool,
    pub bipartite: bool,
}

/// Connectivity and bipartiteness of the undirected view of `g`.
pub fn connectivity_report(g: &Graph) -> ConnectivityReport {
    let n = g.n();
    let mut adj = vec![Vec::new(); n];
    for &(i, j, _) in g.edges() {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut color: Vec<Option<bool>> = vec![None; n];
    let mut components = 0;
    let mut bipartite = true;
    for s in 0..n {
        if color[s].is_some() {
            continue;
        }
        components += 1;
        color[s] = Some(false);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let cu = color[u].unwrap_or(false);
            for &v in &adj[u] {
                match color[v] {
                    None => {
                        color[v] = Some(!cu);
                        queue.push_back(v);
                    }
                    Some(cv) if cv == cu => bipartite = false,
                    Some(_) => {}
                }
            }
        }
    }
    ConnectivityReport {
        connected: components <= 1,
        bipartite,
    }
}

/// Zachary's karate club, 34 members and 78 ties.
const KARATE_EDGES: [(usize, usize); 78] = [
    (0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6), (0, 7), (0, 8), (0, 10), (0, 11),
    (0, 12), (0, 13), (0, 17), (0, 19), (0, 21), (0, 31),
    (1, 2), (1, 3), (1, 7), (1, 13), (1, 17), (1, 19), (1, 21), (1, 30),
    (2, 3), (2, 7), (2, 8), (2, 9), (2, 13), (2, 27), (2, 28), (2, 32),
    (3, 7), (3, 12), (3, 13),
    (4, 6), (4, 10),
    (5, 6), (5, 10), (5, 16),
    (6, 16),
    (8, 30), (8, 32), (8, 33),
    (9, 33),
    (13, 33),
    (14, 32), (14, 33),
    (15, 32), (15, 33),
    (18, 32), (18, 33),
    (19, 33),
    (20, 32), (20, 33),
    (22, 32), (22, 33),
    (23, 25), (23, 27), (23, 29), (23, 32), (23, 33),
    (24, 25), (24, 27), (24, 31),
    (25, 31),
    (26, 29), (26, 33),
    (27, 33),
    (28, 31), (28, 33),
    (29, 32), (29, 33),
    (30, 32), (30, 33),
    (31, 32), (31, 33),
    (32, 33),
];
