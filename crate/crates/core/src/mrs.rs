//! Multi-relational splits of an aggregation matrix.
//!
//! Convention: row `i` of an aggregation is the receiving node. An edge entry
//! `(i, j)` gets relation 1 when `i ≺ j`, 2 when `j ≺ i`, and 3 otherwise;
//! `swap` exchanges relations 1 and 2.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AggregationMatrix, Graph};
use crate::linalg;
use crate::matrix::DenseMatrix;
use crate::pprgnn::ppr_scores;
use crate::rng;

/// Strict partial order stored as a relation matrix: `less(i, j)` is `i ≺ j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrictOrder {
    n: usize,
    less: Vec<bool>,
}

impl StrictOrder {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            less: vec![false; n * n],
        }
    }

    /// `i ≺ j` iff `keys[i] < keys[j] − tol`.
    pub fn from_keys(keys: &[f64], tol: f64) -> Self {
        let n = keys.len();
        let mut o = Self::empty(n);
        for i in 0..n {
            for j in 0..n {
                o.less[i * n + j] = keys[i] < keys[j] - tol;
            }
        }
        o
    }

    /// Builds an order from explicit pairs `(i, j)` meaning `i ≺ j` and
    /// rejects it when the pairs are not irreflexive and transitive.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut o = Self::empty(n);
        for &(i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("pair ({i}, {j}) out of range")));
            }
            o.less[i * n + j] = true;
        }
        for i in 0..n {
            if o.less(i, i) {
                return Err(Error::InvalidArgument(format!("{i} ≺ {i}")));
            }
            for j in 0..n {
                for k in 0..n {
                    if o.less(i, j) && o.less(j, k) && !o.less(i, k) {
                        return Err(Error::InvalidArgument(format!(
                            "order not transitive at ({i}, {j}, {k})"
                        )));
                    }
                }
            }
        }
        Ok(o)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn less(&self, i: usize, j: usize) -> bool {
        self.less[i * self.n + j]
    }

    pub fn is_empty(&self) -> bool {
        !self.less.iter().any(|b| *b)
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.less(i, j))
            .collect()
    }
}

pub fn degree_ordering(g: &Graph) -> Result<StrictOrder> {
    if g.is_directed() {
        return Err(Error::Directed);
    }
    Ok(StrictOrder::from_keys(&g.degrees(), 0.0))
}

pub fn ppr_ordering(g: &Graph, alpha: f64, tol: f64) -> Result<StrictOrder> {
    let scores = ppr_scores(g, alpha, 1e-13)?;
    Ok(StrictOrder::from_keys(&scores, tol))
}

/// Seeded uniform total order.
pub fn random_ordering(n: usize, seed: u64) -> StrictOrder {
    let perm = rng::permutation(&mut rng::stream(seed, "random_ordering"), n);
    let keys: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
    StrictOrder::from_keys(&keys, 0.0)
}

/// Orders nodes by the sum of their feature row; equal sums stay unrelated.
pub fn feature_ordering(x: &DenseMatrix) -> StrictOrder {
    StrictOrder::from_keys(&x.row_sums(), 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationAssignment {
    n: usize,
    l: usize,
    relation: BTreeMap<(usize, usize), usize>,
}

pub const RELATION_CSV_HEADER: &str = "i,j,relation";

impl RelationAssignment {
    /// All edges of `g` in relation 1.
    pub fn single(g: &Graph) -> Self {
        Self {
            n: g.n(),
            l: 1,
            relation: g.edges().iter().map(|&(i, j, _)| ((i, j), 1)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn get(&self, i: usize, j: usize) -> Option<usize> {
        self.relation.get(&(i, j)).copied()
    }

    pub fn edges_in(&self, k: usize) -> Vec<(usize, usize)> {
        self.relation
            .iter()
            .filter(|(_, &r)| r == k)
            .map(|(&e, _)| e)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{RELATION_CSV_HEADER}\n");
        for (&(i, j), &k) in &self.relation {
            let _ = writeln!(out, "{i},{j},{k}");
        }
        out
    }

    /// Nodes that send messages in relation `k` but never receive in it.
    pub fn roots(&self, k: usize) -> BTreeSet<usize> {
        let edges = self.edges_in(k);
        let receivers: BTreeSet<usize> = edges.iter().map(|e| e.0).collect();
        edges
            .iter()
            .map(|e| e.1)
            .filter(|s| !receivers.contains(s))
            .collect()
    }
}

/// Kahn's algorithm on the message graph `j → i` of each edge `(i, j)`.
fn is_acyclic(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut indeg = vec![0usize; n];
    let mut out = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i == j {
            return false;
        }
        out[j].push(i);
        indeg[i] += 1;
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop_front() {
        seen += 1;
        for &u in &out[v] {
            indeg[u] -= 1;
            if indeg[u] == 0 {
                queue.push_back(u);
            }
        }
    }
    seen == n
}

pub fn assign_relations(g: &Graph, order: &StrictOrder, swap: bool) -> Result<RelationAssignment> {
    if order.n() != g.n() {
        return Err(Error::Dimension(format!(
            "order on {} nodes for a graph with {}",
            order.n(),
            g.n()
        )));
    }
    let (lo, hi) = if swap { (2, 1) } else { (1, 2) };
    let relation: BTreeMap<_, _> = g
        .edges()
        .iter()
        .map(|&(i, j, _)| {
            let k = if order.less(i, j) {
                lo
            } else if order.less(j, i) {
                hi
            } else {
                3
            };
            ((i, j), k)
        })
        .collect();
    let ra = RelationAssignment {
        n: g.n(),
        l: 3,
        relation,
    };
    for k in [1, 2] {
        if !is_acyclic(g.n(), &ra.edges_in(k)) {
            return Err(Error::CyclicRelation(k));
        }
    }
    Ok(ra)
}

/// Moves each nonzero entry of `agg` into the matrix of its relation.
pub fn split_aggregation(agg: &AggregationMatrix, ra: &RelationAssignment) -> Result<Vec<DenseMatrix>> {
    split_matrix(&agg.matrix, ra)
}

pub fn split_matrix(m: &DenseMatrix, ra: &RelationAssignment) -> Result<Vec<DenseMatrix>> {
    let n = ra.n();
    if m.shape() != (n, n) {
        return Err(Error::Dimension(format!("{}x{} matrix for {n} nodes", m.rows(), m.cols())));
    }
    let mut out = vec![DenseMatrix::zeros(n, n); ra.l()];
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            match ra.get(i, j) {
                Some(k) => out[k - 1][(i, j)] = v,
                None if v != 0.0 => return Err(Error::MissingRelation(i, j)),
                None => {}
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    /// Row `i` holds the weighted in-degrees `d^(i)` across relations.
    pub profiles: Vec<Vec<f64>>,
    pub independent_count: usize,
    /// `pairs[i][j]` is set when nodes `i` and `j` are structurally independent.
    pub pairs: Vec<Vec<bool>>,
}

pub const INDEPENDENCE_TOL: f64 = 1e-9;

/// Weighted in-degree matrix: entry `(i, k)` is the row sum of `mats[k]` at `i`.
pub fn in_degree_matrix(mats: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::InvalidArgument("no relation matrices".into()))?;
    let n = first.rows();
    for (k, m) in mats.iter().enumerate() {
        if m.shape() != (n, n) {
            return Err(Error::Dimension(format!("relation {k} is {}x{}", m.rows(), m.cols())));
        }
    }
    let sums: Vec<Vec<f64>> = mats.iter().map(DenseMatrix::row_sums).collect();
    Ok(DenseMatrix::from_fn(n, mats.len(), |i, k| sums[k][i]))
}

pub fn independence_report(mats: &[DenseMatrix]) -> Result<IndependenceReport> {
    let deg = in_degree_matrix(mats)?;
    let n = deg.rows();
    let l = deg.cols();
    let pair_rank = |i: usize, j: usize| -> Result<usize> {
        let two = DenseMatrix::from_fn(2, l, |r, k| deg[(if r == 0 { i } else { j }, k)]);
        linalg::rank(&two, INDEPENDENCE_TOL)
    };
    let mut pairs = vec![vec![false; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let indep = pair_rank(i, j)? == 2;
            pairs[i][j] = indep;
            pairs[j][i] = indep;
        }
    }
    Ok(IndependenceReport {
        profiles: (0..n).map(|i| deg.row(i).to_vec()).collect(),
        independent_count: linalg::rank(&deg, INDEPENDENCE_TOL)?,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{load_edge_list, normalize, AggKind, Generator};

    fn star3() -> Graph {
        Graph::generate(Generator::Star(3)).unwrap()
    }

    #[test]
    fn degree_orderings() {
        let o = degree_ordering(&star3()).unwrap();
        for leaf in 1..4 {
            assert!(o.less(leaf, 0) && !o.less(0, leaf));
        }
        assert!(!o.less(1, 2));
        let k3 = Graph::generate(Generator::Complete(3)).unwrap();
        assert!(degree_ordering(&k3).unwrap().is_empty());
        let path = Graph::generate(Generator::Path(3)).unwrap();
        let p = degree_ordering(&path).unwrap();
        assert_eq!(p.pairs(), vec![(0, 1), (2, 1)]);
    }

    #[test]
    fn star_relations() {
        let g = star3();
        let ra = assign_relations(&g, &degree_ordering(&g).unwrap(), false).unwrap();
        assert_eq!(ra.edges_in(1), vec![(1, 0), (2, 0), (3, 0)]);
        assert_eq!(ra.edges_in(2), vec![(0, 1), (0, 2), (0, 3)]);
        assert!(ra.edges_in(3).is_empty());
        let swapped = assign_relations(&g, &degree_ordering(&g).unwrap(), true).unwrap();
        assert_eq!(swapped.edges_in(2), ra.edges_in(1));
        assert!(ra.roots(1).is_disjoint(&ra.roots(2)));
        assert_eq!(ra.roots(1), BTreeSet::from([0]));
        assert!(ra.to_csv().starts_with("i,j,relation\n0,1,2\n"));
    }

    #[test]
    fn triangle_and_total_orders() {
        let k3 = Graph::generate(Generator::Complete(3)).unwrap();
        let ra = assign_relations(&k3, &degree_ordering(&k3).unwrap(), false).unwrap();
        assert_eq!(ra.edges_in(3).len(), 6);
        let rand = assign_relations(&k3, &random_ordering(3, 11), false).unwrap();
        assert!(rand.edges_in(3).is_empty());
    }

    #[test]
    fn cyclic_relation_rejected() {
        // A relation matrix that is not a strict order: 0 ≺ 1 ≺ 2 ≺ 0.
        let g = Graph::generate(Generator::Cycle(3)).unwrap();
        let mut o = StrictOrder::empty(3);
        o.less[1] = true; // 0 ≺ 1
        o.less[3 + 2] = true; // 1 ≺ 2
        o.less[6] = true; // 2 ≺ 0
        assert!(matches!(assign_relations(&g, &o, false), Err(Error::CyclicRelation(1))));
        assert!(StrictOrder::from_pairs(3, &[(0, 1), (1, 2), (2, 0)]).is_err());
    }

    #[test]
    fn split_is_exact() {
        let g = star3();
        let agg = normalize(&g, AggKind::Sym, false).unwrap();
        let ra = assign_relations(&g, &degree_ordering(&g).unwrap(), false).unwrap();
        let parts = split_aggregation(&agg, &ra).unwrap();
        assert_eq!(parts.len(), 3);
        let mut sum = DenseMatrix::zeros(4, 4);
        for p in &parts {
            sum.axpy(1.0, p).unwrap();
        }
        assert_eq!(sum, agg.matrix);
        let looped = normalize(&g, AggKind::Sym, true).unwrap();
        assert!(matches!(split_aggregation(&looped, &ra), Err(Error::MissingRelation(0, 0))));
        let single = split_aggregation(&agg, &RelationAssignment::single(&g)).unwrap();
        assert_eq!(single, vec![agg.matrix.clone()]);
    }

    #[test]
    fn zero_weight_edges_stay_zero() {
        let g = load_edge_list("0 1 0\n1 2 1").unwrap();
        let ra = assign_relations(&g, &degree_ordering(&g).unwrap(), false).unwrap();
        let k = ra.get(0, 1).unwrap();
        let parts = split_matrix(&g.adjacency(), &ra).unwrap();
        assert_eq!(parts[k - 1][(0, 1)], 0.0);
    }

    #[test]
    fn star_profiles() {
        let g = star3();
        let agg = normalize(&g, AggKind::Sym, false).unwrap();
        let ra = assign_relations(&g, &degree_ordering(&g).unwrap(), false).unwrap();
        let rep = independence_report(&split_aggregation(&agg, &ra).unwrap()).unwrap();
        let s = 3f64.sqrt();
        assert!((rep.profiles[0][1] - s).abs() < 1e-15 && rep.profiles[0][0] == 0.0);
        assert!((rep.profiles[1][0] - 1.0 / s).abs() < 1e-15 && rep.profiles[1][1] == 0.0);
        assert!(rep.pairs[0][1] && !rep.pairs[1][2]);
        assert_eq!(rep.independent_count, 2);
    }

    #[test]
    fn single_relation_is_dependent() {
        let k3 = Graph::generate(Generator::Complete(3)).unwrap();
        let rw = normalize(&k3, AggKind::Rw, false).unwrap().matrix;
        let rep = independence_report(&[rw]).unwrap();
        assert!(rep.pairs.iter().flatten().all(|b| !b));
        assert_eq!(rep.independent_count, 1);
    }

    #[test]
    fn ppr_orders() {
        let k3 = Graph::generate(Generator::Complete(3)).unwrap();
        assert!(ppr_ordering(&k3, 0.15, 1e-12).unwrap().is_empty());
        let o = ppr_ordering(&star3(), 0.15, 1e-12).unwrap();
        assert!((1..4).all(|leaf| o.less(leaf, 0)));
        assert!(ppr_ordering(&star3(), 0.15, 10.0).unwrap().is_empty());
    }

    #[test]
    fn feature_order_ties() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, 0.5]]);
        let o = feature_ordering(&x);
        assert_eq!(o.pairs(), vec![(2, 0), (2, 1)]);
    }
}
