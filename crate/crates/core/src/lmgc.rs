//! Localized MIMO graph convolutions: `K` edge-weighted computational graphs
//! `Ã_(k)` sharing the support of the input graph, each with its own
//! transformation `W_(k)`, so that node `i` receives `Σ_j x_j W̃_(i,j)` with
//! `W̃_(i,j) = Σ_k a_k(i, j) W_(k)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg;
use crate::matrix::{dot, DenseMatrix};
use crate::ops::{Activation, OperatorBundle};
use crate::rng;

pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum WeightFn {
    /// `a_k = tanh(LeakyReLU([x_i W_1‖…‖x_i W_K‖x_j W_1‖…‖x_j W_K]) · v_k)`.
    TanhMlp,
    /// Scores `v_k[..2c] · LeakyReLU([x_i W_k ‖ x_j W_k])`, softmax-normalized
    /// over the neighbors of `i` when the step is applied.
    SoftmaxHeads,
    /// `a_k = tanh(v_k[..2c] · [x_i W_k ‖ x_j W_k]) / √(d_i d_j)`.
    Fagcn,
    /// Fixed coefficient per graph.
    Constant(Vec<f64>),
}

impl WeightFn {
    pub fn name(&self) -> &'static str {
        match self {
            WeightFn::TanhMlp => "tanh_mlp",
            WeightFn::SoftmaxHeads => "softmax_heads",
            WeightFn::Fagcn => "fagcn",
            WeightFn::Constant(_) => "constant",
        }
    }
}

/// Gates carry no bias terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmgcParams {
    pub weights: Vec<DenseMatrix>,
    pub gates: Vec<Vec<f64>>,
    pub weight_fn: WeightFn,
}

impl LmgcParams {
    pub fn new(weights: Vec<DenseMatrix>, gates: Vec<Vec<f64>>, weight_fn: WeightFn) -> Result<Self> {
        let p = Self {
            weights,
            gates,
            weight_fn,
        };
        p.validate()?;
        Ok(p)
    }

    /// Weights and gates uniform in `[−1, 1]` scaled by `1/√fan_in`.
    pub fn random(k: usize, d: usize, c: usize, weight_fn: WeightFn, rng: &mut impl Rng) -> Result<Self> {
        let ws = (0..k)
            .map(|_| rng::uniform_matrix(rng, d, c, -1.0, 1.0).scale(1.0 / (d as f64).sqrt()))
            .collect();
        let glen = 2 * k * c;
        let gs = (0..k)
            .map(|_| {
                (0..glen)
                    .map(|_| rng.random_range(-1.0..1.0) / (glen as f64).sqrt())
                    .collect()
            })
            .collect();
        Self::new(ws, gs, weight_fn)
    }

    /// Fresh draw with the same shapes and coefficient function.
    pub fn redraw(&self, rng: &mut impl Rng) -> Result<Self> {
        let (d, c) = self.weights[0].shape();
        Self::random(self.k(), d, c, self.weight_fn.clone(), rng)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.weights[0].shape()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        let shape = self.weights[0].shape();
        if self.weights.iter().any(|w| w.shape() != shape) {
            return Err(Error::Dimension("weights differ in shape".into()));
        }
        let glen = 2 * k * shape.1;
        if self.gates.len() != k || self.gates.iter().any(|g| g.len() != glen) {
            return Err(Error::Dimension(format!("expected {k} gates of length {glen}")));
        }
        if let WeightFn::Constant(v) = &self.weight_fn {
            if v.len() != k {
                return Err(Error::Dimension(format!("{} constants for K = {k}", v.len())));
            }
        }
        Ok(())
    }

    /// All weights and gates are zero.
    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.max_abs() == 0.0)
            && self.gates.iter().flatten().all(|g| *g == 0.0)
    }
}

fn transform(x: &[f64], w: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (r, xv) in x.iter().enumerate() {
        for (o, wv) in out.iter_mut().zip(w.row(r)) {
            *o += xv * wv;
        }
    }
    out
}

/// Coefficients for edge `(i, j)` with unit degrees.
pub fn edge_coefficients(p: &LmgcParams, x_i: &[f64], x_j: &[f64]) -> Result<Vec<f64>> {
    edge_coefficients_deg(p, x_i, x_j, 1.0, 1.0)
}

pub fn edge_coefficients_deg(
    p: &LmgcParams,
    x_i: &[f64],
    x_j: &[f64],
    d_i: f64,
    d_j: f64,
) -> Result<Vec<f64>> {
    let (d, c) = p.dims();
    if x_i.len() != d || x_j.len() != d {
        return Err(Error::Dimension(format!(
            "features of length {} and {}, weights expect {d}",
            x_i.len(),
            x_j.len()
        )));
    }
    let k = p.k();
    Ok(match &p.weight_fn {
        WeightFn::Constant(v) => v.clone(),
        WeightFn::TanhMlp => {
            let mut h = Vec::with_capacity(2 * k * c);
            for x in [x_i, x_j] {
                for w in &p.weights {
                    h.extend(transform(x, w).into_iter().map(leaky));
                }
            }
            p.gates.iter().map(|v| dot(&h, v).tanh()).collect()
        }
        WeightFn::SoftmaxHeads => p
            .weights
            .iter()
            .zip(&p.gates)
            .map(|(w, v)| {
                let h: Vec<f64> = transform(x_i, w)
                    .into_iter()
                    .chain(transform(x_j, w))
                    .map(leaky)
                    .collect();
                dot(&h, &v[..2 * c])
            })
            .collect(),
        WeightFn::Fagcn => {
            let norm = (d_i * d_j).sqrt();
            p.weights
                .iter()
                .zip(&p.gates)
                .map(|(w, v)| {
                    let h: Vec<f64> = transform(x_i, w).into_iter().chain(transform(x_j, w)).collect();
                    dot(&h, &v[..2 * c]).tanh() / norm
                })
                .collect()
        }
    })
}

/// The `K` edge-weighted aggregation matrices of `p` on the support of `g`.
pub fn aggregation_matrices(g: &Graph, x: &DenseMatrix, p: &LmgcParams) -> Result<Vec<DenseMatrix>> {
    p.validate()?;
    let n = g.n();
    if x.rows() != n {
        return Err(Error::Dimension(format!("{} feature rows for {n} nodes", x.rows())));
    }
    let deg = g.degrees();
    let mut mats = vec![DenseMatrix::zeros(n, n); p.k()];
    for &(i, j, _) in g.edges() {
        let a = edge_coefficients_deg(p, x.row(i), x.row(j), deg[i], deg[j])?;
        for (m, v) in mats.iter_mut().zip(a) {
            m[(i, j)] = v;
        }
    }
    if p.weight_fn == WeightFn::SoftmaxHeads {
        for i in 0..n {
            if g.neighbors(i).is_empty() {
                return Err(Error::IsolatedNode(i));
            }
        }
        let mask = DenseMatrix::from_fn(n, n, |i, j| if g.has_edge(i, j) { 1.0 } else { 0.0 });
        mats = mats
            .iter()
            .map(|m| crate::ops::row_softmax_on_support(m, &mask))
            .collect();
    }
    for m in &mats {
        if !m.is_finite() {
            return Err(Error::NonFinite("edge coefficients".into()));
        }
    }
    Ok(mats)
}

/// The step as an operator bundle `(Ã_(k), W_(k))`.
pub fn lmgc_bundle(g: &Graph, x: &DenseMatrix, p: &LmgcParams) -> Result<OperatorBundle> {
    let mats = aggregation_matrices(g, x, p)?;
    OperatorBundle::new(mats.into_iter().zip(p.weights.iter().cloned()).collect(), Activation::Identity)
}

/// `Σ_k Ã_(k) x W_(k)`.
pub fn lmgc_step(g: &Graph, x: &DenseMatrix, p: &LmgcParams) -> Result<DenseMatrix> {
    let mats = aggregation_matrices(g, x, p)?;
    let out = combine(&mats, &p.weights, x)?;
    #[cfg(debug_assertions)]
    {
        let per_edge = per_edge_form(g, &mats, &p.weights, x)?;
        debug_assert!(per_edge.max_abs_diff(&out) <= 1e-12 * out.max_abs().max(1.0));
    }
    Ok(out)
}

/// Step with arbitrary per-edge coefficients `coef(i, j)` of length `weights.len()`.
pub fn lmgc_step_with(
    g: &Graph,
    x: &DenseMatrix,
    weights: &[DenseMatrix],
    mut coef: impl FnMut(usize, usize) -> Vec<f64>,
) -> Result<DenseMatrix> {
    let n = g.n();
    let mut mats = vec![DenseMatrix::zeros(n, n); weights.len()];
    for &(i, j, _) in g.edges() {
        let a = coef(i, j);
        if a.len() != weights.len() {
            return Err(Error::Dimension(format!("{} coefficients for {} graphs", a.len(), weights.len())));
        }
        for (m, v) in mats.iter_mut().zip(a) {
            m[(i, j)] = v;
        }
    }
    combine(&mats, weights, x)
}

fn combine(mats: &[DenseMatrix], weights: &[DenseMatrix], x: &DenseMatrix) -> Result<DenseMatrix> {
    let c = weights[0].cols();
    let mut out = DenseMatrix::zeros(x.rows(), c);
    for (a, w) in mats.iter().zip(weights) {
        out.axpy(1.0, &a.matmul(&x.matmul(w)?)?)?;
    }
    Ok(out)
}

/// `out_i = Σ_j x_j W̃_(i,j)` with the effective per-edge transformation.
pub fn per_edge_form(
    g: &Graph,
    mats: &[DenseMatrix],
    weights: &[DenseMatrix],
    x: &DenseMatrix,
) -> Result<DenseMatrix> {
    let (d, c) = weights[0].shape();
    let mut out = DenseMatrix::zeros(g.n(), c);
    for &(i, j, _) in g.edges() {
        let mut eff = DenseMatrix::zeros(d, c);
        for (a, w) in mats.iter().zip(weights) {
            eff.axpy(a[(i, j)], w)?;
        }
        let contrib = transform(x.row(j), &eff);
        for (o, v) in out.row_mut(i).iter_mut().zip(contrib) {
            *o += v;
        }
    }
    Ok(out)
}

/// Aggregate at a node with features `center` over the neighbor multiset `nbrs`.
pub fn aggregate_multiset(p: &LmgcParams, center: &[f64], nbrs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = p.k();
    let mut coeffs: Vec<Vec<f64>> = nbrs
        .iter()
        .map(|x| edge_coefficients(p, center, x))
        .collect::<Result<_>>()?;
    if p.weight_fn == WeightFn::SoftmaxHeads && !nbrs.is_empty() {
        for kk in 0..k {
            let top = coeffs.iter().map(|a| a[kk]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = coeffs.iter().map(|a| (a[kk] - top).exp()).sum();
            for a in coeffs.iter_mut() {
                a[kk] = (a[kk] - top).exp() / total;
            }
        }
    }
    let c = p.dims().1;
    let mut out = vec![0.0; c];
    for (x, a) in nbrs.iter().zip(&coeffs) {
        for (w, ak) in p.weights.iter().zip(a) {
            for (o, v) in out.iter_mut().zip(transform(x, w)) {
                *o += ak * v;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisetPair {
    pub left: (Vec<f64>, Vec<Vec<f64>>),
    pub right: (Vec<f64>, Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFailure {
    pub seed: u64,
    pub pair: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub variant: String,
    pub trials: usize,
    /// Trials in which every pair passed.
    pub passes: usize,
    pub failures: Vec<ProbeFailure>,
    /// Passing trials per pair.
    pub pair_passes: Vec<usize>,
    /// Trials whose parameter draw was identically zero.
    pub degenerate: usize,
}

impl ProbeReport {
    /// Every pair passed in at least `min` trials.
    pub fn pairs_pass(&self, min: usize) -> bool {
        self.pair_passes.iter().all(|&p| p >= min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub trials: usize,
    pub seed: u64,
    /// Draw fresh parameters per trial instead of reusing the given ones.
    pub redraw: bool,
}

pub const PROBE_TOL: f64 = 1e-9;

fn run_probe(
    p: &LmgcParams,
    pairs: &[MultisetPair],
    cfg: ProbeConfig,
    mut check: impl FnMut(&[f64], &[f64]) -> Result<bool>,
) -> Result<ProbeReport> {
    let mut report = ProbeReport {
        variant: p.weight_fn.name().to_string(),
        trials: cfg.trials,
        passes: 0,
        failures: Vec::new(),
        pair_passes: vec![0; pairs.len()],
        degenerate: 0,
    };
    for t in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(t as u64);
        let params = if cfg.redraw {
            p.redraw(&mut rng::stream(seed, "lmgc_probe"))?
        } else {
            p.clone()
        };
        if params.is_zero() {
            report.degenerate += 1;
        }
        let mut all = true;
        for (idx, pair) in pairs.iter().enumerate() {
            let a = aggregate_multiset(&params, &pair.left.0, &pair.left.1)?;
            let b = aggregate_multiset(&params, &pair.right.0, &pair.right.1)?;
            if check(&a, &b)? {
                report.pair_passes[idx] += 1;
            } else {
                all = false;
                report.failures.push(ProbeFailure { seed, pair: idx });
            }
        }
        if all {
            report.passes += 1;
        }
    }
    Ok(report)
}

/// Pairs `({{x}}, {{x,…,x}})` for 2..=m copies and `extra` random
/// distinct-element pairs, all aggregated at a node with features `base_x`.
pub fn injectivity_pairs(base_x: &[f64], m: usize, extra: usize, seed: u64) -> Result<Vec<MultisetPair>> {
    if m < 2 {
        return Err(Error::InvalidArgument("maximum multiplicity must be at least 2".into()));
    }
    let mut pairs: Vec<MultisetPair> = (2..=m)
        .map(|t| MultisetPair {
            left: (base_x.to_vec(), vec![base_x.to_vec()]),
            right: (base_x.to_vec(), vec![base_x.to_vec(); t]),
        })
        .collect();
    let mut r = rng::stream(seed, "injectivity_pairs");
    let d = base_x.len();
    for e in 0..extra {
        let size = 1 + e % 3;
        let left: Vec<Vec<f64>> = (0..size).map(|_| rng::normal_vec(&mut r, d)).collect();
        let mut right = left.clone();
        right[0] = rng::normal_vec(&mut r, d);
        if e % 2 == 1 {
            right.push(rng::normal_vec(&mut r, d));
        }
        pairs.push(MultisetPair {
            left: (base_x.to_vec(), left),
            right: (base_x.to_vec(), right),
        });
    }
    Ok(pairs)
}

/// Counts trials in which aggregated outputs of each pair differ by more than 1e-9.
pub fn injectivity_probe(
    p: &LmgcParams,
    base_x: &[f64],
    m: usize,
    cfg: ProbeConfig,
) -> Result<ProbeReport> {
    let pairs = injectivity_pairs(base_x, m, 4, cfg.seed)?;
    injectivity_probe_pairs(p, &pairs, cfg)
}

pub fn injectivity_probe_pairs(p: &LmgcParams, pairs: &[MultisetPair], cfg: ProbeConfig) -> Result<ProbeReport> {
    run_probe(p, pairs, cfg, |a, b| {
        let diff = a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()));
        Ok(diff > PROBE_TOL)
    })
}

/// Counts trials in which the two outputs of each pair stack to a rank-2 matrix.
pub fn independence_probe(p: &LmgcParams, pairs: &[MultisetPair], cfg: ProbeConfig) -> Result<ProbeReport> {
    let c = p.dims().1;
    if c < 2 {
        return Err(Error::InvalidArgument("independence needs at least 2 output channels".into()));
    }
    run_probe(p, pairs, cfg, |a, b| {
        let m = DenseMatrix::from_vec(2, c, a.iter().chain(b).copied().collect())?;
        Ok(linalg::rank(&m, PROBE_TOL)? == 2)
    })
}
