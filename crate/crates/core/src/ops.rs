//! Linear message-passing operators `X' = φ(Σ_i Ã_i X W_i)`, their Kronecker
//! forms `T = Σ_i W_iᵀ ⊗ Ã_i` acting on `vec(X)`, component-amplification
//! analyzers, power iteration, and the exact MIMO graph convolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::{dot, norm2, DenseMatrix};
use crate::metrics::MetricTrace;
use crate::spectral::{fourier, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative at pre-activation `v`; ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn apply_matrix(self, m: &DenseMatrix) -> DenseMatrix {
        if self == Activation::Identity {
            m.clone()
        } else {
            m.map(|v| self.apply(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorBundle {
    terms: Vec<(DenseMatrix, DenseMatrix)>,
    activation: Activation,
}

impl OperatorBundle {
    pub fn new(terms: Vec<(DenseMatrix, DenseMatrix)>, activation: Activation) -> Result<Self> {
        let (a0, w0) = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("bundle without terms".into()))?;
        let n = a0.rows();
        let wshape = w0.shape();
        for (k, (a, w)) in terms.iter().enumerate() {
            if a.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "term {k}: aggregation is {}x{}, expected {n}x{n}",
                    a.rows(),
                    a.cols()
                )));
            }
            if w.shape() != wshape {
                return Err(Error::Dimension(format!(
                    "term {k}: weight is {}x{}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    wshape.0,
                    wshape.1
                )));
            }
        }
        Ok(Self { terms, activation })
    }

    pub fn single(agg: DenseMatrix, weight: DenseMatrix, activation: Activation) -> Result<Self> {
        Self::new(vec![(agg, weight)], activation)
    }

    pub fn terms(&self) -> &[(DenseMatrix, DenseMatrix)] {
        &self.terms
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n(&self) -> usize {
        self.terms[0].0.rows()
    }

    /// `(d, c)` of the feature transformations.
    pub fn weight_shape(&self) -> (usize, usize) {
        self.terms[0].1.shape()
    }

    /// Replaces every aggregation by its row-wise softmax over the nonzero
    /// support; entries off the support stay zero.
    pub fn softmax_support(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(a, w)| (row_softmax_on_support(a, a), w.clone()))
            .collect();
        Self {
            terms,
            activation: self.activation,
        }
    }
}

/// Row softmax of `scores` restricted to the nonzero pattern of `support`.
/// Rows with an empty support are left at zero.
pub fn row_softmax_on_support(scores: &DenseMatrix, support: &DenseMatrix) -> DenseMatrix {
    let (n, m) = scores.shape();
    let mut out = DenseMatrix::zeros(n, m);
    for i in 0..n {
        let cols: Vec<usize> = (0..m).filter(|&j| support[(i, j)] != 0.0).collect();
        if cols.is_empty() {
            continue;
        }
        let top = cols
            .iter()
            .map(|&j| scores[(i, j)])
            .fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = cols.iter().map(|&j| (scores[(i, j)] - top).exp()).sum();
        for &j in &cols {
            out[(i, j)] = (scores[(i, j)] - top).exp() / total;
        }
    }
    out
}

/// `Σ_i Ã_i x W_i` before the activation.
pub fn step_linear(b: &OperatorBundle, x: &DenseMatrix) -> Result<DenseMatrix> {
    let (d, c) = b.weight_shape();
    if x.shape() != (b.n(), d) {
        return Err(Error::Dimension(format!(
            "state is {}x{}, bundle expects {}x{d}",
            x.rows(),
            x.cols(),
            b.n()
        )));
    }
    let mut acc = DenseMatrix::zeros(b.n(), c);
    for (a, w) in &b.terms {
        acc.axpy(1.0, &a.matmul(&x.matmul(w)?)?)?;
    }
    Ok(acc)
}

pub fn step(b: &OperatorBundle, x: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(b.activation.apply_matrix(&step_linear(b, x)?))
}

pub const DEFAULT_MAX_DENSE: usize = 4096;
pub const MAX_DENSE_ENV: &str = "MPLAB_MAX_DENSE";

/// Side length cap for materialized Kronecker operators; `MPLAB_MAX_DENSE`
/// overrides the default when it parses as an integer.
pub fn max_dense() -> usize {
    std::env::var(MAX_DENSE_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_DENSE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerOperator {
    pub t: DenseMatrix,
}

impl KroneckerOperator {
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.t.matvec(v)
    }
}

pub fn vectorize(b: &OperatorBundle) -> Result<KroneckerOperator> {
    vectorize_capped(b, max_dense())
}

pub fn vectorize_capped(b: &OperatorBundle, cap: usize) -> Result<KroneckerOperator> {
    let (d, c) = b.weight_shape();
    let n = b.n();
    let size = n * d.max(c);
    if size > cap {
        return Err(Error::CapExceeded { size, cap });
    }
    let mut t = DenseMatrix::zeros(n * c, n * d);
    for (a, w) in &b.terms {
        t.axpy(1.0, &w.transpose().kron(a))?;
    }
    Ok(KroneckerOperator { t })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaReport {
    pub i: usize,
    pub j: usize,
    /// `‖T S_i‖_F`.
    pub numerator: f64,
    /// `‖T S_j‖_F`.
    pub denominator: f64,
    /// Measured ratio; `|λ_i|` (or `σ_i`) when the denominator vanishes.
    pub ratio: f64,
    /// Ratio predicted from the spectrum.
    pub predicted: f64,
    /// Measured and predicted ratio agree within 1e-9 relative.
    pub holds: bool,
    /// The denominator component vanished.
    pub degenerate: bool,
}

/// `‖T (I_d ⊗ p)‖_F` for `T = Wᵀ ⊗ A`, computed column by column as
/// `Σ_c ‖A p e_cᵀ W‖_F²` without forming `T`.
fn kron_block_norm(a: &DenseMatrix, w: &DenseMatrix, p: &[f64]) -> Result<f64> {
    let ap = a.matvec(p)?;
    let mut total = 0.0;
    for c in 0..w.rows() {
        // A p e_cᵀ W = (A p) W_{c,:}
        total += dot(&ap, &ap) * dot(w.row(c), w.row(c));
    }
    Ok(total.sqrt())
}

fn sca_report(
    a: &DenseMatrix,
    w: &DenseMatrix,
    basis: &DenseMatrix,
    magnitudes: &[f64],
    i: usize,
    j: usize,
) -> Result<ScaReport> {
    let n = magnitudes.len();
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!("indices ({i}, {j}) out of range for {n}")));
    }
    if w.rows() == 0 || w.max_abs() == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let num = kron_block_norm(a, w, &basis.col(i))?;
    let den = kron_block_norm(a, w, &basis.col(j))?;
    let top = magnitudes.iter().cloned().fold(0.0, f64::max);
    let degenerate = magnitudes[j] <= 1e-14 * top.max(f64::MIN_POSITIVE);
    if degenerate {
        return Ok(ScaReport {
            i,
            j,
            numerator: num,
            denominator: den,
            ratio: magnitudes[i],
            predicted: f64::INFINITY,
            holds: false,
            degenerate,
        });
    }
    let ratio = num / den;
    let predicted = magnitudes[i] / magnitudes[j];
    Ok(ScaReport {
        i,
        j,
        numerator: num,
        denominator: den,
        ratio,
        predicted,
        holds: (ratio - predicted).abs() <= 1e-9 * predicted.max(1.0),
        degenerate,
    })
}

/// Amplification ratio of eigen-components `i` and `j` (zero-based, descending
/// eigenvalue order) under one step with symmetric `a_sym` and weight `w`.
pub fn sca_ratio_sym(a_sym: &DenseMatrix, w: &DenseMatrix, i: usize, j: usize) -> Result<ScaReport> {
    let spec = crate::spectral::eigendecompose_sym(a_sym)?;
    check_weight_rows(a_sym, w)?;
    let mags: Vec<f64> = spec.eigenvalues.iter().map(|l| l.abs()).collect();
    sca_report(a_sym, w, &spec.basis, &mags, i, j)
}

/// Amplification ratio of right singular components `i` and `j` of `a`.
pub fn sca_ratio_svd(a: &DenseMatrix, w: &DenseMatrix, i: usize, j: usize) -> Result<ScaReport> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{}x{} aggregation", a.rows(), a.cols())));
    }
    check_weight_rows(a, w)?;
    let s = linalg::svd(a)?;
    sca_report(a, w, &s.v, &s.sigma, i, j)
}

fn check_weight_rows(a: &DenseMatrix, _w: &DenseMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{}x{} aggregation", a.rows(), a.cols())));
    }
    Ok(())
}

/// Relative amplification of column blocks `bases` under the bundle sequence.
/// Records metric `block_<i>` = `‖T^(l)⋯T^(1)(I_d ⊗ P_i)‖_F / max_p(…)` for
/// `l = 1..=len`.
pub fn cd_trace(bundle_seq: &[OperatorBundle], bases: &[DenseMatrix]) -> Result<MetricTrace> {
    let first = bundle_seq
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty bundle sequence".into()))?;
    let n = first.n();
    let agg = &first.terms()[0].0;
    for (l, b) in bundle_seq.iter().enumerate() {
        if b.terms().len() != 1 {
            return Err(Error::InvalidArgument(format!("bundle {l} has {} terms", b.terms().len())));
        }
        if b.activation() != Activation::Identity {
            return Err(Error::InvalidArgument(format!("bundle {l} is not linear")));
        }
        if b.terms()[0].0 != *agg {
            return Err(Error::InvalidArgument(format!("bundle {l} changes the aggregation")));
        }
    }
    let d0 = first.weight_shape().0;
    let mut states: Vec<Vec<DenseMatrix>> = Vec::with_capacity(bases.len());
    for (bi, p) in bases.iter().enumerate() {
        if p.rows() != n {
            return Err(Error::Dimension(format!("basis block {bi} has {} rows", p.rows())));
        }
        let mut block = Vec::new();
        for col in 0..p.cols() {
            for c in 0..d0 {
                let mut x = DenseMatrix::zeros(n, d0);
                for r in 0..n {
                    x[(r, c)] = p[(r, col)];
                }
                block.push(x);
            }
        }
        states.push(block);
    }
    let mut trace = MetricTrace::default();
    for (l, b) in bundle_seq.iter().enumerate() {
        let (a, w) = &b.terms()[0];
        for block in states.iter_mut() {
            for x in block.iter_mut() {
                if x.cols() != w.rows() {
                    return Err(Error::Dimension(format!(
                        "bundle {l} expects {} channels, state has {}",
                        w.rows(),
                        x.cols()
                    )));
                }
                *x = a.matmul(&x.matmul(w)?)?;
            }
        }
        let norms: Vec<f64> = states
            .iter()
            .map(|block| block.iter().map(|x| x.frobenius_norm().powi(2)).sum::<f64>().sqrt())
            .collect();
        let top = norms.iter().cloned().fold(0.0, f64::max);
        for (bi, v) in norms.iter().enumerate() {
            let ratio = if top > 0.0 { v / top } else { 0.0 };
            trace.push(l + 1, &format!("block_{bi}"), ratio);
        }
        // A common rescale keeps magnitudes representable without touching ratios.
        if top > 0.0 {
            for block in states.iter_mut() {
                for x in block.iter_mut() {
                    *x = x.scale(1.0 / top);
                }
            }
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    /// Unit-norm iterate with the smallest residual.
    pub vector: Vec<f64>,
    /// Rayleigh quotient of `vector`.
    pub eigenvalue: f64,
    pub iterations: usize,
    /// `‖T x − λ x‖₂` at `vector`.
    pub residual: f64,
    pub converged: bool,
    /// Consecutive iterates flipped sign, i.e. the dominant eigenvalue is negative.
    pub oscillating: bool,
    /// A perturbed restart found an eigenvalue of larger magnitude, so the
    /// start vector had no component along the dominant eigenvector.
    pub non_dominant: bool,
}

fn power_core(t: &DenseMatrix, x0: &[f64], tol: f64, max_iter: usize) -> Result<PowerResult> {
    let nx = norm2(x0);
    if nx == 0.0 || !nx.is_finite() {
        return Err(Error::InvalidArgument("start vector must be nonzero".into()));
    }
    let mut x: Vec<f64> = x0.iter().map(|v| v / nx).collect();
    let mut best: Option<PowerResult> = None;
    let mut flips = 0usize;
    for it in 0..=max_iter {
        let y = t.matvec(&x)?;
        let lambda = dot(&x, &y);
        let residual = y
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(PowerResult {
                vector: x.clone(),
                eigenvalue: lambda,
                iterations: it,
                residual,
                converged: false,
                oscillating: false,
                non_dominant: false,
            });
        }
        if residual <= tol {
            let mut r = best.take().expect("recorded above");
            r.vector = x;
            r.eigenvalue = lambda;
            r.iterations = it;
            r.residual = residual;
            r.converged = true;
            r.oscillating = lambda < 0.0 || flips > it / 2;
            return Ok(r);
        }
        let ny = norm2(&y);
        if ny == 0.0 {
            break;
        }
        let next: Vec<f64> = y.iter().map(|v| v / ny).collect();
        if dot(&next, &x) < 0.0 {
            flips += 1;
        }
        x = next;
    }
    let mut r = best.expect("loop runs at least once");
    r.oscillating = r.eigenvalue < 0.0 || flips > max_iter / 2;
    Ok(r)
}

/// Power iteration on `t` from `x0`. Converged once the Rayleigh residual is
/// at most `tol`; a perturbed restart checks that the limit is dominant.
pub fn power_iteration(
    t: &KroneckerOperator,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<PowerResult> {
    if !t.t.is_square() || t.t.rows() != x0.len() {
        return Err(Error::Dimension(format!(
            "operator is {}x{}, start vector has length {}",
            t.t.rows(),
            t.t.cols(),
            x0.len()
        )));
    }
    let mut result = power_core(&t.t, x0, tol, max_iter)?;
    let nx = norm2(x0);
    // Fixed, dense perturbation pattern so the check is deterministic.
    let probe: Vec<f64> = (0..x0.len())
        .map(|k| x0[k] + 1e-2 * nx * (1.0 + ((k * 7919 + 13) % 101) as f64 / 101.0))
        .collect();
    let alt = power_core(&t.t, &probe, tol, max_iter)?;
    let scale = result.eigenvalue.abs().max(1.0);
    if alt.eigenvalue.abs() > result.eigenvalue.abs() + 1e-6 * scale + tol {
        result.non_dominant = true;
    }
    Ok(result)
}

/// `Σ_k U_{:,k} U_{:,k}ᵀ x W_k`.
pub fn mimo_gc_apply(spec: &Spectrum, weights: &[DenseMatrix], x: &DenseMatrix) -> Result<DenseMatrix> {
    let n = spec.n();
    if weights.len() != n {
        return Err(Error::Dimension(format!("{} weights for {n} components", weights.len())));
    }
    let b = fourier(spec, x)?;
    let c = weights[0].cols();
    let mut out = DenseMatrix::zeros(n, c);
    for (k, w) in weights.iter().enumerate() {
        if w.shape() != (x.cols(), c) {
            return Err(Error::Dimension(format!(
                "weight {k} is {}x{}, expected {}x{c}",
                w.rows(),
                w.cols(),
                x.cols()
            )));
        }
        // u_k (b_k W_k)
        let row = DenseMatrix::from_vec(1, x.cols(), b.row(k).to_vec())?.matmul(w)?;
        for i in 0..n {
            let u = spec.basis[(i, k)];
            if u == 0.0 {
                continue;
            }
            for (o, v) in out.row_mut(i).iter_mut().zip(row.as_slice()) {
                *o += u * v;
            }
        }
    }
    Ok(out)
}

/// Minimum-norm weights with `mimo_gc_apply(spec, W, x) = target`:
/// `W_k = d_kᵀ c_k / ‖d_k‖²` for Fourier rows `d_k` of `x` and `c_k` of `target`.
pub fn mimo_gc_fit(spec: &Spectrum, x: &DenseMatrix, target: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
    if target.rows() != x.rows() {
        return Err(Error::Dimension(format!(
            "target has {} rows, input has {}",
            target.rows(),
            x.rows()
        )));
    }
    let b = fourier(spec, x)?;
    let c = fourier(spec, target)?;
    (0..spec.n())
        .map(|k| {
            let dk = b.row(k);
            let nd = dot(dk, dk);
            if nd.sqrt() < 1e-12 {
                return Err(Error::VanishingComponent(k));
            }
            Ok(DenseMatrix::from_fn(x.cols(), target.cols(), |p, q| {
                dk[p] * c[(k, q)] / nd
            }))
        })
        .collect()
}

/// Bundle that maximally amplifies a full-column-rank `v`: term `i` pairs
/// `V_i V_iᵀ / ‖V_i V_iᵀ‖_F` with the single-entry weight `E_ii`.
pub fn skp_amplifier(v: &DenseMatrix) -> Result<OperatorBundle> {
    let (n, d) = v.shape();
    if d == 0 || n == 0 {
        return Err(Error::ZeroMatrix);
    }
    let r = linalg::rank(v, 1e-10)?;
    if r != d {
        return Err(Error::InvalidArgument(format!(
            "expected full column rank {d}, found rank {r}"
        )));
    }
    let terms = (0..d)
        .map(|i| {
            let col = DenseMatrix::column_vector(&v.col(i));
            let outer = col.matmul_t(&col)?;
            let f = outer.frobenius_norm();
            let mut w = DenseMatrix::zeros(d, d);
            w[(i, i)] = 1.0;
            Ok((outer.scale(1.0 / f), w))
        })
        .collect::<Result<Vec<_>>>()?;
    OperatorBundle::new(terms, Activation::Identity)
}
