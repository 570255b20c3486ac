//! Dirichlet energies, rank-one distance and per-iteration metric traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg;
use crate::matrix::{dot, DenseMatrix};

/// `tr(xᵀ · lap · x)`.
pub fn dirichlet(x: &DenseMatrix, lap: &DenseMatrix) -> Result<f64> {
    if !lap.is_square() || lap.rows() != x.rows() {
        return Err(Error::Dimension(format!(
            "{}x{} Laplacian with {} rows of features",
            lap.rows(),
            lap.cols(),
            x.rows()
        )));
    }
    let asym = lap.asymmetry();
    if asym > 1e-10 * lap.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let lx = lap.matmul(x)?;
    let value = dot(x.as_slice(), lx.as_slice());
    #[cfg(debug_assertions)]
    if lap.row_sums().iter().all(|s| s.abs() <= 1e-12 * lap.max_abs().max(1.0)) {
        let spatial = dirichlet_zero_row_sum(x, lap);
        debug_assert!(
            (spatial - value).abs() <= 1e-8 * value.abs().max(1.0),
            "spectral {value} vs spatial {spatial}"
        );
    }
    Ok(value)
}

/// Edge-sum form valid for Laplacians with zero row sums:
/// `½ Σ_{i≠j} (−L_ij) ‖x_i − x_j‖²`.
pub fn dirichlet_zero_row_sum(x: &DenseMatrix, lap: &DenseMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..lap.rows() {
        for j in 0..lap.cols() {
            if i == j || lap[(i, j)] == 0.0 {
                continue;
            }
            let diff: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total -= lap[(i, j)] * diff;
        }
    }
    0.5 * total
}

/// Edge-sum form over the graph. With `normalized`, rows are divided by
/// `√d_i` first, which matches the symmetric normalized Laplacian.
pub fn dirichlet_spatial(g: &Graph, x: &DenseMatrix, normalized: bool) -> Result<f64> {
    if x.rows() != g.n() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} nodes",
            x.rows(),
            g.n()
        )));
    }
    let deg = g.degrees();
    let mut total = 0.0;
    for &(i, j, w) in g.edges() {
        let (si, sj) = if normalized {
            if deg[i] <= 0.0 {
                return Err(Error::IsolatedNode(i));
            }
            (1.0 / deg[i].sqrt(), 1.0 / deg[j].sqrt())
        } else {
            (1.0, 1.0)
        };
        let diff: f64 = x
            .row(i)
            .iter()
            .zip(x.row(j))
            .map(|(a, b)| (a * si - b * sj).powi(2))
            .sum();
        total += w * diff;
    }
    Ok(0.5 * total)
}

/// Dirichlet energy of `x / ‖x‖_F`.
pub fn dirichlet_normalized(x: &DenseMatrix, lap: &DenseMatrix) -> Result<f64> {
    let f = x.frobenius_norm();
    if f == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(dirichlet(x, lap)? / (f * f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RodNorm {
    /// Normalize by the largest singular value.
    #[default]
    Spectral,
    /// Normalize by the Frobenius norm.
    Frobenius,
}

impl RodNorm {
    pub fn name(self) -> &'static str {
        match self {
            RodNorm::Spectral => "spectral",
            RodNorm::Frobenius => "frobenius",
        }
    }
}

/// Rank-one distance with spectral normalization.
pub fn rank_one_distance(x: &DenseMatrix) -> Result<f64> {
    rank_one_distance_with(x, RodNorm::Spectral)
}

/// `‖x/‖x‖ − uvᵀ/‖uvᵀ‖₂‖_*` with `u` the column of largest norm and `v` the
/// row of largest norm, signed so that `v` agrees with `x` at their crossing.
/// Ties go to the lowest index.
pub fn rank_one_distance_with(x: &DenseMatrix, norm: RodNorm) -> Result<f64> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 || x.max_abs() == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let col_norms = x.t_matmul(x)?;
    let i = argmax((0..d).map(|c| col_norms[(c, c)]));
    let j = argmax((0..n).map(|r| dot(x.row(r), x.row(r))));
    let u = x.col(i);
    let sign = if x[(j, i)] > 0.0 { 1.0 } else { -1.0 };
    let v: Vec<f64> = x.row(j).iter().map(|e| sign * e).collect();
    let nu = crate::matrix::norm2(&u);
    let nv = crate::matrix::norm2(&v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("selected row or column is zero".into()));
    }
    let scale = match norm {
        RodNorm::Spectral => linalg::spectral_norm(x)?,
        RodNorm::Frobenius => x.frobenius_norm(),
    };
    let s = 1.0 / (nu * nv);
    let diff = DenseMatrix::from_fn(n, d, |r, c| x[(r, c)] / scale - u[r] * v[c] * s);
    linalg::nuclear_norm(&diff)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, v) in values.enumerate() {
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    /// Normalized Dirichlet energy with the unnormalized Laplacian.
    #[serde(rename = "E_L")]
    EnergyL,
    /// Normalized Dirichlet energy with the symmetric normalized Laplacian.
    #[serde(rename = "E_sym")]
    EnergySym,
    #[serde(rename = "ROD")]
    Rod,
    #[serde(rename = "frob")]
    Frob,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::EnergyL => "E_L",
            Metric::EnergySym => "E_sym",
            Metric::Rod => "ROD",
            Metric::Frob => "frob",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub metric: String,
    pub value: f64,
    /// Set when the state left the representable range; `value` is then meaningless.
    pub overflow: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTrace {
    pub records: Vec<TraceRecord>,
    pub metadata: BTreeMap<String, String>,
}

pub const TRACE_CSV_HEADER: &str = "iteration,metric,value";

impl MetricTrace {
    pub fn push(&mut self, iteration: usize, metric: &str, value: f64) {
        self.records.push(TraceRecord {
            iteration,
            metric: metric.to_string(),
            value,
            overflow: !value.is_finite(),
        });
    }

    pub fn push_overflow(&mut self, iteration: usize, metric: &str) {
        self.records.push(TraceRecord {
            iteration,
            metric: metric.to_string(),
            value: f64::INFINITY,
            overflow: true,
        });
    }

    /// Finite values recorded for `metric`, in iteration order.
    pub fn series(&self, metric: &str) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.metric == metric && !r.overflow)
            .map(|r| (r.iteration, r.value))
            .collect()
    }

    pub fn overflowed(&self) -> bool {
        self.records.iter().any(|r| r.overflow)
    }

    pub fn extend(&mut self, other: MetricTrace) {
        self.records.extend(other.records);
        self.metadata.extend(other.metadata);
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRACE_CSV_HEADER}\n");
        for r in &self.records {
            if r.overflow {
                let _ = writeln!(out, "{},{},inf_flag", r.iteration, r.metric);
            } else {
                let _ = writeln!(out, "{},{},{:?}", r.iteration, r.metric, r.value);
            }
        }
        out
    }
}

/// Laplacians needed by the energy metrics.
#[derive(Debug, Clone, Default)]
pub struct TraceSetup {
    pub metrics: Vec<Metric>,
    pub lap: Option<DenseMatrix>,
    pub lap_sym: Option<DenseMatrix>,
    pub rod_norm: RodNorm,
}

pub const OVERFLOW_HI: f64 = 1e150;
pub const OVERFLOW_LO: f64 = 1e-150;

fn record(setup: &TraceSetup, trace: &mut MetricTrace, k: usize, x: &DenseMatrix) -> Result<()> {
    let f = x.frobenius_norm();
    let out_of_range = !(OVERFLOW_LO..=OVERFLOW_HI).contains(&f) || !x.is_finite();
    for m in &setup.metrics {
        if out_of_range {
            trace.push_overflow(k, m.name());
            continue;
        }
        let value = match m {
            Metric::Frob => f,
            Metric::Rod => rank_one_distance_with(x, setup.rod_norm)?,
            Metric::EnergyL => {
                let lap = setup.lap.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("E_L requested without a Laplacian".into())
                })?;
                dirichlet_normalized(x, lap)?
            }
            Metric::EnergySym => {
                let lap = setup.lap_sym.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("E_sym requested without a Laplacian".into())
                })?;
                dirichlet_normalized(x, lap)?
            }
        };
        trace.push(k, m.name(), value);
    }
    Ok(())
}

/// Applies `step(k, x)` for `k = 1..=iters`, recording metrics for the initial
/// state (iteration 0) and after each step. Stops after recording an overflow row
/// once `‖x‖_F` leaves `[1e-150, 1e150]`.
pub fn trace_metrics<F>(
    mut step: F,
    x0: &DenseMatrix,
    iters: usize,
    setup: &TraceSetup,
) -> Result<MetricTrace>
where
    F: FnMut(usize, &DenseMatrix) -> Result<DenseMatrix>,
{
    if iters == 0 {
        return Err(Error::InvalidArgument("iteration count must be at least 1".into()));
    }
    let mut trace = MetricTrace::default();
    trace
        .metadata
        .insert("rod_norm".into(), setup.rod_norm.name().into());
    let wrap = |k: usize| move |e: Error| Error::Step { iteration: k, source: Box::new(e) };
    record(setup, &mut trace, 0, x0).map_err(wrap(0))?;
    if trace.overflowed() {
        return Ok(trace);
    }
    let mut x = x0.clone();
    for k in 1..=iters {
        x = step(k, &x).map_err(wrap(k))?;
        record(setup, &mut trace, k, &x).map_err(wrap(k))?;
        if trace.overflowed() {
            trace.metadata.insert("overflow_at".into(), k.to_string());
            break;
        }
    }
    Ok(trace)
}

/// Both sides of `‖φ(A X W)‖_F ≤ σ₁(W) ‖X‖_F`.
pub fn vanishing_norm_sides(
    agg: &DenseMatrix,
    x: &DenseMatrix,
    w: &DenseMatrix,
    act: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    let lhs = agg.matmul(x)?.matmul(w)?.map(act).frobenius_norm();
    let rhs = linalg::spectral_norm(w)? * x.frobenius_norm();
    Ok((lhs, rhs))
}

/// Both sides of `E(φ(A_sym X W)) ≤ σ₁² |λ₂| E(X)`, energies taken with
/// `lap_sym`, `λ₂` the second eigenvalue of `a_sym` in magnitude.
pub fn energy_bound_sides(
    a_sym: &DenseMatrix,
    lap_sym: &DenseMatrix,
    x: &DenseMatrix,
    w: &DenseMatrix,
    act: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    let (vals, _) = linalg::symmetric_eigen(a_sym)?;
    let mut mags: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let lambda2 = mags.get(1).copied().unwrap_or(0.0);
    let sigma = linalg::spectral_norm(w)?;
    let y = a_sym.matmul(x)?.matmul(w)?.map(act);
    Ok((dirichlet(&y, lap_sym)?, sigma * sigma * lambda2 * dirichlet(x, lap_sym)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{laplacian, normalize, AggKind, Generator, LaplacianKind};

    fn k3() -> Graph {
        Graph::generate(Generator::Complete(3)).unwrap()
    }

    #[test]
    fn dirichlet_examples() {
        let g = k3();
        let l = laplacian(&g, LaplacianKind::Unnormalized).unwrap();
        let e1 = DenseMatrix::column_vector(&[1.0, 0.0, 0.0]);
        assert!((dirichlet(&e1, &l).unwrap() - 2.0).abs() < 1e-15);
        assert!((dirichlet_normalized(&e1, &l).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(dirichlet(&DenseMatrix::filled(3, 1, 1.0), &l).unwrap(), 0.0);
        assert!((dirichlet_spatial(&g, &e1, false).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sym_null_space() {
        let g = Graph::generate(Generator::Star(4)).unwrap();
        let ls = laplacian(&g, LaplacianKind::Sym).unwrap();
        let x = DenseMatrix::column_vector(&g.degrees().iter().map(|d| d.sqrt()).collect::<Vec<_>>());
        assert!(dirichlet(&x, &ls).unwrap().abs() < 1e-12);
        assert!(dirichlet_normalized(&x, &ls).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sym_spatial_form_agrees() {
        let g = Graph::generate(Generator::KarateClub).unwrap();
        let ls = laplacian(&g, LaplacianKind::Sym).unwrap();
        let x = DenseMatrix::from_fn(34, 3, |i, j| ((i * 13 + j * 7) % 11) as f64 - 5.0);
        let a = dirichlet(&x, &ls).unwrap();
        let b = dirichlet_spatial(&g, &x, true).unwrap();
        assert!((a - b).abs() < 1e-10 * a);
    }

    #[test]
    fn normalized_energy_is_scale_free() {
        let g = k3();
        let l = laplacian(&g, LaplacianKind::Unnormalized).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0]]);
        let a = dirichlet_normalized(&x, &l).unwrap();
        let b = dirichlet_normalized(&x.scale(7.0), &l).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(dirichlet_normalized(&DenseMatrix::zeros(3, 1), &l), Err(Error::ZeroMatrix)));
    }

    #[test]
    fn dirichlet_rejects_bad_laplacian() {
        let x = DenseMatrix::zeros(2, 1);
        let l = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]);
        assert!(matches!(dirichlet(&x, &l), Err(Error::NotSymmetric(_))));
        assert!(dirichlet(&DenseMatrix::zeros(3, 1), &DenseMatrix::identity(2)).is_err());
    }

    #[test]
    fn rod_of_rank_one_is_zero() {
        let a = DenseMatrix::column_vector(&[1.0, 2.0, 0.5]);
        let b = DenseMatrix::column_vector(&[3.0, 0.25]);
        let x = a.matmul_t(&b).unwrap();
        assert!(rank_one_distance(&x).unwrap() < 1e-12);
        assert!(rank_one_distance(&x.scale(-2.0)).unwrap() < 1e-12);
        assert!(rank_one_distance_with(&x, RodNorm::Frobenius).unwrap() < 1e-12);
    }

    #[test]
    fn rod_of_identity() {
        // x/‖x‖₂ = I, surrogate e₁e₁ᵀ, difference diag(0, 1).
        let v = rank_one_distance(&DenseMatrix::identity(2)).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        let f = rank_one_distance_with(&DenseMatrix::identity(2), RodNorm::Frobenius).unwrap();
        // diag(1/√2 − 1, 1/√2)
        let expect = (1.0 - 0.5f64.sqrt()) + 0.5f64.sqrt();
        assert!((f - expect).abs() < 1e-14);
    }

    #[test]
    fn rod_is_scale_invariant() {
        let x = DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.3], vec![0.4, 1.0, 2.0]]);
        let a = rank_one_distance(&x).unwrap();
        let b = rank_one_distance(&x.scale(3.0)).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(rank_one_distance(&DenseMatrix::zeros(2, 2)), Err(Error::ZeroMatrix)));
    }

    #[test]
    fn identity_step_gives_constant_trace() {
        let g = k3();
        let setup = TraceSetup {
            metrics: vec![Metric::EnergyL, Metric::Rod, Metric::Frob],
            lap: Some(laplacian(&g, LaplacianKind::Unnormalized).unwrap()),
            ..Default::default()
        };
        let x0 = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let t = trace_metrics(|_, x| Ok(x.clone()), &x0, 5, &setup).unwrap();
        assert_eq!(t.records.len(), 18);
        for m in ["E_L", "ROD", "frob"] {
            let s = t.series(m);
            assert!(s.iter().all(|(_, v)| *v == s[0].1));
        }
        assert_eq!(t.metadata["rod_norm"], "spectral");
    }

    #[test]
    fn trace_stops_on_overflow() {
        let setup = TraceSetup {
            metrics: vec![Metric::Frob],
            ..Default::default()
        };
        let x0 = DenseMatrix::identity(2);
        let t = trace_metrics(|_, x| Ok(x.scale(1e40)), &x0, 20, &setup).unwrap();
        assert!(t.overflowed());
        assert_eq!(t.records.last().unwrap().iteration, 4);
        assert!(t.to_csv().ends_with("4,frob,inf_flag\n"));
        assert!(trace_metrics(|_, x| Ok(x.clone()), &x0, 0, &setup).is_err());
    }

    #[test]
    fn step_errors_carry_iteration() {
        let setup = TraceSetup {
            metrics: vec![Metric::Frob],
            ..Default::default()
        };
        let err = trace_metrics(
            |k, x| if k == 3 { Err(Error::ZeroMatrix) } else { Ok(x.clone()) },
            &DenseMatrix::identity(2),
            5,
            &setup,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Step { iteration: 3, .. }));
    }

    #[test]
    fn bounds_on_triangle() {
        let g = k3();
        let a = normalize(&g, AggKind::Sym, false).unwrap().matrix;
        let ls = laplacian(&g, LaplacianKind::Sym).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0], vec![-3.0, 0.0]]);
        let w = DenseMatrix::from_rows(&[vec![0.3, 1.2], vec![-0.7, 0.4]]);
        let relu = |v: f64| v.max(0.0);
        let (l, r) = vanishing_norm_sides(&a, &x, &w, relu).unwrap();
        assert!(l <= r);
        let (l, r) = energy_bound_sides(&a, &ls, &x, &w, relu).unwrap();
        assert!(l <= r + 1e-12);
    }
}
