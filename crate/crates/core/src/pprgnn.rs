//! PageRank references and PPRGNN: the restart-weighted fixed-point iteration
//! `H^(k) = φ(α^(k,l) Ã H^(k−1) W + H0)` with `α^(k,l) = 1/((1+l−k) ε)`,
//! adaptive depth, and a truncated analytic backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize, AggKind, Graph};
use crate::matrix::DenseMatrix;
use crate::metrics::OVERFLOW_HI;
use crate::ops::Activation;

fn check_column_stochastic(a: &DenseMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{}x{} transition matrix", a.rows(), a.cols())));
    }
    for (j, s) in a.col_sums().iter().enumerate() {
        if *s != 0.0 && (s - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("column {j} sums to {s}")));
        }
    }
    Ok(())
}

fn one_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `r ← A_pr r`, `iters` times.
pub fn pagerank(a_pr: &DenseMatrix, r0: &[f64], iters: usize) -> Result<Vec<f64>> {
    check_column_stochastic(a_pr)?;
    if let Some(k) = r0.iter().position(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(format!("negative start mass at node {k}")));
    }
    let mut r = r0.to_vec();
    for _ in 0..iters {
        r = a_pr.matvec(&r)?;
    }
    Ok(r)
}

/// Fixed point of `s = (1−α) A_pr s + α r0`, iterated from `r0` until the
/// 1-norm residual is at most `tol`.
pub fn personalized_pagerank(
    a_pr: &DenseMatrix,
    r0: &[f64],
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    check_column_stochastic(a_pr)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("restart probability {alpha}")));
    }
    if r0.len() != a_pr.rows() {
        return Err(Error::Dimension(format!("start vector of length {}", r0.len())));
    }
    let update = |s: &[f64]| -> Result<Vec<f64>> {
        let a = a_pr.matvec(s)?;
        Ok(a.iter().zip(r0).map(|(x, r)| (1.0 - alpha) * x + alpha * r).collect())
    };
    let mut s = r0.to_vec();
    for _ in 0..max_iter {
        let next = update(&s)?;
        let residual = one_norm_diff(&next, &s);
        s = next;
        if residual <= tol {
            return Ok(s);
        }
    }
    Err(Error::NoConvergence("personalized PageRank", max_iter))
}

/// `α Σ_{k<terms} (1−α)^k A_pr^k r0`.
pub fn ppr_series(a_pr: &DenseMatrix, r0: &[f64], alpha: f64, terms: usize) -> Result<Vec<f64>> {
    let mut walk = r0.to_vec();
    let mut total = vec![0.0; r0.len()];
    let mut coef = alpha;
    for _ in 0..terms {
        for (t, w) in total.iter_mut().zip(&walk) {
            *t += coef * w;
        }
        walk = a_pr.matvec(&walk)?;
        coef *= 1.0 - alpha;
    }
    Ok(total)
}

/// PPR scores with a uniform restart distribution.
pub fn ppr_scores(g: &Graph, alpha: f64, tol: f64) -> Result<Vec<f64>> {
    let a = normalize(g, AggKind::Pr, false)?.matrix;
    let n = g.n();
    personalized_pagerank(&a, &vec![1.0 / n as f64; n], alpha, tol, 100_000)
}

/// APPNP reference iteration `H ← (1−α) Ã H + α H0`.
pub fn appnp(agg: &DenseMatrix, h0: &DenseMatrix, alpha: f64, iters: usize) -> Result<DenseMatrix> {
    let mut h = h0.clone();
    for _ in 0..iters {
        let mut next = agg.matmul(&h)?.scale(1.0 - alpha);
        next.axpy(alpha, h0)?;
        h = next;
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PprgnnConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub m: usize,
    pub j: usize,
    pub activation: Activation,
}

impl Default for PprgnnConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            gamma: 1e-4,
            max_depth: 128,
            m: 5,
            j: 1,
            activation: Activation::Identity,
        }
    }
}

impl PprgnnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon {}", self.epsilon)));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma {}", self.gamma)));
        }
        if self.m < 1 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        if self.max_depth < 1 {
            return Err(Error::InvalidArgument("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// `α^(k,l) = 1/((1+l−k) ε)`.
pub fn alpha(k: usize, l: usize, epsilon: f64) -> f64 {
    1.0 / ((1 + l - k) as f64 * epsilon)
}

fn check_inputs(agg: &DenseMatrix, w: &DenseMatrix, h0: &DenseMatrix) -> Result<()> {
    let n = h0.rows();
    if agg.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "aggregation is {}x{}, state has {n} rows",
            agg.rows(),
            agg.cols()
        )));
    }
    if w.shape() != (h0.cols(), h0.cols()) {
        return Err(Error::Dimension(format!(
            "weight is {}x{}, state has {} channels",
            w.rows(),
            w.cols(),
            h0.cols()
        )));
    }
    Ok(())
}

fn guard(h: &DenseMatrix, what: &str) -> Result<()> {
    let f = h.frobenius_norm();
    if !f.is_finite() || f > OVERFLOW_HI {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub depth: usize,
    /// False when `max_depth` was reached before `‖G^(k)‖_F < γ`.
    pub converged: bool,
}

/// Smallest `k ≥ 1` with `‖G^(k)‖_F < γ`, where `G^(0) = h0` and
/// `G^(k) = φ(Ã G^(k−1) W / (k ε))`.
pub fn estimate_depth(
    agg: &DenseMatrix,
    w: &DenseMatrix,
    h0: &DenseMatrix,
    cfg: &PprgnnConfig,
) -> Result<DepthEstimate> {
    cfg.validate()?;
    check_inputs(agg, w, h0)?;
    let mut g = h0.clone();
    for k in 1..=cfg.max_depth {
        let z = agg.matmul(&g)?.matmul(w)?.scale(alpha(1, k, cfg.epsilon));
        g = cfg.activation.apply_matrix(&z);
        guard(&g, "depth estimate")?;
        if g.frobenius_norm() < cfg.gamma {
            return Ok(DepthEstimate { depth: k, converged: true });
        }
    }
    Ok(DepthEstimate {
        depth: cfg.max_depth,
        converged: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PprgnnCache {
    pub depth: usize,
    /// `H^(k,l)` for `k = 0..=l`.
    pub states: Vec<DenseMatrix>,
    /// `Z^(k,l)` for `k = 0..=l`; `Z^(0,l)` is the iteration seed.
    pub pre: Vec<DenseMatrix>,
    pub agg: DenseMatrix,
    pub w: DenseMatrix,
    pub h0: DenseMatrix,
    pub epsilon: f64,
    pub activation: Activation,
    /// The seed `H^(0,l)` equals `φ(H0)`, so gradients flow through it.
    pub seed_is_h0: bool,
}

impl PprgnnCache {
    pub fn output(&self) -> &DenseMatrix {
        &self.states[self.depth]
    }

    /// Smallest distance of any pre-activation entry to zero.
    pub fn kink_distance(&self) -> f64 {
        self.pre
            .iter()
            .flat_map(|z| z.as_slice().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Runs `l` steps seeded with `H^(0,l) = φ(H0)`.
pub fn forward(
    agg: &DenseMatrix,
    w: &DenseMatrix,
    h0: &DenseMatrix,
    cfg: &PprgnnConfig,
    l: usize,
) -> Result<(DenseMatrix, PprgnnCache)> {
    forward_seeded(agg, w, h0, cfg, l, None)
}

/// As [`forward`], with an optional different seed `H^(0,l) = φ(seed)`. The
/// restart term stays `H0`.
pub fn forward_seeded(
    agg: &DenseMatrix,
    w: &DenseMatrix,
    h0: &DenseMatrix,
    cfg: &PprgnnConfig,
    l: usize,
    seed: Option<&DenseMatrix>,
) -> Result<(DenseMatrix, PprgnnCache)> {
    cfg.validate()?;
    check_inputs(agg, w, h0)?;
    if l < 1 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    let z0 = match seed {
        Some(s) if s.shape() != h0.shape() => {
            return Err(Error::Dimension("seed shape differs from H0".into()))
        }
        Some(s) => s.clone(),
        None => h0.clone(),
    };
    let act = cfg.activation;
    let mut states = vec![act.apply_matrix(&z0)];
    let mut pre = vec![z0];
    for k in 1..=l {
        let mut z = agg
            .matmul(&states[k - 1])?
            .matmul(w)?
            .scale(alpha(k, l, cfg.epsilon));
        z.axpy(1.0, h0)?;
        let h = act.apply_matrix(&z);
        guard(&h, "PPRGNN forward")?;
        pre.push(z);
        states.push(h);
    }
    let cache = PprgnnCache {
        depth: l,
        states,
        pre,
        agg: agg.clone(),
        w: w.clone(),
        h0: h0.clone(),
        epsilon: cfg.epsilon,
        activation: act,
        seed_is_h0: seed.is_none(),
    };
    Ok((cache.output().clone(), cache))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub h0: DenseMatrix,
    pub w: DenseMatrix,
    /// Depth `l′ = l + j` the gradients were accumulated at.
    pub depth: usize,
}

/// Truncated reverse pass. The forward recursion is re-run at `l′ = l + cfg.j`
/// (the restart weights depend on the depth) and `grad_h` is taken as the
/// gradient of the loss with respect to `H^(l′,l′)`. At most `cfg.m + 1`
/// steps are unrolled from the top.
pub fn backward(cache: &PprgnnCache, grad_h: &DenseMatrix, cfg: &PprgnnConfig) -> Result<Gradients> {
    cfg.validate()?;
    if grad_h.shape() != cache.output().shape() {
        return Err(Error::Dimension(format!(
            "gradient is {}x{}, output is {}x{}",
            grad_h.rows(),
            grad_h.cols(),
            cache.output().rows(),
            cache.output().cols()
        )));
    }
    let extended;
    let c = if cfg.j == 0 {
        cache
    } else {
        let seed = if cache.seed_is_h0 { None } else { Some(&cache.pre[0]) };
        let run_cfg = PprgnnConfig {
            epsilon: cache.epsilon,
            activation: cache.activation,
            ..*cfg
        };
        extended = forward_seeded(
            &cache.agg,
            &cache.w,
            &cache.h0,
            &run_cfg,
            cache.depth + cfg.j,
            seed,
        )?
        .1;
        &extended
    };
    let lp = c.depth;
    let act = c.activation;
    let at = c.agg.transpose();
    let wt = c.w.transpose();
    let mut grad_h0 = DenseMatrix::zeros(c.h0.rows(), c.h0.cols());
    let mut grad_w = DenseMatrix::zeros(c.w.rows(), c.w.cols());
    let mut dh = grad_h.clone();
    for k in 0..=cfg.m.min(lp) {
        let idx = lp - k;
        let dz = DenseMatrix::from_fn(dh.rows(), dh.cols(), |r, s| {
            dh[(r, s)] * act.derivative(c.pre[idx][(r, s)])
        });
        if idx == 0 {
            if c.seed_is_h0 {
                grad_h0.axpy(1.0, &dz)?;
            }
            break;
        }
        grad_h0.axpy(1.0, &dz)?;
        let a = alpha(idx, lp, c.epsilon);
        let atdz = at.matmul(&dz)?;
        grad_w.axpy(a, &c.states[idx - 1].t_matmul(&atdz)?)?;
        dh = atdz.matmul(&wt)?.scale(a);
    }
    Ok(Gradients {
        h0: grad_h0,
        w: grad_w,
        depth: lp,
    })
}

/// Central differences of `f(h0, w)` with respect to every entry of `h0` and `w`.
pub fn finite_diff<F>(
    mut f: F,
    h0: &DenseMatrix,
    w: &DenseMatrix,
    step: f64,
) -> Result<(DenseMatrix, DenseMatrix)>
where
    F: FnMut(&DenseMatrix, &DenseMatrix) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step {step}")));
    }
    let mut gh = DenseMatrix::zeros(h0.rows(), h0.cols());
    let mut probe = h0.clone();
    for k in 0..h0.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let up = f(&probe, w)?;
        probe.as_mut_slice()[k] = orig - step;
        let down = f(&probe, w)?;
        probe.as_mut_slice()[k] = orig;
        gh.as_mut_slice()[k] = (up - down) / (2.0 * step);
    }
    let mut gw = DenseMatrix::zeros(w.rows(), w.cols());
    let mut probe = w.clone();
    for k in 0..w.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let up = f(h0, &probe)?;
        probe.as_mut_slice()[k] = orig - step;
        let down = f(h0, &probe)?;
        probe.as_mut_slice()[k] = orig;
        gw.as_mut_slice()[k] = (up - down) / (2.0 * step);
    }
    Ok((gh, gw))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradRow {
    pub param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

pub const GRADCHECK_CSV_HEADER: &str = "param,analytic,numeric,rel_err";

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub rows: Vec<GradRow>,
    pub max_rel_err: f64,
    /// Some pre-activation lies within the margin of a ReLU kink, so the
    /// comparison is not meaningful.
    pub near_kink: bool,
}

impl GradCheck {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{GRADCHECK_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:?},{:?},{:?}\n", r.param, r.analytic, r.numeric, r.rel_err));
        }
        out
    }
}

/// Compares [`backward`] against central differences of the loss
/// `Σ grad_h ⊙ H^(l′,l′)` at depth `l′ = l + cfg.j`.
pub fn gradcheck(
    agg: &DenseMatrix,
    w: &DenseMatrix,
    h0: &DenseMatrix,
    grad_h: &DenseMatrix,
    cfg: &PprgnnConfig,
    l: usize,
    step: f64,
) -> Result<GradCheck> {
    let (_, cache) = forward(agg, w, h0, cfg, l)?;
    let g = backward(&cache, grad_h, cfg)?;
    let lp = l + cfg.j;
    let (_, deep) = forward(agg, w, h0, cfg, lp)?;
    let loss = |h: &DenseMatrix, ww: &DenseMatrix| -> Result<f64> {
        let (out, _) = forward(agg, ww, h, cfg, lp)?;
        Ok(crate::matrix::dot(out.as_slice(), grad_h.as_slice()))
    };
    let (nh, nw) = finite_diff(loss, h0, w, step)?;
    let mut rows = Vec::new();
    for (name, a, n) in [("h0", &g.h0, &nh), ("w", &g.w, &nw)] {
        for r in 0..a.rows() {
            for s in 0..a.cols() {
                let (x, y) = (a[(r, s)], n[(r, s)]);
                rows.push(GradRow {
                    param: format!("{name}[{r},{s}]"),
                    analytic: x,
                    numeric: y,
                    rel_err: relative_error(x, y, 1e-8),
                });
            }
        }
    }
    let max_rel_err = rows.iter().fold(0.0, |m: f64, r| m.max(r.rel_err));
    let near_kink = cfg.activation == Activation::Relu && deep.kink_distance() < 1e-3;
    Ok(GradCheck {
        rows,
        max_rel_err,
        near_kink,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Generator;

    fn identity_instance(n: usize, d: usize) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
        (DenseMatrix::identity(n), DenseMatrix::identity(d), DenseMatrix::filled(n, d, 1.0))
    }

    #[test]
    fn exponential_series() {
        let (a, w, h0) = identity_instance(3, 2);
        let (h, cache) = forward(&a, &w, &h0, &PprgnnConfig::default(), 10).unwrap();
        let partial: f64 = (0..=10).map(|k| 1.0 / (1..=k).product::<usize>().max(1) as f64).sum();
        assert!(h.max_abs_diff(&h0.scale(partial)) < 1e-14);
        assert!((partial - std::f64::consts::E).abs() < 3e-8);
        assert_eq!(cache.pre[0], h0);
        for (z, s) in cache.pre.iter().zip(&cache.states) {
            assert_eq!(*s, *z);
        }
    }

    #[test]
    fn small_depths() {
        let (a, w, h0) = identity_instance(1, 1);
        let cfg = PprgnnConfig::default();
        assert_eq!(forward(&a, &w, &h0, &cfg, 1).unwrap().0[(0, 0)], 2.0);
        assert_eq!(forward(&a, &w, &h0, &cfg, 2).unwrap().0[(0, 0)], 2.5);
        assert!(forward(&a, &w, &h0, &cfg, 0).is_err());
        let zero = DenseMatrix::zeros(1, 1);
        assert_eq!(forward(&a, &w, &zero, &cfg, 5).unwrap().0, zero);
    }

    #[test]
    fn depth_examples() {
        let (a, w, _) = identity_instance(1, 1);
        let cfg = PprgnnConfig::default();
        let unit = DenseMatrix::filled(1, 1, 1.0);
        assert_eq!(estimate_depth(&a, &w, &unit, &cfg).unwrap(), DepthEstimate { depth: 8, converged: true });
        let loose = PprgnnConfig { gamma: 2.0, ..cfg };
        assert_eq!(estimate_depth(&a, &w, &unit, &loose).unwrap().depth, 1);
        let zero = DenseMatrix::zeros(1, 1);
        assert_eq!(estimate_depth(&a, &w, &zero, &cfg).unwrap().depth, 1);
        let capped = PprgnnConfig { max_depth: 3, ..cfg };
        assert_eq!(estimate_depth(&a, &w, &unit, &capped).unwrap(), DepthEstimate { depth: 3, converged: false });
    }

    #[test]
    fn backward_depth_one_closed_form() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.5]]);
        let w = DenseMatrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.9]]);
        let h0 = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]);
        let g = DenseMatrix::from_rows(&[vec![0.7, -0.4], vec![0.2, 1.0]]);
        let cfg = PprgnnConfig { j: 0, m: 1, ..Default::default() };
        let (_, cache) = forward(&a, &w, &h0, &cfg, 1).unwrap();
        let grads = backward(&cache, &g, &cfg).unwrap();
        let expect = g.add(&a.t_matmul(&g).unwrap().matmul_t(&w).unwrap()).unwrap();
        assert!(grads.h0.max_abs_diff(&expect) < 1e-15);
        let check = gradcheck(&a, &w, &h0, &g, &cfg, 1, 1e-6).unwrap();
        assert!(check.max_rel_err < 1e-6, "{}", check.max_rel_err);
    }

    #[test]
    fn zero_upstream_gradient() {
        let (a, w, h0) = identity_instance(2, 2);
        let cfg = PprgnnConfig::default();
        let (_, cache) = forward(&a, &w, &h0, &cfg, 4).unwrap();
        let g = backward(&cache, &DenseMatrix::zeros(2, 2), &cfg).unwrap();
        assert_eq!(g.h0, DenseMatrix::zeros(2, 2));
        assert_eq!(g.w, DenseMatrix::zeros(2, 2));
        assert_eq!(g.depth, 5);
        assert!(backward(&cache, &DenseMatrix::zeros(1, 2), &cfg).is_err());
    }

    #[test]
    fn finite_diff_of_quadratic() {
        let h0 = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let w = DenseMatrix::identity(2);
        let (gh, gw) = finite_diff(|h, _| Ok(0.5 * h.frobenius_norm().powi(2)), &h0, &w, 1e-4).unwrap();
        assert!(gh.max_abs_diff(&h0) < 1e-8);
        assert_eq!(gw, DenseMatrix::zeros(2, 2));
    }

    #[test]
    fn pagerank_examples() {
        let k3 = Graph::generate(Generator::Complete(3)).unwrap();
        let a = normalize(&k3, AggKind::Pr, false).unwrap().matrix;
        let u = vec![1.0 / 3.0; 3];
        let r = pagerank(&a, &u, 5).unwrap();
        assert!(r.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(pagerank(&a, &[-1.0, 1.0, 1.0], 1).is_err());
        let s = personalized_pagerank(&a, &u, 0.3, 1e-14, 1000).unwrap();
        assert!(s.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-14));
        assert!(personalized_pagerank(&a, &u, 1.0, 1e-12, 10).is_err());
    }

    #[test]
    fn star_ppr_center_wins() {
        let g = Graph::generate(Generator::Star(3)).unwrap();
        let s = ppr_scores(&g, 0.15, 1e-13).unwrap();
        assert!(s[0] > s[1]);
        assert!((s[1] - s[2]).abs() < 1e-12);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn appnp_keeps_restart() {
        let a = DenseMatrix::identity(2);
        let h0 = DenseMatrix::filled(2, 1, 1.0);
        assert!(appnp(&a, &h0, 0.1, 20).unwrap().max_abs_diff(&h0) < 1e-15);
    }

    #[test]
    fn config_json_defaults() {
        let cfg: PprgnnConfig = serde_json::from_str(r#"{"epsilon":0.25,"activation":"tanh"}"#).unwrap();
        assert_eq!(cfg.epsilon, 0.25);
        assert_eq!(cfg.m, 5);
        assert_eq!(cfg.activation, Activation::Tanh);
        assert!(PprgnnConfig { epsilon: 0.0, ..cfg }.validate().is_err());
    }
}
