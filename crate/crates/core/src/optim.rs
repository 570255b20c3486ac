//! Adam, three losses with analytic gradients, and a hand-differentiated stack of
//! sum-of-Kronecker-product message-passing layers used by the desk-scale
//! training experiments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Generator, Graph};
use crate::matrix::DenseMatrix;
use crate::ops::{row_softmax_on_support, Activation};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new(params: &[DenseMatrix], hyper: AdamHyper) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
        Self {
            hyper,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [DenseMatrix], grads: &[DenseMatrix], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (idx, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[idx].shape() {
            return Err(Error::Dimension(format!("parameter {idx}: shape mismatch")));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {idx}")));
        }
    }
    state.step += 1;
    let h = state.hyper;
    let c1 = 1.0 - h.beta1.powi(state.step as i32);
    let c2 = 1.0 - h.beta2.powi(state.step as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.as_mut_slice();
        let md = m.as_mut_slice();
        let vd = v.as_mut_slice();
        for (e, &gv) in g.as_slice().iter().enumerate() {
            md[e] = h.beta1 * md[e] + (1.0 - h.beta1) * gv;
            vd[e] = h.beta2 * vd[e] + (1.0 - h.beta2) * gv * gv;
            let mh = md[e] / c1;
            let vh = vd[e] / c2;
            pd[e] -= h.lr * mh / (vh.sqrt() + h.eps);
        }
    }
    Ok(())
}

fn check_shapes(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared error and its gradient.
pub fn mse(pred: &DenseMatrix, target: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    check_shapes(pred, target)?;
    let n = pred.as_slice().len() as f64;
    let diff = pred.sub(target)?;
    let val = diff.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
    Ok((val, diff.scale(2.0 / n)))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean elementwise binary cross-entropy of `sigmoid(logits)` against 0/1 labels.
pub fn bce_sigmoid(logits: &DenseMatrix, labels: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    check_shapes(logits, labels)?;
    if labels.as_slice().iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidArgument("binary labels must be 0 or 1".into()));
    }
    let n = logits.as_slice().len() as f64;
    let mut val = 0.0;
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    for ((g, &z), &y) in grad.as_mut_slice().iter_mut().zip(logits.as_slice()).zip(labels.as_slice()) {
        val += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        *g = (sigmoid(z) - y) / n;
    }
    Ok((val / n, grad))
}

/// Mean row-wise softmax cross-entropy against class ids.
pub fn ce_softmax(logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), logits.rows())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::InvalidArgument(format!("class id {bad} out of range")));
    }
    let n = logits.rows() as f64;
    let mut val = 0.0;
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + row.iter().map(|z| (z - top).exp()).sum::<f64>().ln();
        val += lse - row[y];
        for (c, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = ((row[c] - lse).exp() - if c == y { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((val / n, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Loss {
    Mse(DenseMatrix),
    BceSigmoid(DenseMatrix),
    CeSoftmax(Vec<usize>),
}

impl Loss {
    pub fn eval(&self, out: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
        match self {
            Loss::Mse(t) => mse(out, t),
            Loss::BceSigmoid(t) => bce_sigmoid(out, t),
            Loss::CeSoftmax(y) => ce_softmax(out, y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub layers: usize,
    /// Kronecker terms per layer.
    pub terms: usize,
    pub d: usize,
    /// Affine head width; `None` keeps the last layer's output.
    pub head: Option<usize>,
    pub softmax: bool,
    pub learn_agg: bool,
    pub activation: Activation,
}

/// `X^(k) = φ(Σ_i τ(Ã_(i)^(k)) X^(k−1) W_(i)^(k))` for `k = 1..=l`, then an
/// optional affine head. Aggregation entries live on a fixed support.
#[derive(Debug, Clone, PartialEq)]
pub struct StackModel {
    pub spec: StackSpec,
    pub support: DenseMatrix,
    pub params: Vec<DenseMatrix>,
}

#[derive(Debug, Clone)]
pub struct StackCache {
    inputs: Vec<DenseMatrix>,
    pre: Vec<DenseMatrix>,
    aggs: Vec<Vec<DenseMatrix>>,
    pub output: DenseMatrix,
}

impl StackModel {
    /// Aggregation entries `N(0, agg_std²)` on the support, weights `N(0, w_std²)`,
    /// head `N(0, 1/d)` with zero bias.
    pub fn init(
        spec: StackSpec,
        support: DenseMatrix,
        agg_std: f64,
        w_std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if spec.layers == 0 || spec.terms == 0 || spec.d == 0 {
            return Err(Error::InvalidArgument("layers, terms and width must be positive".into()));
        }
        if !support.is_square() {
            return Err(Error::Dimension("support must be square".into()));
        }
        let n = support.rows();
        let mut params = Vec::new();
        for _ in 0..spec.layers {
            for _ in 0..spec.terms {
                let a = rng::normal_matrix(rng, n, n, agg_std).hadamard(&support)?;
                params.push(a);
            }
            for _ in 0..spec.terms {
                params.push(rng::normal_matrix(rng, spec.d, spec.d, w_std));
            }
        }
        if let Some(c) = spec.head {
            params.push(rng::normal_matrix(rng, spec.d, c, 1.0 / (spec.d as f64).sqrt()));
            params.push(DenseMatrix::zeros(1, c));
        }
        Ok(Self { spec, support, params })
    }

    fn agg_index(&self, k: usize, i: usize) -> usize {
        k * 2 * self.spec.terms + i
    }

    fn w_index(&self, k: usize, i: usize) -> usize {
        k * 2 * self.spec.terms + self.spec.terms + i
    }

    fn head_index(&self) -> usize {
        2 * self.spec.terms * self.spec.layers
    }

    pub fn forward(&self, x0: &DenseMatrix) -> Result<StackCache> {
        let n = self.support.rows();
        if x0.shape() != (n, self.spec.d) {
            return Err(Error::Dimension(format!(
                "input {:?}, model expects ({n}, {})",
                x0.shape(),
                self.spec.d
            )));
        }
        let act = self.spec.activation;
        let mut x = x0.clone();
        let mut inputs = Vec::with_capacity(self.spec.layers);
        let mut pre = Vec::with_capacity(self.spec.layers);
        let mut aggs = Vec::with_capacity(self.spec.layers);
        for k in 0..self.spec.layers {
            let mut z = DenseMatrix::zeros(n, self.spec.d);
            let mut layer_aggs = Vec::with_capacity(self.spec.terms);
            for i in 0..self.spec.terms {
                let raw = &self.params[self.agg_index(k, i)];
                let b = if self.spec.softmax {
                    row_softmax_on_support(raw, &self.support)
                } else {
                    raw.clone()
                };
                z.axpy(1.0, &b.matmul(&x)?.matmul(&self.params[self.w_index(k, i)])?)?;
                layer_aggs.push(b);
            }
            let next = act.apply_matrix(&z);
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
            aggs.push(layer_aggs);
        }
        let output = match self.spec.head {
            Some(_) => {
                let h = self.head_index();
                let mut o = x.matmul(&self.params[h])?;
                let b = self.params[h + 1].row(0).to_vec();
                for r in 0..o.rows() {
                    for (v, bv) in o.row_mut(r).iter_mut().zip(&b) {
                        *v += bv;
                    }
                }
                inputs.push(x);
                o
            }
            None => {
                inputs.push(x.clone());
                x
            }
        };
        Ok(StackCache {
            inputs,
            pre,
            aggs,
            output,
        })
    }

    /// Reverse accumulation of `dL/d output` to every parameter.
    pub fn backward(&self, cache: &StackCache, d_out: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
        check_shapes(d_out, &cache.output)?;
        let mut grads: Vec<DenseMatrix> = self
            .params
            .iter()
            .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
            .collect();
        let layers = self.spec.layers;
        let mut dx = match self.spec.head {
            Some(_) => {
                let h = self.head_index();
                grads[h] = cache.inputs[layers].t_matmul(d_out)?;
                grads[h + 1] = DenseMatrix::from_vec(1, d_out.cols(), d_out.col_sums())?;
                d_out.matmul_t(&self.params[h])?
            }
            None => d_out.clone(),
        };
        let act = self.spec.activation;
        for k in (0..layers).rev() {
            let dz = DenseMatrix::from_fn(dx.rows(), dx.cols(), |r, c| {
                dx[(r, c)] * act.derivative(cache.pre[k][(r, c)])
            });
            let x = &cache.inputs[k];
            let mut dprev = DenseMatrix::zeros(x.rows(), x.cols());
            for i in 0..self.spec.terms {
                let b = &cache.aggs[k][i];
                let w = &self.params[self.w_index(k, i)];
                grads[self.w_index(k, i)] = b.matmul(x)?.t_matmul(&dz)?;
                let dzw = dz.matmul_t(w)?;
                dprev.axpy(1.0, &b.t_matmul(&dzw)?)?;
                if self.spec.learn_agg {
                    let db = dzw.matmul_t(x)?;
                    let da = if self.spec.softmax {
                        softmax_backward(b, &db)
                    } else {
                        db
                    };
                    grads[self.agg_index(k, i)] = da.hadamard(&self.support)?;
                }
            }
            dx = dprev;
        }
        Ok(grads)
    }

    pub fn loss_and_grads(&self, x0: &DenseMatrix, loss: &Loss) -> Result<(f64, Vec<DenseMatrix>, DenseMatrix)> {
        let cache = self.forward(x0)?;
        let (val, d_out) = loss.eval(&cache.output)?;
        let grads = self.backward(&cache, &d_out)?;
        Ok((val, grads, cache.output))
    }
}

/// Row-softmax backward: `dA_ij = B_ij (dB_ij − Σ_m B_im dB_im)`.
fn softmax_backward(b: &DenseMatrix, db: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(b.rows(), b.cols());
    for i in 0..b.rows() {
        let s: f64 = b.row(i).iter().zip(db.row(i)).map(|(x, y)| x * y).sum();
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = b[(i, j)] * (db[(i, j)] - s);
        }
    }
    out
}

/// Largest relative error between analytic and central-difference gradients,
/// skipping parameters whose entries are off the aggregation support.
pub fn stack_gradcheck(model: &StackModel, x0: &DenseMatrix, loss: &Loss, h: f64) -> Result<f64> {
    let (_, grads, _) = model.loss_and_grads(x0, loss)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let agg_params = 2 * model.spec.terms * model.spec.layers;
    for p in 0..model.params.len() {
        let is_agg = p < agg_params && (p % (2 * model.spec.terms)) < model.spec.terms;
        if is_agg && !model.spec.learn_agg {
            continue;
        }
        for e in 0..model.params[p].as_slice().len() {
            if is_agg && model.support.as_slice()[e] == 0.0 {
                continue;
            }
            let orig = model.params[p].as_slice()[e];
            probe.params[p].as_mut_slice()[e] = orig + h;
            let up = loss.eval(&probe.forward(x0)?.output)?.0;
            probe.params[p].as_mut_slice()[e] = orig - h;
            let down = loss.eval(&probe.forward(x0)?.output)?.0;
            probe.params[p].as_mut_slice()[e] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[p].as_slice()[e];
            let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub record_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    pub final_loss: f64,
    pub min_loss: f64,
    pub final_accuracy: Option<f64>,
    pub diverged_at: Option<usize>,
}

/// Full-batch Adam. A non-finite loss or gradient ends the run and is
/// reported in `diverged_at` rather than as an error.
pub fn train(
    model: &mut StackModel,
    x0: &DenseMatrix,
    loss: &Loss,
    cfg: TrainConfig,
    accuracy: Option<&dyn Fn(&DenseMatrix) -> f64>,
) -> Result<TrainOutcome> {
    let mut state = AdamState::new(&model.params, AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
    let every = cfg.record_every.max(1);
    let mut records = Vec::new();
    let mut min_loss = f64::INFINITY;
    let mut last = (f64::NAN, None);
    let mut diverged_at = None;
    for step in 0..=cfg.steps {
        let (val, grads, out) = model.loss_and_grads(x0, loss)?;
        let acc = accuracy.map(|f| f(&out));
        if !val.is_finite() {
            diverged_at = Some(step);
            break;
        }
        min_loss = min_loss.min(val);
        last = (val, acc);
        if step % every == 0 || step == cfg.steps {
            records.push(TrainRecord { step, loss: val, accuracy: acc });
        }
        if step == cfg.steps {
            break;
        }
        match adam_step(&mut model.params, &grads, &mut state) {
            Ok(()) => {}
            Err(Error::NonFinite(_)) => {
                diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome {
        records,
        final_loss: last.0,
        min_loss,
        final_accuracy: last.1,
        diverged_at,
    })
}

pub const TRAIN_CSV_HEADER: &str = "step,seed,metric,value";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticVariant {
    Kp,
    Skp,
    SoftmaxSkp,
}

impl SyntheticVariant {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticVariant::Kp => "KP",
            SyntheticVariant::Skp => "SKP",
            SyntheticVariant::SoftmaxSkp => "softmax_SKP",
        }
    }

    pub fn terms(self) -> usize {
        match self {
            SyntheticVariant::Kp => 1,
            _ => 2,
        }
    }
}

pub fn synthetic_labels() -> DenseMatrix {
    DenseMatrix::from_rows(&[
        vec![1.0, 1.0, 1.0],
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ])
}

/// Fraction of rows whose thresholded sigmoid outputs match every label.
pub fn exact_match_accuracy(logits: &DenseMatrix, labels: &DenseMatrix) -> f64 {
    let hits = (0..logits.rows())
        .filter(|&i| {
            logits
                .row(i)
                .iter()
                .zip(labels.row(i))
                .all(|(&z, &y)| (z > 0.0) == (y > 0.5))
        })
        .count();
    hits as f64 / logits.rows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub variant: SyntheticVariant,
    pub l: usize,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub lr: f64,
    pub learn_agg: bool,
    pub activation: Activation,
    pub agg_std: f64,
    pub w_std: f64,
    /// Four-node support; `None` is the complete graph.
    pub graph: Option<Generator>,
    pub self_loops: bool,
    pub record_every: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            variant: SyntheticVariant::Skp,
            l: 8,
            seeds: (0..10).collect(),
            steps: 5000,
            lr: 1e-3,
            learn_agg: true,
            activation: Activation::Identity,
            agg_std: 1.0,
            w_std: 1.0,
            graph: None,
            self_loops: true,
            record_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub accuracy: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub seeds: Vec<SeedResult>,
    /// Per-seed records in seed order.
    pub traces: Vec<Vec<TrainRecord>>,
}

impl TrainReport {
    pub fn mean_accuracy(&self) -> f64 {
        self.seeds.iter().map(|s| s.accuracy).sum::<f64>() / self.seeds.len().max(1) as f64
    }

    pub fn mean_final_loss(&self) -> f64 {
        self.seeds.iter().map(|s| s.final_loss).sum::<f64>() / self.seeds.len().max(1) as f64
    }

    /// Mean relative loss reduction `(L_0 − L_final) / L_0`.
    pub fn mean_loss_reduction(&self) -> f64 {
        self.seeds
            .iter()
            .map(|s| (s.initial_loss - s.final_loss) / s.initial_loss)
            .sum::<f64>()
            / self.seeds.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_CSV_HEADER);
        out.push('\n');
        for (s, recs) in self.seeds.iter().zip(&self.traces) {
            for r in recs {
                out.push_str(&format!("{},{},loss,{:?}\n", r.step, s.seed, r.loss));
                if let Some(a) = r.accuracy {
                    out.push_str(&format!("{},{},accuracy,{:?}\n", r.step, s.seed, a));
                }
            }
        }
        out
    }
}

fn synthetic_support(cfg: &SyntheticConfig) -> Result<DenseMatrix> {
    let g = match &cfg.graph {
        Some(gen) => Graph::generate(*gen)?,
        None => Graph::generate(Generator::Complete(4))?,
    };
    if g.n() != 4 {
        return Err(Error::InvalidArgument(format!("synthetic task needs 4 nodes, graph has {}", g.n())));
    }
    let g = if cfg.self_loops { g.with_self_loops() } else { g };
    Ok(g.adjacency().map(|v| if v != 0.0 { 1.0 } else { 0.0 }))
}

/// The four-node multi-label task on a complete support with self-loops.
pub fn train_synthetic(cfg: &SyntheticConfig) -> Result<TrainReport> {
    if cfg.l == 0 {
        return Err(Error::InvalidArgument("at least one iteration required".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    let labels = synthetic_labels();
    let loss = Loss::BceSigmoid(labels.clone());
    let support = synthetic_support(cfg)?;
    let spec = StackSpec {
        layers: cfg.l,
        terms: cfg.variant.terms(),
        d: 6,
        head: Some(3),
        softmax: cfg.variant == SyntheticVariant::SoftmaxSkp,
        learn_agg: cfg.learn_agg,
        activation: cfg.activation,
    };
    let acc = |o: &DenseMatrix| exact_match_accuracy(o, &labels);
    let mut report = TrainReport {
        variant: cfg.variant.name().into(),
        seeds: Vec::new(),
        traces: Vec::new(),
    };
    for &seed in &cfg.seeds {
        let x0 = rng::normal_matrix(&mut rng::stream(seed, "synthetic_x0"), 4, 6, 1.0);
        let mut model = StackModel::init(
            spec.clone(),
            support.clone(),
            cfg.agg_std,
            cfg.w_std,
            &mut rng::stream(seed, "synthetic_params"),
        )?;
        let out = train(
            &mut model,
            &x0,
            &loss,
            TrainConfig {
                steps: cfg.steps,
                lr: cfg.lr,
                record_every: cfg.record_every,
            },
            Some(&acc),
        )?;
        report.seeds.push(SeedResult {
            seed,
            accuracy: out.final_accuracy.unwrap_or(0.0),
            initial_loss: out.records.first().map_or(f64::NAN, |r| r.loss),
            final_loss: out.final_loss,
            diverged_at: out.diverged_at,
        });
        report.traces.push(out.records);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n: usize,
    pub p: f64,
    pub d: usize,
    pub graph_seed: u64,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub lrs: Vec<f64>,
    /// Learnable computational graphs.
    pub terms: usize,
    pub record_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n: 16,
            p: 0.1,
            d: 16,
            graph_seed: 7,
            seeds: vec![0, 1, 2],
            steps: 4000,
            lrs: vec![0.03, 0.01, 0.003],
            terms: 2,
            record_every: 100,
        }
    }
}

/// Random `(X, X′)` pair for the fitting task.
pub fn fit_instance(n: usize, d: usize, seed: u64) -> (DenseMatrix, DenseMatrix) {
    let mut r = rng::stream(seed, "fit_target");
    let x = rng::normal_matrix(&mut r, n, d, 1.0);
    let y = rng::normal_matrix(&mut r, n, d, 1.0);
    (x, y)
}

/// One linear step with `terms` learnable graphs on the support of `A + I`,
/// fitted under MSE; per seed the best learning rate (lowest minimum loss) is kept.
pub fn train_fit_target(cfg: &FitConfig) -> Result<TrainReport> {
    if cfg.n == 0 || cfg.d == 0 || cfg.terms == 0 || cfg.seeds.is_empty() || cfg.lrs.is_empty() {
        return Err(Error::InvalidArgument("empty fitting configuration".into()));
    }
    let g = Graph::generate(Generator::ErdosRenyi {
        n: cfg.n,
        p: cfg.p,
        seed: cfg.graph_seed,
    })?;
    let support = g.with_self_loops().adjacency().map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let spec = StackSpec {
        layers: 1,
        terms: cfg.terms,
        d: cfg.d,
        head: None,
        softmax: false,
        learn_agg: true,
        activation: Activation::Identity,
    };
    let mut report = TrainReport {
        variant: format!("lmgc_k{}", cfg.terms),
        seeds: Vec::new(),
        traces: Vec::new(),
    };
    for &seed in &cfg.seeds {
        let (x, y) = fit_instance(cfg.n, cfg.d, seed);
        let loss = Loss::Mse(y);
        let mut best: Option<TrainOutcome> = None;
        for &lr in &cfg.lrs {
            let mut model = StackModel::init(
                spec.clone(),
                support.clone(),
                0.5,
                1.0 / (cfg.d as f64).sqrt(),
                &mut rng::stream(seed, "fit_params"),
            )?;
            let out = train(
                &mut model,
                &x,
                &loss,
                TrainConfig {
                    steps: cfg.steps,
                    lr,
                    record_every: cfg.record_every,
                },
                None,
            )?;
            if best.as_ref().is_none_or(|b| out.min_loss < b.min_loss) {
                best = Some(out);
            }
        }
        let best = best.expect("at least one learning rate");
        report.seeds.push(SeedResult {
            seed,
            accuracy: f64::NAN,
            initial_loss: best.records.first().map_or(f64::NAN, |r| r.loss),
            final_loss: best.min_loss,
            diverged_at: best.diverged_at,
        });
        report.traces.push(best.records);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(loss: impl Fn(&DenseMatrix) -> (f64, DenseMatrix), x: &DenseMatrix) {
        let (_, g) = loss(x);
        let h = 1e-6;
        for e in 0..x.as_slice().len() {
            let mut up = x.clone();
            up.as_mut_slice()[e] += h;
            let mut dn = x.clone();
            dn.as_mut_slice()[e] -= h;
            let fd = (loss(&up).0 - loss(&dn).0) / (2.0 * h);
            let an = g.as_slice()[e];
            assert!((an - fd).abs() / an.abs().max(1e-3) < 1e-7, "{an} vs {fd}");
        }
    }

    #[test]
    fn adam_basics() {
        let mut p = vec![DenseMatrix::filled(1, 1, 3.0)];
        let mut st = AdamState::new(&p, AdamHyper::default());
        adam_step(&mut p, &[DenseMatrix::zeros(1, 1)], &mut st).unwrap();
        assert_eq!(p[0][(0, 0)], 3.0);
        assert_eq!(st.step, 1);

        let mut p = vec![DenseMatrix::zeros(1, 1)];
        let mut st = AdamState::new(&p, AdamHyper::default());
        adam_step(&mut p, &[DenseMatrix::filled(1, 1, 1.0)], &mut st).unwrap();
        assert!((p[0][(0, 0)] + 0.001).abs() < 1e-10);
        for _ in 0..100 {
            adam_step(&mut p, &[DenseMatrix::filled(1, 1, -2.0)], &mut st).unwrap();
        }
        assert!(p[0][(0, 0)] > 0.0);

        let bad = [DenseMatrix::filled(1, 1, f64::NAN)];
        assert!(matches!(adam_step(&mut p, &bad, &mut st), Err(Error::NonFinite(_))));
        assert!(adam_step(&mut p, &[DenseMatrix::zeros(2, 1)], &mut st).is_err());
    }

    #[test]
    fn loss_values() {
        let t = DenseMatrix::from_rows(&[vec![1.0, 2.0]]);
        assert_eq!(mse(&t, &t).unwrap().0, 0.0);
        let z = DenseMatrix::zeros(2, 2);
        let y = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((bce_sigmoid(&z, &y).unwrap().0 - 2f64.ln()).abs() < 1e-15);
        assert!((ce_softmax(&z, &[0, 1]).unwrap().0 - 2f64.ln()).abs() < 1e-15);
        assert!(mse(&t, &z).is_err());
        assert!(bce_sigmoid(&z, &z.map(|_| 0.5)).is_err());
        assert!(ce_softmax(&z, &[0, 2]).is_err());
    }

    #[test]
    fn loss_gradients() {
        let mut r = rng::stream(3, "loss");
        let x = rng::normal_matrix(&mut r, 3, 4, 2.0);
        let t = rng::normal_matrix(&mut r, 3, 4, 1.0);
        let y = t.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        fd_check(|p| mse(p, &t).unwrap(), &x);
        fd_check(|p| bce_sigmoid(p, &y).unwrap(), &x);
        fd_check(|p| ce_softmax(p, &[0, 3, 1]).unwrap(), &x);
    }

    #[test]
    fn stack_gradients() {
        for (softmax, terms, act) in [
            (false, 1, Activation::Tanh),
            (false, 2, Activation::Tanh),
            (true, 2, Activation::Tanh),
            (false, 2, Activation::Identity),
        ] {
            let spec = StackSpec {
                layers: 3,
                terms,
                d: 3,
                head: Some(2),
                softmax,
                learn_agg: true,
                activation: act,
            };
            let support = DenseMatrix::from_rows(&[
                vec![1.0, 1.0, 0.0, 0.0],
                vec![1.0, 1.0, 1.0, 0.0],
                vec![0.0, 1.0, 1.0, 1.0],
                vec![0.0, 0.0, 1.0, 1.0],
            ]);
            let mut r = rng::stream(11, "stack");
            let model = StackModel::init(spec, support, 0.7, 0.6, &mut r).unwrap();
            let x0 = rng::normal_matrix(&mut r, 4, 3, 1.0);
            let y = rng::normal_matrix(&mut r, 4, 2, 1.0).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let err = stack_gradcheck(&model, &x0, &Loss::BceSigmoid(y), 1e-5).unwrap();
            assert!(err < 1e-5, "softmax {softmax} terms {terms}: {err}");
        }
    }

    #[test]
    fn frozen_aggregations_receive_no_gradient() {
        let spec = StackSpec {
            layers: 2,
            terms: 2,
            d: 2,
            head: None,
            softmax: false,
            learn_agg: false,
            activation: Activation::Tanh,
        };
        let mut r = rng::stream(1, "frozen");
        let m = StackModel::init(spec, DenseMatrix::filled(3, 3, 1.0), 0.5, 0.5, &mut r).unwrap();
        let x0 = rng::normal_matrix(&mut r, 3, 2, 1.0);
        let (_, g, _) = m.loss_and_grads(&x0, &Loss::Mse(DenseMatrix::zeros(3, 2))).unwrap();
        assert_eq!(g[0].max_abs(), 0.0);
        assert!(g[2].max_abs() > 0.0);
    }

    #[test]
    fn trivial_fit() {
        let cfg = FitConfig {
            n: 1,
            p: 0.0,
            d: 1,
            seeds: vec![0],
            steps: 2000,
            lrs: vec![0.01],
            terms: 1,
            ..FitConfig::default()
        };
        let rep = train_fit_target(&cfg).unwrap();
        assert!(rep.seeds[0].final_loss < 1e-12);
    }

    #[test]
    fn synthetic_smoke_and_determinism() {
        let cfg = SyntheticConfig {
            l: 1,
            seeds: vec![0, 1],
            steps: 300,
            lr: 0.01,
            ..SyntheticConfig::default()
        };
        let a = train_synthetic(&cfg).unwrap();
        let b = train_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.to_csv().starts_with(TRAIN_CSV_HEADER));
        assert!(train_synthetic(&SyntheticConfig { l: 0, ..cfg }).is_err());
    }
}
