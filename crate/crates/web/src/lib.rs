//! Browser bindings for three demo operations. Each export takes and returns
//! JSON strings; the `*_json` functions are the native entry points the
//! wasm wrappers delegate to.

use mplab_core::graph::{laplacian, normalize, Generator, LaplacianKind};
use mplab_core::metrics::{trace_metrics, Metric, TraceSetup};
use mplab_core::ops::{step, Activation, OperatorBundle};
use mplab_core::pprgnn::{forward, PprgnnConfig};
use mplab_core::spectral::{eigendecompose_sym, filter_coefficients, FilterSpec};
use mplab_core::{linalg, rng, AggKind, DenseMatrix, Graph};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest graph the page may request; dense steps are cubic in `n`.
pub const MAX_NODES: usize = 200;

fn graph(spec: &str) -> Result<Graph, String> {
    let g: Generator = serde_json::from_str(spec).map_err(|e| format!("graph: {e}"))?;
    let n = match g {
        Generator::Complete(n) | Generator::Cycle(n) | Generator::Path(n) => n,
        Generator::Star(leaves) => leaves + 1,
        Generator::ErdosRenyi { n, .. } => n,
        Generator::KarateClub => 34,
    };
    if n > MAX_NODES {
        return Err(format!("graph has {n} nodes; limit is {MAX_NODES}"));
    }
    Graph::generate(g).map_err(|e| e.to_string())
}

/// Eigenvalues of `A_sym` and the filter's coefficient on each eigenvector.
pub fn filter_coefficients_json(graph_spec: &str, filter_spec: &str) -> Result<String, String> {
    let g = graph(graph_spec)?;
    let f: FilterSpec = serde_json::from_str(filter_spec).map_err(|e| format!("filter: {e}"))?;
    let a = normalize(&g, AggKind::Sym, false).map_err(|e| e.to_string())?;
    let spec = eigendecompose_sym(&a.matrix).map_err(|e| e.to_string())?;
    let coefficients = filter_coefficients(&spec, &f).map_err(|e| e.to_string())?;
    Ok(json!({ "eigenvalues": spec.eigenvalues, "coefficients": coefficients }).to_string())
}

fn finite_series(trace: &mplab_core::metrics::MetricTrace, metric: &str) -> Vec<Value> {
    trace
        .records
        .iter()
        .filter(|r| r.metric == metric)
        .map(|r| if r.overflow { Value::Null } else { json!(r.value) })
        .collect()
}

/// ROD and normalized Dirichlet energy under ReLU steps with fresh weights:
/// `"gcn"` uses `A_sym` with self-loops, `"skp"` adds a second random graph
/// of unit spectral norm on the same support.
pub fn decay_trace_json(graph_spec: &str, variant: &str, iterations: usize, seed: u64) -> Result<String, String> {
    if iterations == 0 || iterations > 500 {
        return Err("iterations must be in 1..=500".into());
    }
    let g = graph(graph_spec)?;
    let (n, d) = (g.n(), 8);
    let err = |e: mplab_core::Error| e.to_string();
    let a1 = normalize(&g, AggKind::Sym, true).map_err(err)?.matrix;
    let support = g.with_self_loops().adjacency().map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let setup = TraceSetup {
        metrics: vec![Metric::Rod, Metric::EnergySym],
        lap_sym: Some(laplacian(&g.with_self_loops(), LaplacianKind::Sym).map_err(err)?),
        ..TraceSetup::default()
    };
    let x0 = rng::normal_matrix(&mut rng::stream(seed, "web_x0"), n, d, 1.0);
    let mut r = rng::stream(seed, "web_weights");
    let he = (2.0 / d as f64).sqrt();
    let skp = match variant {
        "gcn" => false,
        "skp" => true,
        other => return Err(format!("unknown variant {other:?}")),
    };
    let trace = trace_metrics(
        |_, x| {
            let mut terms = vec![(a1.clone(), rng::normal_matrix(&mut r, d, d, he))];
            if skp {
                let a2 = rng::normal_matrix(&mut r, n, n, 1.0).hadamard(&support)?;
                let a2 = a2.scale(1.0 / linalg::spectral_norm(&a2)?);
                terms.push((a2, rng::normal_matrix(&mut r, d, d, he)));
            }
            step(&OperatorBundle::new(terms, Activation::Relu)?, x)
        },
        &x0,
        iterations,
        &setup,
    )
    .map_err(err)?;
    Ok(json!({ "rod": finite_series(&trace, "ROD"), "energy": finite_series(&trace, "E_sym") }).to_string())
}

/// PPRGNN on the identity instance (`Ã = W = I`, `H0 = 1`, identity
/// activation) for depths `1..=max_depth`; each output entry is a partial
/// sum of the `e^{1/ε}` series.
pub fn pprgnn_series_json(epsilon: f64, max_depth: usize) -> Result<String, String> {
    if !(epsilon > 0.0) || max_depth == 0 || max_depth > 100 {
        return Err("need epsilon > 0 and depth in 1..=100".into());
    }
    let cfg = PprgnnConfig {
        epsilon,
        ..PprgnnConfig::default()
    };
    let eye = DenseMatrix::identity(1);
    let ones = DenseMatrix::filled(1, 1, 1.0);
    let values = (1..=max_depth)
        .map(|l| forward(&eye, &eye, &ones, &cfg, l).map(|(h, _)| h[(0, 0)]))
        .collect::<mplab_core::Result<Vec<f64>>>()
        .map_err(|e| e.to_string())?;
    Ok(json!({ "values": values, "limit": (1.0 / epsilon).exp() }).to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = filterCoefficients)]
pub fn filter_coefficients_wasm(graph_spec: &str, filter_spec: &str) -> Result<String, JsValue> {
    js(filter_coefficients_json(graph_spec, filter_spec))
}

#[wasm_bindgen(js_name = decayTrace)]
pub fn decay_trace_wasm(graph_spec: &str, variant: &str, iterations: usize, seed: u32) -> Result<String, JsValue> {
    js(decay_trace_json(graph_spec, variant, iterations, u64::from(seed)))
}

#[wasm_bindgen(js_name = pprgnnSeries)]
pub fn pprgnn_series_wasm(epsilon: f64, max_depth: usize) -> Result<String, JsValue> {
    js(pprgnn_series_json(epsilon, max_depth))
}
