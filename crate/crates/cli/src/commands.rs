use std::collections::BTreeMap;
use std::fmt::Write as _;

use mplab_core::graph::{laplacian, normalize, LaplacianKind};
use mplab_core::lmgc::{
    independence_probe, injectivity_pairs, injectivity_probe_pairs, LmgcParams, MultisetPair,
    ProbeConfig,
};
use mplab_core::metrics::{trace_metrics, Metric, MetricTrace, TraceSetup};
use mplab_core::mrs::{
    assign_relations, degree_ordering, feature_ordering, independence_report, ppr_ordering,
    random_ordering, split_aggregation,
};
use mplab_core::ops::{sca_ratio_svd, sca_ratio_sym, step, OperatorBundle};
use mplab_core::optim::{self, train_fit_target, FitConfig, SyntheticConfig, TrainReport};
use mplab_core::pprgnn::{estimate_depth, forward, gradcheck, PprgnnConfig};
use mplab_core::spectral::{dump_filters, eigendecompose_labeled};
use mplab_core::{linalg, rng, AggregationMatrix, DenseMatrix, Graph};
use serde_json::json;

use crate::config::{
    read_config, AggChoice, DecayConfig, DecayVariant, FiltersConfig, InitChoice, OrderingChoice,
    PprgnnCliConfig, ProbeCliConfig, ScaConfig, SplitConfig,
};
use crate::{CliError, Ctx};

type Res = Result<String, CliError>;

fn agg_matrix(g: &Graph, agg: AggChoice, self_loops: bool) -> Result<DenseMatrix, CliError> {
    match agg.kind() {
        None => Ok(DenseMatrix::identity(g.n())),
        Some(kind) => Ok(normalize(g, kind, self_loops)?.matrix),
    }
}

fn to_json(v: &impl serde::Serialize) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(mplab_core::Error::from)?;
    s.push('\n');
    Ok(s)
}

pub fn filters(ctx: &Ctx) -> Res {
    let cfg: FiltersConfig = read_config(ctx.config.as_deref())?;
    if cfg.filters.is_empty() {
        return Err(CliError::Config("no filters requested".into()));
    }
    let g = cfg.graph.load()?;
    let m = agg_matrix(&g, cfg.agg, cfg.self_loops)?;
    let spec = eigendecompose_labeled(&m, &format!("{:?}", cfg.agg).to_lowercase())?;
    let mut buf = Vec::new();
    dump_filters(&spec, &cfg.filters, &mut buf)?;
    let text = String::from_utf8(buf).expect("CSV is ASCII");
    let path = ctx.write("filters.csv", &text)?;
    Ok(format!(
        "{} filters over {} eigenvalues -> {}",
        cfg.filters.len(),
        spec.n(),
        path.display()
    ))
}

/// Row-stochastic matrix on `support` with every supported entry at least `eps`.
fn random_row_stochastic(r: &mut rng::StreamRng, support: &DenseMatrix, eps: f64) -> DenseMatrix {
    let n = support.rows();
    let raw = rng::uniform_matrix(r, n, n, 0.0, 1.0).hadamard(support).expect("square");
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let m = support.row(i).iter().filter(|v| **v != 0.0).count() as f64;
        let total: f64 = raw.row(i).iter().sum();
        for j in 0..n {
            if support[(i, j)] != 0.0 {
                out[(i, j)] = eps + (1.0 - m * eps) * raw[(i, j)] / total;
            }
        }
    }
    out
}

fn decay_trace(cfg: &DecayConfig, g: &Graph, setup: &TraceSetup, seed: u64) -> Result<MetricTrace, CliError> {
    let (n, d) = (g.n(), cfg.d);
    let std = cfg.w_std.unwrap_or(1.0 / (d as f64).sqrt());
    let act = cfg.activation;
    let x0 = rng::normal_matrix(&mut rng::stream(seed, "decay_x0"), n, d, 1.0);
    let mut r = rng::stream(seed, "decay_weights");
    let support = g
        .with_self_loops()
        .adjacency()
        .map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let trace = match cfg.variant {
        DecayVariant::Gcn => {
            let a = normalize(g, mplab_core::AggKind::Sym, true)?.matrix;
            trace_metrics(
                |_, x| step(&OperatorBundle::single(a.clone(), rng::normal_matrix(&mut r, d, d, std), act)?, x),
                &x0,
                cfg.iterations,
                setup,
            )?
        }
        DecayVariant::Sage => {
            let a = normalize(g, mplab_core::AggKind::Rw, false)?.matrix;
            trace_metrics(
                |_, x| {
                    let terms = vec![
                        (DenseMatrix::identity(n), rng::normal_matrix(&mut r, d, d, std)),
                        (a.clone(), rng::normal_matrix(&mut r, d, d, std)),
                    ];
                    step(&OperatorBundle::new(terms, act)?, x)
                },
                &x0,
                cfg.iterations,
                setup,
            )?
        }
        DecayVariant::RowStochastic => trace_metrics(
            |_, x| {
                let a = random_row_stochastic(&mut r, &support, 0.05);
                step(&OperatorBundle::single(a, rng::normal_matrix(&mut r, d, d, std), act)?, x)
            },
            &x0,
            cfg.iterations,
            setup,
        )?,
        DecayVariant::Skp => {
            let a1 = normalize(g, mplab_core::AggKind::Sym, true)?.matrix;
            trace_metrics(
                |_, x| {
                    let a2 = rng::normal_matrix(&mut r, n, n, 1.0).hadamard(&support)?;
                    let a2 = a2.scale(1.0 / linalg::spectral_norm(&a2)?);
                    let terms = vec![
                        (a1.clone(), rng::normal_matrix(&mut r, d, d, std)),
                        (a2, rng::normal_matrix(&mut r, d, d, std)),
                    ];
                    step(&OperatorBundle::new(terms, act)?, x)
                },
                &x0,
                cfg.iterations,
                setup,
            )?
        }
        DecayVariant::Mrs => {
            let agg: AggregationMatrix = normalize(g, mplab_core::AggKind::Sym, false)?;
            let ra = assign_relations(g, &degree_ordering(g)?, false)?;
            let parts = split_aggregation(&agg, &ra)?;
            trace_metrics(
                |_, x| {
                    let terms = parts.iter().map(|p| (p.clone(), rng::normal_matrix(&mut r, d, d, std))).collect();
                    step(&OperatorBundle::new(terms, act)?, x)
                },
                &x0,
                cfg.iterations,
                setup,
            )?
        }
    };
    Ok(trace)
}

pub fn decay(ctx: &Ctx) -> Res {
    let mut cfg: DecayConfig = read_config(ctx.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.seeds = vec![s];
    }
    if cfg.iterations == 0 {
        return Err(CliError::Config("iterations must be at least 1".into()));
    }
    if cfg.seeds.is_empty() || cfg.metrics.is_empty() || cfg.d == 0 {
        return Err(CliError::Config("seeds, metrics and d must be nonempty".into()));
    }
    let g = cfg.graph.load()?;
    let needs = |m: Metric| cfg.metrics.contains(&m);
    // Variants that aggregate over A + I are measured against its normalized
    // Laplacian, whose null space holds their limit direction.
    let energy_graph = match cfg.variant {
        DecayVariant::Gcn | DecayVariant::Skp | DecayVariant::RowStochastic => g.with_self_loops(),
        DecayVariant::Sage | DecayVariant::Mrs => g.clone(),
    };
    let setup = TraceSetup {
        metrics: cfg.metrics.clone(),
        lap: if needs(Metric::EnergyL) { Some(laplacian(&g, LaplacianKind::Unnormalized)?) } else { None },
        lap_sym: if needs(Metric::EnergySym) { Some(laplacian(&energy_graph, LaplacianKind::Sym)?) } else { None },
        rod_norm: cfg.rod_norm,
    };
    let mut csv = String::from("iteration,metric,seed,value\n");
    let mut sums: BTreeMap<(usize, String), (f64, usize)> = BTreeMap::new();
    let mut overflowed = 0;
    for &seed in &cfg.seeds {
        let trace = decay_trace(&cfg, &g, &setup, seed)?;
        overflowed += usize::from(trace.overflowed());
        for rec in &trace.records {
            if rec.overflow {
                writeln!(csv, "{},{},{seed},overflow", rec.iteration, rec.metric).unwrap();
                continue;
            }
            writeln!(csv, "{},{},{seed},{:?}", rec.iteration, rec.metric, rec.value).unwrap();
            let e = sums.entry((rec.iteration, rec.metric.clone())).or_insert((0.0, 0));
            e.0 += rec.value;
            e.1 += 1;
        }
    }
    for ((it, metric), (total, count)) in &sums {
        writeln!(csv, "{it},{metric},mean,{:?}", total / *count as f64).unwrap();
    }
    let path = ctx.write("decay.csv", &csv)?;
    Ok(format!(
        "{:?} decay over {} iterations, {} seeds ({overflowed} overflowed) -> {}",
        cfg.variant,
        cfg.iterations,
        cfg.seeds.len(),
        path.display()
    ))
}

pub fn sca(ctx: &Ctx) -> Res {
    let mut cfg: ScaConfig = read_config(ctx.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let g = cfg.graph.load()?;
    let a = agg_matrix(&g, cfg.agg, cfg.self_loops)?;
    let w = rng::normal_matrix(&mut rng::stream(cfg.seed, "sca_weight"), cfg.d, cfg.c, 1.0);
    let pairs = if cfg.pairs.is_empty() {
        (1..g.n()).map(|j| (0, j)).collect()
    } else {
        cfg.pairs.clone()
    };
    let symmetric = a.is_symmetric(1e-12);
    let mut reports = Vec::new();
    for &(i, j) in &pairs {
        reports.push(if symmetric { sca_ratio_sym(&a, &w, i, j)? } else { sca_ratio_svd(&a, &w, i, j)? });
    }
    let method = if symmetric { "sym" } else { "svd" };
    let path = ctx.write("sca.json", &to_json(&json!({ "method": method, "reports": reports }))?)?;
    let violated: Vec<_> = reports.iter().filter(|r| !r.degenerate && !r.holds).map(|r| (r.i, r.j)).collect();
    if !violated.is_empty() {
        return Err(CliError::Assertion(format!("ratio equality violated for {violated:?}")));
    }
    Ok(format!("{} {method} ratios hold -> {}", reports.len(), path.display()))
}

pub fn split(ctx: &Ctx) -> Res {
    let mut cfg: SplitConfig = read_config(ctx.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let g = cfg.graph.load()?;
    let Some(kind) = cfg.agg.kind() else {
        return Err(CliError::Config("split needs a graph aggregation, not identity".into()));
    };
    let order = match cfg.ordering {
        OrderingChoice::Degree => degree_ordering(&g)?,
        OrderingChoice::Ppr { alpha, tol } => ppr_ordering(&g, alpha, tol)?,
        OrderingChoice::Random => random_ordering(g.n(), cfg.seed),
        OrderingChoice::Features { d } => {
            feature_ordering(&rng::normal_matrix(&mut rng::stream(cfg.seed, "split_features"), g.n(), d, 1.0))
        }
    };
    let ra = assign_relations(&g, &order, cfg.swap)?;
    let agg = normalize(&g, kind, cfg.self_loops)?;
    let parts = split_aggregation(&agg, &ra)?;
    let rep = independence_report(&parts)?;
    let sizes: Vec<usize> = (1..=ra.l()).map(|k| ra.edges_in(k).len()).collect();
    ctx.write("relations.csv", &ra.to_csv())?;
    let path = ctx.write(
        "independence.json",
        &to_json(&json!({ "relation_sizes": sizes, "report": rep }))?,
    )?;
    Ok(format!(
        "relation sizes {sizes:?}, independent count {} -> {}",
        rep.independent_count,
        path.display()
    ))
}

pub fn lmgc_probe(ctx: &Ctx) -> Res {
    let mut cfg: ProbeCliConfig = read_config(ctx.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let p = LmgcParams::random(cfg.k, cfg.d, cfg.c, cfg.weight_fn.clone(), &mut rng::stream(cfg.seed, "lmgc_params"))?;
    let base = match &cfg.base_x {
        Some(b) => b.clone(),
        None => rng::normal_vec(&mut rng::stream(cfg.seed, "lmgc_base"), cfg.d),
    };
    let pairs = injectivity_pairs(&base, cfg.max_multiplicity, cfg.extra_pairs, cfg.seed)?;
    let probe = ProbeConfig {
        trials: cfg.trials,
        seed: cfg.seed,
        redraw: cfg.redraw,
    };
    let inj = injectivity_probe_pairs(&p, &pairs, probe)?;
    // Multiplicity pairs always give proportional outputs, so independence
    // uses proportional features and random multisets instead.
    let mut r = rng::stream(cfg.seed, "lmgc_independence_pairs");
    let mut ind_pairs = vec![MultisetPair {
        left: (base.clone(), vec![base.clone()]),
        right: (base.clone(), vec![base.iter().map(|v| 2.0 * v).collect()]),
    }];
    for _ in 0..cfg.extra_pairs {
        let x = rng::normal_vec(&mut r, cfg.d);
        ind_pairs.push(MultisetPair {
            left: (rng::normal_vec(&mut r, cfg.d), vec![x.clone(), rng::normal_vec(&mut r, cfg.d)]),
            right: (rng::normal_vec(&mut r, cfg.d), vec![x]),
        });
    }
    let ind = if cfg.c >= 2 { Some(independence_probe(&p, &ind_pairs, probe)?) } else { None };
    let path = ctx.write(
        "probe.json",
        &to_json(&json!({
            "injectivity_pairs": pairs.len(),
            "independence_pairs": ind_pairs.len(),
            "injectivity": inj,
            "independence": ind,
        }))?,
    )?;
    let summary = format!(
        "{}: injectivity {}/{}{} -> {}",
        inj.variant,
        inj.passes,
        inj.trials,
        ind.as_ref().map(|r| format!(", independence {}/{}", r.passes, r.trials)).unwrap_or_default(),
        path.display()
    );
    match cfg.min_passes {
        Some(min) if inj.passes < min => Err(CliError::Assertion(format!("{summary}; wanted {min}"))),
        _ => Ok(summary),
    }
}

fn init_matrix(choice: InitChoice, rows: usize, cols: usize, std: f64, seed: u64, name: &str) -> Result<DenseMatrix, CliError> {
    match choice {
        InitChoice::Ones => Ok(DenseMatrix::filled(rows, cols, 1.0)),
        InitChoice::Identity if rows == cols => Ok(DenseMatrix::identity(rows)),
        InitChoice::Identity => Err(CliError::Config(format!("{name}: identity needs a square {rows}x{cols} shape"))),
        InitChoice::Random => Ok(rng::normal_matrix(&mut rng::stream(seed, name), rows, cols, std)),
    }
}

pub fn pprgnn(ctx: &Ctx) -> Res {
    let mut cfg: PprgnnCliConfig = read_config(ctx.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let g = cfg.graph.load()?;
    let agg = agg_matrix(&g, cfg.agg, cfg.self_loops)?;
    let (n, d) = (g.n(), cfg.d);
    let w = init_matrix(cfg.w, d, d, cfg.w_std, cfg.seed, "pprgnn_w")?;
    let h0 = init_matrix(cfg.h0, n, d, 1.0, cfg.seed, "pprgnn_h0")?;
    let pc = PprgnnConfig {
        epsilon: cfg.epsilon,
        gamma: cfg.gamma,
        max_depth: cfg.max_depth,
        m: cfg.m,
        j: cfg.j,
        activation: cfg.activation,
    };
    let (depth, converged) = match cfg.depth {
        Some(l) => (l, true),
        None => {
            let est = estimate_depth(&agg, &w, &h0, &pc)?;
            (est.depth, est.converged)
        }
    };
    let (h, _) = forward(&agg, &w, &h0, &pc, depth)?;
    let mut csv = String::from("node,channel,value\n");
    for i in 0..n {
        for c in 0..d {
            writeln!(csv, "{i},{c},{:?}", h[(i, c)]).unwrap();
        }
    }
    let path = ctx.write("h.csv", &csv)?;
    let mut summary = format!("depth {depth} (estimate converged: {converged}) -> {}", path.display());
    if cfg.gradcheck {
        let grad_h = rng::normal_matrix(&mut rng::stream(cfg.seed, "pprgnn_grad"), n, d, 1.0);
        let check = gradcheck(&agg, &w, &h0, &grad_h, &pc, depth, 1e-6)?;
        ctx.write("gradcheck.csv", &check.to_csv())?;
        write!(summary, "; gradcheck max rel err {:.2e}", check.max_rel_err).unwrap();
        if check.near_kink {
            summary.push_str(" (near a ReLU kink, not judged)");
        } else if check.max_rel_err > cfg.gradcheck_tol {
            return Err(CliError::Assertion(summary));
        }
    }
    Ok(summary)
}

fn write_training(ctx: &Ctx, rep: &TrainReport) -> Res {
    ctx.write("train.csv", &rep.to_csv())?;
    let path = ctx.write(
        "summary.json",
        &to_json(&json!({
            "variant": rep.variant,
            "mean_accuracy": rep.mean_accuracy(),
            "mean_final_loss": rep.mean_final_loss(),
            "seeds": rep.seeds,
        }))?,
    )?;
    Ok(format!(
        "{}: mean accuracy {:.3}, mean final loss {:.3e} -> {}",
        rep.variant,
        rep.mean_accuracy(),
        rep.mean_final_loss(),
        path.display()
    ))
}

pub fn train_synthetic(ctx: &Ctx) -> Res {
    let mut cfg: SyntheticConfig = read_config(ctx.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.seeds = vec![s];
    }
    write_training(ctx, &optim::train_synthetic(&cfg)?)
}

pub fn fit_target(ctx: &Ctx) -> Res {
    let mut cfg: FitConfig = read_config(ctx.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.seeds = vec![s];
    }
    write_training(ctx, &train_fit_target(&cfg)?)
}
