use std::path::{Path, PathBuf};

use mplab_core::graph::{connectivity_report, load_edge_list, parse_edge_list, AggKind, Generator};
use mplab_core::lmgc::WeightFn;
use mplab_core::metrics::{Metric, RodNorm};
use mplab_core::ops::Activation;
use mplab_core::Graph;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

/// Where the graph comes from: a generator or an edge-list file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    Generator(Generator),
    File {
        path: PathBuf,
        #[serde(default)]
        directed: bool,
    },
}

impl Default for GraphSource {
    fn default() -> Self {
        GraphSource::Generator(Generator::Complete(3))
    }
}

impl GraphSource {
    /// Loads the graph and warns on stderr when it is disconnected or
    /// bipartite, where several dominance statements degenerate.
    pub fn load(&self) -> Result<Graph, CliError> {
        let g = self.load_quietly()?;
        let rep = connectivity_report(&g);
        if !rep.connected {
            eprintln!("mplab: warning: graph is disconnected");
        }
        if rep.bipartite {
            eprintln!("mplab: warning: graph is bipartite; eigenvalue -1 ties the dominant component");
        }
        Ok(g)
    }

    fn load_quietly(&self) -> Result<Graph, CliError> {
        match self {
            GraphSource::Generator(g) => Ok(Graph::generate(*g)?),
            GraphSource::File { path, directed } => {
                let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
                let g = if *directed {
                    parse_edge_list(&text, true)
                } else {
                    load_edge_list(&text)
                };
                g.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
        }
    }
}

/// Aggregation choice; `identity` ignores the edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggChoice {
    Identity,
    Raw,
    Sym,
    Rw,
    Pr,
}

impl AggChoice {
    pub fn kind(self) -> Option<AggKind> {
        match self {
            AggChoice::Identity => None,
            AggChoice::Raw => Some(AggKind::Raw),
            AggChoice::Sym => Some(AggKind::Sym),
            AggChoice::Rw => Some(AggKind::Rw),
            AggChoice::Pr => Some(AggKind::Pr),
        }
    }
}

pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiltersConfig {
    pub graph: GraphSource,
    pub agg: AggChoice,
    pub self_loops: bool,
    pub filters: Vec<mplab_core::FilterSpec>,
}

impl Default for FiltersConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::default(),
            agg: AggChoice::Sym,
            self_loops: false,
            filters: vec![mplab_core::FilterSpec::Gcn { w: 1.0 }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayVariant {
    /// `A_sym` with self-loops, one weight per iteration.
    Gcn,
    /// Terms `(I, W₁)` and `(A_rw, W₂)`.
    Sage,
    /// Fresh row-stochastic aggregation on the support of `A + I` each iteration.
    RowStochastic,
    /// `A_sym + I` plus a random support matrix of unit spectral norm.
    Skp,
    /// Degree-ordered multi-relational split of `A_sym`.
    Mrs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub graph: GraphSource,
    pub variant: DecayVariant,
    pub activation: Activation,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub d: usize,
    /// Weight entry standard deviation; `None` means `1/√d`.
    pub w_std: Option<f64>,
    pub metrics: Vec<Metric>,
    pub rod_norm: RodNorm,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::Generator(Generator::KarateClub),
            variant: DecayVariant::Gcn,
            activation: Activation::Relu,
            iterations: 96,
            seeds: vec![0],
            d: 16,
            w_std: None,
            metrics: vec![Metric::EnergyL, Metric::EnergySym, Metric::Rod, Metric::Frob],
            rod_norm: RodNorm::Spectral,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaConfig {
    pub graph: GraphSource,
    pub agg: AggChoice,
    pub self_loops: bool,
    /// Weight shape `d × c`.
    pub d: usize,
    pub c: usize,
    pub seed: u64,
    /// Index pairs; empty means every `(0, j)`.
    pub pairs: Vec<(usize, usize)>,
}

impl Default for ScaConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::default(),
            agg: AggChoice::Sym,
            self_loops: false,
            d: 3,
            c: 3,
            seed: 0,
            pairs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingChoice {
    Degree,
    Ppr { alpha: f64, tol: f64 },
    Random,
    Features { d: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub graph: GraphSource,
    pub agg: AggChoice,
    pub self_loops: bool,
    pub ordering: OrderingChoice,
    pub swap: bool,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::default(),
            agg: AggChoice::Sym,
            self_loops: false,
            ordering: OrderingChoice::Degree,
            swap: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeCliConfig {
    pub weight_fn: WeightFn,
    pub k: usize,
    pub d: usize,
    pub c: usize,
    /// Neighbour feature used for the multiplicity pairs; `None` draws one.
    pub base_x: Option<Vec<f64>>,
    pub max_multiplicity: usize,
    pub extra_pairs: usize,
    pub trials: usize,
    pub redraw: bool,
    pub seed: u64,
    /// Exit with status 1 when fewer injectivity trials pass.
    pub min_passes: Option<usize>,
}

impl Default for ProbeCliConfig {
    fn default() -> Self {
        Self {
            weight_fn: WeightFn::TanhMlp,
            k: 2,
            d: 3,
            c: 2,
            base_x: None,
            max_multiplicity: 4,
            extra_pairs: 4,
            trials: 100,
            redraw: true,
            seed: 0,
            min_passes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    Ones,
    Identity,
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PprgnnCliConfig {
    pub graph: GraphSource,
    pub agg: AggChoice,
    pub self_loops: bool,
    pub d: usize,
    pub h0: InitChoice,
    pub w: InitChoice,
    pub w_std: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub m: usize,
    pub j: usize,
    pub activation: Activation,
    /// Fixed depth; `None` uses the depth estimate.
    pub depth: Option<usize>,
    pub gradcheck: bool,
    /// Gradient-check failure threshold on the relative error.
    pub gradcheck_tol: f64,
    pub seed: u64,
}

impl Default for PprgnnCliConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::default(),
            agg: AggChoice::Sym,
            self_loops: false,
            d: 2,
            h0: InitChoice::Random,
            w: InitChoice::Random,
            w_std: 0.5,
            epsilon: 1.0,
            gamma: 1e-4,
            max_depth: 128,
            m: 5,
            j: 1,
            activation: Activation::Identity,
            depth: None,
            gradcheck: false,
            gradcheck_tol: 1e-5,
            seed: 0,
        }
    }
}
