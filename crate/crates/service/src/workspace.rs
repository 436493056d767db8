//! Loading a built workspace directory.

use std::fs;
use std::path::{Path, PathBuf};

use xling_core::graph::{analyze, graph_to_json, load_graph, GraphAnalytics, TransferGraph};
use xling_core::selection::{
    check_all, load_downstream, load_manifest, DownstreamResults, HypothesisResult, PretrainConfig,
};

use crate::ServiceError;

pub const GRAPH_FILE: &str = "graph.json";
pub const CONFIGS_FILE: &str = "configs.json";
pub const RESULTS_FILE: &str = "results.tsv";
pub const HYPOTHESES_FILE: &str = "hypotheses.json";

/// Everything the service answers from. Never mutated after [`Workspace::load`].
#[derive(Debug)]
pub struct Workspace {
    pub graph: TransferGraph,
    /// Exactly what `export_graph` writes for `graph`.
    pub graph_json: String,
    pub analytics: GraphAnalytics,
    pub configs: Vec<PretrainConfig>,
    pub downstream: Vec<DownstreamResults>,
    pub hypotheses: Vec<HypothesisResult>,
}

impl Workspace {
    /// Reads `graph.json` plus the optional `configs.json`, `results.tsv` and
    /// `hypotheses.json`. Hypotheses are computed when not cached but
    /// configs and results are present.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let dir = dir.as_ref();
        let graph = load_graph(dir.join(GRAPH_FILE))?;
        let optional = |name: &str| -> Option<PathBuf> {
            let p = dir.join(name);
            p.is_file().then_some(p)
        };
        let configs = match optional(CONFIGS_FILE) {
            Some(p) => load_manifest(p)?,
            None => Vec::new(),
        };
        let downstream = match optional(RESULTS_FILE) {
            Some(p) => load_downstream(p)?,
            None => Vec::new(),
        };
        let hypotheses = match optional(HYPOTHESES_FILE) {
            Some(p) => {
                let text =
                    fs::read_to_string(&p).map_err(|e| ServiceError::Workspace(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ServiceError::Workspace(format!("{}: {e}", p.display())))?
            }
            None if !configs.is_empty() && !downstream.is_empty() => check_all(&graph, &downstream, &configs)?,
            None => Vec::new(),
        };
        Self::from_parts(graph, configs, downstream, hypotheses)
    }

    /// Checks that every language and configuration id resolves.
    pub fn from_parts(
        graph: TransferGraph,
        configs: Vec<PretrainConfig>,
        downstream: Vec<DownstreamResults>,
        hypotheses: Vec<HypothesisResult>,
    ) -> Result<Self, ServiceError> {
        for c in &configs {
            if let Some(code) = c.languages().iter().find(|l| graph.node(l).is_none()) {
                return Err(ServiceError::Workspace(format!(
                    "configuration '{}' uses unknown language '{code}'",
                    c.id
                )));
            }
        }
        for res in &downstream {
            for (config, source, target) in res.scores.keys() {
                if !configs.is_empty() && !configs.iter().any(|c| &c.id == config) {
                    return Err(ServiceError::Workspace(format!(
                        "{} results refer to unknown configuration '{config}'",
                        res.task
                    )));
                }
                if let Some(code) = [source, target].into_iter().find(|l| graph.node(l).is_none()) {
                    return Err(ServiceError::Workspace(format!(
                        "{} results refer to unknown language '{code}'",
                        res.task
                    )));
                }
            }
        }
        Ok(Workspace {
            graph_json: graph_to_json(&graph),
            analytics: analyze(&graph),
            graph,
            configs,
            downstream,
            hypotheses,
        })
    }
}
