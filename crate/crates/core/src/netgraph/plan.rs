//! Pruning plans: which output channels to remove, and what that saves.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::edit::ChannelEdit;
use super::{FlossTable, NetworkGraph};
use crate::error::{Error, Result};
use crate::metrics::Metric;

pub const PLAN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub layer: String,
    /// Strictly increasing output-channel indices.
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanProvenance {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub scoring_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub version: u32,
    pub metric: Metric,
    #[serde(flatten)]
    pub provenance: PlanProvenance,
    pub entries: Vec<PlanEntry>,
    pub expected_flop_delta: u64,
    pub expected_param_delta: u64,
}

impl PruningPlan {
    /// Builds a plan for `graph`, sorting entries into graph order and
    /// computing the expected deltas by rebuilding the pruned graph.
    pub fn new(
        graph: &NetworkGraph,
        metric: Metric,
        provenance: PlanProvenance,
        mut entries: Vec<PlanEntry>,
    ) -> Result<Self> {
        for e in &mut entries {
            e.channels.sort_unstable();
        }
        let mut order = Vec::with_capacity(entries.len());
        for e in &entries {
            order.push(graph.find(&e.layer).ok_or_else(|| Error::Plan(format!("unknown layer {:?}", e.layer)))?);
        }
        let mut keyed: Vec<(usize, PlanEntry)> = order.into_iter().zip(entries).collect();
        keyed.sort_by_key(|(i, _)| *i);
        let mut plan = PruningPlan {
            version: PLAN_FORMAT_VERSION,
            metric,
            provenance,
            entries: keyed.into_iter().map(|(_, e)| e).collect(),
            expected_flop_delta: 0,
            expected_param_delta: 0,
        };
        let pruned = plan.edit(graph)?.apply(graph)?;
        plan.expected_flop_delta = graph.flop_count() - pruned.flop_count();
        plan.expected_param_delta = graph.param_count() - pruned.param_count();
        Ok(plan)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|e| e.channels.is_empty())
    }

    pub fn removed_channels(&self) -> usize {
        self.entries.iter().map(|e| e.channels.len()).sum()
    }

    pub(crate) fn edit(&self, graph: &NetworkGraph) -> Result<ChannelEdit> {
        let mut edit = ChannelEdit::default();
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            let idx = graph
                .find(&e.layer)
                .ok_or_else(|| Error::Plan(format!("unknown layer {:?}", e.layer)))?;
            if !seen.insert(idx) {
                return Err(Error::Plan(format!("layer {:?} appears twice", e.layer)));
            }
            if !graph.layer(idx).prunable {
                return Err(Error::Plan(format!("layer {:?} is not prunable", e.layer)));
            }
            let set: BTreeSet<usize> = e.channels.iter().copied().collect();
            if set.len() != e.channels.len() {
                return Err(Error::Plan(format!("duplicate channel index in layer {:?}", e.layer)));
            }
            edit.remove_outputs(graph, idx, &set)?;
        }
        Ok(edit)
    }

    /// Checks the plan against `graph`, including that the recorded deltas
    /// match a fresh recomputation.
    pub fn validate(&self, graph: &NetworkGraph) -> Result<NetworkGraph> {
        if self.version != PLAN_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        let pruned = self.edit(graph)?.apply(graph)?;
        let flops = graph.flop_count() - pruned.flop_count();
        let params = graph.param_count() - pruned.param_count();
        if flops != self.expected_flop_delta || params != self.expected_param_delta {
            return Err(Error::Plan(format!(
                "plan expects deltas ({}, {}) FLOPs/params but the graph gives ({flops}, {params})",
                self.expected_flop_delta, self.expected_param_delta
            )));
        }
        Ok(pruned)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan JSON is always serializable")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let plan: PruningPlan = serde_json::from_str(s)?;
        if plan.version != PLAN_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(plan.version));
        }
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PruningPlan::from_json_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

/// Plan removing each selected layer's `n` lowest-ranked channels.
///
/// `ranked` maps layer id to channel indices, lowest score first.
pub fn build_plan(
    graph: &NetworkGraph,
    table: &FlossTable,
    ranked: &BTreeMap<String, Vec<usize>>,
    selected: &[String],
    metric: Metric,
    provenance: PlanProvenance,
) -> Result<PruningPlan> {
    if selected.is_empty() {
        return Err(Error::Plan("no layers selected".into()));
    }
    let mut entries = Vec::with_capacity(selected.len());
    for id in selected {
        let row = table
            .get(id)
            .ok_or_else(|| Error::Plan(format!("layer {id:?} is not in the FLOSS table")))?;
        if row.n_channels == 0 {
            return Err(Error::Plan(format!("layer {id:?} has a prune count of 0")));
        }
        let order = ranked
            .get(id)
            .ok_or_else(|| Error::Plan(format!("no channel ranking for layer {id:?}")))?;
        if order.len() < row.n_channels {
            return Err(Error::Plan(format!(
                "ranking for {id:?} has {} channels, need {}",
                order.len(),
                row.n_channels
            )));
        }
        entries.push(PlanEntry {
            layer: id.clone(),
            channels: order[..row.n_channels].to_vec(),
        });
    }
    PruningPlan::new(graph, metric, provenance, entries)
}

pub fn apply_plan_graph(graph: &NetworkGraph, plan: &PruningPlan) -> Result<NetworkGraph> {
    plan.validate(graph)
}
