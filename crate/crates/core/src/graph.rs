//! Search state: the transfer graph, the search trace, the property store and
//! the oracle budget.
//!
//! Node ids are dense and assigned in insertion order, and every iteration
//! over nodes runs in ascending id order, so all downstream tie-breaks are
//! deterministic.

use std::collections::HashMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::AnchorContext;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("seed set is empty")]
    EmptySeeds,
    #[error("duplicate seed molecule {0:?}")]
    DuplicateSeed(String),
    #[error("edge ({0:?}, {1:?}) references an unknown molecule")]
    DanglingEdge(String, String),
    #[error("self-loop on {0:?}")]
    SelfLoop(String),
    #[error("molecule {0:?} is already in the graph")]
    AlreadyPresent(String),
    #[error("molecule {0:?} has no edge into the graph")]
    NoConnection(String),
    #[error("unknown molecule id {0}")]
    UnknownId(MoleculeId),
    #[error("oracle budget exhausted ({0} calls)")]
    BudgetExhausted(u64),
    #[error("molecule {0:?} already has a score")]
    AlreadyScored(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MoleculeId(pub u32);

impl MoleculeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for MoleculeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Generated { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoleculeRecord {
    pub id: MoleculeId,
    pub repr: String,
    pub origin: Origin,
}

/// Undirected molecule-transfer graph with sorted adjacency lists.
#[derive(Debug, Clone, Default)]
pub struct TransferGraph {
    records: Vec<MoleculeRecord>,
    index: HashMap<String, MoleculeId>,
    adjacency: Vec<Vec<MoleculeId>>,
    n_edges: usize,
}

impl TransferGraph {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.n_edges
    }

    pub fn ids(&self) -> impl Iterator<Item = MoleculeId> + '_ {
        self.records.iter().map(|r| r.id)
    }

    pub fn records(&self) -> &[MoleculeRecord] {
        &self.records
    }

    pub fn contains_id(&self, id: MoleculeId) -> bool {
        id.index() < self.records.len()
    }

    pub fn record(&self, id: MoleculeId) -> Result<&MoleculeRecord, GraphError> {
        self.records.get(id.index()).ok_or(GraphError::UnknownId(id))
    }

    pub fn repr(&self, id: MoleculeId) -> &str {
        &self.records[id.index()].repr
    }

    pub fn id_of(&self, repr: &str) -> Option<MoleculeId> {
        self.index.get(repr).copied()
    }

    pub fn contains(&self, repr: &str) -> bool {
        self.index.contains_key(repr)
    }

    /// Sorted neighbor list. Panics on an unknown id.
    pub fn neighbors(&self, id: MoleculeId) -> &[MoleculeId] {
        &self.adjacency[id.index()]
    }

    pub fn degree(&self, id: MoleculeId) -> usize {
        self.adjacency[id.index()].len()
    }

    pub fn has_edge(&self, a: MoleculeId, b: MoleculeId) -> bool {
        self.adjacency
            .get(a.index())
            .is_some_and(|n| n.binary_search(&b).is_ok())
    }

    /// Edges as `(a, b)` with `a < b`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (MoleculeId, MoleculeId)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| {
                let a = MoleculeId(i as u32);
                ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b))
            })
    }

    fn add_node(&mut self, repr: String, origin: Origin) -> Result<MoleculeId, GraphError> {
        if self.index.contains_key(&repr) {
            return Err(GraphError::AlreadyPresent(repr));
        }
        let id = MoleculeId(self.records.len() as u32);
        self.index.insert(repr.clone(), id);
        self.records.push(MoleculeRecord { id, repr, origin });
        self.adjacency.push(Vec::new());
        Ok(id)
    }

    /// Returns false when the edge already existed.
    fn add_edge(&mut self, a: MoleculeId, b: MoleculeId) -> Result<bool, GraphError> {
        for id in [a, b] {
            if !self.contains_id(id) {
                return Err(GraphError::UnknownId(id));
            }
        }
        if a == b {
            return Err(GraphError::SelfLoop(self.repr(a).to_string()));
        }
        let na = &mut self.adjacency[a.index()];
        match na.binary_search(&b) {
            Ok(_) => return Ok(false),
            Err(pos) => na.insert(pos, b),
        }
        let nb = &mut self.adjacency[b.index()];
        let pos = nb.binary_search(&a).unwrap_err();
        nb.insert(pos, a);
        self.n_edges += 1;
        Ok(true)
    }
}

/// Per-node usage count and last-selected iteration.
#[derive(Debug, Clone, Default)]
pub struct SearchTrace {
    usage: Vec<u64>,
    last_selected: Vec<Option<usize>>,
}

impl SearchTrace {
    pub fn usage(&self, id: MoleculeId) -> u64 {
        self.usage.get(id.index()).copied().unwrap_or(0)
    }

    pub fn last_selected(&self, id: MoleculeId) -> Option<usize> {
        self.last_selected.get(id.index()).copied().flatten()
    }

    fn grow(&mut self, n: usize) {
        self.usage.resize(n, 0);
        self.last_selected.resize(n, None);
    }
}

/// Affine map from raw oracle output to `[0, 1]`, oriented for maximization.
/// Results outside the unit interval are clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub scale: f64,
    pub offset: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer { scale: 1.0, offset: 0.0 }
    }
}

impl Normalizer {
    pub fn apply(&self, raw: f64) -> f64 {
        (self.scale * raw + self.offset).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub call_index: u64,
    pub iteration: usize,
    pub molecule: String,
    pub raw_score: f64,
    pub normalized: f64,
}

/// Oracle observations keyed by canonical string, so candidates can be scored
/// before they are inserted (or when they are never inserted).
#[derive(Debug, Clone, Default)]
pub struct PropertyStore {
    calls: Vec<CallRecord>,
    by_repr: HashMap<String, usize>,
    normalizer: Normalizer,
}

impl PropertyStore {
    pub fn new(normalizer: Normalizer) -> Self {
        PropertyStore {
            normalizer,
            ..Default::default()
        }
    }

    pub fn normalizer(&self) -> Normalizer {
        self.normalizer
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn calls(&self) -> &[CallRecord] {
        &self.calls
    }

    pub fn get(&self, repr: &str) -> Option<&CallRecord> {
        self.by_repr.get(repr).map(|&i| &self.calls[i])
    }

    pub fn normalized(&self, repr: &str) -> Option<f64> {
        self.get(repr).map(|c| c.normalized)
    }

    /// Normalized scores in call order.
    pub fn normalized_history(&self) -> Vec<f64> {
        self.calls.iter().map(|c| c.normalized).collect()
    }

    /// Mean of the `k` best normalized scores; `None` when nothing is scored.
    pub fn top_k_mean(&self, k: usize) -> Option<f64> {
        if self.calls.is_empty() || k == 0 {
            return None;
        }
        let mut s = self.normalized_history();
        s.sort_by(|a, b| b.total_cmp(a));
        s.truncate(k);
        Some(s.iter().sum::<f64>() / s.len() as f64)
    }

    fn push(&mut self, repr: &str, raw: f64, iteration: usize) -> &CallRecord {
        let record = CallRecord {
            call_index: self.calls.len() as u64 + 1,
            iteration,
            molecule: repr.to_string(),
            raw_score: raw,
            normalized: self.normalizer.apply(raw),
        };
        self.by_repr.insert(repr.to_string(), self.calls.len());
        self.calls.push(record);
        self.calls.last().expect("just pushed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
}

fn default_patience() -> usize {
    5
}

fn default_min_delta() -> f64 {
    1e-3
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            patience: default_patience(),
            min_delta: default_min_delta(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetLedger {
    pub limit: u64,
    pub used: u64,
    pub early_stop: EarlyStop,
}

impl BudgetLedger {
    pub fn new(limit: u64) -> Self {
        BudgetLedger {
            limit,
            used: 0,
            early_stop: EarlyStop::default(),
        }
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.used
    }

    pub fn exhausted(&self) -> bool {
        self.used >= self.limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Scored, but no predicted edge into the graph.
    Unconnected,
    /// Not scored: the budget ran out mid-batch.
    Deferred,
    /// Scored, but insertion is disabled (frozen graph).
    Withheld,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub iteration: usize,
    pub molecule: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone)]
pub struct SearchState {
    pub graph: TransferGraph,
    pub trace: SearchTrace,
    pub props: PropertyStore,
    /// Number of completed loop passes.
    pub iteration: usize,
    pub budget: BudgetLedger,
    /// Post-critique candidates that did not enter the graph.
    pub rejected: Vec<RejectRecord>,
    node_scores: Vec<Option<f64>>,
}

impl SearchState {
    pub fn new(
        seed_molecules: &[String],
        seed_edges: &[(String, String)],
        budget: BudgetLedger,
    ) -> Result<Self, GraphError> {
        Self::with_normalizer(seed_molecules, seed_edges, budget, Normalizer::default())
    }

    pub fn with_normalizer(
        seed_molecules: &[String],
        seed_edges: &[(String, String)],
        budget: BudgetLedger,
        normalizer: Normalizer,
    ) -> Result<Self, GraphError> {
        if seed_molecules.is_empty() {
            return Err(GraphError::EmptySeeds);
        }
        let mut graph = TransferGraph::default();
        for m in seed_molecules {
            graph.add_node(m.clone(), Origin::Seed).map_err(|e| match e {
                GraphError::AlreadyPresent(r) => GraphError::DuplicateSeed(r),
                other => other,
            })?;
        }
        for (a, b) in seed_edges {
            let (Some(ia), Some(ib)) = (graph.id_of(a), graph.id_of(b)) else {
                return Err(GraphError::DanglingEdge(a.clone(), b.clone()));
            };
            graph.add_edge(ia, ib)?;
        }
        let n = graph.len();
        let mut trace = SearchTrace::default();
        trace.grow(n);
        Ok(SearchState {
            graph,
            trace,
            props: PropertyStore::new(normalizer),
            iteration: 0,
            budget,
            rejected: Vec::new(),
            node_scores: vec![None; n],
        })
    }

    /// Normalized score of a node, if observed.
    pub fn score_of(&self, id: MoleculeId) -> Option<f64> {
        self.node_scores.get(id.index()).copied().flatten()
    }

    /// Adds a generated molecule joined to every node in `edges_to`.
    pub fn insert_molecule(
        &mut self,
        repr: &str,
        edges_to: &[MoleculeId],
        iteration: usize,
    ) -> Result<MoleculeId, GraphError> {
        if edges_to.is_empty() {
            if self.graph.contains(repr) {
                return Err(GraphError::AlreadyPresent(repr.to_string()));
            }
            return Err(GraphError::NoConnection(repr.to_string()));
        }
        self.insert_unchecked(repr, edges_to, iteration)
    }

    /// Insertion without the reachability gate. Only the frozen-graph
    /// ablation and tests should need this.
    pub fn insert_unchecked(
        &mut self,
        repr: &str,
        edges_to: &[MoleculeId],
        iteration: usize,
    ) -> Result<MoleculeId, GraphError> {
        if self.graph.contains(repr) {
            return Err(GraphError::AlreadyPresent(repr.to_string()));
        }
        if let Some(&bad) = edges_to.iter().find(|id| !self.graph.contains_id(**id)) {
            return Err(GraphError::UnknownId(bad));
        }
        let id = self
            .graph
            .add_node(repr.to_string(), Origin::Generated { iteration })?;
        for &u in edges_to {
            self.graph.add_edge(id, u)?;
        }
        self.trace.grow(self.graph.len());
        self.node_scores.push(self.props.normalized(repr));
        Ok(id)
    }

    /// True iff a path of edges joins `id` to a seed-origin node.
    pub fn is_reachable(&self, id: MoleculeId) -> Result<bool, GraphError> {
        let rec = self.graph.record(id)?;
        if rec.origin == Origin::Seed {
            return Ok(true);
        }
        let mut seen = vec![false; self.graph.len()];
        let mut stack = vec![id];
        seen[id.index()] = true;
        while let Some(v) = stack.pop() {
            if self.graph.records[v.index()].origin == Origin::Seed {
                return Ok(true);
            }
            for &u in self.graph.neighbors(v) {
                if !seen[u.index()] {
                    seen[u.index()] = true;
                    stack.push(u);
                }
            }
        }
        Ok(false)
    }

    /// Records an oracle observation for a graph node.
    pub fn record_score(&mut self, id: MoleculeId, raw: f64) -> Result<(), GraphError> {
        let repr = self.graph.record(id)?.repr.clone();
        self.record_candidate_score(&repr, raw).map(|_| ())
    }

    /// Records an oracle observation for any canonical molecule, in the graph
    /// or not. Charges one unit of budget.
    pub fn record_candidate_score(&mut self, repr: &str, raw: f64) -> Result<f64, GraphError> {
        if self.props.get(repr).is_some() {
            return Err(GraphError::AlreadyScored(repr.to_string()));
        }
        if self.budget.exhausted() {
            return Err(GraphError::BudgetExhausted(self.budget.limit));
        }
        self.budget.used += 1;
        let normalized = self.props.push(repr, raw, self.iteration).normalized;
        if let Some(id) = self.graph.id_of(repr) {
            self.node_scores[id.index()] = Some(normalized);
        }
        Ok(normalized)
    }

    /// Bumps usage for every occurrence of a node across `selected` and stamps
    /// its last-selected iteration with the current one.
    pub fn update_trace(&mut self, selected: &[AnchorContext]) -> Result<(), GraphError> {
        for ctx in selected {
            if let Some(&bad) = ctx.members().iter().find(|id| !self.graph.contains_id(**id)) {
                return Err(GraphError::UnknownId(bad));
            }
        }
        for ctx in selected {
            for &v in ctx.members() {
                self.trace.usage[v.index()] += 1;
                self.trace.last_selected[v.index()] = Some(self.iteration);
            }
        }
        Ok(())
    }

    pub fn seed_reprs(&self) -> Vec<String> {
        self.graph
            .records()
            .iter()
            .filter(|r| r.origin == Origin::Seed)
            .map(|r| r.repr.clone())
            .collect()
    }

    /// Line-oriented JSON snapshot of the whole state.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut line = |v: &SnapshotLine<'_>| -> io::Result<()> {
            serde_json::to_writer(&mut w, v)?;
            w.write_all(b"\n")
        };
        line(&SnapshotLine::State {
            iteration: self.iteration,
            budget_limit: self.budget.limit,
            budget_used: self.budget.used,
            nodes: self.graph.len(),
            edges: self.graph.edge_count(),
        })?;
        for r in self.graph.records() {
            line(&SnapshotLine::Node {
                id: r.id,
                repr: &r.repr,
                origin: r.origin,
            })?;
        }
        for (a, b) in self.graph.edges() {
            line(&SnapshotLine::Edge { a, b })?;
        }
        for id in self.graph.ids() {
            let usage = self.trace.usage(id);
            let last_selected = self.trace.last_selected(id);
            if usage > 0 || last_selected.is_some() {
                line(&SnapshotLine::Trace {
                    id,
                    usage,
                    last_selected,
                })?;
            }
        }
        for c in self.props.calls() {
            line(&SnapshotLine::Call(c))?;
        }
        for r in &self.rejected {
            line(&SnapshotLine::Reject(r))?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SnapshotLine<'a> {
    State {
        iteration: usize,
        budget_limit: u64,
        budget_used: u64,
        nodes: usize,
        edges: usize,
    },
    Node {
        id: MoleculeId,
        repr: &'a str,
        origin: Origin,
    },
    Edge {
        a: MoleculeId,
        b: MoleculeId,
    },
    Trace {
        id: MoleculeId,
        usage: u64,
        last_selected: Option<usize>,
    },
    Call(&'a CallRecord),
    Reject(&'a RejectRecord),
}
