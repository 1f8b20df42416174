//! World-model transition: critique, oracle scoring, link prediction and
//! thresholded insertion of new molecules into the transfer graph.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{tanimoto, Domain, DomainError, DomainSpec, Fingerprint, OracleSpec};
use crate::graph::{GraphError, MoleculeId, RejectReason, RejectRecord, SearchState, TransferGraph};
use crate::protocol::{ProtocolClient, ProtocolError};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("link scorer: {0}")]
    Scorer(String),
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("link model format: {0}")]
    ModelFormat(String),
}

impl From<ProtocolError> for EvolveError {
    fn from(e: ProtocolError) -> Self {
        EvolveError::Domain(DomainError::Protocol(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CritiqueReason {
    Invalid,
    DuplicateInBatch,
    AlreadyInGraph,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CritiqueReport {
    pub retained: Vec<String>,
    pub rejected: Vec<(String, CritiqueReason)>,
}

impl CritiqueReport {
    pub fn count(&self, reason: CritiqueReason) -> usize {
        self.rejected.iter().filter(|(_, r)| *r == reason).count()
    }
}

/// Canonicalizes, drops invalid strings, keeps the first of any in-batch
/// duplicates and drops molecules already in the graph. Transport failures
/// from an external domain are fatal; invalid molecules are not.
pub fn critique(raw: &[String], state: &SearchState, domain: &mut dyn Domain) -> Result<CritiqueReport, EvolveError> {
    let mut report = CritiqueReport::default();
    let mut seen = HashSet::new();
    for r in raw {
        let canon = match domain.canonicalize(r) {
            Ok(c) => c,
            Err(DomainError::InvalidMolecule { .. }) => {
                report.rejected.push((r.clone(), CritiqueReason::Invalid));
                continue;
            }
            Err(DomainError::Protocol(ProtocolError::Peer(_))) => {
                report.rejected.push((r.clone(), CritiqueReason::Invalid));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if !seen.insert(canon.clone()) {
            report.rejected.push((r.clone(), CritiqueReason::DuplicateInBatch));
        } else if state.graph.contains(&canon) {
            report.rejected.push((r.clone(), CritiqueReason::AlreadyInGraph));
        } else {
            report.retained.push(canon);
        }
    }
    Ok(report)
}

/// Budgeted black-box property oracle returning raw scores.
pub trait Oracle {
    fn evaluate(&mut self, mol: &str) -> Result<f64, EvolveError>;
}

/// One of the synthetic oracles.
pub struct BuiltinOracle {
    pub spec: DomainSpec,
    pub oracle: OracleSpec,
}

impl Oracle for BuiltinOracle {
    fn evaluate(&mut self, mol: &str) -> Result<f64, EvolveError> {
        Ok(self.oracle.score(mol, &self.spec)?)
    }
}

impl Oracle for ProtocolClient {
    fn evaluate(&mut self, mol: &str) -> Result<f64, EvolveError> {
        self.score(mol).map_err(|e| EvolveError::Oracle(e.to_string()))
    }
}

/// Adapts a closure, mainly for tests.
pub struct FnOracle<F>(pub F);

impl<F: FnMut(&str) -> f64> Oracle for FnOracle<F> {
    fn evaluate(&mut self, mol: &str) -> Result<f64, EvolveError> {
        Ok((self.0)(mol))
    }
}

/// Symmetric, deterministic link probability between two canonical
/// molecules given the current graph.
pub trait LinkScorer {
    fn score(&mut self, a: &str, b: &str, graph: &TransferGraph) -> Result<f64, EvolveError>;
}

/// 1.0 iff the domain relation holds.
pub fn exact_link_oracle(a: &str, b: &str, domain: &mut dyn Domain) -> Result<f64, EvolveError> {
    domain.canonicalize(a)?;
    domain.canonicalize(b)?;
    Ok(if domain.related(a, b)? { 1.0 } else { 0.0 })
}

/// Link scorer backed by the domain's ground-truth relation.
pub struct ExactLinkOracle<D: Domain>(pub D);

impl<D: Domain> LinkScorer for ExactLinkOracle<D> {
    fn score(&mut self, a: &str, b: &str, _graph: &TransferGraph) -> Result<f64, EvolveError> {
        exact_link_oracle(a, b, &mut self.0)
    }
}

/// Remote link scorer speaking the `link` op.
pub struct ExternalLinkScorer(pub ProtocolClient);

impl LinkScorer for ExternalLinkScorer {
    fn score(&mut self, a: &str, b: &str, _graph: &TransferGraph) -> Result<f64, EvolveError> {
        // Order the pair so a deterministic peer is also symmetric.
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        self.0.link(x, y).map_err(|e| EvolveError::Scorer(e.to_string()))
    }
}

pub const FEATURE_NAMES: [&str; 3] = ["tanimoto", "shared_kmer", "length_diff"];
const KMER: usize = 3;

/// Symmetric pair features, in `FEATURE_NAMES` order.
pub fn pair_features(a: &str, b: &str) -> [f64; 3] {
    let fa = Fingerprint::of(a);
    let fb = Fingerprint::of(b);
    [
        tanimoto(&fa, &fb),
        shared_kmer_fraction(a, b),
        if a.chars().count() != b.chars().count() { 1.0 } else { 0.0 },
    ]
}

/// Multiset overlap of k-mers divided by the larger k-mer count.
fn shared_kmer_fraction(a: &str, b: &str) -> f64 {
    let counts = |s: &str| {
        let c: Vec<char> = s.chars().collect();
        let mut out: HashMap<Vec<char>, usize> = HashMap::new();
        for w in c.windows(KMER) {
            *out.entry(w.to_vec()).or_default() += 1;
        }
        out
    };
    let (ca, cb) = (counts(a), counts(b));
    let (na, nb): (usize, usize) = (ca.values().sum(), cb.values().sum());
    let denom = na.max(nb);
    if denom == 0 {
        return 0.0;
    }
    let shared: usize = ca.iter().map(|(k, &v)| v.min(cb.get(k).copied().unwrap_or(0))).sum();
    shared as f64 / denom as f64
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic link model over [`pair_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLinkModel {
    pub weights: [f64; 3],
    pub bias: f64,
    pub threshold: f64,
}

impl Default for FeatureLinkModel {
    fn default() -> Self {
        FeatureLinkModel {
            weights: [0.0; 3],
            bias: 0.0,
            threshold: 0.5,
        }
    }
}

impl FeatureLinkModel {
    fn logit_of(&self, x: &[f64; 3]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn probability(&self, a: &str, b: &str) -> f64 {
        logistic(self.logit_of(&pair_features(a, b)))
    }

    pub fn predict(&self, a: &str, b: &str) -> bool {
        self.probability(a, b) > self.threshold
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# feature link model\n");
        for (name, w) in FEATURE_NAMES.iter().zip(&self.weights) {
            writeln!(s, "feature {name} {w}").unwrap();
        }
        writeln!(s, "bias {}", self.bias).unwrap();
        writeln!(s, "threshold {}", self.threshold).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self, EvolveError> {
        let bad = |m: String| EvolveError::ModelFormat(m);
        let num = |v: Option<&str>, what: &str| -> Result<f64, EvolveError> {
            v.ok_or_else(|| bad(format!("missing value for {what}")))?
                .parse::<f64>()
                .map_err(|e| bad(format!("{what}: {e}")))
        };
        let mut weights: [Option<f64>; 3] = [None; 3];
        let (mut bias, mut threshold) = (None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("feature") => {
                    let name = parts.next().unwrap_or_default();
                    let i = FEATURE_NAMES
                        .iter()
                        .position(|n| *n == name)
                        .ok_or_else(|| bad(format!("unknown feature {name:?}")))?;
                    weights[i] = Some(num(parts.next(), name)?);
                }
                Some("bias") => bias = Some(num(parts.next(), "bias")?),
                Some("threshold") => threshold = Some(num(parts.next(), "threshold")?),
                Some(other) => return Err(bad(format!("unknown record {other:?}"))),
                None => {}
            }
        }
        let mut w = [0.0; 3];
        for (i, slot) in weights.iter().enumerate() {
            w[i] = slot.ok_or_else(|| bad(format!("missing feature {}", FEATURE_NAMES[i])))?;
        }
        Ok(FeatureLinkModel {
            weights: w,
            bias: bias.ok_or_else(|| bad("missing bias".into()))?,
            threshold: threshold.ok_or_else(|| bad("missing threshold".into()))?,
        })
    }
}

impl LinkScorer for FeatureLinkModel {
    fn score(&mut self, a: &str, b: &str, _graph: &TransferGraph) -> Result<f64, EvolveError> {
        Ok(self.probability(a, b))
    }
}

/// Summed binary cross-entropy over labelled pairs.
pub fn bce_loss(model: &FeatureLinkModel, data: &[(String, String, bool)]) -> f64 {
    data.iter()
        .map(|(a, b, y)| {
            let p = model.probability(a, b).clamp(1e-12, 1.0 - 1e-12);
            if *y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub optimizer: Optimizer,
    /// Draw fresh 1:1 negatives every epoch; otherwise draw once.
    pub resample_negatives: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 80,
            lr: 1e-3,
            batch_size: Some(32),
            optimizer: Optimizer::Adam,
            resample_negatives: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FeatureLinkModel,
    /// Mean BCE per epoch, evaluated after that epoch's updates.
    pub epoch_losses: Vec<f64>,
}

/// Uniform sampler over unordered non-edge pairs of a node set.
struct NegativeSampler<'a> {
    nodes: &'a [String],
    edges: HashSet<(usize, usize)>,
    /// All non-edges, materialized when the graph is dense enough that
    /// rejection sampling would stall.
    explicit: Option<Vec<(usize, usize)>>,
}

impl<'a> NegativeSampler<'a> {
    fn new(nodes: &'a [String], edges: HashSet<(usize, usize)>) -> Result<Self, EvolveError> {
        let n = nodes.len();
        let total = n * n.saturating_sub(1) / 2;
        if total <= edges.len() {
            return Err(EvolveError::DegenerateData(format!(
                "{n} nodes and {} edges leave no negative pair",
                edges.len()
            )));
        }
        let explicit = if (total - edges.len()) * 4 < total {
            let mut all = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if !edges.contains(&(i, j)) {
                        all.push((i, j));
                    }
                }
            }
            Some(all)
        } else {
            None
        };
        Ok(NegativeSampler { nodes, edges, explicit })
    }

    fn sample(&self, rng: &mut Rng) -> (String, String) {
        let (i, j) = match &self.explicit {
            Some(all) => *all.choose(rng).expect("non-empty by construction"),
            None => loop {
                let i = rng.gen_range(0..self.nodes.len());
                let j = rng.gen_range(0..self.nodes.len());
                let key = (i.min(j), i.max(j));
                if i != j && !self.edges.contains(&key) {
                    break key;
                }
            },
        };
        (self.nodes[i].clone(), self.nodes[j].clone())
    }
}

fn index_edges(positives: &[(String, String)], nodes: &[String]) -> Result<HashSet<(usize, usize)>, EvolveError> {
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    positives
        .iter()
        .map(|(a, b)| match (index.get(a.as_str()), index.get(b.as_str())) {
            (Some(&i), Some(&j)) if i != j => Ok((i.min(j), i.max(j))),
            (Some(_), Some(_)) => Err(EvolveError::DegenerateData(format!("self pair {a:?}"))),
            _ => Err(EvolveError::DegenerateData(format!("edge ({a:?}, {b:?}) has an endpoint outside the node set"))),
        })
        .collect()
}

/// Fits a [`FeatureLinkModel`] by descending summed BCE on the positives plus
/// an equal number of uniformly sampled non-edge pairs.
pub fn train_link_model(
    positives: &[(String, String)],
    nodes: &[String],
    params: &TrainParams,
    rng: &mut Rng,
) -> Result<TrainOutcome, EvolveError> {
    if positives.is_empty() {
        return Err(EvolveError::DegenerateData("no positive pairs".into()));
    }
    let sampler = NegativeSampler::new(nodes, index_edges(positives, nodes)?)?;
    let pos: Vec<([f64; 3], f64)> = positives.iter().map(|(a, b)| (pair_features(a, b), 1.0)).collect();
    let draw_negatives = |rng: &mut Rng| -> Vec<([f64; 3], f64)> {
        (0..positives.len())
            .map(|_| {
                let (a, b) = sampler.sample(rng);
                (pair_features(&a, &b), 0.0)
            })
            .collect()
    };

    let mut model = FeatureLinkModel::default();
    let mut adam = AdamState::default();
    let mut negatives = draw_negatives(rng);
    let mut losses = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        if params.resample_negatives && epoch > 0 {
            negatives = draw_negatives(rng);
        }
        let mut data: Vec<([f64; 3], f64)> = pos.iter().chain(&negatives).copied().collect();
        let batch = params.batch_size.unwrap_or(data.len()).max(1);
        if params.batch_size.is_some() {
            data.shuffle(rng);
        }
        for chunk in data.chunks(batch) {
            // Mean gradient of BCE w.r.t. (weights, bias).
            let mut grad = [0.0; 4];
            for (x, y) in chunk {
                let err = logistic(model.logit_of(x)) - y;
                for k in 0..3 {
                    grad[k] += err * x[k];
                }
                grad[3] += err;
            }
            for g in &mut grad {
                *g /= chunk.len() as f64;
            }
            let step = match params.optimizer {
                Optimizer::Sgd => grad.map(|g| params.lr * g),
                Optimizer::Adam => adam.step(&grad, params.lr),
            };
            for (w, d) in model.weights.iter_mut().zip(&step) {
                *w -= d;
            }
            model.bias -= step[3];
        }
        let loss: f64 = data
            .iter()
            .map(|(x, y)| {
                let p = logistic(model.logit_of(x)).clamp(1e-12, 1.0 - 1e-12);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / data.len() as f64;
        losses.push(loss);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses: losses,
    })
}

#[derive(Default)]
struct AdamState {
    m: [f64; 4],
    v: [f64; 4],
    t: i32,
}

impl AdamState {
    fn step(&mut self, grad: &[f64; 4], lr: f64) -> [f64; 4] {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let mut out = [0.0; 4];
        for k in 0..4 {
            self.m[k] = B1 * self.m[k] + (1.0 - B1) * grad[k];
            self.v[k] = B2 * self.v[k] + (1.0 - B2) * grad[k] * grad[k];
            let mh = self.m[k] / (1.0 - B1.powi(self.t));
            let vh = self.v[k] / (1.0 - B2.powi(self.t));
            out[k] = lr * mh / (vh.sqrt() + EPS);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl ClassificationReport {
    pub fn from_predictions(pairs: &[(bool, bool)]) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
        for &(truth, pred) in pairs {
            match (truth, pred) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = div(tp, tp + fp);
        let recall = div(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassificationReport {
            accuracy: div(tp + tn, pairs.len()),
            f1,
            precision,
            recall,
            n_pos: tp + fn_,
            n_neg: tn + fp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.8, valid: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct LinkEvaluation {
    pub outcome: TrainOutcome,
    pub validation: ClassificationReport,
    pub test: ClassificationReport,
}

/// Node-disjoint held-out protocol: nodes are shuffled into train/valid/test,
/// an edge belongs to a split only when both endpoints do, and each split is
/// scored on its positives plus 1:1 negatives drawn from its own nodes.
pub fn evaluate_link_protocol(
    nodes: &[String],
    edges: &[(String, String)],
    fractions: SplitFractions,
    params: &TrainParams,
    split_rng: &mut Rng,
    train_rng: &mut Rng,
) -> Result<LinkEvaluation, EvolveError> {
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.shuffle(split_rng);
    let n_train = (nodes.len() as f64 * fractions.train).round() as usize;
    let n_valid = (nodes.len() as f64 * fractions.valid).round() as usize;
    let mut split_of = vec![2u8; nodes.len()];
    for (rank, &i) in order.iter().enumerate() {
        split_of[i] = if rank < n_train {
            0
        } else if rank < n_train + n_valid {
            1
        } else {
            2
        };
    }
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut split_nodes: [Vec<String>; 3] = Default::default();
    for (i, s) in nodes.iter().enumerate() {
        split_nodes[split_of[i] as usize].push(s.clone());
    }
    let mut split_edges: [Vec<(String, String)>; 3] = Default::default();
    for (a, b) in edges {
        let (Some(&i), Some(&j)) = (index.get(a.as_str()), index.get(b.as_str())) else {
            return Err(EvolveError::DegenerateData(format!("edge ({a:?}, {b:?}) outside node set")));
        };
        if split_of[i] == split_of[j] {
            split_edges[split_of[i] as usize].push((a.clone(), b.clone()));
        }
    }

    let outcome = train_link_model(&split_edges[0], &split_nodes[0], params, train_rng)?;
    let mut eval_split = |k: usize| -> Result<ClassificationReport, EvolveError> {
        if split_edges[k].is_empty() {
            return Err(EvolveError::DegenerateData(format!("split {k} has no edges")));
        }
        let sampler = NegativeSampler::new(&split_nodes[k], index_edges(&split_edges[k], &split_nodes[k])?)?;
        let mut preds = Vec::new();
        for (a, b) in &split_edges[k] {
            preds.push((true, outcome.model.predict(a, b)));
        }
        for _ in 0..split_edges[k].len() {
            let (a, b) = sampler.sample(split_rng);
            preds.push((false, outcome.model.predict(&a, &b)));
        }
        Ok(ClassificationReport::from_predictions(&preds))
    };
    let validation = eval_split(1)?;
    let test = eval_split(2)?;
    Ok(LinkEvaluation {
        outcome,
        validation,
        test,
    })
}

/// For each candidate, the existing nodes it links to with probability above
/// `tau`. An optional Tanimoto floor restricts which pairs are scored.
pub fn predict_insert_edges(
    retained: &[String],
    state: &SearchState,
    scorer: &mut dyn LinkScorer,
    tau: f64,
    prefilter: Option<f64>,
) -> Result<BTreeMap<String, Vec<MoleculeId>>, EvolveError> {
    let node_fps: Option<Vec<Fingerprint>> = prefilter.map(|_| {
        state
            .graph
            .records()
            .iter()
            .map(|r| Fingerprint::of(&r.repr))
            .collect()
    });
    let mut out = BTreeMap::new();
    for x in retained {
        let fx = prefilter.map(|_| Fingerprint::of(x));
        let mut targets = Vec::new();
        for rec in state.graph.records() {
            if let (Some(floor), Some(fps), Some(fx)) = (prefilter, &node_fps, &fx) {
                if tanimoto(fx, &fps[rec.id.index()]) < floor {
                    continue;
                }
            }
            if scorer.score(x, &rec.repr, &state.graph)? > tau {
                targets.push(rec.id);
            }
        }
        out.insert(x.clone(), targets);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionParams {
    pub tau: f64,
    pub prefilter: Option<f64>,
    /// Frozen-graph ablation: score, but never insert.
    pub frozen: bool,
}

impl Default for TransitionParams {
    fn default() -> Self {
        TransitionParams {
            tau: 0.5,
            prefilter: None,
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub raw: usize,
    pub retained: usize,
    pub rejected_invalid: usize,
    pub rejected_duplicate: usize,
    pub rejected_known: usize,
    /// Retained candidates that have a score after this pass.
    pub scored: usize,
    pub oracle_calls: usize,
    pub cache_hits: usize,
    pub inserted: usize,
    pub new_edges: usize,
    pub rejected_unconnected: usize,
    pub withheld: usize,
    pub deferred: usize,
    pub budget_exhausted: bool,
}

/// One world-model step: critique, score (respecting budget and cache),
/// predict edges against the pre-step graph, insert connectable candidates
/// in ascending string order, and advance the iteration counter.
pub fn transition(
    state: &mut SearchState,
    raw: &[String],
    domain: &mut dyn Domain,
    scorer: &mut dyn LinkScorer,
    oracle: &mut dyn Oracle,
    params: &TransitionParams,
) -> Result<TransitionReport, EvolveError> {
    let crit = critique(raw, state, domain)?;
    let mut report = TransitionReport {
        raw: raw.len(),
        retained: crit.retained.len(),
        rejected_invalid: crit.count(CritiqueReason::Invalid),
        rejected_duplicate: crit.count(CritiqueReason::DuplicateInBatch),
        rejected_known: crit.count(CritiqueReason::AlreadyInGraph),
        ..Default::default()
    };
    // Everything this pass records is tagged with the pass number.
    state.iteration += 1;
    let iteration = state.iteration;

    let mut scored = Vec::new();
    for m in &crit.retained {
        if state.props.get(m).is_some() {
            report.cache_hits += 1;
            scored.push(m.clone());
        } else if state.budget.exhausted() {
            report.deferred += 1;
            state.rejected.push(RejectRecord {
                iteration,
                molecule: m.clone(),
                reason: RejectReason::Deferred,
            });
        } else {
            let raw_score = oracle.evaluate(m)?;
            state.record_candidate_score(m, raw_score)?;
            report.oracle_calls += 1;
            scored.push(m.clone());
        }
    }
    report.scored = scored.len();
    report.budget_exhausted = state.budget.exhausted();

    if params.frozen {
        for m in scored {
            report.withheld += 1;
            state.rejected.push(RejectRecord {
                iteration,
                molecule: m,
                reason: RejectReason::Withheld,
            });
        }
    } else {
        let edges = predict_insert_edges(&scored, state, scorer, params.tau, params.prefilter)?;
        for (m, targets) in edges {
            if targets.is_empty() {
                report.rejected_unconnected += 1;
                state.rejected.push(RejectRecord {
                    iteration,
                    molecule: m,
                    reason: RejectReason::Unconnected,
                });
            } else {
                state.insert_molecule(&m, &targets, iteration)?;
                report.inserted += 1;
                report.new_edges += targets.len();
            }
        }
    }
    Ok(report)
}

/// All distinct molecules that were proposed after critique and scored.
pub fn scored_candidates(state: &SearchState) -> BTreeSet<String> {
    let seeds: HashSet<String> = state.seed_reprs().into_iter().collect();
    state
        .props
        .calls()
        .iter()
        .filter(|c| !seeds.contains(&c.molecule))
        .map(|c| c.molecule.clone())
        .collect()
}
