//! Anchor-context selection.
//!
//! A beam search grows connected contexts through their graph frontier,
//! scoring partial and complete contexts alike. A greedy rerank then picks a
//! diverse batch from the final beam, penalizing overlap with contexts that
//! were already chosen.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{MoleculeId, SearchState, SearchTrace, TransferGraph};
use crate::rng::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum AnchorError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("invalid anchor parameters: {0}")]
    InvalidParams(String),
}

/// A connected set of molecule ids. Members are kept sorted and distinct, so
/// the member list doubles as the canonical key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnchorContext {
    members: Vec<MoleculeId>,
}

impl AnchorContext {
    pub fn new(mut members: Vec<MoleculeId>) -> Self {
        members.sort_unstable();
        members.dedup();
        AnchorContext { members }
    }

    pub fn singleton(id: MoleculeId) -> Self {
        AnchorContext { members: vec![id] }
    }

    pub fn members(&self) -> &[MoleculeId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: MoleculeId) -> bool {
        self.members.binary_search(&id).is_ok()
    }

    fn with(&self, id: MoleculeId) -> Self {
        let mut members = self.members.clone();
        let pos = members.binary_search(&id).unwrap_err();
        members.insert(pos, id);
        AnchorContext { members }
    }

    /// Nodes outside the context adjacent to at least one member, ascending.
    pub fn frontier(&self, graph: &TransferGraph) -> Vec<MoleculeId> {
        let set: BTreeSet<MoleculeId> = self
            .members
            .iter()
            .flat_map(|&v| graph.neighbors(v).iter().copied())
            .filter(|&u| !self.contains(u))
            .collect();
        set.into_iter().collect()
    }

    /// Whether the members induce a connected subgraph.
    pub fn is_connected(&self, graph: &TransferGraph) -> bool {
        let Some(&start) = self.members.first() else {
            return false;
        };
        let mut seen = HashSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &u in graph.neighbors(v) {
                if self.contains(u) && seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        seen.len() == self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorParams {
    /// Context size.
    pub k_a: usize,
    pub beam_width: usize,
    /// Contexts selected per iteration.
    pub batch: usize,
    pub seeds_high: usize,
    pub seeds_explore: usize,
    /// Exploration weight.
    pub alpha: f64,
    /// Diversity weight in the rerank.
    pub beta: f64,
    pub lambda_miss: f64,
    pub lambda_visit: f64,
    pub lambda_recent: f64,
    /// Recency decay, in iterations.
    pub gamma: f64,
    pub epsilon: f64,
    /// Subtract the repeat penalty inside the beam score.
    pub repeat_penalty: bool,
}

impl Default for AnchorParams {
    fn default() -> Self {
        AnchorParams {
            k_a: 5,
            beam_width: 1000,
            batch: 20,
            seeds_high: 100,
            seeds_explore: 200,
            alpha: 0.5,
            beta: 1.0,
            lambda_miss: 0.5,
            lambda_visit: 0.1,
            lambda_recent: 0.2,
            gamma: 5.0,
            epsilon: 1e-8,
            repeat_penalty: true,
        }
    }
}

impl AnchorParams {
    pub fn validate(&self) -> Result<(), AnchorError> {
        let bad = |m: &str| Err(AnchorError::InvalidParams(m.to_string()));
        if self.k_a < 1 {
            return bad("k_a must be >= 1");
        }
        if self.beam_width < 1 {
            return bad("beam_width must be >= 1");
        }
        if self.batch < 1 {
            return bad("batch must be >= 1");
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return bad("gamma must be > 0");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be > 0");
        }
        Ok(())
    }
}

/// Observed-score mean with a penalty for members lacking observations:
/// `Σ r·s / (Σ r + ε) − λ_miss · (1 − Σ r / |Z|)`.
pub fn property_score(z: &AnchorContext, state: &SearchState, params: &AnchorParams) -> f64 {
    let (mut observed, mut total) = (0.0, 0.0);
    for &v in z.members() {
        if let Some(s) = state.score_of(v) {
            observed += 1.0;
            total += s;
        }
    }
    let n = z.len() as f64;
    total / (observed + params.epsilon) - params.lambda_miss * (1.0 - observed / n)
}

/// Mean of `1 / sqrt(c(v) + 1)` over members.
pub fn exploration_score(z: &AnchorContext, trace: &SearchTrace) -> f64 {
    let sum: f64 = z
        .members()
        .iter()
        .map(|&v| 1.0 / ((trace.usage(v) + 1) as f64).sqrt())
        .sum();
    sum / z.len() as f64
}

/// Visit-count penalty plus exponentially decaying recency penalty at
/// iteration `t`.
pub fn repeat_penalty(z: &AnchorContext, trace: &SearchTrace, t: usize, params: &AnchorParams) -> f64 {
    let n = z.len() as f64;
    let (mut visit, mut recent) = (0.0, 0.0);
    for &v in z.members() {
        visit += (1.0 + trace.usage(v) as f64).ln();
        if let Some(rho) = trace.last_selected(v) {
            recent += (-(t.saturating_sub(rho) as f64) / params.gamma).exp();
        }
    }
    params.lambda_visit * visit / n + params.lambda_recent * recent / n
}

pub fn beam_score(z: &AnchorContext, state: &SearchState, params: &AnchorParams) -> f64 {
    let base = property_score(z, state, params) + params.alpha * exploration_score(z, &state.trace);
    if params.repeat_penalty {
        base - repeat_penalty(z, &state.trace, state.iteration, params)
    } else {
        base
    }
}

/// `|a ∩ b| / |a ∪ b|` over member sets.
pub fn jaccard(a: &AnchorContext, b: &AnchorContext) -> f64 {
    let (x, y) = (a.members(), b.members());
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = x.len() + y.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Sorts by score descending, then key ascending, and truncates to `width`.
fn prune(scored: &mut Vec<(f64, AnchorContext)>, width: usize) {
    scored.sort_by(|(sa, za), (sb, zb)| sb.total_cmp(sa).then_with(|| za.cmp(zb)));
    scored.truncate(width);
}

/// Initial singleton ids: the best-scored nodes plus a sample of the
/// least-used ones. The sample fills from the lowest usage stratum upwards,
/// drawing uniformly within the last stratum it touches.
fn beam_seeds(state: &SearchState, params: &AnchorParams, rng: &mut Rng) -> Vec<MoleculeId> {
    let mut scored: Vec<(f64, MoleculeId)> = state
        .graph
        .ids()
        .filter_map(|id| state.score_of(id).map(|s| (s, id)))
        .collect();
    scored.sort_by(|(sa, a), (sb, b)| sb.total_cmp(sa).then_with(|| a.cmp(b)));
    let mut chosen: BTreeSet<MoleculeId> =
        scored.into_iter().take(params.seeds_high).map(|(_, id)| id).collect();

    let mut rest: Vec<(u64, MoleculeId)> = state
        .graph
        .ids()
        .filter(|id| !chosen.contains(id))
        .map(|id| (state.trace.usage(id), id))
        .collect();
    rest.sort_unstable();
    let mut need = params.seeds_explore;
    let mut start = 0;
    while need > 0 && start < rest.len() {
        let level = rest[start].0;
        let end = rest[start..]
            .iter()
            .position(|&(c, _)| c != level)
            .map_or(rest.len(), |p| start + p);
        let stratum = &rest[start..end];
        if stratum.len() <= need {
            chosen.extend(stratum.iter().map(|&(_, id)| id));
            need -= stratum.len();
        } else {
            for i in index::sample(rng, stratum.len(), need) {
                chosen.insert(stratum[i].1);
            }
            need = 0;
        }
        start = end;
    }
    chosen.into_iter().collect()
}

/// Frontier-constrained beam search over connected contexts of size `k_a`
/// (or the component size when a component is smaller). Returns the final
/// beam ordered by score descending, key ascending.
pub fn beam_search(
    state: &SearchState,
    params: &AnchorParams,
    rng: &mut Rng,
) -> Result<Vec<AnchorContext>, AnchorError> {
    if state.graph.is_empty() {
        return Err(AnchorError::EmptyGraph);
    }
    let mut beam: Vec<(f64, AnchorContext)> = beam_seeds(state, params, rng)
        .into_iter()
        .map(|id| {
            let z = AnchorContext::singleton(id);
            (beam_score(&z, state, params), z)
        })
        .collect();
    prune(&mut beam, params.beam_width);

    for _ in 1..params.k_a {
        let mut seen: HashSet<AnchorContext> = HashSet::new();
        let mut next = Vec::new();
        for (score, z) in &beam {
            let frontier = z.frontier(&state.graph);
            if frontier.is_empty() {
                // Saturated: the whole component is already in the context.
                if seen.insert(z.clone()) {
                    next.push((*score, z.clone()));
                }
                continue;
            }
            for u in frontier {
                let grown = z.with(u);
                if seen.contains(&grown) {
                    continue;
                }
                seen.insert(grown.clone());
                next.push((beam_score(&grown, state, params), grown));
            }
        }
        prune(&mut next, params.beam_width);
        beam = next;
    }
    Ok(beam.into_iter().map(|(_, z)| z).collect())
}

/// Greedy diverse batch: each step takes the pool entry maximizing
/// `prop + α·explore − β·max Jaccard(Z, chosen)`, ties by key ascending.
pub fn select_anchors(
    pool: &[AnchorContext],
    state: &SearchState,
    params: &AnchorParams,
) -> Result<Vec<AnchorContext>, AnchorError> {
    if pool.is_empty() {
        return Err(AnchorError::EmptyPool);
    }
    let base: Vec<f64> = pool
        .iter()
        .map(|z| property_score(z, state, params) + params.alpha * exploration_score(z, &state.trace))
        .collect();
    let mut max_overlap = vec![0.0f64; pool.len()];
    let mut taken = vec![false; pool.len()];
    let mut out = Vec::with_capacity(params.batch.min(pool.len()));
    while out.len() < params.batch {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..pool.len() {
            if taken[i] {
                continue;
            }
            let s = base[i] - params.beta * max_overlap[i];
            best = match best {
                None => Some((s, i)),
                Some((bs, bi)) => {
                    let better = s > bs || (s == bs && pool[i] < pool[bi]);
                    Some(if better { (s, i) } else { (bs, bi) })
                }
            };
        }
        let Some((_, pick)) = best else { break };
        taken[pick] = true;
        for i in 0..pool.len() {
            if !taken[i] {
                max_overlap[i] = max_overlap[i].max(jaccard(&pool[i], &pool[pick]));
            }
        }
        out.push(pool[pick].clone());
    }
    Ok(out)
}

/// Ablation: `batch` contexts grown by uniform random frontier steps from
/// uniform random start nodes.
pub fn random_anchors(
    state: &SearchState,
    params: &AnchorParams,
    rng: &mut Rng,
) -> Result<Vec<AnchorContext>, AnchorError> {
    let n = state.graph.len();
    if n == 0 {
        return Err(AnchorError::EmptyGraph);
    }
    let mut out = Vec::with_capacity(params.batch);
    for _ in 0..params.batch {
        let mut z = AnchorContext::singleton(MoleculeId(rng.gen_range(0..n) as u32));
        while z.len() < params.k_a {
            let frontier = z.frontier(&state.graph);
            match frontier.choose(rng) {
                Some(&u) => z = z.with(u),
                None => break,
            }
        }
        out.push(z);
    }
    Ok(out)
}
