//! Shared fixtures and brute-force oracles for the integration suites.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use rand::Rng as _;

use molworld::anchor::{exploration_score, property_score, AnchorContext, AnchorParams};
use molworld::config::{RunConfig, SeedSource};
use molworld::domain::OracleSpec;
use molworld::graph::{BudgetLedger, MoleculeId, SearchState};
use molworld::rng::Rng;

/// Random connected graph: a random tree plus up to `extra` chords.
pub fn random_graph(rng: &mut Rng, n: usize, extra: usize) -> (Vec<String>, Vec<(String, String)>) {
    let mols: Vec<String> = (0..n).map(|i| format!("N{i:02}")).collect();
    let mut pairs = BTreeSet::new();
    for i in 1..n {
        pairs.insert((rng.gen_range(0..i), i));
    }
    for _ in 0..extra {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges = pairs.into_iter().map(|(a, b)| (mols[a].clone(), mols[b].clone())).collect();
    (mols, edges)
}

/// Random graph with some nodes scored and a few past selections recorded.
pub fn random_state(rng: &mut Rng, n: usize) -> SearchState {
    let extra = rng.gen_range(0..n);
    let (mols, edges) = random_graph(rng, n, extra);
    let mut st = SearchState::new(&mols, &edges, BudgetLedger::new(1_000)).unwrap();
    for i in 0..n {
        if rng.gen_bool(0.7) {
            st.record_score(MoleculeId(i as u32), rng.gen_range(0.0..1.0)).unwrap();
        }
    }
    let rounds = rng.gen_range(0..4);
    for t in 0..rounds {
        st.iteration = t;
        let picks: Vec<AnchorContext> = (0..rng.gen_range(1..3))
            .map(|_| AnchorContext::singleton(MoleculeId(rng.gen_range(0..n) as u32)))
            .collect();
        st.update_trace(&picks).unwrap();
    }
    st.iteration = rounds;
    st
}

fn connected(members: &[usize], adj: &[Vec<usize>]) -> bool {
    let set: BTreeSet<usize> = members.iter().copied().collect();
    let mut seen = BTreeSet::from([members[0]]);
    let mut queue = VecDeque::from([members[0]]);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if set.contains(&u) && seen.insert(u) {
                queue.push_back(u);
            }
        }
    }
    seen.len() == set.len()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Every connected `k`-subset of the graph, by exhaustive enumeration.
pub fn connected_subsets(st: &SearchState, k: usize) -> Vec<AnchorContext> {
    let n = st.graph.len();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| st.graph.neighbors(MoleculeId(i as u32)).iter().map(|m| m.index()).collect())
        .collect();
    combinations(n, k)
        .into_iter()
        .filter(|c| connected(c, &adj))
        .map(|c| AnchorContext::new(c.into_iter().map(|i| MoleculeId(i as u32)).collect()))
        .collect()
}

/// Highest-scoring context under `score`, ties to the smallest key.
pub fn argmax_by(cands: &[AnchorContext], mut score: impl FnMut(&AnchorContext) -> f64) -> Option<AnchorContext> {
    let mut best: Option<(f64, &AnchorContext)> = None;
    for z in cands {
        let s = score(z);
        best = match best {
            Some((bs, bz)) if bs > s || (bs == s && bz < z) => Some((bs, bz)),
            _ => Some((s, z)),
        };
    }
    best.map(|(_, z)| z.clone())
}

fn set_jaccard(a: &AnchorContext, b: &AnchorContext) -> f64 {
    let x: BTreeSet<_> = a.members().iter().collect();
    let y: BTreeSet<_> = b.members().iter().collect();
    let inter = x.intersection(&y).count();
    let union = x.union(&y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Step-by-step greedy pick with the rerank score recomputed from scratch.
pub fn greedy_oracle(pool: &[AnchorContext], st: &SearchState, p: &AnchorParams) -> Vec<AnchorContext> {
    let mut chosen: Vec<AnchorContext> = Vec::new();
    let mut remaining: Vec<AnchorContext> = pool.to_vec();
    while chosen.len() < p.batch && !remaining.is_empty() {
        let pick = argmax_by(&remaining, |z| {
            let overlap = chosen.iter().map(|c| set_jaccard(z, c)).fold(0.0, f64::max);
            property_score(z, st, p) + p.alpha * exploration_score(z, &st.trace) - p.beta * overlap
        })
        .unwrap();
        remaining.retain(|z| z != &pick);
        chosen.push(pick);
    }
    chosen
}

pub const TARGET: &str = "ABCDABCD";

/// Hidden-target run over the default domain (L=8, alphabet ABCD), budget
/// 1000, exact link oracle, τ = 0.5.
pub fn hidden_target_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::synthetic(
        OracleSpec::HiddenTarget { target: TARGET.into() },
        SeedSource::Synthetic { roots: 4, per_root: 5 },
    );
    cfg.seed = seed;
    cfg.budget = 1_000;
    cfg.tau = 0.5;
    cfg
}
