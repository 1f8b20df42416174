//! Candidate generators conditioned on an anchor context.
//!
//! Generators emit raw strings. Validity, canonical form and deduplication
//! against the graph are the critique stage's job.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng as _;

use crate::domain::DomainSpec;
use crate::protocol::{ProtocolClient, ProtocolError};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorRequest {
    pub context_members: Vec<String>,
    /// Edges among context members.
    pub context_edges: Vec<(String, String)>,
    pub n: usize,
    pub rng_seed: u64,
}

/// Position-independent symbol substitution `from -> to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SubstitutionRule {
    pub from: char,
    pub to: char,
}

/// Both directions of the single differing symbol of every edge, sorted and
/// deduplicated. Edges that do not differ in exactly one position are
/// skipped.
pub fn extract_rules(edges: &[(String, String)]) -> Vec<SubstitutionRule> {
    let mut rules = BTreeSet::new();
    for (a, b) in edges {
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        if ca.len() != cb.len() {
            continue;
        }
        let mut diffs = ca.iter().zip(&cb).filter(|(x, y)| x != y);
        if let (Some((&x, &y)), None) = (diffs.next(), diffs.next()) {
            rules.insert(SubstitutionRule { from: x, to: y });
            rules.insert(SubstitutionRule { from: y, to: x });
        }
    }
    rules.into_iter().collect()
}

/// Applies every rule at every matching position of every member and drops
/// the members themselves. When the context carries no rules this falls back
/// to random single-symbol mutation. More than `n` candidates are subsampled
/// without replacement; output is sorted.
pub fn generate_rule_based(req: &GeneratorRequest, spec: &DomainSpec) -> Vec<String> {
    let rules = extract_rules(&req.context_edges);
    let members: BTreeSet<&str> = req.context_members.iter().map(String::as_str).collect();
    if rules.is_empty() {
        let mut out = generate_random_mutation(req, spec);
        out.retain(|m| !members.contains(m.as_str()));
        return out;
    }
    let mut pool = BTreeSet::new();
    for m in &req.context_members {
        let chars: Vec<char> = m.chars().collect();
        for rule in &rules {
            for (i, &c) in chars.iter().enumerate() {
                if c == rule.from {
                    let mut next = chars.clone();
                    next[i] = rule.to;
                    let s: String = next.into_iter().collect();
                    if !members.contains(s.as_str()) {
                        pool.insert(s);
                    }
                }
            }
        }
    }
    let pool: Vec<String> = pool.into_iter().collect();
    if pool.len() <= req.n {
        return pool;
    }
    let mut rng = rng_from_seed(req.rng_seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), req.n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i].clone()).collect()
}

/// Random single-position substitutions of uniform random members,
/// deduplicated, sorted. Stops short of `n` when the neighbourhood is
/// exhausted.
pub fn generate_random_mutation(req: &GeneratorRequest, spec: &DomainSpec) -> Vec<String> {
    let tokens = spec.tokens();
    let members: Vec<Vec<char>> = req
        .context_members
        .iter()
        .map(|m| m.chars().collect())
        .filter(|c: &Vec<char>| !c.is_empty())
        .collect();
    if members.is_empty() {
        return Vec::new();
    }
    let neighbourhood: usize = members.iter().map(|m| m.len() * (tokens.len() - 1)).sum();
    let want = req.n.min(neighbourhood);
    let mut rng: Rng = rng_from_seed(req.rng_seed);
    let mut out = BTreeSet::new();
    let mut tries = 0;
    while out.len() < want && tries < want * 64 {
        tries += 1;
        let m = &members[rng.gen_range(0..members.len())];
        let pos = rng.gen_range(0..m.len());
        let others: Vec<char> = tokens.iter().copied().filter(|&t| t != m[pos]).collect();
        let mut next = m.clone();
        next[pos] = others[rng.gen_range(0..others.len())];
        out.insert(next.into_iter().collect::<String>());
    }
    out.into_iter().collect()
}

/// Forwards the request to an external peer and returns its list verbatim.
pub fn generate_external(req: &GeneratorRequest, client: &mut ProtocolClient) -> Result<Vec<String>, ProtocolError> {
    client.gen(&req.context_members, &req.context_edges, req.n)
}

/// Pluggable generator slot.
pub enum Generator {
    RuleBased(DomainSpec),
    RandomMutation(DomainSpec),
    External(ProtocolClient),
}

impl Generator {
    pub fn generate(&mut self, req: &GeneratorRequest) -> Result<Vec<String>, ProtocolError> {
        match self {
            Generator::RuleBased(spec) => Ok(generate_rule_based(req, spec)),
            Generator::RandomMutation(spec) => Ok(generate_random_mutation(req, spec)),
            Generator::External(client) => generate_external(req, client),
        }
    }
}
