//! Synthetic molecule domain.
//!
//! Molecules are fixed-length strings over a small ordered alphabet. Two
//! molecules are related (joined by a transfer edge) when they differ at
//! exactly one position: every other position is the shared context and the
//! differing one is the variable fragment.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::ProtocolError;
use crate::rng::{stable_hash, unit_interval, Rng};

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid molecule {raw:?}: {reason}")]
    InvalidMolecule { raw: String, reason: String },
    #[error("invalid domain spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("seed graph: {0}")]
    SeedGraph(String),
}

impl DomainError {
    fn invalid(raw: &str, reason: impl Into<String>) -> Self {
        DomainError::InvalidMolecule {
            raw: raw.to_string(),
            reason: reason.into(),
        }
    }
}

/// Canonicalization and the transfer relation for some molecule domain.
pub trait Domain {
    fn canonicalize(&mut self, raw: &str) -> Result<String, DomainError>;
    fn related(&mut self, a: &str, b: &str) -> Result<bool, DomainError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Ordered token set, one char per token.
    #[serde(default = "default_alphabet")]
    pub alphabet: String,
    #[serde(default = "default_length")]
    pub length: usize,
}

fn default_alphabet() -> String {
    "ABCD".to_string()
}

fn default_length() -> usize {
    8
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            alphabet: default_alphabet(),
            length: default_length(),
        }
    }
}

impl DomainSpec {
    pub fn new(alphabet: &str, length: usize) -> Result<Self, DomainError> {
        let spec = DomainSpec {
            alphabet: alphabet.to_string(),
            length,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let tokens = self.tokens();
        let distinct: BTreeSet<char> = tokens.iter().copied().collect();
        if distinct.len() != tokens.len() {
            return Err(DomainError::InvalidSpec("alphabet has repeated tokens".into()));
        }
        if tokens.len() < 2 {
            return Err(DomainError::InvalidSpec("alphabet needs at least 2 tokens".into()));
        }
        if self.length == 0 {
            return Err(DomainError::InvalidSpec("length must be at least 1".into()));
        }
        Ok(())
    }

    pub fn tokens(&self) -> Vec<char> {
        self.alphabet.chars().collect()
    }

    /// Synthetic canonical form is the identity on valid strings.
    pub fn canonicalize(&self, raw: &str) -> Result<String, DomainError> {
        let mut n = 0;
        for c in raw.chars() {
            if !self.alphabet.contains(c) {
                return Err(DomainError::invalid(raw, format!("token {c:?} not in alphabet")));
            }
            n += 1;
        }
        if n != self.length {
            return Err(DomainError::invalid(
                raw,
                format!("length {n}, expected {}", self.length),
            ));
        }
        Ok(raw.to_string())
    }

    pub fn related(&self, a: &str, b: &str) -> Result<bool, DomainError> {
        self.canonicalize(a)?;
        self.canonicalize(b)?;
        Ok(hamming(a, b) == 1)
    }

    pub fn fingerprint(&self, m: &str) -> Result<Fingerprint, DomainError> {
        self.canonicalize(m)?;
        Ok(Fingerprint::of(m))
    }

    /// Uniform random valid molecule.
    pub fn random_molecule(&self, rng: &mut Rng) -> String {
        let tokens = self.tokens();
        (0..self.length)
            .map(|_| tokens[rng.gen_range(0..tokens.len())])
            .collect()
    }

    /// Uniform random single-position substitution of `m`.
    pub fn mutate(&self, m: &str, rng: &mut Rng) -> String {
        let tokens = self.tokens();
        let mut chars: Vec<char> = m.chars().collect();
        let pos = rng.gen_range(0..chars.len());
        let current = chars[pos];
        let others: Vec<char> = tokens.iter().copied().filter(|&t| t != current).collect();
        chars[pos] = others[rng.gen_range(0..others.len())];
        chars.into_iter().collect()
    }
}

impl Domain for DomainSpec {
    fn canonicalize(&mut self, raw: &str) -> Result<String, DomainError> {
        DomainSpec::canonicalize(self, raw)
    }

    fn related(&mut self, a: &str, b: &str) -> Result<bool, DomainError> {
        DomainSpec::related(self, a, b)
    }
}

/// Number of differing positions; strings of unequal length count the
/// surplus as differences.
pub fn hamming(a: &str, b: &str) -> usize {
    let mut ia = a.chars();
    let mut ib = b.chars();
    let mut d = 0;
    loop {
        match (ia.next(), ib.next()) {
            (Some(x), Some(y)) => d += usize::from(x != y),
            (Some(_), None) | (None, Some(_)) => d += 1,
            (None, None) => return d,
        }
    }
}

/// Positional 2-gram bit set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    pub bits: BTreeSet<(usize, char, char)>,
}

impl Fingerprint {
    /// Fingerprint of any string; no alphabet check.
    pub fn of(m: &str) -> Self {
        let chars: Vec<char> = m.chars().collect();
        let bits = chars
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, w[0], w[1]))
            .collect();
        Fingerprint { bits }
    }
}

/// `|a ∩ b| / |a ∪ b|`; two empty fingerprints are identical (1.0).
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let inter = a.bits.intersection(&b.bits).count();
    let union = a.bits.len() + b.bits.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    HiddenTarget { target: String },
    NkRugged { k: usize, seed: u64 },
}

impl OracleSpec {
    pub fn validate(&self, spec: &DomainSpec) -> Result<(), DomainError> {
        match self {
            OracleSpec::HiddenTarget { target } => spec.canonicalize(target).map(|_| ()),
            OracleSpec::NkRugged { k, .. } if *k >= spec.length => Err(DomainError::InvalidSpec(
                format!("nk oracle needs k < L, got k={k}, L={}", spec.length),
            )),
            OracleSpec::NkRugged { .. } => Ok(()),
        }
    }

    pub fn score(&self, m: &str, spec: &DomainSpec) -> Result<f64, DomainError> {
        match self {
            OracleSpec::HiddenTarget { target } => score_hidden_target(m, target, spec),
            OracleSpec::NkRugged { k, seed } => score_nk(m, *k, *seed, spec),
        }
    }
}

/// Fraction of positions where `m` matches `target`.
pub fn score_hidden_target(m: &str, target: &str, spec: &DomainSpec) -> Result<f64, DomainError> {
    spec.canonicalize(m)?;
    spec.canonicalize(target)?;
    let matches = m.chars().zip(target.chars()).filter(|(a, b)| a == b).count();
    Ok(matches as f64 / spec.length as f64)
}

/// NK landscape: mean over positions of a hashed contribution of the
/// cyclic window `m[i..=i+k]`.
pub fn score_nk(m: &str, k: usize, seed: u64, spec: &DomainSpec) -> Result<f64, DomainError> {
    spec.canonicalize(m)?;
    if k >= spec.length {
        return Err(DomainError::InvalidSpec(format!("k={k} must be < L={}", spec.length)));
    }
    let chars: Vec<char> = m.chars().collect();
    let n = chars.len();
    let mut total = 0.0;
    let mut key = String::with_capacity(k + 12);
    for i in 0..n {
        key.clear();
        key.push_str(&i.to_string());
        key.push(':');
        for j in 0..=k {
            key.push(chars[(i + j) % n]);
        }
        total += unit_interval(stable_hash(seed, key.as_bytes()));
    }
    Ok(total / n as f64)
}

/// Clustered seed set: `roots` random molecules, each grown into a series of
/// `per_root` members by single-position mutations of earlier members.
pub fn synthetic_series(spec: &DomainSpec, roots: usize, per_root: usize, rng: &mut Rng) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..roots {
        let mut root = spec.random_molecule(rng);
        let mut tries = 0;
        while seen.contains(&root) && tries < 1000 {
            root = spec.random_molecule(rng);
            tries += 1;
        }
        if !seen.insert(root.clone()) {
            continue;
        }
        let mut series = vec![root];
        let mut tries = 0;
        while series.len() < per_root && tries < per_root * 50 {
            tries += 1;
            let parent = series.choose(rng).expect("series is non-empty").clone();
            let child = spec.mutate(&parent, rng);
            if seen.insert(child.clone()) {
                series.push(child);
            }
        }
        out.extend(series);
    }
    out
}

/// All related pairs by exhaustive scan, as index pairs `(i, j)` with `i < j`.
pub fn derive_edges(mols: &[String]) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..mols.len() {
        for j in i + 1..mols.len() {
            if hamming(&mols[i], &mols[j]) == 1 {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Molecules plus edges as string pairs.
pub type LabelledGraph = (Vec<String>, Vec<(String, String)>);

/// Synthetic labelled graph of `n` molecules in series of 25, with every
/// related pair as an edge.
pub fn synthetic_graph(spec: &DomainSpec, n: usize, rng: &mut Rng) -> LabelledGraph {
    const PER_ROOT: usize = 25;
    let mut nodes = synthetic_series(spec, n.div_ceil(PER_ROOT).max(1), PER_ROOT, rng);
    nodes.truncate(n);
    let edges = derive_edges(&nodes)
        .into_iter()
        .map(|(i, j)| (nodes[i].clone(), nodes[j].clone()))
        .collect();
    (nodes, edges)
}

/// Reads a seed graph: one molecule per line, optional tab-separated edge
/// file. Blank lines and `#` comments are skipped. Without an edge file the
/// edges are derived by exhaustive `related` scan.
pub fn read_seed_graph(
    spec: &DomainSpec,
    molecules: &Path,
    edges: Option<&Path>,
) -> Result<LabelledGraph, DomainError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| DomainError::SeedGraph(format!("{}: {e}", p.display())))
    };
    let mols: Vec<String> = read(molecules)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| spec.canonicalize(l))
        .collect::<Result<_, _>>()?;
    let pairs = match edges {
        Some(p) => read(p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let mut parts = l.split('\t');
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(a), Some(b), None) => Ok((a.trim().to_string(), b.trim().to_string())),
                    _ => Err(DomainError::SeedGraph(format!("bad edge line {l:?}"))),
                }
            })
            .collect::<Result<_, _>>()?,
        None => derive_edges(&mols)
            .into_iter()
            .map(|(i, j)| (mols[i].clone(), mols[j].clone()))
            .collect(),
    };
    Ok((mols, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn l4() -> DomainSpec {
        DomainSpec::new("ABCD", 4).unwrap()
    }

    #[test]
    fn canonicalize_examples() {
        let s = l4();
        assert_eq!(s.canonicalize("AABA").unwrap(), "AABA");
        assert!(matches!(s.canonicalize("AA#A"), Err(DomainError::InvalidMolecule { .. })));
        assert!(matches!(s.canonicalize("AAA"), Err(DomainError::InvalidMolecule { .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(DomainSpec::new("A", 4).is_err());
        assert!(DomainSpec::new("AB", 0).is_err());
        assert!(DomainSpec::new("ABA", 3).is_err());
    }

    #[test]
    fn related_examples() {
        let s = l4();
        assert!(s.related("AAAA", "AABA").unwrap());
        assert!(!s.related("AAAA", "AAAA").unwrap());
        assert!(!s.related("AAAA", "ABBA").unwrap());
        assert!(s.related("AAAA", "AA#A").is_err());
    }

    #[test]
    fn hidden_target_examples() {
        let s = l4();
        assert_eq!(score_hidden_target("ABCD", "ABCD", &s).unwrap(), 1.0);
        assert_eq!(score_hidden_target("AAAA", "ABCD", &s).unwrap(), 0.25);
        assert_eq!(score_hidden_target("DCBA", "ABCD", &s).unwrap(), 0.0);
    }

    #[test]
    fn nk_is_deterministic_and_bounded() {
        let s = DomainSpec::default();
        let a = score_nk("ABCDABCD", 2, 11, &s).unwrap();
        assert_eq!(a, score_nk("ABCDABCD", 2, 11, &s).unwrap());
        assert!((0.0..=1.0).contains(&a));
        assert_ne!(a, score_nk("ABCDABCD", 2, 12, &s).unwrap());
        assert!(score_nk("ABCDABCD", 8, 1, &s).is_err());
    }

    #[test]
    fn nk_k0_is_separable() {
        // With k = 0 each position contributes independently of its neighbours.
        let s = DomainSpec::new("AB", 4).unwrap();
        let f = |m: &str| score_nk(m, 0, 3, &s).unwrap();
        let lhs = f("ABAA") - f("AAAA");
        let rhs = f("ABBB") - f("AABB");
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn nk_global_max_matches_exhaustive_scan() {
        // Independent scan over all 2^6 strings, enumerating by bit pattern.
        let s = DomainSpec::new("AB", 6).unwrap();
        let all: Vec<String> = (0u32..64)
            .map(|bits| (0..6).map(|i| if bits >> i & 1 == 1 { 'B' } else { 'A' }).collect())
            .collect();
        let scores: Vec<f64> = all.iter().map(|m| score_nk(m, 1, 99, &s).unwrap()).collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(scores.len(), 64);
        // Max via a second enumeration route: greedy hill-climb restarts from
        // every string must never exceed the scan maximum, and at least one
        // reaches it.
        let mut reached = false;
        for start in &all {
            let mut cur = start.clone();
            loop {
                let cur_s = score_nk(&cur, 1, 99, &s).unwrap();
                let next = (0..6)
                    .map(|i| {
                        let mut c: Vec<char> = cur.chars().collect();
                        c[i] = if c[i] == 'A' { 'B' } else { 'A' };
                        c.into_iter().collect::<String>()
                    })
                    .max_by(|a, b| {
                        score_nk(a, 1, 99, &s).unwrap().total_cmp(&score_nk(b, 1, 99, &s).unwrap())
                    })
                    .unwrap();
                if score_nk(&next, 1, 99, &s).unwrap() > cur_s {
                    cur = next;
                } else {
                    break;
                }
            }
            let v = score_nk(&cur, 1, 99, &s).unwrap();
            assert!(v <= best);
            reached |= v == best;
        }
        assert!(reached);
    }

    #[test]
    fn fingerprint_examples() {
        let s = l4();
        let a = s.fingerprint("AAAA").unwrap();
        let b = s.fingerprint("AABA").unwrap();
        assert_eq!(a.bits.len(), 3);
        assert_eq!(tanimoto(&a, &a), 1.0);
        assert!((tanimoto(&a, &b) - 0.2).abs() < 1e-12);
        let c = s.fingerprint("BBBB").unwrap();
        assert_eq!(tanimoto(&a, &c), 0.0);
    }

    #[test]
    fn related_pairs_more_similar_than_random() {
        let s = DomainSpec::default();
        let mut rng = rng_from_seed(5);
        let (mut rel, mut rnd) = (0.0, 0.0);
        for _ in 0..1000 {
            let a = s.random_molecule(&mut rng);
            let b = s.mutate(&a, &mut rng);
            let c = s.random_molecule(&mut rng);
            rel += tanimoto(&Fingerprint::of(&a), &Fingerprint::of(&b));
            rnd += tanimoto(&Fingerprint::of(&a), &Fingerprint::of(&c));
        }
        assert!(rel / 1000.0 > rnd / 1000.0);
    }

    #[test]
    fn series_members_are_distinct_and_valid() {
        let s = DomainSpec::default();
        let mols = synthetic_series(&s, 3, 10, &mut rng_from_seed(1));
        assert_eq!(mols.len(), 30);
        let set: HashSet<_> = mols.iter().collect();
        assert_eq!(set.len(), 30);
        for m in &mols {
            s.canonicalize(m).unwrap();
        }
        // Each series is a mutation tree, so every non-root has a neighbour.
        let edges = derive_edges(&mols);
        assert!(edges.len() >= 27);
    }

    #[test]
    fn seed_graph_files() {
        let dir = tempfile::tempdir().unwrap();
        let mols = dir.path().join("mols.txt");
        fs::write(&mols, "AAAA\n# comment\nAABA\n\nCCCC\n").unwrap();
        let s = l4();
        let (m, e) = read_seed_graph(&s, &mols, None).unwrap();
        assert_eq!(m, vec!["AAAA", "AABA", "CCCC"]);
        assert_eq!(e, vec![("AAAA".to_string(), "AABA".to_string())]);
        let edges = dir.path().join("edges.tsv");
        fs::write(&edges, "AAAA\tCCCC\n").unwrap();
        let (_, e) = read_seed_graph(&s, &mols, Some(&edges)).unwrap();
        assert_eq!(e, vec![("AAAA".to_string(), "CCCC".to_string())]);
        fs::write(&edges, "AAAA CCCC\n").unwrap();
        assert!(read_seed_graph(&s, &mols, Some(&edges)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mol() -> impl Strategy<Value = String> {
            proptest::collection::vec(prop::sample::select(vec!['A', 'B', 'C', 'D']), 8)
                .prop_map(|v| v.into_iter().collect())
        }

        proptest! {
            #[test]
            fn related_implies_tanimoto_floor(a in mol(), pos in 0usize..8, tok in 0usize..3) {
                let s = DomainSpec::default();
                let mut c: Vec<char> = a.chars().collect();
                let others: Vec<char> = s.tokens().into_iter().filter(|&t| t != c[pos]).collect();
                c[pos] = others[tok];
                let b: String = c.into_iter().collect();
                prop_assert!(s.related(&a, &b).unwrap());
                let t = tanimoto(&Fingerprint::of(&a), &Fingerprint::of(&b));
                prop_assert!(t >= (8.0 - 3.0) / (8.0 + 1.0) - 1e-12);
            }

            #[test]
            fn related_is_symmetric(a in mol(), b in mol()) {
                let s = DomainSpec::default();
                prop_assert_eq!(s.related(&a, &b).unwrap(), s.related(&b, &a).unwrap());
            }

            #[test]
            fn canonicalize_is_idempotent(a in mol()) {
                let s = DomainSpec::default();
                let c = s.canonicalize(&a).unwrap();
                prop_assert_eq!(s.canonicalize(&c).unwrap(), c);
            }

            #[test]
            fn oracles_in_unit_interval(a in mol(), target in mol(), k in 0usize..8, seed in any::<u64>()) {
                let s = DomainSpec::default();
                let h = score_hidden_target(&a, &target, &s).unwrap();
                prop_assert!((0.0..=1.0).contains(&h));
                prop_assert!(h < 1.0 || a == target);
                let n = score_nk(&a, k, seed, &s).unwrap();
                prop_assert!((0.0..=1.0).contains(&n));
            }
        }
    }
}
