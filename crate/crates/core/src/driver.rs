//! The optimization loop and its run log.
//!
//! Each pass selects anchors, generates candidates per anchor, and runs one
//! world-model transition. The loop stops when the oracle budget is spent,
//! when the top-100 mean stalls for `patience` passes, or at an optional
//! iteration cap. Everything a run writes is a deterministic function of the
//! config and master seed.

use std::fs;
use std::io;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{beam_search, random_anchors, select_anchors, AnchorContext, AnchorError};
use crate::config::{
    Ablation, ConfigError, DomainChoice, GeneratorChoice, LinkScorerChoice, OracleChoice, RunConfig, SeedSource,
};
use crate::domain::{derive_edges, synthetic_series, Domain, DomainError, DomainSpec, LabelledGraph, OracleSpec};
use crate::evolve::{
    scored_candidates, transition, BuiltinOracle, EvolveError, ExactLinkOracle, ExternalLinkScorer,
    FeatureLinkModel, LinkScorer, Oracle, TransitionParams, TransitionReport,
};
use crate::generate::{Generator, GeneratorRequest};
use crate::graph::{BudgetLedger, CallRecord, EarlyStop, GraphError, SearchState};
use crate::metrics::{build_report, export_distribution, AugmentedGraph, HistogramRow, MetricError, MetricReport, ReportInputs};
use crate::protocol::{ProtocolClient, ProtocolError};
use crate::rng::{stable_hash, Stream};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error("oracle failure: {0}")]
    OracleFailure(String),
    #[error(transparent)]
    Evolve(EvolveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("run log: {0}")]
    Log(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl From<EvolveError> for DriverError {
    fn from(e: EvolveError) -> Self {
        match e {
            EvolveError::Oracle(m) => DriverError::OracleFailure(m),
            other => DriverError::Evolve(other),
        }
    }
}

impl From<ProtocolError> for DriverError {
    fn from(e: ProtocolError) -> Self {
        DriverError::OracleFailure(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    EarlyStop,
    MaxIterations,
}

/// Tracks improvement of a running statistic. The first observation sets the
/// reference; afterwards the stopper fires once `patience` consecutive
/// observations fail to beat the best value by at least `min_delta`.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    params: EarlyStop,
    best: Option<f64>,
    stall: usize,
}

impl EarlyStopper {
    pub fn new(params: EarlyStop) -> Self {
        EarlyStopper {
            params,
            best: None,
            stall: 0,
        }
    }

    /// `None` means nothing has been scored yet and is ignored.
    pub fn observe(&mut self, value: Option<f64>) -> bool {
        let Some(v) = value else { return false };
        match self.best {
            None => {
                self.best = Some(v);
                self.stall = 0;
            }
            Some(b) if v - b >= self.params.min_delta => {
                self.best = Some(v);
                self.stall = 0;
            }
            Some(_) => self.stall += 1,
        }
        self.stall >= self.params.patience
    }

    pub fn stall(&self) -> usize {
        self.stall
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunLogRecord {
    Header {
        config: Box<RunConfig>,
        seeds: Vec<String>,
    },
    Call(CallRecord),
    Iteration {
        iteration: usize,
        anchors: Vec<AnchorContext>,
        counts: TransitionReport,
        top10_mean: f64,
        top100_mean: f64,
        stop_reason: Option<StopReason>,
    },
    Stop {
        reason: StopReason,
        iterations: usize,
        budget_used: u64,
    },
}

pub struct RunOutcome {
    pub state: SearchState,
    pub report: MetricReport,
    pub stop_reason: StopReason,
    pub log: Vec<RunLogRecord>,
}

impl RunOutcome {
    pub fn log_text(&self) -> String {
        log_to_text(&self.log)
    }

    /// Writes `run_log.jsonl`, `metrics.json`, `checkpoint.jsonl` and,
    /// when generated molecules exist, `distribution.tsv`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), DriverError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("run_log.jsonl"), self.log_text())?;
        fs::write(dir.join("metrics.json"), report_to_text(&self.report))?;
        let mut ck = Vec::new();
        self.state.write_snapshot(&mut ck)?;
        fs::write(dir.join("checkpoint.jsonl"), ck)?;
        if let Ok(rows) = distribution(&self.state) {
            fs::write(dir.join("distribution.tsv"), crate::metrics::histogram_tsv(&rows))?;
        }
        Ok(())
    }
}

pub fn log_to_text(log: &[RunLogRecord]) -> String {
    let mut s = String::new();
    for r in log {
        s.push_str(&serde_json::to_string(r).expect("log records encode"));
        s.push('\n');
    }
    s
}

pub fn report_to_text(report: &MetricReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report encodes");
    s.push('\n');
    s
}

/// Domain whose canonicalizer and relation live behind the wire protocol.
pub struct ExternalDomain(pub ProtocolClient);

impl Domain for ExternalDomain {
    fn canonicalize(&mut self, raw: &str) -> Result<String, DomainError> {
        match self.0.canon(raw) {
            Ok(c) => Ok(c),
            Err(ProtocolError::Peer(reason)) => Err(DomainError::InvalidMolecule {
                raw: raw.to_string(),
                reason,
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn related(&mut self, a: &str, b: &str) -> Result<bool, DomainError> {
        Ok(self.0.link(a, b)? >= 0.5)
    }
}

fn make_domain(choice: &DomainChoice) -> Box<dyn Domain> {
    match choice {
        DomainChoice::Synthetic(spec) => Box::new(spec.clone()),
        DomainChoice::External(ep) => Box::new(ExternalDomain(ProtocolClient::new(ep.clone()))),
    }
}

/// Landscape seed actually used by an NK oracle under a master seed.
pub fn effective_oracle(oracle: &OracleSpec, master: u64) -> OracleSpec {
    match oracle {
        OracleSpec::NkRugged { k, seed } => OracleSpec::NkRugged {
            k: *k,
            seed: stable_hash(Stream::NkOracle.seed(master), &seed.to_le_bytes()),
        },
        other => other.clone(),
    }
}

fn make_oracle(cfg: &RunConfig) -> Result<Box<dyn Oracle>, DriverError> {
    Ok(match (&cfg.oracle, &cfg.domain) {
        (OracleChoice::Builtin(o), DomainChoice::Synthetic(spec)) => Box::new(BuiltinOracle {
            spec: spec.clone(),
            oracle: effective_oracle(o, cfg.seed),
        }),
        (OracleChoice::External(ep), _) => Box::new(ProtocolClient::new(ep.clone())),
        (OracleChoice::Builtin(_), DomainChoice::External(_)) => {
            return Err(ConfigError::Invalid("builtin oracles need the synthetic domain".into()).into())
        }
    })
}

fn synthetic_spec(cfg: &RunConfig) -> Result<&DomainSpec, DriverError> {
    match &cfg.domain {
        DomainChoice::Synthetic(spec) => Ok(spec),
        DomainChoice::External(_) => {
            Err(ConfigError::Invalid("builtin generators need the synthetic domain".into()).into())
        }
    }
}

fn make_generator(cfg: &RunConfig) -> Result<Generator, DriverError> {
    if cfg.ablation == Ablation::RandomGenerator {
        return Ok(Generator::RandomMutation(synthetic_spec(cfg)?.clone()));
    }
    Ok(match &cfg.generator {
        GeneratorChoice::RuleBased => Generator::RuleBased(synthetic_spec(cfg)?.clone()),
        GeneratorChoice::RandomMutation => Generator::RandomMutation(synthetic_spec(cfg)?.clone()),
        GeneratorChoice::External(ep) => Generator::External(ProtocolClient::new(ep.clone())),
    })
}

fn make_scorer(cfg: &RunConfig) -> Result<Box<dyn LinkScorer>, DriverError> {
    Ok(match &cfg.link_scorer {
        LinkScorerChoice::Exact => match &cfg.domain {
            DomainChoice::Synthetic(spec) => Box::new(ExactLinkOracle(spec.clone())),
            DomainChoice::External(ep) => Box::new(ExactLinkOracle(ExternalDomain(ProtocolClient::new(ep.clone())))),
        },
        LinkScorerChoice::Learned { model } => {
            let text = fs::read_to_string(model).map_err(|e| {
                ConfigError::Invalid(format!("cannot read link model {}: {e}", model.display()))
            })?;
            Box::new(FeatureLinkModel::from_text(&text)?)
        }
        LinkScorerChoice::External(ep) => Box::new(ExternalLinkScorer(ProtocolClient::new(ep.clone()))),
    })
}

/// Seed molecules (canonical) and seed edges.
pub fn load_seeds(cfg: &RunConfig, domain: &mut dyn Domain) -> Result<LabelledGraph, DriverError> {
    let (raw, edges): (Vec<String>, Option<Vec<(String, String)>>) = match &cfg.seeds {
        SeedSource::File { molecules, edges } => {
            let read = |p: &Path| {
                fs::read_to_string(p).map_err(|e| DomainError::SeedGraph(format!("{}: {e}", p.display())))
            };
            let mols = read(molecules)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect();
            let edges = match edges {
                Some(p) => Some(
                    read(p)?
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty() && !l.starts_with('#'))
                        .map(|l| match l.split('\t').collect::<Vec<_>>()[..] {
                            [a, b] => Ok((a.trim().to_string(), b.trim().to_string())),
                            _ => Err(DomainError::SeedGraph(format!("bad edge line {l:?}"))),
                        })
                        .collect::<Result<_, _>>()?,
                ),
                None => None,
            };
            (mols, edges)
        }
        SeedSource::Synthetic { roots, per_root } => {
            let spec = synthetic_spec(cfg)?;
            let mols = synthetic_series(spec, *roots, *per_root, &mut Stream::Seeds.rng(cfg.seed));
            (mols, None)
        }
        SeedSource::Inline { molecules, edges } => (molecules.clone(), edges.clone()),
    };
    let mols: Vec<String> = raw
        .iter()
        .map(|m| domain.canonicalize(m))
        .collect::<Result<_, _>>()?;
    let edges = match edges {
        Some(e) => e
            .iter()
            .map(|(a, b)| Ok((domain.canonicalize(a)?, domain.canonicalize(b)?)))
            .collect::<Result<_, DomainError>>()?,
        None => match &cfg.domain {
            DomainChoice::Synthetic(_) => derive_edges(&mols)
                .into_iter()
                .map(|(i, j)| (mols[i].clone(), mols[j].clone()))
                .collect(),
            DomainChoice::External(_) => {
                let mut out = Vec::new();
                for i in 0..mols.len() {
                    for j in i + 1..mols.len() {
                        if domain.related(&mols[i], &mols[j])? {
                            out.push((mols[i].clone(), mols[j].clone()));
                        }
                    }
                }
                out
            }
        },
    };
    Ok((mols, edges))
}

/// The pluggable stages of a run.
pub struct Components {
    pub domain: Box<dyn Domain>,
    pub oracle: Box<dyn Oracle>,
    pub generator: Generator,
    pub scorer: Box<dyn LinkScorer>,
}

impl Components {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, DriverError> {
        Ok(Components {
            domain: make_domain(&cfg.domain),
            oracle: make_oracle(cfg)?,
            generator: make_generator(cfg)?,
            scorer: make_scorer(cfg)?,
        })
    }
}

/// Runs the full loop for `cfg`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, DriverError> {
    cfg.validate()?;
    run_with(cfg, Components::from_config(cfg)?)
}

/// Runs the loop with caller-supplied stages. The config still decides seeds,
/// parameters and ablation flags; the ablation-driven generator swap is the
/// caller's job here.
pub fn run_with(cfg: &RunConfig, components: Components) -> Result<RunOutcome, DriverError> {
    cfg.validate()?;
    let Components {
        mut domain,
        mut oracle,
        mut generator,
        mut scorer,
    } = components;
    let (seeds, seed_edges) = load_seeds(cfg, domain.as_mut())?;

    let budget = BudgetLedger {
        limit: cfg.budget,
        used: 0,
        early_stop: cfg.early_stop,
    };
    let mut state = SearchState::with_normalizer(&seeds, &seed_edges, budget, cfg.normalizer)?;
    let mut log = vec![RunLogRecord::Header {
        config: Box::new(cfg.clone()),
        seeds: seeds.clone(),
    }];

    if cfg.score_seeds {
        let ids: Vec<_> = state.graph.ids().collect();
        for id in ids {
            if state.budget.exhausted() {
                break;
            }
            let raw = oracle.evaluate(state.graph.repr(id))?;
            state.record_score(id, raw)?;
        }
        log.extend(state.props.calls().iter().cloned().map(RunLogRecord::Call));
    }

    let mut anchor_rng = Stream::Anchor.rng(cfg.seed);
    let mut gen_rng = Stream::Generator.rng(cfg.seed);
    let mut stopper = EarlyStopper::new(cfg.early_stop);
    stopper.observe(state.props.top_k_mean(100));
    let params = TransitionParams {
        tau: cfg.tau,
        prefilter: cfg.prefilter,
        frozen: cfg.ablation == Ablation::FrozenGraph,
    };

    let stop_reason = loop {
        if state.budget.exhausted() {
            break StopReason::Budget;
        }
        if cfg.max_iterations.is_some_and(|m| state.iteration >= m) {
            break StopReason::MaxIterations;
        }
        let anchors = if cfg.ablation == Ablation::RandomAnchors {
            random_anchors(&state, &cfg.anchor, &mut anchor_rng)?
        } else {
            let pool = beam_search(&state, &cfg.anchor, &mut anchor_rng)?;
            select_anchors(&pool, &state, &cfg.anchor)?
        };
        state.update_trace(&anchors)?;

        let mut candidates = Vec::new();
        for z in &anchors {
            let members: Vec<String> = z.members().iter().map(|&v| state.graph.repr(v).to_string()).collect();
            let mut edges = Vec::new();
            for &v in z.members() {
                for &u in state.graph.neighbors(v) {
                    if u > v && z.contains(u) {
                        edges.push((state.graph.repr(v).to_string(), state.graph.repr(u).to_string()));
                    }
                }
            }
            let req = GeneratorRequest {
                context_members: members,
                context_edges: edges,
                n: cfg.n_per_context,
                rng_seed: gen_rng.gen(),
            };
            candidates.extend(generator.generate(&req).map_err(|e| DriverError::OracleFailure(e.to_string()))?);
        }

        let calls_before = state.props.len();
        let counts = transition(
            &mut state,
            &candidates,
            domain.as_mut(),
            scorer.as_mut(),
            oracle.as_mut(),
            &params,
        )?;
        log.extend(state.props.calls()[calls_before..].iter().cloned().map(RunLogRecord::Call));

        let top100 = state.props.top_k_mean(100);
        let stalled = stopper.observe(top100);
        let stop = if state.budget.exhausted() {
            Some(StopReason::Budget)
        } else if stalled {
            Some(StopReason::EarlyStop)
        } else if cfg.max_iterations.is_some_and(|m| state.iteration >= m) {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        log.push(RunLogRecord::Iteration {
            iteration: state.iteration,
            anchors,
            counts,
            top10_mean: state.props.top_k_mean(10).unwrap_or(0.0),
            top100_mean: top100.unwrap_or(0.0),
            stop_reason: stop,
        });
        if let Some(reason) = stop {
            break reason;
        }
    };
    log.push(RunLogRecord::Stop {
        reason: stop_reason,
        iterations: state.iteration,
        budget_used: state.budget.used,
    });

    let calls = state.props.calls().to_vec();
    let report = compute_report(cfg, &seeds, &calls, domain.as_mut())?;
    let outcome = RunOutcome {
        state,
        report,
        stop_reason,
        log,
    };
    if let Some(dir) = &cfg.out_dir {
        outcome.write_outputs(dir)?;
    }
    Ok(outcome)
}

/// Metric report from the seed list and the oracle call log alone, so a run
/// log suffices to reproduce it.
pub fn compute_report(
    cfg: &RunConfig,
    seeds: &[String],
    calls: &[CallRecord],
    domain: &mut dyn Domain,
) -> Result<MetricReport, DriverError> {
    let seed_set: std::collections::HashSet<&str> = seeds.iter().map(String::as_str).collect();
    let mut nodes: Vec<String> = seeds.to_vec();
    let mut generated = Vec::new();
    let mut generated_raw = Vec::new();
    for c in calls {
        if !seed_set.contains(c.molecule.as_str()) {
            generated.push(nodes.len());
            nodes.push(c.molecule.clone());
            generated_raw.push(c.raw_score);
        }
    }
    let call_scores: Vec<f64> = calls.iter().map(|c| c.normalized).collect();
    let inputs = ReportInputs {
        call_scores: &call_scores,
        budget: cfg.budget as usize,
        graph: AugmentedGraph {
            nodes: &nodes,
            generated: &generated,
        },
        generated_raw: &generated_raw,
        thresholds: &cfg.success_thresholds,
        degree_over_all_nodes: cfg.degree_over_all_nodes,
    };
    let mut failure = None;
    let mut related = |a: &str, b: &str| match domain.related(a, b) {
        Ok(r) => r,
        Err(e) => {
            failure.get_or_insert(e);
            false
        }
    };
    let report = build_report(&inputs, &mut related);
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(report),
    }
}

pub fn parse_log(text: &str) -> Result<Vec<RunLogRecord>, DriverError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| DriverError::Log(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Recomputes the metric report of a run from its log.
pub fn replay_metrics(log: &[RunLogRecord]) -> Result<MetricReport, DriverError> {
    let Some(RunLogRecord::Header { config, seeds }) = log.first() else {
        return Err(DriverError::Log("first record must be the header".into()));
    };
    let calls: Vec<CallRecord> = log
        .iter()
        .filter_map(|r| match r {
            RunLogRecord::Call(c) => Some(c.clone()),
            _ => None,
        })
        .collect();
    for (i, c) in calls.iter().enumerate() {
        if c.call_index != i as u64 + 1 {
            return Err(DriverError::Log(format!("call indices not contiguous at {}", c.call_index)));
        }
    }
    let mut domain = make_domain(&config.domain);
    compute_report(config, seeds, &calls, domain.as_mut())
}

/// Histogram of normalized scores of generated (non-seed) molecules.
pub fn distribution(state: &SearchState) -> Result<Vec<HistogramRow>, MetricError> {
    let generated = scored_candidates(state);
    let scores: Vec<f64> = state
        .props
        .calls()
        .iter()
        .filter(|c| generated.contains(&c.molecule))
        .map(|c| c.normalized)
        .collect();
    export_distribution(&scores)
}

/// Same histogram from a run log.
pub fn distribution_from_log(log: &[RunLogRecord]) -> Result<Vec<HistogramRow>, DriverError> {
    let Some(RunLogRecord::Header { seeds, .. }) = log.first() else {
        return Err(DriverError::Log("first record must be the header".into()));
    };
    let seeds: std::collections::HashSet<&str> = seeds.iter().map(String::as_str).collect();
    let scores: Vec<f64> = log
        .iter()
        .filter_map(|r| match r {
            RunLogRecord::Call(c) if !seeds.contains(c.molecule.as_str()) => Some(c.normalized),
            _ => None,
        })
        .collect();
    Ok(export_distribution(&scores)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn es(patience: usize) -> EarlyStopper {
        EarlyStopper::new(EarlyStop {
            patience,
            min_delta: 1e-3,
        })
    }

    #[test]
    fn stopper_fires_after_patience() {
        let mut s = es(5);
        assert!(!s.observe(None));
        assert!(!s.observe(Some(0.5)));
        for i in 1..5 {
            assert!(!s.observe(Some(0.5)), "fired early at {i}");
        }
        assert!(s.observe(Some(0.5)));
    }

    #[test]
    fn small_gains_do_not_reset() {
        let mut s = es(3);
        s.observe(Some(0.5));
        assert!(!s.observe(Some(0.5005)));
        assert!(!s.observe(Some(0.5009)));
        // Relative to the best (0.5), 0.502 is an improvement.
        assert!(!s.observe(Some(0.502)));
        assert_eq!(s.stall(), 0);
        assert!(!s.observe(Some(0.502)));
        assert!(!s.observe(Some(0.502)));
        assert!(s.observe(Some(0.502)));
    }

    #[test]
    fn plateau_stop_index() {
        // Rising sequence, then a plateau from index `start` on.
        for start in 0..6 {
            for patience in 1..5 {
                let mut s = es(patience);
                let mut fired = None;
                for t in 0..40 {
                    let v = if t <= start { t as f64 * 0.01 } else { start as f64 * 0.01 };
                    if s.observe(Some(v)) {
                        fired = Some(t);
                        break;
                    }
                }
                assert_eq!(fired, Some(start + patience));
            }
        }
    }

    #[test]
    fn log_records_roundtrip() {
        let r = RunLogRecord::Stop {
            reason: StopReason::EarlyStop,
            iterations: 3,
            budget_used: 9,
        };
        let text = log_to_text(std::slice::from_ref(&r));
        assert_eq!(text, "{\"type\":\"stop\",\"reason\":\"early_stop\",\"iterations\":3,\"budget_used\":9}\n");
        assert_eq!(parse_log(&text).unwrap(), vec![r]);
        assert!(matches!(replay_metrics(&[]), Err(DriverError::Log(_))));
    }
}
