mod common;

use std::collections::HashSet;

use molworld::config::Ablation;
use molworld::domain::{score_hidden_target, DomainSpec};
use molworld::driver::{self, run_with, Components, RunLogRecord, StopReason};
use molworld::evolve::{ExactLinkOracle, FnOracle};
use molworld::generate::Generator;
use molworld::graph::{CallRecord, EarlyStop, Origin};

use common::{hidden_target_config, TARGET};

fn calls(log: &[RunLogRecord]) -> Vec<CallRecord> {
    log.iter()
        .filter_map(|r| match r {
            RunLogRecord::Call(c) => Some(c.clone()),
            _ => None,
        })
        .collect()
}

fn iterations(log: &[RunLogRecord]) -> Vec<&RunLogRecord> {
    log.iter().filter(|r| matches!(r, RunLogRecord::Iteration { .. })).collect()
}

fn calls_in(log: &[RunLogRecord], iteration: usize) -> Vec<CallRecord> {
    calls(log).into_iter().filter(|c| c.iteration == iteration).collect()
}

fn first_anchors(log: &[RunLogRecord]) -> Vec<molworld::AnchorContext> {
    match iterations(log)[0] {
        RunLogRecord::Iteration { anchors, .. } => anchors.clone(),
        _ => unreachable!(),
    }
}

fn with_oracle(f: impl FnMut(&str) -> f64 + 'static) -> Components {
    let spec = DomainSpec::default();
    Components {
        domain: Box::new(spec.clone()),
        oracle: Box::new(FnOracle(f)),
        generator: Generator::RuleBased(spec.clone()),
        scorer: Box::new(ExactLinkOracle(spec)),
    }
}

#[test]
fn counts_are_conserved_every_pass() {
    for ablation in [Ablation::None, Ablation::RandomAnchors, Ablation::RandomGenerator, Ablation::FrozenGraph] {
        let mut cfg = hidden_target_config(5);
        cfg.budget = 300;
        cfg.ablation = ablation;
        let out = driver::run(&cfg).unwrap();
        let mut inserted = 0;
        for r in iterations(&out.log) {
            let RunLogRecord::Iteration { counts: c, .. } = r else { unreachable!() };
            assert_eq!(c.raw, c.retained + c.rejected_invalid + c.rejected_duplicate + c.rejected_known);
            assert_eq!(c.retained, c.inserted + c.rejected_unconnected + c.withheld + c.deferred);
            assert_eq!(c.scored, c.oracle_calls + c.cache_hits);
            inserted += c.inserted;
        }
        assert_eq!(out.state.graph.len(), 20 + inserted, "{ablation:?}");
        if ablation == Ablation::FrozenGraph {
            assert_eq!(inserted, 0);
        }
        for id in out.state.graph.ids() {
            assert!(out.state.is_reachable(id).unwrap());
        }
    }
}

#[test]
fn ablations_change_only_their_stage() {
    let base_cfg = hidden_target_config(8);
    let base = driver::run(&base_cfg).unwrap();
    let run = |a: Ablation| {
        let mut cfg = base_cfg.clone();
        cfg.ablation = a;
        driver::run(&cfg).unwrap()
    };

    // Seed scoring is identical everywhere.
    let seeds = calls_in(&base.log, 0);
    assert_eq!(seeds.len(), 20);

    let frozen = run(Ablation::FrozenGraph);
    assert_eq!(calls_in(&frozen.log, 0), seeds);
    // Same anchors and candidates on the first pass; only insertion differs.
    assert_eq!(first_anchors(&frozen.log), first_anchors(&base.log));
    assert_eq!(calls_in(&frozen.log, 1), calls_in(&base.log, 1));
    assert_eq!(frozen.state.graph.len(), 20);

    let rgen = run(Ablation::RandomGenerator);
    assert_eq!(calls_in(&rgen.log, 0), seeds);
    assert_eq!(first_anchors(&rgen.log), first_anchors(&base.log));
    assert_ne!(calls_in(&rgen.log, 1), calls_in(&base.log, 1));

    let ranc = run(Ablation::RandomAnchors);
    assert_eq!(calls_in(&ranc.log, 0), seeds);
    assert_ne!(first_anchors(&ranc.log), first_anchors(&base.log));
    for z in first_anchors(&ranc.log) {
        assert!(z.is_connected(&ranc.state.graph));
    }
}

/// Running top-100 mean after each pass, recomputed from the call log.
fn top100_by_pass(calls: &[CallRecord], passes: usize) -> Vec<f64> {
    (0..=passes)
        .map(|t| {
            let mut s: Vec<f64> = calls.iter().filter(|c| c.iteration <= t).map(|c| c.normalized).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            s.truncate(100);
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

#[test]
fn early_stop_follows_plateau() {
    let mut cfg = hidden_target_config(2);
    cfg.budget = 20_000;
    let spec = DomainSpec::default();
    // Capped landscape: the top-100 mean saturates at 0.625.
    let out = run_with(&cfg, with_oracle(move |m| score_hidden_target(m, TARGET, &spec).unwrap().min(0.625))).unwrap();
    assert_eq!(out.stop_reason, StopReason::EarlyStop);
    let t_stop = out.state.iteration;
    let means = top100_by_pass(&calls(&out.log), t_stop);
    let (mut best, mut plateau_start) = (means[0], 0);
    for (t, &m) in means.iter().enumerate().skip(1) {
        if m - best >= cfg.early_stop.min_delta {
            best = m;
            plateau_start = t;
        }
    }
    assert!(plateau_start > 0, "landscape should improve before saturating");
    assert_eq!(t_stop, plateau_start + cfg.early_stop.patience);
}

#[test]
fn constant_oracle_stops_after_patience() {
    for patience in [1, 3, 5] {
        let mut cfg = hidden_target_config(4);
        cfg.budget = 20_000;
        cfg.early_stop = EarlyStop { patience, min_delta: 1e-3 };
        let out = run_with(&cfg, with_oracle(|_| 0.5)).unwrap();
        assert_eq!(out.stop_reason, StopReason::EarlyStop);
        // Seeds fix the plateau at pass 0.
        assert_eq!(out.state.iteration, patience);
        let last = iterations(&out.log).last().cloned().unwrap();
        let RunLogRecord::Iteration { stop_reason, .. } = last else { unreachable!() };
        assert_eq!(*stop_reason, Some(StopReason::EarlyStop));
    }
}

#[test]
fn max_iterations_and_budget_stops() {
    let mut cfg = hidden_target_config(1);
    cfg.max_iterations = Some(2);
    let out = driver::run(&cfg).unwrap();
    assert_eq!((out.stop_reason, out.state.iteration), (StopReason::MaxIterations, 2));

    let mut cfg = hidden_target_config(1);
    cfg.budget = 57;
    let out = driver::run(&cfg).unwrap();
    assert_eq!(out.stop_reason, StopReason::Budget);
    assert_eq!(out.state.budget.used, 57);
    assert_eq!(calls(&out.log).len(), 57);
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let cfg = hidden_target_config(9);
    let a = driver::run(&cfg).unwrap();
    let b = driver::run(&cfg).unwrap();
    assert_eq!(a.log_text(), b.log_text());
    assert_eq!(driver::report_to_text(&a.report), driver::report_to_text(&b.report));
    let mut other = cfg.clone();
    other.seed = 10;
    assert_ne!(driver::run(&other).unwrap().log_text(), a.log_text());
}

#[test]
fn replay_reproduces_report_and_generated_set() {
    let cfg = hidden_target_config(6);
    let out = driver::run(&cfg).unwrap();
    let parsed = driver::parse_log(&out.log_text()).unwrap();
    assert_eq!(parsed, out.log);
    assert_eq!(driver::replay_metrics(&parsed).unwrap(), out.report);

    let seeds: HashSet<String> = out.state.seed_reprs().into_iter().collect();
    let generated: HashSet<String> = calls(&out.log)
        .into_iter()
        .map(|c| c.molecule)
        .filter(|m| !seeds.contains(m))
        .collect();
    assert_eq!(generated.len(), out.report.n_generated);
    for id in out.state.graph.ids() {
        let rec = out.state.graph.record(id).unwrap();
        if let Origin::Generated { .. } = rec.origin {
            assert!(generated.contains(&rec.repr));
        }
    }
}
