//! Evaluation quantities: top-k AUC over oracle calls, isolated-node ratio,
//! transfer degree, threshold success ratios and score histograms.
//!
//! Connectivity metrics are judged by a ground-truth edge checker, never by
//! the learned link scorer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no scores to summarize")]
    EmptyHistory,
    #[error("no generated molecules")]
    NoGenerated,
    #[error("history of {len} calls exceeds budget {budget}")]
    OverBudget { len: usize, budget: usize },
}

/// Budget-normalized step-sum of the running top-k mean. Unspent budget
/// carries the final running mean forward, so stopping early earns nothing.
pub fn auc_topk(call_scores: &[f64], k: usize, budget: usize) -> Result<f64, MetricError> {
    if call_scores.is_empty() || k == 0 {
        return Err(MetricError::EmptyHistory);
    }
    if call_scores.len() > budget {
        return Err(MetricError::OverBudget {
            len: call_scores.len(),
            budget,
        });
    }
    // Top-k so far kept sorted descending.
    let mut top: Vec<f64> = Vec::with_capacity(k + 1);
    let mut top_sum = 0.0;
    let mut area = 0.0;
    let mut running = 0.0;
    for &s in call_scores {
        let pos = top.partition_point(|&x| x >= s);
        if pos < k {
            top.insert(pos, s);
            top_sum += s;
            if top.len() > k {
                top_sum -= top.pop().expect("len > k");
            }
        }
        running = top_sum / top.len() as f64;
        area += running;
    }
    area += running * (budget - call_scores.len()) as f64;
    Ok(area / budget as f64)
}

/// A molecule set with ground-truth adjacency, restricted to what metric
/// code needs.
pub struct AugmentedGraph<'a> {
    pub nodes: &'a [String],
    /// Indices into `nodes` counted as generated.
    pub generated: &'a [usize],
}

/// Ground-truth degree of every generated node against all nodes.
pub fn generated_degrees(g: &AugmentedGraph<'_>, related: &mut dyn FnMut(&str, &str) -> bool) -> Vec<usize> {
    g.generated
        .iter()
        .map(|&i| {
            g.nodes
                .iter()
                .enumerate()
                .filter(|&(j, other)| j != i && related(&g.nodes[i], other))
                .count()
        })
        .collect()
}

pub fn isolated_ratio(g: &AugmentedGraph<'_>, related: &mut dyn FnMut(&str, &str) -> bool) -> Result<f64, MetricError> {
    if g.generated.is_empty() {
        return Err(MetricError::NoGenerated);
    }
    let degrees = generated_degrees(g, related);
    Ok(degrees.iter().filter(|&&d| d == 0).count() as f64 / degrees.len() as f64)
}

pub fn avg_degree(g: &AugmentedGraph<'_>, related: &mut dyn FnMut(&str, &str) -> bool) -> Result<f64, MetricError> {
    if g.generated.is_empty() {
        return Err(MetricError::NoGenerated);
    }
    let degrees = generated_degrees(g, related);
    Ok(degrees.iter().sum::<usize>() as f64 / degrees.len() as f64)
}

/// Mean ground-truth degree over every node, not only generated ones.
pub fn avg_degree_all(nodes: &[String], related: &mut dyn FnMut(&str, &str) -> bool) -> Result<f64, MetricError> {
    if nodes.is_empty() {
        return Err(MetricError::NoGenerated);
    }
    let mut total = 0usize;
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if related(&nodes[i], &nodes[j]) {
                total += 2;
            }
        }
    }
    Ok(total as f64 / nodes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Geq,
    Leq,
}

pub fn success_ratio(scores: &[f64], threshold: f64, direction: Direction) -> Result<f64, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyHistory);
    }
    let hits = scores
        .iter()
        .filter(|&&s| match direction {
            Direction::Geq => s >= threshold,
            Direction::Leq => s <= threshold,
        })
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramRow {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// 20 equal-width bins over `[0, 1]`; the last bin is closed on the right.
pub fn export_distribution(normalized: &[f64]) -> Result<Vec<HistogramRow>, MetricError> {
    if normalized.is_empty() {
        return Err(MetricError::EmptyHistory);
    }
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &s in normalized {
        let b = ((s.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        counts[b] += 1;
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramRow {
            lower: i as f64 / HISTOGRAM_BINS as f64,
            upper: (i + 1) as f64 / HISTOGRAM_BINS as f64,
            count,
        })
        .collect())
}

pub fn histogram_tsv(rows: &[HistogramRow]) -> String {
    let mut s = String::from("bin_lower\tbin_upper\tcount\n");
    for r in rows {
        s.push_str(&format!("{}\t{}\t{}\n", r.lower, r.upper, r.count));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc_top1: f64,
    pub auc_top10: f64,
    pub auc_top100: f64,
    pub isolated_ratio: f64,
    pub avg_degree: f64,
    /// Keyed by the threshold as written, e.g. `"geq:0.75"`.
    pub success_at: BTreeMap<String, f64>,
    pub n_generated: usize,
    pub n_calls: usize,
    pub top10_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessThreshold {
    pub threshold: f64,
    pub direction: Direction,
}

pub struct ReportInputs<'a> {
    /// Normalized scores in call order.
    pub call_scores: &'a [f64],
    pub budget: usize,
    pub graph: AugmentedGraph<'a>,
    /// Raw scores of generated molecules.
    pub generated_raw: &'a [f64],
    pub thresholds: &'a [SuccessThreshold],
    pub degree_over_all_nodes: bool,
}

/// Assembles a report. Quantities without data (no calls, no generated
/// molecules) are reported as 0.
pub fn build_report(inputs: &ReportInputs<'_>, related: &mut dyn FnMut(&str, &str) -> bool) -> MetricReport {
    let auc = |k| auc_topk(inputs.call_scores, k, inputs.budget).unwrap_or(0.0);
    let degrees = generated_degrees(&inputs.graph, related);
    let n_gen = degrees.len();
    let isolated = if n_gen == 0 {
        0.0
    } else {
        degrees.iter().filter(|&&d| d == 0).count() as f64 / n_gen as f64
    };
    let avg = if inputs.degree_over_all_nodes {
        avg_degree_all(inputs.graph.nodes, related).unwrap_or(0.0)
    } else if n_gen == 0 {
        0.0
    } else {
        degrees.iter().sum::<usize>() as f64 / n_gen as f64
    };
    let success_at = inputs
        .thresholds
        .iter()
        .map(|t| {
            let key = format!(
                "{}:{}",
                match t.direction {
                    Direction::Geq => "geq",
                    Direction::Leq => "leq",
                },
                t.threshold
            );
            (key, success_ratio(inputs.generated_raw, t.threshold, t.direction).unwrap_or(0.0))
        })
        .collect();
    let mut sorted = inputs.call_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.truncate(10);
    let top10_mean = if sorted.is_empty() {
        0.0
    } else {
        sorted.iter().sum::<f64>() / sorted.len() as f64
    };
    MetricReport {
        auc_top1: auc(1),
        auc_top10: auc(10),
        auc_top100: auc(100),
        isolated_ratio: isolated,
        avg_degree: avg,
        success_at,
        n_generated: n_gen,
        n_calls: inputs.call_scores.len(),
        top10_mean,
    }
}
