//! Run configuration: a single JSON object of named fields. Unknown keys are
//! rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::AnchorParams;
use crate::domain::{DomainSpec, OracleSpec};
use crate::graph::{EarlyStop, Normalizer};
use crate::metrics::{Direction, SuccessThreshold};
use crate::protocol::ProtocolEndpoint;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainChoice {
    Synthetic(DomainSpec),
    /// Canonicalization and the transfer relation come from a peer.
    External(ProtocolEndpoint),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleChoice {
    Builtin(OracleSpec),
    External(ProtocolEndpoint),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorChoice {
    RuleBased,
    RandomMutation,
    External(ProtocolEndpoint),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LinkScorerChoice {
    Exact,
    Learned { model: PathBuf },
    External(ProtocolEndpoint),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedSource {
    /// One molecule per line; optional tab-separated edge file.
    File {
        molecules: PathBuf,
        #[serde(default)]
        edges: Option<PathBuf>,
    },
    /// Clustered synthetic series drawn from the `seeds` sub-stream.
    Synthetic { roots: usize, per_root: usize },
    Inline {
        molecules: Vec<String>,
        #[serde(default)]
        edges: Option<Vec<(String, String)>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    RandomAnchors,
    RandomGenerator,
    FrozenGraph,
}

impl Ablation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Ablation::None),
            "random_anchors" | "random-anchors" => Some(Ablation::RandomAnchors),
            "random_generator" | "random-generator" => Some(Ablation::RandomGenerator),
            "frozen_graph" | "frozen-graph" => Some(Ablation::FrozenGraph),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_domain")]
    pub domain: DomainChoice,
    pub oracle: OracleChoice,
    #[serde(default)]
    pub normalizer: Normalizer,
    pub seeds: SeedSource,
    #[serde(default = "default_generator")]
    pub generator: GeneratorChoice,
    #[serde(default = "default_link_scorer")]
    pub link_scorer: LinkScorerChoice,
    #[serde(default)]
    pub anchor: AnchorParams,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Tanimoto floor for the candidate-vs-graph scan; off when absent.
    #[serde(default)]
    pub prefilter: Option<f64>,
    #[serde(default = "default_n_per_context")]
    pub n_per_context: usize,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default)]
    pub early_stop: EarlyStop,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default = "default_ablation")]
    pub ablation: Ablation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Evaluate the seed molecules before the first iteration.
    #[serde(default = "default_true")]
    pub score_seeds: bool,
    #[serde(default)]
    pub degree_over_all_nodes: bool,
    #[serde(default = "default_thresholds")]
    pub success_thresholds: Vec<SuccessThreshold>,
}

fn default_domain() -> DomainChoice {
    DomainChoice::Synthetic(DomainSpec::default())
}

fn default_generator() -> GeneratorChoice {
    GeneratorChoice::RuleBased
}

fn default_link_scorer() -> LinkScorerChoice {
    LinkScorerChoice::Exact
}

fn default_tau() -> f64 {
    0.5
}

fn default_n_per_context() -> usize {
    8
}

fn default_budget() -> u64 {
    1000
}

fn default_ablation() -> Ablation {
    Ablation::None
}

fn default_true() -> bool {
    true
}

fn default_thresholds() -> Vec<SuccessThreshold> {
    [0.5, 0.75, 0.9]
        .into_iter()
        .map(|threshold| SuccessThreshold {
            threshold,
            direction: Direction::Geq,
        })
        .collect()
}

/// Budget presets.
pub const BUDGET_LARGE: u64 = 10_000;
pub const BUDGET_SMALL: u64 = 1_000;

impl RunConfig {
    /// Minimal config over the default synthetic domain.
    pub fn synthetic(oracle: OracleSpec, seeds: SeedSource) -> Self {
        RunConfig {
            domain: default_domain(),
            oracle: OracleChoice::Builtin(oracle),
            normalizer: Normalizer::default(),
            seeds,
            generator: default_generator(),
            link_scorer: default_link_scorer(),
            anchor: AnchorParams::default(),
            tau: default_tau(),
            prefilter: None,
            n_per_context: default_n_per_context(),
            budget: default_budget(),
            early_stop: EarlyStop::default(),
            max_iterations: None,
            ablation: Ablation::None,
            seed: 0,
            out_dir: None,
            score_seeds: true,
            degree_over_all_nodes: false,
            success_thresholds: default_thresholds(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative file paths relative to the config's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let SeedSource::File { molecules, edges } = &mut self.seeds {
            fix(molecules);
            if let Some(e) = edges {
                fix(e);
            }
        }
        if let LinkScorerChoice::Learned { model } = &mut self.link_scorer {
            fix(model);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if let DomainChoice::Synthetic(spec) = &self.domain {
            spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if let OracleChoice::Builtin(o) = &self.oracle {
                o.validate(spec).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        } else {
            if matches!(self.oracle, OracleChoice::Builtin(_)) {
                return bad("builtin oracles need the synthetic domain".into());
            }
            if matches!(self.generator, GeneratorChoice::RuleBased | GeneratorChoice::RandomMutation)
                || self.ablation == Ablation::RandomGenerator
            {
                return bad("builtin generators need the synthetic domain".into());
            }
        }
        self.anchor
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must be in (0, 1), got {}", self.tau));
        }
        if self.n_per_context == 0 {
            return bad("n_per_context must be >= 1".into());
        }
        if self.early_stop.min_delta.is_nan() || self.early_stop.min_delta < 0.0 {
            return bad("early_stop.min_delta must be >= 0".into());
        }
        if self.early_stop.patience == 0 {
            return bad("early_stop.patience must be >= 1".into());
        }
        if let SeedSource::Synthetic { roots, per_root } = self.seeds {
            if roots == 0 || per_root == 0 {
                return bad("synthetic seeds need roots >= 1 and per_root >= 1".into());
            }
        }
        for ep in self.endpoints() {
            if ep.timeout_ms == 0 {
                return bad("endpoint timeout must be > 0".into());
            }
        }
        Ok(())
    }

    fn endpoints(&self) -> Vec<&ProtocolEndpoint> {
        let mut v = Vec::new();
        if let DomainChoice::External(e) = &self.domain {
            v.push(e);
        }
        if let OracleChoice::External(e) = &self.oracle {
            v.push(e);
        }
        if let GeneratorChoice::External(e) = &self.generator {
            v.push(e);
        }
        if let LinkScorerChoice::External(e) = &self.link_scorer {
            v.push(e);
        }
        v
    }
}
