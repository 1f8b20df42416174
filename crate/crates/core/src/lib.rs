//! Reachability-constrained black-box optimization over an evolving
//! molecule-transfer graph.
//!
//! The search state is a graph of molecules joined by local-transformation
//! edges. Each loop pass selects connected anchor contexts, generates
//! candidates from them, scores the candidates against a budgeted oracle and
//! inserts the ones a link model can attach back into the graph.
//!
//! The [`domain`] module provides a self-contained synthetic molecule domain
//! (fixed-length token strings under a Hamming-1 transfer relation); external
//! domains plug in through the newline-delimited JSON protocol in
//! [`protocol`].

pub mod anchor;
pub mod config;
pub mod domain;
pub mod driver;
pub mod evolve;
pub mod generate;
pub mod graph;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod serve;

pub use anchor::{AnchorContext, AnchorParams};
pub use config::RunConfig;
pub use domain::DomainSpec;
pub use graph::{BudgetLedger, MoleculeId, SearchState};
pub use metrics::MetricReport;
