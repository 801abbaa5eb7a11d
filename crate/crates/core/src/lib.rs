//! Coherent hierarchical learning-to-defer decoding.
//!
//! The crate audits ternary prediction/defer action vectors against handoff
//! contracts, performs exact coherent MAP and minimum-risk decoding on tree
//! taxonomies, propagates action marginals with coherent support, evaluates
//! budget-swept utility and incoherence metrics, and generates the synthetic
//! fixtures used throughout the test suite.

#![forbid(unsafe_code)]

pub mod coherence;
pub mod decode;
mod error;
pub mod eval;
pub mod io;
pub mod loss;
pub mod propagation;
pub mod synth;
pub mod taxonomy;

pub use coherence::{Action, ActionVector, AuditReport, Contract, ContractKind, DefectClass};
pub use decode::RiskTable;
pub use error::{Error, Result};
pub use propagation::{MarginalTable, PrimitiveTable, TransitionKernel};
pub use taxonomy::{LabelVector, Taxonomy, TaxonomyKind};
