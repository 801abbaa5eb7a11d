use thiserror::Error;

/// Errors shared by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("taxonomy source is empty")]
    EmptyTaxonomy,

    #[error("node `{0}` is defined more than once with the same parent")]
    DuplicateNode(String),

    #[error("parent `{0}` is never defined as a node")]
    UnknownParent(String),

    #[error("taxonomy contains a cycle through `{0}`")]
    CycleDetected(String),

    #[error("node `{0}` is declared both a root and a child")]
    ConflictingParent(String),

    #[error("`{0}` is the reserved sentinel name and cannot be a node")]
    ReservedNodeName(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node index {index} out of range for taxonomy of {len} nodes")]
    NodeIndexOutOfRange { index: usize, len: usize },

    #[error("expert index {index} invalid for contract with {experts} expert(s)")]
    InvalidExpertIndex { index: u32, experts: u32 },

    #[error("action vector covers {actions} node(s) but taxonomy has {nodes}")]
    ActionTaxonomyMismatch { actions: usize, nodes: usize },

    #[error("instance too large for exhaustive enumeration: {size} states exceeds {limit}")]
    InstanceTooLarge { size: u128, limit: u128 },

    #[error("action vector is taxonomically unsatisfiable; entailment is undefined")]
    UnsatisfiableInput,

    #[error("expert label vector {0} violates upward closure")]
    ExpertVectorNotClosed(usize),

    #[error("operation requires a tree or forest taxonomy, got a DAG")]
    DagUnsupported,

    #[error("defer set is infeasible under the contract; run feasibility closure first")]
    InfeasibleBudgetMask,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid probability row for node {node}: {reason}")]
    InvalidDistribution { node: usize, reason: String },

    #[error("method requires a risk table but none was provided for instance `{0}`")]
    MissingRiskTable(String),

    #[error("method requires a primitive table but none was provided for instance `{0}`")]
    MissingPrimitiveTable(String),

    #[error("objective increased for more than {max_rises} consecutive steps (step {step})")]
    DivergenceDetected { step: usize, max_rises: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
