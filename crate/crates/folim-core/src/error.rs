//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Errors carry enough context to
//! name the offending item (tuple, symbol, vertex, ...) so that CLI reports can
//! surface them verbatim.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All error conditions produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file (structure, scheme, manifest).
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    /// Malformed formula text.
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    /// A symbol does not exist in the ambient signature (or is used with the
    /// wrong arity).
    #[error("unknown symbol `{name}`: {context}")]
    UnknownSymbol { name: String, context: String },

    /// A structural invariant is violated; the message names the offending item.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Vertex index outside the universe.
    #[error("vertex {v} out of range for universe of size {n}")]
    VertexOutOfRange { v: usize, n: usize },

    /// A tuple-space enumeration would exceed the configured cap.
    #[error("enumeration of {needed} tuples exceeds cap {cap}")]
    CapExceeded { needed: u128, cap: u64 },

    /// Canonical labeling requested for a structure above the size cap.
    #[error("canonical labeling of {n} vertices exceeds cap {cap}")]
    CanonCapExceeded { n: usize, cap: usize },

    /// Vertex-transitivity test requested for a structure above the size cap.
    #[error("transitivity search on {n} vertices exceeds cap {cap}")]
    TransitiveCapExceeded { n: usize, cap: usize },

    /// Requested tuple arity cannot accommodate the formula's free variables.
    #[error("arity {got} too small: free variables require arity {needed}")]
    ArityTooSmall { needed: usize, got: usize },

    /// An operation required a specific free-variable set.
    #[error("free-variable set {found} does not match required {expected}")]
    WrongFreeVariables { expected: String, found: String },

    /// A variable assignment misses a free variable.
    #[error("assignment does not cover free variable x{var}")]
    IncompleteAssignment { var: u32 },

    /// Variable renaming is not injective on the free variables.
    #[error("renaming is not injective: x{a} and x{b} both map to x{image}")]
    NonInjective { a: u32, b: u32, image: u32 },

    /// Parameters outside an operation's domain.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Unknown generator family name.
    #[error("unknown structure family `{0}`")]
    UnknownFamily(String),

    /// Operation requires a plain graph signature (single binary relation).
    #[error("not a plain graph signature: {0}")]
    NonGraphSignature(String),

    /// Corpus-relative operation received an empty corpus.
    #[error("corpus is empty")]
    EmptyCorpus,

    /// Quantum-graph term outside the basis (neither a single vertex nor free
    /// of isolated vertices).
    #[error("graph is not a basis element: {0}")]
    NotBasisGraph(String),

    /// Two structures that must share a signature do not.
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),

    /// Part weights of a convex combination do not sum to one.
    #[error("part weights sum to {got}, expected 1")]
    WeightSum { got: String },

    /// A formula that must define an equivalence relation fails to.
    #[error("formula does not define an equivalence relation ({law} fails on {pair})")]
    NotEquivalence { law: &'static str, pair: String },

    /// A defining formula is not compatible with the equivalence relation.
    #[error("formula `{theta}` is not compatible with the equivalence: {detail}")]
    NotCompatible { theta: String, detail: String },

    /// Distance guards cannot be transported through interpretation schemes.
    #[error("distance guards do not transport through interpretation schemes")]
    DistGuard,

    /// Malformed rational literal.
    #[error("invalid rational number `{0}`")]
    NumberFormat(String),

    /// Error attributable to one entry of a sequence or list.
    #[error("entry {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable machine-readable kind tag, used by CLI error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Syntax { .. } => "syntax",
            Error::UnknownSymbol { .. } => "unknown-symbol",
            Error::Invariant(_) => "invariant",
            Error::VertexOutOfRange { .. } => "vertex-out-of-range",
            Error::CapExceeded { .. } => "cap-exceeded",
            Error::CanonCapExceeded { .. } => "canon-cap-exceeded",
            Error::TransitiveCapExceeded { .. } => "transitive-cap-exceeded",
            Error::ArityTooSmall { .. } => "arity-too-small",
            Error::WrongFreeVariables { .. } => "wrong-free-variables",
            Error::IncompleteAssignment { .. } => "incomplete-assignment",
            Error::NonInjective { .. } => "non-injective",
            Error::InvalidParams(_) => "invalid-params",
            Error::UnknownFamily(_) => "unknown-family",
            Error::NonGraphSignature(_) => "non-graph-signature",
            Error::EmptyCorpus => "empty-corpus",
            Error::NotBasisGraph(_) => "not-basis-graph",
            Error::SignatureMismatch(_) => "signature-mismatch",
            Error::WeightSum { .. } => "weight-sum",
            Error::NotEquivalence { .. } => "not-equivalence",
            Error::NotCompatible { .. } => "not-compatible",
            Error::DistGuard => "dist-guard",
            Error::NumberFormat(_) => "number-format",
            Error::AtIndex { source, .. } => source.kind(),
        }
    }

    /// Wrap an error with the index of the sequence entry it belongs to.
    pub fn at_index(self, index: usize) -> Error {
        Error::AtIndex { index, source: Box::new(self) }
    }
}
