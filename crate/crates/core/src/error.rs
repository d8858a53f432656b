use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A constructor argument violates its validity constraint.
    #[error("invalid parameter `{field}` = {value}: {constraint}")]
    InvalidParameter {
        field: &'static str,
        value: f64,
        constraint: &'static str,
    },

    /// An exhaustive enumeration would exceed the configured budget.
    #[error("{what} requires {required} evaluations, exceeding the budget of {budget}")]
    BudgetExceeded {
        what: &'static str,
        required: u128,
        budget: u128,
    },

    /// A recursive sweep would exceed the in-memory size cap.
    #[error("tree of height {n} with branching {d} needs ~{required} message slots, cap is {cap}")]
    SizeCapExceeded {
        d: usize,
        n: usize,
        required: u128,
        cap: u128,
    },

    /// The operation is defined only at the critical point.
    #[error("operation requires critical parameters: p = {p} but p_c = {p_c}")]
    NotCritical { p: f64, p_c: f64 },

    /// The operation is defined only strictly above the critical point.
    #[error("operation requires subcritical parameters (p > p_c): p = {p}, p_c = {p_c}")]
    NotSubcritical { p: f64, p_c: f64 },

    /// Map evaluated outside its domain (Moebius denominator nonpositive).
    #[error("map undefined at x = {x}: denominator nonpositive for x <= {threshold}")]
    OutsideDomain { x: f64, threshold: f64 },

    /// A boundary condition does not fit the tree it is applied to.
    #[error(
        "boundary has {got} leaf colors, tree of height {n} with branching {d} has {expected}"
    )]
    BoundaryLength {
        d: usize,
        n: usize,
        expected: u128,
        got: usize,
    },

    /// A color lies outside `1..=q`.
    #[error("color {color} outside 1..={q}")]
    ColorOutOfRange { color: usize, q: usize },

    /// Malformed input data (boundary files, message vectors).
    #[error("malformed input: {0}")]
    Malformed(String),

    /// The iterate underflowed to zero before the requested index.
    #[error("deviation underflowed to zero at index {n}; rate estimate undefined beyond")]
    Underflow { n: usize },

    /// I/O failure, with the path that was being accessed.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
