use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("map is not a contraction: sup|f'| = {0}")]
    NotAContraction(f64),
    #[error("map does not send [0,1] into itself: image [{0}, {1}]")]
    NotSelfMap(f64, f64),
    #[error("derivative vanishes or changes sign (inf|f'| = {0})")]
    DegenerateDerivative(f64),
    #[error("orientation-reversing map not admitted here")]
    OrientationReversing,
    #[error("all maps share the fixed point {0}")]
    SharedFixedPoint(f64),
    #[error("attractor hull [{0}, {1}] touches an endpoint of [0,1]")]
    EndpointInAttractor(f64, f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("induced alphabet of size {size} exceeds cap {cap}")]
    AlphabetTooLarge { size: u128, cap: usize },
    #[error("UNI functional vanishes to tolerance (max {0:e})")]
    NotUni(f64),
    #[error("search budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("cost cap exceeded: {needed} > {cap} ({hint})")]
    CostCapExceeded { needed: u128, cap: u128, hint: &'static str },
    #[error("Re s = {re} outside strip |Re s| <= {bound}")]
    StripExceeded { re: f64, bound: f64 },
    #[error("grid mismatch: expected {expected} values, got {got}")]
    GridMismatch { expected: usize, got: usize },
    #[error("norm overflow at step {step}: {norm:e}")]
    Overflow { step: usize, norm: f64 },
    #[error("Neumann series does not converge within {0} terms")]
    SeriesDiverging(usize),
    #[error("triple separation fails for parent map {0}")]
    SeparationUnsatisfied(usize),
    #[error("omega prefix too short: need {need}, have {have}")]
    PrefixTooShort { need: usize, have: usize },
    #[error("epsilon {eps} exceeds endpoint margin {margin}")]
    EpsilonTooLarge { eps: f64, margin: f64 },
    #[error("cone condition violated at x = {x}: |H'| = {dh} > {bound}")]
    ConeViolation { x: f64, dh: f64, bound: f64 },
    #[error("no dense set selected")]
    DenseSetEmpty,
    #[error("increment law is lattice-supported (span {0})")]
    LatticeDetected(f64),
}

impl Error {
    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::CostCapExceeded { .. } | Error::AlphabetTooLarge { .. } => ErrorKind::CostCap,
            Error::Overflow { .. }
            | Error::SeriesDiverging(_)
            | Error::NotUni(_)
            | Error::BudgetExhausted(_)
            | Error::DenseSetEmpty
            | Error::LatticeDetected(_)
            | Error::ConeViolation { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Error::NotAContraction(_) => "NotAContraction",
            Error::NotSelfMap(..) => "NotSelfMap",
            Error::DegenerateDerivative(_) => "DegenerateDerivative",
            Error::OrientationReversing => "OrientationReversing",
            Error::SharedFixedPoint(_) => "SharedFixedPoint",
            Error::EndpointInAttractor(..) => "EndpointInAttractor",
            Error::Invalid(_) => "Invalid",
            Error::AlphabetTooLarge { .. } => "AlphabetTooLarge",
            Error::NotUni(_) => "NotUNI",
            Error::BudgetExhausted(_) => "BudgetExhausted",
            Error::CostCapExceeded { .. } => "CostCapExceeded",
            Error::StripExceeded { .. } => "StripExceeded",
            Error::GridMismatch { .. } => "GridMismatch",
            Error::Overflow { .. } => "Overflow",
            Error::SeriesDiverging(_) => "SeriesDiverging",
            Error::SeparationUnsatisfied(_) => "SeparationUnsatisfied",
            Error::PrefixTooShort { .. } => "PrefixTooShort",
            Error::EpsilonTooLarge { .. } => "EpsilonTooLarge",
            Error::ConeViolation { .. } => "ConeViolation",
            Error::DenseSetEmpty => "DenseSetEmpty",
            Error::LatticeDetected(_) => "LatticeDetected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    CostCap,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
