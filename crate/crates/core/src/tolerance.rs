//! Numerical tolerances shared by every module.
//!
//! Each default is collected here so that the thresholds used by validation,
//! rank decisions and the iteration can be audited in one place.

/// Tolerances used when validating and manipulating operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Largest `|H - H^dagger|` entry accepted when constructing a Hermitian operator.
    pub hermiticity: f64,
    /// Allowed deviation of a density matrix trace from one.
    pub trace: f64,
    /// Most negative eigenvalue accepted for a positive operator.
    pub positivity: f64,
    /// Frobenius norm allowed for `sum_j Pi_j - 1`.
    pub closure: f64,
    /// Eigenvalue floor applied before taking logarithms.
    pub log_floor: f64,
    /// Most negative Born probability tolerated before clamping to zero.
    pub probability: f64,
    /// Probabilities below this are treated as zero when building `R`.
    pub zero_probability: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        hermiticity: 1e-8,
        trace: 1e-10,
        positivity: 1e-10,
        closure: 1e-8,
        log_floor: 1e-12,
        probability: 1e-12,
        zero_probability: 1e-14,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Default eigenvalue floor for matrix logarithms.
pub const LOG_FLOOR: f64 = Tolerances::DEFAULT.log_floor;
