use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{norm_h1, norm_l2, norm_linf, Grid1D, GridFunction};

/// What a numerical solution was compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Truth {
    /// Exact solution of the unregularized equation.
    ExactLog,
    /// Fine-grid solution of the regularized equation.
    ReferenceReg,
    /// No truth available; the norms are those of the solution itself.
    Zero,
}

impl fmt::Display for Truth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Truth::ExactLog => "exact",
            Truth::ReferenceReg => "reference",
            Truth::Zero => "zero",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorReport {
    pub l2: f64,
    pub linf: f64,
    pub h1: f64,
    pub against: Truth,
}

/// Discrete `l²`, `l^∞` and `H¹` norms of `truth - numeric`.
pub fn error_report(
    numeric: &GridFunction,
    truth: &GridFunction,
    g: &Grid1D,
    against: Truth,
) -> Result<ErrorReport> {
    let diff = truth.zip_with(numeric, |a, b| a - b)?;
    Ok(ErrorReport {
        l2: norm_l2(&diff, g)?,
        linf: norm_linf(&diff, g)?,
        h1: norm_h1(&diff, g)?,
        against,
    })
}

/// Observed orders between consecutive `(step, error)` rows:
/// `ln(e_i/e_{i+1}) / ln(s_i/s_{i+1})`, i.e. `log₂` of the error ratio
/// under halving.
pub fn observed_order(errors: &[(f64, f64)]) -> Result<Vec<f64>> {
    if errors.len() < 2 {
        return Err(Error::domain(format!(
            "observed order needs at least two rows, got {}",
            errors.len()
        )));
    }
    errors
        .windows(2)
        .map(|w| {
            let ((s0, e0), (s1, e1)) = (w[0], w[1]);
            if !(s0 > 0.0 && s1 > 0.0 && s1 < s0) {
                return Err(Error::domain(format!(
                    "steps must be positive and strictly decreasing, got {s0} then {s1}"
                )));
            }
            Ok((e0 / e1).ln() / (s0 / s1).ln())
        })
        .collect()
}
