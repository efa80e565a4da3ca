//! Linear (von Neumann) stability predicates for the two schemes.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{norm_linf, Grid1D, GridFunction};
use crate::nonlinearity::NonlinearityParams;

/// Admissible time steps for a scheme at a given mesh size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauBound {
    Unconditional,
    /// Stable for `τ ≤` the value.
    AtMost(f64),
}

impl TauBound {
    pub fn admits(&self, tau: f64) -> bool {
        match *self {
            TauBound::Unconditional => true,
            TauBound::AtMost(bound) => tau <= bound,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            TauBound::Unconditional => None,
            TauBound::AtMost(b) => Some(b),
        }
    }
}

/// `max(|ln ε²|, |ln(ε² + ‖u‖²_∞)|)`.
pub fn sigma_max(u: &GridFunction, p: &NonlinearityParams) -> f64 {
    let sup = u.cells().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    sigma_from_sup(sup, p)
}

/// As [`sigma_max`], for a known bound on `‖u‖_∞`.
pub fn sigma_from_sup(sup: f64, p: &NonlinearityParams) -> f64 {
    let e2 = p.epsilon() * p.epsilon();
    e2.ln().abs().max((e2 + sup * sup).ln().abs())
}

/// Checked variant of [`sigma_max`] against a grid.
pub fn sigma_max_on(u: &GridFunction, p: &NonlinearityParams, g: &Grid1D) -> Result<f64> {
    Ok(sigma_from_sup(norm_linf(u, g)?, p))
}

/// Step-size condition for the semi-implicit scheme:
/// `τ ≤ 2h/√(4 - h² - h²σ)`, unconditional once `4 - h²(1+σ) ≤ 0`.
pub fn siefd_tau_bound(h: f64, sigma: f64) -> Result<TauBound> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::domain(format!("mesh size must be positive, got {h}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::domain(format!("sigma must be non-negative, got {sigma}")));
    }
    let disc = 4.0 - h * h * (1.0 + sigma);
    if disc <= 0.0 || !disc.is_finite() {
        Ok(TauBound::Unconditional)
    } else {
        Ok(TauBound::AtMost(2.0 * h / disc.sqrt()))
    }
}

/// The Crank-Nicolson scheme is stable for every `h, τ > 0`.
pub fn cnfd_tau_bound() -> TauBound {
    TauBound::Unconditional
}

/// `s_l² = (4/h²) sin²(lπ/N)` for `l = -N/2..N/2-1`.
pub fn mode_symbols(h: f64, n: usize) -> impl Iterator<Item = f64> {
    let half = (n / 2) as i64;
    (-half..(n as i64 - half)).map(move |l| {
        let s = 2.0 / h * (l as f64 * PI / n as f64).sin();
        s * s
    })
}

/// Largest root modulus of `ξ² - 2θξ + 1 = 0`.
pub fn amplification_modulus(theta: f64) -> f64 {
    if theta.abs() <= 1.0 {
        // complex pair on the unit circle
        (theta * theta + (1.0 - theta * theta)).sqrt()
    } else {
        theta.abs() + (theta * theta - 1.0).sqrt()
    }
}

/// Semi-implicit `θ_l` for the frozen coefficient `f_ε ≡ α`.
pub fn siefd_theta(s2: f64, tau: f64, alpha: f64) -> f64 {
    (2.0 - s2 * tau * tau) / (2.0 + tau * tau * (alpha + 1.0))
}

/// Crank-Nicolson `θ_l` for the frozen coefficient `f_ε ≡ α`.
pub fn cnfd_theta(s2: f64, tau: f64, alpha: f64) -> f64 {
    2.0 / (2.0 + tau * tau * (alpha + s2 + 1.0))
}

/// `max_l |ξ_l|` of the frozen-coefficient semi-implicit scheme.
pub fn siefd_max_amplification(h: f64, n: usize, tau: f64, alpha: f64) -> f64 {
    mode_symbols(h, n)
        .map(|s2| amplification_modulus(siefd_theta(s2, tau, alpha)))
        .fold(0.0, f64::max)
}

pub fn cnfd_max_amplification(h: f64, n: usize, tau: f64, alpha: f64) -> f64 {
    mode_symbols(h, n)
        .map(|s2| amplification_modulus(cnfd_theta(s2, tau, alpha)))
        .fold(0.0, f64::max)
}
