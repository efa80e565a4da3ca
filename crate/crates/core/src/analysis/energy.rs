//! Continuous energies evaluated by the periodic rectangle rule.
//!
//! The gradient term uses `(δ⁺ₓu)²` as its discrete surrogate.

use crate::error::Result;
use crate::grid::{quad_l1, sum_sq, sum_sq_jumps, Grid1D, GridFunction};
use crate::nonlinearity::{log_primitive_raw, primitive_gap_raw, NonlinearityParams};

fn common_terms(u: &GridFunction, ut: &GridFunction, g: &Grid1D) -> Result<f64> {
    // dimension checks
    crate::grid::norm_l2(u, g)?;
    crate::grid::norm_l2(ut, g)?;
    let h = g.h();
    Ok(h * sum_sq(ut.cells()) + sum_sq_jumps(u.cells()) / h + h * sum_sq(u.cells()))
}

/// `∫ u_t² + u_x² + u² + λ F(u²)` with `F(ρ) = ρ ln ρ - ρ`.
///
/// This is the usual `(1-λ)u² + λu² ln u²` density regrouped.
pub fn continuous_energy_log(
    u: &GridFunction,
    ut: &GridFunction,
    lambda: f64,
    g: &Grid1D,
) -> Result<f64> {
    let base = common_terms(u, ut, g)?;
    let pot: f64 = u.cells().iter().map(|v| log_primitive_raw(v * v)).sum();
    Ok(base + lambda * g.h() * pot)
}

/// `∫ u_t² + u_x² + u² + λ F_ε(u²)`.
pub fn continuous_energy_reg(
    u: &GridFunction,
    ut: &GridFunction,
    p: &NonlinearityParams,
    g: &Grid1D,
) -> Result<f64> {
    let base = common_terms(u, ut, g)?;
    let pot: f64 = u.cells().iter().map(|v| p.primitive_raw(v * v)).sum();
    Ok(base + p.lambda() * g.h() * pot)
}

/// Gap between the regularized and unregularized energies of `u0` next to its
/// a priori bound `4ε|λ|‖u0‖_{L¹}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapBound {
    pub gap: f64,
    pub bound: f64,
}

impl GapBound {
    pub fn holds(&self) -> bool {
        self.gap <= self.bound
    }
}

/// Only the potential densities differ between the two energies, so the gap
/// is the quadrature of `|λ|(F_ε(u²) - F(u²))` evaluated without cancellation.
pub fn energy_gap_bound(u0: &GridFunction, p: &NonlinearityParams, g: &Grid1D) -> Result<GapBound> {
    let l1 = quad_l1(u0, g)?;
    let gap: f64 = u0.cells().iter().map(|v| primitive_gap_raw(p, v * v)).sum();
    Ok(GapBound {
        gap: p.lambda().abs() * g.h() * gap,
        bound: 4.0 * p.epsilon() * p.lambda().abs() * l1,
    })
}
