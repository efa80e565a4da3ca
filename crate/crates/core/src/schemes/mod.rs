//! The two energy-conserving time steppers.
//!
//! Both advance a two-layer [`WaveState`] by solving for `u^{n+1}` in
//!
//! ```text
//! CNFD:  δₜ²uⁿ - ½δₓ²(uⁿ⁺¹ + uⁿ⁻¹) + ½(uⁿ⁺¹ + uⁿ⁻¹) + λG_ε(uⁿ⁺¹, uⁿ⁻¹) = 0
//! SIEFD: δₜ²uⁿ -  δₓ²uⁿ            + ½(uⁿ⁺¹ + uⁿ⁻¹) + λG_ε(uⁿ⁺¹, uⁿ⁻¹) = 0
//! ```
//!
//! with Newton's method on `u^{n+1}` directly (initial guess `2uⁿ - uⁿ⁻¹`).
//! The Crank-Nicolson Jacobian is cyclic tridiagonal, the semi-implicit one
//! is diagonal.

pub mod tridiag;

use std::fmt;

use log::warn;

use crate::analysis::stability::{siefd_tau_bound, sigma_max, TauBound};
use crate::error::{Error, Result};
use crate::grid::{laplacian_into, sum_cross_jumps, sum_sq, sum_sq_jumps, Grid1D, GridFunction};
use crate::nonlinearity::NonlinearityParams;

use tridiag::CyclicTridiagonal;

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 50;

/// Relative residual below which another Newton update cannot help.
const POLISH_FLOOR: f64 = 1e-15;
const FIXED_POINT_DAMPING: f64 = 0.5;
const FIXED_POINT_MAX_ITER: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Cnfd,
    Siefd,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Cnfd => "cnfd",
            Scheme::Siefd => "siefd",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cnfd" => Ok(Scheme::Cnfd),
            "siefd" => Ok(Scheme::Siefd),
            other => Err(Error::Config(format!(
                "unknown scheme '{other}' (expected cnfd or siefd)"
            ))),
        }
    }
}

/// What to do when Newton's method fails.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fallback {
    DampedFixedPoint,
    Fail,
}

impl std::str::FromStr for Fallback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "damped-fixed-point" => Ok(Fallback::DampedFixedPoint),
            "fail" => Ok(Fallback::Fail),
            other => Err(Error::Config(format!(
                "unknown fallback '{other}' (expected damped-fixed-point or fail)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub tau: f64,
    /// Relative residual tolerance of the nonlinear solve.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub fallback: Fallback,
}

impl StepperConfig {
    pub fn new(scheme: Scheme, tau: f64) -> Result<Self> {
        let cfg = Self {
            scheme,
            tau,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
            fallback: Fallback::DampedFixedPoint,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_newton(mut self, tol: f64, max_iter: usize) -> Result<Self> {
        self.newton_tol = tol;
        self.newton_max_iter = max_iter;
        self.validate()?;
        Ok(self)
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::domain(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.newton_tol > 0.0 && self.newton_tol <= 1e-6) {
            return Err(Error::domain(format!(
                "newton_tol must lie in (0, 1e-6], got {}",
                self.newton_tol
            )));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::domain("newton_max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// `u(·, 0) = φ` and `uₜ(·, 0) = γ` sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialData {
    pub phi: GridFunction,
    pub gamma: GridFunction,
}

/// Two consecutive layers `(uⁿ⁻¹, uⁿ)` at step `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveState {
    pub prev: GridFunction,
    pub curr: GridFunction,
    pub n: usize,
    pub t: f64,
}

impl WaveState {
    pub fn new(prev: GridFunction, curr: GridFunction, n: usize, tau: f64) -> Result<Self> {
        if prev.values().len() != curr.values().len() {
            return Err(Error::DimensionMismatch {
                expected: prev.values().len(),
                got: curr.values().len(),
            });
        }
        Ok(Self {
            prev,
            curr,
            n,
            t: n as f64 * tau,
        })
    }
}

/// Diagnostics from the most recent nonlinear solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Relative residual before each update, plus the final one.
    pub residual_history: Vec<f64>,
    pub used_fallback: bool,
}

/// Raised (not fatal) when the semi-implicit step size violates the linear bound.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityWarning {
    pub tau: f64,
    pub bound: f64,
    pub sigma: f64,
    pub step: usize,
}

impl fmt::Display for StabilityWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SIEFD time step {} exceeds the linear stability bound {:.6} (sigma_max {:.6}, step {})",
            self.tau, self.bound, self.sigma, self.step
        )
    }
}

/// Owns the work buffers for one trajectory.
#[derive(Clone, Debug)]
pub struct Stepper {
    grid: Grid1D,
    params: NonlinearityParams,
    cfg: StepperConfig,
    known: Vec<f64>,
    resid: Vec<f64>,
    jdiag: Vec<f64>,
    off: Vec<f64>,
    delta: Vec<f64>,
    lap: Vec<f64>,
    tri: CyclicTridiagonal,
    stats: SolveStats,
    stability_checked: bool,
    warnings: Vec<StabilityWarning>,
}

impl Stepper {
    pub fn new(grid: Grid1D, params: NonlinearityParams, cfg: StepperConfig) -> Result<Self> {
        cfg.validate()?;
        let n = grid.cells();
        let off = -0.5 / (grid.h() * grid.h());
        Ok(Self {
            grid,
            params,
            cfg,
            known: vec![0.0; n],
            resid: vec![0.0; n],
            jdiag: vec![0.0; n],
            off: vec![off; n],
            delta: vec![0.0; n],
            lap: vec![0.0; n],
            tri: CyclicTridiagonal::new(n),
            stats: SolveStats::default(),
            stability_checked: false,
            warnings: Vec::new(),
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn params(&self) -> &NonlinearityParams {
        &self.params
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn last_stats(&self) -> &SolveStats {
        &self.stats
    }

    pub fn warnings(&self) -> &[StabilityWarning] {
        &self.warnings
    }

    fn check(&self, u: &GridFunction) -> Result<()> {
        let expected = self.grid.cells() + 1;
        if u.values().len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: u.values().len(),
            });
        }
        Ok(())
    }

    /// Taylor start: `u¹ = φ + τγ + (τ²/2)[δₓ²φ - φ - λφ ln(ε² + φ²)]`.
    pub fn first_step(&self, init: &InitialData) -> Result<WaveState> {
        self.check(&init.phi)?;
        self.check(&init.gamma)?;
        let tau = self.cfg.tau;
        let lambda = self.params.lambda();
        let phi = init.phi.cells();
        let mut lap = vec![0.0; phi.len()];
        laplacian_into(phi, self.grid.h(), &mut lap);
        let next = phi
            .iter()
            .zip(init.gamma.cells())
            .zip(&lap)
            .map(|((&f, &g), &l)| {
                f + tau * g + 0.5 * tau * tau * (l - f - lambda * f * self.params.f_raw(f * f))
            })
            .collect();
        WaveState::new(init.phi.clone(), GridFunction::from_cells(next), 1, tau)
    }

    /// Advances one step with the configured scheme.
    pub fn step(&mut self, state: &WaveState) -> Result<WaveState> {
        if self.cfg.scheme == Scheme::Siefd && !self.stability_checked {
            self.stability_checked = true;
            self.check_stability(state);
        }
        let next = self.solve(state)?;
        WaveState::new(state.curr.clone(), next, state.n + 1, self.cfg.tau)
    }

    fn check_stability(&mut self, state: &WaveState) {
        let sigma = sigma_max(&state.curr, &self.params);
        if let Ok(TauBound::AtMost(bound)) = siefd_tau_bound(self.grid.h(), sigma) {
            if self.cfg.tau > bound {
                let w = StabilityWarning {
                    tau: self.cfg.tau,
                    bound,
                    sigma,
                    step: state.n,
                };
                warn!("{w}");
                self.warnings.push(w);
            }
        }
    }

    /// Left-hand side of the scheme with `candidate` in place of `u^{n+1}`.
    pub fn residual(&mut self, candidate: &GridFunction, state: &WaveState) -> Result<GridFunction> {
        self.check(candidate)?;
        self.check(&state.prev)?;
        self.check(&state.curr)?;
        self.assemble_known(state);
        let w = candidate.cells();
        let p = state.prev.cells();
        self.eval(w, p, false);
        Ok(GridFunction::from_cells(self.resid.clone()))
    }

    /// Applies the analytic Jacobian at `candidate` to `v`.
    pub fn jacobian_apply(
        &mut self,
        candidate: &GridFunction,
        state: &WaveState,
        v: &GridFunction,
    ) -> Result<GridFunction> {
        self.check(candidate)?;
        self.check(v)?;
        self.assemble_known(state);
        self.eval(candidate.cells(), state.prev.cells(), true);
        let v = v.cells();
        let n = v.len();
        let out = (0..n)
            .map(|j| match self.cfg.scheme {
                Scheme::Cnfd => {
                    self.jdiag[j] * v[j] + self.off[j] * (v[(j + n - 1) % n] + v[(j + 1) % n])
                }
                Scheme::Siefd => self.jdiag[j] * v[j],
            })
            .collect();
        Ok(GridFunction::from_cells(out))
    }

    /// Solves for `u^{n+1}` without advancing the state.
    pub fn solve(&mut self, state: &WaveState) -> Result<GridFunction> {
        self.check(&state.prev)?;
        self.check(&state.curr)?;
        self.assemble_known(state);
        let u = state.curr.cells();
        let p = state.prev.cells();
        let mut w: Vec<f64> = u.iter().zip(p).map(|(&a, &b)| 2.0 * a - b).collect();
        let scale = 1.0 + self.l2(&self.known);
        let tol = self.cfg.newton_tol;
        self.stats = SolveStats::default();

        let mut newton_failed = false;
        let mut rel = self.eval(&w, p, true) / scale;
        self.stats.residual_history.push(rel);
        while rel > tol {
            if self.stats.iterations >= self.cfg.newton_max_iter || !rel.is_finite() {
                newton_failed = true;
                break;
            }
            if !self.newton_update() {
                newton_failed = true;
                break;
            }
            for (wj, dj) in w.iter_mut().zip(&self.delta) {
                *wj += dj;
            }
            self.stats.iterations += 1;
            rel = self.eval(&w, p, true) / scale;
            self.stats.residual_history.push(rel);
        }
        if !newton_failed && rel > POLISH_FLOOR && self.stats.iterations < self.cfg.newton_max_iter {
            self.polish(&mut w, p, scale, rel);
        }

        if newton_failed {
            match self.cfg.fallback {
                Fallback::Fail => {
                    return Err(Error::NonConvergence {
                        iterations: self.stats.iterations,
                        residual: rel,
                    })
                }
                Fallback::DampedFixedPoint => {
                    self.stats.used_fallback = true;
                    w = u.iter().zip(p).map(|(&a, &b)| 2.0 * a - b).collect();
                    rel = self.fixed_point(&mut w, p, scale)?;
                    if !(rel <= tol) {
                        return Err(Error::NonConvergence {
                            iterations: self.stats.iterations,
                            residual: rel,
                        });
                    }
                }
            }
        }
        Ok(GridFunction::from_cells(w))
    }

    /// One more Newton update past the tolerance, kept only if it lowers the
    /// residual. The energy identity holds to the size of the final residual,
    /// so this keeps long runs from accumulating drift.
    fn polish(&mut self, w: &mut [f64], p: &[f64], scale: f64, rel: f64) {
        if !self.newton_update() {
            return;
        }
        let trial: Vec<f64> = w.iter().zip(&self.delta).map(|(a, d)| a + d).collect();
        let trial_rel = self.eval(&trial, p, false) / scale;
        if trial_rel < rel {
            w.copy_from_slice(&trial);
            self.stats.iterations += 1;
            self.stats.residual_history.push(trial_rel);
        }
    }

    fn newton_update(&mut self) -> bool {
        if self.jdiag.iter().any(|&d| !(d > 0.0)) {
            return false;
        }
        match self.cfg.scheme {
            Scheme::Cnfd => {
                self.resid.iter_mut().for_each(|r| *r = -*r);
                self.tri
                    .solve(&self.off, &self.jdiag, &self.off, &self.resid, &mut self.delta)
                    .is_ok()
                    && self.delta.iter().all(|d| d.is_finite())
            }
            Scheme::Siefd => {
                for ((d, r), j) in self.delta.iter_mut().zip(&self.resid).zip(&self.jdiag) {
                    *d = -r / j;
                }
                true
            }
        }
    }

    /// `w ← (1-ω)w + ω L⁻¹(-known - λG(w, p))` with `L` the linear part.
    fn fixed_point(&mut self, w: &mut [f64], p: &[f64], scale: f64) -> Result<f64> {
        let n = w.len();
        let tau2 = self.cfg.tau * self.cfg.tau;
        let h2 = self.grid.h() * self.grid.h();
        let lin_diag = match self.cfg.scheme {
            Scheme::Cnfd => 1.0 / tau2 + 1.0 / h2 + 0.5,
            Scheme::Siefd => 1.0 / tau2 + 0.5,
        };
        let diag = vec![lin_diag; n];
        let mut rhs = vec![0.0; n];
        let mut target = vec![0.0; n];
        let lambda = self.params.lambda();
        let mut rel = self.eval(w, p, false) / scale;
        for _ in 0..FIXED_POINT_MAX_ITER {
            if rel <= self.cfg.newton_tol || !rel.is_finite() {
                break;
            }
            for j in 0..n {
                rhs[j] = -self.known[j] - lambda * self.params.average(w[j], p[j]);
            }
            match self.cfg.scheme {
                Scheme::Cnfd => self.tri.solve(&self.off, &diag, &self.off, &rhs, &mut target)?,
                Scheme::Siefd => {
                    for j in 0..n {
                        target[j] = rhs[j] / lin_diag;
                    }
                }
            }
            for j in 0..n {
                w[j] = (1.0 - FIXED_POINT_DAMPING) * w[j] + FIXED_POINT_DAMPING * target[j];
            }
            self.stats.iterations += 1;
            rel = self.eval(w, p, false) / scale;
            self.stats.residual_history.push(rel);
        }
        Ok(rel)
    }

    /// The part of the residual that does not depend on `u^{n+1}`.
    fn assemble_known(&mut self, state: &WaveState) {
        let u = state.curr.cells();
        let p = state.prev.cells();
        let inv_tau2 = 1.0 / (self.cfg.tau * self.cfg.tau);
        match self.cfg.scheme {
            Scheme::Cnfd => {
                laplacian_into(p, self.grid.h(), &mut self.lap);
                for j in 0..u.len() {
                    self.known[j] = (p[j] - 2.0 * u[j]) * inv_tau2 - 0.5 * self.lap[j] + 0.5 * p[j];
                }
            }
            Scheme::Siefd => {
                laplacian_into(u, self.grid.h(), &mut self.lap);
                for j in 0..u.len() {
                    self.known[j] = (p[j] - 2.0 * u[j]) * inv_tau2 - self.lap[j] + 0.5 * p[j];
                }
            }
        }
    }

    /// Fills `resid` (and `jdiag` when asked) at `w`; returns `‖resid‖_{l²}`.
    fn eval(&mut self, w: &[f64], p: &[f64], with_jacobian: bool) -> f64 {
        let n = w.len();
        let h = self.grid.h();
        let inv_tau2 = 1.0 / (self.cfg.tau * self.cfg.tau);
        let lambda = self.params.lambda();
        let (self_coeff, neighbour) = match self.cfg.scheme {
            Scheme::Cnfd => (inv_tau2 + 1.0 / (h * h) + 0.5, -0.5 / (h * h)),
            Scheme::Siefd => (inv_tau2 + 0.5, 0.0),
        };
        for j in 0..n {
            let (g, dg) = if with_jacobian {
                self.params.average_with_dz1(w[j], p[j])
            } else {
                (self.params.average(w[j], p[j]), 0.0)
            };
            let mut r = self_coeff * w[j] + lambda * g + self.known[j];
            if neighbour != 0.0 {
                let left = if j == 0 { w[n - 1] } else { w[j - 1] };
                let right = if j == n - 1 { w[0] } else { w[j + 1] };
                r += neighbour * (left + right);
            }
            self.resid[j] = r;
            if with_jacobian {
                self.jdiag[j] = self_coeff + lambda * dg;
            }
        }
        self.l2(&self.resid)
    }

    fn l2(&self, v: &[f64]) -> f64 {
        (self.grid.h() * sum_sq(v)).sqrt()
    }

    /// The conserved discrete energy of `(prev, curr) = (uⁿ, uⁿ⁺¹)`.
    pub fn energy(&self, state: &WaveState) -> f64 {
        energy_of(&self.grid, &self.params, self.cfg.scheme, self.cfg.tau, state)
    }

    /// Runs `steps` steps from the initial data (the Taylor start counts as one),
    /// calling `observe` on every state including the first.
    pub fn run(
        &mut self,
        init: &InitialData,
        steps: usize,
        mut observe: impl FnMut(&WaveState, &SolveStats),
    ) -> Result<WaveState> {
        if steps == 0 {
            return Err(Error::domain("a run needs at least one step"));
        }
        let mut state = self.first_step(init)?;
        observe(&state, &SolveStats::default());
        for _ in 1..steps {
            state = self.step(&state)?;
            observe(&state, &self.stats);
        }
        Ok(state)
    }
}

fn energy_of(
    g: &Grid1D,
    params: &NonlinearityParams,
    scheme: Scheme,
    tau: f64,
    state: &WaveState,
) -> f64 {
    let h = g.h();
    let old = state.prev.cells();
    let new = state.curr.cells();
    let kinetic: f64 = old
        .iter()
        .zip(new)
        .map(|(a, b)| ((b - a) / tau).powi(2))
        .sum::<f64>()
        * h;
    let gradient = match scheme {
        Scheme::Cnfd => 0.5 * (sum_sq_jumps(new) + sum_sq_jumps(old)) / h,
        Scheme::Siefd => sum_cross_jumps(new, old) / h,
    };
    let mass = 0.5 * h * (sum_sq(new) + sum_sq(old));
    let potential: f64 = old
        .iter()
        .chain(new)
        .map(|v| params.primitive_raw(v * v))
        .sum::<f64>()
        * 0.5
        * h
        * params.lambda();
    kinetic + gradient + mass + potential
}

pub fn first_step(
    init: &InitialData,
    p: &NonlinearityParams,
    cfg: &StepperConfig,
    g: &Grid1D,
) -> Result<WaveState> {
    Stepper::new(*g, *p, *cfg)?.first_step(init)
}

fn step_with(
    scheme: Scheme,
    state: &WaveState,
    p: &NonlinearityParams,
    cfg: &StepperConfig,
    g: &Grid1D,
) -> Result<WaveState> {
    if cfg.scheme != scheme {
        return Err(Error::Config(format!(
            "{scheme} step requested with a {} configuration",
            cfg.scheme
        )));
    }
    Stepper::new(*g, *p, *cfg)?.step(state)
}

/// One Crank-Nicolson step.
pub fn cnfd_step(
    state: &WaveState,
    p: &NonlinearityParams,
    cfg: &StepperConfig,
    g: &Grid1D,
) -> Result<WaveState> {
    step_with(Scheme::Cnfd, state, p, cfg, g)
}

/// One semi-implicit step.
pub fn siefd_step(
    state: &WaveState,
    p: &NonlinearityParams,
    cfg: &StepperConfig,
    g: &Grid1D,
) -> Result<WaveState> {
    step_with(Scheme::Siefd, state, p, cfg, g)
}

pub fn assemble_residual(
    candidate: &GridFunction,
    state: &WaveState,
    p: &NonlinearityParams,
    cfg: &StepperConfig,
    g: &Grid1D,
) -> Result<GridFunction> {
    Stepper::new(*g, *p, *cfg)?.residual(candidate, state)
}

pub fn solve_newton(
    state: &WaveState,
    p: &NonlinearityParams,
    cfg: &StepperConfig,
    g: &Grid1D,
) -> Result<GridFunction> {
    Stepper::new(*g, *p, *cfg)?.solve(state)
}

/// `E^{ε,n}` for CNFD, `Ẽ^{ε,n}` for SIEFD, with `(prev, curr)` as `(uⁿ, uⁿ⁺¹)`.
pub fn discrete_energy(
    state: &WaveState,
    p: &NonlinearityParams,
    cfg: &StepperConfig,
    g: &Grid1D,
) -> Result<f64> {
    for u in [&state.prev, &state.curr] {
        if u.values().len() != g.cells() + 1 {
            return Err(Error::DimensionMismatch {
                expected: g.cells() + 1,
                got: u.values().len(),
            });
        }
    }
    Ok(energy_of(g, p, cfg.scheme, cfg.tau, state))
}
