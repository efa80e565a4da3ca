use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::schemes::InitialData;

/// Wave speed `c` and wave number `k` of a Gausson, `c² > k²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussonParams {
    c: f64,
    k: f64,
}

impl GaussonParams {
    pub fn new(c: f64, k: f64) -> Result<Self> {
        if !(c.is_finite() && k.is_finite() && c * c > k * k) {
            return Err(Error::domain(format!("Gausson needs c² > k², got c={c}, k={k}")));
        }
        Ok(Self { c, k })
    }

    /// `c = 2, k = 1`.
    pub fn standard() -> Self {
        Self { c: 2.0, k: 1.0 }
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    fn width2(&self) -> f64 {
        2.0 * (self.c * self.c - self.k * self.k)
    }

    /// `u(x, 0)`.
    pub fn phi(&self, x: f64) -> f64 {
        gausson(x, 0.0, self)
    }

    /// `u_t(x, 0) = (ckx/(c²-k²)) exp(-k²x²/(2(c²-k²)))`.
    pub fn gamma(&self, x: f64) -> f64 {
        let m = self.c * self.c - self.k * self.k;
        self.c * self.k * x / m * (-(self.k * x).powi(2) / (2.0 * m)).exp()
    }

    pub fn initial_data(&self, g: &Grid1D) -> InitialData {
        InitialData {
            phi: g.sample(|x| self.phi(x)),
            gamma: g.sample(|x| self.gamma(x)),
        }
    }
}

/// `u(x, t) = exp(-(kx - ct)²/(2(c² - k²)))`, an exact solution of the
/// unregularized equation with `λ = 1`.
pub fn gausson(x: f64, t: f64, gp: &GaussonParams) -> f64 {
    let s = gp.k * x - gp.c * t;
    (-s * s / gp.width2()).exp()
}
