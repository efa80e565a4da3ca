//! Periodic 1D grid, difference operators and discrete norms.
//!
//! A [`GridFunction`] stores `N + 1` samples `u_0..u_N` with `u_N = u_0`.
//! Every operator wraps periodically (`u_{-1} = u_{N-1}`, `u_{N+1} = u_1`),
//! and every norm sums over `j = 0..N-1` only.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D {
    a: f64,
    b: f64,
    n: usize,
    h: f64,
}

impl Grid1D {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::domain(format!("domain [{a}, {b}] must satisfy b > a")));
        }
        if n < 4 {
            return Err(Error::domain(format!("need at least 4 cells, got {n}")));
        }
        Ok(Self {
            a,
            b,
            n,
            h: (b - a) / n as f64,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Number of cells `N`.
    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// `x_j = a + j h` for `j = 0..=N`.
    pub fn node(&self, j: usize) -> f64 {
        if j == self.n {
            self.b
        } else {
            self.a + j as f64 * self.h
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(|j| self.node(j))
    }

    /// Samples `f` at the nodes; the seam value is taken from `x_0`.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::from_cells((0..self.n).map(|j| f(self.node(j))).collect())
    }

    /// Grid with `factor` times as many cells on the same domain.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.a, self.b, self.n * factor)
    }

    fn check(&self, u: &GridFunction) -> Result<()> {
        if u.values.len() == self.n + 1 {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.n + 1,
                got: u.values.len(),
            })
        }
    }
}

/// Samples on `x_0..x_N` with the periodic identification `u_0 = u_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    /// Takes `N + 1` values; the last one is overwritten by the first.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.len() < 5 {
            return Err(Error::domain(format!(
                "a grid function needs at least 5 values, got {}",
                values.len()
            )));
        }
        let last = values.len() - 1;
        values[last] = values[0];
        Ok(Self { values })
    }

    /// Takes the `N` independent values `u_0..u_{N-1}`.
    pub fn from_cells(mut cells: Vec<f64>) -> Self {
        let first = cells.first().copied().unwrap_or(0.0);
        cells.push(first);
        Self { values: cells }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n + 1],
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self {
            values: vec![c; n + 1],
        }
    }

    /// All `N + 1` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The independent values `u_0..u_{N-1}`.
    pub fn cells(&self) -> &[f64] {
        &self.values[..self.values.len() - 1]
    }

    pub fn cell_count(&self) -> usize {
        self.values.len() - 1
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_cells(self.cells().iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(Self::from_cells(
            self.cells()
                .iter()
                .zip(other.cells())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Cyclic shift: the result at `j` is `u_{j+k}`.
    pub fn rotated(&self, k: usize) -> Self {
        let mut cells = self.cells().to_vec();
        let n = cells.len();
        cells.rotate_left(k % n);
        Self::from_cells(cells)
    }

    /// Every `stride`-th value, i.e. restriction to a grid `stride` times coarser.
    pub fn restrict(&self, stride: usize) -> Result<Self> {
        let n = self.cell_count();
        if stride == 0 || !n.is_multiple_of(stride) || n / stride < 4 {
            return Err(Error::domain(format!(
                "cannot restrict {n} cells by a factor of {stride}"
            )));
        }
        Ok(Self::from_cells(self.cells().iter().step_by(stride).copied().collect()))
    }
}

/// `out_j = (u_{j+1} - 2u_j + u_{j-1}) / h²` on periodic cell slices.
pub(crate) fn laplacian_into(u: &[f64], h: f64, out: &mut [f64]) {
    let n = u.len();
    let inv = 1.0 / (h * h);
    out[0] = (u[1] - 2.0 * u[0] + u[n - 1]) * inv;
    for j in 1..n - 1 {
        out[j] = (u[j + 1] - 2.0 * u[j] + u[j - 1]) * inv;
    }
    out[n - 1] = (u[0] - 2.0 * u[n - 1] + u[n - 2]) * inv;
}

pub(crate) fn forward_diff_into(u: &[f64], h: f64, out: &mut [f64]) {
    let n = u.len();
    for j in 0..n - 1 {
        out[j] = (u[j + 1] - u[j]) / h;
    }
    out[n - 1] = (u[0] - u[n - 1]) / h;
}

pub(crate) fn sum_sq(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum()
}

/// `Σ_j (δ⁺u_j)²·h²`, i.e. the squared jumps without the `1/h²`.
pub(crate) fn sum_sq_jumps(u: &[f64]) -> f64 {
    let n = u.len();
    let mut s = (u[0] - u[n - 1]).powi(2);
    for j in 0..n - 1 {
        s += (u[j + 1] - u[j]).powi(2);
    }
    s
}

/// `Σ_j (v_{j+1} - v_j)(w_{j+1} - w_j)`.
pub(crate) fn sum_cross_jumps(v: &[f64], w: &[f64]) -> f64 {
    let n = v.len();
    let mut s = (v[0] - v[n - 1]) * (w[0] - w[n - 1]);
    for j in 0..n - 1 {
        s += (v[j + 1] - v[j]) * (w[j + 1] - w[j]);
    }
    s
}

/// Periodic second difference `δ²ₓu`.
pub fn laplacian(u: &GridFunction, g: &Grid1D) -> Result<GridFunction> {
    g.check(u)?;
    let mut out = vec![0.0; g.n];
    laplacian_into(u.cells(), g.h, &mut out);
    Ok(GridFunction::from_cells(out))
}

/// Forward difference `δ⁺ₓu`, wrapping at the seam.
pub fn forward_diff(u: &GridFunction, g: &Grid1D) -> Result<GridFunction> {
    g.check(u)?;
    let mut out = vec![0.0; g.n];
    forward_diff_into(u.cells(), g.h, &mut out);
    Ok(GridFunction::from_cells(out))
}

/// Backward difference `δ⁻ₓu`, wrapping at the seam.
pub fn backward_diff(u: &GridFunction, g: &Grid1D) -> Result<GridFunction> {
    g.check(u)?;
    let c = u.cells();
    let n = g.n;
    let out = (0..n)
        .map(|j| (c[j] - c[(j + n - 1) % n]) / g.h)
        .collect();
    Ok(GridFunction::from_cells(out))
}

/// `(u, v) = h Σ_{j<N} u_j v_j`.
pub fn inner(u: &GridFunction, v: &GridFunction, g: &Grid1D) -> Result<f64> {
    g.check(u)?;
    g.check(v)?;
    Ok(g.h * u.cells().iter().zip(v.cells()).map(|(a, b)| a * b).sum::<f64>())
}

pub fn norm_l2(u: &GridFunction, g: &Grid1D) -> Result<f64> {
    g.check(u)?;
    Ok((g.h * sum_sq(u.cells())).sqrt())
}

/// `max_{0 ≤ j ≤ N-1} |u_j|`.
pub fn norm_linf(u: &GridFunction, g: &Grid1D) -> Result<f64> {
    g.check(u)?;
    Ok(u.cells().iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// `‖δ⁺ₓu‖_{l²}`.
pub fn seminorm_h1(u: &GridFunction, g: &Grid1D) -> Result<f64> {
    g.check(u)?;
    Ok((sum_sq_jumps(u.cells()) / g.h).sqrt())
}

pub fn norm_h1(u: &GridFunction, g: &Grid1D) -> Result<f64> {
    let l2 = norm_l2(u, g)?;
    let semi = seminorm_h1(u, g)?;
    Ok((l2 * l2 + semi * semi).sqrt())
}

/// Periodic rectangle rule for `∫|u|`.
pub fn quad_l1(u: &GridFunction, g: &Grid1D) -> Result<f64> {
    g.check(u)?;
    Ok(g.h * u.cells().iter().map(|v| v.abs()).sum::<f64>())
}

/// Periodic rectangle rule for `∫u`.
pub fn quad(u: &GridFunction, g: &Grid1D) -> Result<f64> {
    g.check(u)?;
    Ok(g.h * u.cells().iter().sum::<f64>())
}
