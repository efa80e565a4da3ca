//! Cyclic tridiagonal solves via a rank-one corner correction.
//!
//! A periodic tridiagonal matrix is stored as three length-`n` bands:
//! `lower[i] = A[i][i-1]`, `diag[i] = A[i][i]`, `upper[i] = A[i][i+1]`,
//! indices taken mod `n`. So `lower[0]` is the top-right corner and
//! `upper[n-1]` the bottom-left one.

use crate::error::{Error, Result};

/// Reusable scratch space for repeated solves of the same size.
#[derive(Clone, Debug, Default)]
pub struct CyclicTridiagonal {
    bb: Vec<f64>,
    gam: Vec<f64>,
    corr: Vec<f64>,
    z: Vec<f64>,
}

impl CyclicTridiagonal {
    pub fn new(n: usize) -> Self {
        Self {
            bb: vec![0.0; n],
            gam: vec![0.0; n],
            corr: vec![0.0; n],
            z: vec![0.0; n],
        }
    }

    /// Solves `A x = rhs` for the periodic matrix given by its bands.
    pub fn solve(
        &mut self,
        lower: &[f64],
        diag: &[f64],
        upper: &[f64],
        rhs: &[f64],
        x: &mut [f64],
    ) -> Result<()> {
        let n = diag.len();
        if n < 3 {
            return Err(Error::domain("cyclic tridiagonal system needs n >= 3"));
        }
        for len in [lower.len(), upper.len(), rhs.len(), x.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if self.bb.len() != n {
            *self = Self::new(n);
        }
        // bottom-left and top-right corners
        let alpha = upper[n - 1];
        let beta = lower[0];
        let gamma = -diag[0];
        if gamma == 0.0 {
            return Err(Error::Singular("zero leading diagonal entry".into()));
        }

        self.bb.copy_from_slice(diag);
        self.bb[0] -= gamma;
        self.bb[n - 1] -= alpha * beta / gamma;

        thomas(lower, &self.bb, upper, rhs, x, &mut self.gam)?;

        self.corr.iter_mut().for_each(|v| *v = 0.0);
        self.corr[0] = gamma;
        self.corr[n - 1] = alpha;
        let corr = std::mem::take(&mut self.corr);
        let mut z = std::mem::take(&mut self.z);
        let solved = thomas(lower, &self.bb, upper, &corr, &mut z, &mut self.gam);
        self.corr = corr;
        self.z = z;
        solved?;

        let denom = 1.0 + self.z[0] + beta * self.z[n - 1] / gamma;
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Singular("degenerate corner correction".into()));
        }
        let factor = (x[0] + beta * x[n - 1] / gamma) / denom;
        for (xi, zi) in x.iter_mut().zip(&self.z) {
            *xi -= factor * zi;
        }
        Ok(())
    }
}

/// Non-periodic tridiagonal solve using `lower[1..]` and `upper[..n-1]`.
fn thomas(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    gam: &mut [f64],
) -> Result<()> {
    let n = diag.len();
    let mut bet = diag[0];
    if bet == 0.0 {
        return Err(Error::Singular("zero pivot in tridiagonal sweep".into()));
    }
    x[0] = rhs[0] / bet;
    for j in 1..n {
        gam[j] = upper[j - 1] / bet;
        bet = diag[j] - lower[j] * gam[j];
        if bet == 0.0 {
            return Err(Error::Singular("zero pivot in tridiagonal sweep".into()));
        }
        x[j] = (rhs[j] - lower[j] * x[j - 1]) / bet;
    }
    for j in (0..n - 1).rev() {
        x[j] -= gam[j + 1] * x[j + 1];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn apply(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64]) -> Vec<f64> {
        let n = diag.len();
        (0..n)
            .map(|i| lower[i] * x[(i + n - 1) % n] + diag[i] * x[i] + upper[i] * x[(i + 1) % n])
            .collect()
    }

    #[test]
    fn multiply_back_recovers_rhs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut solver = CyclicTridiagonal::default();
        for _ in 0..200 {
            let n = rng.gen_range(3..300);
            let off = -rng.gen_range(0.1..1e4);
            let lower = vec![off; n];
            let upper = vec![off; n];
            // SPD and diagonally dominant, as in the Crank-Nicolson Jacobian
            let diag: Vec<f64> = (0..n).map(|_| -2.0 * off + rng.gen_range(0.1..100.0)).collect();
            let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut x = vec![0.0; n];
            solver.solve(&lower, &diag, &upper, &rhs, &mut x).unwrap();
            let back = apply(&lower, &diag, &upper, &x);
            let scale: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err: f64 = back.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1e-12 * scale, "n={n} err={err}");
        }
    }

    #[test]
    fn general_bands() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let n = 17;
        let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|_| rng.gen_range(3.0..4.0)).collect();
        let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rhs = apply(&lower, &diag, &upper, &truth);
        let mut x = vec![0.0; n];
        CyclicTridiagonal::new(n).solve(&lower, &diag, &upper, &rhs, &mut x).unwrap();
        for (a, b) in x.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut s = CyclicTridiagonal::default();
        let mut x = vec![0.0; 2];
        assert!(s.solve(&[1.0; 2], &[1.0; 2], &[1.0; 2], &[1.0; 2], &mut x).is_err());
        let mut x = vec![0.0; 4];
        assert!(s.solve(&[1.0; 4], &[3.0; 4], &[1.0; 3], &[1.0; 4], &mut x).is_err());
    }
}
