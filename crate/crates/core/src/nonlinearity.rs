//! The regularized logarithmic nonlinearity.
//!
//! With `ρ = u²` the regularized model replaces `ln ρ` by `f_ε(ρ) = ln(ε² + ρ)`.
//! Everything here is λ-free: callers multiply by the interaction strength.
//!
//! The primitive is evaluated as
//!
//! ```text
//! F_ε(ρ) = ρ ln(ε² + ρ) + ε² L - ρ,
//! L = ln_1p(ρ/ε²)           if ρ ≤ ε²
//! L = ln(ε² + ρ) - ln(ε²)   otherwise
//! ```
//!
//! so `ρ/ε²` is never formed when it could overflow.
//!
//! The two-point average `G_ε(z1, z2)` is the divided difference of `F_ε`
//! between `z1²` and `z2²`, times `(z1 + z2)/2`. The divided difference is
//! evaluated through its integral representation
//! `D = ∫₀¹ ln(b + θd) dθ = ln b + ψ(d/b)` with `b = ε² + min(z1², z2²)`,
//! `d = |z1 - z2|·|z1 + z2| ≥ 0` and `ψ(x) = ((1+x) ln_1p(x) - x)/x`, which
//! has no cancellation as `z1² → z2²`. Inside the coincidence band
//! `|z1² - z2²| ≤ 1e-8·(z1² + z2² + ε²)` the midpoint limit
//! `f_ε((z1² + z2²)/2)` is used instead.

use crate::error::{Error, Result};

/// Relative width of the band where `G_ε` switches to its midpoint limit.
pub const COINCIDENCE_TOL: f64 = 1e-8;

// Below this the series forms of ψ and φ are used.
const SERIES_CUTOFF: f64 = 0.05;

/// The pair (λ, ε) defining the regularized nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonlinearityParams {
    lambda: f64,
    epsilon: f64,
    eps2: f64,
    ln_eps2: f64,
}

impl NonlinearityParams {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::domain(format!("lambda must be finite, got {lambda}")));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::domain(format!(
                "epsilon must be a positive finite number, got {epsilon}"
            )));
        }
        let eps2 = epsilon * epsilon;
        if eps2 == 0.0 {
            return Err(Error::domain(format!("epsilon {epsilon} underflows when squared")));
        }
        Ok(Self {
            lambda,
            epsilon,
            eps2,
            ln_eps2: eps2.ln(),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `f_ε(ρ) = ln(ε² + ρ)`.
    pub fn f(&self, rho: f64) -> Result<f64> {
        check_rho(rho)?;
        Ok(self.f_raw(rho))
    }

    /// `F_ε(ρ) = ∫₀^ρ ln(ε² + s) ds`.
    pub fn primitive(&self, rho: f64) -> Result<f64> {
        check_rho(rho)?;
        Ok(self.primitive_raw(rho))
    }

    #[inline]
    pub(crate) fn f_raw(&self, rho: f64) -> f64 {
        (self.eps2 + rho).ln()
    }

    #[inline]
    pub(crate) fn primitive_raw(&self, rho: f64) -> f64 {
        if rho == 0.0 {
            return 0.0;
        }
        let ln_sum = (self.eps2 + rho).ln();
        let tail = if rho <= self.eps2 {
            (rho / self.eps2).ln_1p()
        } else {
            ln_sum - self.ln_eps2
        };
        rho * ln_sum + self.eps2 * tail - rho
    }

    /// The two-point average `G_ε(z1, z2)`; symmetric in its arguments.
    #[inline]
    pub fn average(&self, z1: f64, z2: f64) -> f64 {
        let half_sum = 0.5 * (z1 + z2);
        if half_sum == 0.0 {
            return 0.0;
        }
        let s1 = z1 * z1;
        let s2 = z2 * z2;
        let gap = (z1 - z2).abs() * (z1 + z2).abs();
        if self.coincident(gap, s1, s2) {
            return self.f_raw(0.5 * (s1 + s2)) * half_sum;
        }
        let base = self.eps2 + s1.min(s2);
        divided_difference(base, gap) * half_sum
    }

    /// `∂G_ε/∂z1`, on the same branch as [`average`](Self::average).
    #[inline]
    pub fn average_dz1(&self, z1: f64, z2: f64) -> f64 {
        self.average_with_dz1(z1, z2).1
    }

    /// `(G_ε(z1, z2), ∂G_ε/∂z1(z1, z2))` sharing the logarithms.
    #[inline]
    pub fn average_with_dz1(&self, z1: f64, z2: f64) -> (f64, f64) {
        let half_sum = 0.5 * (z1 + z2);
        let s1 = z1 * z1;
        let s2 = z2 * z2;
        let gap = (z1 - z2).abs() * (z1 + z2).abs();
        if self.coincident(gap, s1, s2) {
            let mid = self.eps2 + 0.5 * (s1 + s2);
            let fm = mid.ln();
            let g = if half_sum == 0.0 { 0.0 } else { fm * half_sum };
            return (g, z1 * half_sum / mid + 0.5 * fm);
        }
        let a1 = self.eps2 + s1;
        let a2 = self.eps2 + s2;
        let ln_a1 = a1.ln();
        let ln_a2 = a2.ln();
        let (ln_min, base) = if s1 <= s2 { (ln_a1, a1) } else { (ln_a2, a2) };
        let d = divided_difference_with_log(base, ln_min, (ln_a1 - ln_a2).abs(), gap);
        // ∂D/∂s1 = φ(x)/a2 with x = (s1 - s2)/a2 and φ(x) = (x - ln_1p(x))/x²
        let x = (s1 - s2) / a2;
        let dd_ds1 = phi(x, ln_a1 - ln_a2) / a2;
        let g = if half_sum == 0.0 { 0.0 } else { d * half_sum };
        (g, dd_ds1 * z1 * (z1 + z2) + 0.5 * d)
    }

    #[inline]
    fn coincident(&self, gap: f64, s1: f64, s2: f64) -> bool {
        gap <= COINCIDENCE_TOL * (s1 + s2 + self.eps2)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho >= 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("rho must be finite and non-negative, got {rho}")))
    }
}

/// `∫₀¹ ln(base + θ·gap) dθ` for `base > 0`, `gap ≥ 0`.
#[inline]
fn divided_difference(base: f64, gap: f64) -> f64 {
    let x = gap / base;
    let ln_base = base.ln();
    let log_ratio = if x < 0.5 {
        x.ln_1p()
    } else {
        (base + gap).ln() - ln_base
    };
    ln_base + psi(x, log_ratio)
}

#[inline]
fn divided_difference_with_log(base: f64, ln_base: f64, log_ratio: f64, gap: f64) -> f64 {
    let x = gap / base;
    let log_ratio = if x < 0.5 { x.ln_1p() } else { log_ratio };
    ln_base + psi(x, log_ratio)
}

/// `ψ(x) = ((1+x) ln(1+x) - x)/x` for `x ≥ 0`, given `ln(1+x)`.
#[inline]
fn psi(x: f64, log_ratio: f64) -> f64 {
    if x < SERIES_CUTOFF {
        // Σ_{k≥2} (-1)^k x^{k-1} / (k(k-1))
        let mut sum = 0.0;
        let mut k = 15.0_f64;
        while k >= 2.0 {
            sum = 1.0 / (k * (k - 1.0)) - x * sum;
            k -= 1.0;
        }
        x * sum
    } else {
        ((1.0 + x) * log_ratio - x) / x
    }
}

/// `φ(x) = (x - ln(1+x))/x²` for `x > -1`, given `ln(1+x)`.
#[inline]
fn phi(x: f64, log_ratio: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        // Σ_{k≥0} (-1)^k x^k / (k+2)
        let mut sum = 0.0;
        let mut k = 14.0_f64;
        while k >= 0.0 {
            sum = 1.0 / (k + 2.0) - x * sum;
            k -= 1.0;
        }
        sum
    } else {
        let l = if x.abs() < 0.5 { x.ln_1p() } else { log_ratio };
        (x - l) / (x * x)
    }
}

/// Unregularized density `ln ρ`; singular at `ρ = 0`.
pub fn log_density(rho: f64) -> Result<f64> {
    if rho > 0.0 && rho.is_finite() {
        Ok(rho.ln())
    } else {
        Err(Error::domain(format!(
            "unregularized logarithm needs rho > 0, got {rho}; use log_primitive near the origin"
        )))
    }
}

/// `F(ρ) = ρ ln ρ - ρ`, extended continuously by `F(0) = 0`.
pub fn log_primitive(rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(log_primitive_raw(rho))
}

#[inline]
pub(crate) fn log_primitive_raw(rho: f64) -> f64 {
    if rho == 0.0 {
        0.0
    } else {
        rho * rho.ln() - rho
    }
}

/// `F_ε(ρ) - F(ρ) = ρ ln(1 + ε²/ρ) + ε² ln(1 + ρ/ε²)`, both terms non-negative.
#[inline]
pub(crate) fn primitive_gap_raw(p: &NonlinearityParams, rho: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    let near = if rho >= p.eps2 {
        rho * (p.eps2 / rho).ln_1p()
    } else {
        rho * ((p.eps2 + rho).ln() - rho.ln())
    };
    let far = if rho <= p.eps2 {
        p.eps2 * (rho / p.eps2).ln_1p()
    } else {
        p.eps2 * ((p.eps2 + rho).ln() - p.ln_eps2)
    };
    near + far
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(eps: f64) -> NonlinearityParams {
        NonlinearityParams::new(1.0, eps).unwrap()
    }

    // Adaptive Simpson; independent of the closed forms above.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 60)
    }

    #[test]
    fn f_examples() {
        assert_eq!(params(0.1).f(0.0).unwrap(), 0.01_f64.ln());
        assert!((params(0.1).f(0.0).unwrap() + 4.605170185988091).abs() < 1e-15);
        let p = params(0.3);
        assert!(p.f(1.0 - 0.09).unwrap().abs() < 1e-15);
        assert!((params(0.5).f(1.0).unwrap() - 0.22314355131420976).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(params(0.1).f(-1e-3).is_err());
        assert!(params(0.1).primitive(-1.0).is_err());
        assert!(NonlinearityParams::new(1.0, 0.0).is_err());
        assert!(NonlinearityParams::new(1.0, -0.1).is_err());
        assert!(NonlinearityParams::new(f64::NAN, 0.1).is_err());
        assert!(log_density(0.0).is_err());
        assert!(log_primitive(-0.5).is_err());
    }

    #[test]
    fn primitive_examples() {
        let p = params(0.5);
        assert_eq!(p.primitive(0.0).unwrap(), 0.0);
        let quad = simpson(&|s: f64| (0.25 + s).ln(), 0.0, 1.0, 1e-15);
        let closed = 1.25_f64.ln() + 0.25 * 5.0_f64.ln() - 1.0;
        // quoted value is good to seven digits; the closed form is -0.3744969706...
        assert!((closed + 0.374496903).abs() < 1e-7);
        assert!((closed + 0.3744969706).abs() < 1e-10);
        assert!((p.primitive(1.0).unwrap() - closed).abs() < 1e-14);
        assert!((p.primitive(1.0).unwrap() - quad).abs() < 1e-12);

        let p = params(0.1);
        let quad = simpson(&|s: f64| (0.01 + s).ln(), 0.0, 2.0, 1e-15);
        assert!((p.primitive(2.0).unwrap() - quad).abs() < 1e-12);
    }

    #[test]
    fn primitive_survives_tiny_epsilon() {
        let p = params(1e-160);
        let v = p.primitive(4.0).unwrap();
        assert!(v.is_finite());
        assert!((v - (4.0 * 4.0_f64.ln() - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn primitive_derivative_matches_f() {
        let p = params(0.05);
        let d = 1e-6;
        for i in 0..=1000 {
            let rho = 10.0 * i as f64 / 1000.0;
            let fd = if rho < d {
                (p.primitive(rho + d).unwrap() - p.primitive(rho).unwrap()) / d
            } else {
                (p.primitive(rho + d).unwrap() - p.primitive(rho - d).unwrap()) / (2.0 * d)
            };
            let tol = if rho < d { 1e-3 } else { 1e-6 };
            assert!((fd - p.f(rho).unwrap()).abs() < tol, "rho={rho}");
        }
    }

    #[test]
    fn average_examples() {
        let p = params(0.1);
        let z = 1.0;
        let oracle = simpson(
            &|t: f64| {
                let z2 = z + 1e-9;
                (0.01 + t * z * z + (1.0 - t) * z2 * z2).ln()
            },
            0.0,
            1.0,
            1e-15,
        ) * (2.0 * z + 1e-9)
            / 2.0;
        let g = p.average(z, z);
        assert!((g - 1.01_f64.ln()).abs() < 1e-16);
        assert!((g - 0.00995033).abs() < 1e-8);
        assert!((g - oracle).abs() < 1e-9);

        assert_eq!(p.average(1.0, -1.0), 0.0);

        let p = params(0.5);
        let expected = p.primitive(1.0).unwrap() * 0.5;
        assert!((p.average(1.0, 0.0) - expected).abs() < 1e-15);
        assert!((expected + 0.187248452).abs() < 1e-7);
        assert!((expected + 0.1872484853).abs() < 1e-10);
    }

    #[test]
    fn average_matches_integral_form_off_coincidence() {
        let mut rng_state = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let z1 = 6.0 * next() - 3.0;
            let z2 = 6.0 * next() - 3.0;
            let eps = 10f64.powf(-3.0 * next());
            let p = params(eps);
            let e2 = eps * eps;
            let integral = simpson(
                &|t: f64| (e2 + t * z1 * z1 + (1.0 - t) * z2 * z2).ln(),
                0.0,
                1.0,
                1e-14,
            );
            let oracle = integral * (z1 + z2) / 2.0;
            assert!(
                (p.average(z1, z2) - oracle).abs() < 1e-10 * (1.0 + oracle.abs()),
                "z1={z1} z2={z2} eps={eps}"
            );
            let direct = (p.primitive(z1 * z1).unwrap() - p.primitive(z2 * z2).unwrap())
                / (z1 * z1 - z2 * z2)
                * (z1 + z2)
                / 2.0;
            if (z1 * z1 - z2 * z2).abs() > 1e-2 {
                assert!((p.average(z1, z2) - direct).abs() < 1e-11 * (1.0 + direct.abs()));
            }
        }
    }

    #[test]
    fn dz1_examples() {
        for eps in [0.5, 0.1, 1e-3] {
            let p = params(eps);
            assert!((p.average_dz1(0.0, 0.0) - (eps * eps).ln() / 2.0).abs() < 1e-15);
        }
        for (z1, z2, eps) in [(1.0, 0.0, 0.5), (0.3, 0.7, 0.05)] {
            let p = params(eps);
            let d = 1e-5;
            let fd = (p.average(z1 + d, z2) - p.average(z1 - d, z2)) / (2.0 * d);
            assert!((p.average_dz1(z1, z2) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn average_with_dz1_agrees_with_average() {
        let p = params(0.02);
        for &(z1, z2) in &[(0.3, 0.7), (-1.2, 0.4), (2.0, 2.0), (0.0, 0.0), (1e-3, -2.0)] {
            let (g, _) = p.average_with_dz1(z1, z2);
            let a = p.average(z1, z2);
            assert!((g - a).abs() <= 1e-15 * (1.0 + a.abs()), "{g} vs {a}");
        }
    }

    #[test]
    fn log_unregularized() {
        assert_eq!(log_primitive(0.0).unwrap(), 0.0);
        assert_eq!(log_primitive(1.0).unwrap(), -1.0);
        assert!((log_density(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gap_matches_difference_of_primitives() {
        for eps in [0.3, 0.05, 1e-3] {
            let p = params(eps);
            for rho in [0.0, 1e-9, 1e-4, 0.02, 1.0, 7.5] {
                let direct = p.primitive(rho).unwrap() - log_primitive(rho).unwrap();
                let gap = primitive_gap_raw(&p, rho);
                assert!(gap >= 0.0);
                assert!((gap - direct).abs() < 1e-12 * (1.0 + direct.abs()), "{eps} {rho}");
            }
        }
    }

    proptest! {
        #[test]
        fn average_is_symmetric(z1 in -5.0..5.0f64, z2 in -5.0..5.0f64, le in -6.0..0.0f64) {
            let p = params(10f64.powf(le));
            prop_assert_eq!(p.average(z1, z2), p.average(z2, z1));
        }

        #[test]
        fn average_vanishes_on_antidiagonal(z in -10.0..10.0f64, le in -6.0..0.0f64) {
            let p = params(10f64.powf(le));
            prop_assert_eq!(p.average(z, -z), 0.0);
        }

        #[test]
        fn average_continuous_across_switch(z in -5.0..5.0f64, le in -6.0..0.0f64) {
            let p = params(10f64.powf(le));
            let limit = p.f(z * z).unwrap() * z;
            let g = p.average(z, z * (1.0 + 1e-12));
            prop_assert!((g - limit).abs() < 1e-9 * (1.0 + limit.abs()));
            // just outside the band as well
            let g = p.average(z, z * (1.0 + 1e-7));
            let limit = p.f(z * z * (1.0 + 1e-7)).unwrap() * z * (1.0 + 0.5e-7);
            prop_assert!((g - limit).abs() < 1e-9 * (1.0 + limit.abs()));
        }

        #[test]
        fn regularization_decreases_to_log(rho in 1e-3..10.0f64, le in -4.0..-0.5f64) {
            let eps = 10f64.powf(le);
            let p = params(eps);
            let smaller = params(eps / 2.0);
            let unreg = log_density(rho).unwrap();
            let fe = p.f(rho).unwrap();
            prop_assert!(fe >= smaller.f(rho).unwrap());
            prop_assert!(smaller.f(rho).unwrap() >= unreg);
            // ln(1 + ε²/ρ) ≤ ε²/ρ, up to rounding in the two logarithms
            let slack = 4.0 * f64::EPSILON * (1.0 + unreg.abs());
            prop_assert!(fe - unreg <= eps * eps / rho + slack);
        }
    }

    #[test]
    fn dz1_matches_finite_differences_on_random_sample() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut inside = 0;
        let mut outside = 0;
        for i in 0..1000 {
            let eps = 10f64.powf(rng.gen_range(-3.0..-0.3));
            let p = params(eps);
            let z2: f64 = rng.gen_range(-3.0..3.0);
            // half the sample sits just beside the coincidence band
            let z1 = if i % 2 == 0 {
                z2 * (1.0 + rng.gen_range(-1e-9..1e-9))
            } else {
                rng.gen_range(-3.0..3.0)
            };
            let gap = (z1 * z1 - z2 * z2).abs();
            if gap <= COINCIDENCE_TOL * (z1 * z1 + z2 * z2 + eps * eps) {
                inside += 1;
            } else {
                outside += 1;
            }
            let d = 1e-6 * (1.0 + z1.abs());
            let fd = (p.average(z1 + d, z2) - p.average(z1 - d, z2)) / (2.0 * d);
            let an = p.average_dz1(z1, z2);
            assert!(
                (an - fd).abs() <= 1e-6 * (1.0 + an.abs()),
                "z1={z1} z2={z2} eps={eps} an={an} fd={fd}"
            );
        }
        assert!(inside > 100 && outside > 100);
    }
}
