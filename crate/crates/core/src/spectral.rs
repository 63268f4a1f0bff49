//! Spectral decomposition of the nonlocal heat operator
//! `A0 y = y'' + c y` on (0, pi) with domain conditions
//! `y(0) = 0`, `y'(0) + y'(pi) + alpha y(pi) = 0`.
//!
//! Eigenvalues come in two interleaved families:
//! `lambda_{2k} = -(2k+1)^2 + c` with eigenfunction `sin((2k+1)x)`, and
//! `lambda_{2k+1} = -(2 beta_k)^2 + c` with eigenfunction `sin(2 beta_k x)`,
//! where `beta_k` is the unique root of `cot(beta pi) = -alpha / (2 beta)`
//! in `(k + 1/2, k + 1)`.
//!
//! Because `beta_k -> k + 1/2`, the raw eigenfunctions nearly collide; the
//! Riesz basis used downstream replaces the second family by the divided
//! difference `phi_{2k+1} = (sin(2 beta_k x) - sin((2k+1)x)) / (2 delta_k)`
//! with `delta_k = beta_k - k - 1/2`. The bi-orthogonal family `psi_j` is
//! built from the adjoint eigenfunctions; its traces `l_j = psi_j'(0)` drive
//! the boundary feedback design.

use crate::error::{Error, Result};
use crate::quad::QuadRule;
use nalgebra::DVector;
use std::f64::consts::PI;

/// Default node count for spectral inner products on [0, pi].
pub const DEFAULT_QUAD_NODES: usize = 400;

/// Threshold below which a boundary trace is flagged as breaking the rank
/// condition.
pub const TRACE_DEGENERACY_TOL: f64 = 1e-12;

/// Eigenvalue table of the operator.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Reaction coefficient c.
    pub c: f64,
    /// Boundary coupling alpha > 0.
    pub alpha: f64,
    /// Roots `beta_k`, one per index pair, `beta_k` in (k+1/2, k+1).
    pub betas: Vec<f64>,
    /// Eigenvalues `lambda_j`, j = 0..count-1, parity-interleaved.
    pub lambdas: Vec<f64>,
}

impl Spectrum {
    pub fn count(&self) -> usize {
        self.lambdas.len()
    }

    /// Offset `delta_k = beta_k - k - 1/2`, in (0, 1/2).
    pub fn delta(&self, k: usize) -> f64 {
        self.betas[k] - k as f64 - 0.5
    }
}

/// Cleared-denominator root function `f(beta) = 2 beta cos(beta pi) + alpha sin(beta pi)`.
/// Its roots coincide with those of `cot(beta pi) + alpha/(2 beta)` and it has
/// no poles inside the bracket.
fn beta_equation(beta: f64, alpha: f64) -> f64 {
    2.0 * beta * (beta * PI).cos() + alpha * (beta * PI).sin()
}

fn beta_equation_deriv(beta: f64, alpha: f64) -> f64 {
    2.0 * (beta * PI).cos() - 2.0 * beta * PI * (beta * PI).sin() + alpha * PI * (beta * PI).cos()
}

/// Residual of the textbook form of the root equation.
pub fn beta_residual(beta: f64, alpha: f64) -> f64 {
    let s = (beta * PI).sin();
    ((beta * PI).cos() / s + alpha / (2.0 * beta)).abs()
}

/// Solve for `beta_k` in `(k + 1/2, k + 1)`: bisection to a tight bracket,
/// then Newton polish. The bracket endpoints have opposite signs for every
/// k and alpha > 0, so bisection cannot fail.
pub fn solve_beta(k: usize, alpha: f64) -> Result<f64> {
    assert!(alpha > 0.0, "alpha must be positive");
    let mut lo = k as f64 + 0.5;
    let mut hi = k as f64 + 1.0;
    let mut flo = beta_equation(lo, alpha);
    let max_iters = 200;
    let mut iters = 0;
    while hi - lo > 1e-13 && iters < max_iters {
        let mid = 0.5 * (lo + hi);
        let fmid = beta_equation(mid, alpha);
        if (flo > 0.0) == (fmid > 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
        iters += 1;
    }
    let mut beta = 0.5 * (lo + hi);
    for _ in 0..4 {
        let f = beta_equation(beta, alpha);
        let df = beta_equation_deriv(beta, alpha);
        if df != 0.0 {
            let next = beta - f / df;
            if next > k as f64 + 0.5 && next < k as f64 + 1.0 {
                beta = next;
            }
        }
    }
    let residual = beta_residual(beta, alpha);
    if residual > 1e-12 {
        return Err(Error::SolverFailure {
            k,
            alpha,
            lo,
            hi,
            residual,
            iters,
        });
    }
    Ok(beta)
}

/// Build the first `count` eigenvalues.
pub fn eigenvalues(count: usize, c: f64, alpha: f64) -> Result<Spectrum> {
    assert!(count >= 1, "count must be positive");
    let pairs = count.div_ceil(2);
    let mut betas = Vec::with_capacity(pairs);
    for k in 0..pairs {
        betas.push(solve_beta(k, alpha)?);
    }
    let mut lambdas = Vec::with_capacity(count);
    for j in 0..count {
        let k = j / 2;
        let lam = if j % 2 == 0 {
            let m = (2 * k + 1) as f64;
            -m * m + c
        } else {
            let tb = 2.0 * betas[k];
            -tb * tb + c
        };
        lambdas.push(lam);
    }
    Ok(Spectrum {
        c,
        alpha,
        betas,
        lambdas,
    })
}

/// Smallest even dimension d = 2N+2 such that every eigenvalue from index d on
/// lies strictly below -rho. Whole 2x2 Jordan blocks are kept even when the
/// leading modes are already stable, so the result is always >= 2.
pub fn choose_unstable_dim(rho: f64, c: f64, alpha: f64) -> Result<usize> {
    assert!(rho > 0.0, "rho must be positive");
    let mut n = 0usize;
    loop {
        let k = n + 1;
        let m = (2 * k + 1) as f64;
        let lam_even = -m * m + c;
        let beta = solve_beta(k, alpha)?;
        let lam_odd = -4.0 * beta * beta + c;
        if lam_even < -rho && lam_odd < -rho {
            return Ok(2 * n + 2);
        }
        n += 1;
    }
}

/// Normalization constant `C_{k2}` with `<w_{k2}, v_{k2}> = 1`, computed from
/// the quadrature of the raw (unnormalized) product.
pub fn compute_c2(k: usize, alpha: f64, beta: f64, quad: &QuadRule) -> Result<f64> {
    let tb = 2.0 * beta;
    let integral = quad.integrate(|x| (tb * x).sin() * ((tb * x).sin() + (tb / alpha) * (tb * x).cos()));
    if integral.abs() < 1e-8 * (PI / 2.0) {
        return Err(Error::IllConditionedBasis { k, value: integral });
    }
    Ok(1.0 / integral)
}

/// Boundary trace `l_j = psi_j'(0)` with a degeneracy flag.
#[derive(Debug, Clone, Copy)]
pub struct TraceL {
    pub value: f64,
    /// True when |l_j| < `TRACE_DEGENERACY_TOL`, which would break the rank condition.
    pub degenerate: bool,
}

/// Riesz basis `phi_j` and bi-orthogonal family `psi_j`, evaluable on [0, pi].
#[derive(Debug, Clone)]
pub struct BasisPair {
    pub spectrum: Spectrum,
    /// Normalization constants `C_{k2}`, one per pair.
    pub c2: Vec<f64>,
    quad: QuadRule,
}

impl BasisPair {
    /// Build evaluators through index `spectrum.count() - 1` with a composite
    /// Gauss-Legendre rule of at least `quad_nodes` nodes.
    pub fn build(spectrum: Spectrum, quad_nodes: usize) -> Result<Self> {
        let quad = QuadRule::gauss_legendre(0.0, PI, quad_nodes);
        let pairs = spectrum.betas.len();
        let mut c2 = Vec::with_capacity(pairs);
        for k in 0..pairs {
            c2.push(compute_c2(k, spectrum.alpha, spectrum.betas[k], &quad)?);
        }
        Ok(BasisPair { spectrum, c2, quad })
    }

    pub fn count(&self) -> usize {
        self.spectrum.count()
    }

    pub fn quad(&self) -> &QuadRule {
        &self.quad
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.count() {
            return Err(Error::IndexOutOfRange {
                index: j,
                built: self.count(),
            });
        }
        Ok(())
    }

    /// `v_{k1}(x) = (2/pi) { sin((2k+1)x) - ((2k+1)/alpha) cos((2k+1)x) }`.
    fn v1(&self, k: usize, x: f64) -> f64 {
        let m = (2 * k + 1) as f64;
        (2.0 / PI) * ((m * x).sin() - (m / self.spectrum.alpha) * (m * x).cos())
    }

    /// `v_{k2}(x) = C_{k2} { sin(2 beta_k x) + (2 beta_k / alpha) cos(2 beta_k x) }`.
    fn v2(&self, k: usize, x: f64) -> f64 {
        let tb = 2.0 * self.spectrum.betas[k];
        self.c2[k] * ((tb * x).sin() + (tb / self.spectrum.alpha) * (tb * x).cos())
    }

    pub(crate) fn phi_at(&self, j: usize, x: f64) -> f64 {
        let k = j / 2;
        let m = (2 * k + 1) as f64;
        if j % 2 == 0 {
            (m * x).sin()
        } else {
            let tb = 2.0 * self.spectrum.betas[k];
            ((tb * x).sin() - (m * x).sin()) / (2.0 * self.spectrum.delta(k))
        }
    }

    pub(crate) fn psi_at(&self, j: usize, x: f64) -> f64 {
        let k = j / 2;
        if j % 2 == 0 {
            self.v1(k, x) + self.v2(k, x)
        } else {
            2.0 * self.spectrum.delta(k) * self.v2(k, x)
        }
    }

    /// Second derivative of `phi_j`; exact (the evaluators are trigonometric).
    pub(crate) fn phi_xx_at(&self, j: usize, x: f64) -> f64 {
        let k = j / 2;
        let m = (2 * k + 1) as f64;
        if j % 2 == 0 {
            -m * m * (m * x).sin()
        } else {
            let tb = 2.0 * self.spectrum.betas[k];
            (-tb * tb * (tb * x).sin() + m * m * (m * x).sin()) / (2.0 * self.spectrum.delta(k))
        }
    }

    pub fn eval_phi(&self, j: usize, x: f64) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.phi_at(j, x))
    }

    pub fn eval_psi(&self, j: usize, x: f64) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.psi_at(j, x))
    }

    pub fn eval_phi_xx(&self, j: usize, x: f64) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.phi_xx_at(j, x))
    }

    /// Boundary trace `l_j = psi_j'(0)`, closed form:
    /// `l_{2k} = 2 beta_k C_{k2} + (2/pi)(2k+1)`, `l_{2k+1} = 4 delta_k beta_k C_{k2}`.
    pub fn trace_l(&self, j: usize) -> Result<TraceL> {
        self.check_index(j)?;
        let k = j / 2;
        let beta = self.spectrum.betas[k];
        let value = if j % 2 == 0 {
            2.0 * beta * self.c2[k] + (2.0 / PI) * (2 * k + 1) as f64
        } else {
            4.0 * self.spectrum.delta(k) * beta * self.c2[k]
        };
        Ok(TraceL {
            value,
            degenerate: value.abs() < TRACE_DEGENERACY_TOL,
        })
    }

    /// Traces stacked into the vector `L` used by the feedback design.
    pub fn l_vector(&self, d: usize) -> Result<DVector<f64>> {
        let mut l = DVector::zeros(d);
        for j in 0..d {
            l[j] = self.trace_l(j)?.value;
        }
        Ok(l)
    }

    /// Quadrature of `<phi_i, psi_j>`; equals the Kronecker delta for a
    /// correctly built pair.
    pub fn inner_phi_psi(&self, i: usize, j: usize) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        Ok(self.quad.integrate(|x| self.phi_at(i, x) * self.psi_at(j, x)))
    }
}

/// One row of the spectrum dump table.
#[derive(Debug, Clone)]
pub struct SpectrumRow {
    pub k: usize,
    pub beta_k: f64,
    pub lambda_even: f64,
    pub lambda_odd: f64,
    pub c2: f64,
    pub l_even: f64,
    pub l_odd: f64,
}

/// Table of the first `pairs` index pairs (for the dump-spectrum interface).
pub fn spectrum_table(pairs: usize, c: f64, alpha: f64, quad_nodes: usize) -> Result<Vec<SpectrumRow>> {
    let spectrum = eigenvalues(2 * pairs, c, alpha)?;
    let basis = BasisPair::build(spectrum, quad_nodes)?;
    let mut rows = Vec::with_capacity(pairs);
    for k in 0..pairs {
        rows.push(SpectrumRow {
            k,
            beta_k: basis.spectrum.betas[k],
            lambda_even: basis.spectrum.lambdas[2 * k],
            lambda_odd: basis.spectrum.lambdas[2 * k + 1],
            c2: basis.c2[k],
            l_even: basis.trace_l(2 * k)?.value,
            l_odd: basis.trace_l(2 * k + 1)?.value,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_brackets_and_residuals() {
        for k in 0..=10 {
            let b = solve_beta(k, 1.0).unwrap();
            assert!(b > k as f64 + 0.5 && b < k as f64 + 1.0);
            assert!(beta_residual(b, 1.0) <= 1e-12);
        }
    }

    #[test]
    fn delta_in_unit_half_interval() {
        let s = eigenvalues(12, 2.0, 1.0).unwrap();
        for k in 0..s.betas.len() {
            let d = s.delta(k);
            assert!(d > 0.0 && d < 0.5, "delta_{k} = {d}");
        }
    }

    #[test]
    fn parity_classes_strictly_decreasing() {
        let s = eigenvalues(10, 2.0, 1.0).unwrap();
        for j in (2..10).step_by(2) {
            assert!(s.lambdas[j] < s.lambdas[j - 2]);
        }
        for j in (3..10).step_by(2) {
            assert!(s.lambdas[j] < s.lambdas[j - 2]);
        }
    }
}
