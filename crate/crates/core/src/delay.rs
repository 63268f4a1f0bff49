//! Delay-compensation layer: matrix exponential, the windowed convolution
//! operator
//!
//! ```text
//! (T_tau F)(t) = integral from max(t-tau, tau) to t of e^{(t-tau-s) Lambda} C F(s) ds,
//! ```
//!
//! the Neumann-series evaluation of the implicit predictor equation
//! `U = Y + T_tau U`, an implicit single-step fixed-point march for the same
//! equation, and the transport/backstepping target-system verification.
//!
//! Conventions fixed here:
//! * The lower limit is the literal `max(t - tau, tau)`; whenever it reaches
//!   `t` the integral is empty and the operator returns zero (in particular
//!   for every `t` when `tau = 0`, so `U = Y` exactly in the undelayed case).
//!   The alternative reading `max(t - tau, 0)` stays switchable.
//! * Histories interpolate linearly between samples and are zero before t = 0.
//! * Quadrature is composite Simpson with at least 64 subintervals; for the
//!   saturated window of length exactly `tau` the kernels `e^{-(q/n) tau Lambda} C`
//!   are precomputed once and shared.

use crate::error::{Error, Result};
use crate::quad::simpson_weights;
use nalgebra::{DMatrix, DVector};

/// Default subinterval count for the convolution window.
pub const DEFAULT_SUBINTERVALS: usize = 64;

/// Default Neumann-series truncation.
pub const NEUMANN_TOL: f64 = 1e-10;
pub const NEUMANN_JMAX: usize = 50;

/// Matrix exponential `e^{s M}` by scaling-and-squaring with a degree-13
/// Padé approximant (relative accuracy well below 1e-12 at these dimensions).
pub fn mat_exp(m: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    let d = m.nrows();
    assert_eq!(m.ncols(), d, "mat_exp needs a square matrix");
    let a0 = m * s;
    // infinity norm
    let mut norm = 0.0_f64;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += a0[(i, j)].abs();
        }
        norm = norm.max(row);
    }
    const THETA13: f64 = 5.371_920_351_148_152;
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let a = a0 / 2f64.powi(squarings as i32);
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    let id = DMatrix::identity(d, d);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_inner = &a6 * (B[13] * &a6 + B[11] * &a4 + B[9] * &a2)
        + B[7] * &a6
        + B[5] * &a4
        + B[3] * &a2
        + B[1] * &id;
    let u = &a * u_inner;
    let v = &a6 * (B[12] * &a6 + B[10] * &a4 + B[8] * &a2)
        + B[6] * &a6
        + B[4] * &a4
        + B[2] * &a2
        + B[0] * &id;
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Pade denominator is nonsingular for a scaled argument");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Time-ordered samples of a d-vector signal, zero before t = 0, linearly
/// interpolated between samples and clamped to the last sample beyond it.
#[derive(Debug, Clone)]
pub struct ControlHistory {
    tau: f64,
    dim: usize,
    times: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl ControlHistory {
    pub fn new(tau: f64, dim: usize) -> Self {
        assert!(tau >= 0.0, "delay must be nonnegative");
        assert!(dim >= 1, "history dimension must be positive");
        ControlHistory {
            tau,
            dim,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn latest_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// Append a sample; times must be strictly increasing and nonnegative.
    pub fn push(&mut self, t: f64, value: DVector<f64>) -> Result<()> {
        if value.len() != self.dim {
            return Err(Error::InvalidConfig(format!(
                "history sample dimension {} != {}",
                value.len(),
                self.dim
            )));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "history time {t} must be finite and nonnegative"
            )));
        }
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::InvalidConfig(format!(
                    "history times must be strictly increasing: {t} after {last}"
                )));
            }
        }
        self.times.push(t);
        self.values.push(value);
        Ok(())
    }

    /// Evaluate at `t`: zero before 0, exact at samples, linear in between,
    /// clamped to the newest sample beyond the recorded range.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        if t < 0.0 || self.times.is_empty() {
            return DVector::zeros(self.dim);
        }
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            // nonnegative t before the first sample: clamp to the first value
            return self.values[0].clone();
        }
        if idx == self.times.len() {
            return self.values[idx - 1].clone();
        }
        let t0 = self.times[idx - 1];
        let t1 = self.times[idx];
        let theta = (t - t0) / (t1 - t0);
        &self.values[idx - 1] * (1.0 - theta) + &self.values[idx] * theta
    }

    /// Evaluate with explicit clamping to the newest committed sample.
    pub fn eval_clamped(&self, t: f64) -> DVector<f64> {
        match self.latest_time() {
            Some(last) => self.eval(t.min(last)),
            None => DVector::zeros(self.dim),
        }
    }
}

/// Choice of the lower integration limit of the windowed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowerLimitRule {
    /// Literal reading `max(t - tau, tau)` (default).
    DelayFloor,
    /// Alternative reading `max(t - tau, 0)`.
    Zero,
}

/// Precomputed convolution operator for one `(Lambda, C, tau)` triple.
#[derive(Debug, Clone)]
pub struct DelayOperator {
    pub tau: f64,
    pub lambda: DMatrix<f64>,
    pub c_mat: DMatrix<f64>,
    d: usize,
    n_sub: usize,
    rule: LowerLimitRule,
    /// Kernels `e^{-(q/n) tau Lambda} C` at the canonical nodes of a
    /// saturated (length-tau) window, q = 0..n.
    full_kernels: Vec<DMatrix<f64>>,
    /// Simpson weights of the saturated window.
    full_weights: Vec<f64>,
}

impl DelayOperator {
    pub fn new(lambda: DMatrix<f64>, c_mat: DMatrix<f64>, tau: f64) -> Self {
        Self::with_options(lambda, c_mat, tau, DEFAULT_SUBINTERVALS, LowerLimitRule::DelayFloor)
    }

    pub fn with_options(
        lambda: DMatrix<f64>,
        c_mat: DMatrix<f64>,
        tau: f64,
        n_sub: usize,
        rule: LowerLimitRule,
    ) -> Self {
        let d = lambda.nrows();
        assert_eq!(lambda.ncols(), d);
        assert_eq!(c_mat.nrows(), d);
        assert_eq!(c_mat.ncols(), d);
        assert!(tau >= 0.0, "delay must be nonnegative");
        assert!(n_sub >= 2 && n_sub % 2 == 0, "need an even subinterval count >= 2");
        let mut full_kernels = Vec::with_capacity(n_sub + 1);
        for q in 0..=n_sub {
            let s = -(q as f64 / n_sub as f64) * tau;
            full_kernels.push(mat_exp(&lambda, s) * &c_mat);
        }
        let full_weights = simpson_weights(n_sub + 1, tau / n_sub as f64);
        DelayOperator {
            tau,
            lambda,
            c_mat,
            d,
            n_sub,
            rule,
            full_kernels,
            full_weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn subintervals(&self) -> usize {
        self.n_sub
    }

    fn lower_limit(&self, t: f64) -> f64 {
        match self.rule {
            LowerLimitRule::DelayFloor => (t - self.tau).max(self.tau),
            LowerLimitRule::Zero => (t - self.tau).max(0.0),
        }
    }
}

/// `(T_tau F)(t)` by composite Simpson quadrature. The zero vector whenever
/// the window is empty (`lower >= t`), including everywhere for `tau = 0`.
pub fn apply_t_tau(op: &DelayOperator, f: &ControlHistory, t: f64) -> DVector<f64> {
    let lower = op.lower_limit(t);
    let len = t - lower;
    if len <= 1e-14 {
        return DVector::zeros(op.d);
    }
    let n = op.n_sub;
    let saturated = (len - op.tau).abs() <= 1e-9 * op.tau.max(1.0);
    let weights;
    let weights_ref: &[f64] = if saturated {
        &op.full_weights
    } else {
        weights = simpson_weights(n + 1, len / n as f64);
        &weights
    };
    let mut acc = DVector::zeros(op.d);
    for q in 0..=n {
        let s = lower + (q as f64 / n as f64) * len;
        let fv = f.eval(s);
        if saturated {
            acc += weights_ref[q] * (&op.full_kernels[q] * fv);
        } else {
            let kernel = mat_exp(&op.lambda, t - op.tau - s) * &op.c_mat;
            acc += weights_ref[q] * (kernel * fv);
        }
    }
    acc
}

/// The convolution at time `t` split into a part known from committed history
/// and the coefficient of the not-yet-committed endpoint value `F(t)`.
#[derive(Debug, Clone)]
pub struct SplitConvolution {
    /// Contribution of samples at or before the last committed time.
    pub known: DVector<f64>,
    /// Matrix weight of the unknown endpoint value.
    pub endpoint_coeff: DMatrix<f64>,
}

/// As [`apply_t_tau`], but quadrature nodes beyond the last committed sample
/// are expressed as a linear blend of the last sample and the unknown `F(t)`;
/// the blend weights accumulate into `endpoint_coeff`.
pub fn apply_t_tau_split(op: &DelayOperator, f: &ControlHistory, t: f64) -> SplitConvolution {
    let lower = op.lower_limit(t);
    let len = t - lower;
    if len <= 1e-14 {
        return SplitConvolution {
            known: DVector::zeros(op.d),
            endpoint_coeff: DMatrix::zeros(op.d, op.d),
        };
    }
    let t_known = f.latest_time().unwrap_or(0.0);
    let n = op.n_sub;
    let saturated = (len - op.tau).abs() <= 1e-9 * op.tau.max(1.0);
    let weights;
    let weights_ref: &[f64] = if saturated {
        &op.full_weights
    } else {
        weights = simpson_weights(n + 1, len / n as f64);
        &weights
    };
    let mut known = DVector::zeros(op.d);
    let mut endpoint_coeff = DMatrix::zeros(op.d, op.d);
    let last_val = if f.is_empty() {
        DVector::zeros(op.d)
    } else {
        f.eval(t_known)
    };
    for q in 0..=n {
        let s = lower + (q as f64 / n as f64) * len;
        let owned;
        let kernel: &DMatrix<f64> = if saturated {
            &op.full_kernels[q]
        } else {
            owned = mat_exp(&op.lambda, t - op.tau - s) * &op.c_mat;
            &owned
        };
        if s <= t_known + 1e-15 {
            known += weights_ref[q] * (kernel * f.eval(s));
        } else {
            // linear blend between the last committed sample and F(t)
            let theta = ((s - t_known) / (t - t_known)).clamp(0.0, 1.0);
            known += weights_ref[q] * (1.0 - theta) * (kernel * &last_val);
            endpoint_coeff += weights_ref[q] * theta * kernel;
        }
    }
    SplitConvolution {
        known,
        endpoint_coeff,
    }
}

/// One implicit step of the predictor fixed point: solve
/// `(I - endpoint_coeff) U(t) = Y(t) + known` for the new value `U(t)`,
/// treating the convolution endpoint implicitly.
pub fn march_fixed_point_step(
    op: &DelayOperator,
    y_t: &DVector<f64>,
    u_hist: &ControlHistory,
    t: f64,
) -> Result<DVector<f64>> {
    let parts = apply_t_tau_split(op, u_hist, t);
    let system = DMatrix::identity(op.d, op.d) - &parts.endpoint_coeff;
    let rhs = y_t + &parts.known;
    system
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularClosure("implicit predictor endpoint system"))
}

/// Partial Neumann sum `sum_j (T_tau^j Y)(t)` with term norms and a
/// divergence flag.
#[derive(Debug, Clone)]
pub struct NeumannEval {
    pub value: DVector<f64>,
    /// Norm of the last term added (the truncation tail estimate).
    pub tail_norm: f64,
    /// Number of terms summed, including the j = 0 term.
    pub terms_used: usize,
    /// True when the cap was reached with a non-decreasing tail.
    pub diverged: bool,
    /// 2-norms of the successive terms at time t.
    pub term_norms: Vec<f64>,
}

/// Evaluate the Neumann series for `U(t)`. Term j+1 is the convolution of
/// term j, resampled on the same time grid as `Y` restricted to `[0, t]`
/// (the operator never reads the input beyond `t`, so appending later
/// samples to `Y` cannot change the result).
pub fn neumann_u(
    op: &DelayOperator,
    y_hist: &ControlHistory,
    t: f64,
    tol: f64,
    jmax: usize,
) -> NeumannEval {
    // sample grid: Y's times up to t, with t itself appended if absent
    let mut grid: Vec<f64> = y_hist
        .times()
        .iter()
        .copied()
        .filter(|&s| s <= t)
        .collect();
    if grid.last().map_or(true, |&last| last < t - 1e-15) {
        grid.push(t);
    }
    let mut term = ControlHistory::new(op.tau, op.d);
    for &s in &grid {
        term.push(s, y_hist.eval(s)).expect("grid is strictly increasing");
    }
    let mut value = term.eval(t);
    let mut term_norms = vec![value.norm()];
    let mut terms_used = 1;
    let mut tail_norm = value.norm();
    let mut diverged = false;
    for _ in 1..=jmax {
        let mut next = ControlHistory::new(op.tau, op.d);
        for &s in &grid {
            next.push(s, apply_t_tau(op, &term, s))
                .expect("grid is strictly increasing");
        }
        let at_t = next.eval(t);
        tail_norm = at_t.norm();
        term_norms.push(tail_norm);
        value += &at_t;
        terms_used += 1;
        term = next;
        if tail_norm <= tol {
            break;
        }
    }
    if tail_norm > tol {
        // Cap reached without convergence. Warn when the tail is
        // non-decreasing, either locally (last step grew) or overall (after
        // jmax terms the tail is still no smaller than the leading term, so
        // the partial sums made no net progress). The overall test matters:
        // iterated windowed kernels can climb many orders of magnitude and
        // then bend over from factorial damping, so the final step may
        // decrease even though the sum is numerically useless.
        let n = term_norms.len();
        let local = n >= 2 && term_norms[n - 1] >= term_norms[n - 2];
        let overall = term_norms[n - 1] >= term_norms[0];
        diverged = local || overall;
    }
    NeumannEval {
        value,
        tail_norm,
        terms_used,
        diverged,
        term_norms,
    }
}

/// Residual of the implicit predictor equation:
/// `|| U(t) - Y(t) - (T_tau U)(t) ||`.
pub fn artstein_residual(
    op: &DelayOperator,
    u_hist: &ControlHistory,
    y_hist: &ControlHistory,
    t: f64,
) -> f64 {
    let conv = apply_t_tau(op, u_hist, t);
    (u_hist.eval(t) - y_hist.eval(t) - conv).norm()
}

/// Transport-variable snapshot `Z(s, t) = U(t + s - tau)`, s in [0, tau],
/// sampled at the canonical quadrature nodes of the delay window.
#[derive(Debug, Clone)]
pub struct TransportGrid {
    pub t: f64,
    /// `Z(r_q, t)` at `r_q = (q/n) tau`, q = 0..n; the last entry is `U(t)`.
    pub values: Vec<DVector<f64>>,
}

impl TransportGrid {
    /// Populate the transport variable from the control history at time `t`.
    pub fn sample(op: &DelayOperator, u_hist: &ControlHistory, t: f64) -> Self {
        let n = op.n_sub;
        let mut values = Vec::with_capacity(n + 1);
        for q in 0..=n {
            let r = (q as f64 / n as f64) * op.tau;
            values.push(u_hist.eval(t + r - op.tau));
        }
        TransportGrid { t, values }
    }
}

/// Backstepping target-system residual at the far edge of the transport
/// domain: `|| W(tau, t) ||` where
/// `W(tau, t) = Z(tau, t) - integral_0^tau e^{-r Lambda} C Z(r, t) dr - Y(t)`.
/// The kernels are the same cached `e^{-(q/n) tau Lambda} C` used by the
/// saturated convolution window, so for `t >= 2 tau` this equals the
/// implicit-equation residual. For `tau = 0` it degenerates to `||U - Y||`.
pub fn target_system_check(
    op: &DelayOperator,
    z: &TransportGrid,
    y_hist: &ControlHistory,
    t: f64,
) -> f64 {
    let u_t = z.values[op.n_sub].clone();
    let y_t = y_hist.eval(t);
    if op.tau == 0.0 {
        return (u_t - y_t).norm();
    }
    let mut acc = DVector::zeros(op.d);
    for q in 0..=op.n_sub {
        acc += op.full_weights[q] * (&op.full_kernels[q] * &z.values[q]);
    }
    (u_t - acc - y_t).norm()
}
