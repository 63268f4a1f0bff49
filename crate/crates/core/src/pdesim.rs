//! Closed- and open-loop simulation of the controlled heat equation
//!
//! ```text
//! y_t = y_xx + c y            on (0, pi),
//! y(t, 0) = u(t - tau),       (delayed boundary input, u = 0 before t = 0)
//! y_x(t, 0) + y_x(t, pi) + alpha y(t, pi) = 0,
//! ```
//!
//! plus the d-dimensional modal surrogate `dY/dt = Lambda Y + C U(t - tau)`.
//!
//! Space: second-order central differences on a uniform grid, with the
//! nonlocal boundary condition closed by one-sided second-order stencils
//! (one extra equation tying the two endpoint unknowns). Time: implicit
//! trapezoidal (Crank-Nicolson); the constant system matrix is factored once
//! as a bordered tridiagonal system.
//!
//! The closed loop per step: project the profile onto the bi-orthogonal
//! modes to get `Y(t)`, advance the predictor modes `U(t)` through the
//! implicit fixed-point march of `U = Y + T_tau U`, convert to the scalar
//! input `u(t) = k_row U(t)`, and apply it at the boundary delayed by tau
//! through the control history (linear interpolation; for tau < dt the
//! boundary sees the newest committed value, a one-step lag).

use crate::delay::{march_fixed_point_step, ControlHistory, DelayOperator};
use crate::design::{build_design, feedback_u, DesignSet};
use crate::error::{Error, Result};
use crate::linsolve::{BorderedTridiag, BorderedTridiagFactor};
use crate::quad::simpson_weights;
use crate::spectral::{choose_unstable_dim, eigenvalues, BasisPair, DEFAULT_QUAD_NODES};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

/// Norm growth factor that aborts a run.
pub const BLOW_UP_FACTOR: f64 = 1e6;

/// Uniform spatial grid on [0, pi] with `m` interior points.
#[derive(Debug, Clone)]
pub struct Grid {
    pub m: usize,
    pub h: f64,
    /// Nodes x_i = i h, i = 0..m+1 (both boundaries included).
    pub nodes: Vec<f64>,
    /// Composite Simpson weights over the full node set.
    weights: Vec<f64>,
}

impl Grid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 50 {
            return Err(Error::InvalidConfig(format!(
                "grid needs at least 50 interior points, got {m}"
            )));
        }
        let h = PI / (m as f64 + 1.0);
        let nodes: Vec<f64> = (0..m + 2).map(|i| i as f64 * h).collect();
        let weights = simpson_weights(m + 2, h);
        Ok(Grid {
            m,
            h,
            nodes,
            weights,
        })
    }

    pub fn points(&self) -> usize {
        self.m + 2
    }

    /// L2 norm of a sampled profile by composite Simpson quadrature.
    pub fn l2_norm(&self, y: &[f64]) -> f64 {
        assert_eq!(y.len(), self.points());
        let mut acc = 0.0;
        for (w, v) in self.weights.iter().zip(y.iter()) {
            acc += w * v * v;
        }
        acc.max(0.0).sqrt()
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Initial profile: a named preset or explicit samples on the full grid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Y0Spec {
    Name(String),
    Samples(Vec<f64>),
}

impl Default for Y0Spec {
    fn default() -> Self {
        Y0Spec::Name("sin-mix".to_string())
    }
}

/// Simulation configuration. JSON keys are exactly
/// {"alpha","c","rho","tau","gammas","grid_m","dt","t_final","y0","seed"}.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub alpha: f64,
    pub c: f64,
    pub rho: f64,
    pub tau: f64,
    /// Gain override; `null` selects the default rule gamma_k = rho + k.
    pub gammas: Option<Vec<f64>>,
    pub grid_m: usize,
    pub dt: f64,
    pub t_final: f64,
    pub y0: Y0Spec,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            alpha: 1.0,
            c: 2.0,
            rho: 5.0,
            tau: 0.2,
            gammas: None,
            grid_m: 200,
            dt: 1e-3,
            t_final: 10.0,
            y0: Y0Spec::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return bad(format!("alpha = {} must be positive", self.alpha));
        }
        if !self.c.is_finite() {
            return bad(format!("c = {} must be finite", self.c));
        }
        if !self.rho.is_finite() || self.rho <= 0.0 {
            return bad(format!("rho = {} must be positive", self.rho));
        }
        if !self.tau.is_finite() || self.tau < 0.0 {
            return bad(format!("tau = {} must be nonnegative", self.tau));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !self.t_final.is_finite() || self.t_final <= self.tau {
            return bad(format!(
                "t_final = {} must exceed tau = {}",
                self.t_final, self.tau
            ));
        }
        if self.grid_m < 50 {
            return bad(format!("grid_m = {} must be at least 50", self.grid_m));
        }
        let steps = (self.t_final / self.dt).round();
        if steps < 1.0 || (steps * self.dt - self.t_final).abs() > 1e-9 * self.t_final.max(1.0) {
            return bad(format!(
                "t_final = {} must be an integer multiple of dt = {}",
                self.t_final, self.dt
            ));
        }
        if let Some(g) = &self.gammas {
            if g.is_empty() || g.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return bad("gammas must be positive and finite".to_string());
            }
        }
        match &self.y0 {
            Y0Spec::Name(n) => {
                if !matches!(n.as_str(), "sin1" | "sin-mix" | "random-smooth") {
                    return bad(format!(
                        "unknown y0 preset {n:?}; expected sin1, sin-mix, random-smooth, or samples"
                    ));
                }
            }
            Y0Spec::Samples(v) => {
                if v.len() != self.grid_m + 2 {
                    return bad(format!(
                        "y0 samples length {} must equal grid_m + 2 = {}",
                        v.len(),
                        self.grid_m + 2
                    ));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return bad("y0 samples must be finite".to_string());
                }
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Materialize the initial profile on the grid.
    pub fn initial_profile(&self, grid: &Grid) -> Result<Vec<f64>> {
        match &self.y0 {
            Y0Spec::Name(name) => match name.as_str() {
                "sin1" => Ok(grid.nodes.iter().map(|&x| x.sin()).collect()),
                "sin-mix" => Ok(grid
                    .nodes
                    .iter()
                    .map(|&x| x.sin() + 0.5 * (2.0 * x).sin())
                    .collect()),
                "random-smooth" => {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                    let coeffs: Vec<f64> = (1..=6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    Ok(grid
                        .nodes
                        .iter()
                        .map(|&x| {
                            coeffs
                                .iter()
                                .enumerate()
                                .map(|(i, u)| {
                                    let n = (i + 1) as f64;
                                    u / (n * n) * (n * x).sin()
                                })
                                .sum()
                        })
                        .collect())
                }
                other => Err(Error::InvalidConfig(format!("unknown y0 preset {other:?}"))),
            },
            Y0Spec::Samples(v) => {
                if v.len() != grid.points() {
                    return Err(Error::InvalidConfig(format!(
                        "y0 samples length {} must equal grid points {}",
                        v.len(),
                        grid.points()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Crank-Nicolson stepper with the nonlocal boundary closure folded into a
/// bordered tridiagonal factorization (computed once; dt and the coefficients
/// are fixed per solver).
#[derive(Debug)]
pub struct HeatSolver {
    m: usize,
    c: f64,
    dt: f64,
    /// dt / (2 h^2)
    r: f64,
    factor: BorderedTridiagFactor,
    rhs: Vec<f64>,
}

impl HeatSolver {
    pub fn new(grid: &Grid, c: f64, alpha: f64, dt: f64) -> Result<Self> {
        let m = grid.m;
        let h = grid.h;
        let r = dt / (2.0 * h * h);
        let n = m + 1; // unknowns y_1 .. y_{m+1}; y_0 is the Dirichlet datum
        let mut sys = BorderedTridiag::zeros(n);
        for row in 0..m {
            if row > 0 {
                sys.sub[row] = -r;
            }
            sys.diag[row] = 1.0 + 2.0 * r - c * dt / 2.0;
            sys.sup[row] = -r;
        }
        // One-sided second-order boundary closure at the new time level,
        // scaled by 2h, with the known y_0 = u_new moved to the right:
        //   4 y_1 - y_2 + y_{m-1} - 4 y_m + (3 + 2 h alpha) y_{m+1} = 3 u_new
        sys.border[0] += 4.0;
        sys.border[1] += -1.0;
        sys.border[m - 2] += 1.0;
        sys.border[m - 1] += -4.0;
        sys.border[m] += 3.0 + 2.0 * h * alpha;
        let factor = sys.factor()?;
        Ok(HeatSolver {
            m,
            c,
            dt,
            r,
            factor,
            rhs: vec![0.0; n],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advance the profile (length m+2, boundaries included) by one step.
    /// `u_new` is the Dirichlet value at x = 0 at the new time level; the old
    /// value is read from `y[0]`.
    pub fn step(&mut self, y: &mut [f64], u_new: f64) {
        let m = self.m;
        assert_eq!(y.len(), m + 2);
        let r = self.r;
        let s = 1.0 - 2.0 * r + self.c * self.dt / 2.0;
        for row in 0..m {
            let i = row + 1;
            self.rhs[row] = r * y[i - 1] + s * y[i] + r * y[i + 1];
        }
        self.rhs[0] += r * u_new;
        self.rhs[m] = 3.0 * u_new;
        self.factor.solve_in_place(&mut self.rhs);
        y[0] = u_new;
        y[1..].copy_from_slice(&self.rhs);
    }
}

/// Cached quadrature functionals for projecting grid profiles onto the
/// bi-orthogonal modes: row j holds `w_i psi_j(x_i)`.
#[derive(Debug, Clone)]
pub struct ModeProjector {
    weights: DMatrix<f64>,
}

impl ModeProjector {
    pub fn new(basis: &BasisPair, grid: &Grid, d: usize) -> Result<Self> {
        let pts = grid.points();
        let mut weights = DMatrix::zeros(d, pts);
        for j in 0..d {
            for (i, &x) in grid.nodes.iter().enumerate() {
                weights[(j, i)] = grid.quad_weights()[i] * basis.eval_psi(j, x)?;
            }
        }
        Ok(ModeProjector { weights })
    }

    pub fn project(&self, y: &[f64]) -> DVector<f64> {
        let v = DVector::from_column_slice(y);
        &self.weights * v
    }
}

/// Quadrature projections `<y, psi_j>`, j < d, of a sampled profile.
pub fn project_modes(basis: &BasisPair, grid: &Grid, y: &[f64], d: usize) -> Result<DVector<f64>> {
    Ok(ModeProjector::new(basis, grid, d)?.project(y))
}

/// Logged simulation output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub d: usize,
    pub times: Vec<f64>,
    /// L2 profile norm for PDE runs; mode-vector 2-norm for modal runs.
    pub norm_y: Vec<f64>,
    /// Boundary value applied at each sample time (zero before t = tau).
    pub u: Vec<f64>,
    /// Projected modes Y(t).
    pub modes: Vec<DVector<f64>>,
    /// Thinned profile snapshots (t, samples), when the run keeps them.
    pub profiles: Vec<(f64, Vec<f64>)>,
}

impl Trajectory {
    /// CSV with header `t,norm_y,u,Y0,...,Y{d-1}` at 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "t,norm_y,u")?;
        for j in 0..self.d {
            write!(out, ",Y{j}")?;
        }
        writeln!(out)?;
        for (i, &t) in self.times.iter().enumerate() {
            write!(out, "{:.16e},{:.16e},{:.16e}", t, self.norm_y[i], self.u[i])?;
            for j in 0..self.d {
                write!(out, ",{:.16e}", self.modes[i][j])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Profile snapshots as CSV rows `t,x,y`.
    pub fn write_profiles_csv<W: Write>(&self, grid_nodes: &[f64], out: &mut W) -> Result<()> {
        writeln!(out, "t,x,y")?;
        for (t, profile) in &self.profiles {
            for (x, v) in grid_nodes.iter().zip(profile.iter()) {
                writeln!(out, "{:.16e},{:.16e},{:.16e}", t, x, v)?;
            }
        }
        Ok(())
    }
}

/// Everything a run produces, including the histories needed to audit the
/// predictor equation after the fact.
#[derive(Debug)]
pub struct RunArtifacts {
    pub trajectory: Trajectory,
    pub design: Option<DesignSet>,
    pub op: Option<DelayOperator>,
    /// Scalar control values u(t) (dimension-1 history).
    pub u_ctrl_hist: ControlHistory,
    /// Projected modes Y(t).
    pub y_modes_hist: ControlHistory,
    /// Predictor modes U(t).
    pub u_modes_hist: ControlHistory,
    pub grid_nodes: Vec<f64>,
    pub final_profile: Vec<f64>,
    pub initial_norm: f64,
    pub final_norm: f64,
}

impl RunArtifacts {
    pub fn norm_ratio(&self) -> f64 {
        if self.initial_norm == 0.0 {
            f64::NAN
        } else {
            self.final_norm / self.initial_norm
        }
    }
}

enum LoopMode {
    Closed,
    /// u identically zero.
    Open,
    /// Proportional feedback on Y without the predictor march (tau must be 0).
    UndelayedFeedback,
}

fn spectral_stack(cfg: &SimConfig) -> Result<(usize, BasisPair)> {
    let d = choose_unstable_dim(cfg.rho, cfg.c, cfg.alpha)?;
    let spectrum = eigenvalues(d, cfg.c, cfg.alpha)?;
    let basis = BasisPair::build(spectrum, DEFAULT_QUAD_NODES)?;
    Ok((d, basis))
}

fn profile_stride(n_steps: usize) -> usize {
    (n_steps / 50).max(1)
}

fn run_pde(cfg: &SimConfig, mode: LoopMode) -> Result<RunArtifacts> {
    cfg.validate()?;
    let grid = Grid::new(cfg.grid_m)?;
    let (d, basis) = spectral_stack(cfg)?;
    let projector = ModeProjector::new(&basis, &grid, d)?;
    let (design, op) = match mode {
        LoopMode::Open => (None, None),
        _ => {
            let ds = build_design(&basis, cfg.rho, cfg.gammas.as_deref())?;
            if !ds.kalman.full_rank {
                return Err(Error::RankConditionViolated {
                    what: "Kalman rank condition fails for this configuration",
                    cond: ds.sum_bk_cond,
                });
            }
            let op = DelayOperator::new(ds.lambda.clone(), ds.c_mat.clone(), cfg.tau);
            (Some(ds), Some(op))
        }
    };

    let mut solver = HeatSolver::new(&grid, cfg.c, cfg.alpha, cfg.dt)?;
    let mut y = cfg.initial_profile(&grid)?;
    let n_steps = cfg.steps();
    let stride = profile_stride(n_steps);

    let mut u_ctrl_hist = ControlHistory::new(cfg.tau, 1);
    let mut y_modes_hist = ControlHistory::new(cfg.tau, d);
    let mut u_modes_hist = ControlHistory::new(cfg.tau, d);

    let mut traj = Trajectory {
        d,
        times: Vec::with_capacity(n_steps + 1),
        norm_y: Vec::with_capacity(n_steps + 1),
        u: Vec::with_capacity(n_steps + 1),
        modes: Vec::with_capacity(n_steps + 1),
        profiles: Vec::new(),
    };

    let initial_norm = grid.l2_norm(&y);
    let guard = BLOW_UP_FACTOR * initial_norm.max(f64::MIN_POSITIVE);

    // commit the t = 0 state
    let record = |traj: &mut Trajectory, t: f64, norm: f64, applied: f64, modes: DVector<f64>| {
        traj.times.push(t);
        traj.norm_y.push(norm);
        traj.u.push(applied);
        traj.modes.push(modes);
    };
    let y0_modes = projector.project(&y);
    record(&mut traj, 0.0, initial_norm, y[0], y0_modes.clone());
    traj.profiles.push((0.0, y.clone()));
    y_modes_hist.push(0.0, y0_modes.clone())?;
    match mode {
        LoopMode::Open => {
            u_ctrl_hist.push(0.0, DVector::zeros(1))?;
            u_modes_hist.push(0.0, DVector::zeros(d))?;
        }
        LoopMode::Closed => {
            let op_ref = op.as_ref().expect("closed loop has a delay operator");
            let ds = design.as_ref().expect("closed loop has a design");
            let u0 = march_fixed_point_step(op_ref, &y0_modes, &u_modes_hist, 0.0)?;
            let u_scalar = feedback_u(ds, &u0);
            u_modes_hist.push(0.0, u0)?;
            u_ctrl_hist.push(0.0, DVector::from_element(1, u_scalar))?;
        }
        LoopMode::UndelayedFeedback => {
            let ds = design.as_ref().expect("undelayed loop has a design");
            let u_scalar = feedback_u(ds, &y0_modes);
            u_modes_hist.push(0.0, y0_modes.clone())?;
            u_ctrl_hist.push(0.0, DVector::from_element(1, u_scalar))?;
        }
    }

    for n in 1..=n_steps {
        let t = n as f64 * cfg.dt;
        let applied = match mode {
            LoopMode::Open => 0.0,
            _ => u_ctrl_hist.eval_clamped(t - cfg.tau)[0],
        };
        solver.step(&mut y, applied);
        let norm = grid.l2_norm(&y);
        if !norm.is_finite() || norm > guard {
            return Err(Error::BlowUp {
                t,
                norm,
                initial: initial_norm,
                factor: BLOW_UP_FACTOR,
            });
        }
        let modes = projector.project(&y);
        y_modes_hist.push(t, modes.clone())?;
        match mode {
            LoopMode::Open => {
                u_ctrl_hist.push(t, DVector::zeros(1))?;
                u_modes_hist.push(t, DVector::zeros(d))?;
            }
            LoopMode::Closed => {
                let op_ref = op.as_ref().expect("closed loop has a delay operator");
                let ds = design.as_ref().expect("closed loop has a design");
                let u_t = march_fixed_point_step(op_ref, &modes, &u_modes_hist, t)?;
                let u_scalar = feedback_u(ds, &u_t);
                u_modes_hist.push(t, u_t)?;
                u_ctrl_hist.push(t, DVector::from_element(1, u_scalar))?;
            }
            LoopMode::UndelayedFeedback => {
                let ds = design.as_ref().expect("undelayed loop has a design");
                let u_scalar = feedback_u(ds, &modes);
                u_modes_hist.push(t, modes.clone())?;
                u_ctrl_hist.push(t, DVector::from_element(1, u_scalar))?;
            }
        }
        record(&mut traj, t, norm, applied, modes);
        if n % stride == 0 || n == n_steps {
            traj.profiles.push((t, y.clone()));
        }
    }

    let final_norm = *traj.norm_y.last().expect("at least the initial sample");
    Ok(RunArtifacts {
        trajectory: traj,
        design,
        op,
        u_ctrl_hist,
        y_modes_hist,
        u_modes_hist,
        grid_nodes: grid.nodes.clone(),
        final_profile: y,
        initial_norm,
        final_norm,
    })
}

/// Closed-loop run: predictor march + proportional feedback, delayed boundary.
pub fn run_closed_loop(cfg: &SimConfig) -> Result<RunArtifacts> {
    run_pde(cfg, LoopMode::Closed)
}

/// Open-loop run (u identically zero).
pub fn run_open_loop(cfg: &SimConfig) -> Result<RunArtifacts> {
    run_pde(cfg, LoopMode::Open)
}

/// Proportional feedback on Y without the predictor layer; only meaningful
/// for tau = 0, where it must reproduce the closed-loop run exactly.
pub fn run_closed_loop_undelayed(cfg: &SimConfig) -> Result<RunArtifacts> {
    if cfg.tau != 0.0 {
        return Err(Error::InvalidConfig(
            "undelayed feedback run requires tau = 0".to_string(),
        ));
    }
    run_pde(cfg, LoopMode::UndelayedFeedback)
}

/// Modal surrogate `dY/dt = Lambda Y + C U(t - tau)` advanced by classical
/// RK4 on the same step size, with the same predictor march. For tau = 0 the
/// system closes to `dY/dt = (Lambda + C) Y` and is integrated without
/// history reads (the undelayed dynamics the Lyapunov bound applies to).
pub fn run_modal_ode(cfg: &SimConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let grid = Grid::new(cfg.grid_m)?;
    let (d, basis) = spectral_stack(cfg)?;
    let projector = ModeProjector::new(&basis, &grid, d)?;
    let ds = build_design(&basis, cfg.rho, cfg.gammas.as_deref())?;
    if !ds.kalman.full_rank {
        return Err(Error::RankConditionViolated {
            what: "Kalman rank condition fails for this configuration",
            cond: ds.sum_bk_cond,
        });
    }
    let op = DelayOperator::new(ds.lambda.clone(), ds.c_mat.clone(), cfg.tau);

    let y0_profile = cfg.initial_profile(&grid)?;
    let mut y_state = projector.project(&y0_profile);

    let n_steps = cfg.steps();
    let mut u_ctrl_hist = ControlHistory::new(cfg.tau, 1);
    let mut y_modes_hist = ControlHistory::new(cfg.tau, d);
    let mut u_modes_hist = ControlHistory::new(cfg.tau, d);
    let mut traj = Trajectory {
        d,
        times: Vec::with_capacity(n_steps + 1),
        norm_y: Vec::with_capacity(n_steps + 1),
        u: Vec::with_capacity(n_steps + 1),
        modes: Vec::with_capacity(n_steps + 1),
        profiles: Vec::new(),
    };

    let initial_norm = y_state.norm();
    let guard = BLOW_UP_FACTOR * initial_norm.max(f64::MIN_POSITIVE);
    let undelayed = cfg.tau == 0.0;
    let closed_mat = &ds.lambda + &ds.c_mat;

    // For tau = 0 the convolution window is always empty, so the march
    // returns U = Y exactly; one code path serves both cases.
    let commit = |t: f64,
                  y_state: &DVector<f64>,
                  y_hist: &mut ControlHistory,
                  u_hist: &mut ControlHistory,
                  uc_hist: &mut ControlHistory,
                  op: &DelayOperator,
                  ds: &DesignSet|
     -> Result<f64> {
        y_hist.push(t, y_state.clone())?;
        let u_t = march_fixed_point_step(op, y_state, u_hist, t)?;
        let u_scalar = feedback_u(ds, &u_t);
        u_hist.push(t, u_t)?;
        uc_hist.push(t, DVector::from_element(1, u_scalar))?;
        Ok(u_scalar)
    };

    // record t = 0
    commit(
        0.0,
        &y_state,
        &mut y_modes_hist,
        &mut u_modes_hist,
        &mut u_ctrl_hist,
        &op,
        &ds,
    )?;
    traj.times.push(0.0);
    traj.norm_y.push(initial_norm);
    traj.u.push(0.0);
    traj.modes.push(y_state.clone());

    for n in 1..=n_steps {
        let t_prev = (n - 1) as f64 * cfg.dt;
        let t = n as f64 * cfg.dt;
        let dt = cfg.dt;
        if undelayed {
            // dY/dt = (Lambda + C) Y, no history reads
            let f = |v: &DVector<f64>| &closed_mat * v;
            let k1 = f(&y_state);
            let k2 = f(&(&y_state + (dt / 2.0) * &k1));
            let k3 = f(&(&y_state + (dt / 2.0) * &k2));
            let k4 = f(&(&y_state + dt * &k3));
            y_state += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        } else {
            let input = |ts: f64| &ds.c_mat * u_modes_hist.eval_clamped(ts - cfg.tau);
            let f = |v: &DVector<f64>, ts: f64| &ds.lambda * v + input(ts);
            let k1 = f(&y_state, t_prev);
            let k2 = f(&(&y_state + (dt / 2.0) * &k1), t_prev + dt / 2.0);
            let k3 = f(&(&y_state + (dt / 2.0) * &k2), t_prev + dt / 2.0);
            let k4 = f(&(&y_state + dt * &k3), t);
            y_state += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let norm = y_state.norm();
        if !norm.is_finite() || norm > guard {
            return Err(Error::BlowUp {
                t,
                norm,
                initial: initial_norm,
                factor: BLOW_UP_FACTOR,
            });
        }
        commit(
            t,
            &y_state,
            &mut y_modes_hist,
            &mut u_modes_hist,
            &mut u_ctrl_hist,
            &op,
            &ds,
        )?;
        let applied = u_ctrl_hist.eval_clamped(t - cfg.tau)[0];
        traj.times.push(t);
        traj.norm_y.push(norm);
        traj.u.push(applied);
        traj.modes.push(y_state.clone());
    }

    let final_norm = *traj.norm_y.last().expect("at least the initial sample");
    // reconstruct the surrogate's final profile from the modal expansion
    let final_profile: Vec<f64> = grid
        .nodes
        .iter()
        .map(|&x| {
            (0..d)
                .map(|j| y_state[j] * basis.eval_phi(j, x).expect("mode index within basis"))
                .sum()
        })
        .collect();
    Ok(RunArtifacts {
        trajectory: traj,
        design: Some(ds),
        op: Some(op),
        u_ctrl_hist,
        y_modes_hist,
        u_modes_hist,
        grid_nodes: grid.nodes.clone(),
        final_profile,
        initial_norm,
        final_norm,
    })
}

/// Least-squares slope of `ln norm_y(t)` over samples with `t >= t_start`.
pub fn estimate_decay_rate(traj: &Trajectory, t_start: f64) -> Result<f64> {
    let mut ts = Vec::new();
    let mut ls = Vec::new();
    for (i, &t) in traj.times.iter().enumerate() {
        if t >= t_start - 1e-12 {
            let n = traj.norm_y[i];
            if n <= 0.0 {
                return Err(Error::NonPositiveNorm { t });
            }
            ts.push(t);
            ls.push(n.ln());
        }
    }
    if ts.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "rate fit window [{t_start}, ..] contains {} samples; need at least 2",
            ts.len()
        )));
    }
    let n = ts.len() as f64;
    let tbar = ts.iter().sum::<f64>() / n;
    let lbar = ls.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, l) in ts.iter().zip(ls.iter()) {
        num += (t - tbar) * (l - lbar);
        den += (t - tbar) * (t - tbar);
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_invariants() {
        assert!(Grid::new(10).is_err());
        let g = Grid::new(100).unwrap();
        assert_eq!(g.points(), 102);
        assert_relative_eq!(g.h * (g.m as f64 + 1.0), PI, max_relative = 1e-15);
        // Simpson weights integrate sin^2 over [0, pi] to pi/2
        let y: Vec<f64> = g.nodes.iter().map(|&x| x.sin()).collect();
        assert_relative_eq!(g.l2_norm(&y), (PI / 2.0_f64).sqrt(), max_relative = 1e-8);
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        // unknown keys rejected
        let bad: std::result::Result<SimConfig, _> =
            serde_json::from_str("{\"alpha\": 1.0, \"bogus\": 2}");
        assert!(bad.is_err());
        // t_final <= tau rejected
        let mut c2 = SimConfig::default();
        c2.t_final = 0.1;
        assert!(c2.validate().is_err());
    }

    #[test]
    fn rate_fit_exact_exponential() {
        let mut traj = Trajectory {
            d: 1,
            times: Vec::new(),
            norm_y: Vec::new(),
            u: Vec::new(),
            modes: Vec::new(),
            profiles: Vec::new(),
        };
        let mut t = 0.0;
        while t <= 3.0 + 1e-12 {
            traj.times.push(t);
            traj.norm_y.push((-2.0 * t).exp());
            traj.u.push(0.0);
            traj.modes.push(DVector::zeros(1));
            t += 0.01;
        }
        let rate = estimate_decay_rate(&traj, 0.5).unwrap();
        assert_relative_eq!(rate, -2.0, epsilon = 1e-10);
    }

    #[test]
    fn projection_of_basis_functions_is_unit_coordinate() {
        let spectrum = eigenvalues(2, 2.0, 1.0).unwrap();
        let basis = BasisPair::build(spectrum, DEFAULT_QUAD_NODES).unwrap();
        let grid = Grid::new(400).unwrap();
        for j in 0..2 {
            let profile: Vec<f64> = grid
                .nodes
                .iter()
                .map(|&x| basis.eval_phi(j, x).unwrap())
                .collect();
            let modes = project_modes(&basis, &grid, &profile, 2).unwrap();
            for i in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (modes[i] - expect).abs() < 1e-6,
                    "projection ({i},{j}) = {}",
                    modes[i]
                );
            }
        }
    }

    #[test]
    fn open_loop_separable_solution() {
        // y0 = sin x satisfies both boundary conditions; with c = 2 the exact
        // solution is e^t sin x.
        let cfg = SimConfig {
            tau: 0.0,
            grid_m: 100,
            dt: 1e-3,
            t_final: 1.0,
            y0: Y0Spec::Name("sin1".to_string()),
            ..SimConfig::default()
        };
        let run = run_open_loop(&cfg).unwrap();
        let t = 1.0_f64;
        let scale = t.exp();
        let mut worst = 0.0_f64;
        for (i, &x) in run.grid_nodes.iter().enumerate() {
            let exact = scale * x.sin();
            worst = worst.max((run.final_profile[i] - exact).abs());
        }
        assert!(worst / scale < 1e-3, "relative profile error {}", worst / scale);
    }
}
