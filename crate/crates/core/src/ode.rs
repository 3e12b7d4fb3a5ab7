//! Integration of the gradient flow `θ' = −η ∇L(θ)`.
//!
//! Fixed-step explicit Euler and classical RK4, the Dormand–Prince 5(4)
//! embedded pair, and a linearly implicit, L-stable Rosenbrock method of
//! order 3 (embedded order 2) that uses the exact Hessian as Jacobian.
//! Adaptive methods accept a step when the weighted RMS of
//! `err_i / (abstol + reltol·max(|y_i|, |ŷ_i|))` is at most one and adjust
//! the step with a PI controller. Snapshots on the save grid come from
//! cubic Hermite interpolation of accepted steps.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::derivatives::{self, MlpProblem};
use crate::error::{Error, Result};
use crate::net::{norm2, Dataset, LossConfig, Net, ParamVector};
use crate::objective::{EvalWork, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntegratorMethod {
    Euler { dt: f64 },
    Rk4 { dt: f64 },
    AdaptiveRk45,
    Rosenbrock,
}

impl IntegratorMethod {
    pub fn name(&self) -> &'static str {
        match self {
            IntegratorMethod::Euler { .. } => "euler",
            IntegratorMethod::Rk4 { .. } => "rk4",
            IntegratorMethod::AdaptiveRk45 => "adaptive_rk45",
            IntegratorMethod::Rosenbrock => "rosenbrock",
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(
            self,
            IntegratorMethod::AdaptiveRk45 | IntegratorMethod::Rosenbrock
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaveGrid {
    Log { n_points: usize },
    Times(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ReachedT,
    Budget,
    MaxSteps,
    StepFailure,
}

/// Stop after exactly `steps` accepted steps and report `terminated_by`;
/// used to replay a wall-clock-limited run deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub steps: u64,
    pub terminated_by: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub method: IntegratorMethod,
    pub abstol: f64,
    pub reltol: f64,
    pub t_end: f64,
    pub max_steps: u64,
    pub wall_budget_seconds: Option<f64>,
    pub save_grid: SaveGrid,
    /// First step of the adaptive methods; chosen automatically when unset.
    pub initial_step: Option<f64>,
    /// Rosenbrock re-evaluates the Hessian every `jacobian_lag` accepted steps.
    pub jacobian_lag: u64,
    pub replay: Option<Cutoff>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: IntegratorMethod::AdaptiveRk45,
            abstol: 1e-6,
            reltol: 1e-6,
            t_end: 1.0,
            max_steps: 1_000_000,
            wall_budget_seconds: None,
            save_grid: SaveGrid::Log { n_points: 1000 },
            initial_step: None,
            jacobian_lag: 1,
            replay: None,
        }
    }
}

impl IntegratorConfig {
    pub fn new(method: IntegratorMethod, t_end: f64) -> Self {
        Self {
            method,
            t_end,
            ..Self::default()
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.abstol = tol;
        self.reltol = tol;
        self
    }

    pub fn with_grid(mut self, grid: SaveGrid) -> Self {
        self.save_grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            IntegratorMethod::Euler { dt } | IntegratorMethod::Rk4 { dt } if !(dt > 0.0) => {
                return Err(Error::config("integrate.method.dt", "must be positive"))
            }
            _ => {}
        }
        if !(self.abstol > 0.0) {
            return Err(Error::config("integrate.abstol", "must be positive"));
        }
        if !(self.reltol > 0.0) {
            return Err(Error::config("integrate.reltol", "must be positive"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::config("integrate.t_end", "must be positive and finite"));
        }
        if self.jacobian_lag == 0 {
            return Err(Error::config("integrate.jacobian_lag", "must be at least 1"));
        }
        match &self.save_grid {
            SaveGrid::Log { n_points } if *n_points < 2 => {
                Err(Error::config("integrate.save_grid.log.n_points", "must be at least 2"))
            }
            SaveGrid::Times(ts) if ts.windows(2).any(|w| !(w[1] > w[0])) || ts.iter().any(|t| *t < 0.0) => {
                Err(Error::config(
                    "integrate.save_grid.times",
                    "must be non-negative and strictly increasing",
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        match &self.save_grid {
            SaveGrid::Log { n_points } => log_grid(self.t_end, *n_points),
            SaveGrid::Times(ts) => ts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: String,
    pub times: Vec<f64>,
    pub states: Vec<ParamVector>,
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub work: EvalWork,
    pub terminated_by: Termination,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    /// Tolerances of adaptive runs.
    #[serde(default)]
    pub abstol: Option<f64>,
    #[serde(default)]
    pub reltol: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &ParamVector {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has an initial time")
    }

    /// The cutoff that replays this run without a wall clock.
    pub fn cutoff(&self) -> Cutoff {
        Cutoff { steps: self.steps_accepted, terminated_by: self.terminated_by }
    }

    pub fn param_count(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }
}

/// `0` followed by `n − 1` log-spaced points from `T·1e-8` to `T`.
pub fn log_grid(t_end: f64, n: usize) -> Vec<f64> {
    log_grid_from(t_end, n, t_end * 1e-8)
}

pub fn log_grid_from(t_end: f64, n: usize, t_min: f64) -> Vec<f64> {
    assert!(n >= 2 && t_end > 0.0 && t_min > 0.0 && t_min <= t_end);
    let mut out = Vec::with_capacity(n);
    out.push(0.0);
    let m = n - 1;
    if m == 1 {
        out.push(t_end);
        return out;
    }
    let log_ratio = (t_end / t_min).ln();
    for k in 0..m {
        if k == m - 1 {
            out.push(t_end);
        } else {
            out.push(t_min * (log_ratio * k as f64 / (m - 1) as f64).exp());
        }
    }
    out
}

/// `−η ∇L(θ)`.
pub fn flow_rhs(net: &Net, theta: &[f64], data: &Dataset, cfg: &LossConfig) -> Result<Vec<f64>> {
    let g = derivatives::gradient(net, theta, data, cfg)?;
    Ok(g.into_iter().map(|v| -cfg.eta * v).collect())
}

/// `−η ∇²L(θ)`.
pub fn flow_jacobian(
    net: &Net,
    theta: &[f64],
    data: &Dataset,
    cfg: &LossConfig,
) -> Result<DMatrix<f64>> {
    Ok(derivatives::hessian(net, theta, data, cfg)? * (-cfg.eta))
}

/// `θ ← θ − lr·g`; gradient descent and explicit Euler share this update.
#[inline]
pub(crate) fn descent_update(theta: &mut [f64], grad: &[f64], lr: f64) {
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
}

pub fn integrate(
    net: &Net,
    theta0: &[f64],
    data: &Dataset,
    loss_cfg: &LossConfig,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    net.check_params(theta0)?;
    let problem = MlpProblem::new(net, data, *loss_cfg)?;
    integrate_objective(&problem, theta0, cfg)
}

struct Recorder {
    grid: Vec<f64>,
    next: usize,
    traj: Trajectory,
}

impl Recorder {
    fn push(&mut self, t: f64, y: Vec<f64>) {
        self.traj.times.push(t);
        self.traj.states.push(ParamVector(y));
    }

    /// Snapshot losses and gradient norms, evaluated after the clock stops.
    fn diagnostics<O: Objective + ?Sized>(&mut self, obj: &O) {
        for s in &self.traj.states {
            let (l, g) = obj.loss_and_gradient(s);
            self.traj.losses.push(l);
            self.traj.grad_norms.push(norm2(&g));
        }
    }

    /// Records grid points in `(t0, t1]` from the step `(y0, f0) -> (y1, f1)`.
    fn record_step(
        &mut self,
        (t0, y0, f0): (f64, &[f64], &[f64]),
        (t1, y1, f1): (f64, &[f64], &[f64]),
    ) {
        while self.next < self.grid.len() && self.grid[self.next] <= t1 {
            let tg = self.grid[self.next];
            self.next += 1;
            if tg <= t0 {
                continue;
            }
            let y = if tg == t1 {
                y1.to_vec()
            } else {
                hermite(t0, y0, f0, t1, y1, f1, tg)
            };
            self.push(tg, y);
        }
    }
}

fn hermite(t0: f64, y0: &[f64], f0: &[f64], t1: f64, y1: &[f64], f1: &[f64], t: f64) -> Vec<f64> {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    (0..y0.len())
        .map(|i| h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i])
        .collect()
}

fn rhs<O: Objective + ?Sized>(obj: &O, y: &[f64]) -> Vec<f64> {
    let eta = obj.flow_rate();
    obj.gradient(y).into_iter().map(|g| -eta * g).collect()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], abstol: f64, reltol: f64) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = abstol + reltol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

struct Attempt {
    y: Vec<f64>,
    f: Vec<f64>,
    err: f64,
    /// Raw gradient at `y`, kept by explicit Euler.
    g: Option<Vec<f64>>,
}

// Dormand–Prince 5(4) tableau.
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn dopri5_attempt<O: Objective + ?Sized>(
    obj: &O,
    y: &[f64],
    f0: &[f64],
    h: f64,
    tol: (f64, f64),
) -> Attempt {
    let n = y.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    k.push(f0.to_vec());
    let mut ynew = vec![0.0; n];
    for (s, row) in DP_A.iter().enumerate() {
        let mut ys = y.to_vec();
        for (j, a) in row.iter().enumerate().take(s + 1) {
            if *a != 0.0 {
                for i in 0..n {
                    ys[i] += h * a * k[j][i];
                }
            }
        }
        if s == 5 {
            ynew = ys.clone();
        }
        k.push(rhs(obj, &ys));
    }
    let err: Vec<f64> = (0..n)
        .map(|i| h * (0..7).map(|j| DP_E[j] * k[j][i]).sum::<f64>())
        .collect();
    let f = k.pop().unwrap();
    let e = error_norm(&err, y, &ynew, tol.0, tol.1);
    Attempt { y: ynew, f, err: e, g: None }
}

// Three-stage L-stable Rosenbrock method of order 3 with an embedded
// order-2 solution: alpha21 = alpha31 = 1, alpha32 = 0, gamma21 = 0.
const ROS_GAMMA: f64 = 0.435_866_521_508_459;
const ROS_G31: f64 = -0.569_938_873_715_651_85;
const ROS_G32: f64 = -0.237_660_690_809_725_14;
const ROS_BHAT2: f64 = 0.064_133_478_491_541_001;

/// One Rosenbrock step with `W = I − hγJ`, a single LU factorization and
/// three solves.
fn rosenbrock_attempt<O: Objective + ?Sized>(
    obj: &O,
    y: &[f64],
    f0: &[f64],
    jac: &DMatrix<f64>,
    h: f64,
    tol: (f64, f64),
) -> Option<Attempt> {
    let n = y.len();
    let w = DMatrix::identity(n, n) - jac * (h * ROS_GAMMA);
    let lu = w.lu();
    let solve = |b: Vec<f64>| -> Option<Vec<f64>> {
        let v = lu.solve(&DVector::from_vec(b))?;
        Some(v.as_slice().to_vec())
    };
    let k1 = solve(f0.iter().map(|v| h * v).collect())?;
    let f1 = rhs(obj, &axpy(y, 1.0, &k1));
    let k2 = solve(f1.iter().map(|v| h * v).collect())?;
    let mix: Vec<f64> = (0..n).map(|i| ROS_G31 * k1[i] + ROS_G32 * k2[i]).collect();
    let jmix = jac * DVector::from_vec(mix);
    let k3 = solve((0..n).map(|i| h * (f1[i] + jmix[i])).collect())?;
    let ynew: Vec<f64> = (0..n)
        .map(|i| y[i] + (2.0 / 3.0) * k1[i] + (1.0 / 3.0) * k3[i])
        .collect();
    let err: Vec<f64> = (0..n)
        .map(|i| (2.0 / 3.0 - 1.0 + ROS_BHAT2) * k1[i] - ROS_BHAT2 * k2[i] + (1.0 / 3.0) * k3[i])
        .collect();
    let f2 = rhs(obj, &ynew);
    let e = error_norm(&err, y, &ynew, tol.0, tol.1);
    Some(Attempt { y: ynew, f: f2, err: e, g: None })
}

fn initial_step<O: Objective + ?Sized>(
    obj: &O,
    y0: &[f64],
    f0: &[f64],
    order: i32,
    abstol: f64,
    reltol: f64,
    t_end: f64,
) -> f64 {
    let n = y0.len().max(1) as f64;
    let sc: Vec<f64> = y0.iter().map(|y| abstol + reltol * y.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(t_end);
    let f1 = rhs(obj, &axpy(y0, h0, f0));
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(1.0 / (order as f64 + 1.0))
    };
    (100.0 * h0).min(h1).min(t_end)
}

/// PI step-size controller with factors clamped to `[0.2, 5]`.
struct Controller {
    alpha: f64,
    beta: f64,
    err_old: f64,
}

impl Controller {
    const SAFETY: f64 = 0.9;
    const MIN_FACTOR: f64 = 0.2;
    const MAX_FACTOR: f64 = 5.0;

    fn new(error_order: f64) -> Self {
        let beta = 0.04;
        Self {
            alpha: 1.0 / error_order - 0.75 * beta,
            beta,
            err_old: 1e-4,
        }
    }

    fn accept(&mut self, err: f64) -> f64 {
        let fac = if err == 0.0 {
            Self::MAX_FACTOR
        } else {
            Self::SAFETY * err.powf(-self.alpha) * self.err_old.powf(self.beta)
        };
        self.err_old = err.max(1e-4);
        fac.clamp(Self::MIN_FACTOR, Self::MAX_FACTOR)
    }

    fn reject(&self, err: f64) -> f64 {
        if err.is_finite() {
            (Self::SAFETY * err.powf(-self.alpha)).clamp(Self::MIN_FACTOR, 1.0)
        } else {
            Self::MIN_FACTOR
        }
    }
}

/// Integrates the flow of `obj` from `theta0` over `[0, cfg.t_end]`.
///
/// Step failures, budget exhaustion and step caps end the run gracefully;
/// the partial trajectory is returned with `terminated_by` set.
pub fn integrate_objective<O: Objective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if theta0.len() != obj.dim() {
        return Err(Error::Shape(format!(
            "initial state has length {}, objective expects {}",
            theta0.len(),
            obj.dim()
        )));
    }
    let clock = Instant::now();
    let work0 = obj.work();
    let t_end = cfg.t_end;
    let mut grid: Vec<f64> = cfg.grid().into_iter().filter(|&t| t <= t_end).collect();
    if grid.first() != Some(&0.0) {
        grid.insert(0, 0.0);
    }
    let mut rec = Recorder {
        grid,
        next: 1,
        traj: Trajectory {
            method: cfg.method.name().to_string(),
            times: Vec::new(),
            states: Vec::new(),
            losses: Vec::new(),
            grad_norms: Vec::new(),
            work: EvalWork::default(),
            terminated_by: Termination::ReachedT,
            steps_accepted: 0,
            steps_rejected: 0,
            abstol: cfg.method.is_adaptive().then_some(cfg.abstol),
            reltol: cfg.method.is_adaptive().then_some(cfg.reltol),
        },
    };
    rec.push(0.0, theta0.to_vec());

    let mut t = 0.0;
    let mut y = theta0.to_vec();
    let eta = obj.flow_rate();
    let mut g_cur = obj.gradient(&y);
    let mut f: Vec<f64> = g_cur.iter().map(|v| -eta * v).collect();
    let mut accepted: u64 = 0;
    let mut rejected: u64 = 0;
    let tol = (cfg.abstol, cfg.reltol);

    let mut h = match cfg.method {
        IntegratorMethod::Euler { dt } | IntegratorMethod::Rk4 { dt } => dt,
        IntegratorMethod::AdaptiveRk45 => cfg
            .initial_step
            .unwrap_or_else(|| initial_step(obj, &y, &f, 5, tol.0, tol.1, t_end)),
        IntegratorMethod::Rosenbrock => cfg
            .initial_step
            .unwrap_or_else(|| initial_step(obj, &y, &f, 2, tol.0, tol.1, t_end)),
    };
    let mut controller = Controller::new(match cfg.method {
        IntegratorMethod::Rosenbrock => 3.0,
        _ => 5.0,
    });
    let mut jac: Option<(DMatrix<f64>, u64)> = None;

    let termination = loop {
        if t >= t_end {
            break Termination::ReachedT;
        }
        if let Some(cut) = cfg.replay {
            if accepted >= cut.steps {
                break cut.terminated_by;
            }
        } else {
            if accepted >= cfg.max_steps {
                break Termination::MaxSteps;
            }
            if let Some(b) = cfg.wall_budget_seconds {
                if clock.elapsed().as_secs_f64() > b {
                    break Termination::Budget;
                }
            }
        }

        let last = t + h >= t_end * (1.0 - 1e-14);
        let step = if last { t_end - t } else { h };
        let t_new = if last { t_end } else { t + step };

        let attempt = match cfg.method {
            IntegratorMethod::Euler { .. } => {
                let mut yn = y.clone();
                descent_update(&mut yn, &g_cur, eta * step);
                let gnew = obj.gradient(&yn);
                let fnew = gnew.iter().map(|v| -eta * v).collect();
                Some(Attempt { y: yn, f: fnew, err: 0.0, g: Some(gnew) })
            }
            IntegratorMethod::Rk4 { .. } => {
                let k1 = &f;
                let k2 = rhs(obj, &axpy(&y, 0.5 * step, k1));
                let k3 = rhs(obj, &axpy(&y, 0.5 * step, &k2));
                let k4 = rhs(obj, &axpy(&y, step, &k3));
                let yn: Vec<f64> = (0..y.len())
                    .map(|i| y[i] + step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect();
                let fnew = rhs(obj, &yn);
                Some(Attempt { y: yn, f: fnew, err: 0.0, g: None })
            }
            IntegratorMethod::AdaptiveRk45 => Some(dopri5_attempt(obj, &y, &f, step, tol)),
            IntegratorMethod::Rosenbrock => {
                let refresh = match &jac {
                    Some((_, age)) => *age >= cfg.jacobian_lag,
                    None => true,
                };
                if refresh {
                    jac = Some((obj.hessian(&y) * (-eta), 0));
                }
                let (j, _) = jac.as_ref().unwrap();
                rosenbrock_attempt(obj, &y, &f, j, step, tol)
            }
        };

        let ok = attempt
            .as_ref()
            .is_some_and(|a| a.err.is_finite() && all_finite(&a.y) && all_finite(&a.f));

        if !cfg.method.is_adaptive() {
            if !ok {
                break Termination::StepFailure;
            }
        } else {
            let err = attempt.as_ref().map_or(f64::INFINITY, |a| a.err);
            if !ok || err > 1.0 {
                rejected += 1;
                h = step * controller.reject(if ok { err } else { f64::INFINITY });
                if h < 1e-14 * t.abs().max(1.0) {
                    break Termination::StepFailure;
                }
                continue;
            }
        }

        let a = attempt.unwrap();
        rec.record_step((t, &y, &f), (t_new, &a.y, &a.f));
        if cfg.method.is_adaptive() {
            let fac = controller.accept(a.err);
            h = if last { h.max(step * fac) } else { step * fac };
        }
        t = t_new;
        y = a.y;
        f = a.f;
        if let Some(g) = a.g {
            g_cur = g;
        }
        accepted += 1;
        if let Some((_, age)) = jac.as_mut() {
            *age += 1;
        }
    };

    if rec.traj.times.last().is_some_and(|&tl| t > tl) {
        rec.push(t, y);
    }
    rec.traj.terminated_by = termination;
    rec.traj.steps_accepted = accepted;
    rec.traj.steps_rejected = rejected;
    rec.traj.work = obj.work().since(&work0);
    rec.diagnostics(obj);
    Ok(rec.traj)
}
