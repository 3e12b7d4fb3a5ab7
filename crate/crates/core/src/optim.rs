//! Fixed-point search: gradient descent, Adam, BFGS, L-BFGS and a Newton
//! trust-region method, plus the epoch-based convergence protocol.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::derivatives::MlpProblem;
use crate::error::{Error, Result};
use crate::net::{norm2, Dataset, LossConfig, Net, ParamVector};
use crate::objective::{EvalWork, Objective};
use crate::ode::descent_update;

pub use crate::linalg::min_eigenvalue;

const WOLFE_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;
const LINE_SEARCH_TRIALS: usize = 25;
const MAX_CONSECUTIVE_FAILURES: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerMethod {
    Gd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
    Bfgs,
    Lbfgs {
        memory: usize,
    },
    NewtonTr {
        #[serde(default = "default_delta0")]
        delta0: f64,
        #[serde(default = "default_delta_max")]
        delta_max: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_delta0() -> f64 {
    1.0
}
fn default_delta_max() -> f64 {
    1e3
}

impl OptimizerMethod {
    pub fn adam(lr: f64) -> Self {
        OptimizerMethod::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn newton() -> Self {
        OptimizerMethod::NewtonTr {
            delta0: default_delta0(),
            delta_max: default_delta_max(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerMethod::Gd { .. } => "gd",
            OptimizerMethod::Adam { .. } => "adam",
            OptimizerMethod::Bfgs => "bfgs",
            OptimizerMethod::Lbfgs { .. } => "lbfgs",
            OptimizerMethod::NewtonTr { .. } => "newton_tr",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config(format!("method.{k}"), m));
        match *self {
            OptimizerMethod::Gd { lr } if !(lr > 0.0) => bad("lr", "must be positive"),
            OptimizerMethod::Adam { lr, beta1, beta2, eps } => {
                if !(lr > 0.0) {
                    bad("lr", "must be positive")
                } else if !(0.0..1.0).contains(&beta1) {
                    bad("beta1", "must lie in [0, 1)")
                } else if !(0.0..1.0).contains(&beta2) {
                    bad("beta2", "must lie in [0, 1)")
                } else if !(eps >= 0.0) {
                    bad("eps", "must be non-negative")
                } else {
                    Ok(())
                }
            }
            OptimizerMethod::Lbfgs { memory } if memory == 0 => bad("memory", "must be at least 1"),
            OptimizerMethod::NewtonTr { delta0, delta_max } => {
                if !(delta0 > 0.0) {
                    bad("delta0", "must be positive")
                } else if !(delta_max >= delta0) {
                    bad("delta_max", "must be at least delta0")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Stop after exactly `iterations` iterations, reporting `stop_reason`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerCutoff {
    pub iterations: u64,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    pub max_iters: u64,
    pub grad_tol: f64,
    pub wall_seconds: Option<f64>,
    pub replay: Option<OptimizerCutoff>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            grad_tol: 1e-8,
            wall_seconds: None,
            replay: None,
        }
    }
}

impl Budget {
    pub fn iterations(max_iters: u64) -> Self {
        Self {
            max_iters,
            ..Self::default()
        }
    }

    /// Budget for round-off floor studies.
    pub fn floor_study(max_iters: u64) -> Self {
        Self {
            max_iters,
            grad_tol: 1e-16,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    ProbablyConverged,
    NotConverged,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    /// No further decrease is possible at working precision.
    Stalled,
    MaxIters,
    WallBudget,
    NonFinite,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub method: String,
    pub final_loss: f64,
    pub grad_norm: f64,
    pub min_eigenvalue: Option<f64>,
    pub iterations: u64,
    pub status: Status,
    pub stop_reason: StopReason,
    pub line_search_failures: u64,
    pub skipped_updates: u64,
    pub rejected_steps: u64,
    pub work: EvalWork,
}

impl ConvergenceReport {
    /// The cutoff that replays this run without a wall clock.
    pub fn cutoff(&self) -> OptimizerCutoff {
        OptimizerCutoff { iterations: self.iterations, stop_reason: self.stop_reason }
    }
}

pub fn minimize(
    net: &Net,
    theta0: &[f64],
    data: &Dataset,
    loss_cfg: &LossConfig,
    method: &OptimizerMethod,
    budget: &Budget,
) -> Result<(ParamVector, ConvergenceReport)> {
    net.check_params(theta0)?;
    let problem = MlpProblem::new(net, data, *loss_cfg)?;
    minimize_objective(&problem, theta0, method, budget)
}

/// Minimizes `obj` from `theta0`; returns the best iterate seen.
pub fn minimize_objective<O: Objective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    method: &OptimizerMethod,
    budget: &Budget,
) -> Result<(ParamVector, ConvergenceReport)> {
    method.validate()?;
    if theta0.len() != obj.dim() {
        return Err(Error::Shape(format!(
            "initial point has length {}, objective expects {}",
            theta0.len(),
            obj.dim()
        )));
    }
    if !(budget.grad_tol >= 0.0) {
        return Err(Error::config("budget.grad_tol", "must be non-negative"));
    }
    let mut run = Run::new(obj, theta0, method.name(), budget);
    match *method {
        OptimizerMethod::Gd { lr } => gd(&mut run, lr),
        OptimizerMethod::Adam { lr, beta1, beta2, eps } => adam(&mut run, lr, beta1, beta2, eps),
        OptimizerMethod::Bfgs => quasi_newton(&mut run, &mut DenseInverse::new(theta0.len())),
        OptimizerMethod::Lbfgs { memory } => quasi_newton(&mut run, &mut TwoLoop::new(memory)),
        OptimizerMethod::NewtonTr { delta0, delta_max } => newton_tr(&mut run, delta0, delta_max),
    }
    Ok(run.finish())
}

/// Bookkeeping shared by all methods: budget checks and best-seen tracking.
struct Run<'a, O: ?Sized> {
    obj: &'a O,
    budget: Budget,
    method: &'static str,
    clock: Instant,
    work0: EvalWork,
    best: (f64, Vec<f64>, f64),
    iterations: u64,
    line_search_failures: u64,
    skipped_updates: u64,
    rejected_steps: u64,
    stop: Option<StopReason>,
}

impl<'a, O: Objective + ?Sized> Run<'a, O> {
    fn new(obj: &'a O, theta0: &[f64], method: &'static str, budget: &Budget) -> Self {
        Self {
            obj,
            budget: *budget,
            method,
            clock: Instant::now(),
            work0: obj.work(),
            best: (f64::INFINITY, theta0.to_vec(), f64::INFINITY),
            iterations: 0,
            line_search_failures: 0,
            skipped_updates: 0,
            rejected_steps: 0,
            stop: None,
        }
    }

    /// Keeps the iterate with the lowest loss; within the objective's loss
    /// floor the smaller gradient wins.
    fn observe(&mut self, theta: &[f64], loss: f64, grad: &[f64]) {
        let gn = norm2(grad);
        let floor = self.obj.loss_floor();
        let better = if (loss - self.best.0).abs() <= floor {
            gn < self.best.2
        } else {
            loss < self.best.0
        };
        if better || (loss.is_nan() && self.best.0.is_infinite()) {
            self.best = (loss, theta.to_vec(), gn);
        }
    }

    /// Checks the stopping rules at the top of an iteration.
    fn should_stop(&mut self, loss: f64, grad: &[f64]) -> bool {
        if self.stop.is_some() {
            return true;
        }
        let reason = if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            Some(StopReason::NonFinite)
        } else if norm2(grad) <= self.budget.grad_tol {
            Some(StopReason::GradTol)
        } else if let Some(cut) = self.budget.replay {
            (self.iterations >= cut.iterations).then_some(StopReason::Replay)
        } else if self.iterations >= self.budget.max_iters {
            Some(StopReason::MaxIters)
        } else if self
            .budget
            .wall_seconds
            .is_some_and(|w| self.clock.elapsed().as_secs_f64() > w)
        {
            Some(StopReason::WallBudget)
        } else {
            None
        };
        self.stop = reason;
        reason.is_some()
    }

    fn finish(self) -> (ParamVector, ConvergenceReport) {
        let reason = match self.stop.unwrap_or(StopReason::MaxIters) {
            StopReason::Replay => self.budget.replay.map_or(StopReason::Replay, |c| c.stop_reason),
            r => r,
        };
        let status = match reason {
            StopReason::GradTol | StopReason::Stalled => Status::ProbablyConverged,
            StopReason::MaxIters | StopReason::NonFinite | StopReason::Replay => Status::NotConverged,
            StopReason::WallBudget => Status::BudgetExhausted,
        };
        let (loss, theta, gn) = self.best;
        let report = ConvergenceReport {
            method: self.method.to_string(),
            final_loss: loss,
            grad_norm: gn,
            min_eigenvalue: None,
            iterations: self.iterations,
            status,
            stop_reason: reason,
            line_search_failures: self.line_search_failures,
            skipped_updates: self.skipped_updates,
            rejected_steps: self.rejected_steps,
            work: self.obj.work().since(&self.work0),
        };
        (ParamVector(theta), report)
    }
}

fn gd<O: Objective + ?Sized>(run: &mut Run<O>, lr: f64) {
    let mut theta = run.best.1.clone();
    loop {
        let (l, g) = run.obj.loss_and_gradient(&theta);
        run.observe(&theta, l, &g);
        if run.should_stop(l, &g) {
            return;
        }
        descent_update(&mut theta, &g, lr);
        run.iterations += 1;
    }
}

fn adam<O: Objective + ?Sized>(run: &mut Run<O>, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    let mut theta = run.best.1.clone();
    let n = theta.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let (mut p1, mut p2) = (1.0, 1.0);
    loop {
        let (l, g) = run.obj.loss_and_gradient(&theta);
        run.observe(&theta, l, &g);
        if run.should_stop(l, &g) {
            return;
        }
        p1 *= beta1;
        p2 *= beta2;
        for i in 0..n {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mhat = m[i] / (1.0 - p1);
            let vhat = v[i] / (1.0 - p2);
            theta[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        run.iterations += 1;
    }
}

/// Inverse-Hessian approximation of a quasi-Newton method.
pub(crate) trait QuasiNewton {
    fn direction(&self, g: &[f64]) -> Vec<f64>;
    /// Incorporates the pair `(s, y)`; returns false if it was skipped.
    fn update(&mut self, s: &[f64], y: &[f64]) -> bool;
}

/// Dense BFGS inverse; the initial identity is rescaled by `sᵀy / yᵀy` at
/// the first update.
pub(crate) struct DenseInverse {
    h: DMatrix<f64>,
    updated: bool,
}

impl DenseInverse {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            h: DMatrix::identity(n, n),
            updated: false,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl QuasiNewton for DenseInverse {
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let d = &self.h * DVector::from_column_slice(g);
        d.iter().map(|v| -v).collect()
    }

    fn update(&mut self, s: &[f64], y: &[f64]) -> bool {
        let sy = dot(s, y);
        if !(sy > 0.0) || !sy.is_finite() {
            return false;
        }
        if !self.updated {
            let yy = dot(y, y);
            self.h = DMatrix::identity(s.len(), s.len()) * (sy / yy);
            self.updated = true;
        }
        let rho = 1.0 / sy;
        let sv = DVector::from_column_slice(s);
        let hy = &self.h * DVector::from_column_slice(y);
        let yhy = dot(y, hy.as_slice());
        let coef = rho * rho * yhy + rho;
        self.h += &sv * sv.transpose() * coef;
        self.h -= (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
        true
    }
}

/// L-BFGS two-loop recursion. The initial scaling uses the oldest retained
/// pair, so the direction matches dense BFGS until the memory is full.
pub(crate) struct TwoLoop {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl TwoLoop {
    pub(crate) fn new(memory: usize) -> Self {
        Self {
            memory,
            pairs: VecDeque::with_capacity(memory),
        }
    }
}

impl QuasiNewton for TwoLoop {
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = vec![0.0; self.pairs.len()];
        for (k, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &q);
            alphas[k] = a;
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
        }
        if let Some((s, y, _)) = self.pairs.front() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for (k, (s, y, rho)) in self.pairs.iter().enumerate() {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (alphas[k] - b) * si;
            }
        }
        q.iter().map(|v| -v).collect()
    }

    fn update(&mut self, s: &[f64], y: &[f64]) -> bool {
        let sy = dot(s, y);
        if !(sy > 0.0) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s.to_vec(), y.to_vec(), 1.0 / sy));
        true
    }
}

pub(crate) struct LineSearchPoint {
    pub alpha: f64,
    pub f: f64,
    pub g: Vec<f64>,
}

/// Strong Wolfe line search with cubic interpolation in the zoom phase.
///
/// `phi(α)` returns the value, the directional derivative and the gradient
/// at `x + α·p`. `None` after `LINE_SEARCH_TRIALS` evaluations.
pub(crate) fn strong_wolfe(
    mut phi: impl FnMut(f64) -> (f64, f64, Vec<f64>),
    f0: f64,
    d0: f64,
    alpha1: f64,
) -> Option<LineSearchPoint> {
    let mut evals = 0;
    let sufficient = |a: f64, f: f64| f <= f0 + WOLFE_C1 * a * d0;
    let curvature = |d: f64| d.abs() <= -WOLFE_C2 * d0;

    let zoom = |phi: &mut dyn FnMut(f64) -> (f64, f64, Vec<f64>),
                evals: &mut usize,
                mut lo: (f64, f64, f64),
                mut hi: (f64, f64, f64)|
     -> Option<LineSearchPoint> {
        while *evals < LINE_SEARCH_TRIALS {
            let width = (hi.0 - lo.0).abs();
            if width <= 1e-16 * lo.0.abs().max(hi.0.abs()) {
                return None;
            }
            let (a_min, a_max) = (lo.0.min(hi.0), lo.0.max(hi.0));
            let a = cubic_min(lo, hi)
                .filter(|a| *a >= a_min + 0.1 * width && *a <= a_max - 0.1 * width)
                .unwrap_or(0.5 * (lo.0 + hi.0));
            let (f, d, g) = phi(a);
            *evals += 1;
            if !f.is_finite() || !sufficient(a, f) || f >= lo.1 {
                hi = (a, f, d);
            } else {
                if curvature(d) {
                    return Some(LineSearchPoint { alpha: a, f, g });
                }
                if d * (hi.0 - lo.0) >= 0.0 {
                    hi = lo;
                }
                lo = (a, f, d);
            }
        }
        None
    };

    let mut prev = (0.0, f0, d0);
    let mut a = alpha1;
    while evals < LINE_SEARCH_TRIALS {
        let (f, d, g) = phi(a);
        evals += 1;
        if !f.is_finite() || !sufficient(a, f) || (evals > 1 && f >= prev.1) {
            return zoom(&mut phi, &mut evals, prev, (a, f, d));
        }
        if curvature(d) {
            return Some(LineSearchPoint { alpha: a, f, g });
        }
        if d >= 0.0 {
            return zoom(&mut phi, &mut evals, (a, f, d), prev);
        }
        prev = (a, f, d);
        a *= 2.0;
    }
    None
}

/// Minimizer of the cubic interpolating values and slopes at two points.
fn cubic_min(a: (f64, f64, f64), b: (f64, f64, f64)) -> Option<f64> {
    if !(a.1.is_finite() && b.1.is_finite() && a.2.is_finite() && b.2.is_finite()) {
        return None;
    }
    let d1 = a.2 + b.2 - 3.0 * (a.1 - b.1) / (a.0 - b.0);
    let disc = d1 * d1 - a.2 * b.2;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.0 - a.0).signum() * disc.sqrt();
    let den = b.2 - a.2 + 2.0 * d2;
    if den == 0.0 {
        return None;
    }
    let x = b.0 - (b.0 - a.0) * (b.2 + d2 - d1) / den;
    x.is_finite().then_some(x)
}

fn quasi_newton<O: Objective + ?Sized>(run: &mut Run<O>, qn: &mut dyn QuasiNewton) {
    let eta = run.obj.flow_rate();
    let scaled = |t: &[f64]| {
        let (l, mut g) = run.obj.loss_and_gradient(t);
        g.iter_mut().for_each(|v| *v *= eta);
        (eta * l, g)
    };
    let mut theta = run.best.1.clone();
    let (mut f, mut g) = scaled(&theta);
    let mut trust_len: Option<f64> = None;
    let mut failures = 0;
    loop {
        let unscaled: Vec<f64> = g.iter().map(|v| v / eta).collect();
        run.observe(&theta, f / eta, &unscaled);
        if run.should_stop(f / eta, &unscaled) {
            return;
        }
        let mut p = qn.direction(&g);
        let mut d0 = dot(&p, &g);
        if !(d0 < 0.0) {
            p = g.iter().map(|v| -v).collect();
            d0 = -dot(&g, &g);
        }
        let pn = norm2(&p);
        let alpha1 = if trust_len.is_none() { (1.0 / pn).min(1.0) } else { 1.0 };
        let ls = strong_wolfe(
            |a| {
                let x: Vec<f64> = theta.iter().zip(&p).map(|(t, pi)| t + a * pi).collect();
                let (fa, ga) = scaled(&x);
                (fa, dot(&ga, &p), ga)
            },
            f,
            d0,
            alpha1,
        );
        run.iterations += 1;
        let (x_new, f_new, g_new) = match ls {
            Some(pt) => {
                failures = 0;
                let x: Vec<f64> = theta.iter().zip(&p).map(|(t, pi)| t + pt.alpha * pi).collect();
                (x, pt.f, pt.g)
            }
            None => {
                run.line_search_failures += 1;
                failures += 1;
                let len = trust_len.unwrap_or(alpha1 * pn);
                let gn = norm2(&g);
                let x: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - len / gn * gi).collect();
                let (fx, gx) = scaled(&x);
                if !(fx < f) {
                    if failures >= MAX_CONSECUTIVE_FAILURES {
                        run.stop = Some(StopReason::Stalled);
                        return;
                    }
                    trust_len = Some(0.5 * len);
                    continue;
                }
                (x, fx, gx)
            }
        };
        let s: Vec<f64> = x_new.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if !qn.update(&s, &y) {
            run.skipped_updates += 1;
        }
        let sn = norm2(&s);
        if sn == 0.0 {
            run.stop = Some(StopReason::Stalled);
            return;
        }
        trust_len = Some(sn);
        theta = x_new;
        f = f_new;
        g = g_new;
    }
}

fn model_value(h: &DMatrix<f64>, g: &[f64], d: &[f64]) -> f64 {
    let dv = DVector::from_column_slice(d);
    dot(g, d) + 0.5 * dv.dot(&(h * &dv))
}

/// Approximate minimizer of `gᵀd + ½dᵀHd` subject to `‖d‖ ≤ Δ`.
///
/// Dogleg when `H` is positive definite; otherwise the eigen-decomposed
/// regularized system `(H + λI)d = −g` with `λ ≥ max(0, −λ_min)` chosen so
/// that `‖d‖ = Δ`, including the hard case. The result is never worse than
/// the Cauchy point.
pub fn newton_tr_step(h: &DMatrix<f64>, g: &[f64], delta: f64) -> Vec<f64> {
    let n = g.len();
    assert!(h.nrows() == n && h.ncols() == n, "hessian shape");
    assert!(delta > 0.0, "trust radius must be positive");
    let h = crate::linalg::symmetrize(h);
    let gn = norm2(g);
    if gn == 0.0 {
        return negative_curvature_step(&h, delta).unwrap_or_else(|| vec![0.0; n]);
    }
    let candidate = match h.clone().cholesky() {
        Some(ch) => dogleg(&h, &ch.solve(&DVector::from_column_slice(g)), g, delta),
        None => regularized_step(&h, g, delta),
    };
    let cauchy = cauchy_point(&h, g, delta);
    match candidate {
        Some(d) if model_value(&h, g, &d) <= model_value(&h, g, &cauchy) => d,
        _ => cauchy,
    }
}

fn cauchy_point(h: &DMatrix<f64>, g: &[f64], delta: f64) -> Vec<f64> {
    let gn = norm2(g);
    let gv = DVector::from_column_slice(g);
    let ghg = gv.dot(&(h * &gv));
    let tau = if ghg <= 0.0 {
        1.0
    } else {
        (gn.powi(3) / (delta * ghg)).min(1.0)
    };
    g.iter().map(|v| -tau * delta / gn * v).collect()
}

fn dogleg(h: &DMatrix<f64>, hinv_g: &DVector<f64>, g: &[f64], delta: f64) -> Option<Vec<f64>> {
    let pn: Vec<f64> = hinv_g.iter().map(|v| -v).collect();
    if pn.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if norm2(&pn) <= delta {
        return Some(pn);
    }
    let gv = DVector::from_column_slice(g);
    let ghg = gv.dot(&(h * &gv));
    let gg = dot(g, g);
    let pu: Vec<f64> = g.iter().map(|v| -gg / ghg * v).collect();
    let pun = norm2(&pu);
    if pun >= delta {
        return Some(g.iter().map(|v| -delta / gg.sqrt() * v).collect());
    }
    // ‖pu + τ(pn − pu)‖ = Δ for τ ∈ [0, 1].
    let diff: Vec<f64> = pn.iter().zip(&pu).map(|(a, b)| a - b).collect();
    let a = dot(&diff, &diff);
    let b = 2.0 * dot(&pu, &diff);
    let c = pun * pun - delta * delta;
    let tau = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
    Some(pu.iter().zip(&diff).map(|(p, d)| p + tau * d).collect())
}

fn negative_curvature_step(h: &DMatrix<f64>, delta: f64) -> Option<Vec<f64>> {
    let eig = h.clone().try_symmetric_eigen(f64::EPSILON, 10_000)?;
    let (k, lmin) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    (lmin < 0.0).then(|| eig.eigenvectors.column(k).iter().map(|v| delta * v).collect())
}

fn regularized_step(h: &DMatrix<f64>, g: &[f64], delta: f64) -> Option<Vec<f64>> {
    let eig = h.clone().try_symmetric_eigen(f64::EPSILON, 10_000)?;
    let lam = eig.eigenvalues.as_slice();
    let q = &eig.eigenvectors;
    let ghat = q.transpose() * DVector::from_column_slice(g);
    let lmin = lam.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = lam.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let step_norm = |mu: f64| -> f64 {
        ghat.iter()
            .zip(lam)
            .map(|(gi, li)| {
                let den = li + mu;
                if den == 0.0 {
                    if *gi == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (gi / den).powi(2)
                }
            })
            .sum::<f64>()
            .sqrt()
    };
    let build = |mu: f64| -> Vec<f64> {
        let coef = DVector::from_iterator(
            lam.len(),
            ghat.iter().zip(lam).map(|(gi, li)| {
                let den = li + mu;
                if den == 0.0 {
                    0.0
                } else {
                    -gi / den
                }
            }),
        );
        (q * coef).as_slice().to_vec()
    };

    let mu_lo = (-lmin).max(0.0);
    if lmin > 0.0 && step_norm(0.0) <= delta {
        return Some(build(0.0));
    }
    // Hard case: components along the lowest eigenvectors vanish and the
    // remaining step is inside the region; fill up along q_min.
    let tiny = 1e-12 * scale;
    let degenerate: Vec<usize> = (0..lam.len()).filter(|&i| lam[i] - lmin <= tiny).collect();
    let orth_norm = |mu: f64| -> f64 {
        (0..lam.len())
            .filter(|i| !degenerate.contains(i))
            .map(|i| (ghat[i] / (lam[i] + mu)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let g_min = degenerate.iter().map(|&i| ghat[i].powi(2)).sum::<f64>().sqrt();
    if g_min <= 1e-12 * norm2(g) && lmin <= 0.0 {
        let r = orth_norm(mu_lo);
        if r <= delta {
            let mut coef: Vec<f64> = (0..lam.len())
                .map(|i| {
                    if degenerate.contains(&i) {
                        0.0
                    } else {
                        -ghat[i] / (lam[i] + mu_lo)
                    }
                })
                .collect();
            coef[degenerate[0]] = (delta * delta - r * r).max(0.0).sqrt();
            return Some((q * DVector::from_vec(coef)).as_slice().to_vec());
        }
    }
    // Bisection on ‖d(μ)‖ = Δ over (μ_lo, μ_hi].
    let mut lo = mu_lo;
    let mut hi = mu_lo + norm2(g) / delta + scale;
    while step_norm(hi) > delta {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if step_norm(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(build(hi))
}

fn newton_tr<O: Objective + ?Sized>(run: &mut Run<O>, delta0: f64, delta_max: f64) {
    let mut theta = run.best.1.clone();
    let (mut f, mut g) = run.obj.loss_and_gradient(&theta);
    let mut delta = delta0;
    let mut hess: Option<DMatrix<f64>> = None;
    loop {
        run.observe(&theta, f, &g);
        if run.should_stop(f, &g) {
            return;
        }
        let h = hess.get_or_insert_with(|| run.obj.hessian(&theta));
        if h.iter().any(|v| !v.is_finite()) {
            run.stop = Some(StopReason::NonFinite);
            return;
        }
        let d = newton_tr_step(h, &g, delta);
        let pred = -model_value(h, &g, &d);
        run.iterations += 1;
        let dn = norm2(&d);
        if !(pred > 0.0) || dn == 0.0 {
            run.stop = Some(StopReason::Stalled);
            return;
        }
        let x: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t + di).collect();
        let (fx, gx) = run.obj.loss_and_gradient(&x);
        let mut rho = (f - fx) / pred;
        // Below the loss floor the ratio is noise; judge by the gradient.
        let floor = run.obj.loss_floor();
        if floor > 0.0 && pred <= floor && fx <= f + floor && norm2(&gx) < norm2(&g) {
            rho = 1.0;
        }
        if !(rho >= 0.25) {
            delta = 0.25 * dn;
        } else if rho > 0.75 && dn >= 0.99 * delta {
            delta = (2.0 * delta).min(delta_max);
        }
        if rho > 1e-4 && fx.is_finite() {
            theta = x;
            f = fx;
            g = gx;
            hess = None;
        } else {
            run.rejected_steps += 1;
            if delta <= f64::EPSILON * norm2(&theta).max(1e-300) {
                run.stop = Some(StopReason::Stalled);
                return;
            }
        }
    }
}

/// Index (1-based) of the first epoch whose end loss is not below the
/// previous epoch's end loss.
pub fn classify_epochs(epoch_losses: &[f64]) -> Option<usize> {
    epoch_losses
        .windows(2)
        .position(|w| w[1] >= w[0] || w[1].is_nan())
        .map(|k| k + 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub epochs: u64,
    pub steps_per_epoch: u64,
    pub method: OptimizerMethod,
    pub grad_tol: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: 10_000,
            method: OptimizerMethod::newton(),
            grad_tol: 1e-16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub theta: ParamVector,
    pub report: ConvergenceReport,
    pub epoch_losses: Vec<f64>,
}

pub fn probably_converged_protocol(
    net: &Net,
    theta0: &[f64],
    data: &Dataset,
    loss_cfg: &LossConfig,
    epochs: u64,
    steps_per_epoch: u64,
) -> Result<ConvergenceReport> {
    net.check_params(theta0)?;
    let problem = MlpProblem::new(net, data, *loss_cfg)?;
    let cfg = ProtocolConfig {
        epochs,
        steps_per_epoch,
        ..ProtocolConfig::default()
    };
    Ok(run_protocol(&problem, theta0, &cfg)?.report)
}

/// Runs the optimizer in epochs until an epoch fails to lower the loss.
pub fn run_protocol<O: Objective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    cfg: &ProtocolConfig,
) -> Result<ProtocolOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::config("protocol.epochs", "must be at least 1"));
    }
    let work0 = obj.work();
    let budget = Budget {
        max_iters: cfg.steps_per_epoch,
        grad_tol: cfg.grad_tol,
        ..Budget::default()
    };
    let mut theta = theta0.to_vec();
    let mut epoch_losses = Vec::new();
    let mut iterations = 0;
    let mut last: Option<ConvergenceReport> = None;
    let mut converged = false;
    let mut counts = (0, 0, 0);
    for _ in 0..cfg.epochs {
        let (t, rep) = minimize_objective(obj, &theta, &cfg.method, &budget)?;
        theta = t.0;
        iterations += rep.iterations;
        counts.0 += rep.line_search_failures;
        counts.1 += rep.skipped_updates;
        counts.2 += rep.rejected_steps;
        epoch_losses.push(rep.final_loss);
        last = Some(rep);
        if classify_epochs(&epoch_losses).is_some() {
            converged = true;
            break;
        }
    }
    let last = last.expect("at least one epoch");
    let min_eig = crate::linalg::min_eigenvalue(&obj.hessian(&theta)).ok();
    let report = ConvergenceReport {
        method: last.method,
        final_loss: last.final_loss,
        grad_norm: last.grad_norm,
        min_eigenvalue: min_eig,
        iterations,
        status: if converged {
            Status::ProbablyConverged
        } else {
            Status::NotConverged
        },
        stop_reason: last.stop_reason,
        line_search_failures: counts.0,
        skipped_updates: counts.1,
        rejected_steps: counts.2,
        work: obj.work().since(&work0),
    };
    Ok(ProtocolOutcome {
        theta: ParamVector(theta),
        report,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::normal_vec;
    use crate::objective::Quadratic;
    use crate::ode::{integrate_objective, IntegratorConfig, IntegratorMethod, SaveGrid};

    fn spd(n: usize, seed: u64, cond: f64) -> DMatrix<f64> {
        let q = DMatrix::from_row_slice(n, n, &normal_vec(n * n, seed, 1.0)).qr().q();
        let eig: Vec<f64> = (0..n)
            .map(|i| cond.powf(i as f64 / (n - 1).max(1) as f64))
            .collect();
        let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
        (&a + a.transpose()) * 0.5
    }

    /// Two-dimensional Rosenbrock function.
    struct Banana;

    impl Objective for Banana {
        fn dim(&self) -> usize {
            2
        }
        fn loss(&self, t: &[f64]) -> f64 {
            (1.0 - t[0]).powi(2) + 100.0 * (t[1] - t[0] * t[0]).powi(2)
        }
        fn loss_and_gradient(&self, t: &[f64]) -> (f64, Vec<f64>) {
            let r = t[1] - t[0] * t[0];
            let g = vec![-2.0 * (1.0 - t[0]) - 400.0 * t[0] * r, 200.0 * r];
            (self.loss(t), g)
        }
        fn hessian(&self, t: &[f64]) -> DMatrix<f64> {
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    2.0 - 400.0 * (t[1] - 3.0 * t[0] * t[0]),
                    -400.0 * t[0],
                    -400.0 * t[0],
                    200.0,
                ],
            )
        }
    }

    #[test]
    fn trust_region_examples() {
        let i2 = DMatrix::identity(2, 2);
        assert_eq!(newton_tr_step(&i2, &[1.0, 0.0], 10.0), vec![-1.0, 0.0]);
        let d = newton_tr_step(&i2, &[3.0, 4.0], 1.0);
        assert!((d[0] + 0.6).abs() < 1e-15 && (d[1] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn indefinite_step_beats_cauchy_point() {
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        for (g, delta) in [([1.0, 1.0], 0.5), ([0.3, -2.0], 3.0), ([0.0, 1.0], 2.0), ([1e-3, 5.0], 1.0)] {
            let d = newton_tr_step(&h, &g, delta);
            assert!(norm2(&d) <= delta * (1.0 + 1e-12));
            let m = model_value(&h, &g, &d);
            assert!(m <= model_value(&h, &g, &cauchy_point(&h, &g, delta)) + 1e-14);
            assert!(m < 0.0);
        }
        // Saddle point with zero gradient: move along negative curvature.
        let d = newton_tr_step(&h, &[0.0, 0.0], 2.0);
        assert!((d[0].abs() - 2.0).abs() < 1e-12 && d[1].abs() < 1e-12);
    }

    #[test]
    fn hard_case_reaches_boundary() {
        let h = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0]);
        let d = newton_tr_step(&h, &[0.0, 1.0], 3.0);
        assert!((norm2(&d) - 3.0).abs() < 1e-10);
        assert!(model_value(&h, &[0.0, 1.0], &d) < model_value(&h, &[0.0, 1.0], &[0.0, -1.0]));
    }

    proptest::proptest! {
        #[test]
        fn trust_region_step_is_feasible_and_decreasing(
            entries in proptest::collection::vec(-3.0f64..3.0, 16),
            g in proptest::collection::vec(-2.0f64..2.0, 4),
            delta in 0.01f64..5.0,
        ) {
            let m = DMatrix::from_row_slice(4, 4, &entries);
            let h = (&m + m.transpose()) * 0.5;
            let d = newton_tr_step(&h, &g, delta);
            proptest::prop_assert!(norm2(&d) <= delta * (1.0 + 1e-9));
            let cp = if norm2(&g) > 0.0 { model_value(&h, &g, &cauchy_point(&h, &g, delta)) } else { 0.0 };
            proptest::prop_assert!(model_value(&h, &g, &d) <= cp + 1e-12);
        }
    }

    #[test]
    fn newton_solves_quadratics_in_few_iterations() {
        let a = spd(10, 3, 1e3);
        let b = normal_vec(10, 4, 1.0);
        let q = Quadratic::new(a, b);
        let theta0 = normal_vec(10, 5, 1.0);
        let method = OptimizerMethod::NewtonTr { delta0: 10.0, delta_max: 1e3 };
        let budget = Budget { grad_tol: 1e-12, ..Budget::default() };
        let (theta, rep) = minimize_objective(&q, &theta0, &method, &budget).unwrap();
        assert!(rep.iterations <= 3, "{rep:?}");
        assert!(norm2(&q.gradient(&theta)) <= 1e-12);
        assert_eq!(rep.status, Status::ProbablyConverged);
    }

    #[test]
    fn start_at_optimum_takes_no_steps() {
        let q = Quadratic::homogeneous(spd(5, 1, 10.0));
        for method in [
            OptimizerMethod::Gd { lr: 0.1 },
            OptimizerMethod::adam(0.1),
            OptimizerMethod::Bfgs,
            OptimizerMethod::Lbfgs { memory: 3 },
            OptimizerMethod::newton(),
        ] {
            let (theta, rep) = minimize_objective(&q, &[0.0; 5], &method, &Budget::default()).unwrap();
            assert!(rep.iterations <= 1);
            assert!(rep.grad_norm <= 1e-8);
            assert_eq!(theta.0, vec![0.0; 5]);
        }
    }

    #[test]
    fn gd_matches_euler_bit_for_bit() {
        let q = Quadratic::new(spd(6, 2, 20.0), normal_vec(6, 3, 1.0)).with_flow_rate(2.5);
        let theta0 = normal_vec(6, 7, 1.0);
        let dt = 0.004;
        let lr = 2.5 * dt;
        let steps = 37;
        let (theta, _) = minimize_objective(
            &q,
            &theta0,
            &OptimizerMethod::Gd { lr },
            &Budget { max_iters: steps, grad_tol: 0.0, ..Budget::default() },
        )
        .unwrap();
        let cfg = IntegratorConfig::new(IntegratorMethod::Euler { dt }, dt * steps as f64 * 10.0)
            .with_grid(SaveGrid::Times(vec![0.0]));
        let mut cfg = cfg;
        cfg.max_steps = steps;
        let tr = integrate_objective(&q, &theta0, &cfg).unwrap();
        // GD returns its best iterate; on this convex problem with a small
        // step that is the last one.
        assert_eq!(tr.final_state().0, theta.0);
    }

    #[test]
    fn adam_without_momentum_is_normalized_gd() {
        let q = Quadratic::new(spd(4, 2, 5.0), normal_vec(4, 3, 1.0));
        let theta0 = normal_vec(4, 1, 1.0);
        let (lr, eps) = (0.01, 1e-8);
        let method = OptimizerMethod::Adam { lr, beta1: 0.0, beta2: 0.0, eps };
        let (theta, _) = minimize_objective(
            &q,
            &theta0,
            &method,
            &Budget { max_iters: 1, grad_tol: 0.0, ..Budget::default() },
        )
        .unwrap();
        let g = q.gradient(&theta0);
        let expect: Vec<f64> = theta0
            .iter()
            .zip(&g)
            .map(|(t, gi)| t - lr * gi / (gi.abs() + eps))
            .collect();
        // Best-seen may be θ0 if the step went uphill; it does not here.
        assert!(q.loss(&expect) < q.loss(&theta0));
        assert_eq!(theta.0, expect);
    }

    #[test]
    fn bfgs_secant_condition_holds() {
        let q = Quadratic::new(spd(6, 8, 50.0), normal_vec(6, 9, 1.0));
        let mut inv = DenseInverse::new(6);
        let mut theta = normal_vec(6, 1, 1.0);
        for _ in 0..5 {
            let g = q.gradient(&theta);
            let p = inv.direction(&g);
            let (f0, d0) = (q.loss(&theta), dot(&g, &p));
            let pt = strong_wolfe(
                |a| {
                    let x: Vec<f64> = theta.iter().zip(&p).map(|(t, pi)| t + a * pi).collect();
                    let (f, gx) = q.loss_and_gradient(&x);
                    (f, dot(&gx, &p), gx)
                },
                f0,
                d0,
                1.0,
            )
            .unwrap();
            let s: Vec<f64> = p.iter().map(|v| pt.alpha * v).collect();
            let y: Vec<f64> = pt.g.iter().zip(&g).map(|(a, b)| a - b).collect();
            assert!(inv.update(&s, &y));
            let hy = &inv.h * DVector::from_column_slice(&y);
            let err: f64 = hy.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10 * s.iter().map(|v| v.abs()).fold(0.0, f64::max));
            theta = theta.iter().zip(&s).map(|(a, b)| a + b).collect();
        }
        assert!(!inv.update(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn two_loop_matches_dense_bfgs_until_memory_fills() {
        let n = 8;
        let q = Quadratic::new(spd(n, 11, 100.0), normal_vec(n, 12, 1.0));
        let mut dense = DenseInverse::new(n);
        let mut lbfgs = TwoLoop::new(n);
        let mut theta = normal_vec(n, 13, 1.0);
        for _ in 0..n {
            let g = q.gradient(&theta);
            if norm2(&g) < 1e-10 {
                break;
            }
            let pd = dense.direction(&g);
            let pl = lbfgs.direction(&g);
            let err = crate::objective::rel_linf(&pl, &pd);
            assert!(err <= 1e-8, "{err}");
            let pt = strong_wolfe(
                |a| {
                    let x: Vec<f64> = theta.iter().zip(&pd).map(|(t, pi)| t + a * pi).collect();
                    let (f, gx) = q.loss_and_gradient(&x);
                    (f, dot(&gx, &pd), gx)
                },
                q.loss(&theta),
                dot(&g, &pd),
                1.0,
            )
            .unwrap();
            let s: Vec<f64> = pd.iter().map(|v| pt.alpha * v).collect();
            let y: Vec<f64> = pt.g.iter().zip(&g).map(|(a, b)| a - b).collect();
            dense.update(&s, &y);
            lbfgs.update(&s, &y);
            theta = theta.iter().zip(&s).map(|(a, b)| a + b).collect();
        }
    }

    #[test]
    fn line_search_satisfies_strong_wolfe() {
        let f = Banana;
        for (start, alpha1) in [([-1.2, 1.0], 1.0), ([0.0, 0.0], 1e-3), ([2.0, -1.0], 10.0)] {
            let (f0, g0) = f.loss_and_gradient(&start);
            let p: Vec<f64> = g0.iter().map(|v| -v).collect();
            let d0 = dot(&g0, &p);
            let pt = strong_wolfe(
                |a| {
                    let x = [start[0] + a * p[0], start[1] + a * p[1]];
                    let (fx, gx) = f.loss_and_gradient(&x);
                    (fx, dot(&gx, &p), gx)
                },
                f0,
                d0,
                alpha1,
            )
            .expect("line search converges");
            assert!(pt.f <= f0 + WOLFE_C1 * pt.alpha * d0);
            assert!(dot(&pt.g, &p).abs() <= WOLFE_C2 * d0.abs());
        }
    }

    #[test]
    fn all_methods_minimize_the_banana() {
        for (method, iters) in [
            (OptimizerMethod::Bfgs, 200),
            (OptimizerMethod::Lbfgs { memory: 5 }, 500),
            (OptimizerMethod::newton(), 200),
        ] {
            let (theta, rep) =
                minimize_objective(&Banana, &[-1.2, 1.0], &method, &Budget::iterations(iters)).unwrap();
            assert!((theta[0] - 1.0).abs() < 1e-6 && (theta[1] - 1.0).abs() < 1e-6, "{rep:?}");
            assert_eq!(rep.status, Status::ProbablyConverged);
        }
        let (_, rep) =
            minimize_objective(&Banana, &[-1.2, 1.0], &OptimizerMethod::adam(1e-2), &Budget::iterations(50))
                .unwrap();
        assert_eq!(rep.status, Status::NotConverged);
        assert_eq!(rep.iterations, 50);
        assert!(rep.final_loss < Banana.loss(&[-1.2, 1.0]));
    }

    #[test]
    fn newton_never_accepts_uphill_steps() {
        let mut theta = vec![-1.2, 1.0];
        let mut f = Banana.loss(&theta);
        for _ in 0..50 {
            let (t, rep) = minimize_objective(
                &Banana,
                &theta,
                &OptimizerMethod::NewtonTr { delta0: 5.0, delta_max: 50.0 },
                &Budget { max_iters: 1, grad_tol: 0.0, ..Budget::default() },
            )
            .unwrap();
            assert!(rep.final_loss <= f);
            theta = t.0;
            f = rep.final_loss;
        }
    }

    #[test]
    fn convex_suite_ordering() {
        let mut finals: [Vec<f64>; 3] = Default::default();
        for seed in 0..10 {
            let q = Quadratic::homogeneous(spd(10, seed, 1e4));
            let theta0 = normal_vec(10, 100 + seed, 1.0);
            let budget = Budget::iterations(20);
            for (k, m) in [OptimizerMethod::newton(), OptimizerMethod::Bfgs, OptimizerMethod::adam(1e-2)]
                .iter()
                .enumerate()
            {
                finals[k].push(minimize_objective(&q, &theta0, m, &budget).unwrap().1.final_loss);
            }
        }
        let med = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            0.5 * (v[4] + v[5])
        };
        let (n, b, a) = (med(&mut finals[0]), med(&mut finals[1]), med(&mut finals[2]));
        assert!(n <= b && b <= a, "{n} {b} {a}");
    }

    #[test]
    fn epoch_classification() {
        assert_eq!(classify_epochs(&[1.0, 1.0]), Some(2));
        assert_eq!(classify_epochs(&[3.0, 2.0, 2.5]), Some(3));
        assert_eq!(classify_epochs(&[3.0, 2.0, 1.0, 0.5]), None);
        assert_eq!(classify_epochs(&[1.0]), None);
    }

    #[test]
    fn protocol_branches() {
        let q = Quadratic::new(spd(6, 4, 10.0), normal_vec(6, 5, 1.0));
        let out = run_protocol(&q, &normal_vec(6, 6, 1.0), &ProtocolConfig { steps_per_epoch: 50, ..ProtocolConfig::default() })
            .unwrap();
        assert_eq!(out.report.status, Status::ProbablyConverged);
        assert!(out.epoch_losses.len() <= 2);
        assert!(out.report.min_eigenvalue.unwrap() > 0.0);

        let a = spd(6, 4, 1e10);
        let q = Quadratic::homogeneous(a);
        let cfg = ProtocolConfig {
            epochs: 4,
            steps_per_epoch: 2,
            method: OptimizerMethod::NewtonTr { delta0: 1e-3, delta_max: 1e-3 },
            ..ProtocolConfig::default()
        };
        let out = run_protocol(&q, &normal_vec(6, 6, 1.0), &cfg).unwrap();
        assert_eq!(out.report.status, Status::NotConverged);
        assert!(out.epoch_losses.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn replay_reproduces_iterate() {
        let q = Quadratic::new(spd(5, 1, 100.0), normal_vec(5, 2, 1.0));
        let theta0 = normal_vec(5, 3, 1.0);
        let m = OptimizerMethod::Lbfgs { memory: 2 };
        let (a, ra) = minimize_objective(&q, &theta0, &m, &Budget::iterations(4)).unwrap();
        let replay = Budget {
            replay: Some(OptimizerCutoff { iterations: ra.iterations, stop_reason: StopReason::WallBudget }),
            ..Budget::default()
        };
        let (b, rb) = minimize_objective(&q, &theta0, &m, &replay).unwrap();
        assert_eq!(a, b);
        assert_eq!(rb.status, Status::BudgetExhausted);
    }

    #[test]
    fn invalid_methods_are_rejected() {
        let q = Quadratic::homogeneous(spd(2, 1, 2.0));
        for m in [
            OptimizerMethod::Gd { lr: 0.0 },
            OptimizerMethod::Adam { lr: 0.1, beta1: 1.0, beta2: 0.5, eps: 1e-8 },
            OptimizerMethod::Lbfgs { memory: 0 },
            OptimizerMethod::NewtonTr { delta0: 2.0, delta_max: 1.0 },
        ] {
            assert!(matches!(
                minimize_objective(&q, &[1.0, 1.0], &m, &Budget::default()),
                Err(Error::Config { .. })
            ));
        }
    }
}
