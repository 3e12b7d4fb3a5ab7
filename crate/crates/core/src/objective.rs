//! The `Objective` trait consumed by the integrators and optimizers, plus a
//! few concrete objectives and generic finite-difference oracles.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Evaluation counters for one run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalWork {
    pub n_loss: u64,
    pub n_grad: u64,
    pub n_hess: u64,
    pub cpu_seconds: f64,
}

impl EvalWork {
    /// Counters accumulated since `earlier`.
    pub fn since(&self, earlier: &EvalWork) -> EvalWork {
        EvalWork {
            n_loss: self.n_loss - earlier.n_loss,
            n_grad: self.n_grad - earlier.n_grad,
            n_hess: self.n_hess - earlier.n_hess,
            cpu_seconds: self.cpu_seconds - earlier.cpu_seconds,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Counter {
    Loss,
    Grad,
    Hess,
}

/// Thread-safe counters; each evaluation bumps exactly one of them.
#[derive(Debug, Default)]
pub struct WorkCounter {
    n_loss: AtomicU64,
    n_grad: AtomicU64,
    n_hess: AtomicU64,
    nanos: AtomicU64,
}

impl WorkCounter {
    pub(crate) fn timed<T>(&self, which: Counter, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.nanos
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        let c = match which {
            Counter::Loss => &self.n_loss,
            Counter::Grad => &self.n_grad,
            Counter::Hess => &self.n_hess,
        };
        c.fetch_add(1, Ordering::Relaxed);
        out
    }

    pub fn snapshot(&self) -> EvalWork {
        EvalWork {
            n_loss: self.n_loss.load(Ordering::Relaxed),
            n_grad: self.n_grad.load(Ordering::Relaxed),
            n_hess: self.n_hess.load(Ordering::Relaxed),
            cpu_seconds: self.nanos.load(Ordering::Relaxed) as f64 * 1e-9,
        }
    }
}

/// A twice-differentiable scalar loss over a flat parameter vector.
///
/// Implementations validate shapes at construction, so the evaluation
/// methods are infallible for vectors of length `dim()`.
pub trait Objective {
    fn dim(&self) -> usize;

    fn loss(&self, theta: &[f64]) -> f64;

    fn loss_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>);

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.loss_and_gradient(theta).1
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64>;

    /// The constant `η` of the flow `θ' = −η ∇L`.
    fn flow_rate(&self) -> f64 {
        1.0
    }

    /// Absolute round-off level of loss values; differences below it are
    /// noise.
    fn loss_floor(&self) -> f64 {
        0.0
    }

    fn work(&self) -> EvalWork {
        EvalWork::default()
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn loss(&self, theta: &[f64]) -> f64 {
        (**self).loss(theta)
    }
    fn loss_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        (**self).loss_and_gradient(theta)
    }
    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        (**self).gradient(theta)
    }
    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        (**self).hessian(theta)
    }
    fn flow_rate(&self) -> f64 {
        (**self).flow_rate()
    }
    fn loss_floor(&self) -> f64 {
        (**self).loss_floor()
    }
    fn work(&self) -> EvalWork {
        (**self).work()
    }
}

/// `L(θ) = ½ θᵀAθ − bᵀθ` with symmetric `A`.
#[derive(Debug)]
pub struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
    eta: f64,
    work: WorkCounter,
}

impl Quadratic {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>) -> Self {
        assert!(a.is_square() && a.nrows() == b.len(), "quadratic shape");
        Self {
            a,
            b: DVector::from_vec(b),
            eta: 1.0,
            work: WorkCounter::default(),
        }
    }

    pub fn homogeneous(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self::new(a, vec![0.0; n])
    }

    pub fn with_flow_rate(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn linear_term(&self) -> &[f64] {
        self.b.as_slice()
    }

    fn grad_vec(&self, theta: &[f64]) -> DVector<f64> {
        let t = DVector::from_column_slice(theta);
        &self.a * t - &self.b
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        self.work.timed(Counter::Loss, || {
            let t = DVector::from_column_slice(theta);
            0.5 * t.dot(&(&self.a * &t)) - self.b.dot(&t)
        })
    }

    fn loss_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.work.timed(Counter::Grad, || {
            let t = DVector::from_column_slice(theta);
            let at = &self.a * &t;
            let l = 0.5 * t.dot(&at) - self.b.dot(&t);
            (l, (at - &self.b).as_slice().to_vec())
        })
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.work
            .timed(Counter::Grad, || self.grad_vec(theta).as_slice().to_vec())
    }

    fn hessian(&self, _theta: &[f64]) -> DMatrix<f64> {
        self.work.timed(Counter::Hess, || self.a.clone())
    }

    fn flow_rate(&self) -> f64 {
        self.eta
    }

    fn work(&self) -> EvalWork {
        self.work.snapshot()
    }
}

/// Optimizes a subset of coordinates of `inner`, holding the rest at `base`.
pub struct Restricted<O> {
    inner: O,
    base: Vec<f64>,
    free: Vec<usize>,
}

impl<O: Objective> Restricted<O> {
    pub fn new(inner: O, base: Vec<f64>, free: Vec<usize>) -> Self {
        assert_eq!(base.len(), inner.dim(), "base vector length");
        assert!(free.iter().all(|&i| i < base.len()), "free index out of range");
        Self { inner, base, free }
    }

    pub fn expand(&self, theta: &[f64]) -> Vec<f64> {
        let mut full = self.base.clone();
        for (&i, &v) in self.free.iter().zip(theta) {
            full[i] = v;
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: Objective> Objective for Restricted<O> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        self.inner.loss(&self.expand(theta))
    }

    fn loss_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (l, g) = self.inner.loss_and_gradient(&self.expand(theta));
        (l, self.restrict(&g))
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let h = self.inner.hessian(&self.expand(theta));
        let n = self.free.len();
        DMatrix::from_fn(n, n, |i, j| h[(self.free[i], self.free[j])])
    }

    fn flow_rate(&self) -> f64 {
        self.inner.flow_rate()
    }

    fn loss_floor(&self) -> f64 {
        self.inner.loss_floor()
    }

    fn work(&self) -> EvalWork {
        self.inner.work()
    }
}

/// Central differences of `obj.loss`.
pub fn fd_gradient_of<O: Objective + ?Sized>(obj: &O, theta: &[f64], step: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + step;
            let fp = obj.loss(&t);
            t[i] = orig - step;
            let fm = obj.loss(&t);
            t[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Central differences of `grad`, symmetrized.
pub fn fd_jacobian_symmetric(
    theta: &[f64],
    step: f64,
    mut grad: impl FnMut(&[f64]) -> Vec<f64>,
) -> DMatrix<f64> {
    let n = theta.len();
    let mut h = DMatrix::zeros(n, n);
    let mut t = theta.to_vec();
    for j in 0..n {
        let orig = t[j];
        t[j] = orig + step;
        let gp = grad(&t);
        t[j] = orig - step;
        let gm = grad(&t);
        t[j] = orig;
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let ht = h.transpose();
    (h + ht) * 0.5
}

/// Relative ℓ∞ error `max|a − b| / max|b|`.
pub fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let den = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
