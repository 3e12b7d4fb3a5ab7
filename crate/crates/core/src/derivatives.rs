//! Exact loss, gradient and Hessian of the squared-error loss with barrier.
//!
//! The Hessian is accumulated sample by sample. For layer `i` let `Z_i` be
//! the Jacobian of its pre-activations with respect to all parameters and
//! `A_i = diag(σ_i') Z_i` the Jacobian of its outputs. Then
//!
//! ```text
//! H = Σ_i Z_iᵀ diag(w_i) Z_i + Σ_{i>1} (C_i + C_iᵀ)
//! w_L = 2σ_L'² + g_L σ_L''      w_i = g_i σ_i''  (hidden layers)
//! C_i[W_i(k, j), :] = δ_i(k) A_{i-1}(j, :)
//! ```
//!
//! where `g_i = ∂ℓ/∂a_i` and `δ_i = ∂ℓ/∂z_i` come from ordinary backprop.
//! `Z_i` only touches parameters of layers `≤ i`; the columns belonging to
//! layer `i` itself are sparse (one row of `W_i` plus one bias), which keeps
//! the per-sample cost quadratic in the parameter count.
//!
//! Samples are summed left to right, so every result is bit-reproducible.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg;
use crate::net::{
    barrier_gradient_into, barrier_hessian_into, barrier_value, layer_forward, Dataset,
    LossConfig, Net,
};
use crate::objective::{fd_gradient_of, fd_jacobian_symmetric, Counter, EvalWork, Objective, WorkCounter};

/// Per-sample forward/backward buffers.
struct Scratch {
    a: Vec<Vec<f64>>,
    s1: Vec<Vec<f64>>,
    s2: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(net: &Net) -> Self {
        let widths: Vec<usize> = net.layers().iter().map(|l| l.width).collect();
        let mk = || widths.iter().map(|&w| vec![0.0; w]).collect::<Vec<_>>();
        Self {
            a: mk(),
            s1: mk(),
            s2: mk(),
            g: mk(),
            delta: mk(),
        }
    }

    fn forward_full(&mut self, net: &Net, theta: &[f64], x: &[f64]) {
        for (i, (l, spec)) in net.layout().iter().zip(net.layers()).enumerate() {
            let (prev, rest) = self.a.split_at_mut(i);
            let input: &[f64] = if i == 0 { x } else { &prev[i - 1] };
            let w = &theta[l.weights..l.weights + l.out_dim * l.in_dim];
            for k in 0..l.out_dim {
                let row = &w[k * l.in_dim..(k + 1) * l.in_dim];
                let mut z = l.bias.map_or(0.0, |b| theta[b + k]);
                for (wj, xj) in row.iter().zip(input) {
                    z += wj * xj;
                }
                let (v, d1, d2) = spec.activation.eval(z);
                rest[0][k] = v;
                self.s1[i][k] = d1;
                self.s2[i][k] = d2;
            }
        }
    }

    /// Backprop of `ℓ = ‖a_L − y‖²`; fills `g` and `delta`, returns `ℓ`.
    fn backward(&mut self, net: &Net, theta: &[f64], y: &[f64]) -> f64 {
        let last = net.layout().len() - 1;
        let mut ell = 0.0;
        for k in 0..y.len() {
            let r = self.a[last][k] - y[k];
            ell += r * r;
            self.g[last][k] = 2.0 * r;
        }
        for i in (0..=last).rev() {
            for k in 0..self.delta[i].len() {
                self.delta[i][k] = self.g[i][k] * self.s1[i][k];
            }
            if i > 0 {
                let l = &net.layout()[i];
                let gprev = &mut self.g[i - 1];
                gprev.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..l.out_dim {
                    let d = self.delta[i][k];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &theta[l.weights + k * l.in_dim..l.weights + (k + 1) * l.in_dim];
                    for (gj, wj) in gprev.iter_mut().zip(row) {
                        *gj += wj * d;
                    }
                }
            }
        }
        ell
    }
}

fn data_loss_sum(net: &Net, theta: &[f64], data: &Dataset) -> f64 {
    let width = net.max_width();
    let mut cur = vec![0.0; width];
    let mut next = vec![0.0; width];
    let mut total = 0.0;
    for n in 0..data.len() {
        let x = data.input(n);
        cur[..x.len()].copy_from_slice(x);
        let mut dim = x.len();
        for (l, spec) in net.layout().iter().zip(net.layers()) {
            layer_forward(l, spec.activation, theta, &cur[..dim], &mut next[..l.out_dim]);
            dim = l.out_dim;
            std::mem::swap(&mut cur, &mut next);
        }
        for (o, y) in cur[..dim].iter().zip(data.target(n)) {
            let r = o - y;
            total += r * r;
        }
    }
    total
}

/// Adds the summed data-term gradient into `grad`, returns the summed loss.
fn data_grad_sum(net: &Net, theta: &[f64], data: &Dataset, grad: &mut [f64]) -> f64 {
    let mut s = Scratch::new(net);
    let mut total = 0.0;
    for n in 0..data.len() {
        let x = data.input(n);
        s.forward_full(net, theta, x);
        total += s.backward(net, theta, data.target(n));
        for (i, l) in net.layout().iter().enumerate() {
            let input: &[f64] = if i == 0 { x } else { &s.a[i - 1] };
            for k in 0..l.out_dim {
                let d = s.delta[i][k];
                let row = &mut grad[l.weights + k * l.in_dim..l.weights + (k + 1) * l.in_dim];
                for (gw, xj) in row.iter_mut().zip(input) {
                    *gw += d * xj;
                }
                if let Some(b) = l.bias {
                    grad[b + k] += d;
                }
            }
        }
    }
    total
}

/// Jacobian buffers for the second-order pass.
struct Jacobians {
    /// `zp[i]`: `D_i x start_i`, pre-activation Jacobian over earlier layers.
    zp: Vec<Vec<f64>>,
    /// `a[i]`: `D_i x end_i`, output Jacobian over layers `≤ i`.
    a: Vec<Vec<f64>>,
}

impl Jacobians {
    fn new(net: &Net) -> Self {
        let zp = net
            .layout()
            .iter()
            .map(|l| vec![0.0; l.out_dim * l.start()])
            .collect();
        let a = net
            .layout()
            .iter()
            .map(|l| vec![0.0; l.out_dim * l.end])
            .collect();
        Self { zp, a }
    }
}

/// Adds the lower triangle of the summed data-term Hessian into `h`
/// (row-major `P x P`).
fn data_hessian_sum(net: &Net, theta: &[f64], data: &Dataset, h: &mut [f64]) {
    let p = net.param_count();
    let nl = net.layout().len();
    let mut s = Scratch::new(net);
    let mut jac = Jacobians::new(net);
    let mut own: Vec<(usize, f64)> = Vec::with_capacity(net.max_width() + 1);
    for n in 0..data.len() {
        let x = data.input(n);
        s.forward_full(net, theta, x);
        s.backward(net, theta, data.target(n));

        for i in 0..nl {
            let l = net.layout()[i];
            let start = l.start();
            let input: &[f64] = if i == 0 { x } else { &s.a[i - 1] };

            if i > 0 {
                let prev_end = net.layout()[i - 1].end;
                debug_assert_eq!(prev_end, start);
                let aprev = &jac.a[i - 1];
                let zp = &mut jac.zp[i];
                zp.iter_mut().for_each(|v| *v = 0.0);
                for m in 0..l.out_dim {
                    let zrow = &mut zp[m * start..(m + 1) * start];
                    for k in 0..l.in_dim {
                        let w = theta[l.weight_index(m, k)];
                        if w == 0.0 {
                            continue;
                        }
                        let arow = &aprev[k * start..(k + 1) * start];
                        for (z, av) in zrow.iter_mut().zip(arow) {
                            *z += w * av;
                        }
                    }
                }
            }

            // Output Jacobian A_i, needed by the next layer.
            if i + 1 < nl {
                let ai = &mut jac.a[i];
                let end = l.end;
                ai.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..l.out_dim {
                    let s1 = s.s1[i][k];
                    let row = &mut ai[k * end..(k + 1) * end];
                    let zrow = &jac.zp[i][k * start..(k + 1) * start];
                    for (r, z) in row[..start].iter_mut().zip(zrow) {
                        *r = s1 * z;
                    }
                    for j in 0..l.in_dim {
                        row[l.weight_index(k, j)] = s1 * input[j];
                    }
                    if let Some(b) = l.bias {
                        row[b + k] = s1;
                    }
                }
            }

            // Curvature of the activation (and of the loss at the output).
            let is_last = i + 1 == nl;
            for k in 0..l.out_dim {
                let mut w = s.g[i][k] * s.s2[i][k];
                if is_last {
                    w += 2.0 * s.s1[i][k] * s.s1[i][k];
                }
                if w == 0.0 {
                    continue;
                }
                own.clear();
                for j in 0..l.in_dim {
                    own.push((l.weight_index(k, j), input[j]));
                }
                if let Some(b) = l.bias {
                    own.push((b + k, 1.0));
                }
                let zrow = &jac.zp[i][k * start..(k + 1) * start];
                for r in 0..start {
                    let v = w * zrow[r];
                    if v == 0.0 {
                        continue;
                    }
                    let hrow = &mut h[r * p..r * p + r + 1];
                    for (hv, z) in hrow.iter_mut().zip(&zrow[..=r]) {
                        *hv += v * z;
                    }
                }
                for (oi, &(r, ov)) in own.iter().enumerate() {
                    let v = w * ov;
                    if v == 0.0 {
                        continue;
                    }
                    let hrow = &mut h[r * p..r * p + start];
                    for (hv, z) in hrow.iter_mut().zip(zrow) {
                        *hv += v * z;
                    }
                    for &(c, cv) in &own[..=oi] {
                        h[r * p + c] += v * cv;
                    }
                }
            }

            // Cross terms between W_i and everything feeding layer i.
            if i > 0 {
                let aprev = &jac.a[i - 1];
                for k in 0..l.out_dim {
                    let d = s.delta[i][k];
                    if d == 0.0 {
                        continue;
                    }
                    for j in 0..l.in_dim {
                        let r = l.weight_index(k, j);
                        let arow = &aprev[j * start..(j + 1) * start];
                        let hrow = &mut h[r * p..r * p + start];
                        for (hv, av) in hrow.iter_mut().zip(arow) {
                            *hv += d * av;
                        }
                    }
                }
            }
        }
    }
}

fn check(net: &Net, theta: &[f64], data: &Dataset, cfg: &LossConfig) -> Result<()> {
    net.check_params(theta)?;
    net.check_data(data)?;
    cfg.validate()
}

fn loss_raw(net: &Net, theta: &[f64], data: &Dataset, cfg: &LossConfig) -> f64 {
    cfg.data_scale(data.len()) * data_loss_sum(net, theta, data) + barrier_value(theta, cfg.barrier_c)
}

fn loss_grad_raw(net: &Net, theta: &[f64], data: &Dataset, cfg: &LossConfig) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; theta.len()];
    let sum = data_grad_sum(net, theta, data, &mut g);
    let scale = cfg.data_scale(data.len());
    if scale != 1.0 {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    barrier_gradient_into(theta, cfg.barrier_c, 1.0, &mut g);
    (scale * sum + barrier_value(theta, cfg.barrier_c), g)
}

fn hessian_raw(net: &Net, theta: &[f64], data: &Dataset, cfg: &LossConfig) -> DMatrix<f64> {
    let p = theta.len();
    let mut buf = vec![0.0; p * p];
    data_hessian_sum(net, theta, data, &mut buf);
    let scale = cfg.data_scale(data.len());
    // buf is row-major lower; a column-major matrix read from it is upper.
    let mut h = DMatrix::from_fn(p, p, |i, j| {
        if i >= j {
            scale * buf[i * p + j]
        } else {
            scale * buf[j * p + i]
        }
    });
    barrier_hessian_into(theta, cfg.barrier_c, |i, j, v| h[(i, j)] += v);
    h
}

/// `Σ‖f_θ(x_i) − y_i‖²` (divided by `N` for mean reduction) plus the barrier.
pub fn loss(net: &Net, theta: &[f64], data: &Dataset, cfg: &LossConfig) -> Result<f64> {
    check(net, theta, data, cfg)?;
    Ok(loss_raw(net, theta, data, cfg))
}

pub fn gradient(net: &Net, theta: &[f64], data: &Dataset, cfg: &LossConfig) -> Result<Vec<f64>> {
    check(net, theta, data, cfg)?;
    Ok(loss_grad_raw(net, theta, data, cfg).1)
}

pub fn loss_and_gradient(
    net: &Net,
    theta: &[f64],
    data: &Dataset,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    check(net, theta, data, cfg)?;
    Ok(loss_grad_raw(net, theta, data, cfg))
}

/// Exact Hessian of [`loss`]; symmetric by construction.
pub fn hessian(net: &Net, theta: &[f64], data: &Dataset, cfg: &LossConfig) -> Result<DMatrix<f64>> {
    check(net, theta, data, cfg)?;
    Ok(hessian_raw(net, theta, data, cfg))
}

/// Ascending eigenvalues of the Hessian.
pub fn hessian_spectrum(
    net: &Net,
    theta: &[f64],
    data: &Dataset,
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    linalg::symmetric_eigenvalues(&hessian(net, theta, data, cfg)?)
}

/// Central-difference gradient of [`loss`]; a test oracle.
pub fn fd_gradient(
    net: &Net,
    theta: &[f64],
    data: &Dataset,
    cfg: &LossConfig,
    step: f64,
) -> Result<Vec<f64>> {
    check(net, theta, data, cfg)?;
    let problem = MlpProblem::new(net, data, *cfg)?;
    Ok(fd_gradient_of(&problem, theta, step))
}

/// Central differences of [`gradient`], symmetrized; a test oracle.
pub fn fd_hessian(
    net: &Net,
    theta: &[f64],
    data: &Dataset,
    cfg: &LossConfig,
    step: f64,
) -> Result<DMatrix<f64>> {
    check(net, theta, data, cfg)?;
    Ok(fd_jacobian_symmetric(theta, step, |t| {
        loss_grad_raw(net, t, data, cfg).1
    }))
}

/// An MLP, a dataset and a loss configuration bundled as an [`Objective`].
pub struct MlpProblem<'a> {
    net: &'a Net,
    data: &'a Dataset,
    cfg: LossConfig,
    work: WorkCounter,
}

impl<'a> MlpProblem<'a> {
    pub fn new(net: &'a Net, data: &'a Dataset, cfg: LossConfig) -> Result<Self> {
        net.check_data(data)?;
        cfg.validate()?;
        Ok(Self {
            net,
            data,
            cfg,
            work: WorkCounter::default(),
        })
    }

    pub fn net(&self) -> &Net {
        self.net
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    /// Mean squared error of the data term alone.
    pub fn mse(&self, theta: &[f64]) -> f64 {
        data_loss_sum(self.net, theta, self.data)
            / (self.data.len() * self.data.output_dim()) as f64
    }
}

impl Objective for MlpProblem<'_> {
    fn dim(&self) -> usize {
        self.net.param_count()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        self.work
            .timed(Counter::Loss, || loss_raw(self.net, theta, self.data, &self.cfg))
    }

    fn loss_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.work
            .timed(Counter::Grad, || loss_grad_raw(self.net, theta, self.data, &self.cfg))
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        self.work
            .timed(Counter::Hess, || hessian_raw(self.net, theta, self.data, &self.cfg))
    }

    fn flow_rate(&self) -> f64 {
        self.cfg.eta
    }

    fn work(&self) -> EvalWork {
        self.work.snapshot()
    }
}
