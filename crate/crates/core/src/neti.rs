//! Population loss of bias-free two-layer teacher-student networks under
//! standard Gaussian inputs.
//!
//! Both networks compute `f(x) = Σ_k a_k σ(w_k · x)`. The loss
//! `½ E[(f_student − f_teacher)²]` expands into pairwise kernels
//! `J(u, v) = E[σ(u·x) σ(v·x)]`, which depend only on `‖u‖²`, `‖v‖²` and
//! `u·v`. Closed forms are used for `identity`, `erf_scaled` and `relu`;
//! every other activation is only available through [`mc_oracle`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::net::{LayerSpec, Net, ParamVector};
use crate::objective::{fd_jacobian_symmetric, Counter, EvalWork, Objective, Restricted, WorkCounter};
use crate::ode::{integrate_objective, IntegratorConfig};
use crate::optim::{minimize_objective, Budget, ConvergenceReport, OptimizerMethod};

const HESSIAN_FD_STEP: f64 = 1e-5;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Student {
    /// First-layer rows, `K × D`.
    pub w: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    #[serde(default = "default_true")]
    pub trainable_output: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Teacher {
    pub v: Vec<Vec<f64>>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetISpec {
    pub input_dim: usize,
    pub activation: ActivationKind,
    pub student: Student,
    pub teacher: Teacher,
}

impl NetISpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim;
        if d == 0 {
            return Err(Error::config("neti.input_dim", "must be positive"));
        }
        let rows_ok = |rows: &[Vec<f64>]| rows.iter().all(|r| r.len() == d);
        if self.student.w.is_empty() || !rows_ok(&self.student.w) {
            return Err(Error::Shape(format!("student rows must be non-empty with length {d}")));
        }
        if self.student.a.len() != self.student.w.len() {
            return Err(Error::Shape("student output weights must match its hidden units".into()));
        }
        if self.teacher.v.is_empty() || !rows_ok(&self.teacher.v) {
            return Err(Error::Shape(format!("teacher rows must be non-empty with length {d}")));
        }
        if self.teacher.a.len() != self.teacher.v.len() {
            return Err(Error::Shape("teacher output weights must match its hidden units".into()));
        }
        let finite = |rows: &[Vec<f64>], a: &[f64]| {
            rows.iter().flatten().chain(a).all(|v| v.is_finite())
        };
        if !finite(&self.student.w, &self.student.a) || !finite(&self.teacher.v, &self.teacher.a) {
            return Err(Error::Numerical("non-finite weights in NetI spec".into()));
        }
        Ok(())
    }

    pub fn student_units(&self) -> usize {
        self.student.w.len()
    }

    pub fn teacher_units(&self) -> usize {
        self.teacher.v.len()
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> usize {
        let k = self.student_units();
        k * self.input_dim + if self.student.trainable_output { k } else { 0 }
    }

    /// Trainable parameters: `W` row-major, then `a` when trainable.
    pub fn params(&self) -> ParamVector {
        let mut p: Vec<f64> = self.student.w.iter().flatten().copied().collect();
        if self.student.trainable_output {
            p.extend_from_slice(&self.student.a);
        }
        ParamVector(p)
    }

    pub fn with_params(&self, theta: &[f64]) -> Result<NetISpec> {
        if theta.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "NetI expects {} parameters, got {}",
                self.param_count(),
                theta.len()
            )));
        }
        let d = self.input_dim;
        let k = self.student_units();
        let mut out = self.clone();
        for (i, row) in out.student.w.iter_mut().enumerate() {
            row.copy_from_slice(&theta[i * d..(i + 1) * d]);
        }
        if self.student.trainable_output {
            out.student.a.copy_from_slice(&theta[k * d..]);
        }
        Ok(out)
    }

    /// The student as a finite-data [`Net`] whose canonical packing is
    /// `W` row-major followed by `a`.
    pub fn student_net(&self) -> Net {
        two_layer(self.input_dim, self.student_units(), self.activation)
    }

    pub fn teacher_net(&self) -> (Net, ParamVector) {
        let net = two_layer(self.input_dim, self.teacher_units(), self.activation);
        let mut p: Vec<f64> = self.teacher.v.iter().flatten().copied().collect();
        p.extend_from_slice(&self.teacher.a);
        (net, ParamVector(p))
    }

    /// Student parameters in the packing of [`NetISpec::student_net`].
    pub fn student_net_params(&self) -> ParamVector {
        let mut p: Vec<f64> = self.student.w.iter().flatten().copied().collect();
        p.extend_from_slice(&self.student.a);
        ParamVector(p)
    }

    /// A random spec: rows and output weights i.i.d. standard normal.
    pub fn random(
        input_dim: usize,
        student_units: usize,
        teacher_units: usize,
        activation: ActivationKind,
        seed: u64,
    ) -> NetISpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let rows = |flat: Vec<f64>| flat.chunks(input_dim).map(|r| r.to_vec()).collect::<Vec<_>>();
        let w = rows(draw(student_units * input_dim));
        let a = draw(student_units);
        let v = rows(draw(teacher_units * input_dim));
        let at = draw(teacher_units);
        NetISpec {
            input_dim,
            activation,
            student: Student { w, a, trainable_output: true },
            teacher: Teacher { v, a: at },
        }
    }
}

fn two_layer(d: usize, k: usize, act: ActivationKind) -> Net {
    Net::new(
        d,
        vec![
            LayerSpec::new(k, act, false),
            LayerSpec::new(1, ActivationKind::Identity, false),
        ],
    )
    .expect("positive widths")
}

/// Kernel value and its partials in `q_u = ‖u‖²`, `q_v = ‖v‖²`, `r = u·v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: f64,
    pub d_qu: f64,
    pub d_qv: f64,
    pub d_r: f64,
}

pub fn has_closed_form(act: ActivationKind) -> bool {
    matches!(
        act,
        ActivationKind::Identity | ActivationKind::ErfScaled | ActivationKind::Relu
    )
}

fn require_closed_form(act: ActivationKind) -> Result<()> {
    if has_closed_form(act) {
        Ok(())
    } else {
        Err(Error::UnsupportedActivation(format!(
            "no closed-form Gaussian kernel for `{act}`; estimate the loss with mc_oracle"
        )))
    }
}

/// `E[σ(u·x) σ(v·x)]` for `x ~ N(0, I)` as a function of `(q_u, q_v, r)`.
pub fn kernel(act: ActivationKind, qu: f64, qv: f64, r: f64) -> Result<KernelValue> {
    require_closed_form(act)?;
    Ok(kernel_unchecked(act, qu, qv, r))
}

fn kernel_unchecked(act: ActivationKind, qu: f64, qv: f64, r: f64) -> KernelValue {
    kernel_with_gram(act, qu, qv, r, qu * qv - r * r)
}

/// Kernel of two weight vectors. `q_u q_v − r²` is taken from the Lagrange
/// identity, which stays accurate when `u ≈ v`.
fn kernel_vec(act: ActivationKind, u: &[f64], v: &[f64]) -> KernelValue {
    let (qu, qv, r) = (dot(u, u), dot(v, v), dot(u, v));
    if act != ActivationKind::Relu {
        return kernel_with_gram(act, qu, qv, r, 0.0);
    }
    let mut gram = 0.0;
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            let m = u[i] * v[j] - u[j] * v[i];
            gram += m * m;
        }
    }
    kernel_with_gram(act, qu, qv, r, gram)
}

fn kernel_with_gram(act: ActivationKind, qu: f64, qv: f64, r: f64, gram: f64) -> KernelValue {
    match act {
        ActivationKind::Identity => KernelValue { value: r, d_qu: 0.0, d_qv: 0.0, d_r: 1.0 },
        ActivationKind::ErfScaled => {
            let root = ((1.0 + qu) * (1.0 + qv)).sqrt();
            let s = r / root;
            let ds = (2.0 / PI) / (1.0 - s * s).sqrt();
            KernelValue {
                value: (2.0 / PI) * s.asin(),
                d_qu: -ds * 0.5 * s / (1.0 + qu),
                d_qv: -ds * 0.5 * s / (1.0 + qv),
                d_r: ds / root,
            }
        }
        ActivationKind::Relu => {
            let nn = qu * qv;
            if nn <= 0.0 {
                return KernelValue { value: 0.0, d_qu: 0.0, d_qv: 0.0, d_r: 0.0 };
            }
            let s = gram.max(0.0).sqrt();
            let phi = s.atan2(r);
            KernelValue {
                value: (s + r * (PI - phi)) / (2.0 * PI),
                d_qu: s / (4.0 * PI * qu),
                d_qv: s / (4.0 * PI * qv),
                d_r: (PI - phi) / (2.0 * PI),
            }
        }
        _ => unreachable!("checked by require_closed_form"),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ_{i,j} c_i d_j J(x_i, y_j)`.
fn kernel_sum(act: ActivationKind, xs: &[Vec<f64>], c: &[f64], ys: &[Vec<f64>], d: &[f64]) -> f64 {
    let mut s = 0.0;
    for (xi, ci) in xs.iter().zip(c) {
        for (yj, dj) in ys.iter().zip(d) {
            s += ci * dj * kernel_vec(act, xi, yj).value;
        }
    }
    s
}

/// `½ E[(f_student(x) − f_teacher(x))²]`, `x ~ N(0, I_D)`.
///
/// Computed as `½(S − 2X + T)` with student-student, cross and
/// teacher-teacher kernel sums, so the result is exactly zero when the
/// student equals the teacher. Round-off near a zero-loss solution leaves
/// values of order `1e-16` that may be slightly negative.
pub fn neti_loss(spec: &NetISpec) -> Result<f64> {
    spec.validate()?;
    require_closed_form(spec.activation)?;
    Ok(loss_unchecked(spec))
}

fn loss_unchecked(spec: &NetISpec) -> f64 {
    let (w, a) = (&spec.student.w, &spec.student.a);
    let (v, at) = (&spec.teacher.v, &spec.teacher.a);
    let act = spec.activation;
    let s = kernel_sum(act, w, a, w, a);
    let x = kernel_sum(act, w, a, v, at);
    let t = kernel_sum(act, v, at, v, at);
    0.5 * (s - 2.0 * x + t)
}

/// Exact gradient over the trainable parameters (see [`NetISpec::params`]).
pub fn neti_gradient(spec: &NetISpec) -> Result<Vec<f64>> {
    spec.validate()?;
    require_closed_form(spec.activation)?;
    Ok(gradient_unchecked(spec))
}

fn gradient_unchecked(spec: &NetISpec) -> Vec<f64> {
    let d = spec.input_dim;
    let act = spec.activation;
    let (w, a) = (&spec.student.w, &spec.student.a);
    let (v, at) = (&spec.teacher.v, &spec.teacher.a);
    let k = w.len();
    let mut grad = vec![0.0; spec.param_count()];
    // ∂J(u, z)/∂u = 2 F_qu u + F_r z, accumulated per student unit.
    let partial = |u: &[f64], zs: &[Vec<f64>], cs: &[f64], gw: &mut [f64]| -> f64 {
        let mut ga = 0.0;
        for (z, c) in zs.iter().zip(cs) {
            let kv = kernel_vec(act, u, z);
            for i in 0..d {
                gw[i] += c * (2.0 * kv.d_qu * u[i] + kv.d_r * z[i]);
            }
            ga += c * kv.value;
        }
        ga
    };
    for kk in 0..k {
        let mut gs = vec![0.0; d];
        let mut gt = vec![0.0; d];
        let sa = partial(&w[kk], w, a, &mut gs);
        let ta = partial(&w[kk], v, at, &mut gt);
        for i in 0..d {
            grad[kk * d + i] = a[kk] * (gs[i] - gt[i]);
        }
        if spec.student.trainable_output {
            grad[k * d + kk] = sa - ta;
        }
    }
    grad
}

/// Central differences of [`neti_gradient`] with step `1e-5`, symmetrized.
pub fn neti_hessian(spec: &NetISpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    require_closed_form(spec.activation)?;
    Ok(hessian_unchecked(spec))
}

fn hessian_unchecked(spec: &NetISpec) -> DMatrix<f64> {
    let mut scratch = spec.clone();
    fd_jacobian_symmetric(&spec.params(), HESSIAN_FD_STEP, |t| {
        write_params(&mut scratch, t);
        gradient_unchecked(&scratch)
    })
}

fn write_params(spec: &mut NetISpec, theta: &[f64]) {
    let d = spec.input_dim;
    let k = spec.student.w.len();
    for (i, row) in spec.student.w.iter_mut().enumerate() {
        row.copy_from_slice(&theta[i * d..(i + 1) * d]);
    }
    if spec.student.trainable_output {
        spec.student.a.copy_from_slice(&theta[k * d..]);
    }
}

/// Monte-Carlo estimate of the population loss and its standard error.
///
/// Works for every activation. Deterministic for a fixed seed.
pub fn mc_oracle(spec: &NetISpec, n_samples: u64, seed: u64) -> Result<(f64, f64)> {
    spec.validate()?;
    if n_samples == 0 {
        return Err(Error::config("mc.n_samples", "must be at least 1"));
    }
    let d = spec.input_dim;
    let act = spec.activation;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; d];
    let eval = |rows: &[Vec<f64>], a: &[f64], x: &[f64]| -> f64 {
        rows.iter().zip(a).map(|(r, ai)| ai * act.value(dot(r, x))).sum()
    };
    let (mut mean, mut m2) = (0.0, 0.0);
    for n in 1..=n_samples {
        for xi in x.iter_mut() {
            *xi = StandardNormal.sample(&mut rng);
        }
        let r = eval(&spec.student.w, &spec.student.a, &x) - eval(&spec.teacher.v, &spec.teacher.a, &x);
        let val = 0.5 * r * r;
        let delta = val - mean;
        mean += delta / n as f64;
        m2 += delta * (val - mean);
    }
    let se = if n_samples > 1 {
        (m2 / (n_samples - 1) as f64 / n_samples as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// The population loss over the trainable student parameters.
pub struct NetIObjective {
    spec: NetISpec,
    eta: f64,
    floor: f64,
    work: WorkCounter,
}

impl NetIObjective {
    pub fn new(spec: NetISpec) -> Result<Self> {
        spec.validate()?;
        require_closed_form(spec.activation)?;
        let floor = loss_floor_estimate(&spec);
        Ok(Self { spec, eta: 1.0, floor, work: WorkCounter::default() })
    }

    pub fn with_flow_rate(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn spec(&self) -> &NetISpec {
        &self.spec
    }

    fn at(&self, theta: &[f64]) -> NetISpec {
        let mut s = self.spec.clone();
        write_params(&mut s, theta);
        s
    }
}

impl Objective for NetIObjective {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        self.work.timed(Counter::Loss, || loss_unchecked(&self.at(theta)))
    }

    fn loss_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.work.timed(Counter::Grad, || {
            let s = self.at(theta);
            (loss_unchecked(&s), gradient_unchecked(&s))
        })
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        self.work.timed(Counter::Hess, || hessian_unchecked(&self.at(theta)))
    }

    fn flow_rate(&self) -> f64 {
        self.eta
    }

    fn loss_floor(&self) -> f64 {
        self.floor
    }

    fn work(&self) -> EvalWork {
        self.work.snapshot()
    }
}

/// Round-off level of the expanded kernel sum, `16ε (Σ_i |c_i| √J(z_i, z_i))²`
/// over student and teacher units; bounds every `|c_i c_j J(z_i, z_j)|`.
fn loss_floor_estimate(spec: &NetISpec) -> f64 {
    let act = spec.activation;
    let units = spec
        .student
        .w
        .iter()
        .zip(&spec.student.a)
        .chain(spec.teacher.v.iter().zip(&spec.teacher.a));
    let s: f64 = units
        .map(|(z, c)| {
            let q = dot(z, z);
            c.abs() * kernel_unchecked(act, q, q, q).value.max(0.0).sqrt()
        })
        .sum();
    16.0 * f64::EPSILON * s * s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetITrainConfig {
    /// Optional gradient-flow warm start before the optimizer.
    pub warm_start: Option<IntegratorConfig>,
    pub method: OptimizerMethod,
    pub budget: Budget,
}

impl Default for NetITrainConfig {
    fn default() -> Self {
        Self {
            warm_start: None,
            method: OptimizerMethod::newton(),
            budget: Budget { max_iters: 500, grad_tol: 1e-14, ..Budget::default() },
        }
    }
}

/// Trains the student on the population loss; the report carries the
/// minimum Hessian eigenvalue at the result.
pub fn neti_train(spec: &NetISpec, cfg: &NetITrainConfig) -> Result<(NetISpec, ConvergenceReport)> {
    let obj = NetIObjective::new(spec.clone())?;
    let mut theta = spec.params().0;
    if let Some(ic) = &cfg.warm_start {
        let tr = integrate_objective(&obj, &theta, ic)?;
        theta = tr.final_state().0.clone();
    }
    let (best, mut report) = minimize_objective(&obj, &theta, &cfg.method, &cfg.budget)?;
    report.min_eigenvalue = crate::linalg::min_eigenvalue(&obj.hessian(&best)).ok();
    report.work = obj.work();
    Ok((spec.with_params(&best)?, report))
}

/// Matches each reference row to a distinct candidate row greedily by
/// distance; with `allow_sign` a row may also match a negated candidate.
/// Returns `(candidate index, sign)` per reference row.
pub fn align_rows(reference: &[Vec<f64>], candidate: &[Vec<f64>], allow_sign: bool) -> Vec<(usize, f64)> {
    assert_eq!(reference.len(), candidate.len(), "alignment needs equal unit counts");
    let sq = |a: &[f64], b: &[f64], s: f64| a.iter().zip(b).map(|(x, y)| (x - s * y).powi(2)).sum::<f64>();
    let mut pairs = Vec::new();
    for (i, r) in reference.iter().enumerate() {
        for (j, c) in candidate.iter().enumerate() {
            pairs.push((sq(r, c, 1.0), i, j, 1.0));
            if allow_sign {
                pairs.push((sq(r, c, -1.0), i, j, -1.0));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let n = reference.len();
    let mut out = vec![None; n];
    let mut used = vec![false; n];
    for (_, i, j, s) in pairs {
        if out[i].is_none() && !used[j] {
            out[i] = Some((j, s));
            used[j] = true;
        }
    }
    out.into_iter().map(|o| o.expect("complete matching")).collect()
}

/// Squared parameter distance between two students after resolving
/// permutations (and, for odd activations with trainable output weights,
/// sign flips) of the hidden units. Output weights count when trainable.
pub fn aligned_sq_distance(reference: &Student, candidate: &Student, act: ActivationKind) -> f64 {
    let trainable = reference.trainable_output && candidate.trainable_output;
    let matching = align_rows(&reference.w, &candidate.w, trainable && act.is_odd());
    let mut d = 0.0;
    for (i, &(j, s)) in matching.iter().enumerate() {
        d += reference.w[i].iter().zip(&candidate.w[j]).map(|(x, y)| (x - s * y).powi(2)).sum::<f64>();
        if trainable {
            d += (reference.a[i] - s * candidate.a[j]).powi(2);
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneOverNConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub activation: ActivationKind,
    pub sample_sizes: Vec<usize>,
    pub seeds: u64,
    pub teacher_seed: u64,
    pub newton_iters: u64,
}

impl Default for OneOverNConfig {
    fn default() -> Self {
        Self {
            input_dim: 4,
            hidden: 2,
            activation: ActivationKind::ErfScaled,
            sample_sizes: vec![1_000, 10_000, 100_000],
            seeds: 10,
            teacher_seed: 0,
            newton_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneOverNRow {
    pub seed: u64,
    pub n: usize,
    pub sq_distance: f64,
    pub finite_loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneOverNResult {
    /// Distances are squared parameter distances after alignment.
    pub metric: String,
    pub spec: NetISpec,
    pub infinite_report: ConvergenceReport,
    pub rows: Vec<OneOverNRow>,
    pub slopes: Vec<f64>,
    pub median_slope: f64,
}

/// A fixed teacher with random output weights and a soft-committee student
/// (output weights fixed at one), so the population minimum has non-zero
/// loss and finite-data minima genuinely move with `N`.
pub fn one_over_n_spec(cfg: &OneOverNConfig) -> NetISpec {
    let base = NetISpec::random(cfg.input_dim, cfg.hidden, cfg.hidden, cfg.activation, cfg.teacher_seed);
    let v = base.teacher.v.clone();
    let a_teacher: Vec<f64> = base.teacher.a.iter().map(|z| 1.0 + 0.5 * z).collect();
    NetISpec {
        input_dim: cfg.input_dim,
        activation: cfg.activation,
        student: Student { w: v.clone(), a: vec![1.0; cfg.hidden], trainable_output: false },
        teacher: Teacher { v, a: a_teacher },
    }
}

fn data_seed(seed: u64, n: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (n as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Distance of finite-data minima to the infinite-data minimum versus `N`.
///
/// The infinite-data student is trained from the teacher's rows; each
/// finite-data problem is then minimized with Newton from that solution.
pub fn one_over_n_experiment(cfg: &OneOverNConfig) -> Result<OneOverNResult> {
    if cfg.sample_sizes.len() < 2 {
        return Err(Error::config("one_over_n.sample_sizes", "needs at least two sizes"));
    }
    require_closed_form(cfg.activation)?;
    let spec = one_over_n_spec(cfg);
    let (inf_spec, infinite_report) = neti_train(&spec, &NetITrainConfig::default())?;
    let (teacher_net, teacher_theta) = inf_spec.teacher_net();
    let student_net = inf_spec.student_net();
    let base = inf_spec.student_net_params().0;
    let free: Vec<usize> = (0..cfg.hidden * cfg.input_dim).collect();
    let method = OptimizerMethod::newton();
    let budget = Budget { max_iters: cfg.newton_iters, grad_tol: 1e-13, ..Budget::default() };

    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for seed in 0..cfg.seeds {
        let mut dists = Vec::new();
        for &n in &cfg.sample_sizes {
            let data = crate::synthetic::teacher_dataset(&teacher_net, &teacher_theta, n, data_seed(seed, n))?;
            let problem = crate::derivatives::MlpProblem::new(&student_net, &data, Default::default())?;
            let restricted = Restricted::new(&problem, base.clone(), free.clone());
            let start = restricted.restrict(&base);
            let (theta, report) = minimize_objective(&restricted, &start, &method, &budget)?;
            let found = inf_spec.with_params(&theta)?;
            let dist = aligned_sq_distance(&inf_spec.student, &found.student, cfg.activation);
            dists.push(dist);
            rows.push(OneOverNRow {
                seed,
                n,
                sq_distance: dist,
                finite_loss: report.final_loss,
                grad_norm: report.grad_norm,
            });
        }
        let ns: Vec<f64> = cfg.sample_sizes.iter().map(|&n| n as f64).collect();
        slopes.push(log_log_slope(&ns, &dists));
    }
    let mut sorted = slopes.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median_slope = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
    Ok(OneOverNResult {
        metric: "squared aligned parameter distance".into(),
        spec: inf_spec,
        infinite_report,
        rows,
        slopes,
        median_slope,
    })
}
