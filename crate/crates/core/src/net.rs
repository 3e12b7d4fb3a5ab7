//! Network architectures, canonical parameter packing, forward evaluation and
//! the norm barrier.
//!
//! Parameters are packed layer by layer as `W^1` (row-major, `D_1 x D_0`),
//! `b^1` (when the layer has a bias), `W^2`, `b^2`, and so on.

use std::ops::{Deref, DerefMut};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: ActivationKind,
    #[serde(default)]
    pub bias: bool,
}

impl LayerSpec {
    pub fn new(width: usize, activation: ActivationKind, bias: bool) -> Self {
        Self {
            width,
            activation,
            bias,
        }
    }
}

/// Where one layer's parameters live inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: usize,
    pub bias: Option<usize>,
    pub end: usize,
}

impl LayerLayout {
    pub fn start(&self) -> usize {
        self.weights
    }

    #[inline]
    pub fn weight_index(&self, row: usize, col: usize) -> usize {
        self.weights + row * self.in_dim + col
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetShape {
    input_dim: usize,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "NetShape", into = "NetShape")]
pub struct Net {
    input_dim: usize,
    layers: Vec<LayerSpec>,
    layout: Vec<LayerLayout>,
    param_count: usize,
}

impl TryFrom<NetShape> for Net {
    type Error = Error;

    fn try_from(shape: NetShape) -> Result<Self> {
        Net::new(shape.input_dim, shape.layers)
    }
}

impl From<Net> for NetShape {
    fn from(net: Net) -> Self {
        NetShape {
            input_dim: net.input_dim,
            layers: net.layers,
        }
    }
}

impl Net {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("net.input_dim", "must be at least 1"));
        }
        if layers.is_empty() {
            return Err(Error::config("net.layers", "need at least one layer"));
        }
        let mut layout = Vec::with_capacity(layers.len());
        let mut offset = 0;
        let mut in_dim = input_dim;
        for (i, spec) in layers.iter().enumerate() {
            if spec.width == 0 {
                return Err(Error::config(
                    format!("net.layers[{i}].width"),
                    "must be at least 1",
                ));
            }
            let weights = offset;
            offset += spec.width * in_dim;
            let bias = spec.bias.then(|| {
                let b = offset;
                offset += spec.width;
                b
            });
            layout.push(LayerLayout {
                in_dim,
                out_dim: spec.width,
                weights,
                bias,
                end: offset,
            });
            in_dim = spec.width;
        }
        Ok(Self {
            input_dim,
            layers,
            layout,
            param_count: offset,
        })
    }

    /// Dense chain `dims[0] -> dims[1] -> ...` with one activation for the
    /// hidden layers and an identity output layer.
    pub fn chain(dims: &[usize], hidden: ActivationKind, bias: bool) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("net.layers", "need input and output widths"));
        }
        let last = dims.len() - 2;
        let layers = dims[1..]
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let act = if i == last {
                    ActivationKind::Identity
                } else {
                    hidden
                };
                LayerSpec::new(w, act, bias)
            })
            .collect();
        Net::new(dims[0], layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.width).unwrap_or(0)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.width)
            .max()
            .unwrap_or(0)
            .max(self.input_dim)
    }

    pub fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count {
            return Err(Error::Shape(format!(
                "parameter vector has length {}, net expects {}",
                theta.len(),
                self.param_count
            )));
        }
        Ok(())
    }

    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.input_dim() != self.input_dim {
            return Err(Error::Shape(format!(
                "dataset inputs have dimension {}, net expects {}",
                data.input_dim(),
                self.input_dim
            )));
        }
        if data.output_dim() != self.output_dim() {
            return Err(Error::Shape(format!(
                "dataset targets have dimension {}, net outputs {}",
                data.output_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    pub fn unpack(&self, theta: &[f64]) -> Result<Vec<LayerParams>> {
        self.check_params(theta)?;
        Ok(self
            .layout
            .iter()
            .map(|l| LayerParams {
                weights: theta[l.weights..l.weights + l.out_dim * l.in_dim].to_vec(),
                bias: l.bias.map(|b| theta[b..b + l.out_dim].to_vec()),
            })
            .collect())
    }

    pub fn pack(&self, layers: &[LayerParams]) -> Result<ParamVector> {
        if layers.len() != self.layout.len() {
            return Err(Error::Shape(format!(
                "{} layer blocks for a net with {} layers",
                layers.len(),
                self.layout.len()
            )));
        }
        let mut out = Vec::with_capacity(self.param_count);
        for (i, (p, l)) in layers.iter().zip(&self.layout).enumerate() {
            if p.weights.len() != l.out_dim * l.in_dim {
                return Err(Error::Shape(format!("layer {i} weight block size")));
            }
            out.extend_from_slice(&p.weights);
            match (&p.bias, l.bias) {
                (Some(b), Some(_)) if b.len() == l.out_dim => out.extend_from_slice(b),
                (None, None) => {}
                _ => return Err(Error::Shape(format!("layer {i} bias block"))),
            }
        }
        Ok(ParamVector(out))
    }
}

/// One layer's parameters in matrix form (row-major weights).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Inputs and targets stored row-major, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    input_dim: usize,
    output_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(input_dim: usize, output_dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Shape("zero-width dataset".into()));
        }
        if x.len() % input_dim != 0 || y.len() % output_dim != 0 {
            return Err(Error::Shape("ragged dataset buffers".into()));
        }
        let n = x.len() / input_dim;
        if n == 0 {
            return Err(Error::Shape("dataset needs at least one sample".into()));
        }
        if y.len() / output_dim != n {
            return Err(Error::Shape(format!(
                "{} input rows but {} target rows",
                n,
                y.len() / output_dim
            )));
        }
        Ok(Self {
            n,
            input_dim,
            output_dim,
            x,
            y,
        })
    }

    pub fn from_rows(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Self> {
        let d_in = xs.first().map(Vec::len).unwrap_or(0);
        let d_out = ys.first().map(Vec::len).unwrap_or(0);
        if xs.iter().any(|r| r.len() != d_in) || ys.iter().any(|r| r.len() != d_out) {
            return Err(Error::Shape("rows of unequal length".into()));
        }
        Self::new(d_in, d_out, xs.concat(), ys.concat())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        &self.x[i * self.input_dim..(i + 1) * self.input_dim]
    }

    #[inline]
    pub fn target(&self, i: usize) -> &[f64] {
        &self.y[i * self.output_dim..(i + 1) * self.output_dim]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Barrier threshold `c`; `null` in JSON means infinity (barrier off).
    #[serde(with = "infinite_as_null")]
    pub barrier_c: f64,
    pub eta: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            barrier_c: f64::INFINITY,
            eta: 1.0,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.barrier_c > 0.0) {
            return Err(Error::config("loss.barrier_c", "must be positive or null"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("loss.eta", "must be positive and finite"));
        }
        Ok(())
    }

    /// Factor applied to the summed data term.
    pub fn data_scale(&self, n: usize) -> f64 {
        match self.reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n as f64,
        }
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Applies one layer: `out = σ(W input + b)`.
#[inline]
pub(crate) fn layer_forward(
    layout: &LayerLayout,
    act: ActivationKind,
    theta: &[f64],
    input: &[f64],
    out: &mut [f64],
) {
    let w = &theta[layout.weights..layout.weights + layout.out_dim * layout.in_dim];
    for (k, o) in out.iter_mut().enumerate().take(layout.out_dim) {
        let row = &w[k * layout.in_dim..(k + 1) * layout.in_dim];
        let mut z = layout.bias.map_or(0.0, |b| theta[b + k]);
        for (wj, xj) in row.iter().zip(input) {
            z += wj * xj;
        }
        *o = act.value(z);
    }
}

pub fn forward(net: &Net, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    net.check_params(theta)?;
    if x.len() != net.input_dim {
        return Err(Error::Shape(format!(
            "input has length {}, net expects {}",
            x.len(),
            net.input_dim
        )));
    }
    Ok(forward_unchecked(net, theta, x))
}

pub(crate) fn forward_unchecked(net: &Net, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for (layout, spec) in net.layout.iter().zip(&net.layers) {
        let mut next = vec![0.0; layout.out_dim];
        layer_forward(layout, spec.activation, theta, &cur, &mut next);
        cur = next;
    }
    cur
}

/// Predictions for every row of `data`, row-major `N x D_out`.
pub fn forward_batch(net: &Net, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    net.check_params(theta)?;
    if data.input_dim() != net.input_dim {
        return Err(Error::Shape(format!(
            "dataset inputs have dimension {}, net expects {}",
            data.input_dim(),
            net.input_dim
        )));
    }
    let mut out = Vec::with_capacity(data.len() * net.output_dim());
    for i in 0..data.len() {
        out.extend(forward_unchecked(net, theta, data.input(i)));
    }
    Ok(out)
}

/// Value, gradient and Hessian of the norm barrier `R(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierTerm {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// `R(θ) = (½‖θ‖² − c)²` outside the ball `½‖θ‖² ≤ c`, zero inside.
pub fn barrier(theta: &[f64], c: f64) -> BarrierTerm {
    let p = theta.len();
    let mut gradient = vec![0.0; p];
    let mut hessian = DMatrix::zeros(p, p);
    let value = barrier_value(theta, c);
    barrier_gradient_into(theta, c, 1.0, &mut gradient);
    barrier_hessian_into(theta, c, |i, j, v| hessian[(i, j)] += v);
    BarrierTerm {
        value,
        gradient,
        hessian,
    }
}

#[inline]
fn barrier_excess(theta: &[f64], c: f64) -> Option<f64> {
    if c.is_infinite() {
        return None;
    }
    let half_sq = 0.5 * theta.iter().map(|t| t * t).sum::<f64>();
    (half_sq > c).then_some(half_sq - c)
}

pub(crate) fn barrier_value(theta: &[f64], c: f64) -> f64 {
    barrier_excess(theta, c).map_or(0.0, |e| e * e)
}

pub(crate) fn barrier_gradient_into(theta: &[f64], c: f64, scale: f64, grad: &mut [f64]) {
    if let Some(e) = barrier_excess(theta, c) {
        let f = scale * 2.0 * e;
        for (g, t) in grad.iter_mut().zip(theta) {
            *g += f * t;
        }
    }
}

pub(crate) fn barrier_hessian_into(theta: &[f64], c: f64, mut add: impl FnMut(usize, usize, f64)) {
    if let Some(e) = barrier_excess(theta, c) {
        for i in 0..theta.len() {
            for j in 0..theta.len() {
                let mut v = 2.0 * theta[i] * theta[j];
                if i == j {
                    v += 2.0 * e;
                }
                add(i, j, v);
            }
        }
    }
}

/// I.i.d. `Normal(0, scale²)` entries from a seeded ChaCha8 stream.
pub fn init_params(net: &Net, seed: u64, scale: f64) -> Result<ParamVector> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::config("init.scale", "must be positive"));
    }
    Ok(ParamVector(normal_vec(net.param_count, seed, scale)))
}

pub(crate) fn normal_vec(n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tanh_231() -> Net {
        Net::chain(&[2, 3, 1], ActivationKind::Tanh, true).unwrap()
    }

    #[test]
    fn param_count_formula() {
        let net = Net::new(
            3,
            vec![
                LayerSpec::new(4, ActivationKind::Tanh, true),
                LayerSpec::new(2, ActivationKind::Relu, false),
                LayerSpec::new(1, ActivationKind::Identity, true),
            ],
        )
        .unwrap();
        assert_eq!(net.param_count(), 4 * (3 + 1) + 2 * 4 + (2 + 1));
        assert_eq!(tanh_231().param_count(), 13);
    }

    #[test]
    fn rejects_zero_width_and_empty() {
        assert!(Net::new(2, vec![]).is_err());
        assert!(Net::new(0, vec![LayerSpec::new(1, ActivationKind::Identity, false)]).is_err());
        assert!(Net::new(2, vec![LayerSpec::new(0, ActivationKind::Identity, false)]).is_err());
    }

    #[test]
    fn zero_params_give_zero_output_without_bias() {
        let net = Net::chain(&[3, 5, 2], ActivationKind::Tanh, false).unwrap();
        let theta = ParamVector::zeros(net.param_count());
        let y = forward(&net, &theta, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_is_identity_map() {
        let net = Net::new(3, vec![LayerSpec::new(3, ActivationKind::Identity, false)]).unwrap();
        let theta = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = [0.25, -7.5, 3.0];
        assert_eq!(forward(&net, &theta, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_matches_direct_composition() {
        let net = tanh_231();
        let theta = init_params(&net, 0, 1.0).unwrap();
        let x = [0.4, -1.3];
        // W1 (3x2), b1 (3), W2 (1x3), b2 (1)
        let t = &theta.0;
        let mut h = [0.0; 3];
        for k in 0..3 {
            h[k] = (t[2 * k] * x[0] + t[2 * k + 1] * x[1] + t[6 + k]).tanh();
        }
        let expect = t[9] * h[0] + t[10] * h[1] + t[11] * h[2] + t[12];
        let got = forward(&net, &theta, &x).unwrap()[0];
        assert!((got - expect).abs() <= 1e-14, "{got} vs {expect}");
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let net = tanh_231();
        let theta = init_params(&net, 0, 1.0).unwrap();
        assert!(matches!(forward(&net, &theta, &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(
            forward(&net, &theta[..5], &[1.0, 2.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn batch_matches_row_loop_bitwise() {
        let net = tanh_231();
        let theta = init_params(&net, 3, 1.0).unwrap();
        let xs = normal_vec(20, 9, 1.0);
        let mut x = xs.clone();
        x.extend_from_slice(&xs[0..2]);
        let data = Dataset::new(2, 1, x, vec![0.0; 11]).unwrap();
        let batch = forward_batch(&net, &theta, &data).unwrap();
        for i in 0..data.len() {
            let row = forward(&net, &theta, data.input(i)).unwrap();
            assert_eq!(row[0].to_bits(), batch[i].to_bits());
        }
        assert_eq!(batch[0].to_bits(), batch[10].to_bits());
        let single = Dataset::new(2, 1, xs[0..2].to_vec(), vec![0.0]).unwrap();
        assert_eq!(
            forward_batch(&net, &theta, &single).unwrap(),
            forward(&net, &theta, &xs[0..2]).unwrap()
        );
    }

    #[test]
    fn barrier_disabled_and_boundary() {
        let off = barrier(&[5.0, 3.0], f64::INFINITY);
        assert_eq!(off.value, 0.0);
        assert!(off.gradient.iter().all(|&g| g == 0.0));
        assert!(off.hessian.iter().all(|&h| h == 0.0));
        // ½‖(2,0)‖² = 2 = c
        let edge = barrier(&[2.0, 0.0], 2.0);
        assert_eq!(edge.value, 0.0);
        assert!(edge.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn barrier_closed_form_and_fd() {
        let b = barrier(&[2.0, 0.0], 1.0);
        assert_eq!(b.value, 1.0);
        assert_eq!(b.gradient, vec![4.0, 0.0]);
        // ∇²R = 2θθᵀ + 2(½‖θ‖² − c) I
        assert_eq!(b.hessian[(0, 0)], 8.0 + 2.0);
        assert_eq!(b.hessian[(1, 1)], 2.0);
        assert_eq!(b.hessian[(0, 1)], 0.0);
        let theta = [1.3, -0.7, 0.9];
        let c = 0.5;
        let h = 1e-6;
        let g = barrier(&theta, c).gradient;
        for i in 0..3 {
            let mut p = theta;
            let mut m = theta;
            p[i] += h;
            m[i] -= h;
            let fd = (barrier_value(&p, c) - barrier_value(&m, c)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn barrier_is_continuous_at_the_boundary() {
        let theta = [1.0, 1.0];
        let c = 1.0;
        for dc in [1e-12, -1e-12] {
            let b = barrier(&theta, c + dc);
            assert!(b.value.abs() < 1e-20);
            assert!(b.gradient.iter().all(|g| g.abs() < 1e-10));
        }
    }

    #[test]
    fn init_is_deterministic_and_scales_linearly() {
        let net = tanh_231();
        assert_eq!(init_params(&net, 7, 1.0).unwrap(), init_params(&net, 7, 1.0).unwrap());
        let a = init_params(&net, 7, 1.0).unwrap();
        let b = init_params(&net, 7, 0.5).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(0.5 * x, *y);
        }
        assert!(init_params(&net, 7, 0.0).is_err());
    }

    #[test]
    fn init_sample_mean_is_centered() {
        let n = 100_000;
        let v = normal_vec(n, 5, 2.0);
        let mean = v.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 * 2.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn loss_config_json_uses_null_for_infinity() {
        let cfg = LossConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"barrier_c\":null"), "{s}");
        let back: LossConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let finite: LossConfig = serde_json::from_str(r#"{"barrier_c": 3.5}"#).unwrap();
        assert_eq!(finite.barrier_c, 3.5);
    }

    fn arb_net() -> impl Strategy<Value = Net> {
        (1usize..4, prop::collection::vec((1usize..5, any::<bool>()), 1..4)).prop_map(
            |(d, ls)| {
                let layers = ls
                    .into_iter()
                    .map(|(w, b)| LayerSpec::new(w, ActivationKind::Tanh, b))
                    .collect();
                Net::new(d, layers).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn unpack_pack_round_trip(net in arb_net(), seed in any::<u64>()) {
            let theta = init_params(&net, seed, 1.3).unwrap();
            let packed = net.pack(&net.unpack(&theta).unwrap()).unwrap();
            prop_assert_eq!(
                packed.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                theta.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn linear_net_is_homogeneous(seed in 0u64..1000, alpha in -3.0f64..3.0) {
            let net = Net::new(3, vec![
                LayerSpec::new(4, ActivationKind::Identity, false),
                LayerSpec::new(2, ActivationKind::Identity, false),
            ]).unwrap();
            let theta = init_params(&net, seed, 1.0).unwrap();
            let x = [0.3, -1.1, 0.8];
            let ax: Vec<f64> = x.iter().map(|v| alpha * v).collect();
            let fx = forward(&net, &theta, &x).unwrap();
            let fax = forward(&net, &theta, &ax).unwrap();
            for (a, b) in fx.iter().zip(&fax) {
                prop_assert!((alpha * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
