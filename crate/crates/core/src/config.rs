//! Experiment configuration: JSON files plus `key=value` overrides.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::analysis::BenchMethod;
use crate::error::{Error, Result};
use crate::io::read_bytes;
use crate::net::{Dataset, LossConfig, Net};
use crate::neti::{NetISpec, NetITrainConfig};
use crate::ode::{Cutoff, IntegratorConfig, IntegratorMethod};
use crate::optim::{Budget, OptimizerMethod, ProtocolConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; see [`DerivedSeeds`].
    #[serde(default)]
    pub seed: u64,
    /// Student network; absent for population (infinite-data) problems.
    #[serde(default)]
    pub net: Option<Net>,
    #[serde(default)]
    pub init: Init,
    pub data: DataSource,
    #[serde(default)]
    pub loss: LossConfig,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// CSV with a header; columns named `x*` are inputs, `y*` targets.
    File { path: PathBuf },
    Teacher(TeacherData),
    /// Standard normal inputs in the limit of infinite data.
    Population(NetISpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherData {
    pub net: Net,
    pub n: usize,
    /// Standard deviation of the teacher's parameters.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Initial parameters of the student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    Normal { scale: f64 },
    File { path: PathBuf },
}

impl Default for Init {
    fn default() -> Self {
        Init::Normal { scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    Integrate(IntegratorConfig),
    Minimize(MinimizeConfig),
    Protocol(ProtocolConfig),
    Bench(BenchConfig),
    Neti(NetITrainConfig),
    Spectrum(SpectrumConfig),
    Gradcheck(GradcheckConfig),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Integrate(_) => "integrate",
            Mode::Minimize(_) => "minimize",
            Mode::Protocol(_) => "protocol",
            Mode::Bench(_) => "bench",
            Mode::Neti(_) => "neti",
            Mode::Spectrum(_) => "spectrum",
            Mode::Gradcheck(_) => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizeConfig {
    /// Gradient-flow integration run before the optimizer.
    pub warm_start: Option<IntegratorConfig>,
    pub method: OptimizerMethod,
    pub budget: Budget,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self { warm_start: None, method: OptimizerMethod::newton(), budget: Budget::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub methods: Vec<BenchMethod>,
    pub budgets: Vec<f64>,
    /// Master seeds, one problem each; empty means the config's own seed.
    pub seeds: Vec<u64>,
    pub t_end: f64,
    pub reference_tol: f64,
    pub reference_grid_points: usize,
    /// When set, every Euler method uses `dt = fraction / λ_max(H(θ0))`.
    pub euler_dt_fraction: Option<f64>,
    /// Stored cutoffs, seed-major then method then budget.
    pub replay: Option<Vec<Cutoff>>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: vec![
                BenchMethod::new(IntegratorMethod::Rosenbrock, 1e-6),
                BenchMethod::new(IntegratorMethod::AdaptiveRk45, 1e-6),
                BenchMethod::new(IntegratorMethod::Euler { dt: 0.01 }, 1e-6),
            ],
            budgets: vec![1.0],
            seeds: Vec::new(),
            t_end: 1e5,
            reference_tol: 1e-8,
            reference_grid_points: 1000,
            euler_dt_fraction: None,
            replay: None,
        }
    }
}

impl BenchConfig {
    pub fn seeds_or(&self, seed: u64) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![seed]
        } else {
            self.seeds.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    /// Largest accepted relative ℓ∞ error of the gradient.
    pub grad_tol: f64,
    pub hess_tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { grad_tol: 1e-6, hess_tol: 1e-5 }
    }
}

/// Independent streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    pub master: u64,
    pub init: u64,
    pub teacher: u64,
    pub inputs: u64,
}

impl DerivedSeeds {
    pub fn new(master: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(master);
            rng.set_stream(k);
            rng.next_u64()
        };
        Self { master, init: stream(1), teacher: stream(2), inputs: stream(3) }
    }
}

fn parse_override(value: &str) -> serde_json::Value {
    serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()))
}

/// Sets a dotted key path in a JSON object; the value is parsed as JSON,
/// falling back to a string. Missing intermediate objects are created.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty path segment"));
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(parts[..i].join("."), "not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parse_override(value));
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("key has at least one segment")
}

impl ExperimentConfig {
    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON config file and applies `overrides` in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let mut value: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn is_population(&self) -> bool {
        matches!(self.data, DataSource::Population(_))
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        match (&self.data, &self.net) {
            (DataSource::Population(spec), None) => {
                spec.validate()?;
                if self.loss.barrier_c.is_finite() {
                    return Err(Error::config("loss.barrier_c", "population problems have no barrier"));
                }
                if matches!(self.init, Init::File { .. }) {
                    return Err(Error::config("init", "population problems start from the spec's student"));
                }
            }
            (DataSource::Population(_), Some(_)) => {
                return Err(Error::config("net", "population problems take the student from data.population"));
            }
            (_, None) => return Err(Error::config("net", "required unless data is population")),
            (DataSource::Teacher(t), Some(net)) => {
                if t.n == 0 {
                    return Err(Error::config("data.teacher.n", "must be positive"));
                }
                if !(t.scale > 0.0 && t.scale.is_finite()) {
                    return Err(Error::config("data.teacher.scale", "must be positive"));
                }
                if t.net.input_dim() != net.input_dim() || t.net.output_dim() != net.output_dim() {
                    return Err(Error::config("data.teacher.net", "input/output dimensions differ from net"));
                }
            }
            (DataSource::File { .. }, Some(_)) => {}
        }
        if let Init::Normal { scale } = self.init {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::config("init.normal.scale", "must be positive"));
            }
        }
        match &self.mode {
            Mode::Integrate(c) => c.validate()?,
            Mode::Minimize(c) => {
                if let Some(w) = &c.warm_start {
                    w.validate()?;
                }
                c.method.validate()?;
            }
            Mode::Protocol(c) => {
                c.method.validate()?;
                if c.epochs < 2 {
                    return Err(Error::config("mode.protocol.epochs", "needs at least 2 epochs"));
                }
            }
            Mode::Bench(b) => {
                if b.methods.is_empty() || b.budgets.is_empty() {
                    return Err(Error::config("mode.bench", "needs methods and budgets"));
                }
                if b.budgets.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                    return Err(Error::config("mode.bench.budgets", "must be positive"));
                }
                if !(b.t_end > 0.0 && b.reference_tol > 0.0 && b.reference_grid_points >= 2) {
                    return Err(Error::config("mode.bench", "t_end, reference_tol must be positive, grid ≥ 2"));
                }
                if b.euler_dt_fraction.is_some_and(|f| !(f > 0.0 && f.is_finite())) {
                    return Err(Error::config("mode.bench.euler_dt_fraction", "must be positive"));
                }
                for m in &b.methods {
                    IntegratorConfig::new(m.method, b.t_end).with_tol(m.tol).validate()?;
                }
                let runs = b.seeds_or(self.seed).len() * b.methods.len() * b.budgets.len();
                if b.replay.as_ref().is_some_and(|r| r.len() != runs) {
                    return Err(Error::config("mode.bench.replay", format!("expected {runs} cutoffs")));
                }
            }
            Mode::Neti(c) => {
                if !self.is_population() {
                    return Err(Error::config("mode.neti", "requires data.population"));
                }
                c.method.validate()?;
            }
            Mode::Spectrum(_) | Mode::Gradcheck(_) => {}
        }
        Ok(())
    }

    /// Config for the CLI's default `gradcheck`: a random 2-3-1 tanh net on
    /// labels from a smaller teacher.
    pub fn default_gradcheck(seed: u64) -> Self {
        let net = Net::chain(&[2, 3, 1], ActivationKind::Tanh, true).expect("valid shape");
        let teacher = Net::chain(&[2, 2, 1], ActivationKind::Sigmoid, true).expect("valid shape");
        Self {
            seed,
            net: Some(net),
            init: Init::default(),
            data: DataSource::Teacher(TeacherData { net: teacher, n: 20, scale: 1.0 }),
            loss: LossConfig::default(),
            mode: Mode::Gradcheck(GradcheckConfig::default()),
        }
    }
}

/// Reads a dataset CSV: header row, `x*` columns are inputs, `y*` targets.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let bytes = read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let xs: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with('x')).collect();
    let ys: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with('y')).collect();
    if xs.is_empty() || ys.is_empty() || xs.len() + ys.len() != header.len() {
        return Err(Error::format(path, "header must name x* input and y* target columns only"));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::format(path, format!("row {}: bad number in column {i}", line + 2)))
        };
        for &i in &xs {
            x.push(num(i)?);
        }
        for &i in &ys {
            y.push(num(i)?);
        }
    }
    Dataset::new(xs.len(), ys.len(), x, y).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> serde_json::Value {
        json!({
            "seed": 3,
            "net": {"input_dim": 2, "layers": [
                {"width": 4, "activation": "erf_scaled", "bias": true},
                {"width": 1, "activation": "identity", "bias": true}]},
            "data": {"teacher": {"net": {"input_dim": 2, "layers": [
                {"width": 2, "activation": "erf_scaled", "bias": true},
                {"width": 1, "activation": "identity", "bias": true}]}, "n": 100}},
            "mode": {"integrate": {"method": {"kind": "rosenbrock"}, "t_end": 10.0}}
        })
    }

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_value(base()).unwrap();
        assert_eq!(cfg.mode.name(), "integrate");
        assert_eq!(ExperimentConfig::from_value(cfg.to_value()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut v = base();
        v["mode"]["integrate"]["tolerance"] = json!(1e-3);
        let msg = ExperimentConfig::from_value(v).unwrap_err().to_string();
        assert!(msg.contains("tolerance") && msg.contains("mode.integrate"), "{msg}");
    }

    #[test]
    fn exactly_one_mode_and_data_source() {
        let mut v = base();
        v["mode"]["spectrum"] = json!({});
        assert!(ExperimentConfig::from_value(v).is_err());
        let mut v = base();
        v["data"]["file"] = json!({"path": "x.csv"});
        assert!(ExperimentConfig::from_value(v).is_err());
        let mut v = base();
        v.as_object_mut().unwrap().remove("mode");
        assert!(ExperimentConfig::from_value(v).unwrap_err().to_string().contains("mode"));
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut v = base();
        apply_override(&mut v, "mode.integrate.t_end=5").unwrap();
        apply_override(&mut v, "seed=9").unwrap();
        apply_override(&mut v, "loss.reduction=sum").unwrap();
        let cfg = ExperimentConfig::from_value(v).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.loss.reduction, crate::net::Reduction::Sum);
        let Mode::Integrate(ic) = cfg.mode else { panic!() };
        assert_eq!(ic.t_end, 5.0);
        assert!(apply_override(&mut base(), "no_equals").is_err());
        assert!(apply_override(&mut base(), "seed.x=1").is_err());
    }

    #[test]
    fn semantic_checks() {
        let mut v = base();
        v["data"]["teacher"]["n"] = json!(0);
        assert!(ExperimentConfig::from_value(v).unwrap_err().to_string().contains("data.teacher.n"));
        let mut v = base();
        v["mode"] = json!({"neti": {}});
        assert!(ExperimentConfig::from_value(v).unwrap_err().to_string().contains("population"));
        let mut v = base();
        v.as_object_mut().unwrap().remove("net");
        assert!(ExperimentConfig::from_value(v).is_err());
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let a = DerivedSeeds::new(0);
        assert_eq!(a, DerivedSeeds::new(0));
        assert_ne!(a.init, a.teacher);
        assert_ne!(a.teacher, a.inputs);
        assert_ne!(a.init, DerivedSeeds::new(1).init);
    }

    #[test]
    fn dataset_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x0,x1,y0\n1,2,3\n4,5,6\n").unwrap();
        let d = read_dataset_csv(&p).unwrap();
        assert_eq!((d.len(), d.input_dim(), d.output_dim()), (2, 2, 1));
        assert_eq!(d.target(1), &[6.0]);
        std::fs::write(&p, "x0,y0\n1,oops\n").unwrap();
        assert!(read_dataset_csv(&p).unwrap_err().to_string().contains("row 2"));
        let missing = dir.path().join("missing.csv");
        assert!(read_dataset_csv(&missing).unwrap_err().to_string().contains("missing.csv"));
    }
}
