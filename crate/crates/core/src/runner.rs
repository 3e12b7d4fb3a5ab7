//! Executes an [`ExperimentConfig`] and writes its outputs.
//!
//! Every output directory receives a `run.json` holding the resolved
//! configuration. Wall-clock cutoffs are stored in it, so running that
//! configuration again reproduces every non-timing output bit for bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{benchmark_objective, median, reference_trajectory_of, write_records_csv, ComparisonRecord, COMPARISON_GRID_POINTS};
use crate::config::{read_dataset_csv, BenchConfig, DataSource, DerivedSeeds, ExperimentConfig, Init, Mode};
use crate::derivatives::MlpProblem;
use crate::error::{Error, Result};
use crate::io::{files_under, load_params_for, save_params, save_trajectory, write_bytes, write_json, LAYOUT_VERSION};
use crate::linalg::symmetric_eigenvalues;
use crate::net::{init_params, Dataset, LossConfig, Net, ParamVector};
use crate::neti::{neti_train, NetIObjective};
use crate::objective::{fd_gradient_of, fd_jacobian_symmetric, rel_linf, Objective};
use crate::ode::{integrate_objective, IntegratorMethod, Termination};
use crate::optim::{minimize_objective, run_protocol, ConvergenceReport, StopReason};
use crate::synthetic::teacher_dataset;

pub const RUN_RECORD: &str = "run.json";

/// A finite-data or population problem with its starting point.
pub enum Problem {
    Mlp { net: Net, data: Dataset, loss: LossConfig },
    Population(NetIObjective),
}

impl Problem {
    pub fn objective(&self) -> Result<Box<dyn Objective + '_>> {
        Ok(match self {
            Problem::Mlp { net, data, loss } => Box::new(MlpProblem::new(net, data, *loss)?),
            Problem::Population(obj) => Box::new(obj),
        })
    }

    /// Data-term mean squared error, or the population loss.
    pub fn mse(&self, theta: &[f64]) -> Result<f64> {
        Ok(match self {
            Problem::Mlp { net, data, loss } => MlpProblem::new(net, data, *loss)?.mse(theta),
            Problem::Population(obj) => obj.loss(theta),
        })
    }

    pub fn net(&self) -> Option<&Net> {
        match self {
            Problem::Mlp { net, .. } => Some(net),
            Problem::Population(_) => None,
        }
    }
}

pub struct Setup {
    pub problem: Problem,
    pub theta0: ParamVector,
    pub seeds: DerivedSeeds,
}

/// Builds the problem for master seed `master` (the config's own seed for
/// everything but `bench`).
pub fn setup(cfg: &ExperimentConfig, master: u64) -> Result<Setup> {
    let seeds = DerivedSeeds::new(master);
    if let DataSource::Population(spec) = &cfg.data {
        let obj = NetIObjective::new(spec.clone())?.with_flow_rate(cfg.loss.eta);
        let theta0 = spec.params();
        return Ok(Setup { problem: Problem::Population(obj), theta0, seeds });
    }
    let net = cfg.net.clone().ok_or_else(|| Error::config("net", "missing"))?;
    let data = match &cfg.data {
        DataSource::File { path } => read_dataset_csv(path)?,
        DataSource::Teacher(t) => {
            let theta_t = init_params(&t.net, seeds.teacher, t.scale)?;
            teacher_dataset(&t.net, &theta_t, t.n, seeds.inputs)?
        }
        DataSource::Population(_) => unreachable!("handled above"),
    };
    net.check_data(&data)?;
    let theta0 = match &cfg.init {
        Init::Normal { scale } => init_params(&net, seeds.init, *scale)?,
        Init::File { path } => load_params_for(path, &net)?,
    };
    Ok(Setup { problem: Problem::Mlp { net, data, loss: cfg.loss }, theta0, seeds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub version: String,
    pub layout_version: u32,
    pub mode: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<DerivedSeeds>,
    pub grid_counts: BTreeMap<String, usize>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    /// One-line human summary.
    pub summary: String,
    /// Set when the run finished but hit a numerical failure; outputs are
    /// still written.
    pub failure: Option<String>,
}

struct ModeResult {
    resolved: Mode,
    seeds: Vec<DerivedSeeds>,
    grid_counts: BTreeMap<String, usize>,
    summary: String,
    failure: Option<String>,
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let res = match &cfg.mode {
        Mode::Bench(b) => run_bench(cfg, b, out)?,
        _ => run_single(cfg, out)?,
    };
    let mut config = cfg.clone();
    config.mode = res.resolved;
    let mut outputs = files_under(out)?;
    outputs.retain(|p| p != Path::new(RUN_RECORD));
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION").to_string(),
        layout_version: LAYOUT_VERSION,
        mode: cfg.mode.name().to_string(),
        config,
        seeds: res.seeds,
        grid_counts: res.grid_counts,
        outputs,
    };
    write_json(&out.join(RUN_RECORD), &record)?;
    Ok(RunOutcome { record, summary: res.summary, failure: res.failure })
}

/// Runs the configuration stored in a `run.json`.
pub fn rerun(run_json: &Path, out: &Path) -> Result<RunOutcome> {
    let record: RunRecord = crate::io::read_json(run_json)?;
    if record.layout_version != LAYOUT_VERSION {
        return Err(Error::format(run_json, format!("layout version {}", record.layout_version)));
    }
    run(&record.config, out)
}

fn report_failure(r: &ConvergenceReport) -> Option<String> {
    (r.stop_reason == StopReason::NonFinite).then(|| format!("{}: non-finite loss or gradient", r.method))
}

fn run_single(cfg: &ExperimentConfig, out: &Path) -> Result<ModeResult> {
    let s = setup(cfg, cfg.seed)?;
    let obj = s.problem.objective()?;
    let net = s.problem.net();
    let theta0 = &s.theta0;
    let mut grid_counts = BTreeMap::new();
    let mut failure = None;
    let (resolved, summary) = match &cfg.mode {
        Mode::Integrate(ic) => {
            let tr = integrate_objective(&*obj, theta0, ic)?;
            save_trajectory(&tr, &out.join("trajectory"))?;
            save_params(tr.final_state(), net, Some(s.seeds.init), &out.join("final_params.bin"))?;
            grid_counts.insert("trajectory".into(), tr.len());
            if tr.terminated_by == Termination::StepFailure {
                failure = Some(format!("step size underflow at t = {:e}", tr.final_time()));
            }
            let mut ic = ic.clone();
            if ic.wall_budget_seconds.is_some() {
                ic.replay = Some(tr.cutoff());
            }
            let summary = format!(
                "integrate {}: t = {:e}, loss = {:e}, {} steps, {:?}",
                tr.method,
                tr.final_time(),
                tr.losses.last().copied().unwrap_or(f64::NAN),
                tr.steps_accepted,
                tr.terminated_by
            );
            (Mode::Integrate(ic), summary)
        }
        Mode::Minimize(mc) => {
            let mut mc = mc.clone();
            let mut start = theta0.clone();
            if let Some(ws) = mc.warm_start.as_mut() {
                let tr = integrate_objective(&*obj, theta0, ws)?;
                if tr.terminated_by == Termination::StepFailure {
                    failure = Some("warm start: step size underflow".into());
                }
                if ws.wall_budget_seconds.is_some() {
                    ws.replay = Some(tr.cutoff());
                }
                grid_counts.insert("warm_start".into(), tr.len());
                save_trajectory(&tr, &out.join("warm_start"))?;
                start = tr.final_state().clone();
            }
            let (theta, report) = minimize_objective(&*obj, &start, &mc.method, &mc.budget)?;
            if mc.budget.wall_seconds.is_some() {
                mc.budget.replay = Some(report.cutoff());
            }
            failure = failure.or_else(|| report_failure(&report));
            let mse = s.problem.mse(&theta)?;
            save_params(&theta, net, Some(s.seeds.init), &out.join("params.bin"))?;
            write_json(&out.join("report.json"), &serde_json::json!({ "report": report, "mse": mse }))?;
            let summary = format!(
                "minimize {}: mse = {mse:e}, |g| = {:e}, {} iterations, {:?}",
                report.method, report.grad_norm, report.iterations, report.status
            );
            (Mode::Minimize(mc), summary)
        }
        Mode::Protocol(pc) => {
            let o = run_protocol(&*obj, theta0, pc)?;
            failure = report_failure(&o.report);
            save_params(&o.theta, net, Some(s.seeds.init), &out.join("params.bin"))?;
            write_json(&out.join("report.json"), &o.report)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::Numerical(format!("csv: {e}"));
            w.write_record(["epoch", "loss"]).map_err(csv_err)?;
            for (i, l) in o.epoch_losses.iter().enumerate() {
                w.write_record([(i + 1).to_string(), l.to_string()]).map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
            write_bytes(&out.join("epochs.csv"), &bytes)?;
            let summary = format!(
                "protocol: {:?} after {} epochs, loss = {:e}, min eigenvalue = {:?}",
                o.report.status,
                o.epoch_losses.len(),
                o.report.final_loss,
                o.report.min_eigenvalue
            );
            (Mode::Protocol(*pc), summary)
        }
        Mode::Neti(nc) => {
            let DataSource::Population(spec) = &cfg.data else {
                return Err(Error::config("mode.neti", "requires data.population"));
            };
            let (trained, report) = neti_train(spec, nc)?;
            failure = report_failure(&report);
            write_json(&out.join("spec.json"), &trained)?;
            write_json(&out.join("report.json"), &report)?;
            save_params(&trained.params(), None, None, &out.join("params.bin"))?;
            let summary = format!(
                "neti: loss = {:e}, |g| = {:e}, {:?}, min eigenvalue = {:?}",
                report.final_loss, report.grad_norm, report.status, report.min_eigenvalue
            );
            (Mode::Neti(nc.clone()), summary)
        }
        Mode::Spectrum(sc) => {
            let (loss, g) = obj.loss_and_gradient(theta0);
            let eig = symmetric_eigenvalues(&obj.hessian(theta0))?;
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            write_json(
                &out.join("spectrum.json"),
                &serde_json::json!({ "loss": loss, "grad_norm": gn, "eigenvalues": eig }),
            )?;
            let summary = format!(
                "spectrum: {} eigenvalues in [{:e}, {:e}]",
                eig.len(),
                eig.first().copied().unwrap_or(f64::NAN),
                eig.last().copied().unwrap_or(f64::NAN)
            );
            (Mode::Spectrum(sc.clone()), summary)
        }
        Mode::Gradcheck(gc) => {
            let g = obj.gradient(theta0);
            let g_fd = fd_gradient_of(&*obj, theta0, 1e-5);
            let h = obj.hessian(theta0);
            let h_fd = fd_jacobian_symmetric(theta0, 1e-5, |t| obj.gradient(t));
            let grad_err = rel_linf(&g, &g_fd);
            let hess_err = rel_linf(h.as_slice(), h_fd.as_slice());
            write_json(
                &out.join("gradcheck.json"),
                &serde_json::json!({ "params": theta0.len(), "grad_rel_error": grad_err, "hess_rel_error": hess_err }),
            )?;
            if !(grad_err < gc.grad_tol && hess_err < gc.hess_tol) {
                failure = Some(format!("gradcheck above tolerance: grad {grad_err:e}, hessian {hess_err:e}"));
            }
            let summary = format!("gradcheck: max relative error grad {grad_err:e}, hessian {hess_err:e}");
            (Mode::Gradcheck(gc.clone()), summary)
        }
        Mode::Bench(_) => unreachable!("handled by run_bench"),
    };
    Ok(ModeResult { resolved, seeds: vec![s.seeds], grid_counts, summary, failure })
}

/// Euler step `fraction / λ_max(H(θ0))`.
pub fn euler_dt_for(obj: &dyn Objective, theta0: &[f64], fraction: f64) -> Result<f64> {
    let lmax = symmetric_eigenvalues(&obj.hessian(theta0))?
        .last()
        .copied()
        .unwrap_or(0.0)
        * obj.flow_rate();
    if lmax <= 0.0 {
        return Err(Error::Numerical("Hessian at θ0 has no positive eigenvalue".into()));
    }
    Ok(fraction / lmax)
}

/// Runs the benchmark for every seed; records are seed-major.
pub fn bench_records(cfg: &ExperimentConfig, b: &BenchConfig) -> Result<(Vec<ComparisonRecord>, Vec<DerivedSeeds>, usize)> {
    let mut records = Vec::new();
    let mut seeds = Vec::new();
    let mut ref_points = 0;
    for seed in b.seeds_or(cfg.seed) {
        let s = setup(cfg, seed)?;
        let obj = s.problem.objective()?;
        let reference = reference_trajectory_of(&*obj, &s.theta0, b.reference_tol, b.reference_grid_points, b.t_end)?;
        ref_points = ref_points.max(reference.len());
        let mut methods = b.methods.clone();
        if let Some(f) = b.euler_dt_fraction {
            let dt = euler_dt_for(&*obj, &s.theta0, f)?;
            for m in methods.iter_mut() {
                if let IntegratorMethod::Euler { .. } = m.method {
                    m.method = IntegratorMethod::Euler { dt };
                }
            }
        }
        let replay = b.replay.as_ref().map(|r| &r[records.len()..]);
        records.extend(benchmark_objective(&*obj, &s.theta0, &methods, &b.budgets, &reference, seed, replay));
        seeds.push(s.seeds);
    }
    Ok((records, seeds, ref_points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummaryRow {
    pub method: String,
    pub budget_s: f64,
    pub median_d_m: f64,
    pub median_t_m: f64,
    pub median_final_loss: f64,
    pub failed: usize,
}

/// Medians over seeds per (method, budget), in configuration order.
pub fn summarize(records: &[ComparisonRecord]) -> Vec<BenchSummaryRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in records {
        if !keys.iter().any(|(m, b)| m == &r.method && *b == r.budget_s) {
            keys.push((r.method.clone(), r.budget_s));
        }
    }
    keys.into_iter()
        .map(|(method, budget_s)| {
            let group: Vec<&ComparisonRecord> =
                records.iter().filter(|r| r.method == method && r.budget_s == budget_s).collect();
            let col = |f: fn(&ComparisonRecord) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            BenchSummaryRow {
                median_d_m: col(|r| r.d_m),
                median_t_m: col(|r| r.t_m),
                median_final_loss: col(|r| r.final_loss),
                failed: group.iter().filter(|r| r.error.is_some()).count(),
                method,
                budget_s,
            }
        })
        .collect()
}

fn run_bench(cfg: &ExperimentConfig, b: &BenchConfig, out: &Path) -> Result<ModeResult> {
    let (records, seeds, ref_points) = bench_records(cfg, b)?;
    let mut csv = Vec::new();
    write_records_csv(&records, &mut csv)?;
    write_bytes(&out.join("records.csv"), &csv)?;
    let rows = summarize(&records);
    write_json(&out.join("summary.json"), &rows)?;
    let failed: usize = rows.iter().map(|r| r.failed).sum();
    let failure = (failed > 0).then(|| format!("{failed} benchmark runs failed"));
    let mut resolved = b.clone();
    resolved.replay = Some(records.iter().map(|r| r.cutoff()).collect());
    let grid_counts = BTreeMap::from([
        ("reference".to_string(), ref_points),
        ("comparison".to_string(), COMPARISON_GRID_POINTS),
    ]);
    let summary = rows
        .iter()
        .map(|r| format!("{} @ {}s: d_m {:e}, t_m {:e}", r.method, r.budget_s, r.median_d_m, r.median_t_m))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(ModeResult { resolved: Mode::Bench(resolved), seeds, grid_counts, summary, failure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::diff_outputs;
    use serde_json::json;

    fn cfg(mode: serde_json::Value) -> ExperimentConfig {
        ExperimentConfig::from_value(json!({
            "seed": 5,
            "net": {"input_dim": 2, "layers": [
                {"width": 3, "activation": "tanh", "bias": true},
                {"width": 1, "activation": "identity", "bias": true}]},
            "data": {"teacher": {"net": {"input_dim": 2, "layers": [
                {"width": 2, "activation": "tanh", "bias": true},
                {"width": 1, "activation": "identity", "bias": true}]}, "n": 50}},
            "mode": mode
        }))
        .unwrap()
    }

    fn rerun_matches(c: &ExperimentConfig) {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let first = run(c, a.path()).unwrap();
        assert!(first.failure.is_none(), "{:?}", first.failure);
        rerun(&a.path().join(RUN_RECORD), b.path()).unwrap();
        assert_eq!(diff_outputs(a.path(), b.path()).unwrap(), Vec::<PathBuf>::new());
    }

    #[test]
    fn integrate_with_wall_budget_replays() {
        rerun_matches(&cfg(json!({"integrate": {
            "method": {"kind": "adaptive_rk45"}, "t_end": 1e4, "wall_budget_seconds": 0.05}})));
    }

    #[test]
    fn minimize_with_warm_start_replays() {
        rerun_matches(&cfg(json!({"minimize": {
            "warm_start": {"method": {"kind": "rosenbrock"}, "t_end": 100.0, "wall_budget_seconds": 0.02},
            "method": {"kind": "bfgs"}, "budget": {"max_iters": 100000, "wall_seconds": 0.05}}})));
    }

    #[test]
    fn bench_replays() {
        rerun_matches(&cfg(json!({"bench": {
            "budgets": [0.01, 0.02], "seeds": [1, 2], "t_end": 100.0,
            "euler_dt_fraction": 0.1}})));
    }

    #[test]
    fn other_modes_write_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&cfg(json!({"spectrum": {}})), dir.path()).unwrap();
        let spec: serde_json::Value = crate::io::read_json(&dir.path().join("spectrum.json")).unwrap();
        let eig: Vec<f64> = serde_json::from_value(spec["eigenvalues"].clone()).unwrap();
        assert_eq!(eig.len(), 13);
        assert!(eig.windows(2).all(|w| w[0] <= w[1]));
        assert!(o.record.outputs.contains(&PathBuf::from("spectrum.json")));

        let dir = tempfile::tempdir().unwrap();
        let o = run(&cfg(json!({"gradcheck": {}})), dir.path()).unwrap();
        assert!(o.failure.is_none(), "{}", o.summary);

        let dir = tempfile::tempdir().unwrap();
        run(&cfg(json!({"protocol": {"epochs": 5, "steps_per_epoch": 50}})), dir.path()).unwrap();
        assert!(dir.path().join("epochs.csv").exists());
    }

    #[test]
    fn population_neti_mode() {
        let spec = crate::neti::NetISpec::random(3, 2, 2, crate::activation::ActivationKind::ErfScaled, 4);
        let c = ExperimentConfig::from_value(json!({
            "data": {"population": spec},
            "mode": {"neti": {"budget": {"max_iters": 50}}}
        }))
        .unwrap();
        rerun_matches(&c);
    }

    #[test]
    fn seeds_change_problem() {
        let c = cfg(json!({"spectrum": {}}));
        let a = setup(&c, 1).unwrap();
        let b = setup(&c, 2).unwrap();
        assert_ne!(a.theta0, b.theta0);
        assert_eq!(a.theta0, setup(&c, 1).unwrap().theta0);
    }
}
