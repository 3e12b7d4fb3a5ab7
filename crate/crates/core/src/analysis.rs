//! Reference trajectories and the comparison metrics `d_m` and `t_m`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::derivatives::MlpProblem;
use crate::error::{Error, Result};
use crate::net::{Dataset, LossConfig, Net};
use crate::objective::Objective;
use crate::ode::{
    integrate_objective, log_grid, Cutoff, IntegratorConfig, IntegratorMethod, SaveGrid, Termination,
    Trajectory,
};

/// Snapshot count used for compared trajectories.
pub const COMPARISON_GRID_POINTS: usize = 1000;

/// Rosenbrock solution at `abstol = reltol = tol` on a log grid over
/// `[0, t_end]`.
pub fn reference_trajectory(
    net: &Net,
    theta0: &[f64],
    data: &Dataset,
    loss_cfg: &LossConfig,
    tol: f64,
    grid_points: usize,
    t_end: f64,
) -> Result<Trajectory> {
    net.check_params(theta0)?;
    let problem = MlpProblem::new(net, data, *loss_cfg)?;
    reference_trajectory_of(&problem, theta0, tol, grid_points, t_end)
}

pub fn reference_trajectory_of<O: Objective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    tol: f64,
    grid_points: usize,
    t_end: f64,
) -> Result<Trajectory> {
    let mut cfg = IntegratorConfig::new(IntegratorMethod::Rosenbrock, t_end)
        .with_tol(tol)
        .with_grid(SaveGrid::Log { n_points: grid_points });
    cfg.max_steps = u64::MAX;
    integrate_objective(obj, theta0, &cfg)
}

fn check_dims(reference: &Trajectory, p: usize) -> Result<()> {
    if reference.is_empty() {
        return Err(Error::Shape("empty reference trajectory".into()));
    }
    if reference.param_count() != p {
        return Err(Error::Shape(format!(
            "reference has {} parameters, compared state has {p}",
            reference.param_count()
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Mean over the snapshots of `m` of the squared distance to the nearest
/// reference snapshot.
pub fn traj_distance(reference: &Trajectory, m: &Trajectory) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::Shape("empty compared trajectory".into()));
    }
    check_dims(reference, m.param_count())?;
    let mut total = 0.0;
    for s in &m.states {
        if s.len() != m.param_count() {
            return Err(Error::Shape("ragged compared trajectory".into()));
        }
        total += reference
            .states
            .iter()
            .map(|r| sq_dist(r, s))
            .fold(f64::INFINITY, f64::min);
    }
    Ok(total / m.len() as f64)
}

/// Reference grid time whose snapshot is nearest to `theta`; ties go to the
/// later time.
pub fn traj_progress(reference: &Trajectory, theta: &[f64]) -> Result<f64> {
    check_dims(reference, theta.len())?;
    let mut best = (f64::INFINITY, 0.0);
    for (t, s) in reference.times.iter().zip(&reference.states) {
        let d = sq_dist(s, theta);
        if d <= best.0 {
            best = (d, *t);
        }
    }
    Ok(best.1)
}

/// One integrator to benchmark: method plus tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchMethod {
    pub method: IntegratorMethod,
    #[serde(default = "default_bench_tol")]
    pub tol: f64,
}

fn default_bench_tol() -> f64 {
    1e-6
}

impl BenchMethod {
    pub fn new(method: IntegratorMethod, tol: f64) -> Self {
        Self { method, tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub method: String,
    pub seed: u64,
    pub budget_s: f64,
    pub d_m: f64,
    pub t_m: f64,
    pub final_loss: f64,
    pub steps: u64,
    pub rejected: u64,
    pub terminated_by: Termination,
    pub grid_points: usize,
    pub reference_grid_points: usize,
    pub error: Option<String>,
    /// Wall time of the run; the only field that differs between replays.
    pub wall_seconds: f64,
}

impl ComparisonRecord {
    pub fn cutoff(&self) -> Cutoff {
        Cutoff { steps: self.steps, terminated_by: self.terminated_by }
    }
}

/// Runs one method for `budget_s` seconds (or replays a stored cutoff) and
/// scores it against `reference`. Failures are recorded, not returned.
pub fn compare_run<O: Objective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    method: &BenchMethod,
    budget_s: f64,
    seed: u64,
    reference: &Trajectory,
    replay: Option<Cutoff>,
) -> ComparisonRecord {
    let t_end = reference.final_time();
    let mut cfg = IntegratorConfig::new(method.method, t_end)
        .with_tol(method.tol)
        .with_grid(SaveGrid::Times(log_grid(t_end, COMPARISON_GRID_POINTS)));
    cfg.max_steps = u64::MAX;
    cfg.wall_budget_seconds = Some(budget_s);
    cfg.replay = replay;
    let clock = std::time::Instant::now();
    let mut rec = ComparisonRecord {
        method: method.method.name().to_string(),
        seed,
        budget_s,
        d_m: f64::NAN,
        t_m: f64::NAN,
        final_loss: f64::NAN,
        steps: 0,
        rejected: 0,
        terminated_by: Termination::StepFailure,
        grid_points: 0,
        reference_grid_points: reference.len(),
        error: None,
        wall_seconds: 0.0,
    };
    let outcome = integrate_objective(obj, theta0, &cfg).and_then(|tr| {
        let d = traj_distance(reference, &tr)?;
        let t = traj_progress(reference, tr.final_state())?;
        Ok((tr, d, t))
    });
    match outcome {
        Ok((tr, d, t)) => {
            rec.d_m = d;
            rec.t_m = t;
            rec.final_loss = *tr.losses.last().expect("non-empty");
            rec.steps = tr.steps_accepted;
            rec.rejected = tr.steps_rejected;
            rec.terminated_by = tr.terminated_by;
            rec.grid_points = tr.len();
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec.wall_seconds = clock.elapsed().as_secs_f64();
    rec
}

/// One record per (method, budget), in method-major order.
#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    net: &Net,
    theta0: &[f64],
    data: &Dataset,
    loss_cfg: &LossConfig,
    methods: &[BenchMethod],
    budgets: &[f64],
    reference: &Trajectory,
    seed: u64,
) -> Result<Vec<ComparisonRecord>> {
    net.check_params(theta0)?;
    let problem = MlpProblem::new(net, data, *loss_cfg)?;
    Ok(benchmark_objective(&problem, theta0, methods, budgets, reference, seed, None))
}

/// As [`benchmark`]; with `replay` the stored cutoffs (same order as the
/// output) replace the wall clock.
pub fn benchmark_objective<O: Objective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    methods: &[BenchMethod],
    budgets: &[f64],
    reference: &Trajectory,
    seed: u64,
    replay: Option<&[Cutoff]>,
) -> Vec<ComparisonRecord> {
    let mut out = Vec::with_capacity(methods.len() * budgets.len());
    for m in methods {
        for &b in budgets {
            let cut = replay.and_then(|r| r.get(out.len()).copied());
            out.push(compare_run(obj, theta0, m, b, seed, reference, cut));
        }
    }
    out
}

pub const CSV_HEADER: [&str; 13] = [
    "method",
    "seed",
    "budget_s",
    "d_m",
    "t_m",
    "final_loss",
    "steps",
    "rejected",
    "terminated_by",
    "grid_points",
    "reference_grid_points",
    "error",
    "wall_seconds",
];

/// Writes records as CSV; `wall_seconds` is the only timing column.
pub fn write_records_csv<W: Write>(records: &[ComparisonRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Numerical(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        let term = serde_json::to_value(r.terminated_by).expect("enum serializes");
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.budget_s.to_string(),
            r.d_m.to_string(),
            r.t_m.to_string(),
            r.final_loss.to_string(),
            r.steps.to_string(),
            r.rejected.to_string(),
            term.as_str().unwrap_or_default().to_string(),
            r.grid_points.to_string(),
            r.reference_grid_points.to_string(),
            r.error.clone().unwrap_or_default(),
            r.wall_seconds.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Numerical(format!("csv: {e}")))?;
    Ok(())
}

/// Median of the finite values; `NaN` when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{normal_vec, ParamVector};
    use crate::objective::{EvalWork, Quadratic};
    use nalgebra::{DMatrix, DVector};

    fn toy(times: &[f64], states: &[f64]) -> Trajectory {
        Trajectory {
            method: "toy".into(),
            times: times.to_vec(),
            states: states.iter().map(|s| ParamVector(vec![*s])).collect(),
            losses: vec![0.0; times.len()],
            grad_norms: vec![0.0; times.len()],
            work: EvalWork::default(),
            terminated_by: Termination::ReachedT,
            steps_accepted: 0,
            steps_rejected: 0,
            abstol: None,
            reltol: None,
        }
    }

    #[test]
    fn distance_hand_examples() {
        let r = toy(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]);
        assert_eq!(traj_distance(&r, &r).unwrap(), 0.0);
        let m = toy(&[0.0, 1.0], &[0.4, 1.6]);
        assert!((traj_distance(&r, &m).unwrap() - 0.16).abs() < 1e-15);
        let rev = toy(&[0.0, 1.0], &[1.6, 0.4]);
        assert_eq!(traj_distance(&r, &m).unwrap(), traj_distance(&r, &rev).unwrap());
        let one = toy(&[0.0], &[2.0]);
        assert_eq!(traj_distance(&r, &one).unwrap(), 0.0);
    }

    #[test]
    fn progress_hand_examples() {
        let r = toy(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]);
        assert_eq!(traj_progress(&r, &[1.4]).unwrap(), 1.0);
        assert_eq!(traj_progress(&r, &[2.0]).unwrap(), 2.0);
        assert_eq!(traj_progress(&r, &[0.0]).unwrap(), 0.0);
        assert_eq!(traj_progress(&r, &[0.5]).unwrap(), 1.0);
        let flat = toy(&[0.0, 1.0, 2.0], &[3.0, 3.0, 3.0]);
        assert_eq!(traj_progress(&flat, &[3.0]).unwrap(), 2.0);
        assert!(traj_progress(&r, &[1.0, 2.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn progress_is_a_grid_time(states in proptest::collection::vec(-5.0f64..5.0, 1..20), x in -6.0f64..6.0) {
            let times: Vec<f64> = (0..states.len()).map(|i| i as f64 * 0.5).collect();
            let r = toy(&times, &states);
            let t = traj_progress(&r, &[x]).unwrap();
            proptest::prop_assert!(times.contains(&t));
        }

        #[test]
        fn distance_ignores_snapshot_order(
            states in proptest::collection::vec(-5.0f64..5.0, 2..20),
            m in proptest::collection::vec(-5.0f64..5.0, 1..10),
        ) {
            let times: Vec<f64> = (0..states.len()).map(|i| i as f64).collect();
            let r = toy(&times, &states);
            let mt: Vec<f64> = (0..m.len()).map(|i| i as f64).collect();
            let mut rev = m.clone();
            rev.reverse();
            let a = traj_distance(&r, &toy(&mt, &m)).unwrap();
            let b = traj_distance(&r, &toy(&mt, &rev)).unwrap();
            proptest::prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            proptest::prop_assert!(a >= 0.0);
        }
    }

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let b = DMatrix::from_row_slice(n, n, &normal_vec(n * n, seed, 1.0));
        &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn reference_matches_exact_flow() {
        let a = spd(4, 2);
        let q = Quadratic::homogeneous(a.clone());
        let y0 = normal_vec(4, 3, 1.0);
        let mut prev_err = f64::INFINITY;
        for tol in [1e-6, 1e-7, 1e-8] {
            let r = reference_trajectory_of(&q, &y0, tol, 200, 10.0).unwrap();
            assert_eq!(r.times[0], 0.0);
            assert_eq!(r.states[0].0, y0);
            assert_eq!(r.reltol, Some(tol));
            let eig = a.clone().symmetric_eigen();
            let mut worst: f64 = 0.0;
            for (t, s) in r.times.iter().zip(&r.states) {
                let decay = DVector::from_iterator(4, eig.eigenvalues.iter().map(|l| (-l * t).exp()));
                let exact = &eig.eigenvectors
                    * DMatrix::from_diagonal(&decay)
                    * eig.eigenvectors.transpose()
                    * DVector::from_column_slice(&y0);
                worst = worst.max(sq_dist(s, exact.as_slice()).sqrt());
            }
            assert!(worst <= 1e-5, "tol {tol}: {worst}");
            assert!(worst <= prev_err);
            prev_err = worst;
        }
    }

    #[test]
    fn equilibrium_start_scores_zero() {
        let q = Quadratic::homogeneous(spd(3, 1));
        let r = reference_trajectory_of(&q, &[0.0; 3], 1e-8, 100, 10.0).unwrap();
        let methods = [
            BenchMethod::new(IntegratorMethod::Euler { dt: 0.1 }, 1e-6),
            BenchMethod::new(IntegratorMethod::AdaptiveRk45, 1e-6),
            BenchMethod::new(IntegratorMethod::Rosenbrock, 1e-6),
        ];
        for rec in benchmark_objective(&q, &[0.0; 3], &methods, &[0.05], &r, 0, None) {
            assert_eq!(rec.d_m, 0.0);
            assert!(rec.error.is_none());
        }
    }

    #[test]
    fn replay_reproduces_records() {
        let q = Quadratic::homogeneous(spd(5, 4));
        let y0 = normal_vec(5, 5, 1.0);
        let r = reference_trajectory_of(&q, &y0, 1e-9, 300, 50.0).unwrap();
        let methods = [
            BenchMethod::new(IntegratorMethod::Euler { dt: 1e-3 }, 1e-6),
            BenchMethod::new(IntegratorMethod::AdaptiveRk45, 1e-6),
        ];
        let first = benchmark_objective(&q, &y0, &methods, &[0.002, 0.01], &r, 3, None);
        let cuts: Vec<Cutoff> = first.iter().map(|r| r.cutoff()).collect();
        let again = benchmark_objective(&q, &y0, &methods, &[0.002, 0.01], &r, 3, Some(&cuts));
        for (a, b) in first.iter().zip(&again) {
            let mut b = b.clone();
            b.wall_seconds = a.wall_seconds;
            assert_eq!(a, &b);
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_records_csv(&first, &mut x).unwrap();
        write_records_csv(&again, &mut y).unwrap();
        let strip = |v: &[u8]| -> Vec<String> {
            String::from_utf8(v.to_vec())
                .unwrap()
                .lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect()
        };
        assert_eq!(strip(&x), strip(&y));
        assert!(String::from_utf8(x).unwrap().starts_with("method,seed,budget_s,d_m,t_m,final_loss"));
    }

    #[test]
    fn median_of_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
