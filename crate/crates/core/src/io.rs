//! Parameter vectors, trajectories and run records on disk.
//!
//! Floats are stored as little-endian `f64`. A parameter file `x.bin` has a
//! JSON sidecar `x.bin.json`; a trajectory is a directory holding
//! `manifest.json`, `scalars.csv` and `states.bin`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{Net, ParamVector};
use crate::objective::EvalWork;
use crate::ode::{Termination, Trajectory};

pub const LAYOUT_VERSION: u32 = 1;

/// JSON keys and CSV columns that hold timings.
pub const TIMING_KEYS: [&str; 2] = ["cpu_seconds", "wall_seconds"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsMeta {
    pub layout_version: u32,
    pub len: usize,
    pub net: Option<Net>,
    pub seed: Option<u64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn f64s_to_le(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn le_to_f64s(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::format(path, format!("{} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save_params(theta: &[f64], net: Option<&Net>, seed: Option<u64>, path: &Path) -> Result<()> {
    if let Some(net) = net {
        net.check_params(theta)?;
    }
    write_bytes(path, &f64s_to_le(theta.iter().copied()))?;
    let meta = ParamsMeta {
        layout_version: LAYOUT_VERSION,
        len: theta.len(),
        net: net.cloned(),
        seed,
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn load_params(path: &Path) -> Result<(ParamVector, ParamsMeta)> {
    let side = sidecar_path(path);
    let meta: ParamsMeta = read_json(&side)?;
    if meta.layout_version != LAYOUT_VERSION {
        return Err(Error::format(
            &side,
            format!("layout version {} (expected {LAYOUT_VERSION})", meta.layout_version),
        ));
    }
    let values = le_to_f64s(path, &read_bytes(path)?)?;
    if values.len() != meta.len {
        return Err(Error::format(
            path,
            format!("length mismatch: file holds {} values, sidecar says {}", values.len(), meta.len),
        ));
    }
    Ok((ParamVector(values), meta))
}

/// Loads parameters and checks them against `net`.
pub fn load_params_for(path: &Path, net: &Net) -> Result<ParamVector> {
    let (theta, meta) = load_params(path)?;
    if let Some(shape) = &meta.net {
        if shape != net {
            return Err(Error::format(path, "sidecar net shape differs from the target net"));
        }
    }
    if theta.len() != net.param_count() {
        return Err(Error::format(
            path,
            format!("{} parameters, net expects {}", theta.len(), net.param_count()),
        ));
    }
    Ok(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    layout_version: u32,
    method: String,
    len: usize,
    param_count: usize,
    terminated_by: Termination,
    steps_accepted: u64,
    steps_rejected: u64,
    abstol: Option<f64>,
    reltol: Option<f64>,
    work: EvalWork,
    sha256: BTreeMap<String, String>,
}

const SCALARS: &str = "scalars.csv";
const STATES: &str = "states.bin";
const MANIFEST: &str = "manifest.json";

pub fn save_trajectory(traj: &Trajectory, dir: &Path) -> Result<()> {
    let p = traj.param_count();
    if traj.states.iter().any(|s| s.len() != p)
        || traj.losses.len() != traj.len()
        || traj.grad_norms.len() != traj.len()
    {
        return Err(Error::Shape("ragged trajectory".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format(dir.join(SCALARS), e.to_string());
    w.write_record(["t", "loss", "grad_norm"]).map_err(csv_err)?;
    for i in 0..traj.len() {
        w.write_record([
            traj.times[i].to_string(),
            traj.losses[i].to_string(),
            traj.grad_norms[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    let scalars = w.into_inner().map_err(|e| Error::format(dir.join(SCALARS), e.to_string()))?;
    let states = f64s_to_le(traj.states.iter().flat_map(|s| s.iter().copied()));
    write_bytes(&dir.join(SCALARS), &scalars)?;
    write_bytes(&dir.join(STATES), &states)?;
    let manifest = Manifest {
        layout_version: LAYOUT_VERSION,
        method: traj.method.clone(),
        len: traj.len(),
        param_count: p,
        terminated_by: traj.terminated_by,
        steps_accepted: traj.steps_accepted,
        steps_rejected: traj.steps_rejected,
        abstol: traj.abstol,
        reltol: traj.reltol,
        work: traj.work,
        sha256: BTreeMap::from([
            (SCALARS.to_string(), sha256_hex(&scalars)),
            (STATES.to_string(), sha256_hex(&states)),
        ]),
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::format(path, format!("not a number: `{s}`")))
}

pub fn load_trajectory(dir: &Path) -> Result<Trajectory> {
    let mpath = dir.join(MANIFEST);
    let m: Manifest = read_json(&mpath)?;
    if m.layout_version != LAYOUT_VERSION {
        return Err(Error::format(&mpath, format!("layout version {}", m.layout_version)));
    }
    let mut files = BTreeMap::new();
    for name in [SCALARS, STATES] {
        let path = dir.join(name);
        let bytes = read_bytes(&path)?;
        let expected = m
            .sha256
            .get(name)
            .ok_or_else(|| Error::format(&mpath, format!("no hash for {name}")))?;
        if &sha256_hex(&bytes) != expected {
            return Err(Error::format(&path, "sha256 does not match the manifest"));
        }
        files.insert(name, bytes);
    }
    let spath = dir.join(SCALARS);
    let mut r = csv::Reader::from_reader(files[SCALARS].as_slice());
    let (mut times, mut losses, mut grad_norms) = (Vec::new(), Vec::new(), Vec::new());
    for row in r.records() {
        let row = row.map_err(|e| Error::format(&spath, e.to_string()))?;
        if row.len() != 3 {
            return Err(Error::format(&spath, "expected 3 columns"));
        }
        times.push(parse_f64(&spath, &row[0])?);
        losses.push(parse_f64(&spath, &row[1])?);
        grad_norms.push(parse_f64(&spath, &row[2])?);
    }
    let flat = le_to_f64s(&dir.join(STATES), &files[STATES])?;
    if times.len() != m.len || flat.len() != m.len * m.param_count {
        return Err(Error::format(dir, "component sizes disagree with the manifest"));
    }
    let states = if m.param_count == 0 {
        vec![ParamVector::default(); m.len]
    } else {
        flat.chunks_exact(m.param_count).map(|c| ParamVector(c.to_vec())).collect()
    };
    Ok(Trajectory {
        method: m.method,
        times,
        states,
        losses,
        grad_norms,
        work: m.work,
        terminated_by: m.terminated_by,
        steps_accepted: m.steps_accepted,
        steps_rejected: m.steps_rejected,
        abstol: m.abstol,
        reltol: m.reltol,
    })
}

/// Loads a trajectory and checks its parameter count against `net`.
pub fn load_trajectory_for(dir: &Path, net: &Net) -> Result<Trajectory> {
    let t = load_trajectory(dir)?;
    if t.param_count() != net.param_count() {
        return Err(Error::format(
            dir,
            format!("trajectory has {} parameters, net has {}", t.param_count(), net.param_count()),
        ));
    }
    Ok(t)
}

/// Removes timing keys from a JSON value, recursively.
pub fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            for k in TIMING_KEYS {
                map.remove(k);
            }
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn csv_without_timing(path: &Path, bytes: &[u8]) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    let mut rows = Vec::new();
    let mut keep: Vec<bool> = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        if i == 0 {
            keep = row.iter().map(|h| !TIMING_KEYS.contains(&h)).collect();
        }
        rows.push(
            row.iter()
                .zip(keep.iter().chain(std::iter::repeat(&true)))
                .filter(|(_, k)| **k)
                .map(|(c, _)| c.to_string())
                .collect(),
        );
    }
    Ok(rows)
}

/// Files below `root` as sorted relative paths.
pub fn files_under(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Relative paths of files that differ between two output directories once
/// timing keys and columns are ignored. Files present in only one directory
/// count as differing.
pub fn diff_outputs(a: &Path, b: &Path) -> Result<Vec<PathBuf>> {
    let fa = files_under(a)?;
    let fb = files_under(b)?;
    let mut diff: Vec<PathBuf> = fa.iter().filter(|f| !fb.contains(f)).cloned().collect();
    diff.extend(fb.iter().filter(|f| !fa.contains(f)).cloned());
    for rel in fa.iter().filter(|f| fb.contains(f)) {
        let (pa, pb) = (a.join(rel), b.join(rel));
        let (ba, bb) = (read_bytes(&pa)?, read_bytes(&pb)?);
        let same = match rel.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                let parse = |p: &Path, bytes: &[u8]| -> Result<serde_json::Value> {
                    let mut v: serde_json::Value =
                        serde_json::from_slice(bytes).map_err(|e| Error::format(p, e.to_string()))?;
                    strip_timing(&mut v);
                    Ok(v)
                };
                parse(&pa, &ba)? == parse(&pb, &bb)?
            }
            Some("csv") => csv_without_timing(&pa, &ba)? == csv_without_timing(&pb, &bb)?,
            _ => ba == bb,
        };
        if !same {
            diff.push(rel.clone());
        }
    }
    diff.sort();
    Ok(diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;
    use crate::net::init_params;

    fn net() -> Net {
        Net::chain(&[2, 3, 1], ActivationKind::Tanh, true).unwrap()
    }

    #[test]
    fn params_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.bin");
        let mut theta = init_params(&net(), 4, 1.0).unwrap();
        theta[0] = f64::MIN_POSITIVE / 3.0;
        theta[1] = -0.0;
        save_params(&theta, Some(&net()), Some(4), &path).unwrap();
        let (back, meta) = load_params(&path).unwrap();
        assert!(back.iter().zip(theta.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(meta.seed, Some(4));
        assert_eq!(load_params_for(&path, &net()).unwrap(), theta);
    }

    #[test]
    fn params_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.bin");
        let theta = init_params(&net(), 1, 1.0).unwrap();
        save_params(&theta, Some(&net()), None, &path).unwrap();

        let other = Net::chain(&[2, 4, 1], ActivationKind::Tanh, true).unwrap();
        assert!(load_params_for(&path, &other).is_err());

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let msg = load_params(&path).unwrap_err().to_string();
        assert!(msg.contains("length mismatch"), "{msg}");
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_params(&path).is_err());

        fs::write(&path, &bytes).unwrap();
        let side = sidecar_path(&path);
        let text = fs::read_to_string(&side).unwrap().replace("\"layout_version\": 1", "\"layout_version\": 7");
        fs::write(&side, text).unwrap();
        assert!(load_params(&path).unwrap_err().to_string().contains("layout version"));

        let missing = dir.path().join("nope.bin");
        assert!(load_params(&missing).unwrap_err().to_string().contains("nope.bin"));
    }

    fn traj(n: usize, p: usize) -> Trajectory {
        Trajectory {
            method: "rosenbrock".into(),
            times: (0..n).map(|i| i as f64 * 0.1).collect(),
            states: (0..n).map(|i| ParamVector((0..p).map(|j| (i * p + j) as f64 / 7.0).collect())).collect(),
            losses: (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect(),
            grad_norms: (0..n).map(|i| (i as f64).sqrt() / 3.0).collect(),
            work: EvalWork { n_loss: 1, n_grad: 2, n_hess: 3, cpu_seconds: 0.125 },
            terminated_by: Termination::Budget,
            steps_accepted: 40,
            steps_rejected: 2,
            abstol: Some(1e-6),
            reltol: Some(1e-6),
        }
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = traj(100, 17);
        save_trajectory(&t, dir.path()).unwrap();
        assert_eq!(load_trajectory(dir.path()).unwrap(), t);
    }

    #[test]
    fn trajectory_errors() {
        let dir = tempfile::tempdir().unwrap();
        save_trajectory(&traj(10, net().param_count()), dir.path()).unwrap();
        assert!(load_trajectory_for(dir.path(), &net()).is_ok());
        let other = Net::chain(&[2, 4, 1], ActivationKind::Tanh, true).unwrap();
        assert!(load_trajectory_for(dir.path(), &other).is_err());

        let states = dir.path().join(STATES);
        let mut bytes = fs::read(&states).unwrap();
        bytes[3] ^= 1;
        fs::write(&states, &bytes).unwrap();
        assert!(load_trajectory(dir.path()).unwrap_err().to_string().contains("sha256"));

        fs::remove_file(&states).unwrap();
        assert!(load_trajectory(dir.path()).unwrap_err().to_string().contains(STATES));
    }

    #[test]
    fn diff_ignores_timing() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_json(&a.path().join("r.json"), &serde_json::json!({"x": 1, "work": {"cpu_seconds": 1.0}})).unwrap();
        write_json(&b.path().join("r.json"), &serde_json::json!({"x": 1, "work": {"cpu_seconds": 2.0}})).unwrap();
        write_bytes(&a.path().join("t.csv"), b"m,d,wall_seconds\nx,1,0.5\n").unwrap();
        write_bytes(&b.path().join("t.csv"), b"m,d,wall_seconds\nx,1,0.7\n").unwrap();
        assert!(diff_outputs(a.path(), b.path()).unwrap().is_empty());
        write_bytes(&b.path().join("t.csv"), b"m,d,wall_seconds\nx,2,0.7\n").unwrap();
        assert_eq!(diff_outputs(a.path(), b.path()).unwrap(), vec![PathBuf::from("t.csv")]);
        write_bytes(&a.path().join("only.bin"), b"1").unwrap();
        assert_eq!(diff_outputs(a.path(), b.path()).unwrap().len(), 2);
    }
}
