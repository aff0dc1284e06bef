//! Reproducible experiment sweeps.
//!
//! Every sweep point runs the same list of seeds: the first `trials` seeds
//! (counting up from `seed_base`) whose scenarios admit a feasible code at
//! every point of the sweep. Trials run in parallel and are written sorted by
//! point, seed and method, so the CSV bytes depend only on the config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::sample_channels;
use crate::eic::enumerate_feasible_eics;
use crate::error::{Result, WeicError};
use crate::joint::{exhaustive_search, sequential_optimize, JointParams};
use crate::model::{generate_scenario, Scenario, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Snr,
    Users,
    Load,
    Cluster,
}

impl SweepKind {
    pub fn axis(self) -> &'static str {
        match self {
            SweepKind::Snr => "snr_db",
            SweepKind::Users | SweepKind::Cluster => "users",
            SweepKind::Load => "load",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Snr => "snr",
            SweepKind::Users => "users",
            SweepKind::Load => "load",
            SweepKind::Cluster => "cluster",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = WeicError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(SweepKind::Snr),
            "users" => Ok(SweepKind::Users),
            "load" => Ok(SweepKind::Load),
            "cluster" => Ok(SweepKind::Cluster),
            _ => Err(WeicError::InvalidConfig(format!("unknown sweep kind {s:?}"))),
        }
    }
}

/// Result columns. `marl-eval` is produced by the external trainer and is
/// always written as an absent cell here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exhaustive,
    ClusteredExhaustive,
    Sequential,
    MarlEval,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Exhaustive => "exhaustive",
            Method::ClusteredExhaustive => "clustered-exhaustive",
            Method::Sequential => "sequential",
            Method::MarlEval => "marl-eval",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = WeicError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Method::Exhaustive),
            "clustered-exhaustive" => Ok(Method::ClusteredExhaustive),
            "sequential" => Ok(Method::Sequential),
            "marl-eval" => Ok(Method::MarlEval),
            _ => Err(WeicError::InvalidConfig(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub system: SystemConfig,
    /// Cached files per user, for every kind but `load`.
    pub files_per_user: f64,
    pub trials: usize,
    pub seed_base: u64,
    /// Give up after this many infeasible seeds.
    pub max_seed_scan: u64,
    pub snr_db: Vec<f64>,
    pub users: Vec<usize>,
    pub loads: Vec<f64>,
    pub cluster_users: Vec<usize>,
    pub cluster_size: usize,
    pub methods: Vec<Method>,
    pub joint: JointParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            kind: SweepKind::Snr,
            system: SystemConfig::default(),
            files_per_user: 4.0,
            trials: 30,
            seed_base: 0,
            max_seed_scan: 100_000,
            snr_db: vec![-10.0, 0.0, 10.0, 20.0],
            users: vec![4, 5, 6, 10, 20, 30],
            loads: vec![2.0, 3.0, 4.0, 5.0, 6.0],
            cluster_users: vec![10, 20, 30],
            cluster_size: 5,
            methods: vec![Method::Exhaustive, Method::ClusteredExhaustive, Method::Sequential, Method::MarlEval],
            joint: JointParams::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.joint.solver.validate()?;
        if self.trials == 0 {
            return Err(WeicError::InvalidConfig("trials must be positive".into()));
        }
        if self.cluster_size < 2 {
            return Err(WeicError::InvalidConfig("clusters need at least two users".into()));
        }
        let ok = match self.kind {
            SweepKind::Snr => !self.snr_db.is_empty(),
            SweepKind::Users => !self.users.is_empty(),
            SweepKind::Load => !self.loads.is_empty(),
            SweepKind::Cluster => !self.cluster_users.is_empty(),
        };
        if !ok {
            return Err(WeicError::InvalidConfig(format!("empty grid for {} sweep", self.kind.name())));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn points(&self) -> Vec<f64> {
        match self.kind {
            SweepKind::Snr => self.snr_db.clone(),
            SweepKind::Users => self.users.iter().map(|&k| k as f64).collect(),
            SweepKind::Load => self.loads.clone(),
            SweepKind::Cluster => self.cluster_users.iter().map(|&k| k as f64).collect(),
        }
    }
}

/// One `(point, seed, method)` result; `total_time` is `None` for absent
/// cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub x: f64,
    pub seed: u64,
    pub method: Method,
    pub total_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub x: f64,
    pub method: Method,
    pub trials: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: SweepKind,
    pub config_sha256: String,
    pub provenance: String,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
    pub config: SweepConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub trials: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
    pub manifest: Manifest,
}

/// Independent per-cluster seed derived from a trial seed.
pub fn cluster_seed(seed: u64, cluster: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 + cluster as u64);
    rng.next_u64()
}

/// A setting in which one trial is run: the system and load, plus whether the
/// users are split into clusters.
#[derive(Debug, Clone, Copy)]
struct Point {
    x: f64,
    system: SystemConfig,
    load: f64,
    clustered: bool,
}

fn points(cfg: &SweepConfig) -> Vec<Point> {
    let base = cfg.system;
    let limit = cfg.joint.max_users;
    cfg.points()
        .into_iter()
        .map(|x| match cfg.kind {
            SweepKind::Snr => Point {
                x,
                system: base.with_snr_db(x),
                load: cfg.files_per_user,
                clustered: false,
            },
            SweepKind::Load => Point {
                x,
                system: base,
                load: x,
                clustered: false,
            },
            SweepKind::Users | SweepKind::Cluster => {
                let k = x as usize;
                let clustered = cfg.kind == SweepKind::Cluster || k > limit;
                Point {
                    x,
                    system: SystemConfig {
                        k,
                        n: base.n.max(2 * k),
                        ..base
                    },
                    load: cfg.files_per_user,
                    clustered,
                }
            }
        })
        .collect()
}

fn cluster_config(p: &Point, cfg: &SweepConfig) -> SystemConfig {
    SystemConfig {
        k: cfg.cluster_size,
        n: cfg.system.n.max(cfg.cluster_size),
        ..p.system
    }
}

/// The scenarios of one trial: one for the whole system, or one per cluster.
fn trial_scenarios(p: &Point, cfg: &SweepConfig, seed: u64) -> Result<Vec<(u64, Scenario)>> {
    if !p.clustered {
        return Ok(vec![(seed, generate_scenario(seed, p.system, p.load)?)]);
    }
    if !p.system.k.is_multiple_of(cfg.cluster_size) {
        return Err(WeicError::InvalidConfig(format!(
            "{} users do not split into clusters of {}",
            p.system.k, cfg.cluster_size
        )));
    }
    let sys = cluster_config(p, cfg);
    (0..p.system.k / cfg.cluster_size)
        .map(|c| {
            let cs = cluster_seed(seed, c);
            generate_scenario(cs, sys, p.load).map(|s| (cs, s))
        })
        .collect()
}

fn feasible(s: &Scenario) -> bool {
    enumerate_feasible_eics(s).next().is_some()
}

/// The first `trials` seeds feasible at every point in `pts`.
fn select_seeds(pts: &[Point], cfg: &SweepConfig) -> Result<Vec<u64>> {
    let mut seeds = Vec::with_capacity(cfg.trials);
    let mut seed = cfg.seed_base;
    let end = cfg.seed_base.saturating_add(cfg.max_seed_scan);
    while seeds.len() < cfg.trials {
        if seed >= end {
            return Err(WeicError::InfeasibleScenario(format!(
                "only {} feasible seeds in [{}, {end})",
                seeds.len(),
                cfg.seed_base
            )));
        }
        let mut ok = true;
        for p in pts {
            if !trial_scenarios(p, cfg, seed)?.iter().all(|(_, s)| feasible(s)) {
                ok = false;
                break;
            }
        }
        if ok {
            seeds.push(seed);
        }
        seed += 1;
    }
    Ok(seeds)
}

fn run_trial(p: &Point, cfg: &SweepConfig, seed: u64) -> Result<Vec<TrialRow>> {
    let scenarios = trial_scenarios(p, cfg, seed)?;
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let time = match (method, p.clustered) {
            (Method::MarlEval, _) => None,
            (Method::Exhaustive, true) => None,
            (Method::ClusteredExhaustive, false) => None,
            (Method::Exhaustive, false) | (Method::ClusteredExhaustive, true) => {
                if p.system.k > cfg.joint.max_users && !p.clustered {
                    None
                } else {
                    let mut total = 0.0;
                    for (cs, s) in &scenarios {
                        total += exhaustive_search(s, &sample_channels(*cs, &s.config), &cfg.joint)?.total_time;
                    }
                    Some(total)
                }
            }
            (Method::Sequential, _) => {
                let mut total = 0.0;
                for (cs, s) in &scenarios {
                    total += sequential_optimize(s, &sample_channels(*cs, &s.config), &cfg.joint)?.total_time;
                }
                Some(total)
            }
        };
        rows.push(TrialRow {
            x: p.x,
            seed,
            method,
            total_time: time,
        });
    }
    Ok(rows)
}

fn summarize(trials: &[TrialRow], pts: &[Point], methods: &[Method]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for p in pts {
        for &m in methods {
            let xs: Vec<f64> = trials
                .iter()
                .filter(|r| r.x == p.x && r.method == m)
                .filter_map(|r| r.total_time)
                .collect();
            let n = xs.len();
            let (mean, std) = if n == 0 {
                (None, None)
            } else {
                let mean = xs.iter().sum::<f64>() / n as f64;
                let var = if n > 1 {
                    xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                } else {
                    0.0
                };
                (Some(mean), Some(var.sqrt()))
            };
            out.push(SummaryRow {
                x: p.x,
                method: m,
                trials: n,
                mean,
                std,
            });
        }
    }
    out
}

pub fn file_names(kind: SweepKind) -> [String; 3] {
    let k = kind.name();
    [format!("{k}_trials.csv"), format!("{k}_summary.csv"), format!("{k}_manifest.json")]
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let pts = points(cfg);
    let seeds = select_seeds(&pts, cfg)?;
    let jobs: Vec<(Point, u64)> = pts.iter().flat_map(|p| seeds.iter().map(move |&s| (*p, s))).collect();
    let nested: Vec<Vec<TrialRow>> = jobs
        .par_iter()
        .map(|(p, s)| run_trial(p, cfg, *s))
        .collect::<Result<_>>()?;
    let trials: Vec<TrialRow> = nested.into_iter().flatten().collect();
    let summary = summarize(&trials, &pts, &cfg.methods);
    let manifest = Manifest {
        kind: cfg.kind,
        config_sha256: cfg.hash(),
        provenance: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        seeds,
        files: file_names(cfg.kind).to_vec(),
        config: cfg.clone(),
    };
    Ok(SweepOutput {
        trials,
        summary,
        manifest,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepOutput {
    pub fn trials_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([self.manifest.kind.axis(), "seed", "method", "total_time"])
            .map_err(csv_err)?;
        for r in &self.trials {
            w.write_record([r.x.to_string(), r.seed.to_string(), r.method.name().to_string(), cell(r.total_time)])
                .map_err(csv_err)?;
        }
        finish(w)
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([self.manifest.kind.axis(), "method", "trials", "mean_time", "std_time"])
            .map_err(csv_err)?;
        for r in &self.summary {
            w.write_record([
                r.x.to_string(),
                r.method.name().to_string(),
                r.trials.to_string(),
                cell(r.mean),
                cell(r.std),
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }

    /// Writes the two CSVs and the manifest into `dir`, returning their paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let [trials, summary, manifest] = file_names(self.manifest.kind);
        let manifest_json = serde_json::to_string_pretty(&self.manifest).map_err(|e| WeicError::Internal(e.to_string()))? + "\n";
        let files = [(trials, self.trials_csv()?), (summary, self.summary_csv()?), (manifest, manifest_json)];
        let mut paths = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io_err)?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// Mean time of `method` at every point, in grid order.
    pub fn means(&self, method: Method) -> Vec<Option<f64>> {
        self.summary.iter().filter(|r| r.method == method).map(|r| r.mean).collect()
    }
}

fn csv_err(e: csv::Error) -> WeicError {
    WeicError::Internal(format!("csv: {e}"))
}

fn io_err(e: std::io::Error) -> WeicError {
    WeicError::Internal(format!("io: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| WeicError::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| WeicError::Internal(e.to_string()))
}
