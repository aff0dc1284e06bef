//! Static problem instance: users, files, demands and caches.
//!
//! Users and files are zero-based indices. File payloads are never
//! materialized; XOR coding is tracked at the level of file-index sets.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WeicError};

/// System-wide parameters. Noise power is fixed at one. Missing fields take
/// their defaults when deserializing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    /// Number of users.
    #[serde(rename = "K")]
    pub k: usize,
    /// Library size.
    #[serde(rename = "N")]
    pub n: usize,
    /// Antennas per user.
    #[serde(rename = "Nt")]
    pub nt: usize,
    /// Per-user transmit power budget (linear).
    #[serde(rename = "P")]
    pub p: f64,
    /// File size in bits.
    #[serde(rename = "B")]
    pub b: f64,
    /// System bandwidth in Hz.
    #[serde(rename = "W")]
    pub w: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            k: 5,
            n: 10,
            nt: 4,
            p: 1.0,
            b: 1e5,
            w: 1.0,
        }
    }
}

impl SystemConfig {
    pub const NOISE_POWER: f64 = 1.0;

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(WeicError::InvalidConfig(m.to_string()));
        if self.k < 2 {
            return fail("K must be at least 2");
        }
        if self.n < self.k {
            return fail("N must be at least K");
        }
        if self.nt < 1 {
            return fail("Nt must be at least 1");
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return fail("P must be positive and finite");
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return fail("B must be positive and finite");
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return fail("W must be positive and finite");
        }
        Ok(())
    }

    /// Transmit SNR in dB (unit noise).
    pub fn snr_db(&self) -> f64 {
        10.0 * self.p.log10()
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.p = 10f64.powf(snr_db / 10.0);
        self
    }
}

/// A demand/cache instance. Fields are public so that malformed instances
/// can be built and reported by [`Scenario::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SystemConfig,
    pub demands: Vec<usize>,
    pub caches: Vec<BTreeSet<usize>>,
}

/// One violated scenario invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Config(String),
    DemandCount { expected: usize, found: usize },
    CacheCount { expected: usize, found: usize },
    DemandOutOfRange { user: usize, file: usize },
    CachedFileOutOfRange { user: usize, file: usize },
    DistinctDemands { first: usize, second: usize },
    OwnDemandCached { user: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Config(m) => write!(f, "config: {m}"),
            Violation::DemandCount { expected, found } => {
                write!(f, "demand count: expected {expected}, found {found}")
            }
            Violation::CacheCount { expected, found } => {
                write!(f, "cache count: expected {expected}, found {found}")
            }
            Violation::DemandOutOfRange { user, file } => {
                write!(f, "demand out of range: user {user} requests file {file}")
            }
            Violation::CachedFileOutOfRange { user, file } => {
                write!(f, "cached file out of range: user {user} caches file {file}")
            }
            Violation::DistinctDemands { first, second } => {
                write!(f, "distinct demands: users {first} and {second} request the same file")
            }
            Violation::OwnDemandCached { user } => {
                write!(f, "own demand cached: user {user}")
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ScenarioWire {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "Nt")]
    nt: usize,
    #[serde(rename = "P")]
    p: f64,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "W")]
    w: f64,
    demands: Vec<usize>,
    caches: Vec<Vec<usize>>,
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ScenarioWire {
            k: self.config.k,
            n: self.config.n,
            nt: self.config.nt,
            p: self.config.p,
            b: self.config.b,
            w: self.config.w,
            demands: self.demands.clone(),
            caches: self.caches.iter().map(|c| c.iter().copied().collect()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = ScenarioWire::deserialize(d)?;
        Ok(Scenario {
            config: SystemConfig {
                k: w.k,
                n: w.n,
                nt: w.nt,
                p: w.p,
                b: w.b,
                w: w.w,
            },
            demands: w.demands,
            caches: w.caches.into_iter().map(|c| c.into_iter().collect()).collect(),
        })
    }
}

impl Scenario {
    /// Builds a scenario and rejects it if any invariant is violated.
    pub fn new(config: SystemConfig, demands: Vec<usize>, caches: Vec<BTreeSet<usize>>) -> Result<Self> {
        let s = Scenario {
            config,
            demands,
            caches,
        };
        s.check()?;
        Ok(s)
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn caches_file(&self, user: usize, file: usize) -> bool {
        self.caches[user].contains(&file)
    }

    /// Reports every violated invariant. An empty list means the scenario is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let cfg = &self.config;
        if let Err(WeicError::InvalidConfig(m)) = cfg.validate() {
            out.push(Violation::Config(m));
        }
        if self.demands.len() != cfg.k {
            out.push(Violation::DemandCount {
                expected: cfg.k,
                found: self.demands.len(),
            });
        }
        if self.caches.len() != cfg.k {
            out.push(Violation::CacheCount {
                expected: cfg.k,
                found: self.caches.len(),
            });
        }
        for (user, &file) in self.demands.iter().enumerate() {
            if file >= cfg.n {
                out.push(Violation::DemandOutOfRange { user, file });
            }
        }
        for first in 0..self.demands.len() {
            for second in first + 1..self.demands.len() {
                if self.demands[first] == self.demands[second] {
                    out.push(Violation::DistinctDemands { first, second });
                }
            }
        }
        for (user, cache) in self.caches.iter().enumerate() {
            for &file in cache.iter().filter(|&&f| f >= cfg.n) {
                out.push(Violation::CachedFileOutOfRange { user, file });
            }
            if self.demands.get(user).is_some_and(|d| cache.contains(d)) {
                out.push(Violation::OwnDemandCached { user });
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
            Err(WeicError::InfeasibleScenario(msg.join("; ")))
        }
    }

    /// Mean cache size, `||M||_1 / K`.
    pub fn load(&self) -> f64 {
        let total: usize = self.caches.iter().map(BTreeSet::len).sum();
        total as f64 / self.caches.len().max(1) as f64
    }

    pub fn side_info_graph(&self) -> SideInfoGraph {
        side_info_graph(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario =
            serde_json::from_str(s).map_err(|e| WeicError::InvalidConfig(format!("scenario JSON: {e}")))?;
        sc.check()?;
        Ok(sc)
    }
}

/// Draws a scenario with `round(files_per_user)` cached files per user.
///
/// Demands are drawn first (distinct, uniform); each cache is a prefix of a
/// seeded permutation of the files other than the owner's demand, so raising
/// the load under the same seed only ever adds files to a cache.
pub fn generate_scenario(seed: u64, config: SystemConfig, files_per_user: f64) -> Result<Scenario> {
    config.validate()?;
    if !(files_per_user.is_finite() && files_per_user >= 0.0) {
        return Err(WeicError::InvalidConfig(format!(
            "computation load must be finite and nonnegative, got {files_per_user}"
        )));
    }
    let cache_size = files_per_user.round() as usize;
    if cache_size > config.n - 1 {
        return Err(WeicError::InfeasibleScenario(format!(
            "load {files_per_user} needs {cache_size} cached files per user but only {} files differ from each demand",
            config.n - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let demands: Vec<usize> = index::sample(&mut rng, config.n, config.k).into_vec();
    let caches = demands
        .iter()
        .map(|&d| {
            let mut others: Vec<usize> = (0..config.n).filter(|&f| f != d).collect();
            others.shuffle(&mut rng);
            others.truncate(cache_size);
            others.into_iter().collect()
        })
        .collect();
    Scenario::new(config, demands, caches)
}

/// Directed side-information graph: `adjacency[i][j] == 1` iff user `i`
/// caches the demand of user `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideInfoGraph {
    pub adjacency: Vec<Vec<u8>>,
}

pub fn side_info_graph(s: &Scenario) -> SideInfoGraph {
    let k = s.demands.len();
    let adjacency = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| u8::from(i != j && s.caches_file(i, s.demands[j])))
                .collect()
        })
        .collect();
    SideInfoGraph { adjacency }
}

impl SideInfoGraph {
    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adjacency[from][to] == 1
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::two_user_xor;

    fn cfg(k: usize, n: usize) -> SystemConfig {
        SystemConfig {
            k,
            n,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn generated_scenario_has_requested_cache_size() {
        let s = generate_scenario(1, cfg(5, 10), 4.0).unwrap();
        assert!(s.validate().is_empty());
        assert!(s.caches.iter().all(|c| c.len() == 4));
        let distinct: BTreeSet<_> = s.demands.iter().collect();
        assert_eq!(distinct.len(), 5);
        assert_eq!(s.load(), 4.0);
    }

    #[test]
    fn zero_load_gives_empty_caches() {
        let s = generate_scenario(3, cfg(4, 6), 0.0).unwrap();
        assert!(s.caches.iter().all(BTreeSet::is_empty));
        let g = side_info_graph(&s);
        assert!(g.adjacency.iter().flatten().all(|&x| x == 0));
    }

    #[test]
    fn excessive_load_is_an_error() {
        let err = generate_scenario(3, cfg(4, 6), 6.0).unwrap_err();
        assert!(matches!(err, WeicError::InfeasibleScenario(_)));
        // N - 1 still fits
        assert!(generate_scenario(3, cfg(4, 6), 5.0).is_ok());
    }

    #[test]
    fn two_user_example_graph() {
        let g = side_info_graph(&two_user_xor());
        assert_eq!(g.adjacency, vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn violations_are_reported() {
        let mut s = two_user_xor();
        assert!(s.validate().is_empty());
        s.demands = vec![1, 1];
        let v = s.validate();
        assert!(v.contains(&Violation::DistinctDemands { first: 0, second: 1 }));
        assert!(v.iter().any(|x| x.to_string().contains("distinct demands")));

        let mut s = two_user_xor();
        s.caches[0].insert(0);
        let v = s.validate();
        assert_eq!(v, vec![Violation::OwnDemandCached { user: 0 }]);
        assert!(v[0].to_string().contains("own demand cached"));
    }

    #[test]
    fn json_uses_canonical_keys() {
        let s = two_user_xor();
        let j = s.to_json();
        assert_eq!(
            j,
            r#"{"K":2,"N":2,"Nt":4,"P":1.0,"B":100000.0,"W":1.0,"demands":[0,1],"caches":[[1],[0]]}"#
        );
        assert_eq!(Scenario::from_json(&j).unwrap(), s);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario(42, cfg(5, 10), 3.0).unwrap();
        let b = generate_scenario(42, cfg(5, 10), 3.0).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }
}
