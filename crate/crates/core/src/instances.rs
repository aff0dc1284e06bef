//! Small hand-built instances used throughout tests and examples.

use std::collections::BTreeSet;

use crate::model::{Scenario, SystemConfig};

/// Two users, each caching the other's demand: user 0 wants file 0 and holds
/// file 1, user 1 wants file 1 and holds file 0.
pub fn two_user_xor() -> Scenario {
    let config = SystemConfig {
        k: 2,
        n: 2,
        ..SystemConfig::default()
    };
    Scenario::new(config, vec![0, 1], vec![BTreeSet::from([1]), BTreeSet::from([0])])
        .expect("valid two-user instance")
}

/// `k` users demanding files `0..k`, each caching every other file of the
/// `n = k` library.
pub fn fully_cached(k: usize, nt: usize) -> Scenario {
    let config = SystemConfig {
        k,
        n: k,
        nt,
        ..SystemConfig::default()
    };
    let caches = (0..k).map(|u| (0..k).filter(|&f| f != u).collect()).collect();
    Scenario::new(config, (0..k).collect(), caches).expect("valid fully cached instance")
}
