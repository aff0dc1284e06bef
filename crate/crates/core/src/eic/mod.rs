//! Discrete structure of embedded index codes.
//!
//! A message sent by user `t` to a destination set `D` carries the XOR of
//! the demands of `D`. It is usable when `t` caches all of those files and
//! every destination caches the other destinations' demands (`D` is a clique
//! of the side-information graph).

mod actions;
mod bell;
mod plans;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::Scenario;

pub use actions::{enumerate_round_actions, mask_action, mask_and_map, ActionTable, TableEntry, TableEntryWire};
pub use bell::{bell_number, binomial, restricted_growth_strings};
pub use plans::{
    check_plan, check_plan_for, enumerate_feasible_eics, enumerate_feasible_eics_for, min_length_eic, min_length_eic_for, min_length_eics,
    min_length_eics_for, possible_messages, EicPlan, FeasibleEics,
};

/// Decodability of `files` XOR-encoded by `sender` for `dests`.
///
/// True iff the sender caches every file, the files are exactly the demands
/// of `dests`, and each destination caches all files but its own demand.
pub fn decodable(files: &BTreeSet<usize>, sender: usize, dests: &BTreeSet<usize>, s: &Scenario) -> bool {
    if dests.is_empty() || dests.contains(&sender) || sender >= s.k() || dests.iter().any(|&k| k >= s.k()) {
        return false;
    }
    if !files.iter().all(|f| s.caches_file(sender, *f)) {
        return false;
    }
    let demanded: BTreeSet<usize> = dests.iter().map(|&k| s.demands[k]).collect();
    if &demanded != files {
        return false;
    }
    dests
        .iter()
        .all(|&k| files.iter().all(|&f| f == s.demands[k] || s.caches_file(k, f)))
}

/// Decodability of the message whose files are the demands of `dests`.
pub fn block_decodable(sender: usize, dests: &[usize], s: &Scenario) -> bool {
    let dests: BTreeSet<usize> = dests.iter().copied().collect();
    let files = dests.iter().filter_map(|&k| s.demands.get(k).copied()).collect();
    decodable(&files, sender, &dests, s)
}

/// One XOR-encoded message.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EncodedMessage {
    pub sender: usize,
    pub dests: Vec<usize>,
    pub files: Vec<usize>,
}

impl EncodedMessage {
    /// Builds the message serving `dests` from `sender`; `None` when it is
    /// not decodable.
    pub fn new(sender: usize, dests: &[usize], s: &Scenario) -> Option<Self> {
        if !block_decodable(sender, dests, s) {
            return None;
        }
        let mut dests = dests.to_vec();
        dests.sort_unstable();
        dests.dedup();
        let mut files: Vec<usize> = dests.iter().map(|&k| s.demands[k]).collect();
        files.sort_unstable();
        Some(EncodedMessage { sender, dests, files })
    }
}

/// The messages one sender multiplexes in a round. Each block is a sorted
/// destination set; blocks are ordered by their smallest member. An empty
/// action skips the round.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoundAction {
    pub blocks: Vec<Vec<usize>>,
}

impl RoundAction {
    pub fn skip() -> Self {
        RoundAction::default()
    }

    /// Canonicalizes block order and member order.
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Self {
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.retain(|b| !b.is_empty());
        blocks.sort();
        RoundAction { blocks }
    }

    pub fn is_skip(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_streams(&self) -> usize {
        self.blocks.len()
    }

    pub fn served(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().flatten().copied()
    }

    /// Index of the block containing `user`.
    pub fn block_of(&self, user: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&user))
    }

    /// Structural validity for `sender`: disjoint, nonempty blocks excluding
    /// the sender, at most `nt` streams, every block decodable.
    pub fn validate_for(&self, sender: usize, s: &Scenario) -> Result<(), String> {
        if self.blocks.len() > s.config.nt {
            return Err(format!(
                "{} streams exceed the {}-antenna limit",
                self.blocks.len(),
                s.config.nt
            ));
        }
        let mut seen = BTreeSet::new();
        for b in &self.blocks {
            if b.is_empty() {
                return Err("empty block".into());
            }
            for &u in b {
                if u == sender {
                    return Err(format!("sender {sender} cannot serve itself"));
                }
                if !seen.insert(u) {
                    return Err(format!("user {u} appears in two blocks"));
                }
            }
            if !block_decodable(sender, b, s) {
                return Err(format!("block {b:?} is not decodable from sender {sender}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{fully_cached, two_user_xor};
    use crate::model::SystemConfig;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    /// Three users; user 2 holds both demands of users 0 and 1, who each
    /// cache the other's demand.
    fn xor_relay() -> Scenario {
        let config = SystemConfig {
            k: 3,
            n: 3,
            nt: 2,
            ..SystemConfig::default()
        };
        Scenario::new(config, vec![0, 1, 2], vec![set(&[1]), set(&[0]), set(&[0, 1])]).unwrap()
    }

    #[test]
    fn xor_pair_is_decodable() {
        let s = xor_relay();
        assert!(decodable(&set(&[0, 1]), 2, &set(&[0, 1]), &s));
        assert!(block_decodable(2, &[0, 1], &s));
        // receivers of the two-user example cannot relay to themselves
        let s2 = two_user_xor();
        assert!(!decodable(&set(&[0, 1]), 0, &set(&[0, 1]), &s2));
    }

    #[test]
    fn uncoded_unicast_needs_sender_cache() {
        let s = two_user_xor();
        assert!(decodable(&set(&[1]), 0, &set(&[1]), &s));
        assert!(!decodable(&set(&[1]), 1, &set(&[1]), &s));
    }

    #[test]
    fn missing_side_information_blocks_decoding() {
        let mut s = xor_relay();
        s.caches[0].clear(); // user 0 no longer holds d_1
        assert!(!decodable(&set(&[0, 1]), 2, &set(&[0, 1]), &s));
        // oracle: condition (c) for user 0
        let cond_c = set(&[0, 1]).iter().all(|&f| f == s.demands[0] || s.caches[0].contains(&f));
        assert!(!cond_c);
    }

    #[test]
    fn files_must_match_demands() {
        let s = xor_relay();
        assert!(!decodable(&set(&[0]), 2, &set(&[0, 1]), &s));
        assert!(!decodable(&set(&[0, 1]), 2, &set(&[0]), &s));
    }

    #[test]
    fn encoded_message_construction() {
        let s = fully_cached(3, 2);
        let m = EncodedMessage::new(0, &[2, 1], &s).unwrap();
        assert_eq!(m.dests, vec![1, 2]);
        assert_eq!(m.files, vec![1, 2]);
        assert!(EncodedMessage::new(0, &[0, 1], &s).is_none());
    }

    #[test]
    fn round_action_validation() {
        let s = fully_cached(4, 2);
        assert!(RoundAction::new(vec![vec![1], vec![2]]).validate_for(0, &s).is_ok());
        assert!(RoundAction::new(vec![vec![1], vec![2], vec![3]])
            .validate_for(0, &s)
            .unwrap_err()
            .contains("streams"));
        assert!(RoundAction::new(vec![vec![1, 2], vec![2]]).validate_for(0, &s).is_err());
        assert!(RoundAction::new(vec![vec![0]]).validate_for(0, &s).is_err());
    }
}
