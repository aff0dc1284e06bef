//! The per-round action table shared by all agents.
//!
//! Entries are expressed over receiver *slots* `0..K-1`: slot `j` of sender
//! `t` is the `j`-th user other than `t` in increasing order. Subsets of at
//! most `min(Nt, K-1)` slots are listed by size, then lexicographically, and
//! each subset's partitions follow restricted-growth-string order. Index 0 is
//! always the skip action.

use serde::{Deserialize, Serialize};

use super::bell::restricted_growth_strings;
use super::{block_decodable, RoundAction};
use crate::model::Scenario;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTable {
    k: usize,
    nt: usize,
    entries: Vec<Vec<Vec<usize>>>,
}

/// One row of a sender's table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub index: usize,
    pub action: RoundAction,
    pub valid: bool,
}

/// Wire form of a universal table row; `blocks` hold receiver slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntryWire {
    pub index: usize,
    pub blocks: Vec<Vec<usize>>,
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < r - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, r, &mut Vec::with_capacity(r), &mut out);
    out
}

impl ActionTable {
    /// Builds the sender-independent table for `k` users with `nt` antennas.
    pub fn universal(k: usize, nt: usize) -> Self {
        let receivers = k.saturating_sub(1);
        let max_size = nt.min(receivers);
        let mut entries = Vec::new();
        for size in 0..=max_size {
            let rgs = restricted_growth_strings(size);
            for subset in combinations(receivers, size) {
                for labels in &rgs {
                    let nblocks = labels.iter().copied().max().map_or(0, |m| m + 1);
                    let mut blocks = vec![Vec::new(); nblocks];
                    for (pos, &label) in labels.iter().enumerate() {
                        blocks[label].push(subset[pos]);
                    }
                    entries.push(blocks);
                }
            }
        }
        ActionTable { k, nt, entries }
    }

    pub fn for_scenario(s: &Scenario) -> Self {
        Self::universal(s.k(), s.config.nt)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn slot_blocks(&self, index: usize) -> Option<&[Vec<usize>]> {
        self.entries.get(index).map(Vec::as_slice)
    }

    pub fn slot_to_user(sender: usize, slot: usize) -> usize {
        if slot < sender {
            slot
        } else {
            slot + 1
        }
    }

    pub fn user_to_slot(sender: usize, user: usize) -> Option<usize> {
        match user.cmp(&sender) {
            std::cmp::Ordering::Less => Some(user),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(user - 1),
        }
    }

    /// Entry `index` expressed in user indices for `sender`.
    pub fn action(&self, index: usize, sender: usize) -> Option<RoundAction> {
        let blocks = self.entries.get(index)?;
        Some(RoundAction {
            blocks: blocks
                .iter()
                .map(|b| b.iter().map(|&slot| Self::slot_to_user(sender, slot)).collect())
                .collect(),
        })
    }

    /// Index of an action for `sender`, if the table contains it.
    pub fn index_of(&self, action: &RoundAction, sender: usize) -> Option<usize> {
        let mut slots: Vec<Vec<usize>> = Vec::with_capacity(action.blocks.len());
        for b in &action.blocks {
            let mut sb = b
                .iter()
                .map(|&u| Self::user_to_slot(sender, u))
                .collect::<Option<Vec<usize>>>()?;
            sb.sort_unstable();
            slots.push(sb);
        }
        slots.sort();
        self.entries.iter().position(|e| *e == slots)
    }

    pub fn to_wire(&self) -> Vec<TableEntryWire> {
        self.entries
            .iter()
            .enumerate()
            .map(|(index, blocks)| TableEntryWire {
                index,
                blocks: blocks.clone(),
            })
            .collect()
    }
}

fn action_feasible(action: &RoundAction, sender: usize, s: &Scenario) -> bool {
    action.blocks.iter().all(|b| block_decodable(sender, b, s))
}

/// The universal table for `sender`, with infeasible entries flagged but
/// kept at their index. With `ignore_feasibility` every entry is valid.
pub fn enumerate_round_actions(sender: usize, s: &Scenario, ignore_feasibility: bool) -> Vec<TableEntry> {
    let table = ActionTable::for_scenario(s);
    (0..table.len())
        .map(|index| {
            let action = table.action(index, sender).expect("index in range");
            let valid = ignore_feasibility || action_feasible(&action, sender, s);
            TableEntry { index, action, valid }
        })
        .collect()
}

/// Drops already-served users from `action`; falls back to skip when the
/// residual action is not decodable. `pending[k]` is true while user `k`
/// still waits for its demand.
pub fn mask_action(action: &RoundAction, pending: &[bool], sender: usize, s: &Scenario) -> RoundAction {
    let blocks: Vec<Vec<usize>> = action
        .blocks
        .iter()
        .map(|b| b.iter().copied().filter(|&u| pending.get(u).copied().unwrap_or(false)).collect())
        .filter(|b: &Vec<usize>| !b.is_empty())
        .collect();
    let residual = RoundAction::new(blocks);
    if action_feasible(&residual, sender, s) {
        residual
    } else {
        RoundAction::skip()
    }
}

/// Maps table index `g` to the action actually executed by `sender` given
/// the pending vector. Out-of-range indices map to skip.
pub fn mask_and_map(g: usize, pending: &[bool], table: &ActionTable, sender: usize, s: &Scenario) -> RoundAction {
    match table.action(g, sender) {
        Some(a) => mask_action(&a, pending, sender, s),
        None => RoundAction::skip(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eic::{bell_number, binomial};
    use crate::instances::fully_cached;
    use crate::model::SystemConfig;
    use std::collections::BTreeSet;

    #[test]
    fn three_user_table() {
        let s = fully_cached(3, 2);
        let entries = enumerate_round_actions(0, &s, false);
        let actions: Vec<Vec<Vec<usize>>> = entries.iter().map(|e| e.action.blocks.clone()).collect();
        assert_eq!(
            actions,
            vec![
                vec![],
                vec![vec![1]],
                vec![vec![2]],
                vec![vec![1, 2]],
                vec![vec![1], vec![2]],
            ]
        );
        assert!(entries.iter().all(|e| e.valid));
    }

    #[test]
    fn table_size_is_bell_when_nt_covers_receivers() {
        assert_eq!(ActionTable::universal(5, 4).len(), 52);
        assert_eq!(ActionTable::universal(3, 2).len(), 5);
        for k in 2..=7 {
            assert_eq!(ActionTable::universal(k, k - 1).len() as u64, bell_number(k).unwrap());
        }
    }

    #[test]
    fn table_size_formula() {
        for k in 2..=7 {
            for nt in 0..=6 {
                let expected: u64 = (0..=nt.min(k - 1))
                    .map(|s| binomial(k - 1, s) * bell_number(s).unwrap())
                    .sum();
                assert_eq!(ActionTable::universal(k, nt).len() as u64, expected, "k={k} nt={nt}");
            }
        }
    }

    #[test]
    fn zero_antennas_only_skip() {
        let t = ActionTable::universal(4, 0);
        assert_eq!(t.len(), 1);
        assert!(t.slot_blocks(0).unwrap().is_empty());
    }

    #[test]
    fn index_round_trip() {
        let t = ActionTable::universal(5, 4);
        for sender in 0..5 {
            for g in 0..t.len() {
                let a = t.action(g, sender).unwrap();
                assert!(!a.served().any(|u| u == sender));
                assert_eq!(t.index_of(&a, sender), Some(g));
            }
        }
    }

    #[test]
    fn infeasible_entries_keep_their_index() {
        let config = SystemConfig {
            k: 3,
            n: 3,
            nt: 2,
            ..SystemConfig::default()
        };
        // sender 0 caches only d_1
        let s = Scenario::new(
            config,
            vec![0, 1, 2],
            vec![BTreeSet::from([1]), BTreeSet::from([0]), BTreeSet::from([0])],
        )
        .unwrap();
        let entries = enumerate_round_actions(0, &s, false);
        assert_eq!(entries.len(), 5);
        let valid: Vec<bool> = entries.iter().map(|e| e.valid).collect();
        assert_eq!(valid, vec![true, true, false, false, false]);
        assert!(enumerate_round_actions(0, &s, true).iter().all(|e| e.valid));
    }

    #[test]
    fn masking() {
        let s = fully_cached(4, 3);
        let t = ActionTable::for_scenario(&s);
        let split = t.index_of(&RoundAction::new(vec![vec![1], vec![2]]), 0).unwrap();
        let all = vec![true; 4];
        assert_eq!(mask_and_map(split, &all, &t, 0, &s), t.action(split, 0).unwrap());
        let pending = vec![true, false, true, true];
        assert_eq!(mask_and_map(split, &pending, &t, 0, &s), RoundAction::new(vec![vec![2]]));
        let coded = t.index_of(&RoundAction::new(vec![vec![1, 2]]), 0).unwrap();
        assert_eq!(mask_and_map(coded, &pending, &t, 0, &s), RoundAction::new(vec![vec![2]]));
        let none = vec![false; 4];
        assert!(mask_and_map(coded, &none, &t, 0, &s).is_skip());
    }

    #[test]
    fn masked_coded_pair_falls_back_to_skip_when_residual_undecodable() {
        let config = SystemConfig {
            k: 3,
            n: 4,
            nt: 2,
            ..SystemConfig::default()
        };
        // sender 0 caches d_1 but not d_2
        let s = Scenario::new(
            config,
            vec![0, 1, 2],
            vec![BTreeSet::from([1]), BTreeSet::from([0, 2]), BTreeSet::from([0, 1])],
        )
        .unwrap();
        let t = ActionTable::for_scenario(&s);
        let coded = t.index_of(&RoundAction::new(vec![vec![1, 2]]), 0).unwrap();
        let pending = vec![true, false, true];
        // residual {2}: d_2 not cached by sender 0
        assert!(!block_decodable(0, &[2], &s));
        assert!(mask_and_map(coded, &pending, &t, 0, &s).is_skip());
        let pending = vec![true, true, false];
        assert_eq!(mask_and_map(coded, &pending, &t, 0, &s), RoundAction::new(vec![vec![1]]));
    }
}
