//! Whole-episode index codes: one round action per sender such that every
//! user is served exactly once.

use serde::{Deserialize, Serialize};

use super::{block_decodable, RoundAction};
use crate::error::{Result, WeicError};
use crate::model::Scenario;

/// `G_1..G_K`: `rounds[t]` is what user `t` sends in its round.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EicPlan {
    pub rounds: Vec<RoundAction>,
}

impl EicPlan {
    pub fn new(rounds: Vec<RoundAction>) -> Self {
        EicPlan { rounds }
    }

    /// Index-code length `|E|`.
    pub fn length(&self) -> usize {
        self.rounds.iter().map(RoundAction::num_streams).sum()
    }

    pub fn active_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| !r.is_skip()).count()
    }

    /// `(sender, dests)` for every message in round order.
    pub fn messages(&self) -> impl Iterator<Item = (usize, &Vec<usize>)> {
        self.rounds
            .iter()
            .enumerate()
            .flat_map(|(t, r)| r.blocks.iter().map(move |b| (t, b)))
    }
}

/// Returns every violated plan constraint (coverage, disjointness,
/// decodability, stream limit). Empty means feasible.
pub fn check_plan(plan: &EicPlan, s: &Scenario) -> Vec<String> {
    check_plan_for(plan, s, &[])
}

/// As [`check_plan`], but only users with `pending[u] == true` must be
/// served; the others must not be. An empty `pending` means everyone.
pub fn check_plan_for(plan: &EicPlan, s: &Scenario, pending: &[bool]) -> Vec<String> {
    let k = s.k();
    let mut out = Vec::new();
    if plan.rounds.len() != k {
        out.push(format!("plan has {} rounds, expected {k}", plan.rounds.len()));
        return out;
    }
    let mut served = vec![0usize; k];
    for (t, round) in plan.rounds.iter().enumerate() {
        if let Err(e) = round.validate_for(t, s) {
            out.push(format!("round {t}: {e}"));
        }
        for u in round.served() {
            if u < k {
                served[u] += 1;
            } else {
                out.push(format!("round {t}: user {u} out of range"));
            }
        }
    }
    for (u, &c) in served.iter().enumerate() {
        let wanted = pending.get(u).copied().unwrap_or(true);
        match (wanted, c) {
            (true, 1) | (false, 0) => {}
            (true, 0) => out.push(format!("user {u} is never served")),
            (false, _) => out.push(format!("user {u} is not pending but served {c} times")),
            (true, _) => out.push(format!("user {u} is served {c} times")),
        }
    }
    out
}

/// All decodable messages `(sender, destination mask)`, grouped by the
/// smallest destination. Within a group: by sender, then by destination-set
/// size, then lexicographically.
pub fn possible_messages(s: &Scenario) -> Vec<Vec<(usize, u32)>> {
    let k = s.k();
    assert!(k <= 31, "message masks support at most 31 users");
    let mut by_min = vec![Vec::new(); k];
    for sender in 0..k {
        let mut masks: Vec<u32> = (1u32..(1 << k)).filter(|m| m & (1 << sender) == 0).collect();
        masks.sort_by_key(|&m| (m.count_ones(), mask_members(m)));
        for m in masks {
            let dests = mask_members(m);
            if block_decodable(sender, &dests, s) {
                by_min[dests[0]].push((sender, m));
            }
        }
    }
    by_min
}

fn mask_members(m: u32) -> Vec<usize> {
    (0..32).filter(|&i| m & (1 << i) != 0).collect()
}

/// Lazy depth-first enumeration of feasible plans in a deterministic order.
///
/// The lowest unserved user must be covered by a message whose smallest
/// destination is that user, which makes every plan appear exactly once.
pub struct FeasibleEics {
    k: usize,
    nt: usize,
    by_min: Vec<Vec<(usize, u32)>>,
    stack: Vec<(usize, usize)>,
    chosen: Vec<(usize, u32)>,
    covered: u32,
    streams: Vec<usize>,
    started: bool,
    done: bool,
}

impl FeasibleEics {
    fn new(s: &Scenario, pending: &[bool]) -> Self {
        let k = s.k();
        let covered = (0..k)
            .filter(|&u| !pending.get(u).copied().unwrap_or(true))
            .fold(0u32, |acc, u| acc | (1 << u));
        FeasibleEics {
            k,
            nt: s.config.nt,
            by_min: possible_messages(s),
            stack: Vec::new(),
            chosen: Vec::new(),
            covered,
            streams: vec![0; k],
            started: false,
            done: false,
        }
    }

    fn full(&self) -> u32 {
        (1u32 << self.k) - 1
    }

    fn build(&self) -> EicPlan {
        let mut rounds = vec![Vec::new(); self.k];
        for &(t, m) in &self.chosen {
            rounds[t].push(mask_members(m));
        }
        EicPlan {
            rounds: rounds.into_iter().map(RoundAction::new).collect(),
        }
    }

    fn undo(&mut self) {
        let (t, m) = self.chosen.pop().expect("undo with a chosen message");
        self.covered &= !m;
        self.streams[t] -= 1;
    }
}

impl Iterator for FeasibleEics {
    type Item = EicPlan;

    fn next(&mut self) -> Option<EicPlan> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            if self.covered == self.full() {
                self.done = true;
                return Some(self.build());
            }
            self.stack.push(((!self.covered).trailing_zeros() as usize, 0));
        }
        loop {
            let Some(&mut (u, ref mut idx)) = self.stack.last_mut() else {
                self.done = true;
                return None;
            };
            let options = &self.by_min[u];
            let mut pick = None;
            while *idx < options.len() {
                let (t, m) = options[*idx];
                *idx += 1;
                if m & self.covered == 0 && self.streams[t] < self.nt {
                    pick = Some((t, m));
                    break;
                }
            }
            match pick {
                Some((t, m)) => {
                    self.covered |= m;
                    self.streams[t] += 1;
                    self.chosen.push((t, m));
                    if self.covered == self.full() {
                        let plan = self.build();
                        self.undo();
                        return Some(plan);
                    }
                    let next_u = (!self.covered).trailing_zeros() as usize;
                    self.stack.push((next_u, 0));
                }
                None => {
                    self.stack.pop();
                    if self.stack.is_empty() {
                        self.done = true;
                        return None;
                    }
                    self.undo();
                }
            }
        }
    }
}

/// Every plan satisfying coverage, disjointness, decodability and the
/// per-round stream limit. May be empty.
pub fn enumerate_feasible_eics(s: &Scenario) -> FeasibleEics {
    FeasibleEics::new(s, &[])
}

/// Plans serving exactly the users with `pending[u] == true`.
pub fn enumerate_feasible_eics_for(s: &Scenario, pending: &[bool]) -> FeasibleEics {
    FeasibleEics::new(s, pending)
}

/// All plans of minimum index-code length, in enumeration order.
pub fn min_length_eics(s: &Scenario) -> Vec<EicPlan> {
    min_length_eics_for(s, &[])
}

pub fn min_length_eics_for(s: &Scenario, pending: &[bool]) -> Vec<EicPlan> {
    let mut best: Option<usize> = None;
    let mut out = Vec::new();
    for plan in enumerate_feasible_eics_for(s, pending) {
        let len = plan.length();
        match best {
            Some(b) if len > b => {}
            Some(b) if len == b => out.push(plan),
            _ => {
                best = Some(len);
                out.clear();
                out.push(plan);
            }
        }
    }
    out
}

/// A minimum-length plan; ties go to fewer active rounds, then the
/// lexicographically smallest message list `(sender, dests)`.
pub fn min_length_eic(s: &Scenario) -> Result<EicPlan> {
    min_length_eic_for(s, &[])
}

pub fn min_length_eic_for(s: &Scenario, pending: &[bool]) -> Result<EicPlan> {
    min_length_eics_for(s, pending)
        .into_iter()
        .min_by(|a, b| {
            a.active_rounds()
                .cmp(&b.active_rounds())
                .then_with(|| a.messages().cmp(b.messages()))
        })
        .ok_or(WeicError::NoFeasiblePlan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{fully_cached, two_user_xor};
    use crate::model::{generate_scenario, SystemConfig};
    use std::collections::BTreeSet;

    fn plan(rounds: Vec<Vec<Vec<usize>>>) -> EicPlan {
        EicPlan::new(rounds.into_iter().map(RoundAction::new).collect())
    }

    #[test]
    fn two_user_plans() {
        let s = two_user_xor();
        let plans: Vec<EicPlan> = enumerate_feasible_eics(&s).collect();
        assert_eq!(plans, vec![plan(vec![vec![vec![1]], vec![vec![0]]])]);
        assert_eq!(min_length_eic(&s).unwrap().length(), 2);
    }

    #[test]
    fn fully_cached_three_users() {
        let s = fully_cached(3, 2);
        let plans: Vec<EicPlan> = enumerate_feasible_eics(&s).collect();
        for p in &plans {
            assert!(check_plan(p, &s).is_empty(), "{p:?}");
        }
        let distinct: BTreeSet<&EicPlan> = plans.iter().collect();
        assert_eq!(distinct.len(), plans.len());
        let best = min_length_eic(&s).unwrap();
        assert_eq!(best.length(), 2);
        // one unicast and one XOR pair over two rounds; (0, [1]) sorts first
        assert_eq!(best, plan(vec![vec![vec![1]], vec![vec![0, 2]], vec![]]));
    }

    #[test]
    fn empty_caches_have_no_plan() {
        let config = SystemConfig {
            k: 3,
            n: 5,
            nt: 2,
            ..SystemConfig::default()
        };
        let s = generate_scenario(7, config, 0.0).unwrap();
        assert_eq!(enumerate_feasible_eics(&s).count(), 0);
        assert_eq!(min_length_eic(&s).unwrap_err(), WeicError::NoFeasiblePlan);
    }

    #[test]
    fn check_plan_reports_problems() {
        let s = fully_cached(3, 2);
        let missing = plan(vec![vec![vec![1]], vec![vec![0]], vec![]]);
        assert!(check_plan(&missing, &s).iter().any(|e| e.contains("never served")));
        let twice = plan(vec![vec![vec![1, 2]], vec![vec![0, 2]], vec![]]);
        assert!(check_plan(&twice, &s).iter().any(|e| e.contains("2 times")));
    }

    #[test]
    fn stream_limit_is_respected() {
        let s = fully_cached(4, 1);
        for p in enumerate_feasible_eics(&s) {
            assert!(p.rounds.iter().all(|r| r.num_streams() <= 1));
        }
    }

    #[test]
    fn single_pending_user() {
        let s = fully_cached(4, 2);
        let pending = [false, false, true, false];
        let best = min_length_eic_for(&s, &pending).unwrap();
        assert_eq!(best.length(), 1);
        assert_eq!(best, plan(vec![vec![vec![2]], vec![], vec![], vec![]]));
        // any of the three other users can serve it
        assert_eq!(enumerate_feasible_eics_for(&s, &pending).count(), 3);
    }

    #[test]
    fn nothing_pending_yields_the_empty_plan() {
        let s = fully_cached(3, 2);
        let plans: Vec<EicPlan> = enumerate_feasible_eics_for(&s, &[false; 3]).collect();
        assert_eq!(plans, vec![plan(vec![vec![], vec![], vec![]])]);
    }
}
