//! Exhaustive joint search over feasible index codes and the code-first
//! sequential baseline. Both share one round solver, so a plan always gets
//! the same time no matter which search reached it.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{dtrcg_solve, evaluate_round, BeamformerSet, SolverParams};
use crate::channel::ChannelSet;
use crate::eic::{block_decodable, check_plan_for, enumerate_feasible_eics_for, min_length_eic, EicPlan, RoundAction};
use crate::error::{Result, WeicError};
use crate::model::Scenario;

/// Largest `K` the exhaustive search accepts.
pub const MAX_EXHAUSTIVE_USERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointParams {
    pub solver: SolverParams,
    pub max_users: usize,
}

impl Default for JointParams {
    fn default() -> Self {
        JointParams {
            solver: SolverParams::default(),
            max_users: MAX_EXHAUSTIVE_USERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSolution {
    pub sender: usize,
    pub action: RoundAction,
    pub beams: BeamformerSet,
    pub sinrs: Vec<f64>,
    pub time: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSolution {
    pub method: String,
    pub plan: EicPlan,
    pub rounds: Vec<RoundSolution>,
    pub round_times: Vec<f64>,
    pub total_time: f64,
    /// Plans whose time was compared.
    pub plans_evaluated: usize,
    pub all_converged: bool,
}

/// Beamforms one round with DT-RCG and times it.
pub fn solve_round(
    s: &Scenario,
    channels: &ChannelSet,
    sender: usize,
    action: &RoundAction,
    solver: &SolverParams,
) -> Result<RoundSolution> {
    let sol = dtrcg_solve(channels, sender, action, s.config.p, solver)?;
    let (time, sinrs) = evaluate_round(channels, sender, action, &sol.beams, &s.config)?;
    Ok(RoundSolution {
        sender,
        action: action.clone(),
        beams: sol.beams,
        sinrs,
        time,
        converged: sol.converged,
    })
}

type Memo = HashMap<(usize, RoundAction), RoundSolution>;

fn solve_keys(s: &Scenario, channels: &ChannelSet, keys: BTreeSet<(usize, RoundAction)>, solver: &SolverParams) -> Result<Memo> {
    keys.into_par_iter()
        .map(|(t, a)| solve_round(s, channels, t, &a, solver).map(|r| ((t, a), r)))
        .collect()
}

fn assemble(method: &str, plan: EicPlan, memo: &Memo, plans_evaluated: usize) -> JointSolution {
    let rounds: Vec<RoundSolution> = plan
        .rounds
        .iter()
        .enumerate()
        .map(|(t, a)| memo[&(t, a.clone())].clone())
        .collect();
    let round_times: Vec<f64> = rounds.iter().map(|r| r.time).collect();
    JointSolution {
        method: method.to_string(),
        total_time: round_times.iter().sum(),
        all_converged: rounds.iter().all(|r| r.converged),
        plan,
        rounds,
        round_times,
        plans_evaluated,
    }
}

fn check_channels(s: &Scenario, channels: &ChannelSet) -> Result<()> {
    s.check()?;
    if channels.k() != s.k() || channels.nt() != s.config.nt {
        return Err(WeicError::InvalidConfig("channels do not match the scenario".into()));
    }
    Ok(())
}

/// Total time of a given plan with DT-RCG beams in every active round.
pub fn evaluate_plan(s: &Scenario, channels: &ChannelSet, plan: &EicPlan, params: &JointParams) -> Result<JointSolution> {
    evaluate_plan_for(s, channels, plan, &[], params)
}

/// As [`evaluate_plan`] for a plan serving only the pending users.
pub fn evaluate_plan_for(
    s: &Scenario,
    channels: &ChannelSet,
    plan: &EicPlan,
    pending: &[bool],
    params: &JointParams,
) -> Result<JointSolution> {
    check_channels(s, channels)?;
    let problems = check_plan_for(plan, s, pending);
    if !problems.is_empty() {
        return Err(WeicError::InvalidPlan(problems.join("; ")));
    }
    let keys = plan.rounds.iter().cloned().enumerate().collect();
    let memo = solve_keys(s, channels, keys, &params.solver)?;
    Ok(assemble("evaluate", plan.clone(), &memo, 1))
}

/// Minimum total time over every feasible plan. Ties keep the plan that
/// enumerates first.
pub fn exhaustive_search(s: &Scenario, channels: &ChannelSet, params: &JointParams) -> Result<JointSolution> {
    exhaustive_search_for(s, channels, &[], params)
}

pub fn exhaustive_search_for(s: &Scenario, channels: &ChannelSet, pending: &[bool], params: &JointParams) -> Result<JointSolution> {
    if s.k() > params.max_users {
        return Err(WeicError::SearchGuard {
            k: s.k(),
            limit: params.max_users,
        });
    }
    check_channels(s, channels)?;
    // Rounds are independent, so every distinct (sender, action) is solved once.
    let mut keys = BTreeSet::new();
    let mut count = 0usize;
    for plan in enumerate_feasible_eics_for(s, pending) {
        count += 1;
        keys.extend(plan.rounds.into_iter().enumerate());
    }
    if count == 0 {
        return Err(WeicError::NoFeasiblePlan);
    }
    let memo = solve_keys(s, channels, keys, &params.solver)?;
    let mut best: Option<(f64, EicPlan)> = None;
    for plan in enumerate_feasible_eics_for(s, pending) {
        let total: f64 = plan
            .rounds
            .iter()
            .enumerate()
            .map(|(t, a)| memo[&(t, a.clone())].time)
            .sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, plan));
        }
    }
    let (_, plan) = best.expect("at least one plan was enumerated");
    Ok(assemble("exhaustive", plan, &memo, count))
}

/// Code first, channel second: take the cliques of a minimum-length code,
/// give each to the feasible sender whose weakest destination link is
/// strongest (Frobenius norm), then beamform.
pub fn sequential_optimize(s: &Scenario, channels: &ChannelSet, params: &JointParams) -> Result<JointSolution> {
    check_channels(s, channels)?;
    let base = min_length_eic(s)?;
    let plan = reassign_senders(s, channels, &base).unwrap_or(base);
    let mut sol = evaluate_plan(s, channels, &plan, params)?;
    sol.method = "sequential".into();
    Ok(sol)
}

/// Greedy sender choice for each clique of `plan`, in message order,
/// under the stream cap. `None` when the greedy choice paints itself into a
/// corner.
fn reassign_senders(s: &Scenario, channels: &ChannelSet, plan: &EicPlan) -> Option<EicPlan> {
    let k = s.k();
    let mut streams = vec![0usize; k];
    let mut rounds: Vec<Vec<Vec<usize>>> = vec![Vec::new(); k];
    for (_, dests) in plan.messages() {
        let mut best: Option<(f64, usize)> = None;
        for (t, &used) in streams.iter().enumerate() {
            if dests.contains(&t) || used >= s.config.nt || !block_decodable(t, dests, s) {
                continue;
            }
            let weakest = dests
                .iter()
                .map(|&r| channels.link(t, r).norm())
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(w, _)| weakest > w) {
                best = Some((weakest, t));
            }
        }
        let (_, t) = best?;
        streams[t] += 1;
        rounds[t].push(dests.clone());
    }
    Some(EicPlan::new(rounds.into_iter().map(RoundAction::new).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::{dominant_direction, user_time};
    use crate::channel::sample_channels;
    use crate::instances::{fully_cached, two_user_xor};

    #[test]
    fn two_user_optimum_is_two_mrt_rounds() {
        let s = two_user_xor();
        let ch = sample_channels(11, &s.config);
        let sol = exhaustive_search(&s, &ch, &JointParams::default()).unwrap();
        let expected: f64 = [(0, 1), (1, 0)]
            .iter()
            .map(|&(t, k)| {
                let (_, l) = dominant_direction(ch.link(t, k)).unwrap();
                user_time(s.config.p * l, &s.config)
            })
            .sum();
        assert!((sol.total_time - expected).abs() < 1e-9 * expected);
        assert_eq!(sol.plans_evaluated, 1);
    }

    #[test]
    fn single_pending_user_takes_one_round() {
        let s = fully_cached(4, 2);
        let ch = sample_channels(3, &s.config);
        let pending = [false, true, false, false];
        let sol = exhaustive_search_for(&s, &ch, &pending, &JointParams::default()).unwrap();
        assert_eq!(sol.plan.length(), 1);
        // best of the three possible senders' MRT times
        let best = [0, 2, 3]
            .iter()
            .map(|&t| user_time(s.config.p * dominant_direction(ch.link(t, 1)).unwrap().1, &s.config))
            .fold(f64::INFINITY, f64::min);
        assert!((sol.total_time - best).abs() < 1e-9 * best);
    }

    #[test]
    fn exhaustive_never_loses_to_sequential_or_evaluate() {
        let s = fully_cached(3, 2);
        let ch = sample_channels(5, &s.config);
        let p = JointParams::default();
        let ex = exhaustive_search(&s, &ch, &p).unwrap();
        let seq = sequential_optimize(&s, &ch, &p).unwrap();
        assert!(ex.total_time <= seq.total_time);
        for plan in enumerate_feasible_eics_for(&s, &[]) {
            assert!(ex.total_time <= evaluate_plan(&s, &ch, &plan, &p).unwrap().total_time);
        }
    }

    #[test]
    fn empty_rounds_cost_nothing() {
        let s = fully_cached(3, 2);
        let ch = sample_channels(6, &s.config);
        let plan = EicPlan::new(vec![RoundAction::new(vec![vec![1, 2]]), RoundAction::new(vec![vec![0]]), RoundAction::skip()]);
        let sol = evaluate_plan(&s, &ch, &plan, &JointParams::default()).unwrap();
        assert_eq!(sol.round_times[2], 0.0);
        assert_eq!(sol.total_time, sol.round_times[0] + sol.round_times[1]);
    }

    #[test]
    fn guards_and_errors() {
        let s = fully_cached(7, 2);
        let ch = sample_channels(1, &s.config);
        assert_eq!(
            exhaustive_search(&s, &ch, &JointParams::default()).unwrap_err(),
            WeicError::SearchGuard { k: 7, limit: 6 }
        );
        let s = fully_cached(3, 2);
        let ch = sample_channels(1, &s.config);
        let bad = EicPlan::new(vec![RoundAction::skip(); 3]);
        assert!(matches!(evaluate_plan(&s, &ch, &bad, &JointParams::default()), Err(WeicError::InvalidPlan(_))));
    }

    #[test]
    fn solutions_serialize() {
        let s = two_user_xor();
        let ch = sample_channels(2, &s.config);
        let sol = exhaustive_search(&s, &ch, &JointParams::default()).unwrap();
        let json = serde_json::to_string(&sol).unwrap();
        let back: JointSolution = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sol);
    }
}
