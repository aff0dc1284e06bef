//! The sequential episode seen by learning agents.
//!
//! Rounds run in fixed order `0..K`; in round `t` user `t` sends. Internally
//! `pending[k] == true` while user `k` waits. On every external interface the
//! vector is flipped: `1` means fulfilled, `0` means still pending.

use serde::{Deserialize, Serialize};

use crate::beamforming::{dominant_direction, evaluate_round, user_time, BeamformerSet};
use crate::channel::{matrix_to_wire, ChannelSet, WireMatrix};
use crate::eic::{mask_action, ActionTable, RoundAction};
use crate::error::{Result, WeicError};
use crate::model::{side_info_graph, Scenario, SideInfoGraph, SystemConfig};

/// Multiplier applied to the slowest single-user link to get `T_pen`.
pub const PENALTY_FACTOR: f64 = 10.0;

/// What agent `t` sees before acting: the request status, its own row of
/// link matrices and the side-information graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub agent: usize,
    /// `1` fulfilled, `0` pending.
    pub e: Vec<u8>,
    /// `local_csi[k] = H[agent][k]` as `[re, im]` rows; `None` at `k == agent`.
    pub local_csi: Vec<Option<WireMatrix>>,
    pub side_info: Vec<Vec<u8>>,
}

impl Observation {
    /// `e` (K), then every link matrix of the row with real parts before
    /// imaginary parts, row-major ((K-1) * 2 * Nt^2), then the adjacency
    /// matrix row-major (K^2).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.e.iter().map(|&x| f64::from(x)).collect();
        for h in self.local_csi.iter().flatten() {
            out.extend(h.iter().flatten().map(|z| z[0]));
            out.extend(h.iter().flatten().map(|z| z[1]));
        }
        out.extend(self.side_info.iter().flatten().map(|&x| f64::from(x)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub round_times: Vec<f64>,
    pub total_time: f64,
    pub reward: f64,
    /// `1` fulfilled, `0` unserved.
    pub served: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub round: usize,
    pub executed: RoundAction,
    pub time: f64,
    pub sinrs: Vec<f64>,
    /// `1` fulfilled, `0` pending.
    pub pending: Vec<u8>,
    pub done: bool,
}

/// One line of the replay log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub round: usize,
    pub action_index: Option<usize>,
    pub action: RoundAction,
    pub beams: BeamformerSet,
    pub time: f64,
}

pub fn pending_to_wire(pending: &[bool]) -> Vec<u8> {
    pending.iter().map(|&p| u8::from(!p)).collect()
}

pub fn pending_from_wire(e: &[u8]) -> Vec<bool> {
    e.iter().map(|&x| x == 0).collect()
}

/// `T_pen`: ten times the slowest single-user MRT time over all links.
pub fn penalty_time(channels: &ChannelSet, config: &SystemConfig) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..channels.k() {
        for (_, h) in channels.sender_row(t) {
            let (_, lambda) = dominant_direction(h)?;
            worst = worst.max(user_time(config.p * lambda, config));
        }
    }
    Ok(PENALTY_FACTOR * worst)
}

/// Reward `1 / T` when everyone is served, otherwise
/// `1 / (T + n_unserved * T_pen)`.
pub fn finalize(pending: &[bool], round_times: &[f64], penalty: f64) -> Result<EpisodeResult> {
    if round_times.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(WeicError::Internal("negative or NaN round time".into()));
    }
    let total_time: f64 = round_times.iter().sum();
    let unserved = pending.iter().filter(|&&p| p).count();
    if unserved == 0 && total_time <= 0.0 && !pending.is_empty() {
        return Err(WeicError::Internal("all users served in zero time".into()));
    }
    let reward = 1.0 / (total_time + unserved as f64 * penalty);
    Ok(EpisodeResult {
        round_times: round_times.to_vec(),
        total_time,
        reward,
        served: pending_to_wire(pending),
    })
}

/// Drops served users from table entry `g` and carries the matching
/// beamformers along. `beams[i]` belongs to block `i` of the entry; beams of
/// dropped blocks are discarded. Undecodable residuals become skip.
pub fn mask_with_beams(
    table: &ActionTable,
    g: usize,
    beams: &BeamformerSet,
    pending: &[bool],
    sender: usize,
    s: &Scenario,
) -> Result<(RoundAction, BeamformerSet)> {
    let entry = table
        .action(g, sender)
        .ok_or_else(|| WeicError::InvalidAction(format!("action index {g} outside table of {}", table.len())))?;
    if beams.len() != entry.num_streams() {
        return Err(WeicError::InvalidAction(format!(
            "{} beamformers for an entry with {} messages",
            beams.len(),
            entry.num_streams()
        )));
    }
    let executed = mask_action(&entry, pending, sender, s);
    let kept = executed
        .blocks
        .iter()
        .map(|b| {
            let i = entry
                .block_of(b[0])
                .expect("masked blocks come from the entry");
            beams.vectors[i].clone()
        })
        .collect();
    Ok((executed, BeamformerSet::new(kept)))
}

/// A single-writer episode.
#[derive(Debug, Clone)]
pub struct Episode {
    scenario: Scenario,
    channels: ChannelSet,
    graph: SideInfoGraph,
    pending: Vec<bool>,
    next_round: usize,
    round_times: Vec<f64>,
    round_sinrs: Vec<Vec<f64>>,
    log: Vec<ReplayRecord>,
    penalty: f64,
}

impl Episode {
    pub fn reset(scenario: Scenario, channels: ChannelSet) -> Result<Self> {
        scenario.check()?;
        if channels.k() != scenario.k() || channels.nt() != scenario.config.nt {
            return Err(WeicError::InvalidConfig(format!(
                "channels for K={}, Nt={} do not match scenario K={}, Nt={}",
                channels.k(),
                channels.nt(),
                scenario.k(),
                scenario.config.nt
            )));
        }
        let penalty = penalty_time(&channels, &scenario.config)?;
        let k = scenario.k();
        Ok(Episode {
            graph: side_info_graph(&scenario),
            scenario,
            channels,
            pending: vec![true; k],
            next_round: 0,
            round_times: Vec::with_capacity(k),
            round_sinrs: Vec::with_capacity(k),
            log: Vec::new(),
            penalty,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn pending(&self) -> &[bool] {
        &self.pending
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    pub fn is_done(&self) -> bool {
        self.next_round == self.scenario.k()
    }

    pub fn penalty_time(&self) -> f64 {
        self.penalty
    }

    pub fn round_times(&self) -> &[f64] {
        &self.round_times
    }

    pub fn round_sinrs(&self) -> &[Vec<f64>] {
        &self.round_sinrs
    }

    pub fn observe(&self, agent: usize) -> Observation {
        Observation {
            agent,
            e: pending_to_wire(&self.pending),
            local_csi: (0..self.scenario.k())
                .map(|k| self.channels.try_link(agent, k).map(matrix_to_wire))
                .collect(),
            side_info: self.graph.adjacency.clone(),
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.scenario.k()).map(|t| self.observe(t)).collect()
    }

    /// Executes `action` with `beams` in `round`, which must be the next
    /// round. Serving a fulfilled user costs time but changes nothing.
    pub fn step(&mut self, round: usize, action: &RoundAction, beams: &BeamformerSet) -> Result<StepOutcome> {
        self.step_logged(round, None, action, beams)
    }

    /// Table-index variant: masks entry `g` by the pending vector first.
    pub fn step_index(&mut self, round: usize, table: &ActionTable, g: usize, beams: &BeamformerSet) -> Result<StepOutcome> {
        self.expect_round(round)?;
        beams.check_power(self.scenario.config.p)?;
        let (action, kept) = mask_with_beams(table, g, beams, &self.pending, round, &self.scenario)?;
        self.step_logged(round, Some(g), &action, &kept)
    }

    fn expect_round(&self, round: usize) -> Result<()> {
        if self.is_done() {
            return Err(WeicError::Episode("all rounds already played".into()));
        }
        if round != self.next_round {
            return Err(WeicError::Episode(format!(
                "round {round} out of order, expected {}",
                self.next_round
            )));
        }
        Ok(())
    }

    fn step_logged(
        &mut self,
        round: usize,
        index: Option<usize>,
        action: &RoundAction,
        beams: &BeamformerSet,
    ) -> Result<StepOutcome> {
        self.expect_round(round)?;
        action
            .validate_for(round, &self.scenario)
            .map_err(WeicError::InvalidAction)?;
        beams.check(action, self.scenario.config.nt, self.scenario.config.p)?;
        let (time, sinrs) = evaluate_round(&self.channels, round, action, beams, &self.scenario.config)?;
        for k in action.served() {
            self.pending[k] = false;
        }
        self.round_times.push(time);
        self.round_sinrs.push(sinrs.clone());
        self.log.push(ReplayRecord {
            round,
            action_index: index,
            action: action.clone(),
            beams: beams.clone(),
            time,
        });
        self.next_round += 1;
        Ok(StepOutcome {
            round,
            executed: action.clone(),
            time,
            sinrs,
            pending: pending_to_wire(&self.pending),
            done: self.is_done(),
        })
    }

    /// Result so far; rounds not yet played count as skipped.
    pub fn finalize(&self) -> Result<EpisodeResult> {
        let mut times = self.round_times.clone();
        times.resize(self.scenario.k(), 0.0);
        finalize(&self.pending, &times, self.penalty)
    }

    /// JSON lines, one per played round.
    pub fn replay_log(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("replay records serialize") + "\n")
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::{mrt_equal_power, round_time, CVector};
    use crate::channel::{sample_channels, C64};
    use crate::instances::{fully_cached, two_user_xor};

    fn episode(s: Scenario, seed: u64) -> Episode {
        let ch = sample_channels(seed, &s.config);
        Episode::reset(s, ch).unwrap()
    }

    #[test]
    fn fresh_episode_is_all_pending() {
        let ep = episode(fully_cached(4, 2), 1);
        for o in ep.observations() {
            assert_eq!(o.e, vec![0, 0, 0, 0]);
        }
    }

    #[test]
    fn observation_exposes_only_own_row() {
        let ep = episode(fully_cached(4, 2), 1);
        let o = ep.observe(2);
        assert!(o.local_csi[2].is_none());
        assert_eq!(o.local_csi[0].as_ref().unwrap(), &matrix_to_wire(ep.channels().link(2, 0)));
        // H[0][1] is the only matrix equal to itself; it must not appear
        let foreign = matrix_to_wire(ep.channels().link(0, 1));
        assert!(o.local_csi.iter().flatten().all(|h| h != &foreign));
        assert_eq!(o.flatten().len(), 4 + 3 * 2 * 4 + 16);
    }

    #[test]
    fn observations_are_byte_stable() {
        let a = serde_json::to_string(&episode(fully_cached(3, 2), 9).observations()).unwrap();
        let b = serde_json::to_string(&episode(fully_cached(3, 2), 9).observations()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn skip_costs_nothing() {
        let mut ep = episode(fully_cached(3, 2), 2);
        let out = ep.step(0, &RoundAction::skip(), &BeamformerSet::empty()).unwrap();
        assert_eq!(out.time, 0.0);
        assert_eq!(out.pending, vec![0, 0, 0]);
    }

    #[test]
    fn two_user_uncoded_exchange() {
        let s = two_user_xor();
        let mut ep = episode(s.clone(), 3);
        let a = RoundAction::new(vec![vec![1]]);
        let b = mrt_equal_power(ep.channels(), 0, &a, s.config.p).unwrap();
        let out = ep.step(0, &a, &b).unwrap();
        assert_eq!(out.pending, vec![0, 1]);
        assert!(out.time > 0.0);
        let a = RoundAction::new(vec![vec![0]]);
        let b = mrt_equal_power(ep.channels(), 1, &a, s.config.p).unwrap();
        ep.step(1, &a, &b).unwrap();
        let r = ep.finalize().unwrap();
        assert_eq!(r.served, vec![1, 1]);
        assert!((r.reward - 1.0 / r.total_time).abs() < 1e-15);
        assert_eq!(ep.replay_log().lines().count(), 2);
    }

    #[test]
    fn two_block_round_takes_the_slower_user() {
        let s = fully_cached(3, 2);
        let mut ep = episode(s.clone(), 4);
        let a = RoundAction::new(vec![vec![1], vec![2]]);
        let b = mrt_equal_power(ep.channels(), 0, &a, s.config.p).unwrap();
        let out = ep.step(0, &a, &b).unwrap();
        let slow = out.sinrs.iter().map(|&x| user_time(x, &s.config)).fold(0.0, f64::max);
        assert_eq!(out.time, slow);
        assert_eq!(out.time, round_time(&out.sinrs, &s.config));
    }

    #[test]
    fn rejects_power_and_decodability_violations() {
        let s = two_user_xor();
        let mut ep = episode(s.clone(), 5);
        let a = RoundAction::new(vec![vec![1]]);
        let big = BeamformerSet::new(vec![CVector::from_element(4, C64::new(1.0, 0.0))]);
        assert!(matches!(ep.step(0, &a, &big), Err(WeicError::PowerViolation { .. })));
        // user 1 does not hold d_1, so it cannot serve itself or anyone with it
        let bad = RoundAction::new(vec![vec![0, 1]]);
        assert!(matches!(ep.step(0, &bad, &BeamformerSet::empty()), Err(WeicError::InvalidAction(_))));
        assert_eq!(ep.next_round(), 0);
        assert!(ep.step(1, &RoundAction::skip(), &BeamformerSet::empty()).is_err());
    }

    #[test]
    fn finalize_rewards() {
        let r = finalize(&[false, false], &[1.5, 2.5], 10.0).unwrap();
        assert_eq!(r.reward, 0.25);
        let r = finalize(&[false, true], &[4.0, 0.0], 10.0).unwrap();
        assert!((r.reward - 1.0 / 14.0).abs() < 1e-15);
        assert_eq!(r.served, vec![1, 0]);
        assert!(matches!(finalize(&[false], &[0.0], 10.0), Err(WeicError::Internal(_))));
    }

    #[test]
    fn masking_carries_beams() {
        let s = fully_cached(3, 2);
        let table = ActionTable::for_scenario(&s);
        let g = table.index_of(&RoundAction::new(vec![vec![1], vec![2]]), 0).unwrap();
        let v1 = CVector::from_element(2, C64::new(0.1, 0.0));
        let v2 = CVector::from_element(2, C64::new(0.0, 0.2));
        let beams = BeamformerSet::new(vec![v1, v2.clone()]);
        let (a, b) = mask_with_beams(&table, g, &beams, &[true, false, true], 0, &s).unwrap();
        assert_eq!(a, RoundAction::new(vec![vec![2]]));
        assert_eq!(b.vectors, vec![v2]);
    }

    #[test]
    fn wire_convention_round_trip() {
        let p = vec![true, false, true];
        assert_eq!(pending_to_wire(&p), vec![0, 1, 0]);
        assert_eq!(pending_from_wire(&pending_to_wire(&p)), p);
    }
}
