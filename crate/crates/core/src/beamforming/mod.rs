//! Physical layer: SINR, rates, round times and beamformer design.
//!
//! For sender `t` and receiver `k` the useful power of beam `v` is
//! `||H[t][k]^H v||^2 = v^H A_k v` with `A_k = H H^H`. Noise power is one.

mod dtrcg;
mod mrt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, C64};
use crate::eic::RoundAction;
use crate::error::{Result, WeicError};
use crate::model::SystemConfig;

pub use dtrcg::{dtrcg_solve, smoothed_gradient, smoothed_objective, trace_csv, DtrcgSolution, SolverParams, TraceRow};
pub use mrt::{dominant_direction, mrt_beamformer, mrt_equal_power};

pub type CVector = DVector<C64>;

/// One beamforming vector per message of a round, in block order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BeamformerSet {
    pub vectors: Vec<CVector>,
}

impl BeamformerSet {
    pub fn new(vectors: Vec<CVector>) -> Self {
        BeamformerSet { vectors }
    }

    pub fn empty() -> Self {
        BeamformerSet::default()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Total transmit power `sum_i ||v_i||^2`.
    pub fn power(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm_squared()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        BeamformerSet {
            vectors: self.vectors.iter().map(|v| v.scale(c)).collect(),
        }
    }

    /// `[[[re, im], ...], ...]`, one inner array per vector.
    pub fn to_wire(&self) -> Vec<Vec<[f64; 2]>> {
        self.vectors
            .iter()
            .map(|v| v.iter().map(|z| [z.re, z.im]).collect())
            .collect()
    }

    pub fn from_wire(raw: &[Vec<[f64; 2]>]) -> Self {
        BeamformerSet {
            vectors: raw
                .iter()
                .map(|v| CVector::from_iterator(v.len(), v.iter().map(|p| C64::new(p[0], p[1]))))
                .collect(),
        }
    }

    /// Rejects sets whose shape does not match `action` or whose power
    /// exceeds `budget` (with a relative slack of 1e-9).
    pub fn check(&self, action: &RoundAction, nt: usize, budget: f64) -> Result<()> {
        if self.len() != action.num_streams() {
            return Err(WeicError::InvalidAction(format!(
                "{} beamformers for {} messages",
                self.len(),
                action.num_streams()
            )));
        }
        if let Some(v) = self.vectors.iter().find(|v| v.len() != nt) {
            return Err(WeicError::InvalidAction(format!(
                "beamformer of length {} for {nt} antennas",
                v.len()
            )));
        }
        self.check_power(budget)
    }

    /// Finite entries and `sum_i ||v_i||^2 <= budget` up to a relative 1e-9.
    pub fn check_power(&self, budget: f64) -> Result<()> {
        if self.vectors.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(WeicError::InvalidAction("non-finite beamformer entry".into()));
        }
        let used = self.power();
        if used > budget * (1.0 + 1e-9) {
            return Err(WeicError::PowerViolation { used, budget });
        }
        Ok(())
    }
}

impl Serialize for BeamformerSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_wire().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BeamformerSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        Ok(BeamformerSet::from_wire(&raw))
    }
}

/// `||H^H v||^2`.
pub fn beam_gain(h: &crate::channel::CMatrix, v: &CVector) -> f64 {
    (h.adjoint() * v).norm_squared()
}

/// SINR of `user` in the round where `sender` transmits `action` with `beams`.
pub fn sinr(channels: &ChannelSet, sender: usize, action: &RoundAction, beams: &BeamformerSet, user: usize) -> Result<f64> {
    let own = action.block_of(user).ok_or(WeicError::NoAssignedMessage(user))?;
    if beams.len() != action.num_streams() {
        return Err(WeicError::InvalidAction(format!(
            "{} beamformers for {} messages",
            beams.len(),
            action.num_streams()
        )));
    }
    let h = channels.link(sender, user);
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (i, v) in beams.vectors.iter().enumerate() {
        let g = beam_gain(h, v);
        if i == own {
            signal = g;
        } else {
            interference += g;
        }
    }
    Ok(signal / (interference + SystemConfig::NOISE_POWER))
}

/// SINR of every served user, in block order then member order.
pub fn round_sinrs(channels: &ChannelSet, sender: usize, action: &RoundAction, beams: &BeamformerSet) -> Result<Vec<f64>> {
    action
        .served()
        .map(|k| sinr(channels, sender, action, beams, k))
        .collect()
}

/// Time to deliver a `B`-bit file at the given SINR, `B / (W log2(1 + SINR))`.
/// Zero SINR gives `+inf`.
pub fn user_time(sinr: f64, config: &SystemConfig) -> f64 {
    let rate = config.w * (1.0 + sinr).log2();
    if rate > 0.0 {
        config.b / rate
    } else {
        f64::INFINITY
    }
}

/// Round time: the slowest served user; an empty round costs nothing.
pub fn round_time(sinrs: &[f64], config: &SystemConfig) -> f64 {
    sinrs.iter().map(|&s| user_time(s, config)).fold(0.0, f64::max)
}

/// The single evaluation path for a round: `(time, per-user SINRs)`.
pub fn evaluate_round(
    channels: &ChannelSet,
    sender: usize,
    action: &RoundAction,
    beams: &BeamformerSet,
    config: &SystemConfig,
) -> Result<(f64, Vec<f64>)> {
    let sinrs = round_sinrs(channels, sender, action, beams)?;
    Ok((round_time(&sinrs, config), sinrs))
}
