//! Newline-delimited JSON protocol for external trainers.
//!
//! One request per line, one response per line, in order. Every response
//! echoes the request `id` and carries `"v": 1`; success responses have
//! `"ok": true` plus op-specific fields, failures `"ok": false` and
//! `"error": {"code", "message"}`. See `docs/protocol.md`.

mod transport;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::beamforming::{dtrcg_solve, mrt_equal_power, round_sinrs, BeamformerSet, CVector};
use crate::channel::{composite_channel, composite_similarity, sample_channels_with, ChannelOptions, ChannelSet};
use crate::env::Episode;
use crate::eic::{mask_action, ActionTable, EicPlan, RoundAction};
use crate::error::WeicError;
use crate::joint::{evaluate_plan, exhaustive_search, sequential_optimize, JointParams};
use crate::model::{generate_scenario, Scenario, SystemConfig};

pub use transport::{serve_lines, serve_stdio, serve_tcp};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMethod {
    Dtrcg,
    Mrt,
}

/// Defaults applied when a request leaves a field out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub system: SystemConfig,
    pub files_per_user: f64,
    pub joint: JointParams,
    pub reference: ReferenceMethod,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            system: SystemConfig::default(),
            files_per_user: 4.0,
            joint: JointParams::default(),
            reference: ReferenceMethod::Dtrcg,
        }
    }
}

/// Protocol-level failure.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolError {
    pub code: &'static str,
    pub message: String,
}

impl ProtocolError {
    fn bad_request(message: impl Into<String>) -> Self {
        ProtocolError {
            code: "bad_request",
            message: message.into(),
        }
    }
}

impl From<WeicError> for ProtocolError {
    fn from(e: WeicError) -> Self {
        let code = match &e {
            WeicError::InvalidConfig(_) | WeicError::InfeasibleScenario(_) => "invalid_config",
            WeicError::InvalidAction(_) | WeicError::PowerViolation { .. } | WeicError::NoAssignedMessage(_) => {
                "infeasible_action"
            }
            WeicError::InvalidPlan(_) | WeicError::NoFeasiblePlan => "infeasible_plan",
            WeicError::SearchGuard { .. } => "guard_exceeded",
            WeicError::Episode(_) => "episode_state",
            WeicError::EmptyDestinationSet | WeicError::ZeroNorm | WeicError::ZeroChannel => "invalid_argument",
            WeicError::BellOverflow(_) | WeicError::Internal(_) => "internal",
        };
        ProtocolError {
            code,
            message: e.to_string(),
        }
    }
}

type OpResult = Result<Value, ProtocolError>;

struct Slot {
    episode: Episode,
    table: ActionTable,
}

/// Shared state of one service process: the live episodes.
pub struct Service {
    config: ServiceConfig,
    episodes: Mutex<BTreeMap<u64, Arc<Mutex<Slot>>>>,
    next_id: AtomicU64,
    stopped: AtomicBool,
}

fn params<T: DeserializeOwned>(req: &Value) -> Result<T, ProtocolError> {
    T::deserialize(req).map_err(|e| ProtocolError::bad_request(e.to_string()))
}

#[derive(Deserialize)]
struct ResetReq {
    seed: u64,
    config: Option<SystemConfig>,
    files_per_user: Option<f64>,
    channel_seed: Option<u64>,
    #[serde(default)]
    refresh_per_round: bool,
    scenario: Option<Scenario>,
    channels: Option<ChannelSet>,
    #[serde(default)]
    flat: bool,
}

#[derive(Deserialize)]
struct EpisodeReq {
    episode_id: u64,
}

/// An action named by table index or by explicit destination blocks.
#[derive(Deserialize)]
struct ActionReq {
    episode_id: u64,
    round: usize,
    action_index: Option<usize>,
    blocks: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    beams: BeamformerSet,
    method: Option<ReferenceMethod>,
}

#[derive(Deserialize)]
struct TableReq {
    config: Option<SystemConfig>,
    episode_id: Option<u64>,
    sender: Option<usize>,
}

#[derive(Deserialize)]
struct SolvePlanReq {
    episode_id: u64,
    plan: Option<Vec<Vec<Vec<usize>>>>,
    method: Option<String>,
}

#[derive(Deserialize)]
struct Group {
    sender: usize,
    dests: Vec<usize>,
}

#[derive(Deserialize)]
struct SimilarityReq {
    episode_id: u64,
    groups: Vec<Group>,
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("protocol values serialize")
}

/// Explicit blocks paired with their beams, in canonical block order.
fn canonical_pairs(blocks: &[Vec<usize>], beams: &BeamformerSet) -> Result<(RoundAction, BeamformerSet), ProtocolError> {
    if !beams.is_empty() && beams.len() != blocks.len() {
        return Err(WeicError::InvalidAction(format!("{} beamformers for {} blocks", beams.len(), blocks.len())).into());
    }
    let mut pairs: Vec<(Vec<usize>, Option<CVector>)> = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut b = b.clone();
            b.sort_unstable();
            (b, beams.vectors.get(i).cloned())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    let action = RoundAction::new(pairs.iter().map(|p| p.0.clone()).collect());
    if action.num_streams() != pairs.len() {
        return Err(WeicError::InvalidAction("empty block".into()).into());
    }
    let beams = BeamformerSet::new(pairs.into_iter().filter_map(|p| p.1).collect());
    Ok((action, beams))
}

impl Service {
    pub fn new(config: ServiceConfig) -> Self {
        Service {
            config,
            episodes: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            stopped: AtomicBool::new(false),
        }
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped.load(Ordering::SeqCst)
    }

    pub fn live_episodes(&self) -> usize {
        self.episodes.lock().expect("episode map").len()
    }

    /// Handles one request line and returns the response line (without a
    /// trailing newline). Never panics on bad input.
    pub fn handle_line(&self, line: &str) -> String {
        let (id, result) = match serde_json::from_str::<Value>(line) {
            Err(e) => (Value::Null, Err(ProtocolError::bad_request(format!("malformed JSON: {e}")))),
            Ok(req) => {
                let id = req.get("id").cloned().unwrap_or(Value::Null);
                (id, self.dispatch(&req))
            }
        };
        let mut out = Map::new();
        out.insert("v".into(), json!(PROTOCOL_VERSION));
        out.insert("id".into(), id);
        match result {
            Ok(Value::Object(fields)) => {
                out.insert("ok".into(), json!(true));
                out.extend(fields);
            }
            Ok(other) => {
                out.insert("ok".into(), json!(true));
                out.insert("result".into(), other);
            }
            Err(e) => {
                out.insert("ok".into(), json!(false));
                out.insert("error".into(), json!({"code": e.code, "message": e.message}));
            }
        }
        Value::Object(out).to_string()
    }

    fn dispatch(&self, req: &Value) -> OpResult {
        if !req.is_object() {
            return Err(ProtocolError::bad_request("request must be a JSON object"));
        }
        if let Some(v) = req.get("v") {
            if v.as_u64() != Some(PROTOCOL_VERSION) {
                return Err(ProtocolError::bad_request(format!("unsupported protocol version {v}")));
            }
        }
        let op = req
            .get("op")
            .and_then(Value::as_str)
            .ok_or_else(|| ProtocolError::bad_request("missing string field \"op\""))?;
        match op {
            "reset" => self.reset(params(req)?),
            "step" => self.step(params(req)?),
            "finalize" => self.finalize(params(req)?),
            "action_table" => self.action_table(params(req)?),
            "reference_beamformer" => self.reference_beamformer(params(req)?),
            "solve_plan" => self.solve_plan(params(req)?),
            "composite_similarity" => self.similarity(params(req)?),
            "shutdown" => {
                self.stopped.store(true, Ordering::SeqCst);
                Ok(json!({"shutdown": true}))
            }
            other => Err(ProtocolError::bad_request(format!("unknown op {other:?}"))),
        }
    }

    fn slot(&self, id: u64) -> Result<Arc<Mutex<Slot>>, ProtocolError> {
        self.episodes
            .lock()
            .expect("episode map")
            .get(&id)
            .cloned()
            .ok_or_else(|| ProtocolError {
                code: "unknown_episode",
                message: format!("no live episode {id}"),
            })
    }

    fn reset(&self, r: ResetReq) -> OpResult {
        let scenario = match r.scenario {
            Some(s) => {
                s.check()?;
                s
            }
            None => {
                let config = r.config.unwrap_or(self.config.system);
                generate_scenario(r.seed, config, r.files_per_user.unwrap_or(self.config.files_per_user))?
            }
        };
        let channels = match r.channels {
            Some(c) => c,
            None => sample_channels_with(
                r.channel_seed.unwrap_or(r.seed),
                &scenario.config,
                ChannelOptions {
                    refresh_per_round: r.refresh_per_round,
                },
            ),
        };
        let table = ActionTable::for_scenario(&scenario);
        let episode = Episode::reset(scenario, channels)?;
        let mut observations = Vec::new();
        for o in episode.observations() {
            let mut v = to_value(&o);
            if r.flat {
                v["flat"] = to_value(&o.flatten());
            }
            observations.push(v);
        }
        let out = json!({
            "scenario": to_value(episode.scenario()),
            "observations": observations,
            "table_size": table.len(),
            "penalty_time": episode.penalty_time(),
        });
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        self.episodes
            .lock()
            .expect("episode map")
            .insert(id, Arc::new(Mutex::new(Slot { episode, table })));
        let mut out = out;
        out["episode_id"] = json!(id);
        Ok(out)
    }

    fn step(&self, r: ActionReq) -> OpResult {
        let slot = self.slot(r.episode_id)?;
        let mut slot = slot.lock().expect("episode lock");
        let Slot { episode, table } = &mut *slot;
        let out = match (r.action_index, &r.blocks) {
            (Some(g), None) => episode.step_index(r.round, table, g, &r.beams)?,
            (None, Some(blocks)) => {
                let (action, beams) = canonical_pairs(blocks, &r.beams)?;
                episode.step(r.round, &action, &beams)?
            }
            _ => return Err(ProtocolError::bad_request("give exactly one of action_index and blocks")),
        };
        Ok(json!({
            "round": out.round,
            "executed": out.executed.blocks,
            "time": out.time,
            "sinrs": out.sinrs,
            "pending": out.pending,
            "done": out.done,
        }))
    }

    fn finalize(&self, r: EpisodeReq) -> OpResult {
        let slot = self.slot(r.episode_id)?;
        let result = slot.lock().expect("episode lock").episode.finalize()?;
        self.episodes.lock().expect("episode map").remove(&r.episode_id);
        Ok(to_value(&result))
    }

    fn action_table(&self, r: TableReq) -> OpResult {
        if let Some(id) = r.episode_id {
            let slot = self.slot(id)?;
            let slot = slot.lock().expect("episode lock");
            let s = slot.episode.scenario();
            let mut out = json!({
                "K": s.k(),
                "Nt": s.config.nt,
                "size": slot.table.len(),
                "entries": to_value(&slot.table.to_wire()),
            });
            if let Some(t) = r.sender {
                if t >= s.k() {
                    return Err(ProtocolError::bad_request(format!("sender {t} out of range")));
                }
                let per_sender: Vec<Value> = crate::eic::enumerate_round_actions(t, s, false)
                    .into_iter()
                    .map(|e| json!({"index": e.index, "blocks": e.action.blocks, "valid": e.valid}))
                    .collect();
                out["sender"] = json!(t);
                out["sender_entries"] = Value::Array(per_sender);
            }
            return Ok(out);
        }
        let config = r.config.unwrap_or(self.config.system);
        if config.k < 2 {
            return Err(WeicError::InvalidConfig("K must be at least 2".into()).into());
        }
        let table = ActionTable::universal(config.k, config.nt);
        Ok(json!({
            "K": config.k,
            "Nt": config.nt,
            "size": table.len(),
            "entries": to_value(&table.to_wire()),
        }))
    }

    fn reference_beamformer(&self, r: ActionReq) -> OpResult {
        let slot = self.slot(r.episode_id)?;
        let slot = slot.lock().expect("episode lock");
        let ep = &slot.episode;
        let s = ep.scenario();
        let t = r.round;
        if t >= s.k() {
            return Err(ProtocolError::bad_request(format!("round {t} out of range")));
        }
        // the blocks the returned beams align with, and the executed action
        let (layout, executed) = match (r.action_index, &r.blocks) {
            (Some(g), None) => {
                let entry = slot
                    .table
                    .action(g, t)
                    .ok_or_else(|| WeicError::InvalidAction(format!("action index {g} outside table")))?;
                entry.validate_for(t, s).map_err(WeicError::InvalidAction)?;
                let executed = mask_action(&entry, ep.pending(), t, s);
                (entry, executed)
            }
            (None, Some(blocks)) => {
                let (a, _) = canonical_pairs(blocks, &BeamformerSet::empty())?;
                a.validate_for(t, s).map_err(WeicError::InvalidAction)?;
                (a.clone(), a)
            }
            _ => return Err(ProtocolError::bad_request("give exactly one of action_index and blocks")),
        };
        let method = r.method.unwrap_or(self.config.reference);
        let (beams, min_sinr, converged) = match method {
            ReferenceMethod::Dtrcg => {
                let sol = dtrcg_solve(ep.channels(), t, &executed, s.config.p, &self.config.joint.solver)?;
                (sol.beams, sol.min_sinr, sol.converged)
            }
            ReferenceMethod::Mrt => {
                let b = mrt_equal_power(ep.channels(), t, &executed, s.config.p)?;
                let m = round_sinrs(ep.channels(), t, &executed, &b)?
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                (b, m, true)
            }
        };
        // zero vectors for blocks that masking removed
        let nt = s.config.nt;
        let aligned = BeamformerSet::new(
            layout
                .blocks
                .iter()
                .map(|b| match executed.blocks.iter().position(|e| layout.block_of(e[0]) == layout.block_of(b[0])) {
                    Some(i) => beams.vectors[i].clone(),
                    None => CVector::zeros(nt),
                })
                .collect(),
        );
        Ok(json!({
            "layout": layout.blocks,
            "executed": executed.blocks,
            "beams": to_value(&aligned),
            "min_sinr": if min_sinr.is_finite() { json!(min_sinr) } else { Value::Null },
            "converged": converged,
            "method": to_value(&method),
        }))
    }

    fn solve_plan(&self, r: SolvePlanReq) -> OpResult {
        let slot = self.slot(r.episode_id)?;
        let slot = slot.lock().expect("episode lock");
        let (s, ch) = (slot.episode.scenario(), slot.episode.channels());
        let p = &self.config.joint;
        let sol = match (&r.plan, r.method.as_deref()) {
            (Some(plan), None | Some("evaluate")) => {
                let plan = EicPlan::new(plan.iter().cloned().map(RoundAction::new).collect());
                evaluate_plan(s, ch, &plan, p)?
            }
            (None, Some("exhaustive")) => exhaustive_search(s, ch, p)?,
            (None, Some("sequential")) => sequential_optimize(s, ch, p)?,
            _ => {
                return Err(ProtocolError::bad_request(
                    "give a plan, or method \"exhaustive\" or \"sequential\"",
                ))
            }
        };
        Ok(to_value(&sol))
    }

    fn similarity(&self, r: SimilarityReq) -> OpResult {
        let slot = self.slot(r.episode_id)?;
        let slot = slot.lock().expect("episode lock");
        let ch = slot.episode.channels();
        let k = ch.k();
        let mut composites = Vec::with_capacity(r.groups.len());
        for g in &r.groups {
            if g.sender >= k || g.dests.iter().any(|&d| d >= k) {
                return Err(ProtocolError::bad_request("user index out of range"));
            }
            composites.push(composite_channel(ch, g.sender, &g.dests)?);
        }
        let mut matrix = vec![vec![0.0; composites.len()]; composites.len()];
        for i in 0..composites.len() {
            for j in i..composites.len() {
                let c = composite_similarity(&composites[i], &composites[j])?;
                matrix[i][j] = c;
                matrix[j][i] = c;
            }
        }
        Ok(json!({ "matrix": matrix }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(s: &Service, req: Value) -> Value {
        serde_json::from_str(&s.handle_line(&req.to_string())).unwrap()
    }

    #[test]
    fn malformed_json_is_a_bad_request() {
        let s = Service::new(ServiceConfig::default());
        let r: Value = serde_json::from_str(&s.handle_line("{not json")).unwrap();
        assert_eq!(r["ok"], json!(false));
        assert_eq!(r["error"]["code"], json!("bad_request"));
        assert_eq!(r["v"], json!(1));
        let r = call(&s, json!({"id": 3, "op": "fly"}));
        assert_eq!(r["error"]["code"], json!("bad_request"));
        assert_eq!(r["id"], json!(3));
    }

    #[test]
    fn table_has_bell_size() {
        let s = Service::new(ServiceConfig::default());
        let r = call(&s, json!({"id": "t", "op": "action_table", "config": {"K": 5, "Nt": 4}}));
        assert_eq!(r["size"], json!(52));
        assert_eq!(r["entries"].as_array().unwrap().len(), 52);
    }

    #[test]
    fn episode_lifecycle() {
        let s = Service::new(ServiceConfig::default());
        let cfg = json!({"K": 3, "N": 3, "Nt": 2});
        let r = call(&s, json!({"id": 1, "op": "reset", "seed": 7, "config": cfg, "files_per_user": 2}));
        assert_eq!(r["ok"], json!(true), "{r}");
        let id = r["episode_id"].as_u64().unwrap();
        assert_eq!(r["observations"][0]["e"], json!([0, 0, 0]));
        for t in 0..3 {
            let rb = call(&s, json!({"op": "reference_beamformer", "episode_id": id, "round": t, "action_index": 0}));
            assert_eq!(rb["beams"], json!([]));
            let st = call(&s, json!({"op": "step", "episode_id": id, "round": t, "action_index": 0, "beams": []}));
            assert_eq!(st["time"], json!(0.0));
        }
        let f = call(&s, json!({"op": "finalize", "episode_id": id}));
        assert_eq!(f["served"], json!([0, 0, 0]));
        assert_eq!(s.live_episodes(), 0);
        let again = call(&s, json!({"op": "finalize", "episode_id": id}));
        assert_eq!(again["error"]["code"], json!("unknown_episode"));
    }

    #[test]
    fn shutdown_sets_the_flag() {
        let s = Service::new(ServiceConfig::default());
        assert!(!s.is_stopped());
        let r = call(&s, json!({"op": "shutdown"}));
        assert_eq!(r["ok"], json!(true));
        assert!(s.is_stopped());
    }
}
