//! Deterministic simulated PEA.
//!
//! Every instantaneous value is a pure function of the simulation clock;
//! counters integrate their source power with the trapezoid rule tick by
//! tick. Wall time only paces the clock, so acceleration never changes the
//! published values.

mod server;
mod session;

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrg::{energy_unit_wh, power_unit_watts, EnRgAttribute, MidRegistry};
use crate::mtp::{MeasurementRegistry, RegisteredView, ValidationReport};
use crate::tagbus::{BrowseItem, Quality, TagUpdate, TagValue, Timestamp};

pub use server::{run_server, ServeOptions, Server};
pub use session::{handle_frame, handle_request, Session};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("profile: {0}")]
    ParseError(String),
    #[error("profile names node `{0}`, which the manifest does not serve")]
    UnknownNode(String),
    #[error("bad generator: {0}")]
    BadGenerator(String),
    #[error("manifest is not valid:\n{}", .0.render_text())]
    InvalidManifest(ValidationReport),
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Signal shape for one `<tag>/V` node; parameters are in the node's unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalGenerator {
    Constant {
        level: f64,
    },
    Sine {
        offset: f64,
        amplitude: f64,
        period_ms: f64,
    },
    Ramp {
        start: f64,
        slope_per_s: f64,
    },
    /// Trapezoid integral of `source_node` times `scale` (W·ms → Wh is 1/3.6e6).
    CounterIntegrating {
        source_node: String,
        scale: f64,
        /// Starting reading; defaults to the view's static V.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    #[serde(flatten)]
    pub generator: SignalGenerator,
    /// Half-width of uniform seeded noise added to instantaneous signals.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub noise: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

/// A counter reset executed by the simulator after publishing tick `at_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledReset {
    pub node: String,
    pub at_ms: u64,
}

fn default_epoch() -> Timestamp {
    // 2025-01-01T00:00:00.000Z
    Timestamp(1_735_689_600_000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationProfile {
    pub seed: u64,
    pub tick_ms: u64,
    #[serde(default = "default_epoch")]
    pub epoch: Timestamp,
    pub signals: BTreeMap<String, Signal>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resets: Vec<ScheduledReset>,
}

impl SimulationProfile {
    /// Value of an instantaneous signal at `clock_ms`, noise included.
    pub fn value_at(&self, node: &str, clock_ms: u64) -> Option<f64> {
        let index = self.signals.keys().position(|k| k == node)?;
        let signal = &self.signals[node];
        let t = clock_ms as f64;
        let base = match &signal.generator {
            SignalGenerator::Constant { level } => *level,
            SignalGenerator::Sine {
                offset,
                amplitude,
                period_ms,
            } => offset + amplitude * (TAU * t / period_ms).sin(),
            SignalGenerator::Ramp { start, slope_per_s } => start + slope_per_s * t / 1000.0,
            SignalGenerator::CounterIntegrating { .. } => return None,
        };
        Some(base + noise(self.seed, index, clock_ms, signal.noise))
    }
}

fn noise(seed: u64, index: usize, clock_ms: u64, amplitude: f64) -> f64 {
    if amplitude == 0.0 {
        return 0.0;
    }
    let key = seed ^ (index as u64).rotate_left(40) ^ clock_ms.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let u: f64 = ChaCha8Rng::seed_from_u64(key).random();
    amplitude * (2.0 * u - 1.0)
}

fn v_node(view: &RegisteredView) -> String {
    format!("{}/V", view.view.tag_name)
}

/// Parses and validates a profile against the nodes of `registry`.
pub fn load_profile(
    text: &str,
    registry: &MeasurementRegistry,
) -> Result<SimulationProfile, SimError> {
    let profile: SimulationProfile =
        serde_json::from_str(text).map_err(|e| SimError::ParseError(e.to_string()))?;
    if profile.tick_ms == 0 {
        return Err(SimError::BadGenerator("tick_ms must be at least 1".into()));
    }
    let views: HashMap<String, &RegisteredView> =
        registry.views().map(|(_, v)| (v_node(v), v)).collect();
    let bad = |msg: String| Err(SimError::BadGenerator(msg));

    for (node, signal) in &profile.signals {
        let Some(view) = views.get(node) else {
            if registry.node(node).is_some() {
                return bad(format!("`{node}`: only `<tag>/V` nodes can carry a signal"));
            }
            return Err(SimError::UnknownNode(node.clone()));
        };
        if !signal.noise.is_finite() || signal.noise < 0.0 {
            return bad(format!(
                "`{node}`: noise must be a finite non-negative number"
            ));
        }
        let unit = view.view.v_unit.display.as_str();
        let non_negative = power_unit_watts(unit).is_some() || energy_unit_wh(unit).is_some();
        match &signal.generator {
            SignalGenerator::Constant { level } => {
                if !level.is_finite() {
                    return bad(format!("`{node}`: level must be finite"));
                }
            }
            SignalGenerator::Sine {
                offset,
                amplitude,
                period_ms,
            } => {
                if ![*offset, *amplitude, *period_ms]
                    .iter()
                    .all(|x| x.is_finite())
                {
                    return bad(format!("`{node}`: sine parameters must be finite"));
                }
                if *period_ms <= 0.0 || *amplitude < 0.0 {
                    return bad(format!(
                        "`{node}`: sine needs period_ms > 0 and amplitude >= 0"
                    ));
                }
                if non_negative && amplitude > offset {
                    return bad(format!(
                        "`{node}`: amplitude {amplitude} exceeds offset {offset} for a non-negative {unit} quantity"
                    ));
                }
            }
            SignalGenerator::Ramp { start, slope_per_s } => {
                if !start.is_finite() || !slope_per_s.is_finite() {
                    return bad(format!("`{node}`: ramp parameters must be finite"));
                }
            }
            SignalGenerator::CounterIntegrating {
                source_node,
                scale,
                initial,
            } => {
                if !scale.is_finite() || *scale <= 0.0 || initial.is_some_and(|i| !i.is_finite()) {
                    return bad(format!("`{node}`: scale must be positive and finite"));
                }
                let source_ok = profile.signals.get(source_node).is_some_and(|s| {
                    !matches!(s.generator, SignalGenerator::CounterIntegrating { .. })
                });
                let source_is_power = views
                    .get(source_node)
                    .is_some_and(|v| power_unit_watts(&v.view.v_unit.display).is_some());
                if !source_ok || !source_is_power {
                    return bad(format!(
                        "`{node}`: source `{source_node}` must be a power node with an instantaneous signal"
                    ));
                }
            }
        }
    }
    for reset in &profile.resets {
        let node = resolve_counter_node(&reset.node, registry)
            .ok_or_else(|| SimError::UnknownNode(reset.node.clone()))?;
        let counter = matches!(
            profile.signals.get(&node).map(|s| &s.generator),
            Some(SignalGenerator::CounterIntegrating { .. })
        );
        if !counter {
            return bad(format!("reset target `{}` is not a counter", reset.node));
        }
        if reset.at_ms % profile.tick_ms != 0 {
            return bad(format!(
                "reset at {} ms is not on a tick boundary",
                reset.at_ms
            ));
        }
    }
    Ok(profile)
}

/// Maps `<tag>`, or any `<tag>/<attribute>` node, to the view's `<tag>/V` node.
fn resolve_counter_node(node: &str, registry: &MeasurementRegistry) -> Option<String> {
    let tag = match node.split_once('/') {
        Some((tag, attr)) => {
            EnRgAttribute::from_name(attr)?;
            tag
        }
        None => node,
    };
    registry
        .views()
        .find(|(_, v)| v.view.tag_name == tag)
        .map(|(_, v)| v_node(v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub current: f64,
    pub vbr: f64,
    pub last_reset: Option<Timestamp>,
    pub counter: bool,
}

/// Dynamic state per `<tag>/V` node plus the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterState {
    pub sim_clock: u64,
    pub nodes: BTreeMap<String, NodeState>,
}

impl MeterState {
    pub fn initial(
        registry: &MeasurementRegistry,
        profile: &SimulationProfile,
        mids: &MidRegistry,
    ) -> Self {
        let mut nodes = BTreeMap::new();
        for (_, view) in registry.views() {
            let node = v_node(view);
            let generator = profile.signals.get(&node).map(|s| &s.generator);
            let (counter, current) = match generator {
                Some(SignalGenerator::CounterIntegrating { initial, .. }) => {
                    (true, initial.unwrap_or(view.view.v))
                }
                Some(_) => (false, profile.value_at(&node, 0).unwrap_or(view.view.v)),
                None => (mids.is_counter(view.view.mid), view.view.v),
            };
            nodes.insert(
                node,
                NodeState {
                    current,
                    vbr: view.view.vbr,
                    last_reset: None,
                    counter,
                },
            );
        }
        Self {
            sim_clock: 0,
            nodes,
        }
    }

    /// Rotates a counter: VbR takes the current reading, which restarts at zero.
    pub fn reset(&mut self, node: &str, at: Timestamp) -> bool {
        match self.nodes.get_mut(node) {
            Some(state) if state.counter => {
                state.vbr = state.current;
                state.current = 0.0;
                state.last_reset = Some(at);
                true
            }
            _ => false,
        }
    }
}

/// Advances the clock by `dt_ms`: instantaneous nodes take their value at the
/// new clock, counters add the trapezoid of their source over the step.
pub fn step(state: &mut MeterState, profile: &SimulationProfile, dt_ms: u64) {
    let t0 = state.sim_clock;
    let t1 = t0 + dt_ms;
    for (node, signal) in &profile.signals {
        let Some(slot) = state.nodes.get_mut(node) else {
            continue;
        };
        match &signal.generator {
            SignalGenerator::CounterIntegrating {
                source_node, scale, ..
            } => {
                let p0 = profile.value_at(source_node, t0).unwrap_or(0.0);
                let p1 = profile.value_at(source_node, t1).unwrap_or(0.0);
                slot.current += (p0 + p1) / 2.0 * dt_ms as f64 * scale;
            }
            _ => {
                if let Some(v) = profile.value_at(node, t1) {
                    slot.current = v;
                }
            }
        }
    }
    state.sim_clock = t1;
}

/// Served node set, profile and meter state of one simulated PEA.
#[derive(Debug, Clone)]
pub struct Simulator {
    registry: MeasurementRegistry,
    profile: SimulationProfile,
    state: MeterState,
    /// node id → (view tag's V node, attribute)
    nodes: BTreeMap<String, (String, EnRgAttribute)>,
}

impl Simulator {
    pub fn new(
        registry: MeasurementRegistry,
        profile: SimulationProfile,
        mids: &MidRegistry,
    ) -> Self {
        let state = MeterState::initial(&registry, &profile, mids);
        let nodes = registry
            .nodes()
            .map(|n| (n.item.node_id.clone(), (v_node(n.view), n.item.attribute)))
            .collect();
        Self {
            registry,
            profile,
            state,
            nodes,
        }
    }

    pub fn registry(&self) -> &MeasurementRegistry {
        &self.registry
    }

    pub fn profile(&self) -> &SimulationProfile {
        &self.profile
    }

    pub fn state(&self) -> &MeterState {
        &self.state
    }

    pub fn clock(&self) -> u64 {
        self.state.sim_clock
    }

    pub fn timestamp(&self) -> Timestamp {
        self.profile.epoch.offset(self.state.sim_clock as i64)
    }

    pub fn has_node(&self, node: &str) -> bool {
        self.nodes.contains_key(node)
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        step(&mut self.state, &self.profile, self.profile.tick_ms);
    }

    /// Executes resets scheduled for the current clock. Call after the
    /// tick's updates have been published.
    pub fn apply_scheduled_resets(&mut self) {
        let now = self.state.sim_clock;
        let ts = self.timestamp();
        let due: Vec<String> = self
            .profile
            .resets
            .iter()
            .filter(|r| r.at_ms == now)
            .filter_map(|r| resolve_counter_node(&r.node, &self.registry))
            .collect();
        for node in due {
            self.state.reset(&node, ts);
        }
    }

    pub fn browse(&self) -> Vec<BrowseItem> {
        self.registry
            .nodes()
            .map(|n| BrowseItem {
                node: n.item.node_id.clone(),
                guid: n.item.guid.clone(),
                unit: match n.item.attribute {
                    EnRgAttribute::V
                    | EnRgAttribute::VUnit
                    | EnRgAttribute::VSclMin
                    | EnRgAttribute::VSclMax
                    | EnRgAttribute::AccR
                    | EnRgAttribute::VbR => n.view.view.v_unit.display.clone(),
                    EnRgAttribute::Mp => "ms".into(),
                    _ => String::new(),
                },
            })
            .collect()
    }

    /// Current update for one node, or `None` if it is not served.
    pub fn read(&self, node: &str) -> Option<TagUpdate> {
        let (v_node, attr) = self.nodes.get(node)?;
        let view = self
            .registry
            .views()
            .map(|(_, v)| v)
            .find(|v| &self::v_node(v) == v_node)?;
        let state = &self.state.nodes[v_node];
        let (value, q) = match attr {
            EnRgAttribute::V => {
                let q = if view.view.in_scale(state.current) {
                    Quality::Good
                } else {
                    Quality::OutOfRange
                };
                (TagValue::Number(state.current), q)
            }
            EnRgAttribute::VbR => (TagValue::Number(state.vbr), Quality::Good),
            other => (view.view.value_of(*other), Quality::Good),
        };
        Some(TagUpdate {
            node: node.to_owned(),
            value,
            ts: self.timestamp(),
            q,
        })
    }

    /// Resets the counter owning `node`.
    pub fn reset(&mut self, node: &str) -> Result<(), ResetError> {
        let v_node = match self.nodes.get(node) {
            Some((v_node, _)) => v_node.clone(),
            None => resolve_counter_node(node, &self.registry)
                .filter(|_| !node.contains('/'))
                .ok_or(ResetError::UnknownNode)?,
        };
        let ts = self.timestamp();
        if self.state.reset(&v_node, ts) {
            Ok(())
        } else {
            Err(ResetError::NotCounter)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetError {
    UnknownNode,
    NotCounter,
}
