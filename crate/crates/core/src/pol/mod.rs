//! POL side: monitoring client, sample logs and energy reports.

mod monitor;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrg::power_ms_to_energy;
use crate::mtp::ValidationReport;
use crate::sim::Simulator;
use crate::tagbus::{Quality, TagUpdate, TagValue, Timestamp};

pub use monitor::{monitor, Budget, MonitorOptions};
pub use report::{
    aggregate_report, counter_delta, render_report, CrossCheck, EnergyReport, ReportFormat,
    ResourceTotal, ScopeRow, EPSILON,
};

#[derive(Debug, Error)]
pub enum PolError {
    #[error("cannot connect to {endpoint}: {message}")]
    ConnectFailure { endpoint: String, message: String },
    #[error("protocol error: {message}{}", frame.as_deref().map(|f| format!(" (frame: {f})")).unwrap_or_default())]
    ProtocolError {
        message: String,
        frame: Option<String>,
    },
    #[error("manifest is not valid:\n{}", .0.render_text())]
    ValidationFailed(ValidationReport),
    #[error("node `{node}` has {count} usable sample(s) in the interval; at least 2 are needed")]
    InsufficientSamples { node: String, count: usize },
    #[error("cannot convert {power_unit}·ms to {energy_unit}")]
    UnitMismatch {
        power_unit: String,
        energy_unit: String,
    },
    #[error("sample log line {line}: {message}")]
    LogParse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PolError {
    pub(crate) fn protocol(message: impl Into<String>, frame: Option<&str>) -> Self {
        PolError::ProtocolError {
            message: message.into(),
            frame: frame.map(|f| f.trim_end().to_owned()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub ts: Timestamp,
    pub value: TagValue,
    pub q: Quality,
}

impl Sample {
    /// Numeric value of a `good` sample.
    pub fn usable(&self) -> Option<f64> {
        match (self.q, &self.value) {
            (Quality::Good, TagValue::Number(v)) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    node: String,
    ts: Timestamp,
    value: TagValue,
    q: Quality,
}

/// Received updates per node, each series strictly increasing in time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleLog {
    series: BTreeMap<String, Vec<Sample>>,
}

impl SampleLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, update: TagUpdate) -> Result<(), PolError> {
        let series = self.series.entry(update.node.clone()).or_default();
        if let Some(last) = series.last() {
            if update.ts <= last.ts {
                return Err(PolError::protocol(
                    format!(
                        "update for `{}` at {} does not follow {}",
                        update.node, update.ts, last.ts
                    ),
                    None,
                ));
            }
        }
        series.push(Sample {
            ts: update.ts,
            value: update.value,
            q: update.q,
        });
        Ok(())
    }

    pub fn series(&self, node: &str) -> &[Sample] {
        self.series.get(node).map_or(&[], Vec::as_slice)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.series.values().all(Vec::is_empty)
    }

    pub fn len(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    /// One JSON object per sample, sorted by node then time.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for (node, samples) in &self.series {
            for s in samples {
                let line = LogLine {
                    node: node.clone(),
                    ts: s.ts,
                    value: s.value.clone(),
                    q: s.q,
                };
                out.push_str(&serde_json::to_string(&line).expect("samples serialize"));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, PolError> {
        let mut lines: Vec<LogLine> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line = serde_json::from_str(raw).map_err(|e| PolError::LogParse {
                line: i + 1,
                message: e.to_string(),
            })?;
            lines.push(line);
        }
        // files may interleave nodes; order within a node must still be strict
        lines.sort_by(|a, b| a.node.cmp(&b.node).then(a.ts.cmp(&b.ts)));
        let mut log = SampleLog::new();
        for line in lines {
            log.record(TagUpdate {
                node: line.node,
                value: line.value,
                ts: line.ts,
                q: line.q,
            })
            .map_err(|e| PolError::LogParse {
                line: 0,
                message: e.to_string(),
            })?;
        }
        Ok(log)
    }
}

/// Trapezoid integral of a power series over `[t0, t1]`, in `energy_unit`.
/// Samples that are not `good` are skipped; the gap is bridged linearly.
pub fn integrate_energy(
    log: &SampleLog,
    power_node: &str,
    t0: Timestamp,
    t1: Timestamp,
    power_unit: &str,
    energy_unit: &str,
) -> Result<f64, PolError> {
    let factor =
        power_ms_to_energy(power_unit, energy_unit).ok_or_else(|| PolError::UnitMismatch {
            power_unit: power_unit.to_owned(),
            energy_unit: energy_unit.to_owned(),
        })?;
    let points: Vec<(i64, f64)> = log
        .series(power_node)
        .iter()
        .filter(|s| s.ts >= t0 && s.ts <= t1)
        .filter_map(|s| s.usable().map(|v| (s.ts.millis(), v)))
        .collect();
    if points.len() < 2 {
        return Err(PolError::InsufficientSamples {
            node: power_node.to_owned(),
            count: points.len(),
        });
    }
    let area: f64 = points
        .windows(2)
        .map(|w| (w[0].1 + w[1].1) / 2.0 * (w[1].0 - w[0].0) as f64)
        .sum();
    Ok(area * factor)
}

/// Runs `sim` for `ticks` ticks without a network, recording every node at
/// start and after each tick, the way a one-tick subscription would.
pub fn record_simulation(sim: &mut Simulator, ticks: u64) -> SampleLog {
    let nodes: Vec<String> = sim.browse().into_iter().map(|i| i.node).collect();
    let mut log = SampleLog::new();
    let publish = |sim: &Simulator, log: &mut SampleLog| {
        for node in &nodes {
            if let Some(update) = sim.read(node) {
                log.record(update).expect("the clock only moves forward");
            }
        }
    };
    publish(sim, &mut log);
    for _ in 0..ticks {
        sim.step();
        publish(sim, &mut log);
        sim.apply_scheduled_resets();
    }
    log
}
