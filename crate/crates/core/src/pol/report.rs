use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::enrg::{
    energy_unit_wh, format_number, power_unit_watts, MidRegistry, QuantityClass, Resource,
};
use crate::mtp::{MeasurementRegistry, RegisteredMeasurement, RegisteredView, ScopeKind};
use crate::tagbus::{Quality, Timestamp};

use super::{integrate_energy, Sample, SampleLog};

/// Floor of the relative-gap denominator.
pub const EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceTotal {
    pub resource: Resource,
    pub unit: String,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopeRow {
    pub scope: ScopeKind,
    pub target: String,
    pub resource: Resource,
    pub unit: String,
    pub energy: f64,
    /// Mean power in W over the coverage interval.
    pub avg_power: Option<f64>,
    pub samples: usize,
    pub coverage_start: Option<Timestamp>,
    pub coverage_end: Option<Timestamp>,
    /// Largest cross-check gap among the row's counters.
    pub gap_rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheck {
    pub node: String,
    pub power_node: String,
    pub unit: String,
    pub counter_delta: f64,
    pub integrated_estimate: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnergyReport {
    pub resources: Vec<ResourceTotal>,
    pub scopes: Vec<ScopeRow>,
    pub cross_check: Vec<CrossCheck>,
    /// `<tag>/V` samples left out because their quality was not `good`.
    pub excluded_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Text,
}

fn is_counter(view: &RegisteredView, mids: &MidRegistry) -> bool {
    match mids.decode(view.view.mid) {
        Ok(entry) => entry.quantity_class == QuantityClass::Counter,
        Err(_) => energy_unit_wh(&view.view.v_unit.display).is_some(),
    }
}

fn is_power(view: &RegisteredView, mids: &MidRegistry) -> bool {
    !is_counter(view, mids) && power_unit_watts(&view.view.v_unit.display).is_some()
}

/// Latest VbR reading at or before `ts`.
fn vbr_at(vbr: &[Sample], ts: Timestamp) -> Option<f64> {
    let idx = vbr.partition_point(|s| s.ts <= ts);
    vbr[..idx].iter().rev().find_map(Sample::usable)
}

/// Consumption shown by a counter series, across resets.
///
/// A reset between two readings is seen as a change of VbR (or, without VbR
/// data, as a decreasing reading); the consumption across it is
/// `(VbR − previous reading) + new reading`.
pub fn counter_delta(values: &[Sample], vbr: &[Sample]) -> f64 {
    let points: Vec<(Timestamp, f64)> = values
        .iter()
        .filter_map(|s| s.usable().map(|v| (s.ts, v)))
        .collect();
    let mut total = 0.0;
    for w in points.windows(2) {
        let ((t0, v0), (t1, v1)) = (w[0], w[1]);
        let (b0, b1) = (vbr_at(vbr, t0), vbr_at(vbr, t1));
        total += match b1 {
            Some(b1) if b0 != Some(b1) => (b1 - v0) + v1,
            _ if v1 < v0 => v1,
            _ => v1 - v0,
        };
    }
    total
}

fn v_node(view: &RegisteredView) -> String {
    format!("{}/V", view.view.tag_name)
}

fn cross_check(
    log: &SampleLog,
    measurement: &RegisteredMeasurement,
    counter: &RegisteredView,
    delta: f64,
    mids: &MidRegistry,
) -> Option<CrossCheck> {
    let mut powers = measurement
        .views
        .iter()
        .filter(|v| v.view.res == counter.view.res && is_power(v, mids));
    let power = powers.next()?;
    if powers.next().is_some() {
        // ambiguous source; no pairing
        return None;
    }
    let usable: Vec<&Sample> = log
        .series(&v_node(counter))
        .iter()
        .filter(|s| s.usable().is_some())
        .collect();
    let (first, last) = (usable.first()?, usable.last()?);
    let power_node = v_node(power);
    let estimate = integrate_energy(
        log,
        &power_node,
        first.ts,
        last.ts,
        &power.view.v_unit.display,
        &counter.view.v_unit.display,
    )
    .ok()?;
    Some(CrossCheck {
        node: v_node(counter),
        power_node,
        unit: counter.view.v_unit.display.clone(),
        counter_delta: delta,
        integrated_estimate: estimate,
        relative_gap: (delta - estimate).abs() / delta.max(EPSILON),
    })
}

type RowKey = (ScopeKind, String, Resource, String);

/// Counter deltas per scope row and resource, with trapezoid cross-checks.
pub fn aggregate_report(
    log: &SampleLog,
    registry: &MeasurementRegistry,
    mids: &MidRegistry,
) -> EnergyReport {
    let mut report = EnergyReport::default();
    let mut totals: BTreeMap<(Resource, String), f64> = BTreeMap::new();
    let mut rows: BTreeMap<RowKey, ScopeRow> = BTreeMap::new();

    for (measurement, view) in registry.views() {
        let node = v_node(view);
        let series = log.series(&node);
        report.excluded_samples += series.iter().filter(|s| s.q != Quality::Good).count();
        if !is_counter(view, mids) {
            continue;
        }
        let unit = view.view.v_unit.display.clone();
        totals.entry((view.view.res, unit.clone())).or_insert(0.0);
        if log.is_empty() {
            continue;
        }
        let usable: Vec<&Sample> = series.iter().filter(|s| s.usable().is_some()).collect();
        let delta = counter_delta(series, log.series(&format!("{}/VbR", view.view.tag_name)));
        let check = cross_check(log, measurement, view, delta, mids);

        let key = (
            measurement.scope.kind,
            measurement.scope.target.clone(),
            view.view.res,
            unit.clone(),
        );
        let row = rows.entry(key).or_insert_with(|| ScopeRow {
            scope: measurement.scope.kind,
            target: measurement.scope.target.clone(),
            resource: view.view.res,
            unit,
            energy: 0.0,
            avg_power: None,
            samples: 0,
            coverage_start: None,
            coverage_end: None,
            gap_rel: None,
        });
        row.energy += delta;
        row.samples += usable.len();
        if let (Some(first), Some(last)) = (usable.first(), usable.last()) {
            row.coverage_start = Some(row.coverage_start.map_or(first.ts, |t| t.min(first.ts)));
            row.coverage_end = Some(row.coverage_end.map_or(last.ts, |t| t.max(last.ts)));
        }
        if let Some(check) = check {
            row.gap_rel = Some(
                row.gap_rel
                    .map_or(check.relative_gap, |g| g.max(check.relative_gap)),
            );
            report.cross_check.push(check);
        }
    }

    for row in rows.values_mut() {
        if let (Some(start), Some(end), Some(wh)) = (
            row.coverage_start,
            row.coverage_end,
            energy_unit_wh(&row.unit),
        ) {
            let hours = (end.millis() - start.millis()) as f64 / 3.6e6;
            if hours > 0.0 {
                row.avg_power = Some(row.energy * wh / hours);
            }
        }
        *totals
            .get_mut(&(row.resource, row.unit.clone()))
            .expect("every row has a total") += row.energy;
    }
    report.resources = totals
        .into_iter()
        .map(|((resource, unit), energy)| ResourceTotal {
            resource,
            unit,
            energy,
        })
        .collect();
    report.scopes = rows.into_values().collect();
    report.cross_check.sort_by(|a, b| a.node.cmp(&b.node));
    report
}

fn opt(value: Option<f64>) -> String {
    value.map(format_number).unwrap_or_default()
}

fn render_csv(report: &EnergyReport) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "scope",
        "target",
        "resource",
        "energy",
        "unit",
        "avg_power",
        "samples",
        "gap_rel",
    ])
    .expect("in-memory write");
    for row in &report.scopes {
        w.write_record([
            row.scope.as_str().to_owned(),
            row.target.clone(),
            row.resource.to_string(),
            format_number(row.energy),
            row.unit.clone(),
            opt(row.avg_power),
            row.samples.to_string(),
            opt(row.gap_rel),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of UTF-8 fields")
}

fn render_text(report: &EnergyReport) -> String {
    let mut out = String::from("Energy by resource\n");
    for total in &report.resources {
        let _ = writeln!(
            out,
            "  {:<14} {:>18} {}",
            total.resource.as_str(),
            format_number(total.energy),
            total.unit
        );
    }
    out.push_str("Energy by scope\n");
    for row in &report.scopes {
        let scope = if row.target.is_empty() {
            row.scope.as_str().to_owned()
        } else {
            format!("{}:{}", row.scope.as_str(), row.target)
        };
        let _ = writeln!(
            out,
            "  {:<22} {:<14} {:>18} {:<4} avg {} W, {} samples",
            scope,
            row.resource.as_str(),
            format_number(row.energy),
            row.unit,
            opt(row.avg_power),
            row.samples
        );
    }
    out.push_str("Cross-check (counter delta vs. integrated power)\n");
    for check in &report.cross_check {
        let _ = writeln!(
            out,
            "  {:<22} delta {} {}, estimate {} {}, gap {:.6}%",
            check.node,
            format_number(check.counter_delta),
            check.unit,
            format_number(check.integrated_estimate),
            check.unit,
            check.relative_gap * 100.0
        );
    }
    let _ = writeln!(out, "Excluded samples: {}", report.excluded_samples);
    out
}

pub fn render_report(report: &EnergyReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
            text.push('\n');
            text
        }
        ReportFormat::Text => render_text(report),
    }
}
