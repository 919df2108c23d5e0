//! End-to-end acceptance checks; prints one PASS/FAIL line per criterion.

mod common;

use std::collections::HashSet;
use std::time::Instant;

use mtpenergy::caex::{CaexDocument, ElementPath};
use mtpenergy::cli::run_with;
use mtpenergy::enrg::MidRegistry;
use mtpenergy::mtp::mutate::MutationKind;
use mtpenergy::mtp::{
    extract_measurement_registry, parse_measurement_specs, validate_energy_mtp, Severity,
};
use mtpenergy::pol::{aggregate_report, counter_delta, render_report, ReportFormat};
use mtpenergy::sim::{handle_frame, Session};
use mtpenergy::tagbus::TagMessage;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn round_trip_fidelity() -> Check {
    let started = Instant::now();
    let names = [
        "distillation_pea.aml",
        "synthetic_1.aml",
        "synthetic_2.aml",
        "synthetic_3.aml",
    ];
    for name in names {
        let doc =
            CaexDocument::parse(&common::read_fixture(name)).map_err(|e| format!("{name}: {e}"))?;
        let first = doc.to_xml();
        let again = CaexDocument::parse(&first).map_err(|e| format!("{name} reparse: {e}"))?;
        ensure!(again == doc, "{name}: structure changed");
        ensure!(again.to_xml() == first, "{name}: canonical form not stable");
    }
    let elapsed = started.elapsed().as_secs_f64();
    ensure!(elapsed < 1.0, "took {elapsed:.3} s");
    Ok(format!(
        "{} manifests in {:.0} ms",
        names.len(),
        elapsed * 1e3
    ))
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_with(
        std::iter::once("mtpenergy").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (code, String::from_utf8_lossy(&err).into_owned())
}

fn injection_correctness() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("injected.aml").display().to_string();
    let again = dir.path().join("again.aml").display().to_string();
    let pristine = common::fixture("distillation_pea.aml")
        .display()
        .to_string();
    let spec = common::fixture("compact_meter_spec.json")
        .display()
        .to_string();
    let (code, err) = cli(&[
        "inject",
        "--mtp",
        &pristine,
        "--measurements",
        &spec,
        "--out",
        &out,
        "--seed",
        "42",
    ]);
    ensure!(code == 0, "inject exited {code}: {err}");
    let (code, err) = cli(&["validate", &out]);
    ensure!(code == 0, "validate exited {code}: {err}");

    let text = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let doc = CaexDocument::parse(&text).map_err(|e| e.to_string())?;
    let mids = MidRegistry::builtin();
    ensure!(
        validate_energy_mtp(&doc, &mids).error_count() == 0,
        "validator reports errors"
    );

    let class_path =
        ElementPath::parse("MTPDataObjectSUCLib/DataAssembly/IndicatorElement/EnRGView").unwrap();
    let class = doc
        .find_by_path(&class_path)
        .ok()
        .flatten()
        .ok_or("EnRGView class missing")?;
    let attributes = class.elements().filter(|e| e.name == "Attribute").count();
    ensure!(
        attributes == 13,
        "class has {attributes} attribute definitions"
    );

    let registry = extract_measurement_registry(&doc, &mids).map_err(|e| e.to_string())?;
    let items: Vec<_> = registry.nodes().collect();
    ensure!(items.len() == 33, "{} source items", items.len());
    let guids: HashSet<&str> = items.iter().map(|n| n.item.guid.as_str()).collect();
    ensure!(guids.len() == 33, "{} distinct GUIDs", guids.len());
    for node in &items {
        let element = doc
            .find_by_id(&node.item.guid)
            .ok()
            .flatten()
            .ok_or_else(|| format!("GUID {} resolves to nothing", node.item.guid))?;
        let identifier = element
            .elements()
            .find(|a| a.caex_name() == Some("Identifier"))
            .and_then(|a| a.child_text("Value"));
        ensure!(
            identifier == Some(node.item.node_id.as_str()),
            "GUID {} names {identifier:?}",
            node.item.guid
        );
        ensure!(
            registry
                .node(&node.item.node_id)
                .map(|n| n.item.guid.as_str())
                == Some(node.item.guid.as_str()),
            "node {} does not resolve back",
            node.item.node_id
        );
    }

    let (code, err) = cli(&[
        "inject",
        "--mtp",
        &out,
        "--measurements",
        &spec,
        "--out",
        &again,
    ]);
    ensure!(code == 0, "second inject exited {code}: {err}");
    let second = std::fs::read_to_string(&again).map_err(|e| e.to_string())?;
    ensure!(second == text, "second inject changed the manifest");
    Ok("0 errors, 13 attributes, 33 resolvable items, idempotent".into())
}

fn extraction_inverse() -> Check {
    let spec = parse_measurement_specs(&common::read_fixture("compact_meter_spec.json"))
        .map_err(|e| e.to_string())?;
    let registry = common::registry();
    ensure!(
        registry.to_specs() == spec,
        "recovered spec differs:\n{:#?}",
        registry.to_specs()
    );
    let per_view: Vec<usize> = registry.views().map(|(_, v)| v.items.len()).collect();
    ensure!(per_view == [11, 11, 11], "item counts {per_view:?}");
    Ok("every field recovered".into())
}

fn mutation_detection() -> Check {
    let mids = MidRegistry::builtin();
    let pristine = validate_energy_mtp(&common::injected_doc(), &mids);
    ensure!(
        pristine.error_count() == 0,
        "pristine fixture: {}",
        pristine.render_text()
    );
    let mut found = Vec::new();
    for kind in MutationKind::ALL {
        let name = format!("mutated_{}.aml", kind.slug());
        let doc = CaexDocument::parse(&common::read_fixture(&name)).map_err(|e| e.to_string())?;
        let report = validate_energy_mtp(&doc, &mids);
        let hits = report
            .violations
            .iter()
            .filter(|i| i.severity == Severity::Error && i.code == kind.expected_code())
            .count();
        ensure!(
            hits >= 1,
            "{name}: no {:?} error\n{}",
            kind.expected_code(),
            report.render_text()
        );
        found.push(format!("{}={hits}", kind.slug()));
    }
    Ok(found.join(" "))
}

fn energy_cross_check() -> Check {
    let started = Instant::now();
    let log = common::record(common::profile("distillation_profile.json"), 600);
    let wall = started.elapsed().as_secs_f64();
    ensure!(wall < 5.0, "600 ticks took {wall:.2} s");
    let report = aggregate_report(&log, &common::registry(), &MidRegistry::builtin());
    let check = report.cross_check.first().ok_or("no cross-check")?;
    ensure!(
        check.relative_gap < 0.005,
        "relative gap {}",
        check.relative_gap
    );
    let delta = counter_delta(log.series("EM001_E/V"), log.series("EM001_E/VbR"));
    let total = report
        .resources
        .iter()
        .find(|r| r.resource.as_str() == "Electricity")
        .ok_or("no total")?;
    ensure!(
        total.energy == delta,
        "total {} != delta {delta}",
        total.energy
    );
    // 100 W for 60 s
    ensure!((delta - 100.0 / 60.0).abs() < 1e-9, "delta {delta}");
    Ok(format!(
        "delta {delta:.9} Wh, gap {:.2e}, wall {:.2} s",
        check.relative_gap, wall
    ))
}

fn reset_semantics() -> Check {
    let profile = common::profile("distillation_profile_reset.json");
    let mut twin = profile.clone();
    twin.resets.clear();
    let epoch = profile.epoch;
    let with_reset = common::record(profile, 600);
    let twin_log = common::record(twin, 600);

    let at = |node: &str, ms: i64| {
        with_reset
            .series(node)
            .iter()
            .find(|s| s.ts == epoch.offset(ms))
            .and_then(|s| s.usable())
            .ok_or_else(|| format!("no {node} sample at {ms} ms"))
    };
    let before = at("EM001_E/V", 30_000)?;
    let vbr = at("EM001_E/VbR", 30_100)?;
    ensure!(vbr == before, "VbR {vbr} != pre-reset reading {before}");

    let mids = MidRegistry::builtin();
    let registry = common::registry();
    let a = aggregate_report(&with_reset, &registry, &mids).resources[0].energy;
    let b = aggregate_report(&twin_log, &registry, &mids).resources[0].energy;
    let rel = (a - b).abs() / b;
    ensure!(rel <= 1e-9, "with reset {a}, twin {b}, relative {rel:e}");
    Ok(format!("VbR {vbr:.9} Wh, totals differ by {rel:.1e}"))
}

fn determinism() -> Check {
    let registry = common::registry();
    let mids = MidRegistry::builtin();
    let run = || {
        let log = common::record(common::profile("distillation_profile_sine_power.json"), 300);
        let csv = render_report(&aggregate_report(&log, &registry, &mids), ReportFormat::Csv);
        (log.to_ndjson(), csv)
    };
    let (log_a, csv_a) = run();
    let (log_b, csv_b) = run();
    ensure!(log_a == log_b, "sample logs differ");
    ensure!(csv_a == csv_b, "CSV reports differ");
    Ok(format!(
        "{} log bytes, {} CSV bytes identical",
        log_a.len(),
        csv_a.len()
    ))
}

fn protocol_robustness() -> Check {
    let mut sim = common::simulator(common::profile("distillation_profile.json"));
    let frames = common::fuzz_frames(2024, 10_000);
    let mut session = Session::new();
    let (mut errors, mut strikes) = (0, 0);
    for frame in &frames {
        let before = session.strikes();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            handle_frame(&mut sim, &mut session, frame)
        }));
        let (responses, close) =
            result.map_err(|_| format!("panic on {:?}", String::from_utf8_lossy(frame)))?;
        let answered = responses
            .iter()
            .any(|m| matches!(m, TagMessage::Error { .. }));
        let counted = session.strikes() > before;
        ensure!(
            answered || counted,
            "frame neither answered nor counted: {:?}",
            String::from_utf8_lossy(frame)
        );
        errors += usize::from(answered);
        strikes += usize::from(counted);
        if close {
            session = Session::new();
        }
    }
    Ok(format!(
        "{} frames, {errors} error replies, {strikes} strikes",
        frames.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("round-trip fidelity", round_trip_fidelity),
        ("injection correctness", injection_correctness),
        ("extraction inverse", extraction_inverse),
        ("mutation detection", mutation_detection),
        ("energy cross-check", energy_cross_check),
        ("reset semantics", reset_semantics),
        ("determinism", determinism),
        ("protocol robustness", protocol_robustness),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
