#![allow(dead_code)]

use std::path::PathBuf;
use std::thread;

use mtpenergy::caex::CaexDocument;
use mtpenergy::enrg::MidRegistry;
use mtpenergy::mtp::{extract_measurement_registry, MeasurementRegistry};
use mtpenergy::pol::{monitor, Budget, MonitorOptions, SampleLog};
use mtpenergy::sim::{load_profile, ServeOptions, Server, SimulationProfile, Simulator};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn injected_doc() -> CaexDocument {
    CaexDocument::parse(&read_fixture("distillation_pea_injected.aml")).unwrap()
}

pub fn registry() -> MeasurementRegistry {
    extract_measurement_registry(&injected_doc(), &MidRegistry::builtin()).unwrap()
}

pub fn profile(name: &str) -> SimulationProfile {
    load_profile(&read_fixture(name), &registry()).unwrap()
}

pub fn simulator(profile: SimulationProfile) -> Simulator {
    Simulator::new(registry(), profile, &MidRegistry::builtin())
}

/// Serves `profile` on an ephemeral port for `ticks` ticks and records it
/// with the monitoring client.
pub fn record(profile: SimulationProfile, ticks: u64) -> SampleLog {
    let server = Server::bind(
        simulator(profile),
        ServeOptions {
            bind: "127.0.0.1:0".into(),
            accelerate: 1000.0,
            ticks: Some(ticks),
            start_on_subscribe: true,
        },
    )
    .unwrap();
    let addr = server.local_addr().unwrap();
    let handle = thread::spawn(move || server.run());
    let log = monitor(
        &injected_doc(),
        &MidRegistry::builtin(),
        &MonitorOptions {
            endpoint: Some(addr.to_string()),
            interval_ms: 100,
            budget: Budget::Ticks(ticks),
        },
    )
    .unwrap();
    assert_eq!(handle.join().unwrap().unwrap(), ticks);
    log
}

/// What a subscriber with a one-tick interval would record, without a socket.
pub fn record_offline(profile: SimulationProfile, ticks: u64) -> SampleLog {
    let mut sim = simulator(profile);
    let nodes: Vec<String> = sim.browse().into_iter().map(|i| i.node).collect();
    let mut log = SampleLog::new();
    let publish = |sim: &Simulator, log: &mut SampleLog| {
        for node in &nodes {
            log.record(sim.read(node).unwrap()).unwrap();
        }
    };
    publish(&sim, &mut log);
    for _ in 0..ticks {
        sim.step();
        publish(&sim, &mut log);
        sim.apply_scheduled_resets();
    }
    log
}

/// Hostile frames: random bytes, truncated valid messages and unknown or
/// malformed ops. None of them is a valid request.
pub fn fuzz_frames(seed: u64, count: usize) -> Vec<Vec<u8>> {
    use mtpenergy::tagbus::{encode_message, TagMessage};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let valid = [
        encode_message(&TagMessage::Hello {
            client: "fuzz".into(),
            proto: 1,
        }),
        encode_message(&TagMessage::Browse),
        encode_message(&TagMessage::Subscribe {
            nodes: vec!["EM001_E/V".into()],
            interval_ms: 100,
            id: Some(3),
        }),
        encode_message(&TagMessage::Read {
            nodes: vec!["EM001_P/V".into()],
            id: None,
        }),
        encode_message(&TagMessage::Reset {
            node: "EM001_E".into(),
            id: Some(4),
        }),
    ];
    let ops = [
        "frobnicate",
        "HELLO",
        "",
        "update2",
        "browse_results",
        "null",
    ];
    (0..count)
        .map(|i| {
            let mut frame = match i % 4 {
                0 => {
                    let len = rng.random_range(1..200);
                    let mut bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                    bytes.retain(|&b| b != b'\n');
                    if bytes.iter().all(u8::is_ascii_whitespace) {
                        bytes.push(b'#');
                    }
                    // a lone valid JSON value is possible but never an object with an op
                    bytes
                }
                1 => {
                    let msg = valid[rng.random_range(0..valid.len())]
                        .trim_end()
                        .as_bytes();
                    let cut = rng.random_range(1..msg.len() - 1);
                    msg[..cut].to_vec()
                }
                2 => {
                    let op = ops[rng.random_range(0..ops.len())];
                    format!(r#"{{"op":"{op}","id":{}}}"#, rng.random::<u32>()).into_bytes()
                }
                _ => match rng.random_range(0..5) {
                    0 => br#"{"op":"read"}"#.to_vec(),
                    1 => br#"{"op":"subscribe","nodes":["EM001_E/V"]}"#.to_vec(),
                    2 => br#"{"op":"hello","client":"x"}"#.to_vec(),
                    3 => br#"{"op":7}"#.to_vec(),
                    _ => b"[1,2,3]".to_vec(),
                },
            };
            frame.push(b'\n');
            frame
        })
        .collect()
}
