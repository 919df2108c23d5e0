//! Regenerates the derived files in `fixtures/`.
//!
//! ```text
//! cargo run -p mtpenergy --example gen_fixtures -- fixtures
//! ```

use std::path::{Path, PathBuf};

use mtpenergy::caex::{CaexDocument, CaexElement, Node};
use mtpenergy::enrg::MidRegistry;
use mtpenergy::mtp::mutate::{apply_mutation, MutationKind};
use mtpenergy::mtp::{
    add_measurement_instance, inject_energy_library, parse_measurement_specs, GuidSource,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INJECT_SEED: u64 = 42;
pub const SYNTHETIC_SEEDS: [u64; 3] = [1, 2, 3];

/// Injects the compact-meter spec into the pristine fixture.
pub fn injected(fixtures: &Path) -> String {
    let text =
        std::fs::read_to_string(fixtures.join("distillation_pea.aml")).expect("pristine fixture");
    let specs =
        std::fs::read_to_string(fixtures.join("compact_meter_spec.json")).expect("spec fixture");
    let mut doc = CaexDocument::parse(&text).expect("pristine fixture parses");
    let specs = parse_measurement_specs(&specs).expect("spec parses");
    let mids = MidRegistry::builtin();
    let mut guids = GuidSource::seeded(INJECT_SEED);
    inject_energy_library(&mut doc).expect("library injects");
    for spec in &specs {
        add_measurement_instance(&mut doc, spec, &mut guids, &mids).expect("instance injects");
    }
    doc.to_xml()
}

pub fn mutated(injected_xml: &str, kind: MutationKind) -> String {
    let mut doc = CaexDocument::parse(injected_xml).expect("injected fixture parses");
    assert!(apply_mutation(&mut doc, kind, 0), "{} applies", kind.slug());
    doc.to_xml()
}

const NAMES: &[&str] = &[
    "InternalElement",
    "Attribute",
    "ExternalInterface",
    "SystemUnitClass",
    "RoleRequirements",
    "Value",
    "Description",
    "SupportedRoleClass",
];
const TEXTS: &[&str] = &[
    "42",
    "a < b && c > d",
    "quoted \"value\" and 'apostrophes'",
    "Größe µm ±0.5 °C",
    "  padded  ",
    "line one\nline two",
    "tab\tseparated",
];

fn random_element(rng: &mut ChaCha8Rng, depth: usize, counter: &mut u32) -> CaexElement {
    let name = *NAMES.choose(rng).expect("non-empty");
    *counter += 1;
    let mut el = CaexElement::new(name).with_attr("Name", format!("N{counter}"));
    if rng.random_bool(0.5) {
        el.set_attr(
            "ID",
            format!(
                "{:08x}-0000-4000-8000-{:012x}",
                rng.random::<u32>(),
                *counter
            ),
        );
    }
    for i in 0..rng.random_range(0..3) {
        let value = *TEXTS.choose(rng).expect("non-empty");
        el.set_attr(format!("a{i}"), value);
    }
    if depth == 0 || rng.random_bool(0.3) {
        if rng.random_bool(0.6) {
            el.text = Some(TEXTS.choose(rng).expect("non-empty").trim().to_string());
        }
        return el;
    }
    for _ in 0..rng.random_range(1..5) {
        match rng.random_range(0..10) {
            0 => el.children.push(Node::Comment(format!(" note {counter} "))),
            1 => el.children.push(Node::ProcessingInstruction(format!(
                "tool step=\"{counter}\""
            ))),
            _ => el
                .children
                .push(Node::Element(random_element(rng, depth - 1, counter))),
        }
    }
    el
}

/// A random CAEX file exercising escaping, comments, PIs and empty elements.
pub fn synthetic(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counter = 0;
    let mut ih =
        CaexElement::new("InstanceHierarchy").with_attr("Name", format!("Synthetic{seed}"));
    for _ in 0..3 {
        ih = ih.with_child(random_element(&mut rng, 4, &mut counter));
    }
    let root = CaexElement::new("CAEXFile")
        .with_attr("FileName", format!("synthetic_{seed}.aml"))
        .with_attr("SchemaVersion", "3.0")
        .with_attr("xmlns", "http://www.dke.de/CAEX")
        .with_attr("xmlns:xsi", "http://www.w3.org/2001/XMLSchema-instance")
        .with_child(CaexElement::new("SuperiorStandardVersion").with_text("AutomationML 2.10"))
        .with_child(ih)
        .with_child(CaexElement::new("InterfaceClassLib").with_attr("Name", "Empty"));
    CaexDocument::new(root).to_xml()
}

/// Every derived fixture as (file name, contents).
pub fn generate(fixtures: &Path) -> Vec<(String, String)> {
    let injected = injected(fixtures);
    let mut out = Vec::new();
    for kind in MutationKind::ALL {
        out.push((
            format!("mutated_{}.aml", kind.slug()),
            mutated(&injected, kind),
        ));
    }
    for seed in SYNTHETIC_SEEDS {
        out.push((format!("synthetic_{seed}.aml"), synthetic(seed)));
    }
    out.push(("distillation_pea_injected.aml".into(), injected));
    out
}

#[allow(dead_code)]
fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures"));
    for (name, text) in generate(&dir) {
        std::fs::write(dir.join(&name), text).expect("fixture written");
        println!("wrote {}", dir.join(name).display());
    }
}
