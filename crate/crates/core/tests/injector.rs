use std::collections::HashSet;

use mtpenergy::caex::{CaexDocument, CaexElement, ElementPath, Node};
use mtpenergy::enrg::{EnRgAttribute, MidRegistry};
use mtpenergy::mtp::{
    add_measurement_instance, extract_measurement_registry, inject_energy_library,
    is_canonical_guid, parse_measurement_specs, validate_energy_mtp, GuidSource, InjectOutcome,
    IssueCode, MeasurementSpec, MtpError, Scope,
};

const FIXTURE: &str = include_str!("../../../fixtures/distillation_pea.aml");
const SPEC: &str = include_str!("../../../fixtures/compact_meter_spec.json");

fn spec() -> MeasurementSpec {
    parse_measurement_specs(SPEC).unwrap().remove(0)
}

fn injected(seed: u64) -> CaexDocument {
    let mut doc = CaexDocument::parse(FIXTURE).unwrap();
    inject_energy_library(&mut doc).unwrap();
    let mut guids = GuidSource::seeded(seed);
    let outcome =
        add_measurement_instance(&mut doc, &spec(), &mut guids, &MidRegistry::builtin()).unwrap();
    assert_eq!(outcome, InjectOutcome::Added);
    doc
}

fn items_of(doc: &CaexDocument) -> Vec<&CaexElement> {
    doc.root
        .walk()
        .filter(|e| {
            e.name == "ExternalInterface" && e.attr("Name").is_some_and(|n| n.starts_with("EM001_"))
        })
        .collect()
}

#[test]
fn library_class_has_thirteen_attributes() {
    let doc = injected(1);
    let class = doc
        .find_by_path(
            &ElementPath::parse("MTPDataObjectSUCLib/DataAssembly/IndicatorElement/EnRGView")
                .unwrap(),
        )
        .unwrap()
        .unwrap();
    let names: Vec<&str> = class
        .elements()
        .filter(|e| e.name == "Attribute")
        .filter_map(|e| e.caex_name())
        .collect();
    assert_eq!(
        names,
        [
            "TagName",
            "TagDescription",
            "V",
            "VUnit",
            "VSclMin",
            "VSclMax",
            "AccC",
            "AccD",
            "AccR",
            "MID",
            "VbR",
            "MP",
            "Res"
        ]
    );
    assert_eq!(
        class.attr("RefBaseClassPath"),
        Some("MTPDataObjectSUCLib/DataAssembly/IndicatorElement/AnaView")
    );
}

#[test]
fn library_injection_is_idempotent() {
    let mut doc = CaexDocument::parse(FIXTURE).unwrap();
    assert!(inject_energy_library(&mut doc).unwrap());
    let once = doc.to_xml();
    assert!(!inject_energy_library(&mut doc).unwrap());
    assert_eq!(once, doc.to_xml());
}

#[test]
fn missing_indicator_group() {
    let mut doc = CaexDocument::parse(
        "<CAEXFile><SystemUnitClassLib Name=\"MTPDataObjectSUCLib\"/></CAEXFile>",
    )
    .unwrap();
    assert!(matches!(
        inject_energy_library(&mut doc),
        Err(MtpError::MissingAnaView)
    ));
}

#[test]
fn conflicting_class_is_refused() {
    let mut doc = CaexDocument::parse(FIXTURE).unwrap();
    inject_energy_library(&mut doc).unwrap();
    let xml = doc.to_xml().replacen(
        "<Attribute Name=\"MP\"",
        "<Attribute Name=\"MeasurementPeriod\"",
        1,
    );
    let mut doc = CaexDocument::parse(&xml).unwrap();
    assert!(matches!(
        inject_energy_library(&mut doc),
        Err(MtpError::ConflictingDefinition(_))
    ));
}

#[test]
fn instance_requires_library() {
    let mut doc = CaexDocument::parse(FIXTURE).unwrap();
    let err = add_measurement_instance(
        &mut doc,
        &spec(),
        &mut GuidSource::seeded(1),
        &MidRegistry::builtin(),
    );
    assert!(matches!(err, Err(MtpError::LibraryMissing)));
}

#[test]
fn three_views_give_33_distinct_resolvable_items() {
    let doc = injected(42);
    let report = validate_energy_mtp(&doc, &MidRegistry::builtin());
    assert_eq!(report.error_count(), 0, "{}", report.render_text());

    let items = items_of(&doc);
    assert_eq!(items.len(), 33);
    let guids: HashSet<&str> = items.iter().map(|i| i.id().unwrap()).collect();
    assert_eq!(guids.len(), 33);
    // every item is linked from exactly one instance attribute, and back
    let links: Vec<&str> = doc
        .root
        .walk()
        .filter(|e| e.name == "Attribute" && e.attr("AttributeDataType") == Some("xs:IDREF"))
        .filter_map(|e| e.child_text("Value"))
        .filter(|v| guids.contains(v))
        .collect();
    assert_eq!(links.len(), 33);
    assert_eq!(links.iter().collect::<HashSet<_>>().len(), 33);
    for guid in &guids {
        assert!(is_canonical_guid(guid));
        assert_eq!(
            doc.find_by_id(guid).unwrap().unwrap().name,
            "ExternalInterface"
        );
    }
}

#[test]
fn extraction_is_the_inverse() {
    let doc = injected(42);
    let registry = extract_measurement_registry(&doc, &MidRegistry::builtin()).unwrap();
    assert_eq!(registry.to_specs(), vec![spec()]);
    assert_eq!(registry.item_count(), 33);
    let nodes: HashSet<&str> = registry.nodes().map(|n| n.item.node_id.as_str()).collect();
    assert!(nodes.contains("EM001_E/VbR"));
    assert_eq!(
        registry.node("EM001_E/VbR").unwrap().item.access,
        mtpenergy::mtp::Access::ReadWrite
    );
}

#[test]
fn unextended_fixture_gives_empty_registry() {
    let doc = CaexDocument::parse(FIXTURE).unwrap();
    let registry = extract_measurement_registry(&doc, &MidRegistry::builtin()).unwrap();
    assert!(registry.is_empty());
    let report = validate_energy_mtp(&doc, &MidRegistry::builtin());
    assert_eq!(report.error_count(), 0);
    assert_eq!(report.count(IssueCode::NoEnergyModel), 1);
}

#[test]
fn reinjecting_same_spec_is_noop() {
    let mut doc = injected(42);
    let before = doc.to_xml();
    let outcome = add_measurement_instance(
        &mut doc,
        &spec(),
        &mut GuidSource::seeded(9),
        &MidRegistry::builtin(),
    )
    .unwrap();
    assert_eq!(outcome, InjectOutcome::AlreadyPresent);
    assert_eq!(before, doc.to_xml());
}

#[test]
fn duplicate_tag_in_scope() {
    let mut doc = injected(42);
    let mut other = spec();
    other.device_tag = "EM002".into();
    other.views.truncate(1);
    let err = add_measurement_instance(
        &mut doc,
        &other,
        &mut GuidSource::seeded(3),
        &MidRegistry::builtin(),
    );
    assert!(
        matches!(err, Err(MtpError::DuplicateTagName { .. })),
        "{err:?}"
    );
}

#[test]
fn same_tag_in_other_scope_still_clashes_on_node_id() {
    let mut doc = injected(42);
    let mut other = spec();
    other.device_tag = "EM002".into();
    other.scope = Scope::service("Distill");
    other.views.truncate(1);
    let err = add_measurement_instance(
        &mut doc,
        &other,
        &mut GuidSource::seeded(3),
        &MidRegistry::builtin(),
    );
    assert!(matches!(err, Err(MtpError::DuplicateNodeId(_))), "{err:?}");
}

#[test]
fn second_device_in_service_scope() {
    let mut doc = injected(42);
    let mut other = spec();
    other.device_tag = "EM002".into();
    other.scope = Scope::service("Heat");
    other.views.truncate(2);
    for view in &mut other.views {
        view.tag_name = view.tag_name.replace("EM001", "EM002");
    }
    add_measurement_instance(
        &mut doc,
        &other,
        &mut GuidSource::seeded(3),
        &MidRegistry::builtin(),
    )
    .unwrap();
    let registry = extract_measurement_registry(&doc, &MidRegistry::builtin()).unwrap();
    assert_eq!(registry.to_specs(), vec![spec(), other]);
    assert_eq!(registry.item_count(), 55);
}

#[test]
fn invalid_spec_is_rejected() {
    let mut doc = injected(1);
    let mut bad = spec();
    bad.device_tag = "EM009".into();
    bad.scope = Scope::service("");
    bad.views[0].tag_name = "X9".into();
    bad.views.truncate(1);
    let err = add_measurement_instance(
        &mut doc,
        &bad,
        &mut GuidSource::seeded(3),
        &MidRegistry::builtin(),
    );
    assert!(matches!(err, Err(MtpError::InvalidSpec(_))));
}

fn strip_ws(nodes: &[Node]) -> Vec<&CaexElement> {
    nodes
        .iter()
        .filter_map(|n| match n {
            Node::Element(e) => Some(e),
            _ => None,
        })
        .collect()
}

#[test]
fn non_interference() {
    let original = CaexDocument::parse(FIXTURE).unwrap();
    let doc = injected(42);
    // every original element is still present, unchanged, in order, under the same parent
    fn contains_in_order(before: &CaexElement, after: &CaexElement) {
        assert_eq!(before.name, after.name);
        assert_eq!(before.attributes, after.attributes);
        assert_eq!(before.text, after.text);
        let b = strip_ws(&before.children);
        let a = strip_ws(&after.children);
        let mut it = a.iter();
        for child in b {
            let matched = it
                .by_ref()
                .find(|c| c.name == child.name && c.attributes == child.attributes)
                .unwrap_or_else(|| panic!("{} {:?} lost", child.name, child.caex_name()));
            // touched containers may gain children; everything else must be identical
            let touched = [
                "IndicatorElement",
                "InstanceList",
                "SourceList",
                "DistillationPEA",
                "CommunicationSet",
                "DataAssembly",
                "MTPDataObjectSUCLib",
            ];
            if child.caex_name().is_some_and(|n| touched.contains(&n))
                || child.name == "InstanceHierarchy"
            {
                contains_in_order(child, matched);
            } else {
                assert_eq!(
                    mtpenergy::caex::serialize_element(child),
                    mtpenergy::caex::serialize_element(matched)
                );
            }
        }
    }
    contains_in_order(&original.root, &doc.root);
    assert_eq!(original.prolog, doc.prolog);
    assert_eq!(original.epilog, doc.epilog);
}

#[test]
fn seeded_injection_is_reproducible() {
    assert_eq!(injected(42).to_xml(), injected(42).to_xml());
    assert_ne!(injected(42).to_xml(), injected(43).to_xml());
}

#[test]
fn item_links_follow_attribute_order() {
    let doc = injected(5);
    let registry = extract_measurement_registry(&doc, &MidRegistry::builtin()).unwrap();
    for (_, view) in registry.views() {
        let attrs: Vec<EnRgAttribute> = view.items.iter().map(|i| i.attribute).collect();
        assert_eq!(attrs, EnRgAttribute::EXPOSED);
    }
}

mod mutations {
    use super::*;
    use mtpenergy::mtp::mutate::{apply_mutation, MutationKind};
    use mtpenergy::mtp::Severity;

    #[test]
    fn every_kind_is_detected_over_many_seeds() {
        let pristine = injected(42);
        for kind in MutationKind::ALL {
            for seed in 0..40 {
                let mut doc = pristine.clone();
                assert!(apply_mutation(&mut doc, kind, seed));
                assert_ne!(
                    doc.to_xml(),
                    pristine.to_xml(),
                    "{kind:?} seed {seed} changed nothing"
                );
                // the mutation must survive a serialization round trip
                let doc = CaexDocument::parse(&doc.to_xml()).unwrap();
                let report = validate_energy_mtp(&doc, &MidRegistry::builtin());
                let hits = report
                    .errors()
                    .filter(|i| i.code == kind.expected_code())
                    .count();
                assert!(hits >= 1, "{kind:?} seed {seed}:\n{}", report.render_text());
                assert!(extract_measurement_registry(&doc, &MidRegistry::builtin()).is_err());
            }
        }
    }

    #[test]
    fn missing_item_is_exactly_one_error_naming_the_attribute() {
        let pristine = injected(42);
        for seed in 0..33 {
            let mut doc = pristine.clone();
            apply_mutation(&mut doc, MutationKind::MissingSourceItem, seed);
            let report = validate_energy_mtp(&doc, &MidRegistry::builtin());
            let errors: Vec<_> = report.errors().collect();
            assert_eq!(errors.len(), 1, "{}", report.render_text());
            assert_eq!(errors[0].code, IssueCode::MissingSourceItem);
            let attr = errors[0].location.rsplit('/').next().unwrap();
            assert!(EnRgAttribute::from_name(attr).is_some_and(|a| a.is_exposed()));
        }
    }

    #[test]
    fn retargeted_list_reference_is_dangling() {
        let doc = injected(42);
        let mut guids = GuidSource::seeded(77);
        let fresh = guids.next_guid();
        let xml = doc.to_xml();
        let registry = extract_measurement_registry(&doc, &MidRegistry::builtin()).unwrap();
        let type_guid = &registry.entries[0].instance_guid;
        // the list entry is the only element carrying the type GUID as a Value
        let needle = format!("<Value>{type_guid}</Value>");
        assert_eq!(xml.matches(&needle).count(), 1);
        let doc =
            CaexDocument::parse(&xml.replace(&needle, &format!("<Value>{fresh}</Value>"))).unwrap();
        let report = validate_energy_mtp(&doc, &MidRegistry::builtin());
        assert!(
            report.count(IssueCode::DanglingReference) >= 1,
            "{}",
            report.render_text()
        );
        assert!(report
            .violations
            .iter()
            .all(|i| i.severity == Severity::Warning || i.code != IssueCode::NoEnergyModel));
    }

    #[test]
    fn report_order_is_deterministic() {
        let mut doc = injected(42);
        apply_mutation(&mut doc, MutationKind::AttributeMismatch, 3);
        apply_mutation(&mut doc, MutationKind::DanglingGuid, 4);
        let a = validate_energy_mtp(&doc, &MidRegistry::builtin());
        let b = validate_energy_mtp(&doc.clone(), &MidRegistry::builtin());
        assert_eq!(a, b);
        let keys: Vec<_> = a
            .violations
            .iter()
            .map(|i| (i.location.clone(), i.code))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
