mod common;

use std::time::Instant;

use mtpenergy::caex::{CaexDocument, CaexElement, Node};
use proptest::prelude::*;

const CORPUS: &[&str] = &[
    "distillation_pea.aml",
    "distillation_pea_injected.aml",
    "synthetic_1.aml",
    "synthetic_2.aml",
    "synthetic_3.aml",
];

fn local(name: &str) -> &str {
    name.rsplit(':').next().unwrap_or(name)
}

/// Compares a parsed element with an independent XML parser's view of it.
fn assert_matches_oracle(mine: &CaexElement, theirs: roxmltree::Node<'_, '_>, path: &str) {
    let path = format!("{path}/{}", mine.name);
    assert_eq!(local(&mine.name), theirs.tag_name().name(), "{path}");

    let my_attrs: Vec<(&str, &str)> = mine
        .attributes
        .iter()
        .filter(|(k, _)| k != "xmlns" && !k.starts_with("xmlns:"))
        .map(|(k, v)| (local(k), v.as_str()))
        .collect();
    let their_attrs: Vec<(&str, &str)> =
        theirs.attributes().map(|a| (a.name(), a.value())).collect();
    assert_eq!(my_attrs, their_attrs, "attributes of {path}");

    let their_children: Vec<roxmltree::Node> = theirs
        .children()
        .filter(|n| n.is_element() || n.is_comment() || n.is_pi())
        .collect();
    assert_eq!(
        mine.children.len(),
        their_children.len(),
        "child count of {path}"
    );
    for (m, t) in mine.children.iter().zip(their_children) {
        match m {
            Node::Element(e) => assert_matches_oracle(e, t, &path),
            Node::Comment(c) => assert_eq!(Some(c.as_str()), t.text(), "comment in {path}"),
            Node::ProcessingInstruction(pi) => {
                let t = t.pi().expect("pi");
                let theirs = match t.value {
                    Some(v) => format!("{} {v}", t.target),
                    None => t.target.to_string(),
                };
                assert_eq!(pi.trim(), theirs.trim(), "pi in {path}");
            }
        }
    }

    let segments: Vec<&str> = theirs
        .children()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect();
    let their_text: String = if mine.children.is_empty() {
        segments.concat()
    } else {
        segments.iter().map(|s| s.trim()).collect()
    };
    assert_eq!(
        mine.text.as_deref().unwrap_or(""),
        their_text,
        "text of {path}"
    );
}

#[test]
fn corpus_matches_oracle_parser() {
    for name in CORPUS {
        let text = common::read_fixture(name);
        let doc = CaexDocument::parse(&text).unwrap();
        let oracle = roxmltree::Document::parse(&text).unwrap();
        assert_matches_oracle(&doc.root, oracle.root_element(), "");
        // the serialized form reads the same to the oracle
        let again = doc.to_xml();
        let oracle = roxmltree::Document::parse(&again).unwrap();
        assert_matches_oracle(&doc.root, oracle.root_element(), "");
    }
}

#[test]
fn corpus_round_trips() {
    let started = Instant::now();
    for name in CORPUS {
        let doc = CaexDocument::parse(&common::read_fixture(name)).unwrap();
        let first = doc.to_xml();
        let reparsed = CaexDocument::parse(&first).unwrap();
        assert_eq!(reparsed, doc, "{name}");
        assert_eq!(reparsed.to_xml(), first, "{name}");
    }
    assert!(started.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn derived_fixtures_are_canonical() {
    for name in &CORPUS[1..] {
        let text = common::read_fixture(name);
        assert_eq!(CaexDocument::parse(&text).unwrap().to_xml(), text, "{name}");
    }
}

#[test]
fn pristine_fixture_keeps_comments_and_instructions() {
    let doc = CaexDocument::parse(&common::read_fixture("distillation_pea.aml")).unwrap();
    let xml = doc.to_xml();
    assert!(doc.prolog.iter().any(|n| matches!(n, Node::Comment(_))));
    assert!(!doc.epilog.is_empty());
    assert!(xml.starts_with("<?xml"));
}

fn name() -> impl Strategy<Value = String> {
    "[A-Za-z_][A-Za-z0-9_.-]{0,8}"
}

fn value() -> impl Strategy<Value = String> {
    prop_oneof!["[ -~]{0,12}", "[\\t\\n a-z&<>\"']{0,12}", "[αβγ°µ±ü]{0,6}",]
}

fn element() -> impl Strategy<Value = CaexElement> {
    let leaf = (
        name(),
        prop::collection::vec((name(), value()), 0..3),
        proptest::option::of("[a-z0-9 &<>]{1,10}"),
    )
        .prop_map(|(n, attrs, text)| {
            let mut e = CaexElement::new(n);
            for (k, v) in attrs {
                e.set_attr(k, v);
            }
            // leaf text keeps its whitespace; keep it non-blank so it survives
            e.text = text.filter(|t| !t.trim().is_empty());
            e
        });
    leaf.prop_recursive(4, 40, 4, |inner| {
        (
            name(),
            prop::collection::vec((name(), value()), 0..3),
            prop::collection::vec(
                prop_oneof![
                    6 => inner.prop_map(Node::Element),
                    1 => "[a-z ]{0,10}".prop_map(Node::Comment),
                ],
                1..4,
            ),
        )
            .prop_map(|(n, attrs, children)| {
                let mut e = CaexElement::new(n);
                for (k, v) in attrs {
                    e.set_attr(k, v);
                }
                e.children = children;
                e
            })
    })
}

proptest! {
    #[test]
    fn random_trees_round_trip(root in element()) {
        let doc = CaexDocument::new(root);
        let xml = doc.to_xml();
        let back = CaexDocument::parse(&xml).unwrap();
        prop_assert_eq!(&back.root, &doc.root);
        prop_assert_eq!(back.to_xml(), xml.clone());
        let oracle = roxmltree::Document::parse(&xml).unwrap();
        assert_matches_oracle(&back.root, oracle.root_element(), "");
    }
}
