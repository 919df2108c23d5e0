//! Seeded corruptions of an energy-extended manifest, for exercising the validator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::caex::{CaexDocument, CaexElement, Node};
use crate::enrg::EnRgAttribute;

use super::{
    GuidSource, IssueCode, ENRGVIEW_CLASS, MEASUREMENT_LIST_ENTRY_CLASS, MEASUREMENT_TYPE_CLASS,
    OPCUA_ITEM_CLASS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    DanglingGuid,
    DuplicateGuid,
    MissingSourceItem,
    ExtraSourceItem,
    IllegalScope,
    AttributeMismatch,
}

impl MutationKind {
    pub const ALL: [MutationKind; 6] = [
        MutationKind::DanglingGuid,
        MutationKind::DuplicateGuid,
        MutationKind::MissingSourceItem,
        MutationKind::ExtraSourceItem,
        MutationKind::IllegalScope,
        MutationKind::AttributeMismatch,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            MutationKind::DanglingGuid => "dangling_guid",
            MutationKind::DuplicateGuid => "duplicate_guid",
            MutationKind::MissingSourceItem => "missing_source_item",
            MutationKind::ExtraSourceItem => "extra_source_item",
            MutationKind::IllegalScope => "illegal_scope",
            MutationKind::AttributeMismatch => "attribute_mismatch",
        }
    }

    /// The error code the validator must raise for this corruption.
    pub fn expected_code(self) -> IssueCode {
        match self {
            MutationKind::DanglingGuid => IssueCode::DanglingGuid,
            MutationKind::DuplicateGuid => IssueCode::DuplicateGuid,
            MutationKind::MissingSourceItem => IssueCode::MissingSourceItem,
            MutationKind::ExtraSourceItem => IssueCode::ExtraSourceItem,
            MutationKind::IllegalScope => IssueCode::IllegalScope,
            MutationKind::AttributeMismatch => IssueCode::AttributeMismatch,
        }
    }
}

fn class_is(e: &CaexElement, class: &str) -> bool {
    e.attr("RefBaseSystemUnitPath") == Some(class) || e.attr("RefBaseClassPath") == Some(class)
}

/// Mutable pre-order visit; `f` returns `true` to stop.
fn visit_mut(e: &mut CaexElement, f: &mut dyn FnMut(&mut CaexElement) -> bool) -> bool {
    if f(e) {
        return true;
    }
    for child in e.elements_mut() {
        if visit_mut(child, f) {
            return true;
        }
    }
    false
}

fn count(doc: &CaexDocument, pred: impl Fn(&CaexElement) -> bool) -> usize {
    doc.root.walk().filter(|e| pred(e)).count()
}

/// Applies the `n`-th element matching `pred` to `f`.
fn with_nth(
    doc: &mut CaexDocument,
    n: usize,
    pred: impl Fn(&CaexElement) -> bool,
    f: impl FnOnce(&mut CaexElement),
) {
    let mut seen = 0;
    let mut f = Some(f);
    visit_mut(&mut doc.root, &mut |e| {
        if !pred(e) {
            return false;
        }
        if seen == n {
            (f.take().expect("applied once"))(e);
            return true;
        }
        seen += 1;
        false
    });
}

fn set_value(attr: &mut CaexElement, value: &str) {
    if let Some(v) = attr.elements_mut().find(|c| c.name == "Value") {
        v.text = Some(value.to_owned());
    }
}

/// Applies one corruption at a seed-chosen site. Returns `false` if the
/// document has no site for it.
pub fn apply_mutation(doc: &mut CaexDocument, kind: MutationKind, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut guids = GuidSource::seeded(seed ^ 0x5eed);
    let is_view = |e: &CaexElement| e.name == "InternalElement" && class_is(e, ENRGVIEW_CLASS);
    let views = count(doc, is_view);
    if views == 0 {
        return false;
    }
    match kind {
        MutationKind::DanglingGuid => {
            let view = rng.random_range(0..views);
            let attr = EnRgAttribute::EXPOSED[rng.random_range(0..EnRgAttribute::EXPOSED.len())];
            let fresh = guids.next_guid();
            with_nth(doc, view, is_view, |v| {
                if let Some(a) = v.child_mut("Attribute", attr.name()) {
                    set_value(a, &fresh);
                }
            });
        }
        MutationKind::DuplicateGuid => {
            // a view takes over its MeasurementType's ID
            let view = rng.random_range(0..views);
            let mut done = false;
            let mut seen = 0;
            visit_mut(&mut doc.root, &mut |e| {
                if !(e.name == "InternalElement" && class_is(e, MEASUREMENT_TYPE_CLASS)) {
                    return false;
                }
                let id = e.id().unwrap_or_default().to_owned();
                for child in e.elements_mut().filter(|c| is_view(c)) {
                    if seen == view {
                        child.set_attr("ID", id.clone());
                        done = true;
                    }
                    seen += 1;
                }
                done
            });
        }
        MutationKind::MissingSourceItem => {
            let items = count(doc, is_energy_item);
            let target = rng.random_range(0..items.max(1));
            let mut seen = 0;
            visit_mut(&mut doc.root, &mut |e| {
                let before = e.children.len();
                e.children.retain(|n| match n {
                    Node::Element(c) if is_energy_item(c) => {
                        let keep = seen != target;
                        seen += 1;
                        keep
                    }
                    _ => true,
                });
                e.children.len() != before
            });
        }
        MutationKind::ExtraSourceItem => {
            let items = count(doc, is_energy_item);
            let target = rng.random_range(0..items.max(1));
            let guid = guids.next_guid();
            let mut seen = 0;
            visit_mut(&mut doc.root, &mut |e| {
                let found = e.elements().filter(|c| is_energy_item(c)).find_map(|c| {
                    let hit = seen == target;
                    seen += 1;
                    hit.then(|| c.clone())
                });
                let Some(mut clone) = found else {
                    return false;
                };
                let name = format!("{}_Extra", clone.caex_name().unwrap_or("item"));
                clone.set_attr("Name", name.clone());
                clone.set_attr("ID", guid.clone());
                if let Some(identifier) = clone.child_mut("Attribute", "Identifier") {
                    set_value(identifier, &name);
                }
                e.children.push(Node::Element(clone));
                true
            });
        }
        MutationKind::IllegalScope => {
            let entries = count(doc, |e| class_is(e, MEASUREMENT_LIST_ENTRY_CLASS));
            if entries == 0 {
                return false;
            }
            let entry = rng.random_range(0..entries);
            with_nth(
                doc,
                entry,
                |e| class_is(e, MEASUREMENT_LIST_ENTRY_CLASS),
                |e| {
                    if let Some(scope) = e.child_mut("Attribute", "Scope") {
                        set_value(scope, "Plant");
                    }
                },
            );
        }
        MutationKind::AttributeMismatch => {
            let view = rng.random_range(0..views);
            let attr = EnRgAttribute::ALL[rng.random_range(0..EnRgAttribute::ALL.len())];
            with_nth(doc, view, is_view, |v| {
                if let Some(a) = v.child_mut("Attribute", attr.name()) {
                    a.set_attr("Name", format!("{}Legacy", attr.name()));
                }
            });
        }
    }
    true
}

fn is_energy_item(e: &CaexElement) -> bool {
    // injected items carry `<tag>/<attribute>` identifiers matching their `<tag>.<attribute>` name
    let identifier = e
        .child("Attribute", "Identifier")
        .and_then(|a| a.child_text("Value"));
    e.name == "ExternalInterface"
        && class_is(e, OPCUA_ITEM_CLASS)
        && e.caex_name()
            .zip(identifier)
            .is_some_and(|(name, id)| name.replacen('.', "/", 1) == id)
}
