use std::collections::{BTreeSet, HashMap, HashSet};

use crate::caex::{CaexDocument, CaexElement, ElementPath};
use crate::enrg::{
    validate_enrg_view, AccuracyClass, AccuracyDomain, EnRgAttribute, EnRgView, EngineeringUnit,
    MeasurementId, MidRegistry, Resource,
};

use super::instance::{ASPECT_NAME, FUNCTIONS_NAME, LIST_NAME};
use super::{
    node_id, Access, Issue, IssueCode, MeasurementRegistry, MtpError, RegisteredMeasurement,
    RegisteredView, Scope, ScopeKind, Severity, SourceItem, ValidationReport, ANAVIEW_CLASS,
    ATTRIBUTE_TYPE_LIB, ENERGY_LIB, ENRGVIEW_CLASS, INSTANCE_HIERARCHY, MEASUREMENT_TYPE_CLASS,
    OPCUA_ITEM_CLASS, OPCUA_SERVER_CLASS,
};

const ENERGY_CLASSES: [&str; 6] = [
    "EnergyManagementAspect",
    "EnergyManagementFunctions",
    "MeasurementList",
    "MeasurementGroup",
    "MeasurementListEntry",
    "MeasurementType",
];

/// Where the PEA and its communication set live in a manifest.
pub(crate) struct PeaLayout {
    pea: String,
}

impl PeaLayout {
    pub(crate) fn locate(doc: &CaexDocument) -> Result<Self, MtpError> {
        let hierarchy = doc
            .root
            .child("InstanceHierarchy", INSTANCE_HIERARCHY)
            .ok_or_else(|| {
                MtpError::StructureMissing(format!("InstanceHierarchy {INSTANCE_HIERARCHY}"))
            })?;
        let pea = hierarchy
            .elements()
            .find(|e| e.name == "InternalElement")
            .and_then(|e| e.caex_name())
            .ok_or_else(|| MtpError::StructureMissing(format!("{INSTANCE_HIERARCHY}/<PEA>")))?;
        let layout = Self {
            pea: pea.to_owned(),
        };
        let comm = layout
            .pea(doc)
            .child("InternalElement", "CommunicationSet")
            .ok_or_else(|| MtpError::StructureMissing(format!("{pea}/CommunicationSet")))?;
        for list in ["InstanceList", "SourceList"] {
            if comm.child("InternalElement", list).is_none() {
                return Err(MtpError::StructureMissing(format!(
                    "{pea}/CommunicationSet/{list}"
                )));
            }
        }
        Ok(layout)
    }

    pub(crate) fn pea<'d>(&self, doc: &'d CaexDocument) -> &'d CaexElement {
        doc.root
            .child("InstanceHierarchy", INSTANCE_HIERARCHY)
            .and_then(|h| h.child("InternalElement", &self.pea))
            .expect("layout was located on this document")
    }

    pub(crate) fn pea_mut<'d>(&self, doc: &'d mut CaexDocument) -> &'d mut CaexElement {
        doc.root
            .child_mut("InstanceHierarchy", INSTANCE_HIERARCHY)
            .and_then(|h| h.child_mut("InternalElement", &self.pea))
            .expect("layout was located on this document")
    }

    fn comm_list<'d>(&self, doc: &'d CaexDocument, list: &str) -> &'d CaexElement {
        self.pea(doc)
            .child("InternalElement", "CommunicationSet")
            .and_then(|c| c.child("InternalElement", list))
            .expect("layout was located on this document")
    }

    fn comm_list_mut<'d>(&self, doc: &'d mut CaexDocument, list: &str) -> &'d mut CaexElement {
        self.pea_mut(doc)
            .child_mut("InternalElement", "CommunicationSet")
            .and_then(|c| c.child_mut("InternalElement", list))
            .expect("layout was located on this document")
    }

    pub(crate) fn instance_list<'d>(&self, doc: &'d CaexDocument) -> &'d CaexElement {
        self.comm_list(doc, "InstanceList")
    }

    pub(crate) fn instance_list_mut<'d>(&self, doc: &'d mut CaexDocument) -> &'d mut CaexElement {
        self.comm_list_mut(doc, "InstanceList")
    }

    pub(crate) fn source_list<'d>(&self, doc: &'d CaexDocument) -> &'d CaexElement {
        self.comm_list(doc, "SourceList")
    }

    pub(crate) fn source_list_mut<'d>(&self, doc: &'d mut CaexDocument) -> &'d mut CaexElement {
        self.comm_list_mut(doc, "SourceList")
    }

    pub(crate) fn aspect_present(&self, doc: &CaexDocument) -> bool {
        self.pea(doc)
            .child("InternalElement", ASPECT_NAME)
            .is_some()
    }

    fn measurement_list<'d>(&self, doc: &'d CaexDocument) -> Option<&'d CaexElement> {
        self.pea(doc)
            .child("InternalElement", ASPECT_NAME)?
            .child("InternalElement", FUNCTIONS_NAME)?
            .child("InternalElement", LIST_NAME)
    }

    pub(crate) fn measurement_group_mut<'d>(
        &self,
        doc: &'d mut CaexDocument,
        kind: ScopeKind,
    ) -> Option<&'d mut CaexElement> {
        self.pea_mut(doc)
            .child_mut("InternalElement", ASPECT_NAME)?
            .child_mut("InternalElement", FUNCTIONS_NAME)?
            .child_mut("InternalElement", LIST_NAME)?
            .child_mut("InternalElement", kind.group_name())
    }
}

struct Visit<'a> {
    path: String,
    element: &'a CaexElement,
    parent: Option<usize>,
}

fn visit_all(doc: &CaexDocument) -> Vec<Visit<'_>> {
    fn go<'a>(
        element: &'a CaexElement,
        path: String,
        parent: Option<usize>,
        out: &mut Vec<Visit<'a>>,
    ) {
        let index = out.len();
        out.push(Visit {
            path: path.clone(),
            element,
            parent,
        });
        for child in element.elements() {
            let segment = child
                .caex_name()
                .map_or_else(|| format!("<{}>", child.name), str::to_owned);
            let child_path = if path.is_empty() {
                segment
            } else {
                format!("{path}/{segment}")
            };
            go(child, child_path, Some(index), out);
        }
    }
    let mut out = Vec::new();
    go(&doc.root, String::new(), None, &mut out);
    out
}

fn value_of(attr: &CaexElement) -> Option<&str> {
    attr.first_named("Value")
        .map(|v| v.text.as_deref().unwrap_or(""))
}

fn attribute_value<'a>(element: &'a CaexElement, name: &str) -> Option<&'a str> {
    element.child("Attribute", name).and_then(value_of)
}

fn class_of(element: &CaexElement) -> Option<&str> {
    element
        .attr("RefBaseSystemUnitPath")
        .or_else(|| element.attr("RefBaseClassPath"))
}

struct Scanner<'a> {
    mids: &'a MidRegistry,
    issues: Vec<Issue>,
    ids: HashMap<&'a str, usize>,
    visits: Vec<Visit<'a>>,
}

impl<'a> Scanner<'a> {
    fn issue(
        &mut self,
        severity: Severity,
        code: IssueCode,
        location: &str,
        message: impl Into<String>,
    ) {
        self.issues.push(Issue {
            severity,
            code,
            location: location.to_owned(),
            message: message.into(),
        });
    }

    fn error(&mut self, code: IssueCode, location: &str, message: impl Into<String>) {
        self.issue(Severity::Error, code, location, message);
    }

    fn resolve(&self, guid: &str) -> Option<&Visit<'a>> {
        self.ids.get(guid).map(|&i| &self.visits[i])
    }

    fn parent_of(&self, index: usize) -> Option<&Visit<'a>> {
        self.visits[index].parent.map(|p| &self.visits[p])
    }

    fn index_ids(&mut self) {
        let mut seen: HashMap<&'a str, Vec<usize>> = HashMap::new();
        for (i, visit) in self.visits.iter().enumerate() {
            if let Some(id) = visit.element.id() {
                seen.entry(id).or_default().push(i);
            }
        }
        let mut duplicates: Vec<(&str, Vec<usize>)> = Vec::new();
        for (id, indices) in seen {
            self.ids.insert(id, indices[0]);
            if indices.len() > 1 {
                duplicates.push((id, indices));
            }
        }
        for (id, indices) in duplicates {
            let paths: Vec<&str> = indices
                .iter()
                .map(|&i| self.visits[i].path.as_str())
                .collect();
            let message = format!("ID used by {} elements: {}", paths.len(), paths.join(", "));
            self.error(IssueCode::DuplicateGuid, id, message);
        }
    }

    fn has_energy_content(&self) -> bool {
        self.visits.iter().any(|v| {
            let e = v.element;
            (e.name == "SystemUnitClass" && e.caex_name() == Some("EnRGView"))
                || (e.name == "SystemUnitClassLib" && e.caex_name() == Some(ENERGY_LIB))
                || matches!(class_of(e), Some(ENRGVIEW_CLASS | MEASUREMENT_TYPE_CLASS))
        })
    }

    fn check_libraries(&mut self, doc: &'a CaexDocument) {
        let class_path = ElementPath::parse(ENRGVIEW_CLASS).expect("constant path");
        match doc.find_by_path(&class_path) {
            Ok(Some(class)) => {
                let names: BTreeSet<&str> = class
                    .elements()
                    .filter(|e| e.name == "Attribute")
                    .filter_map(|e| e.caex_name())
                    .collect();
                let expected: BTreeSet<&str> =
                    EnRgAttribute::ALL.iter().map(|a| a.name()).collect();
                if names != expected {
                    let missing: Vec<_> = expected.difference(&names).copied().collect();
                    let extra: Vec<_> = names.difference(&expected).copied().collect();
                    self.error(
                        IssueCode::LibraryMismatch,
                        ENRGVIEW_CLASS,
                        format!("attribute set differs: missing {missing:?}, extra {extra:?}"),
                    );
                }
                if class.attr("RefBaseClassPath") != Some(ANAVIEW_CLASS) {
                    self.error(
                        IssueCode::LibraryMismatch,
                        ENRGVIEW_CLASS,
                        format!("EnRGView must derive from {ANAVIEW_CLASS}"),
                    );
                }
            }
            _ => {
                let elsewhere: Vec<String> = self
                    .visits
                    .iter()
                    .filter(|v| {
                        v.element.name == "SystemUnitClass"
                            && v.element.caex_name() == Some("EnRGView")
                    })
                    .map(|v| v.path.clone())
                    .collect();
                if elsewhere.is_empty() {
                    self.error(
                        IssueCode::LibraryMissing,
                        ENRGVIEW_CLASS,
                        "EnRGView class not found",
                    );
                } else {
                    for path in elsewhere {
                        self.error(
                            IssueCode::MisplacedClass,
                            &path,
                            format!("EnRGView class must be located at {ENRGVIEW_CLASS}"),
                        );
                    }
                }
            }
        }
        match doc.root.child("SystemUnitClassLib", ENERGY_LIB) {
            None => self.error(
                IssueCode::LibraryMissing,
                ENERGY_LIB,
                "energy management library not found",
            ),
            Some(lib) => {
                for name in ENERGY_CLASSES {
                    if lib.child("SystemUnitClass", name).is_none() {
                        self.error(
                            IssueCode::LibraryMismatch,
                            &format!("{ENERGY_LIB}/{name}"),
                            "class missing from energy management library",
                        );
                    }
                }
            }
        }
        let link_type = doc
            .root
            .child("AttributeTypeLib", ATTRIBUTE_TYPE_LIB)
            .and_then(|l| l.child("AttributeType", "IDLinkAttributeType"));
        if link_type.is_none() {
            self.error(
                IssueCode::LibraryMissing,
                super::ID_LINK_TYPE,
                "ID link attribute type not found",
            );
        }
    }

    /// Parses one EnRGView instance; reports and skips what cannot be read.
    fn read_view(&mut self, visit: usize) -> Option<EnRgView> {
        let element = self.visits[visit].element;
        let path = self.visits[visit].path.clone();
        let names: BTreeSet<&str> = element
            .elements()
            .filter(|e| e.name == "Attribute")
            .filter_map(|e| e.caex_name())
            .collect();
        let expected: BTreeSet<&str> = EnRgAttribute::ALL.iter().map(|a| a.name()).collect();
        let complete = names == expected;
        if !complete {
            let missing: Vec<_> = expected.difference(&names).copied().collect();
            let extra: Vec<_> = names.difference(&expected).copied().collect();
            self.error(
                IssueCode::AttributeMismatch,
                &path,
                format!("EnRGView attribute set differs: missing {missing:?}, extra {extra:?}"),
            );
        }

        let mut bad = false;
        let mut text = |attr: EnRgAttribute, scanner: &mut Self| -> Option<String> {
            let a = element.child("Attribute", attr.name())?;
            let found = if attr.is_exposed() {
                a.first_named("DefaultValue")
                    .map(|d| d.text.as_deref().unwrap_or(""))
            } else {
                value_of(a)
            };
            if found.is_none() && attr != EnRgAttribute::VUnit {
                scanner.error(
                    IssueCode::MissingAttribute,
                    &format!("{path}/{}", attr.name()),
                    "attribute carries no value",
                );
                bad = true;
            }
            found.map(str::to_owned)
        };

        let tag_name = text(EnRgAttribute::TagName, self);
        let tag_description = text(EnRgAttribute::TagDescription, self);
        let mut raw = HashMap::new();
        for attr in EnRgAttribute::EXPOSED {
            if attr != EnRgAttribute::VUnit {
                if let Some(t) = text(attr, self) {
                    raw.insert(attr, t);
                }
            }
        }
        let unit = element.child("Attribute", "VUnit").and_then(|u| {
            let id = attribute_value(u, "UnitId")?;
            let display = attribute_value(u, "DisplayName")?;
            Some((id.to_owned(), display.to_owned()))
        });
        if !complete || bad {
            return None;
        }

        let mut parse_failed = false;
        let mut fail = |scanner: &mut Self, attr: EnRgAttribute, value: &str| {
            scanner.error(
                IssueCode::BadAttributeValue,
                &format!("{path}/{}", attr.name()),
                format!("cannot parse `{value}`"),
            );
            parse_failed = true;
        };
        let mut number = |scanner: &mut Self, attr: EnRgAttribute| -> f64 {
            let value = &raw[&attr];
            match value.trim().parse::<f64>() {
                Ok(n) => n,
                Err(_) => {
                    fail(scanner, attr, value);
                    0.0
                }
            }
        };
        let v = number(self, EnRgAttribute::V);
        let v_scl_min = number(self, EnRgAttribute::VSclMin);
        let v_scl_max = number(self, EnRgAttribute::VSclMax);
        let acc_r = number(self, EnRgAttribute::AccR);
        let vbr = number(self, EnRgAttribute::VbR);

        let acc_c = raw[&EnRgAttribute::AccC].parse::<AccuracyClass>();
        let acc_d = raw[&EnRgAttribute::AccD].parse::<AccuracyDomain>();
        let res = raw[&EnRgAttribute::Res].parse::<Resource>();
        let mid = raw[&EnRgAttribute::Mid].trim().parse::<u32>();
        let mp = raw[&EnRgAttribute::Mp].trim().parse::<i64>();
        let unit = match unit {
            Some((id, display)) => match id.trim().parse::<i64>() {
                Ok(id) => Some(EngineeringUnit::new(id, display)),
                Err(_) => None,
            },
            None => None,
        };
        for (attr, ok) in [
            (EnRgAttribute::AccC, acc_c.is_ok()),
            (EnRgAttribute::AccD, acc_d.is_ok()),
            (EnRgAttribute::Res, res.is_ok()),
            (EnRgAttribute::Mid, mid.is_ok()),
            (EnRgAttribute::Mp, mp.is_ok()),
        ] {
            if !ok {
                let value = raw[&attr].clone();
                fail(self, attr, &value);
            }
        }
        if unit.is_none() {
            fail(self, EnRgAttribute::VUnit, "UnitId/DisplayName");
        }

        let tag_name = tag_name?;
        if element.caex_name() != Some(tag_name.as_str()) {
            self.error(
                IssueCode::TagNameMismatch,
                &path,
                format!("TagName `{tag_name}` differs from the instance name"),
            );
        }
        if parse_failed {
            return None;
        }
        Some(EnRgView {
            tag_name,
            tag_description: tag_description.unwrap_or_default(),
            v,
            v_unit: unit?,
            v_scl_min,
            v_scl_max,
            acc_c: acc_c.ok()?,
            acc_d: acc_d.ok()?,
            acc_r,
            mid: MeasurementId(mid.ok()?),
            vbr,
            mp: mp.ok()?,
            res: res.ok()?,
        })
    }

    /// Follows the ID links of one view into its server's items.
    fn link_items(
        &mut self,
        visit: usize,
        tag: &str,
        server: Option<usize>,
        used_links: &mut HashSet<String>,
        referenced: &mut HashSet<usize>,
    ) -> Option<Vec<SourceItem>> {
        let element = self.visits[visit].element;
        let path = self.visits[visit].path.clone();
        let mut items = Vec::new();
        let mut complete = true;
        for attr in EnRgAttribute::EXPOSED {
            let location = format!("{path}/{}", attr.name());
            let Some(a) = element.child("Attribute", attr.name()) else {
                complete = false;
                continue;
            };
            let expected = node_id(tag, attr);
            let guid = value_of(a).unwrap_or("").trim().to_owned();
            if guid.is_empty() {
                self.error(IssueCode::BadLink, &location, "attribute has no ID link");
                complete = false;
                continue;
            }
            if !used_links.insert(guid.clone()) {
                self.error(
                    IssueCode::DuplicateLink,
                    &location,
                    format!("link {guid} is used more than once"),
                );
                complete = false;
                continue;
            }
            let Some(&target) = self.ids.get(guid.as_str()) else {
                let still_there = server.is_some_and(|s| {
                    self.visits[s].element.elements().any(|i| {
                        i.name == "ExternalInterface"
                            && attribute_value(i, "Identifier") == Some(&expected)
                    })
                });
                if still_there {
                    self.error(
                        IssueCode::DanglingGuid,
                        &location,
                        format!("link {guid} does not resolve; item for `{expected}` has a different ID"),
                    );
                } else {
                    self.error(
                        IssueCode::MissingSourceItem,
                        &location,
                        format!("no source item for `{expected}`"),
                    );
                }
                complete = false;
                continue;
            };
            let item = self.visits[target].element;
            let in_server = server.is_some() && self.visits[target].parent == server;
            if item.name != "ExternalInterface"
                || class_of(item) != Some(OPCUA_ITEM_CLASS)
                || !in_server
            {
                self.error(
                    IssueCode::BadLink,
                    &location,
                    format!("link {guid} must point to an OPC UA item of the measurement's server"),
                );
                complete = false;
                continue;
            }
            referenced.insert(target);
            let identifier = attribute_value(item, "Identifier").unwrap_or("");
            if identifier != expected {
                self.error(
                    IssueCode::NodeIdMismatch,
                    &location,
                    format!("item identifier `{identifier}`, expected `{expected}`"),
                );
                complete = false;
                continue;
            }
            let access = match attribute_value(item, "Access") {
                Some("Read") => Access::Read,
                Some("ReadWrite") => Access::ReadWrite,
                other => {
                    self.error(
                        IssueCode::BadAttributeValue,
                        &self.visits[target].path.clone(),
                        format!("bad Access value {other:?}"),
                    );
                    complete = false;
                    continue;
                }
            };
            items.push(SourceItem {
                attribute: attr,
                node_id: expected,
                guid,
                access,
            });
        }
        complete.then_some(items)
    }
}

struct Draft {
    visit: usize,
    guid: String,
    device_tag: String,
    endpoint: Option<String>,
    server: Option<usize>,
    views: Option<Vec<RegisteredView>>,
}

fn scan(doc: &CaexDocument, mids: &MidRegistry) -> (Vec<Issue>, Vec<RegisteredMeasurement>) {
    let mut s = Scanner {
        mids,
        issues: Vec::new(),
        ids: HashMap::new(),
        visits: visit_all(doc),
    };
    s.index_ids();
    if !s.has_energy_content() {
        s.issue(
            Severity::Warning,
            IssueCode::NoEnergyModel,
            "",
            "manifest contains no energy measurement model",
        );
        return (s.issues, Vec::new());
    }
    s.check_libraries(doc);

    let layout = match PeaLayout::locate(doc) {
        Ok(layout) => Some(layout),
        Err(e) => {
            s.error(
                IssueCode::MissingStructure,
                INSTANCE_HIERARCHY,
                e.to_string(),
            );
            None
        }
    };
    let instance_list_path = layout.as_ref().map(|l| {
        format!(
            "{INSTANCE_HIERARCHY}/{}/CommunicationSet/InstanceList",
            l.pea
        )
    });
    let source_list_path = layout
        .as_ref()
        .map(|l| format!("{INSTANCE_HIERARCHY}/{}/CommunicationSet/SourceList", l.pea));

    // placement of instances
    let mut drafts = Vec::new();
    for i in 0..s.visits.len() {
        let element = s.visits[i].element;
        if element.name != "InternalElement" {
            continue;
        }
        let parent_path = s.parent_of(i).map(|p| p.path.clone());
        match class_of(element) {
            Some(MEASUREMENT_TYPE_CLASS) => {
                if parent_path.is_none() || parent_path != instance_list_path {
                    let path = s.visits[i].path.clone();
                    s.error(
                        IssueCode::MisplacedInstance,
                        &path,
                        "MeasurementType must be placed in the InstanceList",
                    );
                    continue;
                }
                drafts.push(Draft {
                    visit: i,
                    guid: element.id().unwrap_or("").to_owned(),
                    device_tag: element.caex_name().unwrap_or("").to_owned(),
                    endpoint: None,
                    server: None,
                    views: None,
                });
            }
            Some(ENRGVIEW_CLASS) => {
                let parent_ok = s
                    .parent_of(i)
                    .is_some_and(|p| class_of(p.element) == Some(MEASUREMENT_TYPE_CLASS));
                if !parent_ok {
                    let path = s.visits[i].path.clone();
                    s.error(
                        IssueCode::MisplacedInstance,
                        &path,
                        "EnRGView instance must be a child of a MeasurementType",
                    );
                }
            }
            _ => {}
        }
    }

    let mut used_links = HashSet::new();
    let mut referenced_items = HashSet::new();
    let mut servers = Vec::new();
    for draft in &mut drafts {
        let element = s.visits[draft.visit].element;
        let path = s.visits[draft.visit].path.clone();
        if draft.guid.is_empty() {
            s.error(
                IssueCode::MissingAttribute,
                &path,
                "MeasurementType has no ID",
            );
        }
        draft.endpoint = attribute_value(element, "ServerEndpoint").map(str::to_owned);
        if draft.endpoint.is_none() {
            s.error(
                IssueCode::MissingAttribute,
                &format!("{path}/ServerEndpoint"),
                "ServerEndpoint missing",
            );
        }
        match attribute_value(element, "SourceServer") {
            None => s.error(
                IssueCode::MissingAttribute,
                &format!("{path}/SourceServer"),
                "SourceServer link missing",
            ),
            Some(guid) => match s.ids.get(guid.trim()).copied() {
                None => s.error(
                    IssueCode::DanglingGuid,
                    &format!("{path}/SourceServer"),
                    format!("link {guid} does not resolve"),
                ),
                Some(target) => {
                    let server_ok = class_of(s.visits[target].element) == Some(OPCUA_SERVER_CLASS)
                        && s.parent_of(target).map(|p| p.path.clone()) == source_list_path;
                    if server_ok {
                        draft.server = Some(target);
                        servers.push(target);
                    } else {
                        s.error(
                            IssueCode::BadLink,
                            &format!("{path}/SourceServer"),
                            "SourceServer must point to an OPC UA server in the SourceList",
                        );
                    }
                }
            },
        }

        let mut views = Vec::new();
        let mut complete = true;
        let children: Vec<usize> = (draft.visit + 1..s.visits.len())
            .filter(|&c| s.visits[c].parent == Some(draft.visit))
            .filter(|&c| class_of(s.visits[c].element) == Some(ENRGVIEW_CLASS))
            .collect();
        if children.is_empty() {
            s.error(
                IssueCode::MissingAttribute,
                &path,
                "MeasurementType holds no EnRGView",
            );
            complete = false;
        }
        for child in children {
            let view = s.read_view(child);
            let tag = view
                .as_ref()
                .map(|v| v.tag_name.clone())
                .or_else(|| s.visits[child].element.caex_name().map(str::to_owned))
                .unwrap_or_default();
            let items = s.link_items(
                child,
                &tag,
                draft.server,
                &mut used_links,
                &mut referenced_items,
            );
            match (view, items) {
                (Some(view), Some(items)) => views.push(RegisteredView {
                    instance_guid: s.visits[child].element.id().unwrap_or("").to_owned(),
                    view,
                    items,
                }),
                _ => complete = false,
            }
        }
        if complete && draft.server.is_some() {
            draft.views = Some(views);
        }
    }

    // server contents
    servers.sort_unstable();
    servers.dedup();
    let claimed: HashSet<String> = drafts
        .iter()
        .flat_map(|d| {
            let visits = &s.visits;
            (d.visit + 1..visits.len())
                .filter(move |&c| visits[c].parent == Some(d.visit))
                .filter_map(move |c| visits[c].element.caex_name())
                .flat_map(|tag| {
                    EnRgAttribute::EXPOSED
                        .into_iter()
                        .map(move |a| node_id(tag, a))
                })
        })
        .collect();
    for server in servers {
        let mut identifiers: HashMap<String, usize> = HashMap::new();
        let items: Vec<usize> = (server + 1..s.visits.len())
            .filter(|&c| s.visits[c].parent == Some(server))
            .filter(|&c| s.visits[c].element.name == "ExternalInterface")
            .collect();
        for item in items {
            let path = s.visits[item].path.clone();
            let identifier = attribute_value(s.visits[item].element, "Identifier")
                .unwrap_or("")
                .to_owned();
            *identifiers.entry(identifier.clone()).or_default() += 1;
            if identifiers[&identifier] == 2 {
                s.error(
                    IssueCode::DuplicateNodeId,
                    &path,
                    format!("node id `{identifier}` is served twice"),
                );
            }
            if !referenced_items.contains(&item) && !claimed.contains(&identifier) {
                s.error(
                    IssueCode::ExtraSourceItem,
                    &path,
                    format!("source item `{identifier}` is not referenced by any EnRGView"),
                );
            }
        }
    }

    // measurement list
    let mut scopes: HashMap<String, Scope> = HashMap::new();
    let mut listed: HashSet<String> = HashSet::new();
    let list = layout.as_ref().and_then(|l| l.measurement_list(doc));
    match list {
        None if !drafts.is_empty() => s.error(
            IssueCode::MissingMeasurementList,
            &format!("{ASPECT_NAME}/{FUNCTIONS_NAME}/{LIST_NAME}"),
            "measurements exist but the MeasurementList is missing",
        ),
        None => {}
        Some(list) => {
            let list_visit = s
                .visits
                .iter()
                .position(|v| std::ptr::eq(v.element, list))
                .expect("list is part of the document");
            let list_path = s.visits[list_visit].path.clone();
            for group in list.elements().filter(|e| e.name == "InternalElement") {
                let group_name = group.caex_name().unwrap_or("");
                let group_path = format!("{list_path}/{group_name}");
                let Some(group_kind) = ScopeKind::from_group_name(group_name) else {
                    s.error(
                        IssueCode::IllegalScope,
                        &group_path,
                        format!("unknown measurement group `{group_name}`"),
                    );
                    continue;
                };
                for entry in group.elements().filter(|e| e.name == "InternalElement") {
                    let entry_path = format!("{group_path}/{}", entry.caex_name().unwrap_or(""));
                    let target_guid = attribute_value(entry, "MeasurementTypeRef")
                        .unwrap_or("")
                        .trim();
                    let resolved = s
                        .resolve(target_guid)
                        .filter(|v| class_of(v.element) == Some(MEASUREMENT_TYPE_CLASS))
                        .is_some();
                    if !resolved {
                        s.error(
                            IssueCode::DanglingReference,
                            &entry_path,
                            format!("MeasurementTypeRef `{target_guid}` does not name a MeasurementType"),
                        );
                        continue;
                    }
                    if !listed.insert(target_guid.to_owned()) {
                        s.error(
                            IssueCode::DuplicateReference,
                            &entry_path,
                            format!("MeasurementType {target_guid} is listed more than once"),
                        );
                        continue;
                    }
                    let scope_text = attribute_value(entry, "Scope").unwrap_or("");
                    let target = attribute_value(entry, "Target").unwrap_or("").to_owned();
                    let Some(kind) = ScopeKind::parse(scope_text) else {
                        s.error(
                            IssueCode::IllegalScope,
                            &entry_path,
                            format!("illegal scope `{scope_text}`"),
                        );
                        continue;
                    };
                    if kind != group_kind {
                        s.error(
                            IssueCode::ScopeMismatch,
                            &entry_path,
                            format!("scope {kind:?} listed under {group_name}"),
                        );
                        continue;
                    }
                    let scope = Scope { kind, target };
                    if !scope.is_valid() {
                        s.error(
                            IssueCode::IllegalScope,
                            &entry_path,
                            format!("scope {} violates the target rule", scope.kind.as_str()),
                        );
                        continue;
                    }
                    scopes.insert(target_guid.to_owned(), scope);
                }
            }
        }
    }
    if list.is_some() {
        for draft in &drafts {
            if !listed.contains(&draft.guid) {
                let path = s.visits[draft.visit].path.clone();
                s.error(
                    IssueCode::UnlistedMeasurement,
                    &path,
                    "MeasurementType is not in the MeasurementList",
                );
            }
        }
    }

    // assemble, then cross-measurement and view checks
    let mut measurements = Vec::new();
    let mut tags_by_scope: HashMap<Scope, HashSet<String>> = HashMap::new();
    for draft in drafts {
        let Some(views) = draft.views else { continue };
        for view in &views {
            let location = format!("{}/{}", s.visits[draft.visit].path, view.view.tag_name);
            for violation in validate_enrg_view(&view.view, s.mids) {
                let severity = if violation.is_hard() {
                    Severity::Error
                } else {
                    Severity::Warning
                };
                s.issue(
                    severity,
                    IssueCode::View(violation.code),
                    &location,
                    violation.message,
                );
            }
        }
        let (Some(scope), Some(endpoint), Some(server)) = (
            scopes.get(&draft.guid).cloned(),
            draft.endpoint,
            draft.server,
        ) else {
            continue;
        };
        let tags = tags_by_scope.entry(scope.clone()).or_default();
        let mut clash = false;
        for view in &views {
            if !tags.insert(view.view.tag_name.clone()) {
                clash = true;
                let location = format!("{}/{}", s.visits[draft.visit].path, view.view.tag_name);
                s.error(
                    IssueCode::DuplicateTagName,
                    &location,
                    format!(
                        "tag name `{}` repeats within scope {scope}",
                        view.view.tag_name
                    ),
                );
            }
        }
        if clash {
            continue;
        }
        measurements.push(RegisteredMeasurement {
            instance_guid: draft.guid,
            device_tag: draft.device_tag,
            scope,
            endpoint,
            server_guid: s.visits[server].element.id().unwrap_or("").to_owned(),
            views,
        });
    }
    (s.issues, measurements)
}

/// Measurements that could be read completely, even if the manifest has
/// unrelated defects.
pub(crate) fn collect_measurements(
    doc: &CaexDocument,
    mids: &MidRegistry,
) -> Vec<RegisteredMeasurement> {
    scan(doc, mids).1
}

/// Checks the energy model of a manifest: library placement, instance
/// structure, GUID links, source items, measurement list and view invariants.
pub fn validate_energy_mtp(doc: &CaexDocument, mids: &MidRegistry) -> ValidationReport {
    ValidationReport::from_issues(scan(doc, mids).0)
}

/// Builds the node registry from a manifest with no validation errors.
pub fn extract_measurement_registry(
    doc: &CaexDocument,
    mids: &MidRegistry,
) -> Result<MeasurementRegistry, MtpError> {
    let (issues, entries) = scan(doc, mids);
    let report = ValidationReport::from_issues(issues);
    if report.has_errors() {
        return Err(MtpError::ExtractionFailed(report));
    }
    Ok(MeasurementRegistry { entries })
}
