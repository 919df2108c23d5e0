//! EnRGView embedding in MTP manifests.
//!
//! Layout written and expected by this module (names are CAEX `Name` values):
//!
//! ```text
//! MTPDataObjectSUCLib/DataAssembly/IndicatorElement/EnRGView   class, RefBaseClassPath -> AnaView
//! MTPEnergyManagementSUCLib/{EnergyManagementAspect, EnergyManagementFunctions,
//!                            MeasurementList, MeasurementGroup,
//!                            MeasurementListEntry, MeasurementType}
//!
//! ModuleTypePackage/<PEA>/CommunicationSet/InstanceList/<device>           MeasurementType
//! ModuleTypePackage/<PEA>/CommunicationSet/InstanceList/<device>/<tag>     EnRGView instance
//! ModuleTypePackage/<PEA>/CommunicationSet/SourceList/<device>_TagServer   OPC UA server, one
//!                                                                          OPCUAItem per exposed attribute
//! ModuleTypePackage/<PEA>/EnergyManagement/EnergyManagementFunctions/MeasurementList/
//!     {Module,Service,Component}Measurements/<device>                      list entry -> MeasurementType
//! ```
//!
//! Eleven of the thirteen EnRGView attributes are served as tags
//! ([`EnRgAttribute::EXPOSED`]); `TagName` and `TagDescription` are static
//! engineering data. Each exposed instance attribute carries the GUID of its
//! OPCUAItem as an ID link.

mod instance;
mod library;
pub mod mutate;
mod scan;

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caex::CaexError;
use crate::enrg::{EnRgAttribute, EnRgView};

pub use instance::{add_measurement_instance, InjectOutcome};
pub use library::{energy_management_library, enrgview_class, inject_energy_library};
pub use scan::{extract_measurement_registry, validate_energy_mtp};

pub const INSTANCE_HIERARCHY: &str = "ModuleTypePackage";
pub const INDICATOR_PATH: [&str; 3] = ["MTPDataObjectSUCLib", "DataAssembly", "IndicatorElement"];
pub const ANAVIEW_CLASS: &str = "MTPDataObjectSUCLib/DataAssembly/IndicatorElement/AnaView";
pub const ENRGVIEW_CLASS: &str = "MTPDataObjectSUCLib/DataAssembly/IndicatorElement/EnRGView";
pub const ENERGY_LIB: &str = "MTPEnergyManagementSUCLib";
pub const MEASUREMENT_TYPE_CLASS: &str = "MTPEnergyManagementSUCLib/MeasurementType";
pub const MEASUREMENT_LIST_ENTRY_CLASS: &str = "MTPEnergyManagementSUCLib/MeasurementListEntry";
pub const MEASUREMENT_GROUP_CLASS: &str = "MTPEnergyManagementSUCLib/MeasurementGroup";
pub const MEASUREMENT_LIST_CLASS: &str = "MTPEnergyManagementSUCLib/MeasurementList";
pub const ASPECT_CLASS: &str = "MTPEnergyManagementSUCLib/EnergyManagementAspect";
pub const FUNCTIONS_CLASS: &str = "MTPEnergyManagementSUCLib/EnergyManagementFunctions";
pub const OPCUA_SERVER_CLASS: &str = "MTPCommunicationSUCLib/ServerAssembly/OPCUAServer";
pub const OPCUA_ITEM_CLASS: &str = "MTPCommunicationICLib/DataItem/OPCUAItem";
pub const ATTRIBUTE_TYPE_LIB: &str = "MTPAttributeTypeLib";
pub const ID_LINK_TYPE: &str = "MTPAttributeTypeLib/IDLinkAttributeType";

#[derive(Debug, Error)]
pub enum MtpError {
    #[error(
        "manifest has no AnaView class under MTPDataObjectSUCLib/DataAssembly/IndicatorElement"
    )]
    MissingAnaView,
    #[error("an existing {0} definition differs from the EnRGView model")]
    ConflictingDefinition(String),
    #[error("EnRGView library is not present; inject the library first")]
    LibraryMissing,
    #[error("manifest structure incomplete: {0}")]
    StructureMissing(String),
    #[error("tag name `{tag}` already used in scope {scope}")]
    DuplicateTagName { tag: String, scope: Scope },
    #[error("measurement device `{0}` already exists with different content")]
    DuplicateDeviceTag(String),
    #[error("node id `{0}` already exists in the manifest")]
    DuplicateNodeId(String),
    #[error("invalid measurement spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("measurement spec file: {0}")]
    SpecParse(String),
    #[error("registry extraction failed with {} error(s)", .0.error_count())]
    ExtractionFailed(ValidationReport),
    #[error(transparent)]
    Caex(#[from] CaexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScopeKind {
    Module,
    Service,
    Component,
}

impl ScopeKind {
    pub const ALL: [ScopeKind; 3] = [ScopeKind::Module, ScopeKind::Service, ScopeKind::Component];

    pub fn as_str(self) -> &'static str {
        match self {
            ScopeKind::Module => "Module",
            ScopeKind::Service => "Service",
            ScopeKind::Component => "Component",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == text)
    }

    /// Name of the MeasurementList group holding this scope's entries.
    pub fn group_name(self) -> &'static str {
        match self {
            ScopeKind::Module => "ModuleMeasurements",
            ScopeKind::Service => "ServiceMeasurements",
            ScopeKind::Component => "ComponentMeasurements",
        }
    }

    pub fn from_group_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.group_name() == name)
    }
}

/// Module-wide, or bound to a named service or component.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Scope {
    pub kind: ScopeKind,
    #[serde(default)]
    pub target: String,
}

impl Scope {
    pub fn module() -> Self {
        Self {
            kind: ScopeKind::Module,
            target: String::new(),
        }
    }

    pub fn service(target: impl Into<String>) -> Self {
        Self {
            kind: ScopeKind::Service,
            target: target.into(),
        }
    }

    pub fn component(target: impl Into<String>) -> Self {
        Self {
            kind: ScopeKind::Component,
            target: target.into(),
        }
    }

    /// Target is required for services and components, forbidden for the module.
    pub fn is_valid(&self) -> bool {
        (self.kind == ScopeKind::Module) == self.target.is_empty()
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.target.is_empty() {
            f.write_str(self.kind.as_str())
        } else {
            write!(f, "{}:{}", self.kind.as_str(), self.target)
        }
    }
}

/// One measuring device: becomes one MeasurementType.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    pub scope: Scope,
    pub device_tag: String,
    pub views: Vec<EnRgView>,
    pub server_endpoint: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Wrapped { measurements: Vec<MeasurementSpec> },
    List(Vec<MeasurementSpec>),
    Single(MeasurementSpec),
}

/// Reads a measurement spec file: `{"measurements":[...]}`, a bare array, or one object.
pub fn parse_measurement_specs(text: &str) -> Result<Vec<MeasurementSpec>, MtpError> {
    // untagged errors are unhelpful; try the wrapped form first for a precise message
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| MtpError::SpecParse(e.to_string()))?;
    if let Some(list) = value.get("measurements") {
        return serde_json::from_value(list.clone())
            .map_err(|e| MtpError::SpecParse(e.to_string()));
    }
    match serde_json::from_value::<SpecFile>(value) {
        Ok(SpecFile::Wrapped { measurements }) | Ok(SpecFile::List(measurements)) => {
            Ok(measurements)
        }
        Ok(SpecFile::Single(spec)) => Ok(vec![spec]),
        Err(_) => Err(MtpError::SpecParse(
            "expected an object with `measurements`, an array of specs, or one spec".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Access {
    Read,
    ReadWrite,
}

impl Access {
    pub fn as_str(self) -> &'static str {
        match self {
            Access::Read => "Read",
            Access::ReadWrite => "ReadWrite",
        }
    }

    pub fn for_attribute(attr: EnRgAttribute) -> Self {
        // VbR is rotated by counter resets
        if attr == EnRgAttribute::VbR {
            Access::ReadWrite
        } else {
            Access::Read
        }
    }
}

/// Tag address of one exposed attribute of one view.
pub fn node_id(tag_name: &str, attr: EnRgAttribute) -> String {
    format!("{tag_name}/{}", attr.name())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceItem {
    pub attribute: EnRgAttribute,
    pub node_id: String,
    pub guid: String,
    pub access: Access,
}

impl Serialize for EnRgAttribute {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegisteredView {
    pub instance_guid: String,
    pub view: EnRgView,
    pub items: Vec<SourceItem>,
}

impl RegisteredView {
    pub fn item(&self, attr: EnRgAttribute) -> Option<&SourceItem> {
        self.items.iter().find(|i| i.attribute == attr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegisteredMeasurement {
    pub instance_guid: String,
    pub device_tag: String,
    pub scope: Scope,
    pub endpoint: String,
    pub server_guid: String,
    pub views: Vec<RegisteredView>,
}

impl RegisteredMeasurement {
    pub fn to_spec(&self) -> MeasurementSpec {
        MeasurementSpec {
            scope: self.scope.clone(),
            device_tag: self.device_tag.clone(),
            views: self.views.iter().map(|v| v.view.clone()).collect(),
            server_endpoint: self.endpoint.clone(),
        }
    }
}

/// POL-side index of every measurement instance in a manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MeasurementRegistry {
    pub entries: Vec<RegisteredMeasurement>,
}

/// A resolved node: the measurement, view and item it belongs to.
#[derive(Debug, Clone, Copy)]
pub struct NodeRef<'a> {
    pub measurement: &'a RegisteredMeasurement,
    pub view: &'a RegisteredView,
    pub item: &'a SourceItem,
}

impl MeasurementRegistry {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn views(&self) -> impl Iterator<Item = (&RegisteredMeasurement, &RegisteredView)> {
        self.entries
            .iter()
            .flat_map(|m| m.views.iter().map(move |v| (m, v)))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef<'_>> {
        self.views().flat_map(|(measurement, view)| {
            view.items.iter().map(move |item| NodeRef {
                measurement,
                view,
                item,
            })
        })
    }

    pub fn node(&self, node_id: &str) -> Option<NodeRef<'_>> {
        self.nodes().find(|n| n.item.node_id == node_id)
    }

    pub fn item_count(&self) -> usize {
        self.views().map(|(_, v)| v.items.len()).sum()
    }

    pub fn to_specs(&self) -> Vec<MeasurementSpec> {
        self.entries
            .iter()
            .map(RegisteredMeasurement::to_spec)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum IssueCode {
    NoEnergyModel,
    MissingStructure,
    LibraryMissing,
    LibraryMismatch,
    MisplacedClass,
    MisplacedInstance,
    MissingAttribute,
    AttributeMismatch,
    BadAttributeValue,
    DuplicateGuid,
    DanglingGuid,
    MissingSourceItem,
    ExtraSourceItem,
    BadLink,
    DuplicateLink,
    NodeIdMismatch,
    DuplicateNodeId,
    MissingMeasurementList,
    IllegalScope,
    ScopeMismatch,
    DanglingReference,
    DuplicateReference,
    UnlistedMeasurement,
    DuplicateTagName,
    TagNameMismatch,
    View(crate::enrg::ViolationCode),
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IssueCode::View(code) => write!(f, "{code}"),
            other => fmt::Debug::fmt(other, f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub severity: Severity,
    #[serde(serialize_with = "display_code")]
    pub code: IssueCode,
    /// Element path (`A/B/C`) or GUID.
    pub location: String,
    pub message: String,
}

fn display_code<S: serde::Serializer>(code: &IssueCode, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(code)
}

/// Findings of [`validate_energy_mtp`], ordered by location then code.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Issue>,
}

impl ValidationReport {
    fn from_issues(mut violations: Vec<Issue>) -> Self {
        violations.sort_by(|a, b| {
            (a.location.as_str(), a.code, a.severity, a.message.as_str()).cmp(&(
                b.location.as_str(),
                b.code,
                b.severity,
                b.message.as_str(),
            ))
        });
        Self { violations }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.violations
            .iter()
            .filter(|i| i.severity == Severity::Error)
    }

    pub fn error_count(&self) -> usize {
        self.errors().count()
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn count(&self, code: IssueCode) -> usize {
        self.violations.iter().filter(|i| i.code == code).count()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for issue in &self.violations {
            let severity = match issue.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            out.push_str(&format!(
                "{severity}[{}] {}: {}\n",
                issue.code, issue.location, issue.message
            ));
        }
        let warnings = self.violations.len() - self.error_count();
        out.push_str(&format!(
            "{} error(s), {} warning(s)\n",
            self.error_count(),
            warnings
        ));
        out
    }
}

/// Source of canonical lowercase UUIDs; seeded sources are reproducible.
pub struct GuidSource {
    rng: ChaCha8Rng,
}

impl GuidSource {
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn random() -> Self {
        Self::seeded(rand::rng().random())
    }

    pub fn next_guid(&mut self) -> String {
        let mut bytes = [0u8; 16];
        self.rng.fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes)
            .into_uuid()
            .hyphenated()
            .to_string()
    }
}

/// Canonical lowercase hyphenated UUID text.
pub fn is_canonical_guid(text: &str) -> bool {
    text.len() == 36
        && uuid::Uuid::parse_str(text)
            .map(|u| u.hyphenated().to_string() == text)
            .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guids_are_canonical_and_seeded() {
        let mut a = GuidSource::seeded(7);
        let mut b = GuidSource::seeded(7);
        let first = a.next_guid();
        assert!(is_canonical_guid(&first));
        assert_eq!(first, b.next_guid());
        assert_ne!(a.next_guid(), first);
        assert!(!is_canonical_guid("ABCDEF00-0000-4000-8000-000000000000"));
        assert!(!is_canonical_guid("nope"));
    }

    #[test]
    fn scope_target_rule() {
        assert!(Scope::module().is_valid());
        assert!(Scope::service("Distill").is_valid());
        assert!(!Scope::service("").is_valid());
        assert!(!Scope {
            kind: ScopeKind::Module,
            target: "x".into()
        }
        .is_valid());
        assert_eq!(
            ScopeKind::from_group_name("ServiceMeasurements"),
            Some(ScopeKind::Service)
        );
        assert_eq!(ScopeKind::parse("Plant"), None);
    }

    #[test]
    fn spec_file_shapes() {
        let one = r#"{"scope":{"kind":"Module"},"device_tag":"EM1","server_endpoint":"h:1",
            "views":[{"tag_name":"T","v":1,"v_unit":{"unit_id":5462,"display":"V"},
            "v_scl_min":0,"v_scl_max":10,"acc_c":"C1","acc_d":"CurrentValue","acc_r":10,
            "mid":1001,"mp":1000,"res":"Electricity"}]}"#;
        assert_eq!(parse_measurement_specs(one).unwrap().len(), 1);
        assert_eq!(
            parse_measurement_specs(&format!("[{one},{one}]"))
                .unwrap()
                .len(),
            2
        );
        assert_eq!(
            parse_measurement_specs(&format!("{{\"measurements\":[{one}]}}"))
                .unwrap()
                .len(),
            1
        );
        assert!(matches!(
            parse_measurement_specs("{\"measurements\":[{}]}"),
            Err(MtpError::SpecParse(m)) if m.contains("missing field")
        ));
        assert!(parse_measurement_specs("7").is_err());
    }
}
