use std::collections::HashSet;

use crate::caex::{CaexDocument, CaexElement, ElementPath, Position};
use crate::enrg::{format_number, validate_enrg_view, EnRgAttribute, EnRgView, MidRegistry};

use super::library::{link_attribute, value_attribute};
use super::scan::{collect_measurements, PeaLayout};
use super::{
    node_id, Access, GuidSource, MeasurementSpec, MtpError, ScopeKind, ASPECT_CLASS, ENERGY_LIB,
    ENRGVIEW_CLASS, FUNCTIONS_CLASS, ID_LINK_TYPE, MEASUREMENT_GROUP_CLASS, MEASUREMENT_LIST_CLASS,
    MEASUREMENT_LIST_ENTRY_CLASS, MEASUREMENT_TYPE_CLASS, OPCUA_ITEM_CLASS, OPCUA_SERVER_CLASS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectOutcome {
    Added,
    /// An identical measurement was already present; nothing changed.
    AlreadyPresent,
}

pub(crate) const ASPECT_NAME: &str = "EnergyManagement";
pub(crate) const FUNCTIONS_NAME: &str = "EnergyManagementFunctions";
pub(crate) const LIST_NAME: &str = "MeasurementList";

fn check_spec(spec: &MeasurementSpec, mids: &MidRegistry) -> Result<(), MtpError> {
    let mut problems = Vec::new();
    if spec.device_tag.trim().is_empty() {
        problems.push("device_tag is empty".to_owned());
    }
    if spec.device_tag.contains('/') {
        problems.push(format!("device_tag `{}` contains '/'", spec.device_tag));
    }
    if spec.views.is_empty() {
        problems.push("views is empty".to_owned());
    }
    if !spec.scope.is_valid() {
        problems.push(format!(
            "scope {} requires {} target",
            spec.scope.kind.as_str(),
            if spec.scope.kind == ScopeKind::Module {
                "an empty"
            } else {
                "a non-empty"
            }
        ));
    }
    for view in &spec.views {
        if view.tag_name.contains('/') {
            problems.push(format!("tag_name `{}` contains '/'", view.tag_name));
        }
        for violation in validate_enrg_view(view, mids) {
            if violation.is_hard() {
                problems.push(format!("{}: {}", view.tag_name, violation.message));
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(MtpError::InvalidSpec(problems))
    }
}

fn library_present(doc: &CaexDocument) -> Result<bool, MtpError> {
    let class = doc.find_by_path(&ElementPath::parse(ENRGVIEW_CLASS)?)?;
    let lib = doc.root.child("SystemUnitClassLib", ENERGY_LIB);
    Ok(class.is_some() && lib.is_some())
}

fn internal_element(name: &str, guid: &str, class: &str) -> CaexElement {
    CaexElement::new("InternalElement")
        .with_attr("Name", name)
        .with_attr("ID", guid)
        .with_attr("RefBaseSystemUnitPath", class)
}

fn exposed_attribute(view: &EnRgView, attr: EnRgAttribute, guid: &str) -> CaexElement {
    let default = match attr {
        EnRgAttribute::V => Some(format_number(view.v)),
        EnRgAttribute::VSclMin => Some(format_number(view.v_scl_min)),
        EnRgAttribute::VSclMax => Some(format_number(view.v_scl_max)),
        EnRgAttribute::AccC => Some(view.acc_c.to_string()),
        EnRgAttribute::AccD => Some(view.acc_d.to_string()),
        EnRgAttribute::AccR => Some(format_number(view.acc_r)),
        EnRgAttribute::Mid => Some(view.mid.to_string()),
        EnRgAttribute::VbR => Some(format_number(view.vbr)),
        EnRgAttribute::Mp => Some(view.mp.to_string()),
        EnRgAttribute::Res => Some(view.res.to_string()),
        EnRgAttribute::VUnit | EnRgAttribute::TagName | EnRgAttribute::TagDescription => None,
    };
    let mut element = CaexElement::new("Attribute")
        .with_attr("Name", attr.name())
        .with_attr("AttributeDataType", "xs:IDREF")
        .with_attr("RefAttributeType", ID_LINK_TYPE);
    if let Some(default) = default {
        element = element.with_child(CaexElement::new("DefaultValue").with_text(default));
    }
    element = element.with_child(CaexElement::new("Value").with_text(guid));
    if attr == EnRgAttribute::VUnit {
        element = element
            .with_child(value_attribute(
                "UnitId",
                "xs:int",
                &view.v_unit.unit_id.to_string(),
            ))
            .with_child(value_attribute(
                "DisplayName",
                "xs:string",
                &view.v_unit.display,
            ));
    }
    element
}

fn source_item(node: &str, name: &str, guid: &str, access: Access) -> CaexElement {
    CaexElement::new("ExternalInterface")
        .with_attr("Name", name)
        .with_attr("ID", guid)
        .with_attr("RefBaseClassPath", OPCUA_ITEM_CLASS)
        .with_child(value_attribute("Identifier", "xs:string", node))
        .with_child(value_attribute("Access", "xs:string", access.as_str()))
}

fn energy_aspect(guids: &mut GuidSource) -> CaexElement {
    let mut list = internal_element(LIST_NAME, &guids.next_guid(), MEASUREMENT_LIST_CLASS);
    for kind in ScopeKind::ALL {
        list = list.with_child(internal_element(
            kind.group_name(),
            &guids.next_guid(),
            MEASUREMENT_GROUP_CLASS,
        ));
    }
    let functions =
        internal_element(FUNCTIONS_NAME, &guids.next_guid(), FUNCTIONS_CLASS).with_child(list);
    internal_element(ASPECT_NAME, &guids.next_guid(), ASPECT_CLASS).with_child(functions)
}

/// Instantiates one MeasurementType with its EnRGViews, source items and
/// MeasurementList entry. Re-adding an identical spec is a no-op.
pub fn add_measurement_instance(
    doc: &mut CaexDocument,
    spec: &MeasurementSpec,
    guids: &mut GuidSource,
    mids: &MidRegistry,
) -> Result<InjectOutcome, MtpError> {
    check_spec(spec, mids)?;
    if !library_present(doc)? {
        return Err(MtpError::LibraryMissing);
    }
    let layout = PeaLayout::locate(doc)?;

    let existing = collect_measurements(doc, mids);
    if existing
        .iter()
        .any(|m| m.device_tag == spec.device_tag && m.to_spec() == *spec)
    {
        return Ok(InjectOutcome::AlreadyPresent);
    }

    let mut seen = HashSet::new();
    for view in &spec.views {
        let clash_in_scope = existing
            .iter()
            .filter(|m| m.scope == spec.scope)
            .flat_map(|m| m.views.iter())
            .any(|v| v.view.tag_name == view.tag_name);
        if clash_in_scope || !seen.insert(view.tag_name.as_str()) {
            return Err(MtpError::DuplicateTagName {
                tag: view.tag_name.clone(),
                scope: spec.scope.clone(),
            });
        }
    }

    let existing_nodes: HashSet<String> = layout
        .source_list(doc)
        .walk()
        .filter(|e| e.name == "ExternalInterface")
        .filter_map(|e| {
            e.child("Attribute", "Identifier")
                .and_then(|a| a.child_text("Value"))
                .map(str::to_owned)
        })
        .collect();
    for view in &spec.views {
        for attr in EnRgAttribute::EXPOSED {
            let node = node_id(&view.tag_name, attr);
            if existing_nodes.contains(&node) {
                return Err(MtpError::DuplicateNodeId(node));
            }
        }
    }

    let server_name = format!("{}_TagServer", spec.device_tag);
    let instance_list = layout.instance_list(doc);
    let source_list = layout.source_list(doc);
    if instance_list
        .elements()
        .any(|e| e.caex_name() == Some(spec.device_tag.as_str()))
        || source_list
            .elements()
            .any(|e| e.caex_name() == Some(server_name.as_str()))
    {
        return Err(MtpError::DuplicateDeviceTag(spec.device_tag.clone()));
    }

    // GUID draw order is fixed so seeded runs are reproducible
    let aspect = match layout.aspect_present(doc) {
        true => None,
        false => Some(energy_aspect(guids)),
    };
    let type_guid = guids.next_guid();
    let server_guid = guids.next_guid();

    let mut measurement = internal_element(&spec.device_tag, &type_guid, MEASUREMENT_TYPE_CLASS)
        .with_child(value_attribute(
            "ServerEndpoint",
            "xs:string",
            &spec.server_endpoint,
        ))
        .with_child(link_attribute("SourceServer", &server_guid));
    let mut server = internal_element(&server_name, &server_guid, OPCUA_SERVER_CLASS).with_child(
        value_attribute("Endpoint", "xs:string", &spec.server_endpoint),
    );

    for view in &spec.views {
        let view_guid = guids.next_guid();
        let mut instance = internal_element(&view.tag_name, &view_guid, ENRGVIEW_CLASS)
            .with_child(value_attribute("TagName", "xs:string", &view.tag_name))
            .with_child(value_attribute(
                "TagDescription",
                "xs:string",
                &view.tag_description,
            ));
        for attr in EnRgAttribute::ALL.into_iter().filter(|a| a.is_exposed()) {
            let item_guid = guids.next_guid();
            instance = instance.with_child(exposed_attribute(view, attr, &item_guid));
            server = server.with_child(source_item(
                &node_id(&view.tag_name, attr),
                &format!("{}.{}", view.tag_name, attr.name()),
                &item_guid,
                Access::for_attribute(attr),
            ));
        }
        measurement = measurement.with_child(instance);
    }

    let entry = internal_element(
        &spec.device_tag,
        &guids.next_guid(),
        MEASUREMENT_LIST_ENTRY_CLASS,
    )
    .with_child(link_attribute("MeasurementTypeRef", &type_guid))
    .with_child(value_attribute(
        "Scope",
        "xs:string",
        spec.scope.kind.as_str(),
    ))
    .with_child(value_attribute("Target", "xs:string", &spec.scope.target));

    if let Some(aspect) = aspect {
        layout.pea_mut(doc).insert_child(aspect, Position::End)?;
    }
    layout
        .instance_list_mut(doc)
        .insert_child(measurement, Position::End)?;
    layout
        .source_list_mut(doc)
        .insert_child(server, Position::End)?;
    let group = layout
        .measurement_group_mut(doc, spec.scope.kind)
        .ok_or_else(|| {
            MtpError::StructureMissing(format!(
                "{ASPECT_NAME}/{FUNCTIONS_NAME}/{LIST_NAME}/{}",
                spec.scope.kind.group_name()
            ))
        })?;
    group.insert_child(entry, Position::End)?;
    Ok(InjectOutcome::Added)
}
