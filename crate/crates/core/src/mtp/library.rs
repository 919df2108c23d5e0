use crate::caex::{serialize_element, CaexDocument, CaexElement, ElementPath, Node, Position};
use crate::enrg::EnRgAttribute;

use super::{
    MtpError, ANAVIEW_CLASS, ATTRIBUTE_TYPE_LIB, ENERGY_LIB, ID_LINK_TYPE, INDICATOR_PATH,
};

pub(crate) fn attribute_definition(
    name: &str,
    data_type: Option<&str>,
    description: &str,
) -> CaexElement {
    let mut attr = CaexElement::new("Attribute").with_attr("Name", name);
    if let Some(data_type) = data_type {
        attr.set_attr("AttributeDataType", data_type);
    }
    attr.with_child(CaexElement::new("Description").with_text(description))
}

pub(crate) fn value_attribute(name: &str, data_type: &str, value: &str) -> CaexElement {
    CaexElement::new("Attribute")
        .with_attr("Name", name)
        .with_attr("AttributeDataType", data_type)
        .with_child(CaexElement::new("Value").with_text(value))
}

pub(crate) fn link_attribute(name: &str, guid: &str) -> CaexElement {
    CaexElement::new("Attribute")
        .with_attr("Name", name)
        .with_attr("AttributeDataType", "xs:IDREF")
        .with_attr("RefAttributeType", ID_LINK_TYPE)
        .with_child(CaexElement::new("Value").with_text(guid))
}

fn link_definition(name: &str, description: &str) -> CaexElement {
    let mut attr = attribute_definition(name, Some("xs:IDREF"), description);
    attr.set_attr("RefAttributeType", ID_LINK_TYPE);
    attr
}

/// The EnRGView system unit class, derived from AnaView.
pub fn enrgview_class() -> CaexElement {
    let mut class = CaexElement::new("SystemUnitClass")
        .with_attr("Name", "EnRGView")
        .with_attr("RefBaseClassPath", ANAVIEW_CLASS)
        .with_child(
            CaexElement::new("Description")
                .with_text("Indicator element for semantically described energy measurements"),
        );
    for attr in EnRgAttribute::ALL {
        let mut definition =
            attribute_definition(attr.name(), attr.data_type(), attr.description());
        if attr == EnRgAttribute::VUnit {
            definition = definition
                .with_child(attribute_definition(
                    "UnitId",
                    Some("xs:int"),
                    "Numeric engineering unit code",
                ))
                .with_child(attribute_definition(
                    "DisplayName",
                    Some("xs:string"),
                    "Unit symbol",
                ));
        }
        class = class.with_child(definition);
    }
    class
}

fn class(name: &str, description: &str) -> CaexElement {
    CaexElement::new("SystemUnitClass")
        .with_attr("Name", name)
        .with_child(CaexElement::new("Description").with_text(description))
}

/// Classes for the energy-management aspect, its functions and the measurement list.
pub fn energy_management_library() -> CaexElement {
    CaexElement::new("SystemUnitClassLib")
        .with_attr("Name", ENERGY_LIB)
        .with_child(CaexElement::new("Description").with_text("Energy management aspect of a PEA"))
        .with_child(class(
            "EnergyManagementAspect",
            "Container for energy management functions",
        ))
        .with_child(class(
            "EnergyManagementFunctions",
            "Energy management functions of the PEA",
        ))
        .with_child(class(
            "MeasurementList",
            "Module, service and component measurement groups",
        ))
        .with_child(class("MeasurementGroup", "Measurements of one scope kind"))
        .with_child(
            class("MeasurementListEntry", "Reference to one MeasurementType")
                .with_child(link_definition(
                    "MeasurementTypeRef",
                    "ID of the referenced MeasurementType",
                ))
                .with_child(attribute_definition(
                    "Scope",
                    Some("xs:string"),
                    "Module, Service or Component",
                ))
                .with_child(attribute_definition(
                    "Target",
                    Some("xs:string"),
                    "Service or component name; empty for module scope",
                )),
        )
        .with_child(
            class(
                "MeasurementType",
                "Measuring point holding one or more EnRGView instances",
            )
            .with_child(attribute_definition(
                "ServerEndpoint",
                Some("xs:string"),
                "host:port of the tag server",
            ))
            .with_child(link_definition(
                "SourceServer",
                "ID of the server in the SourceList",
            )),
        )
}

fn id_link_type() -> CaexElement {
    CaexElement::new("AttributeType")
        .with_attr("Name", "IDLinkAttributeType")
        .with_attr("AttributeDataType", "xs:IDREF")
        .with_child(
            CaexElement::new("Description").with_text("Value holds the ID of a linked element"),
        )
}

fn node_index(parent: &CaexElement, pred: impl Fn(&CaexElement) -> bool) -> Option<usize> {
    parent
        .children
        .iter()
        .position(|n| matches!(n, Node::Element(e) if pred(e)))
}

/// Adds the EnRGView class and the energy-management library. Returns
/// `true` if the document changed; a second call is a no-op.
pub fn inject_energy_library(doc: &mut CaexDocument) -> Result<bool, MtpError> {
    let path = ElementPath::new(INDICATOR_PATH)?;
    let enrg = enrgview_class();
    let energy_lib = energy_management_library();

    // check everything before mutating
    let indicator = doc.find_by_path(&path)?.ok_or(MtpError::MissingAnaView)?;
    let anaview_at = node_index(indicator, |e| {
        e.name == "SystemUnitClass" && e.caex_name() == Some("AnaView")
    })
    .ok_or(MtpError::MissingAnaView)?;
    let enrg_present = match indicator.child("SystemUnitClass", "EnRGView") {
        Some(existing) if serialize_element(existing) == serialize_element(&enrg) => true,
        Some(_) => return Err(MtpError::ConflictingDefinition("EnRGView".into())),
        None => false,
    };
    let lib_present = match doc.root.child("SystemUnitClassLib", ENERGY_LIB) {
        Some(existing) if serialize_element(existing) == serialize_element(&energy_lib) => true,
        Some(_) => return Err(MtpError::ConflictingDefinition(ENERGY_LIB.into())),
        None => false,
    };

    let mut changed = false;
    if !enrg_present {
        let indicator = doc
            .find_by_path_mut(&path)?
            .expect("indicator group located above");
        indicator.insert_child(enrg, Position::Index(anaview_at + 1))?;
        changed = true;
    }
    if !lib_present {
        let after = node_index(&doc.root, |e| {
            e.name == "SystemUnitClassLib" && e.caex_name() == Some(INDICATOR_PATH[0])
        });
        let position = after.map_or(Position::End, |i| Position::Index(i + 1));
        doc.root.insert_child(energy_lib, position)?;
        changed = true;
    }
    match doc.root.child_mut("AttributeTypeLib", ATTRIBUTE_TYPE_LIB) {
        Some(lib) => {
            if lib.child("AttributeType", "IDLinkAttributeType").is_none() {
                lib.insert_child(id_link_type(), Position::End)?;
                changed = true;
            }
        }
        None => {
            let lib = CaexElement::new("AttributeTypeLib")
                .with_attr("Name", ATTRIBUTE_TYPE_LIB)
                .with_child(id_link_type());
            doc.root.insert_child(lib, Position::End)?;
            changed = true;
        }
    }
    Ok(changed)
}
