//! The EnRGView energy measurement record, its attribute vocabulary and
//! validation rules, and the measurement-ID registry.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tagbus::Quality;

const DEFAULT_MID_REGISTRY: &str = include_str!("../data/default_mid_registry.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnrgError {
    #[error("accuracy class is unknown; no interval can be computed")]
    UnknownAccuracy,
    #[error("measurement ID 0 is reserved for unassigned measurements")]
    UnassignedMid,
    #[error("measurement ID {0} is not in the registry")]
    UnknownMid(u32),
    #[error("registry line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("measurement ID {0} is defined twice")]
    DuplicateCode(u32),
    #[error("invalid {what} literal `{text}`")]
    InvalidLiteral { what: &'static str, text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineeringUnit {
    pub unit_id: i64,
    pub display: String,
}

impl EngineeringUnit {
    pub fn new(unit_id: i64, display: impl Into<String>) -> Self {
        Self {
            unit_id,
            display: display.into(),
        }
    }
}

macro_rules! literal_enum {
    ($(#[$meta:meta])* $name:ident, $what:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = EnrgError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(EnrgError::InvalidLiteral { what: $what, text: s.to_owned() }),
                }
            }
        }
    };
}

literal_enum!(
    /// Meter accuracy class; the percentage is relative to full scale.
    AccuracyClass, "accuracy class" {
        C0_1 => "C0_1",
        C0_2 => "C0_2",
        C0_5 => "C0_5",
        C1 => "C1",
        C2 => "C2",
        C3 => "C3",
        Unknown => "Unknown",
    }
);

impl AccuracyClass {
    pub fn percentage(self) -> Option<f64> {
        match self {
            AccuracyClass::C0_1 => Some(0.1),
            AccuracyClass::C0_2 => Some(0.2),
            AccuracyClass::C0_5 => Some(0.5),
            AccuracyClass::C1 => Some(1.0),
            AccuracyClass::C2 => Some(2.0),
            AccuracyClass::C3 => Some(3.0),
            AccuracyClass::Unknown => None,
        }
    }
}

literal_enum!(
    AccuracyDomain, "accuracy domain" {
        CurrentValue => "CurrentValue",
        MeasurementSeries => "MeasurementSeries",
    }
);

literal_enum!(
    Resource, "resource" {
        Electricity => "Electricity",
        Gas => "Gas",
        Coal => "Coal",
        Water => "Water",
        Steam => "Steam",
        CompressedAir => "CompressedAir",
        Heat => "Heat",
        Other => "Other",
    }
);

literal_enum!(
    QuantityClass, "quantity class" {
        Instantaneous => "Instantaneous",
        Counter => "Counter",
    }
);

/// Measurement identifier. Code 0 means "unassigned".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementId(pub u32);

impl MeasurementId {
    pub const UNASSIGNED: MeasurementId = MeasurementId(0);

    pub fn is_assigned(self) -> bool {
        self.0 != 0
    }
}

impl fmt::Display for MeasurementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MidEntry {
    pub kind: String,
    pub quantity_class: QuantityClass,
    pub canonical_unit: EngineeringUnit,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MidRegistry {
    entries: BTreeMap<u32, MidEntry>,
}

impl MidRegistry {
    /// Parses the `code;kind;quantity_class;unit_display;unit_id` line format.
    pub fn load(text: &str) -> Result<Self, EnrgError> {
        let mut entries = BTreeMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = content.split(';').map(str::trim).collect();
            let err = |message: String| EnrgError::ParseError { line, message };
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", fields.len())));
            }
            let code: u32 = fields[0]
                .parse()
                .map_err(|_| err(format!("bad code `{}`", fields[0])))?;
            if code == 0 {
                return Err(err("code 0 is reserved".into()));
            }
            if fields[1].is_empty() {
                return Err(err("empty kind".into()));
            }
            let quantity_class = fields[2]
                .parse::<QuantityClass>()
                .map_err(|e| err(e.to_string()))?;
            if fields[3].is_empty() {
                return Err(err("empty unit display".into()));
            }
            let unit_id: i64 = fields[4]
                .parse()
                .map_err(|_| err(format!("bad unit id `{}`", fields[4])))?;
            let entry = MidEntry {
                kind: fields[1].to_owned(),
                quantity_class,
                canonical_unit: EngineeringUnit::new(unit_id, fields[3]),
            };
            if entries.insert(code, entry).is_some() {
                return Err(EnrgError::DuplicateCode(code));
            }
        }
        Ok(Self { entries })
    }

    /// The registry bundled with the crate.
    pub fn builtin() -> Self {
        Self::load(DEFAULT_MID_REGISTRY).expect("bundled MID registry parses")
    }

    pub fn decode(&self, mid: MeasurementId) -> Result<&MidEntry, EnrgError> {
        if !mid.is_assigned() {
            return Err(EnrgError::UnassignedMid);
        }
        self.entries.get(&mid.0).ok_or(EnrgError::UnknownMid(mid.0))
    }

    pub fn is_counter(&self, mid: MeasurementId) -> bool {
        matches!(
            self.decode(mid),
            Ok(MidEntry {
                quantity_class: QuantityClass::Counter,
                ..
            })
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (MeasurementId, &MidEntry)> {
        self.entries.iter().map(|(c, e)| (MeasurementId(*c), e))
    }
}

pub fn decode_measurement_id(
    reg: &MidRegistry,
    mid: MeasurementId,
) -> Result<&MidEntry, EnrgError> {
    reg.decode(mid)
}

pub fn load_mid_registry(text: &str) -> Result<MidRegistry, EnrgError> {
    MidRegistry::load(text)
}

/// The thirteen EnRGView attributes, in library order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EnRgAttribute {
    TagName,
    TagDescription,
    V,
    VUnit,
    VSclMin,
    VSclMax,
    AccC,
    AccD,
    AccR,
    Mid,
    VbR,
    Mp,
    Res,
}

impl EnRgAttribute {
    pub const ALL: [EnRgAttribute; 13] = [
        EnRgAttribute::TagName,
        EnRgAttribute::TagDescription,
        EnRgAttribute::V,
        EnRgAttribute::VUnit,
        EnRgAttribute::VSclMin,
        EnRgAttribute::VSclMax,
        EnRgAttribute::AccC,
        EnRgAttribute::AccD,
        EnRgAttribute::AccR,
        EnRgAttribute::Mid,
        EnRgAttribute::VbR,
        EnRgAttribute::Mp,
        EnRgAttribute::Res,
    ];

    /// Attributes served as live tags. TagName and TagDescription stay static.
    pub const EXPOSED: [EnRgAttribute; 11] = [
        EnRgAttribute::V,
        EnRgAttribute::VUnit,
        EnRgAttribute::VSclMin,
        EnRgAttribute::VSclMax,
        EnRgAttribute::AccC,
        EnRgAttribute::AccD,
        EnRgAttribute::AccR,
        EnRgAttribute::Mid,
        EnRgAttribute::VbR,
        EnRgAttribute::Mp,
        EnRgAttribute::Res,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnRgAttribute::TagName => "TagName",
            EnRgAttribute::TagDescription => "TagDescription",
            EnRgAttribute::V => "V",
            EnRgAttribute::VUnit => "VUnit",
            EnRgAttribute::VSclMin => "VSclMin",
            EnRgAttribute::VSclMax => "VSclMax",
            EnRgAttribute::AccC => "AccC",
            EnRgAttribute::AccD => "AccD",
            EnRgAttribute::AccR => "AccR",
            EnRgAttribute::Mid => "MID",
            EnRgAttribute::VbR => "VbR",
            EnRgAttribute::Mp => "MP",
            EnRgAttribute::Res => "Res",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn is_exposed(self) -> bool {
        !matches!(self, EnRgAttribute::TagName | EnRgAttribute::TagDescription)
    }

    /// XML schema data type written into the class library. `VUnit` is a
    /// struct attribute (`UnitId`, `DisplayName`) and has none.
    pub fn data_type(self) -> Option<&'static str> {
        Some(match self {
            EnRgAttribute::TagName
            | EnRgAttribute::TagDescription
            | EnRgAttribute::AccC
            | EnRgAttribute::AccD
            | EnRgAttribute::Res => "xs:string",
            EnRgAttribute::V
            | EnRgAttribute::VSclMin
            | EnRgAttribute::VSclMax
            | EnRgAttribute::AccR
            | EnRgAttribute::VbR => "xs:double",
            EnRgAttribute::VUnit => return None,
            EnRgAttribute::Mid => "xs:unsignedInt",
            EnRgAttribute::Mp => "xs:long",
        })
    }

    pub fn description(self) -> &'static str {
        match self {
            EnRgAttribute::TagName => "Measuring point name",
            EnRgAttribute::TagDescription => "Measuring point description",
            EnRgAttribute::V => "Measurement value in VUnit",
            EnRgAttribute::VUnit => "Engineering unit (UnitId, DisplayName)",
            EnRgAttribute::VSclMin => "Lower scale limit of V",
            EnRgAttribute::VSclMax => "Upper scale limit of V",
            EnRgAttribute::AccC => "Accuracy class (percent of AccR)",
            EnRgAttribute::AccD => "Accuracy domain: CurrentValue or MeasurementSeries",
            EnRgAttribute::AccR => "Accuracy range: full-scale value in VUnit",
            EnRgAttribute::Mid => "Measurement ID",
            EnRgAttribute::VbR => "Counter value before the last reset, in VUnit",
            EnRgAttribute::Mp => "Measurement period in milliseconds",
            EnRgAttribute::Res => "Measured energy resource",
        }
    }
}

impl fmt::Display for EnRgAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A live attribute value: numeric or textual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Number(f64),
    Text(String),
}

impl AttributeValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttributeValue::Number(n) => Some(*n),
            AttributeValue::Text(_) => None,
        }
    }
}

/// One energy measurement's semantic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnRgView {
    pub tag_name: String,
    #[serde(default)]
    pub tag_description: String,
    pub v: f64,
    pub v_unit: EngineeringUnit,
    pub v_scl_min: f64,
    pub v_scl_max: f64,
    pub acc_c: AccuracyClass,
    pub acc_d: AccuracyDomain,
    pub acc_r: f64,
    pub mid: MeasurementId,
    #[serde(default)]
    pub vbr: f64,
    /// Measurement period in milliseconds.
    pub mp: i64,
    pub res: Resource,
}

impl EnRgView {
    /// Static value of an exposed attribute as served on the wire.
    pub fn value_of(&self, attr: EnRgAttribute) -> AttributeValue {
        use AttributeValue::{Number, Text};
        match attr {
            EnRgAttribute::TagName => Text(self.tag_name.clone()),
            EnRgAttribute::TagDescription => Text(self.tag_description.clone()),
            EnRgAttribute::V => Number(self.v),
            EnRgAttribute::VUnit => Text(self.v_unit.display.clone()),
            EnRgAttribute::VSclMin => Number(self.v_scl_min),
            EnRgAttribute::VSclMax => Number(self.v_scl_max),
            EnRgAttribute::AccC => Text(self.acc_c.to_string()),
            EnRgAttribute::AccD => Text(self.acc_d.to_string()),
            EnRgAttribute::AccR => Number(self.acc_r),
            EnRgAttribute::Mid => Number(f64::from(self.mid.0)),
            EnRgAttribute::VbR => Number(self.vbr),
            EnRgAttribute::Mp => Number(self.mp as f64),
            EnRgAttribute::Res => Text(self.res.to_string()),
        }
    }

    pub fn in_scale(&self, value: f64) -> bool {
        value >= self.v_scl_min && value <= self.v_scl_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ViolationCode {
    EmptyTagName,
    EmptyUnit,
    NonFinite,
    ScaleInverted,
    ValueOutOfScale,
    NegativeAccuracyRange,
    NegativePeriod,
    NegativeValueBeforeReset,
    UnassignedMid,
    UnknownMid,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub field: &'static str,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, field: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            field,
            message: message.into(),
        }
    }

    /// Out-of-scale values are tolerated data, everything else is a defect.
    pub fn is_hard(&self) -> bool {
        self.code != ViolationCode::ValueOutOfScale
    }
}

/// Checks one view against the record invariants and the MID registry.
pub fn validate_enrg_view(view: &EnRgView, mids: &MidRegistry) -> Vec<Violation> {
    validate_enrg_view_with_quality(view, mids, Quality::Good)
}

/// Like [`validate_enrg_view`], but a value already flagged `OutOfRange`
/// is not reported again as out of scale.
pub fn validate_enrg_view_with_quality(
    view: &EnRgView,
    mids: &MidRegistry,
    quality: Quality,
) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Vec::new();

    if view.tag_name.trim().is_empty() {
        out.push(Violation::new(
            EmptyTagName,
            "tag_name",
            "tag name is empty",
        ));
    }
    if view.v_unit.display.trim().is_empty() {
        out.push(Violation::new(
            EmptyUnit,
            "v_unit",
            "unit display text is empty",
        ));
    }
    for (field, value) in [
        ("v", view.v),
        ("v_scl_min", view.v_scl_min),
        ("v_scl_max", view.v_scl_max),
        ("acc_r", view.acc_r),
        ("vbr", view.vbr),
    ] {
        if !value.is_finite() {
            out.push(Violation::new(
                NonFinite,
                field,
                format!("{field} is not finite"),
            ));
        }
    }
    if view.v_scl_min > view.v_scl_max {
        out.push(Violation::new(
            ScaleInverted,
            "v_scl_min",
            format!(
                "scale min {} exceeds max {}",
                view.v_scl_min, view.v_scl_max
            ),
        ));
    } else if view.v.is_finite() && !view.in_scale(view.v) && quality != Quality::OutOfRange {
        out.push(Violation::new(
            ValueOutOfScale,
            "v",
            format!(
                "value {} outside scale [{}, {}]",
                view.v, view.v_scl_min, view.v_scl_max
            ),
        ));
    }
    if view.acc_r < 0.0 {
        out.push(Violation::new(
            NegativeAccuracyRange,
            "acc_r",
            format!("accuracy range {} is negative", view.acc_r),
        ));
    }
    if view.mp < 0 {
        out.push(Violation::new(
            NegativePeriod,
            "mp",
            format!("measurement period {} ms is negative", view.mp),
        ));
    }
    match mids.decode(view.mid) {
        Err(EnrgError::UnassignedMid) => out.push(Violation::new(
            UnassignedMid,
            "mid",
            "measurement ID is unassigned",
        )),
        Err(_) => out.push(Violation::new(
            UnknownMid,
            "mid",
            format!("measurement ID {} is not in the registry", view.mid),
        )),
        Ok(entry) => {
            if entry.quantity_class == QuantityClass::Counter && view.vbr < 0.0 {
                out.push(Violation::new(
                    NegativeValueBeforeReset,
                    "vbr",
                    format!("counter value before reset {} is negative", view.vbr),
                ));
            }
        }
    }
    out
}

/// Absolute uncertainty band around `v`, from accuracy class and full scale.
pub fn accuracy_interval(view: &EnRgView) -> Result<(f64, f64), EnrgError> {
    let percent = view.acc_c.percentage().ok_or(EnrgError::UnknownAccuracy)?;
    let half_width = percent / 100.0 * view.acc_r;
    Ok((view.v - half_width, view.v + half_width))
}

/// Shortest text that parses back to the same `f64`.
pub fn format_number(value: f64) -> String {
    format!("{value}")
}

/// Watts per unit for power display units (`W`, `kW`, `MW`).
pub fn power_unit_watts(unit: &str) -> Option<f64> {
    match unit {
        "W" => Some(1.0),
        "kW" => Some(1e3),
        "MW" => Some(1e6),
        _ => None,
    }
}

/// Watt-hours per unit for energy display units (`Wh`, `kWh`, `MWh`, `J`).
pub fn energy_unit_wh(unit: &str) -> Option<f64> {
    match unit {
        "Wh" => Some(1.0),
        "kWh" => Some(1e3),
        "MWh" => Some(1e6),
        "J" => Some(1.0 / 3600.0),
        _ => None,
    }
}

/// Factor turning `power_unit · ms` into `energy_unit`.
pub fn power_ms_to_energy(power_unit: &str, energy_unit: &str) -> Option<f64> {
    let watts = power_unit_watts(power_unit)?;
    let wh = energy_unit_wh(energy_unit)?;
    Some(watts / 3.6e6 / wh)
}
