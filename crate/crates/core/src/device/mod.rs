//! Device terminals: kind codec tables, sensor and actuator behavior,
//! battery accounting and the extension interface for third-party kinds.
//!
//! Every kind, built-in or third-party, is described by a [`KindSpec`]: the
//! ordered fields it reports, which of them a `SET_ACTUATOR` may change, and
//! the alarm rules evaluated on each environment sample. Built-ins are just
//! pre-registered specs, so an extension kind travels exactly the same code
//! path.

pub mod battery;
pub mod terminal;
pub mod tlv;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac::EnergyParams;
use crate::sim::SimTime;

pub use battery::{battery_life_estimate, DutyCycle, LifetimeEstimate};
pub use terminal::{CommandOutcome, EnvSample, SensorOutput, Terminal};
pub use tlv::{DeviceMessage, ReportCause, TlvError, TlvType};

/// First kind id available to third parties.
pub const EXTENSION_KIND_MIN: u8 = 0x80;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("kind {0:#04x} does not accept this command")]
    Unsupported(u8),
    #[error("malformed device message: {0}")]
    Decode(String),
    #[error("kind id {0:#04x} already registered")]
    Conflict(u8),
    #[error("kind name `{0}` already registered")]
    NameConflict(String),
    #[error("kind id {0:#04x} outside the third-party range 0x80..=0xFF")]
    ReservedKindId(u8),
    #[error("invalid kind descriptor: {0}")]
    InvalidSpec(String),
    #[error("unknown device kind `{0}`")]
    UnknownKind(String),
    #[error("battery capacity must be positive")]
    ZeroCapacity,
    #[error("duty cycle does not fit: {0}")]
    InvalidDutyCycle(String),
}

impl From<TlvError> for DeviceError {
    fn from(e: TlvError) -> Self {
        DeviceError::Decode(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    /// 1 or 2 bytes.
    pub width: u8,
    #[serde(default)]
    pub signed: bool,
    pub min: i32,
    pub max: i32,
    #[serde(default)]
    pub default: i32,
}

impl FieldSpec {
    pub fn new(name: &str, width: u8, signed: bool, min: i32, max: i32, default: i32) -> Self {
        FieldSpec {
            name: name.to_string(),
            width,
            signed,
            min,
            max,
            default,
        }
    }

    fn flag(name: &str) -> Self {
        Self::new(name, 1, false, 0, 1, 0)
    }

    fn encode(&self, v: i32, out: &mut Vec<u8>) {
        match (self.width, self.signed) {
            (1, false) => out.push(v as u8),
            (1, true) => out.push(v as i8 as u8),
            (_, false) => out.extend_from_slice(&(v as u16).to_be_bytes()),
            (_, true) => out.extend_from_slice(&(v as i16).to_be_bytes()),
        }
    }

    fn decode(&self, bytes: &[u8]) -> i32 {
        match (self.width, self.signed) {
            (1, false) => bytes[0] as i32,
            (1, true) => bytes[0] as i8 as i32,
            (_, false) => u16::from_be_bytes([bytes[0], bytes[1]]) as i32,
            (_, true) => i16::from_be_bytes([bytes[0], bytes[1]]) as i32,
        }
    }

    pub fn clamp(&self, v: i32) -> i32 {
        v.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    AtLeast(i32),
    AtMost(i32),
    Equals(i32),
    Outside { lo: i32, hi: i32 },
}

impl Condition {
    pub fn holds(&self, v: i32) -> bool {
        match *self {
            Condition::AtLeast(x) => v >= x,
            Condition::AtMost(x) => v <= x,
            Condition::Equals(x) => v == x,
            Condition::Outside { lo, hi } => v < lo || v > hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmRule {
    pub field: String,
    pub condition: Condition,
}

/// Variable-length command bytes, recorded rather than decoded (IR codes).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpaqueCommand {
    pub max_len: u8,
    /// Field that receives the length of the last accepted command.
    pub state_field: String,
}

/// Codec table and behavior of one device kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindSpec {
    pub id: u8,
    pub name: String,
    pub fields: Vec<FieldSpec>,
    #[serde(default)]
    pub settable: Vec<String>,
    #[serde(default)]
    pub opaque_command: Option<OpaqueCommand>,
    #[serde(default)]
    pub alarms: Vec<AlarmRule>,
    /// Alarms fire only while the device is armed.
    #[serde(default)]
    pub armed_alarms: bool,
    #[serde(default)]
    pub mains_powered: bool,
    /// False for WAN-attached kinds (cameras).
    #[serde(default = "default_true")]
    pub on_rf: bool,
}

fn default_true() -> bool {
    true
}

impl KindSpec {
    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn is_actuator(&self) -> bool {
        !self.settable.is_empty() || self.opaque_command.is_some()
    }

    pub fn defaults(&self) -> Vec<i32> {
        self.fields.iter().map(|f| f.default).collect()
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |m: String| Err(DeviceError::InvalidSpec(m));
        if self.name.is_empty() {
            return bad("empty name".into());
        }
        let mut width = 3usize;
        for f in &self.fields {
            if f.width != 1 && f.width != 2 {
                return bad(format!("field `{}` width must be 1 or 2", f.name));
            }
            if f.min > f.max || !(f.min..=f.max).contains(&f.default) {
                return bad(format!("field `{}` range/default inconsistent", f.name));
            }
            let (lo, hi) = match (f.width, f.signed) {
                (1, false) => (0, u8::MAX as i32),
                (1, true) => (i8::MIN as i32, i8::MAX as i32),
                (_, false) => (0, u16::MAX as i32),
                (_, true) => (i16::MIN as i32, i16::MAX as i32),
            };
            if f.min < lo || f.max > hi {
                return bad(format!("field `{}` range exceeds its width", f.name));
            }
            width += f.width as usize;
        }
        if width > tlv::MAX_VALUE_LEN {
            return bad("fields exceed one frame".into());
        }
        for s in &self.settable {
            if self.field_index(s).is_none() {
                return bad(format!("settable field `{s}` not declared"));
            }
        }
        for r in &self.alarms {
            if self.field_index(&r.field).is_none() {
                return bad(format!("alarm field `{}` not declared", r.field));
            }
        }
        if let Some(op) = &self.opaque_command {
            if self.field_index(&op.state_field).is_none() {
                return bad(format!("opaque state field `{}` not declared", op.state_field));
            }
            if op.max_len == 0 || op.max_len as usize > tlv::MAX_VALUE_LEN {
                return bad("opaque max_len out of range".into());
            }
        }
        Ok(())
    }

    pub fn encode_fields(&self, values: &[i32]) -> Vec<u8> {
        let mut out = Vec::new();
        for (f, v) in self.fields.iter().zip(values) {
            f.encode(*v, &mut out);
        }
        out
    }

    pub fn decode_fields(&self, bytes: &[u8]) -> Result<Vec<i32>, DeviceError> {
        let need: usize = self.fields.iter().map(|f| f.width as usize).sum();
        if bytes.len() != need {
            return Err(DeviceError::Decode(format!("{} expects {need} field bytes, got {}", self.name, bytes.len())));
        }
        let mut at = 0;
        let mut out = Vec::with_capacity(self.fields.len());
        for f in &self.fields {
            out.push(f.decode(&bytes[at..]));
            at += f.width as usize;
        }
        Ok(out)
    }

    /// Encodes a `SET_ACTUATOR` value from `name → value` pairs; fields not
    /// mentioned keep the value from `current`.
    pub fn encode_set(&self, current: &[i32], changes: &BTreeMap<String, i32>) -> Result<Vec<u8>, DeviceError> {
        if self.settable.is_empty() {
            return Err(DeviceError::Unsupported(self.id));
        }
        let mut out = Vec::new();
        for name in &self.settable {
            let idx = self.field_index(name).expect("validated");
            let f = &self.fields[idx];
            let v = changes.get(name).copied().unwrap_or(current[idx]);
            if !(f.min..=f.max).contains(&v) {
                return Err(DeviceError::Decode(format!("{name}={v} outside {}..={}", f.min, f.max)));
            }
            f.encode(v, &mut out);
        }
        Ok(out)
    }

    /// Decodes a `SET_ACTUATOR` value into `(field index, value)` pairs.
    pub fn decode_set(&self, bytes: &[u8]) -> Result<Vec<(usize, i32)>, DeviceError> {
        let need: usize = self.settable.iter().map(|n| self.fields[self.field_index(n).expect("validated")].width as usize).sum();
        if bytes.len() != need {
            return Err(DeviceError::Decode(format!("SET for {} expects {need} bytes, got {}", self.name, bytes.len())));
        }
        let mut at = 0;
        let mut out = Vec::new();
        for name in &self.settable {
            let idx = self.field_index(name).expect("validated");
            let f = &self.fields[idx];
            let v = f.decode(&bytes[at..]);
            if !(f.min..=f.max).contains(&v) {
                return Err(DeviceError::Decode(format!("{name}={v} outside {}..={}", f.min, f.max)));
            }
            out.push((idx, v));
            at += f.width as usize;
        }
        Ok(out)
    }
}

/// Built-in kind ids.
pub mod kinds {
    pub const PLUG: u8 = 0x01;
    pub const BULB: u8 = 0x02;
    pub const DOOR_CONTACT: u8 = 0x03;
    pub const PIR_MOTION: u8 = 0x04;
    pub const GAS: u8 = 0x05;
    pub const SMOKE: u8 = 0x06;
    pub const TEMP_HUMIDITY: u8 = 0x07;
    pub const PM25: u8 = 0x08;
    pub const VIBRATION_TOUCH: u8 = 0x09;
    pub const CURTAIN: u8 = 0x0A;
    pub const IR_BLASTER: u8 = 0x0B;
    pub const CAMERA: u8 = 0x0C;
}

fn builtin_specs() -> Vec<KindSpec> {
    use kinds::*;
    let spec = |id: u8, name: &str, fields: Vec<FieldSpec>| KindSpec {
        id,
        name: name.to_string(),
        fields,
        settable: Vec::new(),
        opaque_command: None,
        alarms: Vec::new(),
        armed_alarms: false,
        mains_powered: false,
        on_rf: true,
    };
    let rule = |field: &str, condition| AlarmRule {
        field: field.to_string(),
        condition,
    };
    let level = FieldSpec::new("level", 2, false, 0, 10_000, 0);

    let mut plug = spec(PLUG, "plug", vec![FieldSpec::flag("on")]);
    plug.settable = vec!["on".into()];
    plug.mains_powered = true;

    let mut bulb = spec(BULB, "bulb", vec![FieldSpec::flag("on"), FieldSpec::new("brightness", 1, false, 0, 100, 100)]);
    bulb.settable = vec!["on".into(), "brightness".into()];
    bulb.mains_powered = true;

    let mut door = spec(DOOR_CONTACT, "door_contact", vec![FieldSpec::flag("open")]);
    door.alarms = vec![rule("open", Condition::Equals(1))];
    door.armed_alarms = true;

    let mut pir = spec(PIR_MOTION, "pir_motion", vec![FieldSpec::flag("motion")]);
    pir.alarms = vec![rule("motion", Condition::Equals(1))];
    pir.armed_alarms = true;

    let mut gas = spec(GAS, "gas", vec![FieldSpec::flag("tripped"), level.clone()]);
    gas.alarms = vec![rule("tripped", Condition::Equals(1))];

    let mut smoke = spec(SMOKE, "smoke", vec![FieldSpec::flag("tripped"), level]);
    smoke.alarms = vec![rule("tripped", Condition::Equals(1))];

    let mut th = spec(
        TEMP_HUMIDITY,
        "temp_humidity",
        vec![
            // centi-degrees Celsius
            FieldSpec::new("temp", 2, true, -4000, 12_500, 2200),
            // tenths of a percent relative humidity
            FieldSpec::new("humidity", 2, false, 0, 1000, 500),
        ],
    );
    th.alarms = vec![
        rule("temp", Condition::Outside { lo: 1000, hi: 3500 }),
        rule("humidity", Condition::Outside { lo: 200, hi: 800 }),
    ];

    let mut pm25 = spec(PM25, "pm25", vec![FieldSpec::new("pm25", 2, false, 0, 1000, 35)]);
    pm25.alarms = vec![rule("pm25", Condition::AtLeast(150))];

    let mut vib = spec(VIBRATION_TOUCH, "vibration_touch", vec![FieldSpec::flag("touched")]);
    vib.alarms = vec![rule("touched", Condition::Equals(1))];
    vib.armed_alarms = true;

    let mut curtain = spec(CURTAIN, "curtain", vec![FieldSpec::new("position", 1, false, 0, 100, 0)]);
    curtain.settable = vec!["position".into()];
    curtain.mains_powered = true;

    let mut ir = spec(IR_BLASTER, "ir_blaster", vec![FieldSpec::new("last_code_len", 1, false, 0, 32, 0)]);
    ir.opaque_command = Some(OpaqueCommand {
        max_len: 32,
        state_field: "last_code_len".into(),
    });
    ir.mains_powered = true;

    let mut camera = spec(CAMERA, "camera", Vec::new());
    camera.mains_powered = true;
    camera.on_rf = false;

    vec![plug, bulb, door, pir, gas, smoke, th, pm25, vib, curtain, ir, camera]
}

/// Known device kinds, built-in and registered.
#[derive(Debug, Clone)]
pub struct KindRegistry {
    by_id: BTreeMap<u8, KindSpec>,
}

impl Default for KindRegistry {
    fn default() -> Self {
        let by_id = builtin_specs().into_iter().map(|s| (s.id, s)).collect();
        KindRegistry { by_id }
    }
}

impl KindRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a third-party kind. Ids 0x80..=0xFF only.
    pub fn register_device_kind(&mut self, spec: KindSpec) -> Result<(), DeviceError> {
        if spec.id < EXTENSION_KIND_MIN {
            return Err(DeviceError::ReservedKindId(spec.id));
        }
        if self.by_id.contains_key(&spec.id) {
            return Err(DeviceError::Conflict(spec.id));
        }
        if self.by_name(&spec.name).is_some() {
            return Err(DeviceError::NameConflict(spec.name));
        }
        spec.validate()?;
        self.by_id.insert(spec.id, spec);
        Ok(())
    }

    pub fn get(&self, id: u8) -> Option<&KindSpec> {
        self.by_id.get(&id)
    }

    pub fn by_name(&self, name: &str) -> Option<&KindSpec> {
        self.by_id.values().find(|s| s.name == name)
    }

    pub fn resolve(&self, name: &str) -> Result<&KindSpec, DeviceError> {
        self.by_name(name).ok_or_else(|| DeviceError::UnknownKind(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &KindSpec> {
        self.by_id.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SleepProfile {
    pub report_interval: Option<SimTime>,
    pub poll_interval: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Power {
    Mains,
    Battery(EnergyParams),
}

impl Power {
    pub fn is_battery(&self) -> bool {
        matches!(self, Power::Battery(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub device_id: u64,
    pub name: String,
    pub kind: u8,
    pub addr: Option<u8>,
    pub sleep_profile: SleepProfile,
    pub power: Power,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool_pump() -> KindSpec {
        KindSpec {
            id: 0x80,
            name: "pool_pump".into(),
            fields: vec![FieldSpec::new("on", 1, false, 0, 1, 0), FieldSpec::new("flow", 2, false, 0, 500, 0)],
            settable: vec!["on".into()],
            opaque_command: None,
            alarms: vec![AlarmRule {
                field: "flow".into(),
                condition: Condition::AtLeast(400),
            }],
            armed_alarms: false,
            mains_powered: true,
            on_rf: true,
        }
    }

    #[test]
    fn builtins_are_valid() {
        let reg = KindRegistry::new();
        assert_eq!(reg.iter().count(), 12);
        for s in reg.iter() {
            s.validate().unwrap();
        }
        assert!(reg.by_name("plug").unwrap().is_actuator());
        assert!(!reg.by_name("pm25").unwrap().is_actuator());
    }

    #[test]
    fn register_extension_and_conflicts() {
        let mut reg = KindRegistry::new();
        reg.register_device_kind(pool_pump()).unwrap();
        assert_eq!(reg.register_device_kind(pool_pump()), Err(DeviceError::Conflict(0x80)));
        let mut clash = pool_pump();
        clash.id = 0x81;
        assert!(matches!(reg.register_device_kind(clash), Err(DeviceError::NameConflict(_))));
        let mut low = pool_pump();
        low.id = 0x10;
        assert_eq!(reg.register_device_kind(low), Err(DeviceError::ReservedKindId(0x10)));
    }

    #[test]
    fn invalid_descriptor_is_rejected() {
        let mut reg = KindRegistry::new();
        let mut bad = pool_pump();
        bad.settable = vec!["speed".into()];
        assert!(matches!(reg.register_device_kind(bad), Err(DeviceError::InvalidSpec(_))));
        let mut wide = pool_pump();
        wide.fields[1].max = 70_000;
        assert!(matches!(reg.register_device_kind(wide), Err(DeviceError::InvalidSpec(_))));
    }

    #[test]
    fn signed_fields_round_trip() {
        let reg = KindRegistry::new();
        let th = reg.by_name("temp_humidity").unwrap();
        let bytes = th.encode_fields(&[-1234, 456]);
        assert_eq!(bytes, vec![0xFB, 0x2E, 0x01, 0xC8]);
        assert_eq!(th.decode_fields(&bytes).unwrap(), vec![-1234, 456]);
    }
}
