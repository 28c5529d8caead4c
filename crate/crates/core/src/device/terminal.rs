use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tlv::{DeviceMessage, ReportCause, TlvType};
use super::{DeviceDescriptor, DeviceError, KindSpec};
use crate::mac::DedupWindow;

/// One environment reading: field name → raw value in the kind's units.
pub type EnvSample = BTreeMap<String, i32>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorOutput {
    pub alarms: Vec<DeviceMessage>,
    /// Fields that were clamped or unknown.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub changed: bool,
    pub duplicate: bool,
    /// Acknowledging REPORT to send upstream. `None` for duplicates.
    pub ack: Option<DeviceMessage>,
}

/// Application state of one device.
#[derive(Debug, Clone)]
pub struct Terminal {
    pub descriptor: DeviceDescriptor,
    spec: KindSpec,
    values: Vec<i32>,
    armed: bool,
    latched: Vec<bool>,
    applied: DedupWindow,
    ir_log: Vec<Vec<u8>>,
    transitions: u64,
}

impl Terminal {
    pub fn new(descriptor: DeviceDescriptor, spec: KindSpec) -> Self {
        let values = spec.defaults();
        let latched = vec![false; spec.alarms.len()];
        Terminal {
            descriptor,
            values,
            latched,
            spec,
            armed: false,
            applied: DedupWindow::new(8),
            ir_log: Vec::new(),
            transitions: 0,
        }
    }

    pub fn spec(&self) -> &KindSpec {
        &self.spec
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn value(&self, field: &str) -> Option<i32> {
        self.spec.field_index(field).map(|i| self.values[i])
    }

    pub fn state_map(&self) -> BTreeMap<String, i32> {
        self.spec.fields.iter().map(|f| f.name.clone()).zip(self.values.iter().copied()).collect()
    }

    pub fn armed(&self) -> bool {
        self.armed
    }

    pub fn set_armed(&mut self, armed: bool) {
        self.armed = armed;
    }

    /// Number of actuator state changes applied so far.
    pub fn transitions(&self) -> u64 {
        self.transitions
    }

    pub fn ir_log(&self) -> &[Vec<u8>] {
        &self.ir_log
    }

    pub fn report(&self, cause: ReportCause, ref_seq: u8) -> DeviceMessage {
        let mut value = vec![self.spec.id, cause as u8, ref_seq];
        value.extend(self.spec.encode_fields(&self.values));
        DeviceMessage::new(TlvType::Report, value)
    }

    pub fn periodic_report(&self) -> DeviceMessage {
        self.report(ReportCause::Periodic, 0)
    }

    fn alarm(&self, rule: usize) -> DeviceMessage {
        let mut value = vec![self.spec.id, rule as u8];
        value.extend(self.spec.encode_fields(&self.values));
        DeviceMessage::new(TlvType::Alarm, value)
    }

    /// Applies an environment sample and evaluates alarm rules. A rule
    /// raises an ALARM when it becomes true; it re-arms once it is false
    /// again. Kinds with `armed_alarms` stay silent unless armed.
    pub fn sensor_step(&mut self, sample: &EnvSample) -> SensorOutput {
        let mut out = SensorOutput::default();
        for (name, raw) in sample {
            let Some(idx) = self.spec.field_index(name) else {
                out.warnings.push(format!("unknown field `{name}` ignored"));
                continue;
            };
            let f = &self.spec.fields[idx];
            let v = f.clamp(*raw);
            if v != *raw {
                out.warnings.push(format!("{name}={raw} clamped to {v}"));
            }
            self.values[idx] = v;
        }
        for (i, rule) in self.spec.alarms.iter().enumerate() {
            let idx = self.spec.field_index(&rule.field).expect("validated");
            let holds = rule.condition.holds(self.values[idx]);
            let rising = holds && !self.latched[i];
            self.latched[i] = holds;
            if rising && (!self.spec.armed_alarms || self.armed) {
                out.alarms.push(self.alarm(i));
            }
        }
        out
    }

    /// Executes a downlink command received in a frame from `src` with MAC
    /// sequence `seq`. A repeated `(src, seq)` is acknowledged as duplicate
    /// and never re-applied.
    pub fn apply_command(&mut self, src: u8, seq: u8, msg: &DeviceMessage) -> Result<CommandOutcome, DeviceError> {
        match msg.tlv_type {
            TlvType::QueryState => Ok(CommandOutcome {
                changed: false,
                duplicate: false,
                ack: Some(self.report(ReportCause::QueryResponse, seq)),
            }),
            TlvType::SetActuator => {
                if !self.spec.is_actuator() {
                    return Err(DeviceError::Unsupported(self.spec.id));
                }
                let changes = match &self.spec.opaque_command {
                    Some(op) => {
                        if msg.value.is_empty() || msg.value.len() > op.max_len as usize {
                            return Err(DeviceError::Decode(format!("code length {} outside 1..={}", msg.value.len(), op.max_len)));
                        }
                        vec![(self.spec.field_index(&op.state_field).expect("validated"), msg.value.len() as i32)]
                    }
                    None => self.spec.decode_set(&msg.value)?,
                };
                if !self.applied.accept(0, src, seq) {
                    return Ok(CommandOutcome {
                        changed: false,
                        duplicate: true,
                        ack: None,
                    });
                }
                if self.spec.opaque_command.is_some() {
                    self.ir_log.push(msg.value.clone());
                }
                let mut changed = false;
                for (idx, v) in changes {
                    if self.values[idx] != v {
                        self.values[idx] = v;
                        changed = true;
                    }
                }
                if changed || self.spec.opaque_command.is_some() {
                    self.transitions += 1;
                }
                Ok(CommandOutcome {
                    changed,
                    duplicate: false,
                    ack: Some(self.report(ReportCause::CommandAck, seq)),
                })
            }
            TlvType::Report | TlvType::Alarm => Err(DeviceError::Unsupported(self.spec.id)),
        }
    }
}

/// Describes an actuator state change for traces and the panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateChange {
    pub addr: u8,
    pub state: BTreeMap<String, i32>,
}
