use serde::{Deserialize, Serialize};

use crate::event::EventKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoorSensor {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoorState {
    Locked,
    Released { until: u64 },
    Open { since: u64 },
    OpenAlarmed { since: u64 },
}

impl DoorState {
    pub fn code(self) -> u8 {
        match self {
            DoorState::Locked => 0,
            DoorState::Released { .. } => 1,
            DoorState::Open { .. } => 2,
            DoorState::OpenAlarmed { .. } => 3,
        }
    }

    /// The deadline or start time carried by the state, 0 for `Locked`.
    pub fn time(self) -> u64 {
        match self {
            DoorState::Locked => 0,
            DoorState::Released { until } => until,
            DoorState::Open { since } | DoorState::OpenAlarmed { since } => since,
        }
    }

    pub fn from_parts(code: u8, time: u64) -> Option<Self> {
        Some(match code {
            0 => DoorState::Locked,
            1 => DoorState::Released { until: time },
            2 => DoorState::Open { since: time },
            3 => DoorState::OpenAlarmed { since: time },
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DoorState::Locked => "LOCKED",
            DoorState::Released { .. } => "RELEASED",
            DoorState::Open { .. } => "OPEN",
            DoorState::OpenAlarmed { .. } => "ALARMED",
        }
    }
}

/// Strike and contact of one door. Times are terminal-local seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Door {
    pub state: DoorState,
    pub sensor: DoorSensor,
}

impl Default for Door {
    fn default() -> Self {
        Self {
            state: DoorState::Locked,
            sensor: DoorSensor::Closed,
        }
    }
}

impl Door {
    /// Releases the strike until `until`. An already open door is unaffected.
    pub fn release(&mut self, until: u64) {
        self.state = match self.state {
            DoorState::Locked => DoorState::Released { until },
            DoorState::Released { until: prev } => DoorState::Released { until: prev.max(until) },
            open => open,
        };
    }

    pub fn next_deadline(&self, open_timeout: u32) -> Option<u64> {
        match self.state {
            DoorState::Released { until } => Some(until),
            DoorState::Open { since } => Some(since + u64::from(open_timeout)),
            _ => None,
        }
    }

    pub fn step(&mut self, now: u64, sensor: DoorSensor, open_timeout: u32) -> Vec<EventKind> {
        let mut out = Vec::new();
        if let DoorState::Released { until } = self.state {
            if now >= until && self.sensor == DoorSensor::Closed {
                self.state = DoorState::Locked;
            }
        }
        match (self.sensor, sensor) {
            (DoorSensor::Closed, DoorSensor::Open) => {
                out.push(EventKind::DoorOpened);
                if self.state == DoorState::Locked {
                    out.push(EventKind::DoorForced);
                }
                self.state = DoorState::Open { since: now };
            }
            (DoorSensor::Open, DoorSensor::Closed) => {
                out.push(EventKind::DoorClosed);
                self.state = DoorState::Locked;
            }
            _ => {}
        }
        self.sensor = sensor;
        if let DoorState::Open { since } = self.state {
            if now >= since + u64::from(open_timeout) {
                self.state = DoorState::OpenAlarmed { since };
                out.push(EventKind::DoorLeftOpen);
            }
        }
        out
    }
}
