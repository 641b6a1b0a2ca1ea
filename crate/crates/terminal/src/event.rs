use std::collections::VecDeque;
use std::fmt;

use campus_tag::TagUid;
use serde::{Deserialize, Serialize};

pub const EVENT_QUEUE_CAPACITY: usize = 1024;
/// Size of one event on the wire: seq(4) ts(8) uid(8) kind(1) detail(2).
pub const EVENT_WIRE_LEN: usize = 23;
/// Set in the detail of the first event recorded after the queue dropped
/// its oldest entry.
pub const OVERFLOW_BIT: u16 = 0x8000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    AccessGranted = 1,
    AccessDenied = 2,
    DoorOpened = 3,
    DoorClosed = 4,
    DoorLeftOpen = 5,
    DoorForced = 6,
    CardWritten = 7,
    ConfigChanged = 8,
    ModeChanged = 9,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::AccessGranted,
        EventKind::AccessDenied,
        EventKind::DoorOpened,
        EventKind::DoorClosed,
        EventKind::DoorLeftOpen,
        EventKind::DoorForced,
        EventKind::CardWritten,
        EventKind::ConfigChanged,
        EventKind::ModeChanged,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code.checked_sub(1)? as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::AccessGranted => "ACCESS_GRANTED",
            EventKind::AccessDenied => "ACCESS_DENIED",
            EventKind::DoorOpened => "DOOR_OPENED",
            EventKind::DoorClosed => "DOOR_CLOSED",
            EventKind::DoorLeftOpen => "DOOR_LEFT_OPEN",
            EventKind::DoorForced => "DOOR_FORCED",
            EventKind::CardWritten => "CARD_WRITTEN",
            EventKind::ConfigChanged => "CONFIG_CHANGED",
            EventKind::ModeChanged => "MODE_CHANGED",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u32,
    pub ts: u64,
    /// `None` for door-only and configuration events (zero on the wire).
    pub uid: Option<TagUid>,
    pub kind: EventKind,
    pub detail: u16,
}

impl EventRecord {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.ts.to_le_bytes());
        out.extend_from_slice(&self.uid.map_or(0, TagUid::value).to_be_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&self.detail.to_le_bytes());
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != EVENT_WIRE_LEN {
            return None;
        }
        let raw_uid = u64::from_be_bytes(bytes[12..20].try_into().unwrap());
        let uid = match raw_uid {
            0 => None,
            v => Some(TagUid::new(v).ok()?),
        };
        Some(Self {
            seq: u32::from_le_bytes(bytes[0..4].try_into().unwrap()),
            ts: u64::from_le_bytes(bytes[4..12].try_into().unwrap()),
            uid,
            kind: EventKind::from_code(bytes[20])?,
            detail: u16::from_le_bytes([bytes[21], bytes[22]]),
        })
    }

    /// Decodes a DRAIN_EVENTS payload: a whole number of 23-byte records.
    pub fn decode_batch(payload: &[u8]) -> Option<Vec<Self>> {
        if !payload.len().is_multiple_of(EVENT_WIRE_LEN) {
            return None;
        }
        payload.chunks_exact(EVENT_WIRE_LEN).map(Self::decode).collect()
    }

    pub fn encode_batch(events: &[Self]) -> Vec<u8> {
        let mut out = Vec::with_capacity(events.len() * EVENT_WIRE_LEN);
        for e in events {
            e.encode_into(&mut out);
        }
        out
    }
}

/// Store-and-forward queue: events stay until acknowledged.
#[derive(Debug, Clone)]
pub struct EventQueue {
    events: VecDeque<EventRecord>,
    next_seq: u32,
    last_ts: u64,
    capacity: usize,
}

impl Default for EventQueue {
    fn default() -> Self {
        Self::with_capacity(EVENT_QUEUE_CAPACITY)
    }
}

impl EventQueue {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            events: VecDeque::new(),
            next_seq: 1,
            last_ts: 0,
            capacity,
        }
    }

    /// Appends an event. Timestamps are clamped so they never decrease.
    pub fn record(&mut self, ts: u64, uid: Option<TagUid>, kind: EventKind, mut detail: u16) -> EventRecord {
        if self.events.len() == self.capacity {
            self.events.pop_front();
            detail |= OVERFLOW_BIT;
        }
        self.last_ts = self.last_ts.max(ts);
        let event = EventRecord {
            seq: self.next_seq,
            ts: self.last_ts,
            uid,
            kind,
            detail,
        };
        self.next_seq += 1;
        self.events.push_back(event);
        event
    }

    /// Oldest `max` unacknowledged events. Does not remove anything.
    pub fn drain(&self, max: usize) -> Vec<EventRecord> {
        self.events.iter().take(max).copied().collect()
    }

    /// Continues numbering after `seq`, as after a power cycle with the
    /// counter kept in nonvolatile memory. Only valid on an empty queue.
    pub fn resume_after(&mut self, seq: u32) {
        debug_assert!(self.events.is_empty());
        self.next_seq = self.next_seq.max(seq + 1);
    }

    /// Drops every event with `seq <= up_to`.
    pub fn ack(&mut self, up_to: u32) -> usize {
        let before = self.events.len();
        while self.events.front().is_some_and(|e| e.seq <= up_to) {
            self.events.pop_front();
        }
        before - self.events.len()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sequence number of the most recently recorded event, 0 if none.
    pub fn last_seq(&self) -> u32 {
        self.next_seq - 1
    }
}
