use std::collections::BTreeMap;

use campus_tag::v1::{self, WeekSchedule};
use campus_tag::{
    encode_field, sign_card, verify_card, Encoding, FieldSpec, FieldValue, Layout, SystemKey, TagImage, TagUid,
};
use chrono::{DateTime, Datelike, NaiveDate, Timelike};

use crate::config::{Password, TerminalConfig};
use crate::decision::{AccessDecision, DenyReason, GrantPath, TerminalMode};
use crate::door::{Door, DoorSensor, DoorState};
use crate::error::TerminalError;
use crate::event::{EventKind, EventQueue, EventRecord};
use crate::protocol::{self, Command, ConfigReport, ErrorCode, Response, StatusReport};
use crate::revocation::RevocationList;

/// MODE_CHANGED detail for a one-shot strike release.
const BRIEF_UNLOCK_DETAIL: u16 = 3;

/// Fields of a layout the terminal authorizes on.
#[derive(Debug, Clone)]
struct AuthFields {
    flags: FieldSpec,
    expiry: FieldSpec,
    holder_type: FieldSpec,
    gate_list: FieldSpec,
    schedule: FieldSpec,
}

impl AuthFields {
    fn resolve(layout: &Layout) -> Option<Self> {
        let get = |name: &str, enc: Encoding| layout.field(name).filter(|f| f.encoding == enc).cloned();
        let schedule = get(v1::SCHEDULE, Encoding::QuarterHourPair).filter(|f| f.length == 14)?;
        Some(Self {
            flags: get(v1::FLAGS, Encoding::Bitset)?,
            expiry: get(v1::EXPIRY_DATE, Encoding::DateD2000)?,
            holder_type: get(v1::HOLDER_TYPE, Encoding::UintLe)?,
            gate_list: get(v1::GATE_LIST, Encoding::Bitset)?,
            schedule,
        })
    }
}

/// Result of presenting a card to the reader.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagRead {
    pub decision: AccessDecision,
    /// The card as it leaves the field, including any write-backs.
    pub image: TagImage,
    pub events: Vec<EventRecord>,
}

/// Splits terminal-local seconds into (date, weekday with Monday = 0, quarter-hour).
fn calendar(local: u64) -> (NaiveDate, usize, u8) {
    let dt = DateTime::from_timestamp(local as i64, 0).expect("timestamp in range");
    let quarter = (dt.num_seconds_from_midnight() / 900) as u8;
    (dt.date_naive(), dt.weekday().num_days_from_monday() as usize, quarter)
}

#[derive(Debug, Clone)]
pub struct Terminal {
    config: TerminalConfig,
    key: SystemKey,
    layouts: BTreeMap<u16, (Layout, AuthFields)>,
    mode: TerminalMode,
    door: Door,
    revocations: RevocationList,
    events: EventQueue,
    /// Queued field writes per card: field id -> raw value.
    pending: BTreeMap<TagUid, BTreeMap<u8, Vec<u8>>>,
    last_tick: Option<u64>,
    trace: Option<Vec<EventRecord>>,
}

impl Terminal {
    /// Creates a terminal that understands the default card layout.
    pub fn new(config: TerminalConfig, key: SystemKey) -> Result<Self, TerminalError> {
        config.validate()?;
        let mut t = Self {
            config,
            key,
            layouts: BTreeMap::new(),
            mode: TerminalMode::Normal,
            door: Door::default(),
            revocations: RevocationList::default(),
            events: EventQueue::default(),
            pending: BTreeMap::new(),
            last_tick: None,
            trace: None,
        };
        t.add_layout(v1::layout().clone())?;
        Ok(t)
    }

    pub fn add_layout(&mut self, layout: Layout) -> Result<(), TerminalError> {
        let auth = AuthFields::resolve(&layout).ok_or(TerminalError::UnsupportedLayout(layout.id()))?;
        self.layouts.insert(layout.id(), (layout, auth));
        Ok(())
    }

    /// Keeps a copy of every recorded event for [`Terminal::take_trace`].
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<EventRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn config(&self) -> &TerminalConfig {
        &self.config
    }

    pub fn address(&self) -> u8 {
        self.config.address
    }

    pub fn mode(&self) -> TerminalMode {
        self.mode
    }

    pub fn door_state(&self) -> DoorState {
        self.door.state
    }

    pub fn revocations(&self) -> &RevocationList {
        &self.revocations
    }

    pub fn queued_events(&self) -> usize {
        self.events.len()
    }

    pub fn last_seq(&self) -> u32 {
        self.events.last_seq()
    }

    pub fn pending_writes(&self, uid: TagUid) -> usize {
        self.pending.get(&uid).map_or(0, BTreeMap::len)
    }

    /// Restarts event numbering after `seq` (see [`EventQueue::resume_after`]).
    pub fn resume_sequence(&mut self, seq: u32) {
        self.events.resume_after(seq);
    }

    pub fn local_time(&self, now: u64) -> u64 {
        (now as i64 + self.config.clock_offset_s).max(0) as u64
    }

    pub fn status(&self, now: u64) -> StatusReport {
        StatusReport {
            door: self.door.state,
            mode: self.mode,
            sensor_open: self.door.sensor == DoorSensor::Open,
            queued_events: self.events.len().min(u16::MAX as usize) as u16,
            last_seq: self.events.last_seq(),
            local_time: self.local_time(now),
        }
    }

    fn record(&mut self, now: u64, uid: Option<TagUid>, kind: EventKind, detail: u16) -> EventRecord {
        let e = self.events.record(self.local_time(now), uid, kind, detail);
        if let Some(trace) = &mut self.trace {
            trace.push(e);
        }
        e
    }

    fn layout_of(&self, image: &TagImage) -> Option<&(Layout, AuthFields)> {
        let id = u16::from_le_bytes([image.bytes()[0], image.bytes()[1]]);
        self.layouts.get(&id)
    }

    /// The access verdict for `image` at bus time `now`. Pure: no state changes.
    pub fn evaluate(&self, image: &TagImage, now: u64) -> AccessDecision {
        use AccessDecision::{Deny, Grant};
        if !verify_card(&self.key, image) {
            return Deny(DenyReason::Unregistered);
        }
        let Some((_, auth)) = self.layout_of(image) else {
            return Deny(DenyReason::Unregistered);
        };
        let bytes = image.bytes();
        if self.revocations.contains(image.uid()) {
            return Deny(DenyReason::Revoked);
        }
        if bytes[auth.flags.offset] & v1::FLAG_LOCKED != 0 {
            return Deny(DenyReason::Locked);
        }
        let local = self.local_time(now);
        let (today, weekday, quarter) = calendar(local);
        let expiry_days = u16::from_le_bytes([bytes[auth.expiry.offset], bytes[auth.expiry.offset + 1]]);
        let expiry = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap() + chrono::Duration::days(expiry_days.into());
        if expiry < today {
            return Deny(DenyReason::Expired);
        }
        match self.mode {
            TerminalMode::UnlockedUntil(t) if t >= local => return Grant(GrantPath::Unlocked),
            TerminalMode::Category(set) if set.contains_code(bytes[auth.holder_type.offset]) => {
                return Grant(GrantPath::Category)
            }
            _ => {}
        }
        let gate = self.config.gate_id as usize;
        let gate_bytes = &bytes[auth.gate_list.range()];
        if gate / 8 >= gate_bytes.len() || gate_bytes[gate / 8] & (1 << (gate % 8)) == 0 {
            return Deny(DenyReason::GateNotAllowed);
        }
        let s = auth.schedule.offset + 2 * weekday;
        let (start, end) = (bytes[s], bytes[s + 1]);
        if !(start <= quarter && quarter < end) {
            return Deny(DenyReason::OutOfSchedule);
        }
        Grant(GrantPath::Rules)
    }

    /// Processes a card read: decides, drives the strike, records the
    /// decision event and applies any write-backs destined for this card.
    pub fn on_tag_read(&mut self, image: &TagImage, now: u64) -> TagRead {
        let decision = self.evaluate(image, now);
        let uid = image.uid();
        let mut events = Vec::new();
        let mut card = image.clone();
        match decision {
            AccessDecision::Grant(path) => {
                let until = self.local_time(now) + u64::from(self.config.strike_release_s);
                self.door.release(until);
                events.push(self.record(now, Some(uid), EventKind::AccessGranted, path as u16));
            }
            AccessDecision::Deny(reason) => {
                events.push(self.record(now, Some(uid), EventKind::AccessDenied, reason.code()));
            }
        }
        if decision == AccessDecision::Deny(DenyReason::Unregistered) {
            return TagRead {
                decision,
                image: card,
                events,
            };
        }
        let (layout, auth) = self.layout_of(&card).cloned().expect("layout checked by evaluate");
        let mut written = Vec::new();
        if decision == AccessDecision::Deny(DenyReason::Revoked) {
            let flags = card.bytes()[auth.flags.offset] | v1::FLAG_LOCKED;
            if card.write(auth.flags.offset, &[flags]).is_ok() {
                written.push(layout.field_id(v1::FLAGS).unwrap());
            }
            self.revocations.remove(uid);
        }
        for (field_id, value) in self.pending.remove(&uid).unwrap_or_default() {
            let Some(spec) = layout.field_by_id(field_id) else {
                continue;
            };
            if spec.length == value.len() && card.write(spec.offset, &value).is_ok() {
                written.push(field_id);
            }
        }
        if !written.is_empty() {
            card = sign_card(&self.key, &card);
            for field_id in written {
                events.push(self.record(now, Some(uid), EventKind::CardWritten, field_id.into()));
            }
        }
        TagRead {
            decision,
            image: card,
            events,
        }
    }

    /// Advances the door model to `now` with the current contact reading.
    pub fn tick(&mut self, now: u64, sensor: DoorSensor) -> Result<Vec<EventRecord>, TerminalError> {
        if let Some(previous) = self.last_tick {
            if now < previous {
                return Err(TerminalError::ClockWentBackwards { previous, now });
            }
        }
        self.last_tick = Some(now);
        let local = self.local_time(now);
        let kinds = self.door.step(local, sensor, self.config.door_open_timeout_s);
        Ok(kinds.into_iter().map(|k| self.record(now, None, k, 0)).collect())
    }

    /// Next bus time at which [`Terminal::tick`] would change door state
    /// without a sensor edge.
    pub fn next_deadline(&self) -> Option<u64> {
        self.door
            .next_deadline(self.config.door_open_timeout_s)
            .map(|local| (local as i64 - self.config.clock_offset_s).max(0) as u64)
    }

    pub fn sensor(&self) -> DoorSensor {
        self.door.sensor
    }

    /// Executes one bus command. The frame has already been validated and
    /// addressed to this terminal.
    pub fn handle_command(&mut self, code: u8, payload: &[u8], now: u64) -> Response {
        let (cmd, password) = match Command::decode(code, payload) {
            Ok(parsed) => parsed,
            Err(e) => return Response::Err(e),
        };
        if password.is_some_and(|p| p != self.config.password) {
            return Response::Err(ErrorCode::Auth);
        }
        match cmd {
            Command::Ping => Response::Ack,
            Command::GetStatus => Response::Data(self.status(now).encode()),
            Command::DrainEvents { max } => Response::Data(EventRecord::encode_batch(&self.events.drain(max as usize))),
            Command::AckEvents { seq } => {
                self.events.ack(seq);
                Response::Ack
            }
            Command::GetConfig => Response::Data(
                ConfigReport {
                    address: self.config.address,
                    gate_id: self.config.gate_id,
                    comm_rate: self.config.comm_rate,
                    strike_release_s: self.config.strike_release_s,
                    door_open_timeout_s: self.config.door_open_timeout_s,
                    clock_offset_s: self.config.clock_offset_s,
                }
                .encode(),
            ),
            Command::Discover => Response::Data(vec![self.config.address, self.config.gate_id]),
            Command::SetConfig(update) => {
                let next = TerminalConfig {
                    gate_id: update.gate_id,
                    comm_rate: update.comm_rate,
                    strike_release_s: update.strike_release_s,
                    door_open_timeout_s: update.door_open_timeout_s,
                    password: update.new_password,
                    ..self.config.clone()
                };
                if next.validate().is_err() {
                    return Response::Err(ErrorCode::BadArgument);
                }
                self.config = next;
                self.record(now, None, EventKind::ConfigChanged, protocol::SET_CONFIG.into());
                Response::Ack
            }
            Command::SetTime { now: wanted } => {
                self.config.clock_offset_s = wanted as i64 - now as i64;
                self.record(now, None, EventKind::ConfigChanged, protocol::SET_TIME.into());
                Response::Ack
            }
            Command::UnlockBrief => {
                let until = self.local_time(now) + u64::from(self.config.strike_release_s);
                self.door.release(until);
                self.record(now, None, EventKind::ModeChanged, BRIEF_UNLOCK_DETAIL);
                Response::Ack
            }
            Command::UnlockUntil { until } => {
                self.set_mode(TerminalMode::UnlockedUntil(until), now);
                Response::Ack
            }
            Command::SetMode(mode) => {
                self.set_mode(mode, now);
                Response::Ack
            }
            Command::PushRevocation(uids) => {
                let flag_ids: Vec<u8> = (0..=u8::MAX).filter(|&id| self.is_flags_field(id)).collect();
                for uid in uids {
                    self.revocations.push(uid);
                    if let Some(writes) = self.pending.get_mut(&uid) {
                        writes.retain(|id, _| !flag_ids.contains(id));
                    }
                }
                self.record(now, None, EventKind::ConfigChanged, protocol::PUSH_REVOCATION.into());
                Response::Ack
            }
            Command::QueueCardWrite { uid, field_id, value } => {
                let fits = self
                    .layouts
                    .values()
                    .any(|(l, _)| l.field_by_id(field_id).is_some_and(|f| f.length == value.len()));
                if !fits {
                    return Response::Err(ErrorCode::BadArgument);
                }
                // a newer unlock intent supersedes a pending revocation
                if self.is_flags_field(field_id) {
                    self.revocations.remove(uid);
                }
                self.pending.entry(uid).or_default().insert(field_id, value);
                self.record(
                    now,
                    Some(uid),
                    EventKind::ConfigChanged,
                    protocol::QUEUE_CARD_WRITE.into(),
                );
                Response::Ack
            }
        }
    }

    fn is_flags_field(&self, field_id: u8) -> bool {
        self.layouts
            .values()
            .any(|(l, _)| l.field_by_id(field_id).is_some_and(|f| f.name == v1::FLAGS))
    }

    fn set_mode(&mut self, mode: TerminalMode, now: u64) {
        self.mode = mode;
        self.record(now, None, EventKind::ModeChanged, mode.code().into());
    }

    /// Rewrites a card's gate list and schedule at the terminal, on operator
    /// authority.
    pub fn local_assign_rights(
        &mut self,
        image: &TagImage,
        gates: u64,
        schedule: &WeekSchedule,
        operator_password: &Password,
        now: u64,
    ) -> Result<TagImage, TerminalError> {
        if *operator_password != self.config.password {
            return Err(TerminalError::Auth);
        }
        if !verify_card(&self.key, image) {
            return Err(TerminalError::UnregisteredCard);
        }
        let (layout, auth) = self.layout_of(image).cloned().ok_or(TerminalError::UnregisteredCard)?;
        let len = auth.gate_list.length;
        if len < 8 && gates >> (8 * len) != 0 {
            return Err(campus_tag::Error::ValueOverflow(v1::GATE_LIST.into()).into());
        }
        let mut gate_bytes = gates.to_le_bytes().to_vec();
        gate_bytes.resize(len, 0);
        let card = encode_field(&layout, image, v1::GATE_LIST, &FieldValue::Bits(gate_bytes))?;
        let card = encode_field(&layout, &card, v1::SCHEDULE, &v1::schedule_value(schedule))?;
        let card = sign_card(&self.key, &card);
        for name in [v1::GATE_LIST, v1::SCHEDULE] {
            let id = layout.field_id(name).unwrap();
            self.record(now, Some(image.uid()), EventKind::CardWritten, id.into());
        }
        Ok(card)
    }
}
