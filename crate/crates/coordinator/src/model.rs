use std::collections::{BTreeMap, BTreeSet};

use campus_bus::TerminalId;
use campus_tag::v1::{self, HolderType, WeekSchedule};
use campus_tag::{decode_field, encode_field, FieldValue, Layout, TagImage, TagUid};
use campus_terminal::{EventKind, EventRecord, Password, TerminalMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Viewer,
    Operator,
    Admin,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Viewer => "VIEWER",
            Role::Operator => "OPERATOR",
            Role::Admin => "ADMIN",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "VIEWER" => Some(Role::Viewer),
            "OPERATOR" => Some(Role::Operator),
            "ADMIN" => Some(Role::Admin),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub username: String,
    pub role: Role,
    /// PHC string (argon2id, per-user salt).
    pub password_hash: String,
    pub created_at: u64,
}

/// Who produced a card write or a sighting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Source {
    Coordinator,
    Terminal(TerminalId),
    Mobile(String),
}

/// Latest known value of one card field, as hex of the field bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldStamp {
    pub ts: u64,
    pub value: String,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sighting {
    pub ts: u64,
    pub gate: Option<u8>,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardRegistryEntry {
    pub uid: TagUid,
    pub personal_id: u32,
    pub holder_type: HolderType,
    pub layout_id: u16,
    pub issued_at: u64,
    pub issue_number: u8,
    /// Intended rights. The card itself is authoritative at the gate.
    pub gates: u64,
    pub schedule: WeekSchedule,
    pub locked: bool,
    pub last_seen: Option<Sighting>,
    /// Winning write per field name.
    pub fields: BTreeMap<String, FieldStamp>,
    /// Value most recently queued to terminals per field name.
    pub queued: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DoorStatus {
    Locked,
    Released,
    Open,
    Alarmed,
}

/// Door state as reconstructed from ingested events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoorView {
    pub status: DoorStatus,
    pub since: u64,
    pub forced: bool,
    pub last_event: Option<StoredEvent>,
}

impl Default for DoorView {
    fn default() -> Self {
        Self {
            status: DoorStatus::Locked,
            since: 0,
            forced: false,
            last_event: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalInfo {
    pub id: TerminalId,
    pub gate_id: u8,
    pub password: Option<Password>,
    pub mode: TerminalMode,
    /// Highest seq ingested from this terminal.
    pub high_water: u32,
    pub last_polled: Option<u64>,
    pub door: DoorView,
}

/// A terminal event as persisted by the coordinator. Identity is (terminal, seq).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub terminal: TerminalId,
    pub gate: u8,
    pub seq: u32,
    pub ts: u64,
    pub uid: Option<TagUid>,
    pub kind: EventKind,
    pub detail: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmRule {
    pub id: u64,
    pub kinds: BTreeSet<EventKind>,
    /// `None` matches every gate.
    pub gates: Option<BTreeSet<u8>>,
    pub enabled: bool,
}

impl AlarmRule {
    pub fn matches(&self, e: &StoredEvent) -> bool {
        self.enabled && self.kinds.contains(&e.kind) && self.gates.as_ref().is_none_or(|g| g.contains(&e.gate))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alarm {
    pub id: u64,
    pub rule_id: u64,
    pub event: StoredEvent,
    pub raised_at: u64,
    pub acknowledged_by: Option<String>,
    pub acknowledged_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub uid: TagUid,
    pub field: String,
    pub kept: FieldStamp,
    pub discarded: FieldStamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MobileOp {
    Read,
    Write,
}

/// One line of a mobile reader session log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MobileRecord {
    pub session: String,
    pub seq: u64,
    pub ts: u64,
    pub uid: TagUid,
    pub op: MobileOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    /// Hex of the raw field bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

/// Terminal command waiting for a successful delivery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PendingCommand {
    Revoke(TagUid),
    CardWrite { uid: TagUid, field_id: u8, value: Vec<u8> },
}

/// Everything the coordinator knows. Mutated only through [`Mutation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub system_key: [u8; 32],
    pub next_serial: u64,
    pub users: BTreeMap<String, UserAccount>,
    /// Custom layouts by id, in text form. Layout 1 is built in.
    pub layouts: BTreeMap<u16, String>,
    pub cards: BTreeMap<TagUid, CardRegistryEntry>,
    pub terminals: BTreeMap<TerminalId, TerminalInfo>,
    pub events: Vec<StoredEvent>,
    pub rules: Vec<AlarmRule>,
    pub alarms: Vec<Alarm>,
    pub mobile_seen: BTreeSet<(String, u64)>,
    pub conflicts: Vec<ConflictRecord>,
    pub outbox: BTreeMap<TerminalId, Vec<PendingCommand>>,
}

/// Journal entry. Applying the same sequence to the same state is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    Genesis {
        system_key: [u8; 32],
        admin: UserAccount,
        rules: Vec<AlarmRule>,
    },
    UserAdded {
        account: UserAccount,
    },
    UserRemoved {
        username: String,
    },
    UserRoleSet {
        username: String,
        role: Role,
    },
    UserPasswordSet {
        username: String,
        password_hash: String,
    },
    LayoutAdded {
        id: u16,
        text: String,
    },
    CardRegistered {
        entry: CardRegistryEntry,
        next_serial: u64,
    },
    RightsAssigned {
        uid: TagUid,
        gates: u64,
        schedule: WeekSchedule,
        gate_hex: String,
        schedule_hex: String,
        immediate: bool,
    },
    LockIntent {
        uid: TagUid,
        locked: bool,
        flags_hex: String,
    },
    TerminalInstalled {
        id: TerminalId,
        gate_id: u8,
        password: Option<Password>,
    },
    TerminalSeen {
        id: TerminalId,
        gate_id: u8,
    },
    ModeSet {
        id: TerminalId,
        mode: TerminalMode,
    },
    OutboxPush {
        id: TerminalId,
        commands: Vec<PendingCommand>,
    },
    OutboxDelivered {
        id: TerminalId,
        count: usize,
    },
    EventsIngested {
        id: TerminalId,
        events: Vec<EventRecord>,
    },
    RuleAdded {
        rule: AlarmRule,
    },
    RuleEnabled {
        id: u64,
        enabled: bool,
    },
    AlarmAcked {
        id: u64,
        by: String,
    },
    MobileMerged {
        records: Vec<MobileRecord>,
    },
}

/// Journal line: when, by whom, what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub at: u64,
    pub actor: Option<String>,
    pub mutation: Mutation,
}

impl State {
    pub(crate) fn empty() -> Self {
        Self {
            system_key: [0; 32],
            next_serial: 0,
            users: BTreeMap::new(),
            layouts: BTreeMap::new(),
            cards: BTreeMap::new(),
            terminals: BTreeMap::new(),
            events: Vec::new(),
            rules: Vec::new(),
            alarms: Vec::new(),
            mobile_seen: BTreeSet::new(),
            conflicts: Vec::new(),
            outbox: BTreeMap::new(),
        }
    }

    /// Layout by id; `None` if unknown or unparseable.
    pub fn layout(&self, id: u16) -> Option<Layout> {
        if id == v1::LAYOUT_ID {
            return Some(v1::layout().clone());
        }
        Layout::parse(self.layouts.get(&id)?).ok()
    }

    pub(crate) fn apply(&mut self, at: u64, m: &Mutation) {
        match m {
            Mutation::Genesis {
                system_key,
                admin,
                rules,
            } => {
                self.system_key = *system_key;
                self.users.insert(admin.username.clone(), admin.clone());
                self.rules = rules.clone();
            }
            Mutation::UserAdded { account } => {
                self.users.insert(account.username.clone(), account.clone());
            }
            Mutation::UserRemoved { username } => {
                self.users.remove(username);
            }
            Mutation::UserRoleSet { username, role } => {
                if let Some(u) = self.users.get_mut(username) {
                    u.role = *role;
                }
            }
            Mutation::UserPasswordSet {
                username,
                password_hash,
            } => {
                if let Some(u) = self.users.get_mut(username) {
                    u.password_hash = password_hash.clone();
                }
            }
            Mutation::LayoutAdded { id, text } => {
                self.layouts.insert(*id, text.clone());
            }
            Mutation::CardRegistered { entry, next_serial } => {
                self.cards.insert(entry.uid, entry.clone());
                self.next_serial = *next_serial;
            }
            Mutation::RightsAssigned {
                uid,
                gates,
                schedule,
                gate_hex,
                schedule_hex,
                immediate,
            } => {
                let Some(card) = self.cards.get_mut(uid) else { return };
                card.gates = *gates;
                card.schedule = *schedule;
                if !immediate {
                    card.queued.insert(v1::GATE_LIST.into(), gate_hex.clone());
                    card.queued.insert(v1::SCHEDULE.into(), schedule_hex.clone());
                }
                for (field, value) in [(v1::GATE_LIST, gate_hex), (v1::SCHEDULE, schedule_hex)] {
                    let stamp = FieldStamp {
                        ts: at,
                        value: value.clone(),
                        source: Source::Coordinator,
                    };
                    self.stamp(*uid, field, stamp);
                }
            }
            Mutation::LockIntent { uid, locked, flags_hex } => {
                let Some(layout_id) = self.cards.get(uid).map(|c| c.layout_id) else {
                    return;
                };
                let flags_id = self.layout(layout_id).and_then(|l| l.field_id(v1::FLAGS));
                let card = self.cards.get_mut(uid).expect("card present");
                card.locked = *locked;
                card.queued.insert(v1::FLAGS.into(), flags_hex.clone());
                for queue in self.outbox.values_mut() {
                    queue.retain(|c| !superseded(c, *uid, *locked, flags_id));
                }
                let stamp = FieldStamp {
                    ts: at,
                    value: flags_hex.clone(),
                    source: Source::Coordinator,
                };
                self.stamp(*uid, v1::FLAGS, stamp);
            }
            Mutation::TerminalInstalled { id, gate_id, password } => {
                let t = self.terminal_entry(*id, *gate_id);
                t.gate_id = *gate_id;
                t.password = *password;
            }
            Mutation::TerminalSeen { id, gate_id } => {
                self.terminal_entry(*id, *gate_id).gate_id = *gate_id;
            }
            Mutation::ModeSet { id, mode } => {
                if let Some(t) = self.terminals.get_mut(id) {
                    t.mode = *mode;
                }
            }
            Mutation::OutboxPush { id, commands } => {
                self.outbox.entry(*id).or_default().extend(commands.iter().cloned());
            }
            Mutation::OutboxDelivered { id, count } => {
                if let Some(q) = self.outbox.get_mut(id) {
                    q.drain(..(*count).min(q.len()));
                    if q.is_empty() {
                        self.outbox.remove(id);
                    }
                }
            }
            Mutation::EventsIngested { id, events } => self.ingest(at, *id, events),
            Mutation::RuleAdded { rule } => self.rules.push(rule.clone()),
            Mutation::RuleEnabled { id, enabled } => {
                if let Some(r) = self.rules.iter_mut().find(|r| r.id == *id) {
                    r.enabled = *enabled;
                }
            }
            Mutation::AlarmAcked { id, by } => {
                if let Some(a) = self.alarms.iter_mut().find(|a| a.id == *id) {
                    if a.acknowledged_by.is_none() {
                        a.acknowledged_by = Some(by.clone());
                        a.acknowledged_at = Some(at);
                    }
                }
            }
            Mutation::MobileMerged { records } => {
                for r in records {
                    self.merge_mobile(r);
                }
            }
        }
    }

    fn terminal_entry(&mut self, id: TerminalId, gate_id: u8) -> &mut TerminalInfo {
        self.terminals.entry(id).or_insert_with(|| TerminalInfo {
            id,
            gate_id,
            password: None,
            mode: TerminalMode::Normal,
            high_water: 0,
            last_polled: None,
            door: DoorView::default(),
        })
    }

    fn ingest(&mut self, at: u64, id: TerminalId, events: &[EventRecord]) {
        let Some(info) = self.terminals.get_mut(&id) else {
            return;
        };
        info.last_polled = Some(at);
        let gate = info.gate_id;
        for e in events {
            let info = self.terminals.get_mut(&id).expect("terminal present");
            if e.seq <= info.high_water {
                continue;
            }
            info.high_water = e.seq;
            let stored = StoredEvent {
                terminal: id,
                gate,
                seq: e.seq,
                ts: e.ts,
                uid: e.uid,
                kind: e.kind,
                detail: e.detail,
            };
            update_door(&mut info.door, &stored);
            self.events.push(stored);
            if let Some(uid) = e.uid {
                self.card_event(&stored, uid);
            }
            let raised: Vec<u64> = self.rules.iter().filter(|r| r.matches(&stored)).map(|r| r.id).collect();
            for rule_id in raised {
                let alarm_id = self.alarms.len() as u64 + 1;
                self.alarms.push(Alarm {
                    id: alarm_id,
                    rule_id,
                    event: stored,
                    raised_at: at,
                    acknowledged_by: None,
                    acknowledged_at: None,
                });
            }
        }
    }

    fn card_event(&mut self, e: &StoredEvent, uid: TagUid) {
        let Some(layout_id) = self.cards.get(&uid).map(|c| c.layout_id) else {
            return;
        };
        match e.kind {
            EventKind::AccessGranted | EventKind::AccessDenied => {
                let card = self.cards.get_mut(&uid).expect("card present");
                if card.last_seen.as_ref().is_none_or(|s| s.ts <= e.ts) {
                    card.last_seen = Some(Sighting {
                        ts: e.ts,
                        gate: Some(e.gate),
                        source: Source::Terminal(e.terminal),
                    });
                }
            }
            EventKind::CardWritten => {
                let field_id = (e.detail & !campus_terminal::OVERFLOW_BIT) as u8;
                let Some(name) = self
                    .layout(layout_id)
                    .and_then(|l| l.field_by_id(field_id).map(|f| f.name.clone()))
                else {
                    return;
                };
                let card = self.cards.get(&uid).expect("card present");
                // the terminal wrote what we queued; without a queued value it is
                // a local write whose content we learn at the next sync
                let Some(value) = card.queued.get(&name).or(card.fields.get(&name).map(|s| &s.value)) else {
                    return;
                };
                let stamp = FieldStamp {
                    ts: e.ts,
                    value: value.clone(),
                    source: Source::Terminal(e.terminal),
                };
                self.stamp(uid, &name, stamp);
            }
            _ => {}
        }
    }

    fn merge_mobile(&mut self, r: &MobileRecord) {
        if !self.mobile_seen.insert((r.session.clone(), r.seq)) {
            return;
        }
        let Some(card) = self.cards.get_mut(&r.uid) else { return };
        let source = Source::Mobile(r.session.clone());
        if card.last_seen.as_ref().is_none_or(|s| s.ts <= r.ts) {
            card.last_seen = Some(Sighting {
                ts: r.ts,
                gate: None,
                source: source.clone(),
            });
        }
        if let (MobileOp::Write, Some(field), Some(value)) = (r.op, &r.field, &r.value) {
            let stamp = FieldStamp {
                ts: r.ts,
                value: value.to_ascii_lowercase(),
                source,
            };
            self.stamp(r.uid, field, stamp);
        }
    }

    /// Last-writer-wins by timestamp; ties go to the later arrival. Disagreeing
    /// writes are kept in the conflict log.
    fn stamp(&mut self, uid: TagUid, field: &str, new: FieldStamp) {
        let Some(card) = self.cards.get_mut(&uid) else { return };
        let winner = match card.fields.get(field) {
            Some(cur) if new.ts < cur.ts => {
                if cur.value != new.value {
                    self.conflicts.push(ConflictRecord {
                        uid,
                        field: field.into(),
                        kept: cur.clone(),
                        discarded: new,
                    });
                }
                return;
            }
            Some(cur) => {
                if cur.value != new.value && cur.source != new.source {
                    self.conflicts.push(ConflictRecord {
                        uid,
                        field: field.into(),
                        kept: new.clone(),
                        discarded: cur.clone(),
                    });
                }
                new
            }
            None => new,
        };
        sync_intent(card, field, &winner.value);
        card.fields.insert(field.into(), winner);
    }
}

/// Whether `c` is made obsolete by a new lock (`locking`) or unlock intent for `uid`.
fn superseded(c: &PendingCommand, uid: TagUid, locking: bool, flags_id: Option<u8>) -> bool {
    match c {
        PendingCommand::Revoke(u) => *u == uid && !locking,
        PendingCommand::CardWrite { uid: u, field_id, .. } => *u == uid && locking && Some(*field_id) == flags_id,
    }
}

/// Mirrors a winning field write into the typed intent columns.
fn sync_intent(card: &mut CardRegistryEntry, field: &str, value_hex: &str) {
    let Ok(bytes) = hex::decode(value_hex) else { return };
    let Ok(value) = field_value(v1::layout(), field, &bytes) else {
        return;
    };
    match field {
        v1::GATE_LIST => {
            if let Some(b) = value.as_bits() {
                let mut raw = [0u8; 8];
                raw[..b.len().min(8)].copy_from_slice(&b[..b.len().min(8)]);
                card.gates = u64::from_le_bytes(raw);
            }
        }
        v1::SCHEDULE => {
            if let Some(w) = value.as_schedule() {
                if let Ok(s) = <WeekSchedule>::try_from(w) {
                    card.schedule = s;
                }
            }
        }
        v1::FLAGS => {
            if let Some(b) = value.as_bits() {
                card.locked = b.first().is_some_and(|f| f & v1::FLAG_LOCKED != 0);
            }
        }
        _ => {}
    }
}

fn update_door(door: &mut DoorView, e: &StoredEvent) {
    let next = match e.kind {
        EventKind::AccessGranted if door.status == DoorStatus::Locked => Some(DoorStatus::Released),
        // brief unlock from the console
        EventKind::ModeChanged if e.detail == 3 && door.status == DoorStatus::Locked => Some(DoorStatus::Released),
        EventKind::DoorOpened | EventKind::DoorForced if door.status != DoorStatus::Alarmed => Some(DoorStatus::Open),
        EventKind::DoorLeftOpen => Some(DoorStatus::Alarmed),
        EventKind::DoorClosed => Some(DoorStatus::Locked),
        _ => None,
    };
    if let Some(status) = next {
        if status != door.status {
            door.since = e.ts;
        }
        door.status = status;
    }
    match e.kind {
        EventKind::DoorForced => door.forced = true,
        EventKind::DoorClosed => door.forced = false,
        _ => {}
    }
    door.last_event = Some(*e);
}

/// Raw bytes of `name` for `value` under `layout`.
pub fn field_bytes(layout: &Layout, name: &str, value: &FieldValue) -> campus_tag::Result<Vec<u8>> {
    let spec = layout
        .field(name)
        .ok_or_else(|| campus_tag::Error::UnknownField(name.into()))?;
    let img = encode_field(layout, &TagImage::blank(TagUid::from_serial(0)), name, value)?;
    Ok(img.bytes()[spec.range()].to_vec())
}

/// Decodes raw field bytes.
pub fn field_value(layout: &Layout, name: &str, bytes: &[u8]) -> campus_tag::Result<FieldValue> {
    let spec = layout
        .field(name)
        .ok_or_else(|| campus_tag::Error::UnknownField(name.into()))?;
    if bytes.len() != spec.length {
        return Err(campus_tag::Error::InvalidLength(name.into()));
    }
    let mut img = TagImage::blank(TagUid::from_serial(0));
    img.bytes_mut()[spec.range()].copy_from_slice(bytes);
    decode_field(layout, &img, name)
}
