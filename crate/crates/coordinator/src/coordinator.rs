use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use campus_bus::{Network, TerminalId};
use campus_tag::v1::{self, CardRecord, WeekSchedule};
use campus_tag::{encode_field, sign_card, verify_card, FieldValue, Layout, SystemKey, TagImage, TagUid};
use campus_terminal::protocol::{Command, ConfigReport, ErrorCode, Response, StatusReport};
use campus_terminal::{EventKind, EventRecord, Password, TerminalMode};
use serde::{Deserialize, Serialize};

use crate::error::{CoordError, Result};
use crate::model::{
    field_bytes, Alarm, AlarmRule, CardRegistryEntry, ConflictRecord, FieldStamp, LogEntry, MobileOp, MobileRecord,
    Mutation, PendingCommand, Role, Source, State, StoredEvent, TerminalInfo, UserAccount,
};
use crate::report::{self, ReportQuery};
use crate::store::{self, StoreKey};
use crate::users::{hash_password, verify_password};

/// Retries per bus request.
pub const DEFAULT_RETRIES: u32 = 4;
/// Events requested per DRAIN_EVENTS; 40 records fit one frame.
pub const DRAIN_BATCH: u8 = 40;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserAction {
    Add {
        username: String,
        role: Role,
        password: String,
    },
    Remove {
        username: String,
    },
    SetRole {
        username: String,
        role: Role,
    },
    SetPassword {
        username: String,
        password: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSummary {
    pub username: String,
    pub role: Role,
    pub created_at: u64,
}

/// Outcome of handing commands to one terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Delivered,
    /// Kept in the outbox; retried at the next poll of that terminal.
    Deferred,
    Rejected(ErrorCode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedWrite {
    pub gate: u8,
    pub terminal: TerminalId,
    pub delivery: Delivery,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WritePlan {
    /// The card was on the local reader and has been rewritten.
    Immediate,
    /// One entry per terminal serving a gate in the new gate set.
    Queued(Vec<QueuedWrite>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LockAck {
    /// False when unlocking a card that is not locked; nothing was sent.
    pub changed: bool,
    pub delivered: Vec<TerminalId>,
    pub deferred: Vec<TerminalId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PollReport {
    pub ingested: Vec<StoredEvent>,
    pub alarms: Vec<Alarm>,
}

impl PollReport {
    pub fn count(&self) -> usize {
        self.ingested.len()
    }
}

#[derive(Serialize)]
struct StoreImageRef<'a> {
    snapshot: &'a State,
    snapshot_len: usize,
    log: &'a [LogEntry],
}

#[derive(Deserialize)]
struct StoreImage {
    snapshot: State,
    snapshot_len: usize,
    log: Vec<LogEntry>,
}

/// Single-writer owner of all coordinator state. Every change is a journaled
/// [`Mutation`]; the store holds a snapshot plus the full journal.
pub struct Coordinator {
    state: State,
    log: Vec<LogEntry>,
    snapshot: State,
    snapshot_len: usize,
    store: Option<(PathBuf, StoreKey)>,
    retries: u32,
}

impl std::fmt::Debug for Coordinator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coordinator")
            .field("cards", &self.state.cards.len())
            .field("events", &self.state.events.len())
            .field("log", &self.log.len())
            .finish()
    }
}

fn default_rules() -> Vec<AlarmRule> {
    [EventKind::DoorLeftOpen, EventKind::DoorForced]
        .into_iter()
        .enumerate()
        .map(|(i, kind)| AlarmRule {
            id: i as u64 + 1,
            kinds: BTreeSet::from([kind]),
            gates: None,
            enabled: true,
        })
        .collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Coordinator {
    /// Fresh system with one ADMIN and the default door alarm rules.
    pub fn create(system_key: SystemKey, admin: &str, password: &str, now: u64) -> Result<Self> {
        if admin.is_empty() {
            return Err(CoordError::InvalidArgument("empty username".into()));
        }
        let mut c = Self {
            state: State::empty(),
            log: Vec::new(),
            snapshot: State::empty(),
            snapshot_len: 0,
            store: None,
            retries: DEFAULT_RETRIES,
        };
        let admin = UserAccount {
            username: admin.into(),
            role: Role::Admin,
            password_hash: hash_password(password),
            created_at: now,
        };
        c.commit(
            now,
            None,
            Mutation::Genesis {
                system_key: *system_key.as_bytes(),
                admin,
                rules: default_rules(),
            },
        );
        Ok(c)
    }

    fn commit(&mut self, at: u64, actor: Option<&str>, mutation: Mutation) {
        self.state.apply(at, &mutation);
        self.log.push(LogEntry {
            at,
            actor: actor.map(str::to_owned),
            mutation,
        });
    }

    pub fn set_retries(&mut self, retries: u32) {
        self.retries = retries;
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    /// Canonical serialization of the state, for equality checks.
    pub fn state_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.state).expect("state serializes")
    }

    /// The journal: every mutation since genesis.
    pub fn history(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn system_key(&self) -> SystemKey {
        SystemKey::new(self.state.system_key)
    }

    pub fn card(&self, uid: TagUid) -> Option<&CardRegistryEntry> {
        self.state.cards.get(&uid)
    }

    pub fn cards(&self) -> impl Iterator<Item = &CardRegistryEntry> {
        self.state.cards.values()
    }

    pub fn terminal(&self, id: TerminalId) -> Option<&TerminalInfo> {
        self.state.terminals.get(&id)
    }

    pub fn terminals(&self) -> impl Iterator<Item = &TerminalInfo> {
        self.state.terminals.values()
    }

    pub fn events(&self) -> &[StoredEvent] {
        &self.state.events
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.state.alarms
    }

    pub fn alarm_rules(&self) -> &[AlarmRule] {
        &self.state.rules
    }

    pub fn conflicts(&self) -> &[ConflictRecord] {
        &self.state.conflicts
    }

    pub fn pending_commands(&self, id: TerminalId) -> usize {
        self.state.outbox.get(&id).map_or(0, Vec::len)
    }

    // ---- users ----

    pub fn authenticate(&self, username: &str, password: &str) -> Result<Role> {
        match self.state.users.get(username) {
            Some(u) if verify_password(password, &u.password_hash) => Ok(u.role),
            _ => Err(CoordError::BadCredentials),
        }
    }

    pub fn role_of(&self, username: &str) -> Option<Role> {
        self.state.users.get(username).map(|u| u.role)
    }

    pub fn require(&self, actor: &str, need: Role) -> Result<()> {
        match self.role_of(actor) {
            Some(role) if role >= need => Ok(()),
            _ => Err(CoordError::AuthDenied { need }),
        }
    }

    pub fn list_users(&self, actor: &str) -> Result<Vec<UserSummary>> {
        self.require(actor, Role::Admin)?;
        Ok(self
            .state
            .users
            .values()
            .map(|u| UserSummary {
                username: u.username.clone(),
                role: u.role,
                created_at: u.created_at,
            })
            .collect())
    }

    pub fn manage_user(&mut self, actor: &str, action: UserAction, now: u64) -> Result<()> {
        self.require(actor, Role::Admin)?;
        let admins = self.state.users.values().filter(|u| u.role == Role::Admin).count();
        let existing = |name: &str| {
            self.state
                .users
                .get(name)
                .ok_or_else(|| CoordError::UnknownUser(name.into()))
        };
        let mutation = match action {
            UserAction::Add {
                username,
                role,
                password,
            } => {
                if username.is_empty() || username.contains(char::is_whitespace) {
                    return Err(CoordError::InvalidArgument(format!("bad username `{username}`")));
                }
                if self.state.users.contains_key(&username) {
                    return Err(CoordError::DuplicateUser(username));
                }
                let account = UserAccount {
                    username,
                    role,
                    password_hash: hash_password(&password),
                    created_at: now,
                };
                Mutation::UserAdded { account }
            }
            UserAction::Remove { username } => {
                if existing(&username)?.role == Role::Admin && admins == 1 {
                    return Err(CoordError::LastAdmin);
                }
                Mutation::UserRemoved { username }
            }
            UserAction::SetRole { username, role } => {
                if existing(&username)?.role == Role::Admin && role != Role::Admin && admins == 1 {
                    return Err(CoordError::LastAdmin);
                }
                Mutation::UserRoleSet { username, role }
            }
            UserAction::SetPassword { username, password } => {
                existing(&username)?;
                Mutation::UserPasswordSet {
                    username,
                    password_hash: hash_password(&password),
                }
            }
        };
        self.commit(now, Some(actor), mutation);
        Ok(())
    }

    // ---- layouts and cards ----

    pub fn layout(&self, id: u16) -> Result<Layout> {
        self.state.layout(id).ok_or(CoordError::UnknownLayout(id))
    }

    pub fn add_layout(&mut self, actor: &str, layout: &Layout, now: u64) -> Result<()> {
        self.require(actor, Role::Admin)?;
        if self.state.layout(layout.id()).is_some() {
            return Err(CoordError::LayoutExists(layout.id()));
        }
        self.commit(
            now,
            Some(actor),
            Mutation::LayoutAdded {
                id: layout.id(),
                text: layout.to_string(),
            },
        );
        Ok(())
    }

    /// Issues a card for `record`'s holder. The coordinator picks the uid and
    /// issue number; `record.locked` is ignored.
    pub fn register_card(
        &mut self,
        actor: &str,
        record: &CardRecord,
        layout_id: u16,
        now: u64,
    ) -> Result<(TagUid, TagImage)> {
        self.require(actor, Role::Operator)?;
        let layout = self.layout(layout_id)?;
        let mut issue_number = 0u8;
        for c in self
            .state
            .cards
            .values()
            .filter(|c| c.personal_id == record.personal_id)
        {
            if !c.locked {
                return Err(CoordError::DuplicateActiveCard {
                    personal_id: c.personal_id,
                    uid: c.uid,
                });
            }
            issue_number = issue_number.max(c.issue_number);
        }
        let mut record = record.clone();
        record.issue_number = issue_number.saturating_add(1);
        record.locked = false;

        let seed = u64::from_le_bytes(self.state.system_key[..8].try_into().unwrap());
        let mut serial = self.state.next_serial;
        let uid = loop {
            let uid = TagUid::from_serial(splitmix64(seed ^ serial));
            serial += 1;
            if !self.state.cards.contains_key(&uid) {
                break uid;
            }
        };
        let image = build_image(&layout, uid, &record)?;
        let image = sign_card(&self.system_key(), &image);

        let mut fields = BTreeMap::new();
        for name in [v1::FLAGS, v1::GATE_LIST, v1::SCHEDULE] {
            if let Some(spec) = layout.field(name) {
                let stamp = FieldStamp {
                    ts: now,
                    value: hex::encode(&image.bytes()[spec.range()]),
                    source: Source::Coordinator,
                };
                fields.insert(name.to_owned(), stamp);
            }
        }
        let entry = CardRegistryEntry {
            uid,
            personal_id: record.personal_id,
            holder_type: record.holder_type,
            layout_id,
            issued_at: now,
            issue_number: record.issue_number,
            gates: record.gates,
            schedule: record.schedule,
            locked: false,
            last_seen: None,
            fields,
            queued: BTreeMap::new(),
        };
        self.commit(
            now,
            Some(actor),
            Mutation::CardRegistered {
                entry,
                next_serial: serial,
            },
        );
        Ok((uid, image))
    }

    /// Records new rights. A card on the local reader is rewritten in place;
    /// otherwise every terminal serving a gate in `gates` gets queued writes.
    #[allow(clippy::too_many_arguments)]
    pub fn assign_rights(
        &mut self,
        actor: &str,
        uid: TagUid,
        gates: u64,
        schedule: &WeekSchedule,
        reader: Option<&mut TagImage>,
        net: &mut Network,
        now: u64,
    ) -> Result<WritePlan> {
        self.require(actor, Role::Operator)?;
        let card = self.card(uid).ok_or(CoordError::UnknownCard(uid))?;
        let layout = self.layout(card.layout_id)?;
        let gate_len = layout
            .field(v1::GATE_LIST)
            .ok_or_else(|| campus_tag::Error::UnknownField(v1::GATE_LIST.into()))?
            .length;
        if gate_len < 8 && gates >> (8 * gate_len) != 0 {
            return Err(campus_tag::Error::ValueOverflow(v1::GATE_LIST.into()).into());
        }
        let mut gate_bits = gates.to_le_bytes().to_vec();
        gate_bits.resize(gate_len, 0);
        let gate_bytes = field_bytes(&layout, v1::GATE_LIST, &FieldValue::Bits(gate_bits))?;
        let schedule_bytes = field_bytes(&layout, v1::SCHEDULE, &v1::schedule_value(schedule))?;

        let on_reader = reader.filter(|img| img.uid() == uid);
        let immediate = on_reader.is_some();
        if let Some(img) = on_reader {
            let key = self.system_key();
            if !verify_card(&key, img) {
                return Err(CoordError::UnverifiedCard(uid));
            }
            let next = encode_field(&layout, img, v1::GATE_LIST, &FieldValue::Bits(gate_bytes.clone()))?;
            let next = encode_field(&layout, &next, v1::SCHEDULE, &v1::schedule_value(schedule))?;
            *img = sign_card(&key, &next);
        }
        self.commit(
            now,
            Some(actor),
            Mutation::RightsAssigned {
                uid,
                gates,
                schedule: *schedule,
                gate_hex: hex::encode(&gate_bytes),
                schedule_hex: hex::encode(&schedule_bytes),
                immediate,
            },
        );
        if immediate {
            return Ok(WritePlan::Immediate);
        }

        let gate_id = layout.field_id(v1::GATE_LIST).expect("checked above");
        let schedule_id = layout.field_id(v1::SCHEDULE).expect("encoded above");
        let targets: Vec<(u8, TerminalId)> = (0..64u8)
            .filter(|g| gates >> g & 1 == 1)
            .flat_map(|g| {
                self.state
                    .terminals
                    .values()
                    .filter(move |t| t.gate_id == g)
                    .map(move |t| (g, t.id))
            })
            .collect();
        let mut plan = Vec::with_capacity(targets.len());
        for (gate, terminal) in targets {
            let commands = vec![
                PendingCommand::CardWrite {
                    uid,
                    field_id: gate_id,
                    value: gate_bytes.clone(),
                },
                PendingCommand::CardWrite {
                    uid,
                    field_id: schedule_id,
                    value: schedule_bytes.clone(),
                },
            ];
            let delivery = self.deliver(net, terminal, commands, now);
            plan.push(QueuedWrite {
                gate,
                terminal,
                delivery,
            });
        }
        Ok(WritePlan::Queued(plan))
    }

    /// Sets the lock intent and pushes a revocation to every terminal.
    pub fn lock_card(&mut self, actor: &str, uid: TagUid, net: &mut Network, now: u64) -> Result<LockAck> {
        self.set_lock(actor, uid, true, net, now)
    }

    /// Clears the lock intent and queues a flag-clearing write at every
    /// terminal. A card that is not locked is left alone.
    pub fn unlock_card(&mut self, actor: &str, uid: TagUid, net: &mut Network, now: u64) -> Result<LockAck> {
        self.set_lock(actor, uid, false, net, now)
    }

    fn set_lock(&mut self, actor: &str, uid: TagUid, locked: bool, net: &mut Network, now: u64) -> Result<LockAck> {
        self.require(actor, Role::Operator)?;
        let card = self.card(uid).ok_or(CoordError::UnknownCard(uid))?;
        if !locked && !card.locked {
            return Ok(LockAck::default());
        }
        let layout = self.layout(card.layout_id)?;
        let flags = layout
            .field(v1::FLAGS)
            .ok_or_else(|| campus_tag::Error::UnknownField(v1::FLAGS.into()))?;
        let mut flag_bytes = vec![0u8; flags.length];
        if locked {
            flag_bytes[0] = v1::FLAG_LOCKED;
        }
        let flags_id = layout.field_id(v1::FLAGS).expect("field exists");
        self.commit(
            now,
            Some(actor),
            Mutation::LockIntent {
                uid,
                locked,
                flags_hex: hex::encode(&flag_bytes),
            },
        );
        let mut ack = LockAck {
            changed: true,
            ..LockAck::default()
        };
        let ids: Vec<TerminalId> = self.state.terminals.keys().copied().collect();
        for id in ids {
            let command = if locked {
                PendingCommand::Revoke(uid)
            } else {
                PendingCommand::CardWrite {
                    uid,
                    field_id: flags_id,
                    value: flag_bytes.clone(),
                }
            };
            match self.deliver(net, id, vec![command], now) {
                Delivery::Delivered => ack.delivered.push(id),
                _ => ack.deferred.push(id),
            }
        }
        Ok(ack)
    }

    // ---- terminals ----

    /// Records a terminal and the password used for its protected commands.
    pub fn install_terminal(
        &mut self,
        actor: &str,
        id: TerminalId,
        gate_id: u8,
        password: Password,
        now: u64,
    ) -> Result<()> {
        self.require(actor, Role::Admin)?;
        if gate_id > 63 {
            return Err(CoordError::InvalidArgument(format!("gate {gate_id} out of range")));
        }
        self.commit(
            now,
            Some(actor),
            Mutation::TerminalInstalled {
                id,
                gate_id,
                password: Some(password),
            },
        );
        Ok(())
    }

    /// Runs discovery and reads each responder's gate. Returns the terminals
    /// that answered both.
    pub fn discover(&mut self, net: &mut Network, rounds: u32, now: u64) -> Vec<TerminalId> {
        let mut found = Vec::new();
        for id in net.discover(rounds) {
            let Ok(Response::Data(p)) = net.request(id, &Command::GetConfig, &Password([0; 8]), self.retries) else {
                continue;
            };
            let Some(cfg) = ConfigReport::decode(&p) else { continue };
            if self.terminal(id).map(|t| t.gate_id) != Some(cfg.gate_id) {
                self.commit(
                    now,
                    None,
                    Mutation::TerminalSeen {
                        id,
                        gate_id: cfg.gate_id,
                    },
                );
            }
            found.push(id);
        }
        found
    }

    fn password(&self, id: TerminalId) -> Result<Password> {
        let t = self.terminal(id).ok_or(CoordError::UnknownTerminal(id))?;
        t.password.ok_or(CoordError::NoTerminalPassword(id))
    }

    /// Sends a protected command that answers ACK.
    fn command(&mut self, net: &mut Network, id: TerminalId, cmd: &Command) -> Result<()> {
        let password = self.password(id)?;
        match net.request(id, cmd, &password, self.retries)? {
            Response::Ack => Ok(()),
            Response::Err(code) => Err(CoordError::Rejected(id, code)),
            Response::Data(_) => Err(CoordError::BadReply(id)),
        }
    }

    pub fn unlock_brief(&mut self, actor: &str, id: TerminalId, net: &mut Network) -> Result<()> {
        self.require(actor, Role::Operator)?;
        self.command(net, id, &Command::UnlockBrief)
    }

    pub fn unlock_until(&mut self, actor: &str, id: TerminalId, until: u64, net: &mut Network, now: u64) -> Result<()> {
        self.set_mode(actor, id, TerminalMode::UnlockedUntil(until), net, now)
    }

    pub fn set_mode(
        &mut self,
        actor: &str,
        id: TerminalId,
        mode: TerminalMode,
        net: &mut Network,
        now: u64,
    ) -> Result<()> {
        self.require(actor, Role::Operator)?;
        let cmd = match mode {
            TerminalMode::UnlockedUntil(until) => Command::UnlockUntil { until },
            mode => Command::SetMode(mode),
        };
        self.command(net, id, &cmd)?;
        self.commit(now, Some(actor), Mutation::ModeSet { id, mode });
        Ok(())
    }

    /// Sets the terminal clock to `now`.
    pub fn sync_clock(&mut self, actor: &str, id: TerminalId, net: &mut Network, now: u64) -> Result<()> {
        self.require(actor, Role::Admin)?;
        self.command(net, id, &Command::SetTime { now })
    }

    pub fn terminal_status(&self, net: &mut Network, id: TerminalId) -> Result<StatusReport> {
        match net.request(id, &Command::GetStatus, &Password([0; 8]), self.retries)? {
            Response::Data(p) => StatusReport::decode(&p).ok_or(CoordError::BadReply(id)),
            Response::Err(code) => Err(CoordError::Rejected(id, code)),
            Response::Ack => Err(CoordError::BadReply(id)),
        }
    }

    /// Queues `commands` for `id` and tries to flush its outbox.
    fn deliver(&mut self, net: &mut Network, id: TerminalId, commands: Vec<PendingCommand>, now: u64) -> Delivery {
        self.commit(now, None, Mutation::OutboxPush { id, commands });
        self.flush(net, id, now)
    }

    fn flush(&mut self, net: &mut Network, id: TerminalId, now: u64) -> Delivery {
        let Ok(password) = self.password(id) else {
            return Delivery::Deferred;
        };
        let queue = self.state.outbox.get(&id).cloned().unwrap_or_default();
        let mut done = 0;
        let mut outcome = Delivery::Delivered;
        for pending in &queue {
            let cmd = match pending {
                PendingCommand::Revoke(uid) => Command::PushRevocation(vec![*uid]),
                PendingCommand::CardWrite { uid, field_id, value } => Command::QueueCardWrite {
                    uid: *uid,
                    field_id: *field_id,
                    value: value.clone(),
                },
            };
            match net.request(id, &cmd, &password, self.retries) {
                Ok(Response::Ack) => done += 1,
                Ok(Response::Err(code)) => {
                    // a refused command will be refused again; drop it
                    done += 1;
                    outcome = Delivery::Rejected(code);
                }
                Ok(Response::Data(_)) => {
                    done += 1;
                    outcome = Delivery::Rejected(ErrorCode::UnknownCommand);
                }
                Err(_) => {
                    outcome = Delivery::Deferred;
                    break;
                }
            }
        }
        if done > 0 {
            self.commit(now, None, Mutation::OutboxDelivered { id, count: done });
        }
        outcome
    }

    /// Drains and acknowledges a terminal until it reports no events. Events
    /// already held (same terminal, seq) are dropped. Progress made before a
    /// bus failure is kept.
    pub fn poll_terminal(&mut self, net: &mut Network, id: TerminalId, now: u64) -> Result<PollReport> {
        if self.terminal(id).is_none() {
            return Err(CoordError::UnknownTerminal(id));
        }
        let events_before = self.state.events.len();
        let alarms_before = self.state.alarms.len();
        if self.pending_commands(id) > 0 {
            self.flush(net, id, now);
        }
        let password = self.terminal(id).and_then(|t| t.password).unwrap_or(Password([0; 8]));
        let result = loop {
            let batch = match net.request(id, &Command::DrainEvents { max: DRAIN_BATCH }, &password, self.retries) {
                Ok(Response::Data(p)) => match EventRecord::decode_batch(&p) {
                    Some(batch) => batch,
                    None => break Err(CoordError::BadReply(id)),
                },
                Ok(Response::Err(code)) => break Err(CoordError::Rejected(id, code)),
                Ok(Response::Ack) => break Err(CoordError::BadReply(id)),
                Err(e) => break Err(e.into()),
            };
            let Some(max_seq) = batch.iter().map(|e| e.seq).max() else {
                break Ok(());
            };
            let high_water = self.terminal(id).map_or(0, |t| t.high_water);
            if batch.iter().any(|e| e.seq > high_water) {
                self.commit(now, None, Mutation::EventsIngested { id, events: batch });
            }
            match net.request(id, &Command::AckEvents { seq: max_seq }, &password, self.retries) {
                Ok(Response::Ack) => {}
                Ok(Response::Err(code)) => break Err(CoordError::Rejected(id, code)),
                Ok(Response::Data(_)) => break Err(CoordError::BadReply(id)),
                Err(e) => break Err(e.into()),
            }
        };
        result?;
        Ok(PollReport {
            ingested: self.state.events[events_before..].to_vec(),
            alarms: self.state.alarms[alarms_before..].to_vec(),
        })
    }

    // ---- alarms ----

    pub fn add_alarm_rule(
        &mut self,
        actor: &str,
        kinds: BTreeSet<EventKind>,
        gates: Option<BTreeSet<u8>>,
        now: u64,
    ) -> Result<u64> {
        self.require(actor, Role::Admin)?;
        if kinds.is_empty() {
            return Err(CoordError::InvalidArgument("alarm rule without event kinds".into()));
        }
        let id = self.state.rules.iter().map(|r| r.id).max().unwrap_or(0) + 1;
        let rule = AlarmRule {
            id,
            kinds,
            gates,
            enabled: true,
        };
        self.commit(now, Some(actor), Mutation::RuleAdded { rule });
        Ok(id)
    }

    pub fn set_rule_enabled(&mut self, actor: &str, id: u64, enabled: bool, now: u64) -> Result<()> {
        self.require(actor, Role::Admin)?;
        if !self.state.rules.iter().any(|r| r.id == id) {
            return Err(CoordError::UnknownRule(id));
        }
        self.commit(now, Some(actor), Mutation::RuleEnabled { id, enabled });
        Ok(())
    }

    /// Acknowledges an alarm. The first acknowledgment is kept.
    pub fn acknowledge_alarm(&mut self, actor: &str, id: u64, now: u64) -> Result<()> {
        self.require(actor, Role::Operator)?;
        let alarm = self
            .state
            .alarms
            .iter()
            .find(|a| a.id == id)
            .ok_or(CoordError::UnknownAlarm(id))?;
        if alarm.acknowledged_by.is_none() {
            self.commit(now, Some(actor), Mutation::AlarmAcked { id, by: actor.into() });
        }
        Ok(())
    }

    // ---- reports ----

    pub fn query_report(&self, q: &ReportQuery) -> Result<Vec<u8>> {
        report::run(q, &self.state.events, &self.state.cards)
    }

    // ---- mobile readers ----

    /// Merges a JSON-lines mobile session log. Lines already merged are
    /// skipped; a malformed line rejects the whole log.
    pub fn import_mobile_log(&mut self, actor: &str, text: &str, now: u64) -> Result<usize> {
        self.require(actor, Role::Operator)?;
        let mut fresh = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| CoordError::MalformedLog { line: i + 1, msg };
            let r: MobileRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            self.check_mobile(&r).map_err(bad)?;
            let key = (r.session.clone(), r.seq);
            if self.state.mobile_seen.contains(&key) || !seen.insert(key) {
                continue;
            }
            fresh.push(r);
        }
        if fresh.is_empty() {
            return Ok(0);
        }
        let n = fresh.len();
        self.commit(now, Some(actor), Mutation::MobileMerged { records: fresh });
        Ok(n)
    }

    fn check_mobile(&self, r: &MobileRecord) -> std::result::Result<(), String> {
        if r.session.is_empty() {
            return Err("empty session id".into());
        }
        if r.op == MobileOp::Read {
            return Ok(());
        }
        let (Some(field), Some(value)) = (&r.field, &r.value) else {
            return Err("write without field and value".into());
        };
        let bytes = hex::decode(value).map_err(|e| format!("value: {e}"))?;
        if let Some(layout) = self.card(r.uid).and_then(|c| self.state.layout(c.layout_id)) {
            let spec = layout
                .field(field)
                .ok_or_else(|| format!("no field `{field}` on card {}", r.uid))?;
            if spec.length != bytes.len() {
                return Err(format!("`{field}` takes {} bytes, got {}", spec.length, bytes.len()));
            }
        }
        Ok(())
    }

    // ---- persistence ----

    /// Makes the current state the snapshot; the journal is kept whole.
    pub fn checkpoint(&mut self) {
        self.snapshot = self.state.clone();
        self.snapshot_len = self.log.len();
    }

    fn sealed(&self, key: &StoreKey) -> Vec<u8> {
        let image = StoreImageRef {
            snapshot: &self.snapshot,
            snapshot_len: self.snapshot_len,
            log: &self.log,
        };
        store::seal(key, &serde_json::to_vec(&image).expect("store image serializes"))
    }

    /// Binds the coordinator to a store file and writes it.
    pub fn attach_store(&mut self, path: impl Into<PathBuf>, passphrase: &str) -> Result<()> {
        self.store = Some((path.into(), StoreKey::generate(passphrase)));
        self.save()
    }

    /// Journal entries already folded into the snapshot.
    pub fn snapshot_len(&self) -> usize {
        self.snapshot_len
    }

    pub fn store_path(&self) -> Option<&Path> {
        self.store.as_ref().map(|(p, _)| p.as_path())
    }

    /// Persists snapshot and journal to the attached store.
    pub fn save(&mut self) -> Result<()> {
        let Some((path, key)) = &self.store else {
            return Err(CoordError::InvalidArgument("no store attached".into()));
        };
        store::write_atomic(path, &self.sealed(key))
    }

    /// Writes `campus-<UTC time>.cgdb` into `dir` and returns its path.
    pub fn snapshot_backup(&mut self, dir: &Path, passphrase: &str, now: u64) -> Result<PathBuf> {
        self.checkpoint();
        let path = dir.join(store::backup_file_name(now));
        store::write_atomic(&path, &self.sealed(&StoreKey::generate(passphrase)))?;
        Ok(path)
    }

    /// Loads a store file: snapshot, then the journal tail replayed over it.
    pub fn restore(path: &Path, passphrase: &str) -> Result<Self> {
        Self::load(path, passphrase).map(|(c, _)| c)
    }

    /// Restores and keeps `path` attached for later saves.
    pub fn open_store(path: &Path, passphrase: &str) -> Result<Self> {
        let (mut c, key) = Self::load(path, passphrase)?;
        c.store = Some((path.to_owned(), key));
        Ok(c)
    }

    fn load(path: &Path, passphrase: &str) -> Result<(Self, StoreKey)> {
        let bytes = fs::read(path)?;
        let (plaintext, key) = store::open(&bytes, passphrase)?;
        let image: StoreImage =
            serde_json::from_slice(&plaintext).map_err(|e| CoordError::CorruptContainer(e.to_string()))?;
        if image.snapshot_len > image.log.len() {
            return Err(CoordError::CorruptContainer("snapshot ahead of journal".into()));
        }
        let mut state = image.snapshot.clone();
        for entry in &image.log[image.snapshot_len..] {
            state.apply(entry.at, &entry.mutation);
        }
        let c = Self {
            state,
            log: image.log,
            snapshot: image.snapshot,
            snapshot_len: image.snapshot_len,
            store: None,
            retries: DEFAULT_RETRIES,
        };
        Ok((c, key))
    }
}

/// Card image for `record` under `layout`. Fields the layout shares with the
/// default layout (same name, encoding and length) are carried over.
fn build_image(layout: &Layout, uid: TagUid, record: &CardRecord) -> Result<TagImage> {
    let full = record.write(&TagImage::blank(uid))?;
    if layout.id() == v1::LAYOUT_ID {
        return Ok(full);
    }
    let base = v1::layout();
    let mut img = TagImage::blank(uid);
    for spec in layout.fields() {
        if spec.name == v1::LAYOUT_ID_FIELD {
            img = encode_field(layout, &img, &spec.name, &FieldValue::Uint(layout.id().into()))?;
        } else if let Some(src) = base.field(&spec.name) {
            if src.encoding == spec.encoding && src.length == spec.length {
                img.write(spec.offset, &full.bytes()[src.range()])?;
            }
        }
    }
    Ok(img)
}
