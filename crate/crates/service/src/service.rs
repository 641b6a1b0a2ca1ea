//! Transport-independent service core. The HTTP layer in [`crate::api`] is a
//! thin mapping onto these methods.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};

use campus_bus::TerminalId;
use campus_coordinator::{
    Alarm, CardRegistryEntry, CoordError, Coordinator, Delivery, DoorStatus, ReportQuery, Role, StoredEvent,
    UserAction, UserSummary, WritePlan,
};
use campus_tag::v1;
use campus_tag::TagUid;
use campus_terminal::{DoorSensor, HolderSet, TerminalMode};
use chrono::NaiveDate;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::error::ApiError;
use crate::scenario::{gate_mask, CardSpec, DoorSpec, HolderSpec, ModeSpec, ScheduleSpec};
use crate::site::Site;

pub const SESSION_TTL_S: u64 = 8 * 3600;
/// Items buffered per stream subscriber before it is dropped as too slow.
pub const STREAM_BUFFER: usize = 1024;

pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or_default()
    }
}

/// Settable clock for tests and simulations.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(now: u64) -> Self {
        Self(AtomicU64::new(now))
    }

    pub fn set(&self, now: u64) {
        self.0.store(now, Ordering::SeqCst);
    }

    pub fn advance(&self, dt: u64) {
        self.0.fetch_add(dt, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for std::sync::Arc<C> {
    fn now(&self) -> u64 {
        (**self).now()
    }
}

/// One server-push message: `event: <kind>` with a JSON body.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamItem {
    pub kind: &'static str,
    pub data: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginReply {
    pub token: String,
    pub role: Role,
    pub expires_at: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LiveDoor {
    pub door: &'static str,
    pub mode: TerminalMode,
    pub sensor_open: bool,
    pub queued_events: u16,
    pub local_time: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DoorReport {
    pub id: TerminalId,
    pub name: String,
    pub gate: u8,
    /// From ingested events.
    pub status: DoorStatus,
    pub since: u64,
    pub forced: bool,
    pub mode: TerminalMode,
    pub last_polled: Option<u64>,
    pub last_event: Option<StoredEvent>,
    /// Straight from the terminal, when it answered.
    pub live: Option<LiveDoor>,
    /// True when the terminal did not answer the status request.
    pub stale: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewCard {
    #[serde(default)]
    pub name: Option<String>,
    pub personal_id: u32,
    pub holder: HolderSpec,
    pub expiry: NaiveDate,
    #[serde(default)]
    pub gates: Vec<u8>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub meal_plan: u8,
    #[serde(default)]
    pub restaurant_cents: u32,
    #[serde(default)]
    pub service_cents: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IssuedCard {
    pub uid: TagUid,
    pub issue_number: u8,
    /// Card image file (memory, lock bits, uid) as hex.
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockReply {
    pub changed: bool,
    pub delivered: Vec<TerminalId>,
    pub deferred: Vec<TerminalId>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RightsRequest {
    pub gates: Vec<u8>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedWriteReply {
    pub gate: u8,
    pub terminal: TerminalId,
    pub delivery: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "snake_case")]
pub enum PlanReply {
    Immediate,
    Queued { writes: Vec<QueuedWriteReply> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeRequest {
    pub mode: ModeSpec,
    #[serde(default)]
    pub holders: Vec<HolderSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewUser {
    pub username: String,
    pub role: Role,
    pub password: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserUpdate {
    #[serde(default)]
    pub role: Option<Role>,
    #[serde(default)]
    pub password: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollSummary {
    pub ingested: usize,
    pub alarms: usize,
    /// Terminals that did not complete, with the reason.
    pub failed: Vec<(TerminalId, String)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresentCard {
    /// Card uid or holder name from the site file.
    pub card: String,
    #[serde(default = "default_distance")]
    pub distance_cm: u16,
}

fn default_distance() -> u16 {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadReply {
    pub uid: TagUid,
    /// `GRANT`, `DENY(<reason>)`, or null when the reader did not see the card.
    pub decision: Option<String>,
}

struct Session {
    user: String,
    expires_at: u64,
}

struct Core {
    coordinator: Coordinator,
    site: Site,
    saved_len: usize,
}

pub struct Service {
    core: Mutex<Core>,
    sessions: Mutex<HashMap<String, Session>>,
    stream: broadcast::Sender<StreamItem>,
    clock: Box<dyn Clock>,
    backup: Option<(PathBuf, String)>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").finish_non_exhaustive()
    }
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("stream item serializes")
}

impl Service {
    pub fn new(coordinator: Coordinator, site: Site, clock: impl Clock + 'static) -> Self {
        let saved_len = coordinator.history().len();
        Self {
            core: Mutex::new(Core {
                coordinator,
                site,
                saved_len,
            }),
            sessions: Mutex::new(HashMap::new()),
            stream: broadcast::channel(STREAM_BUFFER).0,
            clock: Box::new(clock),
            backup: None,
        }
    }

    /// Where `POST /v1/backup` writes, and the passphrase backups are sealed with.
    pub fn with_backups(mut self, dir: PathBuf, passphrase: String) -> Self {
        self.backup = Some((dir, passphrase));
        self
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    /// Locks the core and brings the simulated site up to the current time.
    fn core(&self) -> (MutexGuard<'_, Core>, u64) {
        let mut core = self.core.lock().unwrap_or_else(|p| p.into_inner());
        core.site.advance_to(self.now());
        core.site.take_events();
        // read under the lock: concurrent callers see a monotone clock
        let now = core.site.now();
        (core, now)
    }

    /// Saves the store when the journal grew since the last save.
    fn persist(core: &mut Core) {
        let len = core.coordinator.history().len();
        if len == core.saved_len || core.coordinator.store_path().is_none() {
            return;
        }
        match core.coordinator.save() {
            Ok(()) => core.saved_len = len,
            Err(e) => tracing::error!("store save failed: {e}"),
        }
    }

    /// Read access to the coordinator, for inspection.
    pub fn with_coordinator<T>(&self, f: impl FnOnce(&Coordinator) -> T) -> T {
        let (core, _) = self.core();
        f(&core.coordinator)
    }

    /// Read access to the simulated site, for inspection.
    pub fn with_site<T>(&self, f: impl FnOnce(&Site) -> T) -> T {
        let (core, _) = self.core();
        f(&core.site)
    }

    // ---- sessions ----

    pub fn login(&self, username: &str, password: &str) -> Result<LoginReply, ApiError> {
        let role = {
            let core = self.core.lock().unwrap_or_else(|p| p.into_inner());
            core.coordinator.authenticate(username, password)?
        };
        let mut raw = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let expires_at = self.now() + SESSION_TTL_S;
        let mut sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let now = self.now();
        sessions.retain(|_, s| s.expires_at > now);
        sessions.insert(
            token.clone(),
            Session {
                user: username.to_owned(),
                expires_at,
            },
        );
        Ok(LoginReply {
            token,
            role,
            expires_at,
        })
    }

    pub fn logout(&self, token: &str) {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).remove(token);
    }

    /// The account behind `token`. Expired tokens, unknown tokens and tokens
    /// of deleted accounts are all rejected.
    pub fn user_of(&self, token: &str) -> Result<String, ApiError> {
        let now = self.now();
        let user = {
            let sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
            match sessions.get(token) {
                Some(s) if s.expires_at > now => s.user.clone(),
                _ => return Err(ApiError::Unauthorized("invalid or expired token".into())),
            }
        };
        let exists = self
            .core
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .coordinator
            .role_of(&user)
            .is_some();
        if exists {
            Ok(user)
        } else {
            Err(ApiError::Unauthorized("account no longer exists".into()))
        }
    }

    // ---- doors ----

    fn door_report(core: &mut Core, id: TerminalId) -> Result<DoorReport, ApiError> {
        let info = core
            .coordinator
            .terminal(id)
            .cloned()
            .ok_or(CoordError::UnknownTerminal(id))?;
        let live = core.coordinator.terminal_status(core.site.network_mut(), id).ok();
        Ok(DoorReport {
            id,
            name: core.site.terminal_name(id),
            gate: info.gate_id,
            status: info.door.status,
            since: info.door.since,
            forced: info.door.forced,
            mode: info.mode,
            last_polled: info.last_polled,
            last_event: info.door.last_event,
            stale: live.is_none(),
            live: live.map(|s| LiveDoor {
                door: s.door.name(),
                mode: s.mode,
                sensor_open: s.sensor_open,
                queued_events: s.queued_events,
                local_time: s.local_time,
            }),
        })
    }

    pub fn doors(&self, user: &str) -> Result<Vec<DoorReport>, ApiError> {
        let (mut core, _) = self.core();
        core.coordinator.require(user, Role::Viewer)?;
        let ids: Vec<TerminalId> = core.coordinator.terminals().map(|t| t.id).collect();
        ids.into_iter().map(|id| Self::door_report(&mut core, id)).collect()
    }

    pub fn door(&self, user: &str, id: TerminalId) -> Result<DoorReport, ApiError> {
        let (mut core, _) = self.core();
        core.coordinator.require(user, Role::Viewer)?;
        Self::door_report(&mut core, id)
    }

    /// Resolves a terminal given as `bus:addr` or by its site name.
    pub fn resolve_terminal(&self, text: &str) -> Result<TerminalId, ApiError> {
        if let Ok(id) = text.parse::<TerminalId>() {
            return Ok(id);
        }
        let (core, _) = self.core();
        core.site
            .terminal_id(text)
            .ok_or_else(|| ApiError::NotFound(format!("unknown terminal `{text}`")))
    }

    // ---- events and alarms ----

    pub fn report(&self, user: &str, q: &ReportQuery) -> Result<Vec<u8>, ApiError> {
        let (core, _) = self.core();
        core.coordinator.require(user, Role::Viewer)?;
        Ok(core.coordinator.query_report(q)?)
    }

    pub fn alarms(&self, user: &str) -> Result<Vec<Alarm>, ApiError> {
        let (core, _) = self.core();
        core.coordinator.require(user, Role::Viewer)?;
        Ok(core.coordinator.alarms().to_vec())
    }

    pub fn acknowledge_alarm(&self, user: &str, id: u64) -> Result<Alarm, ApiError> {
        let (mut core, now) = self.core();
        core.coordinator.acknowledge_alarm(user, id, now)?;
        let alarm = core
            .coordinator
            .alarms()
            .iter()
            .find(|a| a.id == id)
            .cloned()
            .ok_or(CoordError::UnknownAlarm(id))?;
        let _ = self.stream.send(StreamItem {
            kind: "alarm_ack",
            data: json(&alarm),
        });
        Self::persist(&mut core);
        Ok(alarm)
    }

    /// Live stream of ingested events, raised alarms and acknowledgments.
    pub fn subscribe(&self, user: &str) -> Result<broadcast::Receiver<StreamItem>, ApiError> {
        let core = self.core.lock().unwrap_or_else(|p| p.into_inner());
        core.coordinator.require(user, Role::Viewer)?;
        // subscribing under the core lock: no poll can publish in between
        Ok(self.stream.subscribe())
    }

    /// Drains every terminal, publishing what was ingested. Used by the
    /// background poller, which acts as the system itself.
    pub fn poll_all(&self) -> PollSummary {
        let (mut core, now) = self.core();
        let core = &mut *core;
        let mut summary = PollSummary::default();
        let ids: Vec<TerminalId> = core.coordinator.terminals().map(|t| t.id).collect();
        for id in ids {
            let events_before = core.coordinator.events().len();
            let alarms_before = core.coordinator.alarms().len();
            if let Err(e) = core.coordinator.poll_terminal(core.site.network_mut(), id, now) {
                summary.failed.push((id, e.to_string()));
            }
            for e in &core.coordinator.events()[events_before..] {
                let _ = self.stream.send(StreamItem {
                    kind: "event",
                    data: json(e),
                });
            }
            for a in &core.coordinator.alarms()[alarms_before..] {
                let _ = self.stream.send(StreamItem {
                    kind: "alarm",
                    data: json(a),
                });
            }
            summary.ingested += core.coordinator.events().len() - events_before;
            summary.alarms += core.coordinator.alarms().len() - alarms_before;
        }
        core.site.take_events();
        Self::persist(core);
        summary
    }

    /// Operator-triggered poll.
    pub fn poll(&self, user: &str) -> Result<PollSummary, ApiError> {
        self.with_coordinator(|c| c.require(user, Role::Operator))?;
        Ok(self.poll_all())
    }

    // ---- cards ----

    pub fn cards(&self, user: &str) -> Result<Vec<CardRegistryEntry>, ApiError> {
        let (core, _) = self.core();
        core.coordinator.require(user, Role::Viewer)?;
        Ok(core.coordinator.cards().cloned().collect())
    }

    pub fn card(&self, user: &str, uid: TagUid) -> Result<CardRegistryEntry, ApiError> {
        let (core, _) = self.core();
        core.coordinator.require(user, Role::Viewer)?;
        Ok(core
            .coordinator
            .card(uid)
            .cloned()
            .ok_or(CoordError::UnknownCard(uid))?)
    }

    pub fn register_card(&self, user: &str, req: NewCard) -> Result<IssuedCard, ApiError> {
        let spec = CardSpec {
            name: req.name.clone().unwrap_or_else(|| req.personal_id.to_string()),
            personal_id: req.personal_id,
            holder: req.holder,
            expiry: req.expiry,
            gates: req.gates,
            schedule: req.schedule,
            meal_plan: req.meal_plan,
            restaurant_cents: req.restaurant_cents,
            service_cents: req.service_cents,
        };
        let record = crate::site::card_record(&spec).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let (mut core, now) = self.core();
        let (uid, image) = core.coordinator.register_card(user, &record, v1::LAYOUT_ID, now)?;
        core.site.add_card(&spec.name, uid, image.clone());
        let issue_number = core.coordinator.card(uid).map(|c| c.issue_number).unwrap_or_default();
        Self::persist(&mut core);
        Ok(IssuedCard {
            uid,
            issue_number,
            image: hex::encode(image.to_file_bytes()),
        })
    }

    pub fn set_lock(&self, user: &str, uid: TagUid, locked: bool) -> Result<LockReply, ApiError> {
        let (mut core, now) = self.core();
        let core = &mut *core;
        let ack = if locked {
            core.coordinator.lock_card(user, uid, core.site.network_mut(), now)?
        } else {
            core.coordinator.unlock_card(user, uid, core.site.network_mut(), now)?
        };
        Self::persist(core);
        Ok(LockReply {
            changed: ack.changed,
            delivered: ack.delivered,
            deferred: ack.deferred,
        })
    }

    pub fn assign_rights(&self, user: &str, uid: TagUid, req: &RightsRequest) -> Result<PlanReply, ApiError> {
        let gates = gate_mask(&req.gates).map_err(ApiError::BadRequest)?;
        let schedule = req.schedule.to_schedule().map_err(ApiError::BadRequest)?;
        let (mut core, now) = self.core();
        let core = &mut *core;
        let plan = core
            .coordinator
            .assign_rights(user, uid, gates, &schedule, None, core.site.network_mut(), now)?;
        Self::persist(core);
        Ok(match plan {
            WritePlan::Immediate => PlanReply::Immediate,
            WritePlan::Queued(writes) => PlanReply::Queued {
                writes: writes
                    .into_iter()
                    .map(|w| QueuedWriteReply {
                        gate: w.gate,
                        terminal: w.terminal,
                        delivery: match w.delivery {
                            Delivery::Delivered => "delivered".into(),
                            Delivery::Deferred => "deferred".into(),
                            Delivery::Rejected(code) => format!("rejected: {code:?}"),
                        },
                    })
                    .collect(),
            },
        })
    }

    // ---- terminals ----

    pub fn unlock_brief(&self, user: &str, id: TerminalId) -> Result<(), ApiError> {
        let (mut core, _) = self.core();
        let core = &mut *core;
        core.coordinator.unlock_brief(user, id, core.site.network_mut())?;
        Ok(())
    }

    pub fn unlock_until(&self, user: &str, id: TerminalId, until: u64) -> Result<(), ApiError> {
        let (mut core, now) = self.core();
        let core = &mut *core;
        core.coordinator
            .unlock_until(user, id, until, core.site.network_mut(), now)?;
        Self::persist(core);
        Ok(())
    }

    pub fn set_mode(&self, user: &str, id: TerminalId, req: &ModeRequest) -> Result<(), ApiError> {
        let mode = match req.mode {
            ModeSpec::Normal => TerminalMode::Normal,
            ModeSpec::Category => {
                let types: Vec<_> = req.holders.iter().map(|h| (*h).into()).collect();
                TerminalMode::Category(HolderSet::of(&types))
            }
        };
        let (mut core, now) = self.core();
        let core = &mut *core;
        core.coordinator
            .set_mode(user, id, mode, core.site.network_mut(), now)?;
        Self::persist(core);
        Ok(())
    }

    // ---- users ----

    pub fn users(&self, user: &str) -> Result<Vec<UserSummary>, ApiError> {
        let (core, _) = self.core();
        Ok(core.coordinator.list_users(user)?)
    }

    fn manage(&self, user: &str, actions: Vec<UserAction>) -> Result<(), ApiError> {
        let (mut core, now) = self.core();
        for action in actions {
            let r = core.coordinator.manage_user(user, action, now);
            if let Err(e) = r {
                Self::persist(&mut core);
                return Err(e.into());
            }
        }
        Self::persist(&mut core);
        Ok(())
    }

    pub fn add_user(&self, user: &str, req: NewUser) -> Result<(), ApiError> {
        self.manage(
            user,
            vec![UserAction::Add {
                username: req.username,
                role: req.role,
                password: req.password,
            }],
        )
    }

    pub fn update_user(&self, user: &str, username: &str, req: UserUpdate) -> Result<(), ApiError> {
        let mut actions = Vec::new();
        if let Some(role) = req.role {
            actions.push(UserAction::SetRole {
                username: username.to_owned(),
                role,
            });
        }
        if let Some(password) = req.password {
            actions.push(UserAction::SetPassword {
                username: username.to_owned(),
                password,
            });
        }
        if actions.is_empty() {
            return Err(ApiError::BadRequest("nothing to change".into()));
        }
        self.manage(user, actions)
    }

    pub fn remove_user(&self, user: &str, username: &str) -> Result<(), ApiError> {
        self.manage(
            user,
            vec![UserAction::Remove {
                username: username.to_owned(),
            }],
        )?;
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .retain(|_, s| s.user != username);
        Ok(())
    }

    // ---- backup ----

    pub fn backup(&self, user: &str) -> Result<PathBuf, ApiError> {
        let (mut core, now) = self.core();
        core.coordinator.require(user, Role::Admin)?;
        let (dir, passphrase) = self
            .backup
            .as_ref()
            .ok_or_else(|| ApiError::BadRequest("no backup directory configured".into()))?;
        std::fs::create_dir_all(dir).map_err(CoordError::from)?;
        Ok(core.coordinator.snapshot_backup(dir, passphrase, now)?)
    }

    // ---- simulated hardware ----

    fn card_ref(core: &Core, text: &str) -> Result<TagUid, ApiError> {
        if let Ok(uid) = text.parse::<TagUid>() {
            return Ok(uid);
        }
        core.site
            .card_uid(text)
            .ok_or_else(|| ApiError::NotFound(format!("unknown card `{text}`")))
    }

    /// Presents cards to a simulated reader.
    pub fn sim_present(&self, user: &str, id: TerminalId, cards: &[PresentCard]) -> Result<Vec<ReadReply>, ApiError> {
        let (mut core, _) = self.core();
        core.coordinator.require(user, Role::Operator)?;
        let cards = cards
            .iter()
            .map(|c| Ok((Self::card_ref(&core, &c.card)?, c.distance_cm)))
            .collect::<Result<Vec<_>, ApiError>>()?;
        let reads = core.site.present(id, &cards)?;
        core.site.take_events();
        Ok(reads
            .into_iter()
            .map(|r| ReadReply {
                uid: r.uid,
                decision: r.decision.map(|d| d.to_string()),
            })
            .collect())
    }

    /// Sets a simulated door contact.
    pub fn sim_door(&self, user: &str, id: TerminalId, state: DoorSpec) -> Result<(), ApiError> {
        let (mut core, _) = self.core();
        core.coordinator.require(user, Role::Operator)?;
        let sensor = match state {
            DoorSpec::Open => DoorSensor::Open,
            DoorSpec::Closed => DoorSensor::Closed,
        };
        core.site.set_door(id, sensor)?;
        core.site.take_events();
        Ok(())
    }
}
