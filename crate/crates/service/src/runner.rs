//! Deterministic scenario execution on a virtual clock.
//!
//! The transcript has one line per decision, terminal event, poll, alarm and
//! operator action, each prefixed with its offset in seconds from the start:
//!
//! ```text
//! [     0] SYSTEM start seed=7 at=2026-10-12T07:00:00Z terminals=1 cards=1
//! [    60] DECISION main ana GRANT
//! [    60] EVENT main seq=1 ACCESS_GRANTED card=ana detail=0
//! ```

use std::fmt::Write as _;
use std::path::Path;

use campus_bus::TerminalId;
use campus_coordinator::{Coordinator, WritePlan};
use campus_tag::{SystemKey, TagUid};
use campus_terminal::{AccessDecision, DoorSensor, EventRecord, HolderSet, TerminalMode};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{
    gate_mask, Action, AdminStep, DebitStep, DoorSpec, LinkStep, ModeSpec, PresentStep, Scenario, ScenarioError,
};
use crate::site::Site;

/// Operator account the runner acts as.
pub const RUNNER_ADMIN: &str = "admin";
pub const RUNNER_PASSWORD: &str = "admin";

/// A card read at a terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub at: u64,
    pub terminal: TerminalId,
    pub uid: TagUid,
    /// `None` when the card was out of range or beyond the reader's capacity.
    pub decision: Option<AccessDecision>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub transcript: String,
    pub decisions: Vec<Decision>,
    pub coordinator: Coordinator,
    pub site: Site,
}

/// The system key a scenario's cards are signed with.
pub fn scenario_key(seed: u64) -> SystemKey {
    let mut bytes = [0u8; 32];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
    SystemKey::new(bytes)
}

pub fn run_scenario_file(path: &Path) -> Result<RunOutcome, ScenarioError> {
    run_scenario(&Scenario::from_file(path)?)
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunOutcome, ScenarioError> {
    scenario.validate()?;
    let start = scenario.start.seconds()?;
    let mut coordinator = Coordinator::create(scenario_key(scenario.seed), RUNNER_ADMIN, RUNNER_PASSWORD, start)?;
    let (site, registrations) = Site::build(scenario, &mut coordinator, RUNNER_ADMIN, start)?;
    let mut run = Run {
        start,
        coordinator,
        site,
        transcript: String::new(),
        decisions: Vec::new(),
    };
    let at = chrono::DateTime::from_timestamp(start as i64, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_default();
    run.line(
        start,
        format_args!(
            "SYSTEM start seed={} at={at} terminals={} cards={}",
            scenario.seed,
            scenario.terminals.len(),
            scenario.cards.len()
        ),
    );
    for r in &registrations {
        run.line(
            start,
            format_args!("REGISTER {} uid={} personal_id={}", r.name, r.uid, r.personal_id),
        );
    }

    for step in &scenario.script {
        if let Some(at) = step.at {
            run.advance_to(start + at);
        }
        match &step.action {
            Action::Present(p) => run.present(p)?,
            Action::Door(d) => run.door(&d.terminal, d.state)?,
            Action::Admin(a) => run.admin(a),
            Action::Poll(target) => run.poll(target),
            Action::Advance(dt) => {
                let to = run.site.now() + dt;
                run.advance_to(to);
            }
            Action::Debit(d) => run.debit(d),
            Action::Link(l) => run.link(l)?,
        }
        run.flush_events();
    }
    run.advance_to(start + scenario.duration_s);

    Ok(RunOutcome {
        transcript: run.transcript,
        decisions: run.decisions,
        coordinator: run.coordinator,
        site: run.site,
    })
}

struct Run {
    start: u64,
    coordinator: Coordinator,
    site: Site,
    transcript: String,
    decisions: Vec<Decision>,
}

impl Run {
    fn line(&mut self, at: u64, text: std::fmt::Arguments<'_>) {
        let _ = writeln!(self.transcript, "[{:>6}] {text}", at.saturating_sub(self.start));
    }

    fn now(&self) -> u64 {
        self.site.now()
    }

    fn advance_to(&mut self, t: u64) {
        self.site.advance_to(t);
        self.flush_events();
    }

    fn flush_events(&mut self) {
        for (id, e) in self.site.take_events() {
            self.event_line(id, &e);
        }
    }

    fn event_line(&mut self, id: TerminalId, e: &EventRecord) {
        let name = self.site.terminal_name(id);
        let card = e
            .uid
            .map(|u| format!(" card={}", self.site.card_name(u)))
            .unwrap_or_default();
        self.line(
            e.ts,
            format_args!("EVENT {name} seq={} {}{card} detail={}", e.seq, e.kind, e.detail),
        );
    }

    fn terminal(&self, name: &str) -> Result<TerminalId, ScenarioError> {
        self.site
            .terminal_id(name)
            .ok_or_else(|| ScenarioError::UndefinedReference(format!("terminal `{name}`")))
    }

    fn card(&self, name: &str) -> Result<TagUid, ScenarioError> {
        self.site
            .card_uid(name)
            .ok_or_else(|| ScenarioError::UndefinedReference(format!("card `{name}`")))
    }

    fn present(&mut self, p: &PresentStep) -> Result<(), ScenarioError> {
        let id = self.terminal(&p.terminal)?;
        let cards = p
            .all_cards()
            .into_iter()
            .map(|c| Ok((self.card(c)?, p.distance_cm)))
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let now = self.now();
        for read in self.site.present(id, &cards)? {
            let card = self.site.card_name(read.uid);
            match read.decision {
                Some(d) => self.line(now, format_args!("DECISION {} {card} {d}", p.terminal)),
                None => self.line(
                    now,
                    format_args!("NOREAD {} {card} distance={}", p.terminal, read.distance_cm),
                ),
            }
            self.decisions.push(Decision {
                at: now,
                terminal: id,
                uid: read.uid,
                decision: read.decision,
            });
        }
        Ok(())
    }

    fn door(&mut self, terminal: &str, state: DoorSpec) -> Result<(), ScenarioError> {
        let id = self.terminal(terminal)?;
        let sensor = match state {
            DoorSpec::Open => DoorSensor::Open,
            DoorSpec::Closed => DoorSensor::Closed,
        };
        self.site.set_door(id, sensor)
    }

    fn poll(&mut self, target: &str) {
        let ids: Vec<TerminalId> = if target == "all" {
            self.site.terminal_ids().collect()
        } else {
            self.site.terminal_id(target).into_iter().collect()
        };
        let now = self.now();
        for id in ids {
            let name = self.site.terminal_name(id);
            let events_before = self.coordinator.events().len();
            let alarms_before = self.coordinator.alarms().len();
            let result = self.coordinator.poll_terminal(self.site.network_mut(), id, now);
            let ingested = self.coordinator.events().len() - events_before;
            match result {
                Ok(_) => self.line(now, format_args!("POLL {name} ingested={ingested}")),
                Err(e) => self.line(now, format_args!("POLL {name} ingested={ingested} failed: {e}")),
            }
            let alarms: Vec<_> = self.coordinator.alarms()[alarms_before..].to_vec();
            for a in alarms {
                let at = self.site.terminal_name(a.event.terminal);
                self.line(
                    now,
                    format_args!(
                        "ALARM id={} rule={} {at} {} seq={}",
                        a.id, a.rule_id, a.event.kind, a.event.seq
                    ),
                );
            }
            // outbox flushes can make terminals record events
            self.flush_events();
        }
    }

    fn debit(&mut self, d: &DebitStep) {
        let now = self.now();
        let uid = self.site.card_uid(&d.card).expect("validated reference");
        match self.site.debit(&self.coordinator, uid, &d.field, d.cents) {
            Ok(balance) => self.line(
                now,
                format_args!(
                    "DEBIT {} {} {} cents={} balance={balance}",
                    d.terminal, d.card, d.field, d.cents
                ),
            ),
            Err(e) => self.line(
                now,
                format_args!(
                    "DEBIT {} {} {} cents={} failed: {e}",
                    d.terminal, d.card, d.field, d.cents
                ),
            ),
        }
    }

    fn link(&mut self, l: &LinkStep) -> Result<(), ScenarioError> {
        let now = self.now();
        let bus = self.site.network_mut().bus_mut(l.bus)?;
        if let Some(c) = l.connected {
            bus.set_connected(c);
        }
        if let Some(p) = l.loss_prob {
            let corrupt = bus.config().corrupt_prob;
            bus.set_fault_model(p, corrupt);
        }
        let (connected, loss) = (bus.is_connected(), bus.config().loss_prob);
        self.line(
            now,
            format_args!("LINK bus={} connected={connected} loss={loss}", l.bus),
        );
        Ok(())
    }

    fn admin(&mut self, a: &AdminStep) {
        let now = self.now();
        let (what, outcome) = match self.admin_op(a, now) {
            Ok((what, detail)) => (what, detail),
            Err((what, e)) => (what, format!("failed: {e}")),
        };
        self.line(now, format_args!("ADMIN {what} {outcome}"));
    }

    fn admin_op(&mut self, a: &AdminStep, now: u64) -> Result<(String, String), (String, ScenarioError)> {
        let c = &mut self.coordinator;
        let site = &mut self.site;
        let uid = |name: &str| site.card_uid(name).expect("validated reference");
        let tid = |name: &str| site.terminal_id(name).expect("validated reference");
        let fail = |what: &String| {
            let what = what.clone();
            move |e: campus_coordinator::CoordError| (what, ScenarioError::from(e))
        };
        match a {
            AdminStep::Lock { card } | AdminStep::Unlock { card } => {
                let locking = matches!(a, AdminStep::Lock { .. });
                let what = format!("{} {card}", if locking { "lock" } else { "unlock" });
                let u = uid(card);
                let ack = if locking {
                    c.lock_card(RUNNER_ADMIN, u, site.network_mut(), now)
                } else {
                    c.unlock_card(RUNNER_ADMIN, u, site.network_mut(), now)
                }
                .map_err(fail(&what))?;
                let detail = format!(
                    "changed={} delivered={} deferred={}",
                    ack.changed,
                    ack.delivered.len(),
                    ack.deferred.len()
                );
                Ok((what, detail))
            }
            AdminStep::AssignRights {
                card,
                gates,
                schedule,
                at_reader,
            } => {
                let what = format!("assign_rights {card}");
                let u = uid(card);
                let mask = gate_mask(gates).expect("validated gates");
                let schedule = schedule.to_schedule().expect("validated schedule");
                let mut image = site.card_image(u).cloned();
                let reader = if *at_reader { image.as_mut() } else { None };
                let plan = c
                    .assign_rights(RUNNER_ADMIN, u, mask, &schedule, reader, site.network_mut(), now)
                    .map_err(fail(&what))?;
                let detail = match plan {
                    WritePlan::Immediate => {
                        *site.card_image_mut(u).expect("card in wallet") = image.expect("card in wallet");
                        "immediate".to_owned()
                    }
                    WritePlan::Queued(q) => {
                        let delivered = q
                            .iter()
                            .filter(|w| w.delivery == campus_coordinator::Delivery::Delivered)
                            .count();
                        format!("queued={} delivered={delivered}", q.len())
                    }
                };
                Ok((what, detail))
            }
            AdminStep::UnlockBrief { terminal } => {
                let what = format!("unlock_brief {terminal}");
                c.unlock_brief(RUNNER_ADMIN, tid(terminal), site.network_mut())
                    .map_err(fail(&what))?;
                Ok((what, "ok".into()))
            }
            AdminStep::UnlockUntil { terminal, until_s } => {
                let what = format!("unlock_until {terminal} until={until_s}");
                c.unlock_until(
                    RUNNER_ADMIN,
                    tid(terminal),
                    self.start + until_s,
                    site.network_mut(),
                    now,
                )
                .map_err(fail(&what))?;
                Ok((what, "ok".into()))
            }
            AdminStep::SetMode {
                terminal,
                mode,
                holders,
            } => {
                let what = format!("set_mode {terminal} {mode:?}").to_lowercase();
                let mode = match mode {
                    ModeSpec::Normal => TerminalMode::Normal,
                    ModeSpec::Category => {
                        let types: Vec<_> = holders.iter().map(|h| (*h).into()).collect();
                        TerminalMode::Category(HolderSet::of(&types))
                    }
                };
                c.set_mode(RUNNER_ADMIN, tid(terminal), mode, site.network_mut(), now)
                    .map_err(fail(&what))?;
                Ok((what, "ok".into()))
            }
            AdminStep::AckAlarm { id } => {
                let what = format!("ack_alarm {id}");
                c.acknowledge_alarm(RUNNER_ADMIN, *id, now).map_err(fail(&what))?;
                Ok((what, "ok".into()))
            }
        }
    }
}
