//! Simulated field hardware: terminals on their buses, the cards people
//! carry, reader fields and door contacts.

use std::collections::BTreeMap;

use campus_bus::{inventory, Bus, BusConfig, FieldPresence, Network, TerminalId};
use campus_coordinator::Coordinator;
use campus_tag::v1::{self, CardRecord};
use campus_tag::{apply_transaction, decode_field, sign_card, ReaderFieldModel, TagImage, TagUid};
use campus_terminal::{AccessDecision, DoorSensor, EventRecord, Password, Terminal, TerminalConfig};

use crate::scenario::{gate_mask, CardSpec, Scenario, ScenarioError};

/// One card presented to a reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Read {
    pub uid: TagUid,
    pub distance_cm: u16,
    /// `None` when the reader did not inventory the card.
    pub decision: Option<AccessDecision>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub name: String,
    pub uid: TagUid,
    pub personal_id: u32,
    /// False when the card was already in the registry and only re-read.
    pub issued: bool,
}

#[derive(Debug)]
pub struct Site {
    network: Network,
    ids: BTreeMap<String, TerminalId>,
    names: BTreeMap<TerminalId, String>,
    readers: BTreeMap<TerminalId, ReaderFieldModel>,
    cards: BTreeMap<String, TagUid>,
    holders: BTreeMap<TagUid, String>,
    wallet: BTreeMap<TagUid, TagImage>,
    now: u64,
}

pub fn card_record(c: &CardSpec) -> Result<CardRecord, ScenarioError> {
    let mut r = CardRecord::new(c.personal_id, c.holder.into(), c.expiry);
    r.gates = gate_mask(&c.gates).map_err(ScenarioError::Invalid)?;
    r.schedule = c.schedule.to_schedule().map_err(ScenarioError::Invalid)?;
    r.meal_plan = c.meal_plan;
    r.restaurant_cents = c.restaurant_cents;
    r.service_cents = c.service_cents;
    Ok(r)
}

impl Site {
    /// Builds the hardware described by `scenario`, installs its terminals
    /// and issues its cards at `now`. A holder who already has an active
    /// card keeps it: the card is re-created from the registry.
    pub fn build(
        scenario: &Scenario,
        coordinator: &mut Coordinator,
        actor: &str,
        now: u64,
    ) -> Result<(Self, Vec<Registration>), ScenarioError> {
        let key = coordinator.system_key();
        let bus_count = scenario
            .terminals
            .iter()
            .map(|t| t.bus as usize + 1)
            .max()
            .unwrap_or(0)
            .max(scenario.buses.len());
        let mut per_bus: Vec<Vec<Terminal>> = vec![Vec::new(); bus_count];
        let mut site = Site {
            network: Network::default(),
            ids: BTreeMap::new(),
            names: BTreeMap::new(),
            readers: BTreeMap::new(),
            cards: BTreeMap::new(),
            holders: BTreeMap::new(),
            wallet: BTreeMap::new(),
            now,
        };

        for t in &scenario.terminals {
            let id = TerminalId::new(t.bus, t.address);
            let password = Password::from_text(&t.password);
            let mut cfg = TerminalConfig::new(t.address, t.gate, password);
            if let Some(s) = t.strike_release_s {
                cfg.strike_release_s = s;
            }
            if let Some(s) = t.door_open_timeout_s {
                cfg.door_open_timeout_s = s;
            }
            let mut terminal = Terminal::new(cfg, key.clone())?;
            terminal.enable_trace();
            if let Some(info) = coordinator.terminal(id) {
                terminal.resume_sequence(info.high_water);
            }
            let known = coordinator.terminal(id).map(|i| (i.gate_id, i.password));
            if known != Some((t.gate, Some(password))) {
                coordinator.install_terminal(actor, id, t.gate, password, now)?;
            }
            let reader = ReaderFieldModel::new(
                t.range_cm.unwrap_or(ReaderFieldModel::default().range_cm()),
                t.capacity.unwrap_or(ReaderFieldModel::default().capacity()),
            )
            .ok_or_else(|| ScenarioError::Invalid(format!("terminal `{}`: reader range or capacity", t.name)))?;
            per_bus[t.bus as usize].push(terminal);
            site.ids.insert(t.name.clone(), id);
            site.names.insert(id, t.name.clone());
            site.readers.insert(id, reader);
        }

        let mut buses = Vec::with_capacity(bus_count);
        for (b, terminals) in per_bus.into_iter().enumerate() {
            let spec = scenario.buses.get(b).cloned().unwrap_or_default();
            let config = BusConfig {
                loss_prob: spec.loss_prob,
                corrupt_prob: spec.corrupt_prob,
                rng_seed: scenario.seed.wrapping_mul(31).wrapping_add(b as u64),
                ..BusConfig::default()
            };
            buses.push(Bus::new(config, terminals)?);
        }
        site.network = Network::new(buses);
        site.network.set_time(now);

        let mut registrations = Vec::new();
        for c in &scenario.cards {
            let record = card_record(c)?;
            let active = coordinator
                .cards()
                .find(|e| e.personal_id == c.personal_id && !e.locked)
                .cloned();
            let (uid, image, issued) = match active {
                Some(entry) if entry.layout_id == v1::LAYOUT_ID => {
                    let mut record = record;
                    record.issue_number = entry.issue_number;
                    record.gates = entry.gates;
                    record.schedule = entry.schedule;
                    let image = record.write(&TagImage::blank(entry.uid))?;
                    (entry.uid, sign_card(&key, &image), false)
                }
                Some(entry) => {
                    return Err(ScenarioError::Invalid(format!(
                        "card `{}`: holder already has a layout {} card",
                        c.name, entry.layout_id
                    )))
                }
                None => {
                    let (uid, image) = coordinator.register_card(actor, &record, v1::LAYOUT_ID, now)?;
                    (uid, image, true)
                }
            };
            site.cards.insert(c.name.clone(), uid);
            site.holders.insert(uid, c.name.clone());
            site.wallet.insert(uid, image);
            registrations.push(Registration {
                name: c.name.clone(),
                uid,
                personal_id: c.personal_id,
                issued,
            });
        }
        Ok((site, registrations))
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn terminal_ids(&self) -> impl Iterator<Item = TerminalId> + '_ {
        self.names.keys().copied()
    }

    pub fn terminal_id(&self, name: &str) -> Option<TerminalId> {
        self.ids.get(name).copied()
    }

    /// Scenario name of a terminal, or its `bus:addr` id.
    pub fn terminal_name(&self, id: TerminalId) -> String {
        self.names.get(&id).cloned().unwrap_or_else(|| id.to_string())
    }

    pub fn card_uid(&self, name: &str) -> Option<TagUid> {
        self.cards.get(name).copied()
    }

    /// Holder name of a card, or its uid.
    pub fn card_name(&self, uid: TagUid) -> String {
        self.holders.get(&uid).cloned().unwrap_or_else(|| uid.to_string())
    }

    /// Hands a newly issued card to its holder.
    pub fn add_card(&mut self, name: &str, uid: TagUid, image: TagImage) {
        self.cards.insert(name.to_owned(), uid);
        self.holders.insert(uid, name.to_owned());
        self.wallet.insert(uid, image);
    }

    pub fn card_image(&self, uid: TagUid) -> Option<&TagImage> {
        self.wallet.get(&uid)
    }

    pub fn card_image_mut(&mut self, uid: TagUid) -> Option<&mut TagImage> {
        self.wallet.get_mut(&uid)
    }

    pub fn wallet(&self) -> &BTreeMap<TagUid, TagImage> {
        &self.wallet
    }

    /// Runs every terminal's door model up to `now`, stopping at each strike
    /// and door-open deadline on the way.
    pub fn advance_to(&mut self, now: u64) {
        let from = self.now;
        let now = now.max(from);
        for id in self.names.keys() {
            let t = self.network.terminal_mut(*id).expect("site terminal on its bus");
            while let Some(deadline) = t.next_deadline().filter(|d| *d <= now) {
                let sensor = t.sensor();
                t.tick(deadline.max(from), sensor).expect("site time is monotone");
                if t.next_deadline() == Some(deadline) {
                    break;
                }
            }
        }
        self.now = now;
        self.network.set_time(now);
    }

    /// Sets a door contact. The resulting events show up in [`Site::take_events`].
    pub fn set_door(&mut self, id: TerminalId, sensor: DoorSensor) -> Result<(), ScenarioError> {
        let now = self.now;
        let t = self
            .network
            .terminal_mut(id)
            .ok_or_else(|| ScenarioError::UndefinedReference(format!("terminal {id}")))?;
        t.tick(now, sensor)?;
        Ok(())
    }

    /// Brings `cards` into the reader field of `id` together, lets the reader
    /// inventory them and processes each card it sees. The field is empty again
    /// afterwards.
    pub fn present(&mut self, id: TerminalId, cards: &[(TagUid, u16)]) -> Result<Vec<Read>, ScenarioError> {
        let reader = *self
            .readers
            .get(&id)
            .ok_or_else(|| ScenarioError::UndefinedReference(format!("terminal {id}")))?;
        let mut field = FieldPresence::new();
        for (uid, distance) in cards {
            if !self.wallet.contains_key(uid) {
                return Err(ScenarioError::UndefinedReference(format!("card {uid}")));
            }
            field.place(*uid, *distance);
        }
        let seen = inventory(&field, &reader);
        let now = self.now;
        let terminal = self.network.terminal_mut(id).expect("site terminal on its bus");
        let mut reads = Vec::with_capacity(cards.len());
        for (uid, distance_cm) in cards {
            let decision = if seen.contains(uid) {
                let image = self.wallet.get_mut(uid).expect("checked above");
                let read = terminal.on_tag_read(image, now);
                *image = read.image;
                Some(read.decision)
            } else {
                None
            };
            reads.push(Read {
                uid: *uid,
                distance_cm: *distance_cm,
                decision,
            });
        }
        Ok(reads)
    }

    /// Charges `cents` to an account field at a point-of-sale reader and
    /// re-signs the card. Returns the new balance.
    pub fn debit(
        &mut self,
        coordinator: &Coordinator,
        uid: TagUid,
        field: &str,
        cents: u32,
    ) -> Result<u64, ScenarioError> {
        let image = self
            .wallet
            .get(&uid)
            .ok_or_else(|| ScenarioError::UndefinedReference(format!("card {uid}")))?;
        let layout_id = u16::from_le_bytes([image.bytes()[0], image.bytes()[1]]);
        let layout = coordinator.layout(layout_id)?;
        let debited = apply_transaction(&layout, image, field, -i64::from(cents))?;
        let balance = decode_field(&layout, &debited, field)?.as_money().unwrap_or_default();
        self.wallet.insert(uid, sign_card(&coordinator.system_key(), &debited));
        Ok(balance)
    }

    /// Events recorded by any terminal since the last call, in time order
    /// (ties by terminal, then sequence).
    pub fn take_events(&mut self) -> Vec<(TerminalId, EventRecord)> {
        let mut out = Vec::new();
        for id in self.names.keys() {
            let t = self.network.terminal_mut(*id).expect("site terminal on its bus");
            out.extend(t.take_trace().into_iter().map(|e| (*id, e)));
        }
        out.sort_by_key(|(id, e)| (e.ts, *id, e.seq));
        out
    }
}
