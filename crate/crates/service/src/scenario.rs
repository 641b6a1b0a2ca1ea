//! Scenario files: a site (terminals, cards) plus a time-ordered script.
//!
//! ```yaml
//! seed: 7
//! start: 2026-10-12T07:00:00Z
//! duration_s: 3600
//! terminals:
//!   - { name: main, address: 1, gate: 1 }
//! cards:
//!   - { name: ana, personal_id: 1001, holder: student, expiry: 2027-06-30, gates: [1] }
//! script:
//!   - at: 60
//!     present: { card: ana, terminal: main }
//!   - poll: all
//! ```

use std::collections::BTreeSet;

use campus_tag::v1::{self, HolderType, WeekSchedule};
use campus_tag::Window;
use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("undefined reference: {0}")]
    UndefinedReference(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Coordinator(#[from] campus_coordinator::CoordError),
    #[error(transparent)]
    Bus(#[from] campus_bus::BusError),
    #[error(transparent)]
    Terminal(#[from] campus_terminal::TerminalError),
    #[error(transparent)]
    Tag(#[from] campus_tag::Error),
}

/// Seconds since the epoch, written either as a number or RFC 3339.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartTime {
    Unix(u64),
    Text(String),
}

impl StartTime {
    pub fn seconds(&self) -> Result<u64, ScenarioError> {
        match self {
            StartTime::Unix(s) => Ok(*s),
            StartTime::Text(t) => DateTime::parse_from_rfc3339(t)
                .map(|d| d.timestamp() as u64)
                .map_err(|e| ScenarioError::Parse(format!("start `{t}`: {e}"))),
        }
    }
}

impl Default for StartTime {
    /// Monday 2026-10-12 00:00 UTC.
    fn default() -> Self {
        StartTime::Unix(1_791_763_200)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub corrupt_prob: f64,
}

fn default_password() -> String {
    "gatepw".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    pub name: String,
    #[serde(default)]
    pub bus: u8,
    pub address: u8,
    pub gate: u8,
    #[serde(default = "default_password")]
    pub password: String,
    #[serde(default)]
    pub strike_release_s: Option<u32>,
    #[serde(default)]
    pub door_open_timeout_s: Option<u32>,
    #[serde(default)]
    pub range_cm: Option<u16>,
    #[serde(default)]
    pub capacity: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HolderSpec {
    Personnel,
    Student,
    Visitor,
}

impl From<HolderSpec> for HolderType {
    fn from(h: HolderSpec) -> Self {
        match h {
            HolderSpec::Personnel => HolderType::Personnel,
            HolderSpec::Student => HolderType::Student,
            HolderSpec::Visitor => HolderType::Visitor,
        }
    }
}

/// Weekly schedule: `all`, `none`, `weekdays HH:MM-HH:MM`, or seven day
/// windows Monday first, each `HH:MM-HH:MM` or `-`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Keyword(String),
    Days(Vec<String>),
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Keyword("all".into())
    }
}

fn parse_clock(s: &str) -> Result<u8, String> {
    let (h, m) = s.split_once(':').ok_or_else(|| format!("`{s}` is not HH:MM"))?;
    let h: u32 = h.parse().map_err(|_| format!("bad hour in `{s}`"))?;
    let m: u32 = m.parse().map_err(|_| format!("bad minute in `{s}`"))?;
    let minutes = h * 60 + m;
    if m >= 60 || minutes > 24 * 60 || !minutes.is_multiple_of(15) {
        return Err(format!("`{s}` is not a quarter-hour between 00:00 and 24:00"));
    }
    Ok((minutes / 15) as u8)
}

pub fn parse_window(s: &str) -> Result<Window, String> {
    let s = s.trim();
    if s == "-" {
        return Ok(Window::NONE);
    }
    let (a, b) = s.split_once('-').ok_or_else(|| format!("`{s}` is not HH:MM-HH:MM"))?;
    let (start, end) = (parse_clock(a.trim())?, parse_clock(b.trim())?);
    if start > end {
        return Err(format!("window `{s}` ends before it starts"));
    }
    Ok(Window::new(start, end))
}

impl ScheduleSpec {
    pub fn to_schedule(&self) -> Result<WeekSchedule, String> {
        match self {
            ScheduleSpec::Keyword(k) => match k.trim() {
                "all" => Ok(v1::ALL_WEEK),
                "none" => Ok(v1::NO_ACCESS),
                other => {
                    let window = other
                        .strip_prefix("weekdays")
                        .ok_or_else(|| format!("unknown schedule `{other}`"))?;
                    let w = parse_window(window)?;
                    Ok([w, w, w, w, w, Window::NONE, Window::NONE])
                }
            },
            ScheduleSpec::Days(days) => {
                if days.len() != 7 {
                    return Err(format!("schedule needs 7 days, got {}", days.len()));
                }
                let mut s = v1::NO_ACCESS;
                for (slot, d) in s.iter_mut().zip(days) {
                    *slot = parse_window(d)?;
                }
                Ok(s)
            }
        }
    }
}

pub fn gate_mask(gates: &[u8]) -> Result<u64, String> {
    gates.iter().try_fold(0u64, |acc, &g| {
        if g > 63 {
            Err(format!("gate {g} out of range 0..63"))
        } else {
            Ok(acc | 1 << g)
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardSpec {
    pub name: String,
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoorSpec {
    #[serde(alias = "OPEN")]
    Open,
    #[serde(alias = "CLOSED")]
    Closed,
}

fn default_distance() -> u16 {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresentStep {
    /// One card, or several presented together.
    #[serde(default)]
    pub card: Option<String>,
    #[serde(default)]
    pub cards: Vec<String>,
    pub terminal: String,
    #[serde(default = "default_distance")]
    pub distance_cm: u16,
}

impl PresentStep {
    pub fn all_cards(&self) -> Vec<&str> {
        self.card.iter().chain(&self.cards).map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoorStep {
    pub terminal: String,
    pub state: DoorSpec,
}

fn default_debit_field() -> String {
    v1::RESTAURANT_ACCOUNT.into()
}

/// Point-of-sale debit at a desk reader next to `terminal`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebitStep {
    pub card: String,
    pub terminal: String,
    #[serde(default = "default_debit_field")]
    pub field: String,
    pub cents: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkStep {
    pub bus: u8,
    #[serde(default)]
    pub connected: Option<bool>,
    #[serde(default)]
    pub loss_prob: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdminStep {
    Lock {
        card: String,
    },
    Unlock {
        card: String,
    },
    AssignRights {
        card: String,
        gates: Vec<u8>,
        #[serde(default)]
        schedule: ScheduleSpec,
        /// The card sits on the coordinator's desk reader.
        #[serde(default)]
        at_reader: bool,
    },
    UnlockBrief {
        terminal: String,
    },
    UnlockUntil {
        terminal: String,
        /// Seconds after scenario start.
        until_s: u64,
    },
    SetMode {
        terminal: String,
        mode: ModeSpec,
        #[serde(default)]
        holders: Vec<HolderSpec>,
    },
    AckAlarm {
        id: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Normal,
    Category,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Present(PresentStep),
    Door(DoorStep),
    Admin(AdminStep),
    /// Terminal name or `all`.
    Poll(String),
    Advance(u64),
    Debit(DebitStep),
    Link(LinkStep),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Step {
    /// Seconds after start; defaults to "now".
    #[serde(default)]
    pub at: Option<u64>,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default)]
    pub start: StartTime,
    #[serde(default)]
    pub duration_s: u64,
    #[serde(default)]
    pub buses: Vec<BusSpec>,
    #[serde(default)]
    pub terminals: Vec<TerminalSpec>,
    #[serde(default)]
    pub cards: Vec<CardSpec>,
    #[serde(default)]
    pub script: Vec<Step>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_yaml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn terminal(&self, name: &str) -> Option<&TerminalSpec> {
        self.terminals.iter().find(|t| t.name == name)
    }

    pub fn card(&self, name: &str) -> Option<&CardSpec> {
        self.cards.iter().find(|c| c.name == name)
    }

    /// Checks names, references, ranges and script ordering.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.start.seconds()?;
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        let mut names = BTreeSet::new();
        let mut addrs = BTreeSet::new();
        for t in &self.terminals {
            if !names.insert(t.name.as_str()) {
                return invalid(format!("terminal `{}` defined twice", t.name));
            }
            if t.name == "all" {
                return invalid("`all` is reserved".into());
            }
            if !addrs.insert((t.bus, t.address)) {
                return invalid(format!("bus {} address {} used twice", t.bus, t.address));
            }
            if t.gate > 63 {
                return invalid(format!("terminal `{}`: gate {} out of range", t.name, t.gate));
            }
        }
        let mut cards = BTreeSet::new();
        for c in &self.cards {
            if !cards.insert(c.name.as_str()) {
                return invalid(format!("card `{}` defined twice", c.name));
            }
            gate_mask(&c.gates).map_err(ScenarioError::Invalid)?;
            c.schedule
                .to_schedule()
                .map_err(|e| ScenarioError::Invalid(format!("card `{}`: {e}", c.name)))?;
        }
        for b in &self.buses {
            if !(0.0..=1.0).contains(&b.loss_prob) || !(0.0..=1.0).contains(&b.corrupt_prob) {
                return invalid("bus probabilities must lie in [0, 1]".into());
            }
        }

        let terminal = |n: &str| {
            if names.contains(n) {
                Ok(())
            } else {
                Err(ScenarioError::UndefinedReference(format!("terminal `{n}`")))
            }
        };
        let card = |n: &str| {
            if cards.contains(n) {
                Ok(())
            } else {
                Err(ScenarioError::UndefinedReference(format!("card `{n}`")))
            }
        };
        let bus_count = self
            .terminals
            .iter()
            .map(|t| t.bus as usize + 1)
            .max()
            .unwrap_or(0)
            .max(self.buses.len());
        let mut last_at = 0;
        for (i, step) in self.script.iter().enumerate() {
            if let Some(at) = step.at {
                if at < last_at {
                    return invalid(format!(
                        "script step {} at {at}s goes back in time (previous {last_at}s)",
                        i + 1
                    ));
                }
                last_at = at;
            }
            match &step.action {
                Action::Present(p) => {
                    terminal(&p.terminal)?;
                    if p.all_cards().is_empty() {
                        return invalid(format!("script step {}: present without a card", i + 1));
                    }
                    for c in p.all_cards() {
                        card(c)?;
                    }
                }
                Action::Door(d) => terminal(&d.terminal)?,
                Action::Poll(t) if t == "all" => {}
                Action::Poll(t) => terminal(t)?,
                Action::Advance(dt) => last_at += dt,
                Action::Debit(d) => {
                    card(&d.card)?;
                    terminal(&d.terminal)?;
                }
                Action::Link(l) => {
                    if l.bus as usize >= bus_count {
                        return Err(ScenarioError::UndefinedReference(format!("bus {}", l.bus)));
                    }
                }
                Action::Admin(a) => match a {
                    AdminStep::Lock { card: c } | AdminStep::Unlock { card: c } => card(c)?,
                    AdminStep::AssignRights {
                        card: c,
                        gates,
                        schedule,
                        ..
                    } => {
                        card(c)?;
                        gate_mask(gates).map_err(ScenarioError::Invalid)?;
                        schedule.to_schedule().map_err(ScenarioError::Invalid)?;
                    }
                    AdminStep::UnlockBrief { terminal: t }
                    | AdminStep::UnlockUntil { terminal: t, .. }
                    | AdminStep::SetMode { terminal: t, .. } => terminal(t)?,
                    AdminStep::AckAlarm { .. } => {}
                },
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_syntax() {
        assert_eq!(parse_window("08:00-18:00").unwrap(), Window::new(32, 72));
        assert_eq!(parse_window("00:00-24:00").unwrap(), Window::ALL_DAY);
        assert_eq!(parse_window("-").unwrap(), Window::NONE);
        assert!(parse_window("08:10-09:00").is_err());
        assert!(parse_window("18:00-08:00").is_err());
        assert!(parse_window("25:00-26:00").is_err());
        let wd = ScheduleSpec::Keyword("weekdays 09:00-17:00".into())
            .to_schedule()
            .unwrap();
        assert_eq!(wd[0], Window::new(36, 68));
        assert_eq!(wd[6], Window::NONE);
        assert!(ScheduleSpec::Days(vec!["-".into(); 6]).to_schedule().is_err());
    }

    #[test]
    fn minimal_and_rejected_files() {
        let s = Scenario::parse("seed: 1").unwrap();
        assert!(s.script.is_empty());
        assert!(matches!(
            Scenario::parse("seed: [").unwrap_err(),
            ScenarioError::Parse(_)
        ));
        assert!(matches!(
            Scenario::parse("seed: 1\nbogus: 2").unwrap_err(),
            ScenarioError::Parse(_)
        ));
        let undefined = "seed: 1\nscript:\n  - poll: nowhere\n";
        assert!(matches!(
            Scenario::parse(undefined).unwrap_err(),
            ScenarioError::UndefinedReference(_)
        ));
        let backwards = "seed: 1\nscript:\n  - { at: 10, advance: 0 }\n  - { at: 5, poll: all }\n";
        assert!(matches!(
            Scenario::parse(backwards).unwrap_err(),
            ScenarioError::Invalid(_)
        ));
    }

    #[test]
    fn steps_parse() {
        let text = r#"
seed: 3
start: 2026-10-12T07:00:00Z
terminals:
  - { name: main, address: 1, gate: 1 }
cards:
  - { name: ana, personal_id: 1, holder: student, expiry: 2027-06-30, gates: [1], schedule: weekdays 08:00-18:00 }
script:
  - at: 60
    present: { card: ana, terminal: main, distance_cm: 12 }
  - door: { terminal: main, state: OPEN }
  - advance: 30
  - admin: { op: lock, card: ana }
  - admin: { op: set_mode, terminal: main, mode: category, holders: [personnel] }
  - debit: { card: ana, terminal: main, cents: 250 }
  - link: { bus: 0, connected: false }
  - poll: all
"#;
        let s = Scenario::parse(text).unwrap();
        assert_eq!(s.start.seconds().unwrap(), 1_791_788_400);
        assert_eq!(s.script.len(), 8);
        assert!(matches!(&s.script[0].action, Action::Present(p) if p.distance_cm == 12));
        assert!(matches!(&s.script[1].action, Action::Door(d) if d.state == DoorSpec::Open));
        assert!(matches!(&s.script[5].action, Action::Debit(d) if d.field == "restaurant_account"));
    }
}
