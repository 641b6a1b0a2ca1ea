use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use campus_tag::TagUid;
use campus_terminal::EventKind;
use serde::Serialize;

use crate::error::{CoordError, Result};
use crate::model::{CardRegistryEntry, StoredEvent};

pub const CSV_HEADER: &str = "seq,terminal,gate,ts,uid,personal_id,kind,detail";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PersonFilter {
    PersonalId(u32),
    Uid(TagUid),
}

impl FromStr for PersonFilter {
    type Err = String;

    /// A card uid (16 hex digits, optional `0x`) or a decimal personal id.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Ok(pid) = s.parse::<u32>() {
            return Ok(PersonFilter::PersonalId(pid));
        }
        s.parse::<TagUid>()
            .map(PersonFilter::Uid)
            .map_err(|_| format!("`{s}` is neither a personal id nor a card uid"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SortKey {
    #[default]
    Ts,
    Gate,
    Person,
    Kind,
}

impl FromStr for SortKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ts" => Ok(SortKey::Ts),
            "gate" => Ok(SortKey::Gate),
            "person" => Ok(SortKey::Person),
            "kind" => Ok(SortKey::Kind),
            _ => Err(format!("unknown sort key `{s}` (ts, gate, person, kind)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Csv,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" | "json-lines" => Ok(ReportFormat::JsonLines),
            _ => Err(format!("unknown format `{s}` (csv, jsonl)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportQuery {
    pub gates: Option<BTreeSet<u8>>,
    /// Inclusive bounds on the event timestamp.
    pub from: Option<u64>,
    pub to: Option<u64>,
    pub person: Option<PersonFilter>,
    pub kinds: Option<BTreeSet<EventKind>>,
    pub sort: SortKey,
    pub descending: bool,
    pub format: ReportFormat,
}

impl ReportQuery {
    pub fn validate(&self) -> Result<()> {
        match (self.from, self.to) {
            (Some(from), Some(to)) if from > to => Err(CoordError::BadRange { from, to }),
            _ => Ok(()),
        }
    }
}

#[derive(Serialize)]
struct Row<'a> {
    seq: u32,
    terminal: String,
    gate: u8,
    ts: u64,
    uid: Option<String>,
    personal_id: Option<u32>,
    kind: &'a str,
    detail: u16,
}

pub(crate) fn run(
    q: &ReportQuery,
    events: &[StoredEvent],
    cards: &BTreeMap<TagUid, CardRegistryEntry>,
) -> Result<Vec<u8>> {
    q.validate()?;
    let pid = |e: &StoredEvent| e.uid.and_then(|u| cards.get(&u)).map(|c| c.personal_id);
    let mut rows: Vec<&StoredEvent> = events
        .iter()
        .filter(|e| q.gates.as_ref().is_none_or(|g| g.contains(&e.gate)))
        .filter(|e| q.from.is_none_or(|f| e.ts >= f) && q.to.is_none_or(|t| e.ts <= t))
        .filter(|e| q.kinds.as_ref().is_none_or(|k| k.contains(&e.kind)))
        .filter(|e| match q.person {
            None => true,
            Some(PersonFilter::Uid(u)) => e.uid == Some(u),
            Some(PersonFilter::PersonalId(p)) => pid(e) == Some(p),
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = match q.sort {
            SortKey::Ts => a.ts.cmp(&b.ts),
            SortKey::Gate => a.gate.cmp(&b.gate),
            SortKey::Person => (pid(a), a.uid).cmp(&(pid(b), b.uid)),
            SortKey::Kind => a.kind.code().cmp(&b.kind.code()),
        };
        let key = if q.descending { key.reverse() } else { key };
        key.then_with(|| (a.terminal, a.seq).cmp(&(b.terminal, b.seq)))
    });

    let mut out = String::new();
    if q.format == ReportFormat::Csv {
        out.push_str(CSV_HEADER);
        out.push('\n');
    }
    for e in rows {
        let uid = e.uid.map(|u| u.to_string());
        let personal_id = pid(e);
        match q.format {
            ReportFormat::Csv => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    e.seq,
                    e.terminal,
                    e.gate,
                    e.ts,
                    uid.as_deref().unwrap_or(""),
                    personal_id.map(|p| p.to_string()).unwrap_or_default(),
                    e.kind.name(),
                    e.detail
                );
            }
            ReportFormat::JsonLines => {
                let row = Row {
                    seq: e.seq,
                    terminal: e.terminal.to_string(),
                    gate: e.gate,
                    ts: e.ts,
                    uid,
                    personal_id,
                    kind: e.kind.name(),
                    detail: e.detail,
                };
                out.push_str(&serde_json::to_string(&row).expect("row serializes"));
                out.push('\n');
            }
        }
    }
    Ok(out.into_bytes())
}
