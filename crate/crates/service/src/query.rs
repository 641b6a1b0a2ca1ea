//! Report filters as text flags, shared by `campus report` and `GET /v1/events`.

use std::collections::BTreeSet;

use campus_coordinator::{PersonFilter, ReportFormat, ReportQuery, SortKey};
use campus_terminal::EventKind;
use chrono::DateTime;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct ReportFlags {
    /// Earliest event time, inclusive: unix seconds or RFC 3339
    #[arg(long)]
    pub from: Option<String>,
    /// Latest event time, inclusive: unix seconds or RFC 3339
    #[arg(long)]
    pub to: Option<String>,
    /// Comma-separated gate ids
    #[arg(long)]
    pub gate: Option<String>,
    /// Personal id (decimal) or card uid (16 hex digits)
    #[arg(long)]
    pub person: Option<String>,
    /// Comma-separated event kinds, e.g. ACCESS_DENIED,DOOR_FORCED
    #[arg(long)]
    pub kind: Option<String>,
    /// ts, gate, person or kind
    #[arg(long)]
    pub sort: Option<String>,
    /// Sort descending
    #[arg(long)]
    pub desc: bool,
    /// csv or jsonl
    #[arg(long)]
    pub format: Option<String>,
}

fn parse_time(s: &str) -> Result<u64, String> {
    if let Ok(t) = s.parse::<u64>() {
        return Ok(t);
    }
    DateTime::parse_from_rfc3339(s)
        .ok()
        .and_then(|d| u64::try_from(d.timestamp()).ok())
        .ok_or_else(|| format!("`{s}` is neither unix seconds nor an RFC 3339 time"))
}

fn list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty())
}

impl ReportFlags {
    pub fn to_query(&self) -> Result<ReportQuery, String> {
        let gates = self
            .gate
            .as_deref()
            .map(|g| {
                list(g)
                    .map(|p| match p.parse::<u8>() {
                        Ok(n) if n <= 63 => Ok(n),
                        _ => Err(format!("bad gate `{p}`")),
                    })
                    .collect::<Result<BTreeSet<u8>, String>>()
            })
            .transpose()?;
        let kinds = self
            .kind
            .as_deref()
            .map(|k| {
                list(k)
                    .map(|p| {
                        EventKind::from_name(&p.to_ascii_uppercase()).ok_or_else(|| format!("unknown event kind `{p}`"))
                    })
                    .collect::<Result<BTreeSet<EventKind>, String>>()
            })
            .transpose()?;
        Ok(ReportQuery {
            gates,
            from: self.from.as_deref().map(parse_time).transpose()?,
            to: self.to.as_deref().map(parse_time).transpose()?,
            person: self.person.as_deref().map(str::parse::<PersonFilter>).transpose()?,
            kinds,
            sort: self
                .sort
                .as_deref()
                .map(str::parse::<SortKey>)
                .transpose()?
                .unwrap_or_default(),
            descending: self.desc,
            format: self
                .format
                .as_deref()
                .map(str::parse::<ReportFormat>)
                .transpose()?
                .unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_to_query() {
        let f = ReportFlags {
            from: Some("2026-10-12T00:00:00Z".into()),
            to: Some("1791849600".into()),
            gate: Some("3, 1".into()),
            person: Some("1001".into()),
            kind: Some("access_denied,DOOR_FORCED".into()),
            sort: Some("gate".into()),
            desc: true,
            format: Some("jsonl".into()),
        };
        let q = f.to_query().unwrap();
        assert_eq!(q.from, Some(1_791_763_200));
        assert_eq!(q.to, Some(1_791_849_600));
        assert_eq!(q.gates, Some(BTreeSet::from([1, 3])));
        assert_eq!(q.person, Some(PersonFilter::PersonalId(1001)));
        assert_eq!(
            q.kinds,
            Some(BTreeSet::from([EventKind::AccessDenied, EventKind::DoorForced]))
        );
        assert_eq!(
            (q.sort, q.descending, q.format),
            (SortKey::Gate, true, ReportFormat::JsonLines)
        );
        assert_eq!(ReportFlags::default().to_query().unwrap(), ReportQuery::default());
    }

    #[test]
    fn bad_flags() {
        for f in [
            ReportFlags {
                gate: Some("64".into()),
                ..Default::default()
            },
            ReportFlags {
                kind: Some("OPENED".into()),
                ..Default::default()
            },
            ReportFlags {
                from: Some("yesterday".into()),
                ..Default::default()
            },
            ReportFlags {
                sort: Some("name".into()),
                ..Default::default()
            },
            ReportFlags {
                format: Some("xml".into()),
                ..Default::default()
            },
            ReportFlags {
                person: Some("bob".into()),
                ..Default::default()
            },
        ] {
            assert!(f.to_query().is_err(), "{f:?}");
        }
    }
}
