//! Minimal iCalendar (RFC 5545) subset: one VCALENDAR holding one VEVENT.
//! Times are always written in UTC with a trailing `Z`.

use chrono::{NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Timestamp;

const PRODID: &str = "-//meetsched//scheduling agent//EN";
const MAX_LINE_OCTETS: usize = 75;
const STAMP_FORMAT: &str = "%Y%m%dT%H%M%SZ";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IcsError {
    #[error("invitation must end after it starts")]
    InvalidInvitation,
    #[error("malformed calendar document: {0}")]
    MalformedDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InvitationMethod {
    Request,
    Cancel,
}

impl InvitationMethod {
    fn as_ics(self) -> &'static str {
        match self {
            InvitationMethod::Request => "REQUEST",
            InvitationMethod::Cancel => "CANCEL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invitation {
    pub uid: String,
    pub start: Timestamp,
    pub end: Timestamp,
    pub summary: String,
    pub organizer: String,
    pub attendees: Vec<String>,
    pub method: InvitationMethod,
}

impl Invitation {
    pub fn validate(&self) -> Result<(), IcsError> {
        if self.end <= self.start {
            return Err(IcsError::InvalidInvitation);
        }
        let clean = |s: &str| !s.is_empty() && !s.chars().any(char::is_control);
        if !clean(&self.uid)
            || !clean(&self.organizer)
            || !self.attendees.iter().all(|a| clean(a))
            || self.summary.chars().any(|c| c.is_control() && c != '\n')
        {
            return Err(IcsError::InvalidInvitation);
        }
        Ok(())
    }

    pub fn duration_minutes(&self) -> i64 {
        (self.end - self.start).num_minutes()
    }
}

fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ';' => out.push_str("\\;"),
            ',' => out.push_str("\\,"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out
}

fn unescape_text(s: &str) -> Result<String, IcsError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some(';') => out.push(';'),
            Some(',') => out.push(','),
            Some('n') | Some('N') => out.push('\n'),
            other => {
                return Err(IcsError::MalformedDocument(format!("bad escape \\{}", other.unwrap_or(' '))))
            }
        }
    }
    Ok(out)
}

/// Folds a content line at 75 octets without splitting a UTF-8 sequence.
fn push_folded(out: &mut String, line: &str) {
    let mut width = 0;
    for c in line.chars() {
        let n = c.len_utf8();
        if width + n > MAX_LINE_OCTETS {
            out.push_str("\r\n ");
            width = 1;
        }
        out.push(c);
        width += n;
    }
    out.push_str("\r\n");
}

fn stamp(t: &Timestamp) -> String {
    t.format(STAMP_FORMAT).to_string()
}

pub fn render_invitation(inv: &Invitation) -> Result<String, IcsError> {
    inv.validate()?;
    let mut out = String::new();
    let mut line = |s: String| push_folded(&mut out, &s);
    line("BEGIN:VCALENDAR".into());
    line("VERSION:2.0".into());
    line(format!("PRODID:{PRODID}"));
    line(format!("METHOD:{}", inv.method.as_ics()));
    line("BEGIN:VEVENT".into());
    line(format!("UID:{}", escape_text(&inv.uid)));
    line(format!("DTSTAMP:{}", stamp(&inv.start)));
    line(format!("DTSTART:{}", stamp(&inv.start)));
    line(format!("DTEND:{}", stamp(&inv.end)));
    line(format!("SUMMARY:{}", escape_text(&inv.summary)));
    line(format!("ORGANIZER:mailto:{}", inv.organizer));
    for a in &inv.attendees {
        line(format!("ATTENDEE:mailto:{a}"));
    }
    if inv.method == InvitationMethod::Cancel {
        line("STATUS:CANCELLED".into());
    }
    line("END:VEVENT".into());
    line("END:VCALENDAR".into());
    Ok(out)
}

fn unfold(text: &str) -> Result<Vec<String>, IcsError> {
    let mut lines: Vec<String> = Vec::new();
    for raw in text.split("\r\n") {
        if let Some(cont) = raw.strip_prefix(' ').or_else(|| raw.strip_prefix('\t')) {
            match lines.last_mut() {
                Some(prev) => prev.push_str(cont),
                None => return Err(IcsError::MalformedDocument("continuation before first line".into())),
            }
        } else if !raw.is_empty() {
            lines.push(raw.to_string());
        }
    }
    Ok(lines)
}

fn parse_stamp(v: &str) -> Result<Timestamp, IcsError> {
    let naive = NaiveDateTime::parse_from_str(v, STAMP_FORMAT)
        .map_err(|e| IcsError::MalformedDocument(format!("bad UTC time {v:?}: {e}")))?;
    Ok(Utc.from_utc_datetime(&naive))
}

fn mailto(v: &str) -> String {
    let lower = v.to_ascii_lowercase();
    if lower.starts_with("mailto:") {
        v[7..].to_string()
    } else {
        v.to_string()
    }
}

pub fn parse_invitation(text: &str) -> Result<Invitation, IcsError> {
    let lines = unfold(text)?;
    let mut depth: Vec<String> = Vec::new();
    let mut seen_calendar = false;
    let mut events = 0;
    let mut method = None;
    let mut uid = None;
    let mut start = None;
    let mut end = None;
    let mut summary = None;
    let mut organizer = None;
    let mut attendees = Vec::new();

    for line in &lines {
        let (head, value) = line
            .split_once(':')
            .ok_or_else(|| IcsError::MalformedDocument(format!("line without ':' {line:?}")))?;
        // Parameters (";TZID=..." etc.) are outside the supported subset; keep the name only.
        let name = head.split(';').next().unwrap_or(head).to_ascii_uppercase();
        match name.as_str() {
            "BEGIN" => {
                match value {
                    "VCALENDAR" if depth.is_empty() && !seen_calendar => seen_calendar = true,
                    "VEVENT" if depth.len() == 1 => events += 1,
                    other => return Err(IcsError::MalformedDocument(format!("unexpected BEGIN:{other}"))),
                }
                depth.push(value.to_string());
            }
            "END" => match depth.pop() {
                Some(open) if open == value => {}
                _ => return Err(IcsError::MalformedDocument(format!("unbalanced END:{value}"))),
            },
            "METHOD" if depth.len() == 1 => {
                method = Some(match value.to_ascii_uppercase().as_str() {
                    "REQUEST" => InvitationMethod::Request,
                    "CANCEL" => InvitationMethod::Cancel,
                    other => return Err(IcsError::MalformedDocument(format!("unsupported METHOD {other}"))),
                })
            }
            "UID" if depth.len() == 2 => uid = Some(unescape_text(value)?),
            "DTSTART" if depth.len() == 2 => start = Some(parse_stamp(value)?),
            "DTEND" if depth.len() == 2 => end = Some(parse_stamp(value)?),
            "SUMMARY" if depth.len() == 2 => summary = Some(unescape_text(value)?),
            "ORGANIZER" if depth.len() == 2 => organizer = Some(mailto(value)),
            "ATTENDEE" if depth.len() == 2 => attendees.push(mailto(value)),
            _ => {}
        }
    }
    if !depth.is_empty() {
        return Err(IcsError::MalformedDocument("unterminated component".into()));
    }
    if !seen_calendar || events != 1 {
        return Err(IcsError::MalformedDocument(format!("expected one VEVENT, found {events}")));
    }
    let missing = |f: &str| IcsError::MalformedDocument(format!("missing {f}"));
    let inv = Invitation {
        uid: uid.ok_or_else(|| missing("UID"))?,
        start: start.ok_or_else(|| missing("DTSTART"))?,
        end: end.ok_or_else(|| missing("DTEND"))?,
        summary: summary.ok_or_else(|| missing("SUMMARY"))?,
        organizer: organizer.ok_or_else(|| missing("ORGANIZER"))?,
        attendees,
        method: method.ok_or_else(|| missing("METHOD"))?,
    };
    inv.validate()?;
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;
    use proptest::prelude::*;

    fn sample() -> Invitation {
        let start = Utc.with_ymd_and_hms(2016, 4, 5, 17, 0, 0).unwrap();
        Invitation {
            uid: "req-1@calendar.help".into(),
            start,
            end: start + Duration::minutes(30),
            summary: "Coffee chat".into(),
            organizer: "bob@x.org".into(),
            attendees: vec!["alice@x.org".into()],
            method: InvitationMethod::Request,
        }
    }

    #[test]
    fn renders_utc_times() {
        let text = render_invitation(&sample()).unwrap();
        assert!(text.contains("DTSTART:20160405T170000Z\r\n"));
        assert!(text.contains("DTEND:20160405T173000Z\r\n"));
        assert!(text.contains("METHOD:REQUEST\r\n"));
        assert!(text.contains("ATTENDEE:mailto:alice@x.org\r\n"));
        assert_eq!(text.matches("BEGIN:VEVENT").count(), 1);
        assert!(text.split("\r\n").all(|l| l.len() <= MAX_LINE_OCTETS));
    }

    #[test]
    fn cancel_method() {
        let mut inv = sample();
        inv.method = InvitationMethod::Cancel;
        let text = render_invitation(&inv).unwrap();
        assert!(text.contains("METHOD:CANCEL\r\n"));
        assert_eq!(parse_invitation(&text).unwrap(), inv);
    }

    #[test]
    fn empty_interval_rejected() {
        let mut inv = sample();
        inv.end = inv.start;
        assert_eq!(render_invitation(&inv), Err(IcsError::InvalidInvitation));
    }

    #[test]
    fn fixed_event_round_trip() {
        let inv = sample();
        assert_eq!(parse_invitation(&render_invitation(&inv).unwrap()).unwrap(), inv);
    }

    #[test]
    fn truncated_document_is_malformed() {
        let text = render_invitation(&sample()).unwrap();
        let cut: String = text.split("\r\n").filter(|l| !l.starts_with("DTEND")).collect::<Vec<_>>().join("\r\n");
        assert!(matches!(parse_invitation(&cut), Err(IcsError::MalformedDocument(_))));
        let half = &text[..text.len() / 2];
        assert!(matches!(parse_invitation(half), Err(IcsError::MalformedDocument(_))));
    }

    #[test]
    fn long_summary_is_folded_and_unfolded() {
        let mut inv = sample();
        inv.summary = "Quarterly planning, budget; and ünïcödé review ".repeat(6);
        let text = render_invitation(&inv).unwrap();
        assert!(text.contains("\r\n "));
        assert_eq!(parse_invitation(&text).unwrap(), inv);
    }

    pub(crate) fn arb_invitation() -> impl Strategy<Value = Invitation> {
        (
            "[a-z0-9]{1,12}@[a-z]{1,8}\\.help",
            0i64..400_000_000,
            1i64..100_000,
            "[ -~éü\\n]{0,120}",
            "[a-z]{1,10}@[a-z]{1,8}\\.org",
            proptest::collection::vec("[a-z]{1,10}@[a-z]{1,8}\\.com", 0..12),
            any::<bool>(),
        )
            .prop_map(|(uid, s, d, summary, organizer, attendees, cancel)| {
                let start = Utc.timestamp_opt(1_400_000_000 + s, 0).unwrap();
                Invitation {
                    uid,
                    start,
                    end: start + Duration::seconds(d),
                    summary,
                    organizer,
                    attendees,
                    method: if cancel { InvitationMethod::Cancel } else { InvitationMethod::Request },
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn parse_inverts_render(inv in arb_invitation()) {
            let text = render_invitation(&inv).unwrap();
            prop_assert_eq!(parse_invitation(&text).unwrap(), inv.clone());
            // render is a fixed point on its own image
            prop_assert_eq!(render_invitation(&parse_invitation(&text).unwrap()).unwrap(), text);
        }
    }
}
