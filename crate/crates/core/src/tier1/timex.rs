//! Small time-expression grammar covering durations and dates, plus the
//! heuristics that pick the meeting's duration and date out of a thread.

use std::sync::OnceLock;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::mailroom::EmailMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeKind {
    Duration,
    Date,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum TimeValue {
    Minutes(u32),
    Weekday(String),
    Today,
    Tomorrow,
    NextWeek,
    NextWeekday(String),
    MonthDay { month: u32, day: u32 },
}

impl TimeValue {
    pub fn kind(&self) -> TimeKind {
        match self {
            TimeValue::Minutes(_) => TimeKind::Duration,
            _ => TimeKind::Date,
        }
    }

    /// Calendar days `[first, last]` the expression refers to, relative to
    /// the day the message was written.
    pub fn resolve(&self, today: NaiveDate) -> Option<(NaiveDate, NaiveDate)> {
        let next_monday = today + Duration::days(7 - today.weekday().num_days_from_monday() as i64);
        match self {
            TimeValue::Minutes(_) => None,
            TimeValue::Today => Some((today, today)),
            TimeValue::Tomorrow => {
                let d = today + Duration::days(1);
                Some((d, d))
            }
            TimeValue::NextWeek => Some((next_monday, next_monday + Duration::days(6))),
            TimeValue::Weekday(name) => {
                let wd = parse_weekday(name)?;
                let ahead = (wd.num_days_from_monday() as i64 - today.weekday().num_days_from_monday() as i64 + 7) % 7;
                let d = today + Duration::days(if ahead == 0 { 7 } else { ahead });
                Some((d, d))
            }
            TimeValue::NextWeekday(name) => {
                let wd = parse_weekday(name)?;
                let d = next_monday + Duration::days(wd.num_days_from_monday() as i64);
                Some((d, d))
            }
            TimeValue::MonthDay { month, day } => {
                let this = NaiveDate::from_ymd_opt(today.year(), *month, *day)?;
                let d = if this < today { NaiveDate::from_ymd_opt(today.year() + 1, *month, *day)? } else { this };
                Some((d, d))
            }
        }
    }
}

fn parse_weekday(name: &str) -> Option<Weekday> {
    name.parse::<Weekday>().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeExpression {
    pub kind: TimeKind,
    pub value: TimeValue,
    /// Character offsets `[start, end)` into the message body.
    pub span: (usize, usize),
    pub text: String,
    pub source_message: String,
}

const DAYS: &str = "monday|tuesday|wednesday|thursday|friday|saturday|sunday";
const MONTHS: &str = "jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?";

fn grammar() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let pattern = format!(
            r"(?i)\b(?:(?P<halfhour>half\s+an\s+hour)|(?P<hourhalf>(?:an|one)\s+hour\s+and\s+a\s+half)|(?:an|one)\s+(?P<onehour>hour)\b|(?P<nmin>\d{{1,3}})[\s-]*(?:minutes?|mins?)\b|(?P<nhr>\d{{1,2}})[\s-]*(?:hours?|hrs?)\b|next\s+(?P<nextday>{DAYS})\b|(?P<nextweek>next\s+week)\b|(?P<day>{DAYS})\b|(?P<today>today)\b|(?P<tomorrow>tomorrow)\b|(?P<mon>{MONTHS})\.?\s+(?P<mday>\d{{1,2}})\b|(?P<m>\d{{1,2}})/(?P<d>\d{{1,2}})\b)"
        );
        Regex::new(&pattern).expect("time grammar compiles")
    })
}

fn month_number(s: &str) -> Option<u32> {
    let key = s.to_lowercase();
    let names = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"];
    names.iter().position(|n| key.starts_with(n)).map(|i| i as u32 + 1)
}

fn char_offset(s: &str, byte: usize) -> usize {
    s[..byte].chars().count()
}

/// All grammar hits in one body, left to right.
pub fn scan(body: &str, source_message: &str) -> Vec<TimeExpression> {
    let mut out = Vec::new();
    for c in grammar().captures_iter(body) {
        let whole = c.get(0).unwrap();
        let get = |n: &str| c.name(n).map(|m| m.as_str());
        let value = if get("halfhour").is_some() {
            Some(TimeValue::Minutes(30))
        } else if get("hourhalf").is_some() {
            Some(TimeValue::Minutes(90))
        } else if get("onehour").is_some() {
            Some(TimeValue::Minutes(60))
        } else if let Some(n) = get("nmin") {
            n.parse().ok().filter(|n: &u32| *n > 0).map(TimeValue::Minutes)
        } else if let Some(n) = get("nhr") {
            n.parse::<u32>().ok().filter(|n| *n > 0).map(|h| TimeValue::Minutes(h * 60))
        } else if let Some(d) = get("nextday") {
            Some(TimeValue::NextWeekday(d.to_lowercase()))
        } else if get("nextweek").is_some() {
            Some(TimeValue::NextWeek)
        } else if let Some(d) = get("day") {
            Some(TimeValue::Weekday(d.to_lowercase()))
        } else if get("today").is_some() {
            Some(TimeValue::Today)
        } else if get("tomorrow").is_some() {
            Some(TimeValue::Tomorrow)
        } else if let (Some(m), Some(d)) = (get("mon"), get("mday")) {
            let (month, day) = (month_number(m).unwrap_or(0), d.parse().unwrap_or(0));
            NaiveDate::from_ymd_opt(2016, month, day).map(|_| TimeValue::MonthDay { month, day })
        } else if let (Some(m), Some(d)) = (get("m"), get("d")) {
            let (month, day) = (m.parse().unwrap_or(0), d.parse().unwrap_or(0));
            NaiveDate::from_ymd_opt(2016, month, day).map(|_| TimeValue::MonthDay { month, day })
        } else {
            None
        };
        if let Some(value) = value {
            out.push(TimeExpression {
                kind: value.kind(),
                value,
                span: (char_offset(body, whole.start()), char_offset(body, whole.end())),
                text: whole.as_str().to_string(),
                source_message: source_message.to_string(),
            });
        }
    }
    out
}

/// Expressions from the latest message of a chronologically ordered thread.
/// Older messages are never read.
pub fn extract_time_expressions(thread: &[EmailMessage]) -> Vec<TimeExpression> {
    match thread.last() {
        Some(latest) => scan(&latest.body, &latest.message_id),
        None => Vec::new(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeetingFields {
    pub duration: Option<TimeExpression>,
    pub date: Option<TimeExpression>,
}

/// Character span of the first whole-word, case-insensitive mention.
pub fn find_name(body: &str, name: &str) -> Option<(usize, usize)> {
    if name.is_empty() {
        return None;
    }
    let re = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(name))).ok()?;
    re.find(body).map(|m| (char_offset(body, m.start()), char_offset(body, m.end())))
}

/// Picks one duration and one date. With several candidates of a kind, the
/// one whose span midpoint is closest to the first mention of the assistant
/// wins (ties to the earlier span); without a mention, the first one wins.
pub fn select_meeting_fields(exprs: &[TimeExpression], body: &str, assistant_name: &str) -> MeetingFields {
    let name = find_name(body, assistant_name);
    let pick = |kind: TimeKind| -> Option<TimeExpression> {
        let mut cands: Vec<&TimeExpression> = exprs.iter().filter(|e| e.kind == kind).collect();
        cands.sort_by_key(|e| e.span);
        match name {
            None => cands.first().map(|e| (*e).clone()),
            Some((ns, ne)) => {
                // doubled midpoints keep the comparison in integers
                let target = (ns + ne) as i64;
                cands.iter().min_by_key(|e| (((e.span.0 + e.span.1) as i64 - target).abs(), e.span.0)).map(|e| (*e).clone())
            }
        }
    };
    MeetingFields { duration: pick(TimeKind::Duration), date: pick(TimeKind::Date) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(body: &str) -> Vec<TimeValue> {
        scan(body, "m").into_iter().map(|e| e.value).collect()
    }

    #[test]
    fn duration_and_day() {
        assert_eq!(
            values("Can we meet for 30 minutes on Monday?"),
            [TimeValue::Minutes(30), TimeValue::Weekday("monday".into())]
        );
    }

    #[test]
    fn next_week_without_duration() {
        assert_eq!(values("can we get together sometime next week"), [TimeValue::NextWeek]);
    }

    #[test]
    fn grammar_coverage() {
        assert_eq!(
            values("half an hour, an hour, 2 hours, a 45-min slot, an hour and a half"),
            [TimeValue::Minutes(30), TimeValue::Minutes(60), TimeValue::Minutes(120), TimeValue::Minutes(45), TimeValue::Minutes(90)]
        );
        assert_eq!(
            values("today or tomorrow, next Friday, Sep 20, 9/20, 13/40"),
            [
                TimeValue::Today,
                TimeValue::Tomorrow,
                TimeValue::NextWeekday("friday".into()),
                TimeValue::MonthDay { month: 9, day: 20 },
                TimeValue::MonthDay { month: 9, day: 20 },
            ]
        );
        assert!(values("9:30 works").is_empty());
    }

    #[test]
    fn spans_are_character_offsets() {
        let e = scan("café — Monday", "m");
        assert_eq!(e[0].span, (7, 13));
        assert_eq!("café — Monday".chars().skip(7).take(6).collect::<String>(), "Monday");
    }

    #[test]
    fn nearest_to_name() {
        let body = "Tuesday could work, but Cal, set up Thursday.";
        let f = select_meeting_fields(&scan(body, "m"), body, "Cal");
        assert_eq!(f.date.unwrap().value, TimeValue::Weekday("thursday".into()));
        let body = "Monday or Friday, either is fine";
        let f = select_meeting_fields(&scan(body, "m"), body, "Cal");
        assert_eq!(f.date.unwrap().value, TimeValue::Weekday("monday".into()));
        assert!(f.duration.is_none());
    }

    #[test]
    fn resolution() {
        let tue = NaiveDate::from_ymd_opt(2016, 4, 5).unwrap();
        let d = |s| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        assert_eq!(TimeValue::NextWeek.resolve(tue), Some((d("2016-04-11"), d("2016-04-17"))));
        assert_eq!(TimeValue::Weekday("tuesday".into()).resolve(tue), Some((d("2016-04-12"), d("2016-04-12"))));
        assert_eq!(TimeValue::Weekday("thursday".into()).resolve(tue), Some((d("2016-04-07"), d("2016-04-07"))));
        assert_eq!(TimeValue::NextWeekday("monday".into()).resolve(tue), Some((d("2016-04-11"), d("2016-04-11"))));
        assert_eq!(TimeValue::MonthDay { month: 3, day: 1 }.resolve(tue), Some((d("2017-03-01"), d("2017-03-01"))));
    }
}
