//! Subscriber calendars: busy intervals, free-slot search and the anonymized
//! busy/free view handed to macrotask workers.
//!
//! Instants are stored in UTC. The account's fixed offset is applied only for
//! work-hours and business-hours arithmetic.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mailroom::Invitation;
use crate::Timestamp;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CalendarError {
    #[error("calendar for {0} is not accessible")]
    CalendarInaccessible(String),
    #[error("no event with uid {0}")]
    UnknownEvent(String),
    #[error("event uid {0} already exists")]
    DuplicateEvent(String),
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(String),
    #[error("interval must have start < end")]
    InvalidInterval,
    #[error("bad timezone {0:?}; expected an offset like +02:00")]
    BadTimezone(String),
}

/// Half-open `[start, end)` interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Interval {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self, CalendarError> {
        if start >= end {
            return Err(CalendarError::InvalidInterval);
        }
        Ok(Self { start, end })
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }
}

/// Local clock range, serialized as `{"start": "09:00", "end": "17:00"}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyHours {
    #[serde(with = "hhmm")]
    pub start: NaiveTime,
    #[serde(with = "hhmm")]
    pub end: NaiveTime,
}

impl DailyHours {
    pub fn new(start: NaiveTime, end: NaiveTime) -> Self {
        Self { start, end }
    }

    pub fn nine_to_five() -> Self {
        Self {
            start: NaiveTime::from_hms_opt(9, 0, 0).unwrap(),
            end: NaiveTime::from_hms_opt(17, 0, 0).unwrap(),
        }
    }
}

pub(crate) mod hhmm {
    use chrono::NaiveTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format("%H:%M").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveTime, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }

    pub fn parse(s: &str) -> Result<NaiveTime, String> {
        NaiveTime::parse_from_str(s, "%H:%M")
            .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M:%S"))
            .map_err(|e| format!("bad time of day {s:?}: {e}"))
    }
}

fn default_work_days() -> Vec<Weekday> {
    vec![Weekday::Mon, Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Fri]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriberPrefs {
    pub default_duration_minutes: u32,
    pub work_hours: DailyHours,
    /// Window in which automated follow-up mail may leave the mailroom.
    pub business_hours: DailyHours,
    #[serde(default = "default_work_days")]
    pub work_days: Vec<Weekday>,
}

impl Default for SubscriberPrefs {
    fn default() -> Self {
        Self {
            default_duration_minutes: 30,
            work_hours: DailyHours::nine_to_five(),
            business_hours: DailyHours::nine_to_five(),
            work_days: default_work_days(),
        }
    }
}

pub fn parse_offset(tz: &str) -> Result<FixedOffset, CalendarError> {
    let bad = || CalendarError::BadTimezone(tz.to_string());
    if tz.eq_ignore_ascii_case("utc") || tz == "Z" {
        return Ok(FixedOffset::east_opt(0).unwrap());
    }
    let (sign, rest) = match tz.as_bytes().first() {
        Some(b'+') => (1, &tz[1..]),
        Some(b'-') => (-1, &tz[1..]),
        _ => return Err(bad()),
    };
    let (h, m) = rest.split_once(':').ok_or_else(bad)?;
    let h: i32 = h.parse().map_err(|_| bad())?;
    let m: i32 = m.parse().map_err(|_| bad())?;
    if h > 14 || m > 59 {
        return Err(bad());
    }
    FixedOffset::east_opt(sign * (h * 3600 + m * 60)).ok_or_else(bad)
}

/// Next instant at or after `t` that falls on a working day inside `hours`
/// (local to `offset`).
pub fn next_within_hours(t: Timestamp, offset: FixedOffset, hours: DailyHours, days: &[Weekday]) -> Timestamp {
    let local = t.with_timezone(&offset);
    let mut date = local.date_naive();
    for _ in 0..15 {
        if days.contains(&date.weekday()) {
            let open = local_instant(offset, date, hours.start);
            let close = local_instant(offset, date, hours.end);
            if t < open {
                return open;
            }
            if t < close {
                return t;
            }
        }
        date = date.succ_opt().expect("date overflow");
    }
    t
}

pub fn local_instant(offset: FixedOffset, date: NaiveDate, time: NaiveTime) -> Timestamp {
    offset
        .from_local_datetime(&date.and_time(time))
        .single()
        .expect("fixed offsets are unambiguous")
        .to_utc()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarAccount {
    pub subscriber_id: String,
    /// Fixed UTC offset such as `+00:00` or `-07:00`.
    pub timezone: String,
    pub busy: Vec<Interval>,
    #[serde(default)]
    pub events: BTreeMap<String, Invitation>,
    #[serde(default)]
    pub prefs: SubscriberPrefs,
    #[serde(default = "yes")]
    pub accessible: bool,
}

fn yes() -> bool {
    true
}

/// Busy intervals only; titles and attendees cannot be represented.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymizedCalendarView {
    pub busy: Vec<Interval>,
}

impl CalendarAccount {
    pub fn new(subscriber_id: impl Into<String>) -> Self {
        Self {
            subscriber_id: subscriber_id.into(),
            timezone: "+00:00".into(),
            busy: Vec::new(),
            events: BTreeMap::new(),
            prefs: SubscriberPrefs::default(),
            accessible: true,
        }
    }

    pub fn offset(&self) -> Result<FixedOffset, CalendarError> {
        parse_offset(&self.timezone)
    }

    fn check_access(&self) -> Result<(), CalendarError> {
        if self.accessible {
            Ok(())
        } else {
            Err(CalendarError::CalendarInaccessible(self.subscriber_id.clone()))
        }
    }

    /// Grid-aligned starts in `window` whose `[start, start + duration)` lies
    /// inside work hours on a work day and touches no busy interval.
    pub fn free_slots(
        &self,
        window: Interval,
        duration_minutes: u32,
        grid_minutes: u32,
    ) -> Result<Vec<Timestamp>, CalendarError> {
        self.check_access()?;
        let offset = self.offset()?;
        let duration = Duration::minutes(i64::from(duration_minutes.max(1)));
        let grid = i64::from(grid_minutes.max(1));
        let hours = self.prefs.work_hours;

        let mut busy = self.busy.clone();
        busy.sort();
        let mut out = Vec::new();
        let mut date = window.start.with_timezone(&offset).date_naive();
        let last = window.end.with_timezone(&offset).date_naive();
        while date <= last {
            if self.prefs.work_days.contains(&date.weekday()) {
                let open = local_instant(offset, date, hours.start);
                let close = local_instant(offset, date, hours.end);
                let midnight = local_instant(offset, date, NaiveTime::MIN);
                let from_midnight = (open - midnight).num_minutes();
                let first = (from_midnight + grid - 1) / grid * grid;
                let mut start = midnight + Duration::minutes(first);
                while start + duration <= close {
                    let slot = Interval { start, end: start + duration };
                    if start >= window.start
                        && slot.end <= window.end
                        && !busy.iter().any(|b| b.overlaps(&slot))
                    {
                        out.push(start);
                    }
                    start += Duration::minutes(grid);
                }
            }
            date = date.succ_opt().expect("date overflow");
        }
        Ok(out)
    }

    pub fn add_event(&mut self, inv: Invitation) -> Result<(), CalendarError> {
        self.check_access()?;
        if self.events.contains_key(&inv.uid) {
            return Err(CalendarError::DuplicateEvent(inv.uid));
        }
        self.busy.push(Interval::new(inv.start, inv.end)?);
        self.events.insert(inv.uid.clone(), inv);
        Ok(())
    }

    /// Replaces the event with the same uid, moving its busy span.
    pub fn update_event(&mut self, inv: Invitation) -> Result<(), CalendarError> {
        self.check_access()?;
        let new_span = Interval::new(inv.start, inv.end)?;
        let old = self.events.get(&inv.uid).ok_or_else(|| CalendarError::UnknownEvent(inv.uid.clone()))?;
        let old_span = Interval { start: old.start, end: old.end };
        self.remove_busy(&old_span);
        self.busy.push(new_span);
        self.events.insert(inv.uid.clone(), inv);
        Ok(())
    }

    pub fn cancel_event(&mut self, uid: &str) -> Result<Invitation, CalendarError> {
        self.check_access()?;
        let inv = self.events.remove(uid).ok_or_else(|| CalendarError::UnknownEvent(uid.to_string()))?;
        self.remove_busy(&Interval { start: inv.start, end: inv.end });
        Ok(inv)
    }

    fn remove_busy(&mut self, span: &Interval) {
        if let Some(i) = self.busy.iter().position(|b| b == span) {
            self.busy.remove(i);
        }
    }

    pub fn anonymize(&self) -> Result<AnonymizedCalendarView, CalendarError> {
        self.check_access()?;
        Ok(AnonymizedCalendarView { busy: merge_intervals(&self.busy) })
    }

    /// Minute offset of `t` within the local day, used by callers reasoning in local time.
    pub fn local_minute_of_day(&self, t: Timestamp) -> Result<u32, CalendarError> {
        let local = t.with_timezone(&self.offset()?);
        Ok(local.hour() * 60 + local.minute())
    }
}

/// Sorts and merges overlapping or touching intervals.
pub fn merge_intervals(intervals: &[Interval]) -> Vec<Interval> {
    let mut sorted = intervals.to_vec();
    sorted.sort();
    let mut out: Vec<Interval> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => {
                if iv.end > last.end {
                    last.end = iv.end;
                }
            }
            _ => out.push(iv),
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarStore {
    accounts: BTreeMap<String, CalendarAccount>,
}

impl CalendarStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, acct: CalendarAccount) {
        self.accounts.insert(acct.subscriber_id.clone(), acct);
    }

    pub fn get(&self, subscriber: &str) -> Result<&CalendarAccount, CalendarError> {
        self.accounts.get(subscriber).ok_or_else(|| CalendarError::UnknownSubscriber(subscriber.to_string()))
    }

    pub fn get_mut(&mut self, subscriber: &str) -> Result<&mut CalendarAccount, CalendarError> {
        self.accounts.get_mut(subscriber).ok_or_else(|| CalendarError::UnknownSubscriber(subscriber.to_string()))
    }

    pub fn accounts(&self) -> impl Iterator<Item = &CalendarAccount> {
        self.accounts.values()
    }

    /// Loads one account from a fixture file.
    pub fn load_fixture(path: &Path) -> Result<CalendarAccount, Box<dyn std::error::Error + Send + Sync>> {
        let text = fs::read_to_string(path)?;
        let acct: CalendarAccount = serde_json::from_str(&text)?;
        acct.offset()?;
        for b in &acct.busy {
            Interval::new(b.start, b.end)?;
        }
        Ok(acct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;
    use proptest::prelude::*;

    // Monday
    fn day(h: u32, m: u32) -> Timestamp {
        Utc.with_ymd_and_hms(2016, 4, 4, h, m, 0).unwrap()
    }

    fn workday() -> Interval {
        Interval::new(day(9, 0), day(17, 0)).unwrap()
    }

    fn inv(uid: &str, start: Timestamp, minutes: i64) -> Invitation {
        Invitation {
            uid: uid.into(),
            start,
            end: start + Duration::minutes(minutes),
            summary: "Private title".into(),
            organizer: "bob@x.org".into(),
            attendees: vec!["alice@x.org".into()],
            method: crate::mailroom::InvitationMethod::Request,
        }
    }

    /// Brute force: every minute of the day, aligned to the grid, checked minute by minute.
    fn oracle_slots(acct: &CalendarAccount, window: Interval, dur: i64, grid: i64) -> Vec<Timestamp> {
        let mut out = vec![];
        let mut t = window.start - Duration::days(1);
        while t < window.end + Duration::days(1) {
            let local_min = i64::from(t.hour() * 60 + t.minute());
            let end = t + Duration::minutes(dur);
            let in_hours = local_min >= 9 * 60 && local_min + dur <= 17 * 60;
            let weekday = acct.prefs.work_days.contains(&t.weekday());
            let free = (0..dur).all(|k| {
                let m = t + Duration::minutes(k);
                !acct.busy.iter().any(|b| b.contains(m))
            });
            if local_min % grid == 0 && in_hours && weekday && t >= window.start && end <= window.end && free {
                out.push(t);
            }
            t += Duration::minutes(1);
        }
        out
    }

    #[test]
    fn empty_workday_has_fifteen_hourly_starts() {
        let acct = CalendarAccount::new("bob");
        let slots = acct.free_slots(workday(), 60, 30).unwrap();
        assert_eq!(slots.len(), 15);
        assert_eq!(slots.first(), Some(&day(9, 0)));
        assert_eq!(slots.last(), Some(&day(16, 0)));
        assert_eq!(slots, oracle_slots(&acct, workday(), 60, 30));
    }

    #[test]
    fn fully_busy_window_is_empty() {
        let mut acct = CalendarAccount::new("bob");
        acct.busy.push(Interval::new(day(8, 0), day(18, 0)).unwrap());
        assert!(acct.free_slots(workday(), 30, 30).unwrap().is_empty());
    }

    #[test]
    fn inaccessible_calendar() {
        let mut acct = CalendarAccount::new("bob");
        acct.accessible = false;
        assert_eq!(
            acct.free_slots(workday(), 30, 30),
            Err(CalendarError::CalendarInaccessible("bob".into()))
        );
        assert!(acct.anonymize().is_err());
    }

    #[test]
    fn weekend_and_offsets() {
        let mut acct = CalendarAccount::new("bob");
        let sat = Interval::new(
            Utc.with_ymd_and_hms(2016, 4, 9, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2016, 4, 10, 23, 0, 0).unwrap(),
        )
        .unwrap();
        assert!(acct.free_slots(sat, 30, 30).unwrap().is_empty());
        acct.timezone = "-07:00".into();
        // 09:00 local is 16:00 UTC
        let slots = acct.free_slots(Interval::new(day(0, 0), day(23, 59)).unwrap(), 60, 30).unwrap();
        assert_eq!(slots[0], day(16, 0));
    }

    #[test]
    fn add_update_cancel_keep_busy_consistent() {
        let mut acct = CalendarAccount::new("bob");
        let before = acct.free_slots(workday(), 60, 30).unwrap();
        acct.add_event(inv("u1", day(10, 0), 60)).unwrap();
        let with_event = acct.free_slots(workday(), 60, 30).unwrap();
        assert!(!with_event.contains(&day(10, 0)));
        assert!(!with_event.contains(&day(9, 30)));

        acct.update_event(inv("u1", day(14, 0), 60)).unwrap();
        let moved = acct.free_slots(workday(), 60, 30).unwrap();
        // old span is free again, new span is busy
        assert!(moved.contains(&day(10, 0)));
        assert!(!moved.contains(&day(14, 0)));
        let removed: Vec<_> = before.iter().filter(|s| !moved.contains(s)).copied().collect();
        assert_eq!(removed, vec![day(13, 30), day(14, 0), day(14, 30)]);
        assert_eq!(acct.events["u1"].uid, "u1");

        acct.cancel_event("u1").unwrap();
        assert_eq!(acct.free_slots(workday(), 60, 30).unwrap(), before);
        assert_eq!(acct.cancel_event("u1"), Err(CalendarError::UnknownEvent("u1".into())));
    }

    #[test]
    fn anonymize_merges() {
        let mut acct = CalendarAccount::new("bob");
        acct.busy.push(Interval::new(day(9, 0), day(11, 0)).unwrap());
        acct.busy.push(Interval::new(day(10, 0), day(12, 0)).unwrap());
        assert_eq!(acct.anonymize().unwrap().busy, vec![Interval::new(day(9, 0), day(12, 0)).unwrap()]);
        assert!(CalendarAccount::new("x").anonymize().unwrap().busy.is_empty());
    }

    #[test]
    fn next_business_instant() {
        let off = parse_offset("+00:00").unwrap();
        let hours = DailyHours::nine_to_five();
        let days = default_work_days();
        assert_eq!(next_within_hours(day(7, 0), off, hours, &days), day(9, 0));
        assert_eq!(next_within_hours(day(12, 0), off, hours, &days), day(12, 0));
        // Friday evening rolls to Monday morning
        let fri = Utc.with_ymd_and_hms(2016, 4, 8, 18, 0, 0).unwrap();
        assert_eq!(
            next_within_hours(fri, off, hours, &days),
            Utc.with_ymd_and_hms(2016, 4, 11, 9, 0, 0).unwrap()
        );
    }

    #[test]
    fn fixture_format() {
        let json = r#"{"subscriber_id":"bob","timezone":"+01:00",
            "busy":[{"start":"2016-04-04T10:00:00Z","end":"2016-04-04T11:00:00Z"}],
            "prefs":{"default_duration_minutes":45,"work_hours":{"start":"08:00","end":"16:00"},
                     "business_hours":{"start":"09:00","end":"18:00"}},
            "accessible":true}"#;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bob.json");
        std::fs::write(&p, json).unwrap();
        let acct = CalendarStore::load_fixture(&p).unwrap();
        assert_eq!(acct.prefs.default_duration_minutes, 45);
        assert_eq!(acct.prefs.work_days.len(), 5);
        assert!(acct.events.is_empty());
    }

    fn arb_busy() -> impl Strategy<Value = Vec<Interval>> {
        proptest::collection::vec((0i64..(3 * 24 * 60), 1i64..240), 0..10).prop_map(|v| {
            v.into_iter()
                .map(|(s, d)| {
                    let start = day(0, 0) + Duration::minutes(s);
                    Interval::new(start, start + Duration::minutes(d)).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn free_slots_match_brute_force(busy in arb_busy(), dur in 15i64..120, grid in prop::sample::select(vec![15i64, 30, 60])) {
            let mut acct = CalendarAccount::new("bob");
            acct.busy = busy;
            let window = Interval::new(day(0, 0), day(0, 0) + Duration::days(3)).unwrap();
            let got = acct.free_slots(window, dur as u32, grid as u32).unwrap();
            prop_assert_eq!(got, oracle_slots(&acct, window, dur, grid));
        }

        #[test]
        fn anonymized_view_covers_same_minutes(busy in arb_busy()) {
            let mut acct = CalendarAccount::new("bob");
            acct.busy = busy;
            let view = acct.anonymize().unwrap();
            for w in view.busy.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
            let mut t = day(0, 0);
            while t < day(0, 0) + Duration::days(4) {
                let a = acct.busy.iter().any(|b| b.contains(t));
                let b = view.busy.iter().any(|b| b.contains(t));
                prop_assert_eq!(a, b);
                t += Duration::minutes(1);
            }
        }

        #[test]
        fn add_then_cancel_restores_slots(busy in arb_busy(), s in 0i64..(3 * 24 * 60), d in 15i64..180) {
            let mut acct = CalendarAccount::new("bob");
            acct.busy = busy;
            let window = Interval::new(day(0, 0), day(0, 0) + Duration::days(3)).unwrap();
            let before = acct.free_slots(window, 30, 30).unwrap();
            acct.add_event(inv("e", day(0, 0) + Duration::minutes(s), d)).unwrap();
            acct.cancel_event("e").unwrap();
            prop_assert_eq!(acct.free_slots(window, 30, 30).unwrap(), before);
        }
    }
}
