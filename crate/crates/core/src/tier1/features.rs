use chrono::{DateTime, Datelike, FixedOffset, NaiveDate, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use super::dictionary::FeatureDictionary;

/// Rendered attributes of one ballot option, as the invitee sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionAttrs {
    /// 1-based position on the ballot.
    pub ordinal: usize,
    /// Number of options on the ballot (K).
    pub of: usize,
    pub day_name: String,
    pub date: NaiveDate,
    pub hour: u32,
    pub minute: u32,
    pub zone: String,
}

impl OptionAttrs {
    pub fn from_local(start: DateTime<FixedOffset>, ordinal: usize, of: usize) -> Self {
        Self {
            ordinal,
            of,
            day_name: day_name(start.weekday()).to_string(),
            date: start.date_naive(),
            hour: start.hour(),
            minute: start.minute(),
            zone: start.offset().to_string(),
        }
    }

    /// "9am", "2:30pm", "12pm".
    pub fn clock_text(&self) -> String {
        let (h12, pm) = to_12h(self.hour);
        let suffix = if pm { "pm" } else { "am" };
        if self.minute == 0 {
            format!("{h12}{suffix}")
        } else {
            format!("{h12}:{:02}{suffix}", self.minute)
        }
    }

    /// "Wed Apr 6 at 9am", the ballot line for this option.
    pub fn display(&self) -> String {
        let day = &self.day_name[..3];
        let mut d = day.to_string();
        d[..1].make_ascii_uppercase();
        format!("{d} {} at {}", self.date.format("%b %-d"), self.clock_text())
    }
}

pub fn day_name(d: Weekday) -> &'static str {
    match d {
        Weekday::Mon => "monday",
        Weekday::Tue => "tuesday",
        Weekday::Wed => "wednesday",
        Weekday::Thu => "thursday",
        Weekday::Fri => "friday",
        Weekday::Sat => "saturday",
        Weekday::Sun => "sunday",
    }
}

fn to_12h(hour: u32) -> (u32, bool) {
    let pm = hour >= 12;
    let h = hour % 12;
    (if h == 0 { 12 } else { h }, pm)
}

/// Lowercase, then split on anything outside `[a-z0-9:]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == ':'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Option-relative matchers appended after the dictionary indicators.
/// The `mention:*` pair records whether the response names any day or clock
/// time at all, so a mention of a different option counts against this one.
pub const RELATIVE_FEATURES: [&str; 6] =
    ["match:day", "match:time", "match:ordinal", "match:negated", "mention:any_day", "mention:any_time"];

const ALL_DAYS: [&str; 7] = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const ORDINAL_WORDS: [&str; 3] = ["first", "second", "third"];
const NEGATORS: [&str; 7] = ["not", "neither", "nor", "no", "except", "cannot", "t"];
const NEGATION_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ClockMention {
    h12: u32,
    minute: u32,
    pm: Option<bool>,
}

fn clock_mention(tokens: &[String], i: usize) -> Option<ClockMention> {
    let t = tokens[i].as_str();
    if t == "noon" {
        return Some(ClockMention { h12: 12, minute: 0, pm: Some(true) });
    }
    let (body, mut pm) = if let Some(b) = t.strip_suffix("am") {
        (b, Some(false))
    } else if let Some(b) = t.strip_suffix("pm") {
        (b, Some(true))
    } else {
        (t, None)
    };
    let (h, m) = match body.split_once(':') {
        Some((h, m)) if m.len() == 2 => (h.parse::<u32>().ok()?, m.parse::<u32>().ok()?),
        Some(_) => return None,
        None => (body.parse::<u32>().ok()?, 0),
    };
    if !(1..=12).contains(&h) || m > 59 || body.is_empty() {
        return None;
    }
    let next = tokens.get(i + 1).map(String::as_str);
    if pm.is_none() {
        pm = match next {
            Some("am") => Some(false),
            Some("pm") => Some(true),
            _ => None,
        };
    }
    let prev = if i > 0 { tokens.get(i - 1).map(String::as_str) } else { None };
    let anchored = pm.is_some() || body.contains(':') || matches!(prev, Some("at" | "around" | "by" | "after"));
    anchored.then_some(ClockMention { h12: h, minute: m, pm })
}

fn day_tokens(day: &str) -> [&str; 2] {
    [day, &day[..3]]
}

fn ordinal_tokens(o: &OptionAttrs, tokens: &[String], i: usize) -> bool {
    let t = tokens[i].as_str();
    if o.ordinal >= 1 && o.ordinal <= 3 && t == ORDINAL_WORDS[o.ordinal - 1] {
        return true;
    }
    if o.ordinal == o.of && t == "last" {
        return true;
    }
    let numbered = ["1st", "2nd", "3rd"];
    if o.ordinal >= 1 && o.ordinal <= 3 && t == numbered[o.ordinal - 1] {
        return true;
    }
    i > 0 && matches!(tokens[i - 1].as_str(), "option" | "number") && t == o.ordinal.to_string()
}

/// Token positions where the response refers to this option, split by kind.
fn mentions(o: &OptionAttrs, tokens: &[String]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (h12, pm) = to_12h(o.hour);
    let days = day_tokens(&o.day_name);
    let (mut day, mut time, mut ord) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..tokens.len() {
        if days.contains(&tokens[i].as_str()) {
            day.push(i);
        }
        if let Some(c) = clock_mention(tokens, i) {
            if c.h12 == h12 && c.minute == o.minute && c.pm.is_none_or(|p| p == pm) {
                time.push(i);
            }
        }
        if ordinal_tokens(o, tokens, i) {
            ord.push(i);
        }
    }
    (day, time, ord)
}

/// Binary indicator vector: one entry per dictionary word present in the
/// response, then the option-relative matchers in [`RELATIVE_FEATURES`] order.
pub fn featurize(dict: &FeatureDictionary, response: &str, option: &OptionAttrs) -> Vec<f64> {
    let tokens = tokenize(response);
    let mut x: Vec<f64> =
        dict.entries().map(|(_, w)| if tokens.iter().any(|t| t == w) { 1.0 } else { 0.0 }).collect();
    let (day, time, ord) = mentions(option, &tokens);
    let negated = day.iter().chain(&time).chain(&ord).any(|&i| {
        let lo = i.saturating_sub(NEGATION_WINDOW);
        tokens[lo..i].iter().any(|t| NEGATORS.contains(&t.as_str()))
    });
    let any_day = tokens.iter().any(|t| ALL_DAYS.iter().any(|d| day_tokens(d).contains(&t.as_str())));
    let any_time = (0..tokens.len()).any(|i| clock_mention(&tokens, i).is_some());
    for flag in [!day.is_empty(), !time.is_empty(), !ord.is_empty(), negated, any_day, any_time] {
        x.push(if flag { 1.0 } else { 0.0 });
    }
    x
}

pub fn feature_names(dict: &FeatureDictionary) -> Vec<String> {
    dict.entries()
        .map(|(c, w)| format!("{c}:{w}"))
        .chain(RELATIVE_FEATURES.iter().map(|s| s.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn opt(day: u32, hour: u32, ordinal: usize) -> OptionAttrs {
        // April 2016: the 4th is a Monday
        let tz = FixedOffset::west_opt(7 * 3600).unwrap();
        OptionAttrs::from_local(tz.with_ymd_and_hms(2016, 4, day, hour, 0, 0).unwrap(), ordinal, 3)
    }

    fn named(dict: &FeatureDictionary, x: &[f64]) -> Vec<String> {
        feature_names(dict).into_iter().zip(x).filter(|(_, v)| **v == 1.0).map(|(n, _)| n).collect()
    }

    #[test]
    fn monday_response_on_a_monday_option() {
        let d = FeatureDictionary::default();
        let x = featurize(&d, "Let's do it on Monday.", &opt(4, 9, 1));
        assert_eq!(named(&d, &x), ["days:monday", "match:day", "mention:any_day"]);
    }

    #[test]
    fn empty_text_is_all_zero() {
        let d = FeatureDictionary::default();
        assert!(featurize(&d, "", &opt(4, 9, 1)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn all_options_work_has_no_day_match() {
        let d = FeatureDictionary::default();
        for o in [opt(4, 9, 1), opt(5, 13, 2), opt(6, 10, 3)] {
            let x = featurize(&d, "All options work.", &o);
            assert_eq!(named(&d, &x), ["quantifiers:all"]);
        }
    }

    #[test]
    fn time_ordinal_and_negation_matchers() {
        let d = FeatureDictionary::default();
        let wed9 = opt(6, 9, 1);
        let x = featurize(&d, "Great. Wednesday at 9 works!", &wed9);
        assert_eq!(named(&d, &x), ["days:wednesday", "match:day", "match:time", "mention:any_day", "mention:any_time"]);
        let x = featurize(&d, "Great. Wednesday at 9 works!", &opt(6, 14, 2));
        assert_eq!(named(&d, &x), ["days:wednesday", "match:day", "mention:any_day", "mention:any_time"]);
        let x = featurize(&d, "2pm is good", &opt(7, 14, 3));
        assert_eq!(named(&d, &x), ["match:time", "mention:any_time"]);
        let x = featurize(&d, "the last one", &opt(7, 14, 3));
        assert_eq!(named(&d, &x), ["ordinal:last", "match:ordinal"]);
        let x = featurize(&d, "I can't do Thursday", &opt(7, 14, 3));
        assert_eq!(named(&d, &x), ["days:thursday", "match:day", "match:negated", "mention:any_day"]);
    }

    #[test]
    fn display_and_tokenize() {
        assert_eq!(opt(6, 9, 1).display(), "Wed Apr 6 at 9am");
        assert_eq!(opt(6, 0, 1).clock_text(), "12am");
        assert_eq!(tokenize("Wed, 9:30AM works."), ["wed", "9:30am", "works"]);
    }
}
