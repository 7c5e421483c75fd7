//! Ballot-response records, their JSON-lines store, and the reply grammar
//! shared by the synthetic corpus and the simulated invitees.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{Duration, FixedOffset, NaiveDate, TimeZone};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::OptionAttrs;
use super::Tier1Error;

/// One (response text, option, selected) triple. A ballot response yields
/// K of these, sharing `ballot_id` and `response_text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallotResponseRecord {
    pub ballot_id: String,
    pub response_text: String,
    pub option: OptionAttrs,
    pub selected: bool,
}

pub fn records_for(ballot_id: &str, text: &str, options: &[OptionAttrs], selected: &[bool]) -> Vec<BallotResponseRecord> {
    options
        .iter()
        .zip(selected)
        .map(|(o, s)| BallotResponseRecord {
            ballot_id: ballot_id.to_string(),
            response_text: text.to_string(),
            option: o.clone(),
            selected: *s,
        })
        .collect()
}

pub fn write_jsonl(path: &Path, records: &[BallotResponseRecord]) -> Result<(), Tier1Error> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<BallotResponseRecord>, Tier1Error> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn cap(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn ordinal_phrase(o: &OptionAttrs) -> String {
    match o.ordinal {
        1 => "first".into(),
        2 => "second".into(),
        3 if o.of != 3 => "third".into(),
        k if k == o.of => "last".into(),
        k => format!("number {k}"),
    }
}

fn bare_clock(o: &OptionAttrs) -> String {
    let h = if o.hour % 12 == 0 { 12 } else { o.hour % 12 };
    if o.minute == 0 {
        h.to_string()
    } else {
        format!("{h}:{:02}", o.minute)
    }
}

fn unique_by<F: Fn(&OptionAttrs) -> String>(options: &[OptionAttrs], i: usize, key: F) -> bool {
    let k = key(&options[i]);
    options.iter().filter(|o| key(o) == k).count() == 1
}

fn join_days(days: &[String]) -> String {
    match days.len() {
        0 => String::new(),
        1 => cap(&days[0]),
        _ => {
            let (last, rest) = days.split_last().unwrap();
            format!("{} or {}", rest.iter().map(|d| cap(d)).collect::<Vec<_>>().join(", "), cap(last))
        }
    }
}

/// Writes a natural reply whose meaning is exactly `selected`.
pub fn compose_reply<R: Rng>(selected: &[bool], options: &[OptionAttrs], rng: &mut R) -> String {
    assert_eq!(selected.len(), options.len());
    let chosen: Vec<usize> = (0..options.len()).filter(|i| selected[*i]).collect();
    let rejected: Vec<usize> = (0..options.len()).filter(|i| !selected[*i]).collect();
    let day = |i: usize| options[i].day_name.clone();
    let days_unique = |ix: &[usize]| ix.iter().all(|&i| unique_by(options, i, |o| o.day_name.clone()));

    let mut forms: Vec<String> = Vec::new();
    if chosen.is_empty() {
        forms.extend(
            [
                "None of these work, sorry.",
                "Sorry, none of those times work.",
                "I'm not available at any of these times.",
                "Unfortunately none of them work for me.",
            ]
            .map(String::from),
        );
        if options.len() == 2 {
            forms.push("Neither works for me, sorry.".into());
        }
    } else if rejected.is_empty() {
        forms.extend(
            ["All options work.", "Any of those times is fine.", "They all work for me.", "All of them work, pick whichever."]
                .map(String::from),
        );
        if options.len() == 2 {
            forms.push("Both work for me.".into());
        }
    } else if chosen.len() == 1 {
        let i = chosen[0];
        let o = &options[i];
        forms.push(format!("{} at {} works for me.", cap(&o.day_name), o.clock_text()));
        forms.push(format!("Great. {} at {} works!", cap(&o.day_name), bare_clock(o)));
        if days_unique(&[i]) {
            forms.push(format!("Let's do it on {}.", cap(&o.day_name)));
            forms.push(format!("{} is best for me.", cap(&o.day_name)));
        }
        if unique_by(options, i, OptionAttrs::clock_text) {
            forms.push(format!("{} works for me.", o.clock_text()));
        }
        forms.push(format!("The {} option works.", ordinal_phrase(o)));
        forms.push(format!("Option {} please.", o.ordinal));
        if o.ordinal == 3 {
            forms.push("The third one is best.".into());
        }
        if rejected.len() == 2 && days_unique(&[rejected[0], rejected[1], i]) {
            forms.push(format!(
                "Neither {} nor {} works, but {} does.",
                cap(&day(rejected[0])),
                cap(&day(rejected[1])),
                cap(&o.day_name)
            ));
        }
    } else {
        let names: Vec<String> = chosen.iter().map(|&i| day(i)).collect();
        if days_unique(&chosen) {
            forms.push(format!("{} would work.", join_days(&names)));
            if chosen.len() == 2 {
                forms.push(format!("Either {} or {} is fine.", cap(&names[0]), cap(&names[1])));
                forms.push(format!("{} and {} both work.", cap(&names[0]), cap(&names[1])));
            }
        }
        if days_unique(&rejected) && rejected.iter().all(|r| !chosen.iter().any(|c| day(*c) == day(*r))) {
            let out: Vec<String> = rejected.iter().map(|&i| cap(&day(i))).collect();
            forms.push(format!("Any time except {} works.", out.join(" or ")));
            if chosen.len() == 2 && days_unique(&chosen) {
                forms.push(format!("{} and {} work, but not {}.", cap(&names[0]), cap(&names[1]), out.join(" or ")));
            }
        }
        let ords: Vec<String> = chosen.iter().map(|&i| ordinal_phrase(&options[i])).collect();
        if chosen.len() == 2 {
            forms.push(format!("The {} and the {} options work.", ords[0], ords[1]));
        }
        let clocks: Vec<String> = chosen.iter().map(|&i| options[i].clock_text()).collect();
        if chosen.iter().all(|&i| unique_by(options, i, OptionAttrs::clock_text)) {
            forms.push(format!("{} all work for me.", clocks.join(", ")));
        }
        if forms.is_empty() {
            let lines: Vec<String> = chosen
                .iter()
                .map(|&i| format!("{} at {}", cap(&options[i].day_name), options[i].clock_text()))
                .collect();
            forms.push(format!("{} would work.", lines.join(" or ")));
        }
    }
    let body = forms.choose(rng).expect("at least one phrasing").clone();
    let greeting = ["", "", "Hi Cal, ", "Hello! ", "Thanks. "].choose(rng).unwrap();
    let closing = ["", "", " Thanks!", " Looking forward to it.", " Cheers."].choose(rng).unwrap();
    format!("{greeting}{body}{closing}")
}

/// Ballot options as the agent proposes them: sometimes clustered on one
/// day, sometimes spread over several.
pub fn sample_options<R: Rng>(rng: &mut R, k: usize) -> Vec<OptionAttrs> {
    let tz = FixedOffset::west_opt(rng.random_range(4..=8) * 3600).unwrap();
    let monday = NaiveDate::from_ymd_opt(2016, 4, 4).unwrap() + Duration::weeks(rng.random_range(0..20));
    let mut starts = Vec::new();
    if rng.random_bool(0.4) {
        let d = monday + Duration::days(rng.random_range(0..5));
        let first = rng.random_range(9..=(17 - k as u32).max(9));
        for j in 0..k {
            starts.push(d.and_hms_opt(first + j as u32, 0, 0).unwrap());
        }
    } else {
        let mut days: Vec<i64> = (0..5).collect();
        days.sort_by_key(|_| rng.random::<u32>());
        let mut days: Vec<i64> = days.into_iter().take(k.min(5)).collect();
        while days.len() < k {
            days.push(rng.random_range(0..5));
        }
        days.sort();
        for d in days {
            let h = rng.random_range(9..=16);
            let m = if rng.random_bool(0.25) { 30 } else { 0 };
            starts.push((monday + Duration::days(d)).and_hms_opt(h, m, 0).unwrap());
        }
        starts.sort();
        starts.dedup();
        while starts.len() < k {
            let last = *starts.last().unwrap();
            starts.push(last + Duration::hours(1));
        }
    }
    starts
        .iter()
        .enumerate()
        .map(|(j, s)| OptionAttrs::from_local(tz.from_local_datetime(s).unwrap(), j + 1, k))
        .collect()
}

/// Draws a selection pattern with a realistic mix: mostly one pick, some
/// pairs, some "all" and some "none".
pub fn sample_selection<R: Rng>(rng: &mut R, k: usize) -> Vec<bool> {
    let roll: f64 = rng.random();
    let mut sel = vec![false; k];
    if roll < 0.12 {
        // none
    } else if roll < 0.24 {
        sel.iter_mut().for_each(|s| *s = true);
    } else if roll < 0.74 || k < 3 {
        sel[rng.random_range(0..k)] = true;
    } else {
        let a = rng.random_range(0..k);
        let mut b = rng.random_range(0..k);
        while b == a {
            b = rng.random_range(0..k);
        }
        sel[a] = true;
        sel[b] = true;
    }
    sel
}

/// Synthetic labeled corpus of `n_ballots` responses with K options each.
pub fn generate_corpus(seed: u64, n_ballots: usize, k: usize) -> Vec<BallotResponseRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_ballots * k);
    for b in 0..n_ballots {
        let options = sample_options(&mut rng, k);
        let sel = sample_selection(&mut rng, k);
        let text = compose_reply(&sel, &options, &mut rng);
        out.extend(records_for(&format!("b{b:05}"), &text, &options, &sel));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tier1::dictionary::FeatureDictionary;
    use crate::tier1::features::tokenize;

    #[test]
    fn corpus_is_deterministic_and_well_formed() {
        let a = generate_corpus(3, 200, 3);
        assert_eq!(a, generate_corpus(3, 200, 3));
        assert_eq!(a.len(), 600);
        let groups = crate::tier1::classifier::group_ballots(&a).unwrap();
        assert_eq!(groups.len(), 200);
    }

    #[test]
    fn corpus_touches_every_dictionary_category() {
        let dict = FeatureDictionary::default();
        let corpus = generate_corpus(11, 2000, 3);
        for (cat, words) in &dict.categories {
            let hit = corpus.iter().any(|r| tokenize(&r.response_text).iter().any(|t| words.contains(t)));
            assert!(hit, "category {cat} never appears");
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let a = generate_corpus(5, 10, 3);
        write_jsonl(&p, &a).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), a);
    }
}
