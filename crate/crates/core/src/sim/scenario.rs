//! Scenario configuration and the canned catalog.

use chrono::{Duration, NaiveDate, NaiveTime, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::persona::{OrganizerPlan, Persona, PersonaKind, Quantifier, WarningReply};
use super::SimError;
use crate::calendar::{local_instant, parse_offset, CalendarAccount, Interval};
use crate::mailroom::{Invitation, InvitationMethod};
use crate::workflow::AgentConfig;
use crate::Timestamp;

/// What the scripted workers know about a request.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Truth {
    pub duration_minutes: u32,
    /// Answer to "when should the meeting happen?", `None` if unknowable.
    #[serde(default)]
    pub window: Option<String>,
    /// Answer to "who should attend?", `None` if unknowable.
    #[serde(default)]
    pub attendees: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Organizer,
    Invitee(usize),
}

/// One scripted expert decision. `Decide` applies the default policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExpertStep {
    Message { to: Target, body: String },
    PushBack { minutes: u32 },
    Cancel { reason: String },
    /// Move the booked meeting by whole days.
    Reschedule { days: i64 },
    Decide,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub name: String,
    pub organizer: String,
    /// Minutes after the scenario start when the organizer writes.
    pub at_minutes: i64,
    pub subject: String,
    pub body: String,
    pub invitees: Vec<Persona>,
    pub truth: Truth,
    #[serde(default)]
    pub organizer_plan: OrganizerPlan,
    /// Consumed in order, one step per macrotask claim; then `Decide`.
    #[serde(default)]
    pub expert: Vec<ExpertStep>,
}

/// Injected worker service times. Each draw is `mean × U[1 - jitter, 1 + jitter]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerModel {
    pub micro_seconds: f64,
    pub micro_jitter: f64,
    pub macro_seconds: f64,
    pub macro_jitter: f64,
    pub micro_workers: usize,
    pub macro_workers: usize,
}

impl Default for WorkerModel {
    fn default() -> Self {
        Self {
            micro_seconds: 40.0,
            micro_jitter: 0.5,
            macro_seconds: 480.0,
            macro_jitter: 0.2,
            micro_workers: 4,
            macro_workers: 2,
        }
    }
}

impl WorkerModel {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |m: f64, j: f64| m > 0.0 && (0.0..1.0).contains(&j);
        if !ok(self.micro_seconds, self.micro_jitter) || !ok(self.macro_seconds, self.macro_jitter) {
            return Err("service times must be positive with jitter in [0, 1)".into());
        }
        if self.micro_workers == 0 || self.macro_workers == 0 {
            return Err("each tier needs at least one worker".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Upgrade {
    pub at_minutes: i64,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub start: Timestamp,
    pub cases: Vec<Case>,
    pub calendars: Vec<CalendarAccount>,
    pub worker_model: WorkerModel,
    /// Workflow versions registered before the run starts.
    pub initial_version: u32,
    pub upgrade: Option<Upgrade>,
    pub agent: AgentConfig,
    /// Loop iterations before the run is declared stuck.
    pub event_budget: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.worker_model.validate().map_err(SimError::InvalidConfig)?;
        self.agent.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if self.initial_version == 0 {
            return Err(SimError::InvalidConfig("initial_version starts at 1".into()));
        }
        for c in &self.cases {
            if !self.calendars.iter().any(|a| a.subscriber_id == c.organizer) {
                return Err(SimError::InvalidConfig(format!("organizer {} has no calendar", c.organizer)));
            }
        }
        Ok(())
    }
}

/// Overrides accepted from a scenario file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Catalog scenario to start from.
    pub base: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub worker_model: Option<WorkerModel>,
    /// Replaces or extends the base's cases.
    #[serde(default)]
    pub cases: Option<Vec<Case>>,
    #[serde(default)]
    pub extra_calendars: Vec<CalendarAccount>,
    #[serde(default)]
    pub mixed_requests: Option<usize>,
}

pub const CATALOG: [&str; 16] = [
    "happy_two_person",
    "multi_invitee",
    "appointment",
    "phone",
    "out_of_bound",
    "no_common_time",
    "attendee_timeout",
    "attendee_keep",
    "ballot_processing",
    "calendar_inaccessible",
    "propose_times",
    "determine_attendees",
    "reschedule",
    "versioning",
    "mixed",
    "catalog",
];

/// Monday 09:00 in the organizers' zone.
pub fn default_start() -> Timestamp {
    Utc.with_ymd_and_hms(2016, 4, 4, 14, 0, 0).unwrap()
}

const TZ: &str = "-05:00";

/// Titles of the events seeded into subscriber calendars. Workers must never
/// see them.
pub const PRIVATE_TITLES: [&str; 4] =
    ["Oncology follow-up", "Custody hearing prep", "Severance talk with HR", "Therapy session"];
const ASSISTANT: &str = "Cal";

fn calendar(id: &str, busy_seed: u64) -> CalendarAccount {
    let mut a = CalendarAccount::new(id);
    a.timezone = TZ.into();
    let offset = parse_offset(TZ).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(busy_seed);
    let monday = NaiveDate::from_ymd_opt(2016, 4, 4).unwrap();
    for day in 0..21 {
        let date = monday + Duration::days(day);
        for _ in 0..rng.random_range(0..3) {
            let h = rng.random_range(9..16);
            let start = local_instant(offset, date, NaiveTime::from_hms_opt(h, 0, 0).unwrap());
            let n = a.events.len();
            let private = Invitation {
                uid: format!("{id}-private-{n}"),
                start,
                end: start + Duration::minutes(60),
                summary: format!("{} #{n}", PRIVATE_TITLES[n % PRIVATE_TITLES.len()]),
                organizer: id.to_string(),
                attendees: vec![id.to_string()],
                method: InvitationMethod::Request,
            };
            // overlapping draws collapse to one busy span
            if a.events.values().all(|e| e.start != start) {
                a.add_event(private).expect("seeded calendars are accessible");
            }
        }
    }
    a
}

fn fully_busy(id: &str) -> CalendarAccount {
    let mut a = CalendarAccount::new(id);
    a.timezone = TZ.into();
    let start = default_start() - Duration::days(1);
    a.busy.push(Interval { start, end: start + Duration::days(60) });
    a
}

fn inaccessible(id: &str) -> CalendarAccount {
    let mut a = calendar(id, 99);
    a.accessible = false;
    a
}

fn first_name(addr: &str) -> String {
    crate::workflow::display_name(addr).split(' ').next().unwrap_or("").to_string()
}

fn greeting(invitees: &[Persona]) -> String {
    match invitees.len() {
        0 => String::new(),
        1 => format!("Hi {}, ", first_name(&invitees[0].address)),
        2 => format!("Hi {} and {}, ", first_name(&invitees[0].address), first_name(&invitees[1].address)),
        _ => "Hi all, ".into(),
    }
}

fn p(addr: &str, kind: PersonaKind) -> Persona {
    Persona::new(addr, kind)
}

fn accept(option: usize) -> PersonaKind {
    PersonaKind::Accepter { option }
}

fn case(name: &str, organizer: &str, subject: &str, body: &str, invitees: Vec<Persona>, duration: u32) -> Case {
    Case {
        name: name.into(),
        organizer: organizer.into(),
        at_minutes: 0,
        subject: subject.into(),
        body: body.into(),
        invitees,
        truth: Truth { duration_minutes: duration, window: Some("next week".into()), attendees: None },
        organizer_plan: OrganizerPlan::default(),
        expert: Vec::new(),
    }
}

fn canned(name: &str) -> Option<(Vec<Case>, Vec<CalendarAccount>)> {
    let alice = "alice.moreno@corp.example";
    let omar = "omar.haddad@corp.example";
    let cals = || vec![calendar(alice, 1), calendar(omar, 2)];
    let one = |c: Case| Some((vec![c], cals()));
    match name {
        "happy_two_person" => {
            let inv = vec![p("bob.stone@partner.example", accept(1))];
            one(case(
                name,
                alice,
                "Budget review",
                &format!("{}could we meet for 30 minutes next week to go over the budget? {ASSISTANT}, please find us a time.", greeting(&inv)),
                inv,
                30,
            ))
        }
        "multi_invitee" => {
            let inv: Vec<Persona> = (0..11)
                .map(|i| {
                    let kind = if i % 3 == 0 {
                        PersonaKind::QuantifierResponder { template: Quantifier::All }
                    } else {
                        accept(0)
                    };
                    p(&format!("member{:02}@team.example", i + 1), kind)
                })
                .collect();
            one(case(
                name,
                omar,
                "Quarterly planning",
                &format!("{}let's have a one hour planning session next week. {ASSISTANT}, can you set it up?", greeting(&inv)),
                inv,
                60,
            ))
        }
        "appointment" => {
            let mut c = case(
                name,
                alice,
                "Dentist",
                &format!("{ASSISTANT}, please block 45 minutes tomorrow for my dentist appointment."),
                vec![],
                45,
            );
            c.truth.window = Some("tomorrow".into());
            one(c)
        }
        "phone" => {
            let inv = vec![
                p("dana.kim@partner.example", accept(0)).with_phone("+1 555 0142", true),
                p("eli.brandt@partner.example", accept(0)).with_phone("+1 555 0199", false),
            ];
            one(case(
                name,
                omar,
                "Vendor call",
                &format!(
                    "{}let's have a quick phone call next week, 30 minutes. {ASSISTANT}, please also get their phone numbers.",
                    greeting(&inv)
                ),
                inv,
                30,
            ))
        }
        "out_of_bound" => {
            let inv = vec![
                p(
                    "fay.lu@partner.example",
                    PersonaKind::MultiReplier {
                        option: 0,
                        extra: vec!["Also, could my manager join as well? Just let me know.".into()],
                    },
                ),
                p("gus.ortiz@partner.example", PersonaKind::Delayed { option: 0, hours: 6 }),
            ];
            one(case(
                name,
                alice,
                "Design sync",
                &format!("{}can we sync for 30 minutes next week about the mockups? {ASSISTANT}, please schedule it.", greeting(&inv)),
                inv,
                30,
            ))
        }
        "no_common_time" => {
            let inv = vec![p("hana.ito@partner.example", PersonaKind::Rejector), p("ian.wolfe@partner.example", accept(1))];
            one(case(
                name,
                omar,
                "Contract terms",
                &format!("{}let's talk through the contract for an hour next week. {ASSISTANT}, please find a slot.", greeting(&inv)),
                inv,
                60,
            ))
        }
        "attendee_timeout" => {
            let inv = vec![p("jon.pike@partner.example", PersonaKind::Unresponsive)];
            one(case(
                name,
                alice,
                "Intro chat",
                &format!("{}would be great to chat for 30 minutes next week. {ASSISTANT}, can you arrange it?", greeting(&inv)),
                inv,
                30,
            ))
        }
        "attendee_keep" => {
            let inv = vec![p("kim.novak@partner.example", PersonaKind::Forgetful { option: 1 })];
            let mut c = case(
                name,
                omar,
                "Hiring debrief",
                &format!("{}let's do a 30 minutes debrief next week. {ASSISTANT}, please set it up.", greeting(&inv)),
                inv,
                30,
            );
            c.organizer_plan.on_warning = WarningReply::Keep;
            one(c)
        }
        "ballot_processing" => {
            let inv = vec![p("lea.fox@partner.example", PersonaKind::Ambiguous { option: 2 })];
            one(case(
                name,
                alice,
                "Roadmap",
                &format!("{}could we review the roadmap for 30 minutes next week? {ASSISTANT}, please coordinate.", greeting(&inv)),
                inv,
                30,
            ))
        }
        "calendar_inaccessible" => {
            let ivan = "ivan.petrov@corp.example";
            let inv = vec![p("max.ruiz@partner.example", accept(0))];
            let c = case(
                name,
                ivan,
                "Partnership",
                &format!("{}let's meet for 30 minutes next week. {ASSISTANT}, please find a time.", greeting(&inv)),
                inv,
                30,
            );
            Some((vec![c], vec![inaccessible(ivan)]))
        }
        "propose_times" => {
            let paula = "paula.grant@corp.example";
            let inv = vec![p("ned.cho@partner.example", accept(0))];
            let c = case(
                name,
                paula,
                "Catch up",
                &format!("{}let's catch up for 30 minutes next week. {ASSISTANT}, please schedule.", greeting(&inv)),
                inv,
                30,
            );
            Some((vec![c], vec![fully_busy(paula)]))
        }
        "determine_attendees" => {
            let mut c = case(
                name,
                alice,
                "Design review",
                &format!("{ASSISTANT}, can you set up a meeting next week with the design team?"),
                vec![],
                30,
            );
            c.organizer_plan.expert_reply = Some("Never mind, we will sort it out at the next standup.".into());
            c.expert = vec![
                ExpertStep::Message { to: Target::Organizer, body: "Who from the design team should attend?".into() },
                ExpertStep::Decide,
            ];
            one(c)
        }
        "reschedule" => {
            let inv = vec![p("ola.berg@partner.example", accept(0))];
            let mut c = case(
                name,
                omar,
                "Launch prep",
                &format!("{}let's prepare the launch for 30 minutes next week. {ASSISTANT}, please book it.", greeting(&inv)),
                inv,
                30,
            );
            c.organizer_plan.after_scheduled =
                Some((3, "Something came up, could we move this one day later at the same time?".into()));
            c.expert = vec![ExpertStep::Reschedule { days: 1 }];
            one(c)
        }
        _ => None,
    }
}

/// Organizer texts for the mixed scenario: (body template, truth window).
/// `{g}` is the greeting, `{d}` the duration phrase, `{w}` the date phrase.
const TOPICS: [&str; 8] = ["budget", "hiring plan", "roadmap", "launch", "design", "contract", "onboarding", "metrics"];
const WINDOWS: [&str; 5] = ["next week", "tomorrow", "on Thursday", "next Tuesday", "next Friday"];
const DURATIONS: [(&str, u32); 5] = [("30 minutes", 30), ("an hour", 60), ("45 min", 45), ("half an hour", 30), ("90 minutes", 90)];

fn mixed(seed: u64, n: usize) -> (Vec<Case>, Vec<CalendarAccount>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fca_1e4d);
    let organizers: Vec<String> = (0..12).map(|i| format!("organizer{:02}@corp.example", i + 1)).collect();
    let cals = organizers.iter().enumerate().map(|(i, o)| calendar(o, 100 + i as u64)).collect();
    let mut cases = Vec::with_capacity(n);
    for i in 0..n {
        let organizer = organizers[i % organizers.len()].clone();
        let n_inv = *[1usize, 1, 1, 2, 2, 3, 4].choose(&mut rng).unwrap();
        let common = rng.random_range(0..3);
        let mut invitees = Vec::new();
        for j in 0..n_inv {
            let roll: f64 = rng.random();
            let kind = if roll < 0.62 {
                accept(common)
            } else if roll < 0.72 {
                PersonaKind::QuantifierResponder { template: Quantifier::All }
            } else if roll < 0.78 {
                PersonaKind::Delayed { option: common, hours: rng.random_range(20..40) }
            } else if roll < 0.83 {
                PersonaKind::Ambiguous { option: common }
            } else if roll < 0.87 {
                PersonaKind::Rejector
            } else if roll < 0.90 {
                PersonaKind::Unresponsive
            } else if roll < 0.93 {
                PersonaKind::Forgetful { option: common }
            } else if roll < 0.96 {
                PersonaKind::MultiReplier { option: common, extra: vec!["One more thing: can we keep it short?".into()] }
            } else {
                PersonaKind::QuantifierResponder { template: Quantifier::Except((common + 1) % 3) }
            };
            let mut persona = p(&format!("guest{:03}x{}@partner.example", i + 1, j + 1), kind);
            persona.delay_minutes = rng.random_range(10..240);
            invitees.push(persona);
        }
        let topic = TOPICS.choose(&mut rng).unwrap();
        let (dur_text, dur) = *DURATIONS.choose(&mut rng).unwrap();
        let window = *WINDOWS.choose(&mut rng).unwrap();
        let g = greeting(&invitees);
        let style: f64 = rng.random();
        let (body, truth_window) = if style < 0.85 {
            (format!("{g}let's meet for {dur_text} {window} about the {topic}. {ASSISTANT}, please find us a time."), window)
        } else {
            (format!("{g}we should talk about the {topic} for {dur_text} soon. {ASSISTANT}, please set something up."), "next week")
        };
        let mut c = case("mixed", &organizer, &format!("{} {}", capitalize(topic), "discussion"), &body, invitees, dur);
        c.at_minutes = i as i64 * 75;
        c.truth.window = Some(truth_window.to_string());
        c.organizer_plan.on_warning = *[WarningReply::Ignore, WarningReply::Keep, WarningReply::Cancel].choose(&mut rng).unwrap();
        if rng.random_bool(0.04) {
            c.organizer_plan.after_scheduled = Some((4, "Could we push this back by a day?".into()));
            c.expert = vec![ExpertStep::Reschedule { days: 1 }];
        }
        cases.push(c);
    }
    (cases, cals)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn merge_calendars(into: &mut Vec<CalendarAccount>, more: Vec<CalendarAccount>) {
    for a in more {
        if !into.iter().any(|b| b.subscriber_id == a.subscriber_id) {
            into.push(a);
        }
    }
}

pub const MIXED_REQUESTS: usize = 200;

/// Builds a named scenario from the catalog.
pub fn scenario(name: &str, seed: u64) -> Result<ScenarioConfig, SimError> {
    let mut cfg = ScenarioConfig {
        name: name.to_string(),
        seed,
        start: default_start(),
        cases: Vec::new(),
        calendars: Vec::new(),
        worker_model: WorkerModel::default(),
        initial_version: crate::workflow::definitions::LATEST_VERSION,
        upgrade: None,
        agent: AgentConfig::default(),
        event_budget: 200_000,
    };
    match name {
        "mixed" => {
            let (cases, cals) = mixed(seed, MIXED_REQUESTS);
            cfg.cases = cases;
            cfg.calendars = cals;
        }
        "versioning" => {
            let (mut a, cals) = canned("happy_two_person").unwrap();
            a[0].name = "versioning".into();
            a[0].invitees[0].kind = PersonaKind::Delayed { option: 0, hours: 30 };
            let (mut b, _) = canned("happy_two_person").unwrap();
            b[0].name = "versioning".into();
            b[0].at_minutes = 240;
            b[0].subject = "Budget follow-up".into();
            b[0].invitees[0].address = "bea.stone@partner.example".into();
            b[0].body = b[0].body.replace("Hi Bob", "Hi Bea");
            cfg.cases = vec![a.remove(0), b.remove(0)];
            cfg.calendars = cals;
            cfg.initial_version = 1;
            cfg.upgrade = Some(Upgrade { at_minutes: 180, version: 2 });
        }
        "catalog" => {
            for (i, n) in CATALOG.iter().filter(|n| !matches!(**n, "mixed" | "catalog" | "versioning")).enumerate() {
                let (mut cases, cals) = canned(n).unwrap();
                for c in &mut cases {
                    c.at_minutes += i as i64 * 20;
                }
                cfg.cases.extend(cases);
                merge_calendars(&mut cfg.calendars, cals);
            }
        }
        other => {
            let (cases, cals) = canned(other).ok_or_else(|| SimError::UnknownScenario(other.to_string()))?;
            cfg.cases = cases;
            cfg.calendars = cals;
        }
    }
    Ok(cfg)
}

/// Loads a scenario file, or builds `name` from the catalog.
pub fn resolve(name_or_path: &str, seed: u64) -> Result<ScenarioConfig, SimError> {
    if !name_or_path.ends_with(".json") {
        return scenario(name_or_path, seed);
    }
    let text = std::fs::read_to_string(name_or_path).map_err(|e| SimError::Io(e.to_string()))?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let seed = file.seed.unwrap_or(seed);
    let mut cfg = if file.base == "mixed" && file.mixed_requests.is_some() {
        let mut cfg = scenario("mixed", seed)?;
        let (cases, cals) = mixed(seed, file.mixed_requests.unwrap());
        cfg.cases = cases;
        cfg.calendars = cals;
        cfg
    } else {
        scenario(&file.base, seed)?
    };
    if let Some(w) = file.worker_model {
        cfg.worker_model = w;
    }
    if let Some(cases) = file.cases {
        cfg.cases = cases;
    }
    merge_calendars(&mut cfg.calendars, file.extra_calendars);
    cfg.validate()?;
    Ok(cfg)
}
