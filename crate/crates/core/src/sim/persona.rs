//! Scripted invitees and organizers. A persona's reply is a pure function of
//! the ballot it received and the run's seeded RNG.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tier1::{compose_reply, OptionAttrs};

/// Reply text that carries no ballot signal at all.
pub const AMBIGUOUS_REPLY: &str = "Let me think about it and get back to you soon.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PersonaKind {
    /// Accepts exactly one option (0-based).
    Accepter { option: usize },
    /// Rejects every option.
    Rejector,
    /// Never answers anything.
    Unresponsive,
    /// Answers like an accepter, then keeps writing.
    MultiReplier { option: usize, extra: Vec<String> },
    /// Answers like an accepter after `hours`.
    Delayed { option: usize, hours: u32 },
    /// Answers with a quantified phrase ("all of them", "any except ...").
    QuantifierResponder { template: Quantifier },
    /// First reply is unreadable; a direct question from an expert gets a
    /// clear answer for `option`.
    Ambiguous { option: usize },
    /// Ignores the ballot and reminders but answers an expert's direct
    /// question with `option`.
    Forgetful { option: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantifier {
    All,
    None,
    /// Everything except this option.
    Except(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub address: String,
    pub kind: PersonaKind,
    /// Phone number this person would give when asked.
    #[serde(default)]
    pub phone: Option<String>,
    /// Whether the ballot reply already includes the phone number.
    #[serde(default)]
    pub volunteers_phone: bool,
    /// Minutes between receiving a ballot and replying.
    #[serde(default = "default_delay")]
    pub delay_minutes: u32,
}

fn default_delay() -> u32 {
    45
}

impl Persona {
    pub fn new(address: impl Into<String>, kind: PersonaKind) -> Self {
        Self { address: address.into(), kind, phone: None, volunteers_phone: false, delay_minutes: default_delay() }
    }

    pub fn with_phone(mut self, phone: &str, volunteers: bool) -> Self {
        self.phone = Some(phone.to_string());
        self.volunteers_phone = volunteers;
        self
    }

    /// The options this person actually accepts, if they will ever say.
    pub fn truth(&self, k: usize) -> Option<Vec<bool>> {
        let one = |i: usize| (0..k).map(|j| j == i).collect::<Vec<_>>();
        match &self.kind {
            PersonaKind::Accepter { option }
            | PersonaKind::MultiReplier { option, .. }
            | PersonaKind::Delayed { option, .. }
            | PersonaKind::Ambiguous { option }
            | PersonaKind::Forgetful { option } => Some(one(*option)),
            PersonaKind::Rejector => Some(vec![false; k]),
            PersonaKind::Unresponsive => None,
            PersonaKind::QuantifierResponder { template } => Some(match template {
                Quantifier::All => vec![true; k],
                Quantifier::None => vec![false; k],
                Quantifier::Except(i) => (0..k).map(|j| j != *i).collect(),
            }),
        }
    }

    /// Whether the ballot itself gets an answer.
    pub fn answers_ballot(&self) -> bool {
        !matches!(self.kind, PersonaKind::Unresponsive | PersonaKind::Forgetful { .. })
    }

    /// Minutes until the ballot reply goes out.
    pub fn reply_after_minutes(&self) -> u32 {
        match &self.kind {
            PersonaKind::Delayed { hours, .. } => hours * 60,
            _ => self.delay_minutes,
        }
    }

    /// The ballot reply and the selections it means (`None` when the text
    /// cannot be read as an answer).
    pub fn ballot_reply<R: Rng>(
        &self,
        options: &[OptionAttrs],
        phone_requested: bool,
        rng: &mut R,
    ) -> Option<(String, Option<Vec<bool>>)> {
        if !self.answers_ballot() {
            return None;
        }
        let truth = self.truth(options.len())?;
        let (mut text, meaning) = match self.kind {
            PersonaKind::Ambiguous { .. } => (AMBIGUOUS_REPLY.to_string(), None),
            _ => (compose_reply(&truth, options, rng), Some(truth)),
        };
        if phone_requested && self.volunteers_phone {
            if let Some(p) = &self.phone {
                text.push_str(&format!(" You can reach me at {p}."));
            }
        }
        Some((text, meaning))
    }

    /// A clear answer, sent when an expert asks directly.
    pub fn clarification<R: Rng>(&self, options: &[OptionAttrs], rng: &mut R) -> Option<(String, Vec<bool>)> {
        let truth = self.truth(options.len())?;
        Some((compose_reply(&truth, options, rng), truth))
    }

    /// Follow-up messages sent after the first reply.
    pub fn extra_messages(&self) -> &[String] {
        match &self.kind {
            PersonaKind::MultiReplier { extra, .. } => extra,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningReply {
    Keep,
    Cancel,
    #[default]
    Ignore,
}

/// How the organizer reacts to mail from the assistant.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OrganizerPlan {
    #[serde(default)]
    pub on_warning: WarningReply,
    /// Reply to a direct question from an expert.
    #[serde(default)]
    pub expert_reply: Option<String>,
    /// Written this many hours after the invitation arrives.
    #[serde(default)]
    pub after_scheduled: Option<(u32, String)>,
}

impl WarningReply {
    pub fn text(self) -> Option<&'static str> {
        match self {
            WarningReply::Keep => Some("Please keep the meeting, I will follow up with them myself."),
            WarningReply::Cancel => Some("Please cancel it then."),
            WarningReply::Ignore => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tier1::{default_classifier, featurize};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn attrs() -> Vec<OptionAttrs> {
        crate::tier1::corpus::sample_options(&mut ChaCha8Rng::seed_from_u64(1), 3)
    }

    #[test]
    fn ambiguous_reply_refers_to_no_option() {
        let clf = default_classifier();
        let xs: Vec<Vec<f64>> = attrs().iter().map(|o| featurize(&clf.dictionary, AMBIGUOUS_REPLY, o)).collect();
        // no option-relative matcher fires, so every option looks the same
        let relative = crate::tier1::features::RELATIVE_FEATURES.len();
        assert!(xs[0][xs[0].len() - relative..].iter().all(|x| *x == 0.0));
        assert!(xs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn truth_matches_reply_meaning() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Persona::new("a@x", PersonaKind::QuantifierResponder { template: Quantifier::Except(1) });
        let (_, meaning) = p.ballot_reply(&attrs(), false, &mut rng).unwrap();
        assert_eq!(meaning.unwrap(), vec![true, false, true]);
        assert!(Persona::new("b@x", PersonaKind::Unresponsive).ballot_reply(&attrs(), false, &mut rng).is_none());
    }
}
