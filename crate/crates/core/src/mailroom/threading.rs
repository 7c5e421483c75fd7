use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EmailMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatchConfidence {
    HeaderExact,
    SubjectNormalized,
    ParticipantOverlap,
    NoMatch,
}

impl MatchConfidence {
    /// Only header evidence is strong enough to skip the classification microtask.
    pub fn is_automatic(self) -> bool {
        self == MatchConfidence::HeaderExact
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadMatch {
    pub request_id: Option<String>,
    pub confidence: MatchConfidence,
    pub evidence: String,
}

impl ThreadMatch {
    fn none() -> Self {
        Self { request_id: None, confidence: MatchConfidence::NoMatch, evidence: String::new() }
    }
}

/// What the matcher needs to know about an open request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadCandidate {
    pub request_id: String,
    pub subject: String,
    pub message_ids: BTreeSet<String>,
    /// Lowercased participant addresses (organizer and invitees).
    pub participants: BTreeSet<String>,
}

/// Lowercases, strips any run of leading `re:` / `fwd:` tokens and collapses
/// whitespace.
pub fn normalize_subject(subject: &str) -> String {
    let mut s = subject.trim().to_lowercase();
    loop {
        let stripped = ["re:", "fwd:"]
            .iter()
            .find_map(|p| s.strip_prefix(p).map(|rest| rest.trim_start().to_string()));
        match stripped {
            Some(rest) => s = rest,
            None => break,
        }
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Attributes an inbound message to one of the open requests, strongest
/// evidence first: reply headers, then normalized subject plus a known
/// sender, then a sender that participates in exactly one request.
pub fn match_thread(msg: &EmailMessage, open_requests: &[ThreadCandidate]) -> ThreadMatch {
    if let Some(parent) = &msg.in_reply_to {
        if let Some(c) = open_requests.iter().find(|c| c.message_ids.contains(parent)) {
            return ThreadMatch {
                request_id: Some(c.request_id.clone()),
                confidence: MatchConfidence::HeaderExact,
                evidence: format!("in-reply-to {parent}"),
            };
        }
    }
    // Most recent reference wins.
    for r in msg.references.iter().rev() {
        if let Some(c) = open_requests.iter().find(|c| c.message_ids.contains(r)) {
            return ThreadMatch {
                request_id: Some(c.request_id.clone()),
                confidence: MatchConfidence::HeaderExact,
                evidence: format!("references {r}"),
            };
        }
    }

    let sender = msg.from_addr.to_ascii_lowercase();
    let subject = normalize_subject(&msg.subject);
    let by_subject: Vec<_> = open_requests
        .iter()
        .filter(|c| c.participants.contains(&sender) && normalize_subject(&c.subject) == subject)
        .collect();
    if let [only] = by_subject.as_slice() {
        return ThreadMatch {
            request_id: Some(only.request_id.clone()),
            confidence: MatchConfidence::SubjectNormalized,
            evidence: format!("subject \"{subject}\" from participant {sender}"),
        };
    }

    let by_sender: Vec<_> = open_requests.iter().filter(|c| c.participants.contains(&sender)).collect();
    if let [only] = by_sender.as_slice() {
        return ThreadMatch {
            request_id: Some(only.request_id.clone()),
            confidence: MatchConfidence::ParticipantOverlap,
            evidence: format!("sender {sender} participates only in {}", only.request_id),
        };
    }
    ThreadMatch::none()
}
