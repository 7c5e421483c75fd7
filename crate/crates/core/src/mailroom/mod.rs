//! Simulated mail transport.
//!
//! Every delivery goes through one transcript, which is the ordering
//! authority: a mailbox is always a subsequence of the transcript. Messages
//! are kept sorted by `sent_at`, ties broken by arrival order.

mod ics;
mod threading;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Timestamp;

pub use ics::{parse_invitation, render_invitation, IcsError, Invitation, InvitationMethod};
pub use threading::{match_thread, normalize_subject, MatchConfidence, ThreadCandidate, ThreadMatch};

pub const ICS_MEDIA_TYPE: &str = "text/calendar";

#[derive(Debug, Error)]
pub enum MailError {
    #[error("unknown recipient {0}")]
    UnknownRecipient(String),
    #[error("duplicate message id {0}")]
    DuplicateMessageId(String),
    #[error("recipient {0} listed more than once")]
    DuplicateRecipient(String),
    #[error("message {0} has no recipients")]
    NoRecipients(String),
    #[error("in-reply-to {0} missing from references")]
    ReplyNotReferenced(String),
    #[error("sender {sender} went back in time ({sent_at} < {last})")]
    SendOrder { sender: String, sent_at: Timestamp, last: Timestamp },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub media_type: String,
    #[serde(with = "b64")]
    pub content: Vec<u8>,
}

impl Attachment {
    pub fn invitation(ics: &str) -> Self {
        Self { media_type: ICS_MEDIA_TYPE.to_string(), content: ics.as_bytes().to_vec() }
    }
}

mod b64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(s.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmailMessage {
    pub message_id: String,
    pub in_reply_to: Option<String>,
    #[serde(default)]
    pub references: Vec<String>,
    #[serde(rename = "from")]
    pub from_addr: String,
    #[serde(rename = "to")]
    pub to_addrs: Vec<String>,
    #[serde(rename = "cc", default)]
    pub cc_addrs: Vec<String>,
    pub subject: String,
    pub body: String,
    pub sent_at: Timestamp,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
}

impl EmailMessage {
    /// Recipients in header order, `to` before `cc`.
    pub fn recipients(&self) -> impl Iterator<Item = &str> {
        self.to_addrs.iter().chain(self.cc_addrs.iter()).map(String::as_str)
    }

    pub fn is_addressed_to(&self, addr: &str) -> bool {
        self.recipients().any(|r| r.eq_ignore_ascii_case(addr))
    }

    /// Builds the reply headers (`In-Reply-To` plus the extended `References`
    /// chain) for a message answering `self`.
    pub fn reply_headers(&self) -> (Option<String>, Vec<String>) {
        let mut refs = self.references.clone();
        if !refs.contains(&self.message_id) {
            refs.push(self.message_id.clone());
        }
        (Some(self.message_id.clone()), refs)
    }

    pub fn invitation_attachments(&self) -> impl Iterator<Item = &Attachment> {
        self.attachments.iter().filter(|a| a.media_type == ICS_MEDIA_TYPE)
    }
}

/// On-disk mailbox line. Keys are fixed; attachments are not persisted here.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MailboxRecord {
    message_id: String,
    in_reply_to: Option<String>,
    references: Vec<String>,
    from: String,
    to: Vec<String>,
    cc: Vec<String>,
    subject: String,
    body: String,
    sent_at: String,
}

impl From<&EmailMessage> for MailboxRecord {
    fn from(m: &EmailMessage) -> Self {
        Self {
            message_id: m.message_id.clone(),
            in_reply_to: m.in_reply_to.clone(),
            references: m.references.clone(),
            from: m.from_addr.clone(),
            to: m.to_addrs.clone(),
            cc: m.cc_addrs.clone(),
            subject: m.subject.clone(),
            body: m.body.clone(),
            sent_at: m.sent_at.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub message_id: String,
    /// Position of the message in the transcript at the time of delivery.
    pub transcript_index: usize,
    pub delivered_to: Vec<String>,
}

/// Ordering key: `sent_at`, then arrival sequence.
type OrderKey = (Timestamp, u64);

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Mailroom {
    directory: BTreeSet<String>,
    transcript: Vec<EmailMessage>,
    keys: Vec<OrderKey>,
    mailboxes: BTreeMap<String, Vec<OrderKey>>,
    #[serde(skip)]
    ids: HashMap<String, OrderKey>,
    last_sent: BTreeMap<String, Timestamp>,
    arrivals: u64,
}

impl Mailroom {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, addr: impl Into<String>) {
        let addr = addr.into().to_ascii_lowercase();
        self.mailboxes.entry(addr.clone()).or_default();
        self.directory.insert(addr);
    }

    pub fn is_registered(&self, addr: &str) -> bool {
        self.directory.contains(&addr.to_ascii_lowercase())
    }

    pub fn directory(&self) -> impl Iterator<Item = &str> {
        self.directory.iter().map(String::as_str)
    }

    pub fn deliver(&mut self, msg: EmailMessage) -> Result<DeliveryReceipt, MailError> {
        if self.ids.contains_key(&msg.message_id) {
            return Err(MailError::DuplicateMessageId(msg.message_id));
        }
        if let Some(parent) = &msg.in_reply_to {
            if !msg.references.contains(parent) {
                return Err(MailError::ReplyNotReferenced(parent.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for r in msg.recipients() {
            let r = r.to_ascii_lowercase();
            if !self.directory.contains(&r) {
                return Err(MailError::UnknownRecipient(r));
            }
            if !seen.insert(r.clone()) {
                return Err(MailError::DuplicateRecipient(r));
            }
        }
        if seen.is_empty() {
            return Err(MailError::NoRecipients(msg.message_id));
        }
        let sender = msg.from_addr.to_ascii_lowercase();
        if let Some(last) = self.last_sent.get(&sender) {
            if msg.sent_at < *last {
                return Err(MailError::SendOrder { sender, sent_at: msg.sent_at, last: *last });
            }
        }

        let key = (msg.sent_at, self.arrivals);
        self.arrivals += 1;
        let at = self.keys.partition_point(|k| *k < key);
        for r in &seen {
            let mailbox = self.mailboxes.entry(r.clone()).or_default();
            let pos = mailbox.partition_point(|k| *k < key);
            mailbox.insert(pos, key);
        }
        self.last_sent.insert(sender, msg.sent_at);
        self.ids.insert(msg.message_id.clone(), key);
        self.keys.insert(at, key);
        let receipt = DeliveryReceipt {
            message_id: msg.message_id.clone(),
            transcript_index: at,
            delivered_to: seen.into_iter().collect(),
        };
        self.transcript.insert(at, msg);
        Ok(receipt)
    }

    pub fn transcript(&self) -> &[EmailMessage] {
        &self.transcript
    }

    pub fn message(&self, message_id: &str) -> Option<&EmailMessage> {
        let key = self.ids.get(message_id)?;
        self.by_key(key)
    }

    fn by_key(&self, key: &OrderKey) -> Option<&EmailMessage> {
        self.keys.binary_search(key).ok().map(|i| &self.transcript[i])
    }

    /// Snapshot of a mailbox, oldest first.
    pub fn mailbox(&self, addr: &str) -> Vec<EmailMessage> {
        let Some(keys) = self.mailboxes.get(&addr.to_ascii_lowercase()) else {
            return Vec::new();
        };
        keys.iter().filter_map(|k| self.by_key(k).cloned()).collect()
    }

    pub fn mailbox_len(&self, addr: &str) -> usize {
        self.mailboxes.get(&addr.to_ascii_lowercase()).map_or(0, Vec::len)
    }

    /// Writes `transcript.jsonl` plus one `<address>.jsonl` per mailbox.
    pub fn save(&self, dir: &Path) -> Result<(), MailError> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join("transcript.jsonl"))?);
        for m in &self.transcript {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        for (addr, keys) in &self.mailboxes {
            let mut w = BufWriter::new(fs::File::create(dir.join(format!("{addr}.jsonl")))?);
            for k in keys {
                if let Some(m) = self.by_key(k) {
                    serde_json::to_writer(&mut w, &MailboxRecord::from(m))?;
                    w.write_all(b"\n")?;
                }
            }
            w.flush()?;
        }
        let dir_file = dir.join("directory.txt");
        fs::write(dir_file, self.directory.iter().map(|a| format!("{a}\n")).collect::<String>())?;
        Ok(())
    }

    /// Rebuilds a mailroom from [`Mailroom::save`] output by replaying the transcript.
    pub fn load(dir: &Path) -> Result<Self, MailError> {
        let mut room = Mailroom::new();
        let directory = fs::read_to_string(dir.join("directory.txt"))?;
        for addr in directory.lines().filter(|l| !l.trim().is_empty()) {
            room.register(addr.trim());
        }
        let f = BufReader::new(fs::File::open(dir.join("transcript.jsonl"))?);
        for line in f.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let msg: EmailMessage = serde_json::from_str(&line)?;
            room.deliver(msg)?;
        }
        Ok(room)
    }

    /// Rebuilds derived indexes after deserialization.
    pub fn reindex(&mut self) {
        self.ids = self
            .transcript
            .iter()
            .zip(&self.keys)
            .map(|(m, k)| (m.message_id.clone(), *k))
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone, Utc};

    fn t(min: i64) -> Timestamp {
        Utc.with_ymd_and_hms(2016, 4, 5, 9, 0, 0).unwrap() + Duration::minutes(min)
    }

    fn msg(id: &str, from: &str, to: &[&str], cc: &[&str], at: Timestamp) -> EmailMessage {
        EmailMessage {
            message_id: id.into(),
            in_reply_to: None,
            references: vec![],
            from_addr: from.into(),
            to_addrs: to.iter().map(|s| s.to_string()).collect(),
            cc_addrs: cc.iter().map(|s| s.to_string()).collect(),
            subject: "Coffee chat".into(),
            body: "hi".into(),
            sent_at: at,
            attachments: vec![],
        }
    }

    fn room() -> Mailroom {
        let mut r = Mailroom::new();
        for a in ["alice@x.org", "bob@x.org", "cal@calendar.help"] {
            r.register(a);
        }
        r
    }

    #[test]
    fn single_delivery_grows_one_mailbox() {
        let mut r = room();
        r.deliver(msg("m1", "bob@x.org", &["alice@x.org"], &[], t(0))).unwrap();
        assert_eq!(r.mailbox_len("alice@x.org"), 1);
        assert_eq!(r.mailbox_len("bob@x.org"), 0);
    }

    #[test]
    fn fan_out_counts_to_and_cc() {
        let mut r = room();
        r.register("dan@x.org");
        let receipt = r
            .deliver(msg("m1", "dan@x.org", &["alice@x.org", "bob@x.org"], &["cal@calendar.help"], t(0)))
            .unwrap();
        assert_eq!(receipt.delivered_to.len(), 3);
        for a in ["alice@x.org", "bob@x.org", "cal@calendar.help"] {
            assert_eq!(r.mailbox_len(a), 1);
        }
    }

    #[test]
    fn unknown_recipient_is_rejected_without_side_effects() {
        let mut r = room();
        let err = r.deliver(msg("m1", "bob@x.org", &["alice@x.org", "eve@x.org"], &[], t(0))).unwrap_err();
        assert!(matches!(err, MailError::UnknownRecipient(a) if a == "eve@x.org"));
        assert_eq!(r.mailbox_len("alice@x.org"), 0);
        assert!(r.transcript().is_empty());
    }

    #[test]
    fn header_and_order_invariants_are_enforced() {
        let mut r = room();
        r.deliver(msg("m1", "bob@x.org", &["alice@x.org"], &[], t(5))).unwrap();
        assert!(matches!(
            r.deliver(msg("m1", "bob@x.org", &["alice@x.org"], &[], t(6))),
            Err(MailError::DuplicateMessageId(_))
        ));
        assert!(matches!(
            r.deliver(msg("m2", "bob@x.org", &["alice@x.org"], &[], t(4))),
            Err(MailError::SendOrder { .. })
        ));
        let mut reply = msg("m3", "alice@x.org", &["bob@x.org"], &[], t(7));
        reply.in_reply_to = Some("m1".into());
        assert!(matches!(r.deliver(reply.clone()), Err(MailError::ReplyNotReferenced(_))));
        reply.references = vec!["m1".into()];
        r.deliver(reply).unwrap();
        assert!(matches!(
            r.deliver(msg("m4", "bob@x.org", &["alice@x.org", "ALICE@x.org"], &[], t(8))),
            Err(MailError::DuplicateRecipient(_))
        ));
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = room();
        let mut m = msg("m1", "bob@x.org", &["alice@x.org"], &["cal@calendar.help"], t(0));
        m.attachments.push(Attachment::invitation("BEGIN:VCALENDAR\r\nEND:VCALENDAR\r\n"));
        r.deliver(m).unwrap();
        r.deliver(msg("m2", "alice@x.org", &["bob@x.org"], &[], t(3))).unwrap();
        r.save(dir.path()).unwrap();

        let line = std::fs::read_to_string(dir.path().join("alice@x.org.jsonl")).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(
            keys,
            ["body", "cc", "from", "in_reply_to", "message_id", "references", "sent_at", "subject", "to"]
        );
        assert_eq!(v["sent_at"], "2016-04-05T09:00:00Z");

        let back = Mailroom::load(dir.path()).unwrap();
        assert_eq!(back.transcript(), r.transcript());
        assert_eq!(back.mailbox("bob@x.org"), r.mailbox("bob@x.org"));
    }
}
