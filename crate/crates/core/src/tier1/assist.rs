//! Tier-1 output offered to Tier-2 workers as prefilled answers, and the
//! store that turns worker verdicts into training labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::BallotClassifier;
use super::corpus::{records_for, BallotResponseRecord};
use super::features::OptionAttrs;
use super::timex::{extract_time_expressions, select_meeting_fields, TimeExpression};
use super::Tier1Error;
use crate::mailroom::EmailMessage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Suggestion {
    BallotSelections { selections: Vec<bool>, probabilities: Vec<f64>, confident: bool },
    TimeExpressions { expressions: Vec<TimeExpression>, duration_minutes: Option<u32>, date: Option<TimeExpression> },
    Intent { label: String, evidence: String },
}

/// Classifier decisions for a ballot response, or `None` without a model.
pub fn suggest_ballot(clf: &BallotClassifier, response: &str, options: &[OptionAttrs]) -> Option<Suggestion> {
    let d = clf.classify_response(response, options).ok()?;
    Some(Suggestion::BallotSelections {
        selections: d.selections(),
        probabilities: d.options.iter().map(|o| o.probability).collect(),
        confident: d.confident(),
    })
}

pub fn suggest_times(thread: &[EmailMessage], assistant_name: &str) -> Suggestion {
    let expressions = extract_time_expressions(thread);
    let body = thread.last().map(|m| m.body.as_str()).unwrap_or("");
    let fields = select_meeting_fields(&expressions, body, assistant_name);
    let duration_minutes = fields.duration.as_ref().and_then(|e| match e.value {
        super::timex::TimeValue::Minutes(m) => Some(m),
        _ => None,
    });
    Suggestion::TimeExpressions { expressions, duration_minutes, date: fields.date }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    #[serde(flatten)]
    pub record: BallotResponseRecord,
    /// What automation proposed for this option, if anything.
    pub suggested: Option<bool>,
    pub labeled_by: String,
}

/// Append-only store of worker-labeled ballot records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStore {
    records: Vec<LabeledRecord>,
}

impl CorpusStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one record per option. Labels always come from the worker;
    /// the suggestion is kept only as provenance.
    pub fn record_verdict(
        &mut self,
        ballot_id: &str,
        response: &str,
        options: &[OptionAttrs],
        suggestion: Option<&[bool]>,
        worker_label: &[bool],
        worker: &str,
    ) {
        for (i, r) in records_for(ballot_id, response, options, worker_label).into_iter().enumerate() {
            self.records.push(LabeledRecord {
                record: r,
                suggested: suggestion.and_then(|s| s.get(i).copied()),
                labeled_by: worker.to_string(),
            });
        }
    }

    pub fn records(&self) -> &[LabeledRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn training_records(&self) -> Vec<BallotResponseRecord> {
        self.records.iter().map(|r| r.record.clone()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), Tier1Error> {
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}
