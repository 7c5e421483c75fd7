//! Machine-side microtask execution: the ballot-response classifier, the
//! time-expression heuristics, and suggestions for assisted microtasks.

pub mod assist;
pub mod classifier;
pub mod corpus;
pub mod dictionary;
pub mod features;
pub mod timex;

use std::sync::OnceLock;

use thiserror::Error;

pub use assist::{suggest_ballot, suggest_times, CorpusStore, Suggestion};
pub use classifier::{
    accuracy, train, Accuracy, BallotClassifier, ClassifierMetrics, OptionDecision, ResponseDecision, TrainParams,
};
pub use corpus::{compose_reply, generate_corpus, BallotResponseRecord};
pub use dictionary::FeatureDictionary;
pub use features::{featurize, tokenize, OptionAttrs};
pub use timex::{extract_time_expressions, select_meeting_fields, MeetingFields, TimeExpression, TimeKind, TimeValue};

#[derive(Debug, Error)]
pub enum Tier1Error {
    #[error("classifier has not been trained")]
    UntrainedModel,
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("malformed corpus: {0}")]
    MalformedCorpus(String),
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error("dictionary: {0}")]
    Dictionary(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Seed and size of the bundled training corpus.
pub const DEFAULT_CORPUS_SEED: u64 = 2016;
pub const DEFAULT_CORPUS_BALLOTS: usize = 2000;

/// Classifier trained once per process on the bundled synthetic corpus.
pub fn default_classifier() -> &'static BallotClassifier {
    static CLF: OnceLock<BallotClassifier> = OnceLock::new();
    CLF.get_or_init(|| {
        let corpus = generate_corpus(DEFAULT_CORPUS_SEED, DEFAULT_CORPUS_BALLOTS, 3);
        train(FeatureDictionary::default(), &corpus, &TrainParams::default()).expect("bundled corpus trains").0
    })
}
