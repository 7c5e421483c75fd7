use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::BallotResponseRecord;
use super::dictionary::FeatureDictionary;
use super::features::{feature_names, featurize, OptionAttrs};
use super::Tier1Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MARGIN: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub train_fraction: f64,
    /// Seeds the ballot shuffle before the train/test split.
    pub split_seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 500, l2: 1e-3, train_fraction: 0.8, split_seed: 0 }
    }
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Mean log-loss plus `l2/2 * |w|^2` (bias not regularized).
pub fn objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[bool], l2: f64) -> f64 {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = dot(w, x) + b;
        // log(1 + e^z) - y z, written to avoid overflow
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        loss += softplus - if y { z } else { 0.0 };
    }
    loss / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Analytic gradient of [`objective`]: `(dw, db)`.
pub fn gradient(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[bool], l2: f64) -> (Vec<f64>, f64) {
    let n = xs.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let r = logistic(dot(w, x) + b) - if y { 1.0 } else { 0.0 };
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += r * xi;
        }
        gb += r;
    }
    for (g, wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    (gw, gb / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionDecision {
    pub probability: f64,
    pub decision: bool,
    pub confident: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDecision {
    pub options: Vec<OptionDecision>,
}

impl ResponseDecision {
    pub fn selections(&self) -> Vec<bool> {
        self.options.iter().map(|o| o.decision).collect()
    }

    /// The whole response is handled automatically only if every option is.
    pub fn confident(&self) -> bool {
        self.options.iter().all(|o| o.confident)
    }
}

/// Per-option logistic regression over binary response features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallotClassifier {
    pub dictionary: FeatureDictionary,
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub decision_threshold: f64,
    pub confidence_margin: f64,
    pub trained: bool,
}

impl BallotClassifier {
    pub fn untrained(dictionary: FeatureDictionary) -> Self {
        let names = feature_names(&dictionary);
        Self {
            weights: vec![0.0; names.len()],
            feature_names: names,
            dictionary,
            bias: 0.0,
            decision_threshold: DEFAULT_THRESHOLD,
            confidence_margin: DEFAULT_MARGIN,
            trained: false,
        }
    }

    pub fn with_weights(dictionary: FeatureDictionary, weights: Vec<f64>, bias: f64) -> Result<Self, Tier1Error> {
        let mut c = Self::untrained(dictionary);
        if weights.len() != c.weights.len() {
            return Err(Tier1Error::MalformedModel(format!(
                "expected {} weights, got {}",
                c.weights.len(),
                weights.len()
            )));
        }
        c.weights = weights;
        c.bias = bias;
        c.trained = true;
        Ok(c)
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        logistic(dot(&self.weights, x) + self.bias)
    }

    fn decide(&self, p: f64) -> OptionDecision {
        OptionDecision {
            probability: p,
            decision: p >= self.decision_threshold,
            confident: (p - self.decision_threshold).abs() >= self.confidence_margin,
        }
    }

    pub fn classify_option(&self, response: &str, option: &OptionAttrs) -> Result<OptionDecision, Tier1Error> {
        if !self.trained {
            return Err(Tier1Error::UntrainedModel);
        }
        Ok(self.decide(self.probability(&featurize(&self.dictionary, response, option))))
    }

    pub fn classify_response(&self, response: &str, options: &[OptionAttrs]) -> Result<ResponseDecision, Tier1Error> {
        let options = options.iter().map(|o| self.classify_option(response, o)).collect::<Result<_, _>>()?;
        Ok(ResponseDecision { options })
    }

    pub fn to_json(&self) -> Result<String, Tier1Error> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, Tier1Error> {
        let c: Self = serde_json::from_str(text)?;
        if c.weights.len() != feature_names(&c.dictionary).len() {
            return Err(Tier1Error::MalformedModel("weight count does not match the dictionary".into()));
        }
        Ok(c)
    }
}

/// Accuracy pair for one predictor on one set of ballots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub per_choice: f64,
    pub exact_subset: f64,
}

/// Model vs most-frequent-label baseline, on individual choices and on
/// whole ballots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub model: Accuracy,
    pub baseline: Accuracy,
    pub baseline_label: bool,
    pub train_ballots: usize,
    pub test_ballots: usize,
    pub test_choices: usize,
}

/// Per-choice and exact-subset accuracy of predicted selection vectors.
pub fn accuracy(predicted: &[Vec<bool>], gold: &[Vec<bool>]) -> Accuracy {
    assert_eq!(predicted.len(), gold.len());
    let mut choices = 0usize;
    let mut right = 0usize;
    let mut exact = 0usize;
    for (p, g) in predicted.iter().zip(gold) {
        assert_eq!(p.len(), g.len());
        let hits = p.iter().zip(g).filter(|(a, b)| a == b).count();
        choices += g.len();
        right += hits;
        exact += usize::from(hits == g.len());
    }
    if gold.is_empty() {
        return Accuracy { per_choice: 0.0, exact_subset: 0.0 };
    }
    Accuracy { per_choice: right as f64 / choices as f64, exact_subset: exact as f64 / gold.len() as f64 }
}

/// One ballot's records in option order.
pub type BallotGroup = Vec<BallotResponseRecord>;

/// Groups records by ballot and checks each has exactly K records with
/// ordinals 1..=K.
pub fn group_ballots(records: &[BallotResponseRecord]) -> Result<Vec<BallotGroup>, Tier1Error> {
    let mut by: BTreeMap<&str, Vec<BallotResponseRecord>> = BTreeMap::new();
    for r in records {
        by.entry(r.ballot_id.as_str()).or_default().push(r.clone());
    }
    let mut out = Vec::with_capacity(by.len());
    for (id, mut g) in by {
        g.sort_by_key(|r| r.option.ordinal);
        let k = g[0].option.of;
        let ok = g.len() == k
            && g.iter().enumerate().all(|(i, r)| r.option.ordinal == i + 1 && r.option.of == k)
            && g.iter().all(|r| r.response_text == g[0].response_text);
        if !ok {
            return Err(Tier1Error::MalformedCorpus(format!("ballot {id} does not have K consistent records")));
        }
        out.push(g);
    }
    Ok(out)
}

fn predict_ballot(clf: &BallotClassifier, g: &BallotGroup) -> Vec<bool> {
    g.iter().map(|r| clf.probability(&featurize(&clf.dictionary, &r.response_text, &r.option)) >= clf.decision_threshold).collect()
}

fn gold(g: &BallotGroup) -> Vec<bool> {
    g.iter().map(|r| r.selected).collect()
}

/// Evaluates a classifier and a constant-label baseline on `ballots`.
pub fn evaluate(clf: &BallotClassifier, baseline_label: bool, ballots: &[BallotGroup]) -> (Accuracy, Accuracy) {
    let golds: Vec<Vec<bool>> = ballots.iter().map(gold).collect();
    let model: Vec<Vec<bool>> = ballots.iter().map(|g| predict_ballot(clf, g)).collect();
    let base: Vec<Vec<bool>> = golds.iter().map(|g| vec![baseline_label; g.len()]).collect();
    (accuracy(&model, &golds), accuracy(&base, &golds))
}

/// Batch gradient descent on the training split; metrics on the held-out
/// split. The split is by ballot so no response appears on both sides.
pub fn train(
    dictionary: FeatureDictionary,
    records: &[BallotResponseRecord],
    params: &TrainParams,
) -> Result<(BallotClassifier, ClassifierMetrics), Tier1Error> {
    if records.is_empty() {
        return Err(Tier1Error::DegenerateCorpus("empty corpus".into()));
    }
    let mut ballots = group_ballots(records)?;
    ballots.shuffle(&mut ChaCha8Rng::seed_from_u64(params.split_seed));
    let n_train = ((ballots.len() as f64) * params.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, ballots.len());
    let (train_set, test_set) = ballots.split_at(n_train);

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in train_set.iter().flatten() {
        xs.push(featurize(&dictionary, &r.response_text, &r.option));
        ys.push(r.selected);
    }
    let positives = ys.iter().filter(|y| **y).count();
    if positives == 0 || positives == ys.len() {
        return Err(Tier1Error::DegenerateCorpus("training labels are all one class".into()));
    }
    let mut clf = BallotClassifier::untrained(dictionary);
    let (mut w, mut b) = (clf.weights.clone(), 0.0);
    for _ in 0..params.epochs {
        let (gw, gb) = gradient(&w, b, &xs, &ys, params.l2);
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= params.learning_rate * g;
        }
        b -= params.learning_rate * gb;
    }
    clf.weights = w;
    clf.bias = b;
    clf.trained = true;

    // ties go to "not selected", the usual majority on ballots
    let baseline_label = positives * 2 > ys.len();
    let (model, baseline) = evaluate(&clf, baseline_label, test_set);
    let metrics = ClassifierMetrics {
        model,
        baseline,
        baseline_label,
        train_ballots: train_set.len(),
        test_ballots: test_set.len(),
        test_choices: test_set.iter().map(Vec::len).sum(),
    };
    Ok((clf, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_exactly_half_and_never_confident() {
        let d = FeatureDictionary::default();
        let n = feature_names(&d).len();
        let clf = BallotClassifier::with_weights(d, vec![0.0; n], 0.0).unwrap();
        let o = OptionAttrs {
            ordinal: 1,
            of: 1,
            day_name: "monday".into(),
            date: chrono::NaiveDate::from_ymd_opt(2016, 4, 4).unwrap(),
            hour: 9,
            minute: 0,
            zone: "+00:00".into(),
        };
        let d = clf.classify_option("Monday works", &o).unwrap();
        assert_eq!(d.probability, 0.5);
        assert!(d.decision && !d.confident);
        let untrained = BallotClassifier::untrained(FeatureDictionary::default());
        assert!(matches!(untrained.classify_option("x", &o), Err(Tier1Error::UntrainedModel)));
    }

    #[test]
    fn logistic_is_stable_and_monotone() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
        let mut last = 0.0;
        for i in -50..50 {
            let p = logistic(i as f64 * 0.37);
            assert!(p > last);
            last = p;
        }
    }
}
