use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;

use meetsched::checks::bundled_fixtures;
use meetsched::mailroom::EmailMessage;
use meetsched::tier1::classifier::gradient;
use meetsched::tier1::timex::scan;
use meetsched::tier1::{
    accuracy, default_classifier, extract_time_expressions, generate_corpus, select_meeting_fields, train,
    BallotClassifier, FeatureDictionary, TimeExpression, TimeKind, TrainParams,
};

/// Plain log-loss written without the library's overflow guards; fine for
/// the small weights generated below.
fn naive_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[bool], l2: f64) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
        let p = 1.0 / (1.0 + (-z).exp());
        total -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    total / xs.len() as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

fn problem() -> impl Strategy<Value = (Vec<f64>, f64, Vec<Vec<f64>>, Vec<bool>, f64)> {
    (1usize..6, 1usize..12).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(-2.0f64..2.0, d),
            -1.0f64..1.0,
            prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), -1.0f64..1.0], d), n),
            prop::collection::vec(any::<bool>(), n),
            prop_oneof![Just(0.0), 1e-4f64..1e-1],
        )
    })
}

proptest! {
    #[test]
    fn gradient_matches_central_differences((w, b, xs, ys, l2) in problem()) {
        let (gw, gb) = gradient(&w, b, &xs, &ys, l2);
        let h = 1e-5;
        let close = |a: f64, n: f64| (a - n).abs() <= 1e-6 * (1.0 + a.abs().max(n.abs()));
        for j in 0..w.len() {
            let mut up = w.clone();
            let mut down = w.clone();
            up[j] += h;
            down[j] -= h;
            let n = (naive_objective(&up, b, &xs, &ys, l2) - naive_objective(&down, b, &xs, &ys, l2)) / (2.0 * h);
            prop_assert!(close(gw[j], n), "w[{j}]: analytic {} numeric {n}", gw[j]);
        }
        let n = (naive_objective(&w, b + h, &xs, &ys, l2) - naive_objective(&w, b - h, &xs, &ys, l2)) / (2.0 * h);
        prop_assert!(close(gb, n), "bias: analytic {gb} numeric {n}");
    }

    #[test]
    fn accuracy_matches_counting(pairs in prop::collection::vec((1usize..5).prop_flat_map(|k| (
        prop::collection::vec(any::<bool>(), k),
        prop::collection::vec(any::<bool>(), k),
    )), 1..30)) {
        let (pred, gold): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let acc = accuracy(&pred, &gold);
        let mut right = 0;
        let mut total = 0;
        let mut exact = 0;
        for (p, g) in pred.iter().zip(&gold) {
            let mut all = true;
            for i in 0..g.len() {
                total += 1;
                if p[i] == g[i] { right += 1 } else { all = false }
            }
            if all { exact += 1 }
        }
        prop_assert_eq!(acc.per_choice, right as f64 / total as f64);
        prop_assert_eq!(acc.exact_subset, exact as f64 / gold.len() as f64);
        // every ballot exact iff every choice right
        prop_assert_eq!(acc.exact_subset == 1.0, acc.per_choice == 1.0);
        prop_assert_eq!(accuracy(&gold, &gold).exact_subset, 1.0);
    }

    #[test]
    fn older_messages_never_change_extraction(
        older in prop::collection::vec("[ -~]{0,80}", 0..5),
        latest in "(meet|for|30 minutes|Monday|next week|an hour|Sep 20|9/21|tomorrow| ){1,12}",
    ) {
        let t0 = Utc.with_ymd_and_hms(2016, 4, 4, 9, 0, 0).unwrap();
        let mk = |i: usize, body: &str| EmailMessage {
            message_id: format!("<m{i}@x>"),
            in_reply_to: None,
            references: vec![],
            from_addr: "a@x.example".into(),
            to_addrs: vec!["b@x.example".into()],
            cc_addrs: vec![],
            subject: "s".into(),
            body: body.to_string(),
            sent_at: t0 + Duration::minutes(i as i64),
            attachments: vec![],
        };
        let mut thread: Vec<EmailMessage> = older.iter().enumerate().map(|(i, b)| mk(i, b)).collect();
        thread.push(mk(older.len(), &latest));
        let alone = extract_time_expressions(&thread[thread.len() - 1..]);
        prop_assert_eq!(extract_time_expressions(&thread), alone);
    }

    #[test]
    fn selection_matches_window_oracle(
        words in prop::collection::vec(prop_oneof![
            Just("30 minutes"), Just("an hour"), Just("2 hrs"), Just("Monday"), Just("next week"),
            Just("Sep 20"), Just("tomorrow"), Just("Cal"), Just("Calendar"), Just("please"), Just("é"), Just("meet"),
        ], 1..16),
    ) {
        let body = words.join(" ");
        let exprs = scan(&body, "m");
        let got = select_meeting_fields(&exprs, &body, "Cal");
        prop_assert_eq!(got.duration.map(|e| e.span), oracle_pick(&exprs, &body, "Cal", TimeKind::Duration));
        prop_assert_eq!(got.date.map(|e| e.span), oracle_pick(&exprs, &body, "Cal", TimeKind::Date));
    }
}

/// First whole-word match found by sliding a window over characters.
fn oracle_find(body: &str, name: &str) -> Option<(usize, usize)> {
    let chars: Vec<char> = body.chars().collect();
    let target: Vec<char> = name.to_lowercase().chars().collect();
    let word = |c: char| c.is_alphanumeric() || c == '_';
    (0..chars.len().saturating_sub(target.len() - 1)).find_map(|i| {
        let window: String = chars[i..i + target.len()].iter().collect();
        let hit = window.to_lowercase().chars().eq(target.iter().copied());
        let left = i == 0 || !word(chars[i - 1]);
        let right = i + target.len() == chars.len() || !word(chars[i + target.len()]);
        (hit && left && right).then_some((i, i + target.len()))
    })
}

fn oracle_pick(exprs: &[TimeExpression], body: &str, name: &str, kind: TimeKind) -> Option<(usize, usize)> {
    let spans: Vec<(usize, usize)> = exprs.iter().filter(|e| e.kind == kind).map(|e| e.span).collect();
    let Some((ns, ne)) = oracle_find(body, name) else {
        return spans.iter().min().copied();
    };
    let mid = (ns + ne) as f64 / 2.0;
    let mut best: Option<(usize, usize)> = None;
    for s in spans {
        let d = ((s.0 + s.1) as f64 / 2.0 - mid).abs();
        best = match best {
            Some(b) if ((b.0 + b.1) as f64 / 2.0 - mid).abs() < d => Some(b),
            Some(b) if ((b.0 + b.1) as f64 / 2.0 - mid).abs() == d && b.0 < s.0 => Some(b),
            _ => Some(s),
        };
    }
    best
}

#[test]
fn bundled_fixtures_agree_with_the_oracle_and_the_extractor() {
    let fixtures = bundled_fixtures();
    assert_eq!(fixtures.len(), 50);
    for f in &fixtures {
        let exprs = scan(&f.body, &f.id);
        let got = select_meeting_fields(&exprs, &f.body, &f.assistant_name);
        let want_d = f.expected.duration.as_ref().map(|e| e.span);
        let want_t = f.expected.date.as_ref().map(|e| e.span);
        assert_eq!(oracle_pick(&exprs, &f.body, &f.assistant_name, TimeKind::Duration), want_d, "{}", f.id);
        assert_eq!(oracle_pick(&exprs, &f.body, &f.assistant_name, TimeKind::Date), want_t, "{}", f.id);
        assert_eq!(got.duration.as_ref().map(|e| e.span), want_d, "{}", f.id);
        assert_eq!(got.date.as_ref().map(|e| e.text.as_str()), f.expected.date.as_ref().map(|e| e.text.as_str()), "{}", f.id);
    }
}

#[test]
fn training_is_deterministic_and_models_round_trip() {
    let corpus = generate_corpus(11, 200, 3);
    let params = TrainParams { epochs: 60, ..TrainParams::default() };
    let (a, ma) = train(FeatureDictionary::default(), &corpus, &params).unwrap();
    let (b, mb) = train(FeatureDictionary::default(), &corpus, &params).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(ma, mb);
    let back = BallotClassifier::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back.to_json().unwrap(), a.to_json().unwrap());
    assert!(BallotClassifier::from_json("{\"weights\":[1.0]}").is_err());
}

#[test]
fn default_classifier_beats_the_constant_baseline() {
    let clf = default_classifier();
    let corpus = generate_corpus(99, 300, 3);
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for chunk in corpus.chunks(3) {
        let opts: Vec<_> = chunk.iter().map(|r| r.option.clone()).collect();
        pred.push(clf.classify_response(&chunk[0].response_text, &opts).unwrap().selections());
        gold.push(chunk.iter().map(|r| r.selected).collect::<Vec<_>>());
    }
    let model = accuracy(&pred, &gold);
    let base = accuracy(&gold.iter().map(|g| vec![false; g.len()]).collect::<Vec<_>>(), &gold);
    assert!(model.per_choice > base.per_choice, "{model:?} vs {base:?}");
    assert!(model.exact_subset > base.exact_subset, "{model:?} vs {base:?}");
}
