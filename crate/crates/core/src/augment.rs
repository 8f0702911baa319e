//! Labeled training data and its augmentation: minority-class oversampling
//! and back-translation through a pluggable [`Translator`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::LabelCoarse;
use crate::corpus::{format_timestamp, parse_timestamp, Lang, Tweet};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("class {0} has no examples; cannot oversample")]
    EmptyClass(LabelCoarse),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranslateError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("translation service returned HTTP {0}")]
    Status(u16),
    #[error("malformed translation response: {0}")]
    Malformed(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Expert,
    Crowd,
    Auto,
    Oversample,
    Backtranslation,
}

impl Provenance {
    pub fn is_human(self) -> bool {
        matches!(self, Provenance::Expert | Provenance::Crowd)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Expert => "expert",
            Provenance::Crowd => "crowd",
            Provenance::Auto => "auto",
            Provenance::Oversample => "oversample",
            Provenance::Backtranslation => "backtranslation",
        };
        f.write_str(s)
    }
}

/// Where an augmented copy came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopySource {
    pub id: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub tweet: Tweet,
    pub label: LabelCoarse,
    pub provenance: Provenance,
    pub source: Option<CopySource>,
}

impl LabeledExample {
    pub fn new(tweet: Tweet, label: LabelCoarse, provenance: Provenance) -> Self {
        LabeledExample {
            tweet,
            label,
            provenance,
            source: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.tweet.id
    }

    /// A copy with a new id and text, tagged with `provenance` and pointing
    /// back at the original (or at this example's own source, for copies of copies).
    fn derived(&self, id: String, text: Option<String>, provenance: Provenance) -> Self {
        let tweet = match text {
            Some(text) => self.tweet.with_text(id, text),
            None => Tweet {
                id,
                ..self.tweet.clone()
            },
        };
        let source = self.source.clone().unwrap_or(CopySource {
            id: self.tweet.id.clone(),
            provenance: self.provenance,
        });
        LabeledExample {
            tweet,
            label: self.label,
            provenance,
            source: Some(source),
        }
    }
}

/// Ordered labeled examples with per-class counts kept in sync.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledDataset {
    examples: Vec<LabeledExample>,
    class_counts: [usize; 3],
}

impl LabeledDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_examples(examples: Vec<LabeledExample>) -> Self {
        let mut d = LabeledDataset::new();
        d.extend(examples);
        d
    }

    pub fn push(&mut self, example: LabeledExample) {
        self.class_counts[example.label.index()] += 1;
        self.examples.push(example);
    }

    pub fn extend(&mut self, examples: impl IntoIterator<Item = LabeledExample>) {
        for e in examples {
            self.push(e);
        }
    }

    /// Appends examples of `other` whose ids are not already present.
    pub fn union(&self, other: &LabeledDataset) -> LabeledDataset {
        let mut ids: BTreeSet<&str> = self.examples.iter().map(|e| e.id()).collect();
        let mut out = self.clone();
        for e in &other.examples {
            if ids.insert(e.id()) {
                out.push(e.clone());
            }
        }
        out
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledExample> {
        self.examples.iter()
    }

    pub fn into_examples(self) -> Vec<LabeledExample> {
        self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count(&self, label: LabelCoarse) -> usize {
        self.class_counts[label.index()]
    }

    pub fn class_counts(&self) -> BTreeMap<LabelCoarse, usize> {
        LabelCoarse::ALL.iter().map(|&l| (l, self.count(l))).collect()
    }

    pub fn count_provenance(&self, p: Provenance) -> usize {
        self.examples.iter().filter(|e| e.provenance == p).count()
    }

    pub fn human_count(&self) -> usize {
        self.examples.iter().filter(|e| e.provenance.is_human()).count()
    }

    pub fn filter(&self, mut keep: impl FnMut(&LabeledExample) -> bool) -> LabeledDataset {
        LabeledDataset::from_examples(self.examples.iter().filter(|e| keep(e)).cloned().collect())
    }
}

impl<'a> IntoIterator for &'a LabeledDataset {
    type Item = &'a LabeledExample;
    type IntoIter = std::slice::Iter<'a, LabeledExample>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ExampleRecord {
    id: String,
    text: String,
    lang: Lang,
    created_at: String,
    label: LabelCoarse,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<CopySource>,
}

/// Writes a dataset as JSONL, one labeled tweet per line.
pub fn write_dataset<W: Write>(mut w: W, d: &LabeledDataset) -> std::io::Result<()> {
    for e in d {
        let rec = ExampleRecord {
            id: e.tweet.id.clone(),
            text: e.tweet.text.clone(),
            lang: e.tweet.lang,
            created_at: format_timestamp(&e.tweet.created_at),
            label: e.label,
            provenance: e.provenance,
            source: e.source.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<LabeledDataset, AugmentError> {
    let mut d = LabeledDataset::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| AugmentError::Parse { line: i + 1, message };
        let rec: ExampleRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let created_at =
            parse_timestamp(&rec.created_at).ok_or_else(|| err(format!("invalid created_at `{}`", rec.created_at)))?;
        d.push(LabeledExample {
            tweet: Tweet::new(rec.id, rec.text, rec.lang, created_at),
            label: rec.label,
            provenance: rec.provenance,
            source: rec.source,
        });
    }
    Ok(d)
}

/// Duplicates random members of the smaller classes until every class has
/// as many examples as the largest one. Duplicates are appended after the
/// original examples and get ids `<source>~os<n>`.
pub fn oversample(d: &LabeledDataset, seed: u64) -> Result<LabeledDataset, AugmentError> {
    if let Some(&empty) = LabelCoarse::ALL.iter().find(|&&l| d.count(l) == 0) {
        return Err(AugmentError::EmptyClass(empty));
    }
    let target = LabelCoarse::ALL.iter().map(|&l| d.count(l)).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = d.clone();
    let mut copy_no = 0usize;
    for label in LabelCoarse::ALL {
        let members: Vec<&LabeledExample> = d.iter().filter(|e| e.label == label).collect();
        for _ in members.len()..target {
            let src = members[rng.gen_range(0..members.len())];
            let id = format!("{}~os{copy_no}", src.id());
            copy_no += 1;
            out.push(src.derived(id, None, Provenance::Oversample));
        }
    }
    Ok(out)
}

/// Machine translation service.
pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, source: Lang, target: Lang) -> Result<String, TranslateError>;
}

/// Returns the input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _source: Lang, _target: Lang) -> Result<String, TranslateError> {
        Ok(text.to_string())
    }
}

/// Deterministic stand-in: reverses word order and prepends a
/// `[src>tgt]` marker. A round trip restores the original word order
/// between two markers, so hashtags survive.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockTranslator;

impl Translator for MockTranslator {
    fn translate(&self, text: &str, source: Lang, target: Lang) -> Result<String, TranslateError> {
        let mut words: Vec<&str> = text.split_whitespace().collect();
        words.reverse();
        Ok(format!("[{source}>{target}] {}", words.join(" ")))
    }
}

/// Client for a JSON translation service:
/// `POST {base_url}/translate` with `{"q","source","target"}` → `{"text"}`.
pub struct HttpTranslator {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    max_retries: u32,
    backoff: Duration,
    min_interval: Duration,
    last_call: Mutex<Option<Instant>>,
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    q: &'a str,
    source: Lang,
    target: Lang,
}

#[derive(Deserialize)]
struct TranslateResponse {
    text: String,
}

impl HttpTranslator {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpTranslator {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent,
            max_retries: 3,
            backoff: Duration::from_millis(200),
            min_interval: Duration::ZERO,
            last_call: Mutex::new(None),
        }
    }

    /// Reads the API key from the environment variable `key_var`, if set.
    pub fn from_env(base_url: impl Into<String>, key_var: &str, timeout: Duration) -> Self {
        HttpTranslator::new(base_url, std::env::var(key_var).ok(), timeout)
    }

    pub fn with_retries(mut self, max_retries: u32, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    /// Minimum spacing between consecutive requests.
    pub fn with_rate_limit(mut self, min_interval: Duration) -> Self {
        self.min_interval = min_interval;
        self
    }

    fn throttle(&self) {
        let mut last = self.last_call.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn call_once(&self, text: &str, source: Lang, target: Lang) -> Result<String, TranslateError> {
        self.throttle();
        let url = format!("{}/translate", self.base_url);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = TranslateRequest { q: text, source, target };
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => TranslateError::Status(code),
            other => TranslateError::Transport(other.to_string()),
        })?;
        let parsed: TranslateResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| TranslateError::Malformed(e.to_string()))?;
        Ok(parsed.text)
    }
}

fn retryable(e: &TranslateError) -> bool {
    match e {
        TranslateError::Transport(_) => true,
        TranslateError::Status(code) => *code == 429 || *code >= 500,
        _ => false,
    }
}

impl Translator for HttpTranslator {
    fn translate(&self, text: &str, source: Lang, target: Lang) -> Result<String, TranslateError> {
        let mut attempt = 0;
        loop {
            match self.call_once(text, source, target) {
                Ok(t) => return Ok(t),
                Err(e) if attempt < self.max_retries && retryable(&e) => {
                    std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BackTranslateOptions {
    /// Drop copies whose round-tripped text equals the original.
    pub drop_identical: bool,
}

#[derive(Debug, Clone)]
pub struct BackTranslation {
    pub dataset: LabeledDataset,
    pub added: usize,
    pub skipped: usize,
    pub dropped_identical: usize,
    pub warnings: Vec<String>,
}

/// Round-trips one text source → pivot → source. Texts already in the pivot
/// language go through the other language instead.
pub fn round_trip(t: &dyn Translator, text: &str, lang: Lang, pivot: Lang) -> Result<String, TranslateError> {
    let via = if lang == pivot { lang.other() } else { pivot };
    let forward = t.translate(text, lang, via)?;
    t.translate(&forward, via, lang)
}

/// Appends one back-translated copy (`<id>~bt`) of every expert- or
/// crowd-labeled example. Translator calls run in parallel; copies are
/// appended in input order. Failed items are skipped and reported.
pub fn back_translate(
    d: &LabeledDataset,
    t: &dyn Translator,
    pivot: Lang,
    opts: BackTranslateOptions,
) -> BackTranslation {
    let human: Vec<&LabeledExample> = d.iter().filter(|e| e.provenance.is_human()).collect();
    let results: Vec<Result<String, TranslateError>> = human
        .par_iter()
        .map(|e| round_trip(t, &e.tweet.text, e.tweet.lang, pivot))
        .collect();

    let mut out = d.clone();
    let mut bt = BackTranslation {
        dataset: LabeledDataset::new(),
        added: 0,
        skipped: 0,
        dropped_identical: 0,
        warnings: Vec::new(),
    };
    for (e, res) in human.iter().zip(results) {
        match res {
            Ok(text) if opts.drop_identical && text == e.tweet.text => bt.dropped_identical += 1,
            Ok(text) => {
                out.push(e.derived(format!("{}~bt", e.id()), Some(text), Provenance::Backtranslation));
                bt.added += 1;
            }
            Err(err) => {
                let msg = format!("back-translation of {} failed: {err}", e.id());
                log::warn!("{msg}");
                bt.warnings.push(msg);
                bt.skipped += 1;
            }
        }
    }
    bt.dataset = out;
    bt
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub oversample: bool,
    pub back_translate: bool,
    pub seed: u64,
    pub pivot: Lang,
    pub drop_identical: bool,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        AugmentPlan {
            oversample: false,
            back_translate: false,
            seed: 0,
            pivot: Lang::De,
            drop_identical: false,
        }
    }
}

/// Size bookkeeping of an assembled training set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AugmentSummary {
    pub human: usize,
    pub auto: usize,
    pub oversample_duplicates: usize,
    pub backtranslation_copies: usize,
    pub translation_failures: usize,
    pub total: usize,
}

/// Assembles `human ∪ auto`, then appends oversampling duplicates and
/// back-translated copies of the human-labeled part as the plan requests.
pub fn build_training_set(
    human: &LabeledDataset,
    auto: &LabeledDataset,
    plan: &AugmentPlan,
    translator: &dyn Translator,
) -> Result<(LabeledDataset, AugmentSummary), AugmentError> {
    let base = human.union(auto);
    let mut summary = AugmentSummary {
        human: human.len(),
        auto: base.len() - human.len(),
        ..Default::default()
    };
    let mut out = base;
    if plan.oversample {
        let balanced = oversample(human, plan.seed)?;
        let dupes = &balanced.examples()[human.len()..];
        summary.oversample_duplicates = dupes.len();
        out.extend(dupes.iter().cloned());
    }
    if plan.back_translate {
        let bt = back_translate(
            human,
            translator,
            plan.pivot,
            BackTranslateOptions {
                drop_identical: plan.drop_identical,
            },
        );
        summary.backtranslation_copies = bt.added;
        summary.translation_failures = bt.skipped;
        out.extend(bt.dataset.examples()[human.len()..].iter().cloned());
    }
    summary.total = out.len();
    Ok((out, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn example(id: usize, label: LabelCoarse, provenance: Provenance) -> LabeledExample {
        let lang = if id % 2 == 0 { Lang::En } else { Lang::De };
        let ts = Utc.with_ymd_and_hms(2020, 3, 1, 0, 0, 0).unwrap() + chrono::Duration::hours(id as i64);
        LabeledExample::new(
            Tweet::new(format!("t{id}"), format!("text {id} #tag{}", id % 3), lang, ts),
            label,
            provenance,
        )
    }

    fn dataset(counts: [usize; 3], provenance: Provenance) -> LabeledDataset {
        let mut d = LabeledDataset::new();
        let mut id = 0;
        for (label, &n) in LabelCoarse::ALL.iter().zip(&counts) {
            for _ in 0..n {
                d.push(example(id, *label, provenance));
                id += 1;
            }
        }
        d
    }

    struct FailingOn(&'static str);

    impl Translator for FailingOn {
        fn translate(&self, text: &str, _: Lang, _: Lang) -> Result<String, TranslateError> {
            if text.contains(self.0) {
                Err(TranslateError::Other("boom".into()))
            } else {
                Ok(text.to_uppercase())
            }
        }
    }

    #[test]
    fn oversample_crowd_counts() {
        let d = dataset([768, 209, 403], Provenance::Crowd);
        let o = oversample(&d, 1).unwrap();
        assert_eq!(o.len(), 2304);
        assert_eq!(o.len(), 3 * 768);
        for l in LabelCoarse::ALL {
            assert_eq!(o.count(l), 768);
        }
        assert_eq!(&o.examples()[..d.len()], d.examples());
        let dup = &o.examples()[d.len()];
        assert_eq!(dup.provenance, Provenance::Oversample);
        assert_eq!(dup.source.as_ref().unwrap().provenance, Provenance::Crowd);
        assert!(dup.id().starts_with(&format!("{}~os", dup.source.as_ref().unwrap().id)));
    }

    #[test]
    fn oversample_balanced_and_empty() {
        let d = dataset([4, 4, 4], Provenance::Expert);
        assert_eq!(oversample(&d, 9).unwrap(), d);
        let d = dataset([4, 0, 4], Provenance::Expert);
        assert!(matches!(oversample(&d, 9), Err(AugmentError::EmptyClass(LabelCoarse::A))));
    }

    #[test]
    fn back_translate_identity_and_sizes() {
        let mut d = dataset([3, 2, 2], Provenance::Expert);
        d.extend(dataset([1, 1, 1], Provenance::Auto).into_examples().into_iter().map(|mut e| {
            e.tweet.id = format!("auto-{}", e.tweet.id);
            e
        }));
        let bt = back_translate(&d, &IdentityTranslator, Lang::De, Default::default());
        assert_eq!(bt.dataset.len(), d.len() + d.human_count());
        for copy in &bt.dataset.examples()[d.len()..] {
            let src = d.iter().find(|e| e.id() == copy.source.as_ref().unwrap().id).unwrap();
            assert_eq!(copy.tweet.text, src.tweet.text);
            assert_eq!(copy.label, src.label);
            assert_eq!(copy.tweet.created_at, src.tweet.created_at);
            assert_eq!(copy.id(), format!("{}~bt", src.id()));
        }
        let dropped = back_translate(&d, &IdentityTranslator, Lang::De, BackTranslateOptions { drop_identical: true });
        assert_eq!(dropped.dataset.len(), d.len());
        assert_eq!(dropped.dropped_identical, d.human_count());

        let empty = back_translate(&LabeledDataset::new(), &MockTranslator, Lang::De, Default::default());
        assert!(empty.dataset.is_empty());
    }

    #[test]
    fn back_translate_skips_failures_in_order() {
        let d = dataset([2, 2, 2], Provenance::Crowd);
        let bt = back_translate(&d, &FailingOn("text 3 "), Lang::De, Default::default());
        assert_eq!(bt.skipped, 1);
        assert_eq!(bt.added, 5);
        let ids: Vec<&str> = bt.dataset.examples()[6..].iter().map(|e| e.id()).collect();
        assert_eq!(ids, vec!["t0~bt", "t1~bt", "t2~bt", "t4~bt", "t5~bt"]);
    }

    #[test]
    fn mock_round_trip_keeps_hashtags() {
        let text = "Helft jetzt #LeaveNoOneBehind bitte";
        let out = round_trip(&MockTranslator, text, Lang::De, Lang::De).unwrap();
        assert_eq!(out, "[en>de] Helft jetzt #LeaveNoOneBehind bitte [de>en]");
        let out = round_trip(&MockTranslator, "a b", Lang::En, Lang::De).unwrap();
        assert_eq!(out, "[de>en] a b [en>de]");
        assert_eq!(crate::corpus::extract_hashtags(text), vec!["leavenoonebehind"]);
    }

    #[test]
    fn training_set_bookkeeping() {
        let human = dataset([12, 10, 8], Provenance::Expert);
        let mut auto = LabeledDataset::new();
        for (i, l) in LabelCoarse::ALL.iter().cycle().take(15).enumerate() {
            let mut e = example(100 + i, *l, Provenance::Auto);
            e.tweet.id = format!("u{i}");
            auto.push(e);
        }
        let plan = AugmentPlan {
            oversample: true,
            back_translate: true,
            seed: 3,
            ..Default::default()
        };
        let (all, s) = build_training_set(&human, &auto, &plan, &MockTranslator).unwrap();
        assert_eq!(s.human + s.auto, 30 + 15);
        assert_eq!(s.oversample_duplicates, 3 * 12 - 30);
        assert_eq!(s.backtranslation_copies, 30);
        assert_eq!(all.len(), 45 + 6 + 30);
        assert_eq!(s.total, all.len());
    }

    #[test]
    fn dataset_jsonl_round_trip() {
        let d = oversample(&dataset([2, 1, 1], Provenance::Crowd), 4).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
    }

    proptest! {
        #[test]
        fn oversample_properties(s in 1usize..20, a in 1usize..20, o in 1usize..20, seed in any::<u64>(), seed2 in any::<u64>()) {
            let d = dataset([s, a, o], Provenance::Crowd);
            let x = oversample(&d, seed).unwrap();
            prop_assert_eq!(&x, &oversample(&d, seed).unwrap());
            let y = oversample(&d, seed2).unwrap();
            let max = s.max(a).max(o);
            for l in LabelCoarse::ALL {
                prop_assert_eq!(x.count(l), max);
                prop_assert_eq!(y.count(l), max);
            }
            for dup in &x.examples()[d.len()..] {
                let src = d.iter().find(|e| e.id() == dup.source.as_ref().unwrap().id).unwrap();
                prop_assert_eq!(&dup.tweet.text, &src.tweet.text);
                prop_assert_eq!(dup.label, src.label);
            }
        }
    }
}
