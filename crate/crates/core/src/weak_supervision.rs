//! Pool selection, agreement-based auto-labeling and majority-vote ensembling.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::LabelCoarse;
use crate::augment::{LabeledDataset, LabeledExample, Provenance};
use crate::corpus::{Corpus, Tweet};
use crate::model::ClassifierHandle;

/// Per-run cap on warning messages kept verbatim; the counts are always exact.
const MAX_WARNINGS: usize = 100;

#[derive(Debug, Error)]
pub enum WeakSupervisionError {
    #[error("model {0} has no dev score")]
    MissingDevScore(String),
    #[error("model {id} has dev score {score} outside [0, 1]")]
    DevScoreRange { id: String, score: f64 },
    #[error("duplicate model id {0} in pool")]
    DuplicateId(String),
    #[error("requested top {requested} of a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("auto-labeling expects a pool of {expected} models, got {got}")]
    PoolSizeMismatch { expected: usize, got: usize },
    #[error("invalid auto-label config: {0}")]
    InvalidConfig(String),
    #[error("empty model pool")]
    EmptyPool,
    #[error("every pool member failed on tweet {tweet_id}")]
    AllMembersFailed { tweet_id: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered pool of classifiers with unique ids.
#[derive(Debug, Clone, Default)]
pub struct ModelPool {
    handles: Vec<ClassifierHandle>,
}

impl ModelPool {
    pub fn new(handles: Vec<ClassifierHandle>) -> Result<Self, WeakSupervisionError> {
        let mut seen = BTreeSet::new();
        for h in &handles {
            if !seen.insert(h.id.as_str()) {
                return Err(WeakSupervisionError::DuplicateId(h.id.clone()));
            }
            if let Some(score) = h.dev_score {
                if !(0.0..=1.0).contains(&score) {
                    return Err(WeakSupervisionError::DevScoreRange {
                        id: h.id.clone(),
                        score,
                    });
                }
            }
        }
        Ok(ModelPool { handles })
    }

    pub fn handles(&self) -> &[ClassifierHandle] {
        &self.handles
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.handles.iter().map(|h| h.id.as_str()).collect()
    }
}

/// The `k` members with the highest dev score, best first; ties keep pool order.
pub fn select_top_k(pool: &ModelPool, k: usize) -> Result<ModelPool, WeakSupervisionError> {
    if k > pool.len() {
        return Err(WeakSupervisionError::PoolTooSmall {
            requested: k,
            available: pool.len(),
        });
    }
    let mut scored = Vec::with_capacity(pool.len());
    for h in &pool.handles {
        let score = h.dev_score.ok_or_else(|| WeakSupervisionError::MissingDevScore(h.id.clone()))?;
        scored.push((score, h));
    }
    // stable sort keeps earlier pool position first among equal scores
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(ModelPool {
        handles: scored.into_iter().take(k).map(|(_, h)| h.clone()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoLabelConfig {
    /// Minimum number of agreeing models.
    pub k: usize,
    /// Expected pool size.
    pub n: usize,
    /// Maximum auto-labeled tweets kept per class.
    pub cap: usize,
    pub seed: u64,
}

impl Default for AutoLabelConfig {
    fn default() -> Self {
        AutoLabelConfig {
            k: 7,
            n: 9,
            cap: 35_000,
            seed: 0,
        }
    }
}

impl AutoLabelConfig {
    pub fn validate(&self) -> Result<(), WeakSupervisionError> {
        if self.k == 0 || self.k > self.n {
            return Err(WeakSupervisionError::InvalidConfig(format!(
                "need 1 <= k <= n, got k={} n={}",
                self.k, self.n
            )));
        }
        if self.cap == 0 {
            return Err(WeakSupervisionError::InvalidConfig("cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Argmax votes per class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCounts {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "O")]
    pub o: usize,
}

impl VoteCounts {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a LabelCoarse>) -> Self {
        let mut v = VoteCounts::default();
        for &l in labels {
            v.add(l);
        }
        v
    }

    pub fn add(&mut self, label: LabelCoarse) {
        match label {
            LabelCoarse::S => self.s += 1,
            LabelCoarse::A => self.a += 1,
            LabelCoarse::O => self.o += 1,
        }
    }

    pub fn get(&self, label: LabelCoarse) -> usize {
        match label {
            LabelCoarse::S => self.s,
            LabelCoarse::A => self.a,
            LabelCoarse::O => self.o,
        }
    }

    pub fn total(&self) -> usize {
        self.s + self.a + self.o
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.s, self.a, self.o]
    }
}

/// The label with at least `k` votes, if exactly one label has the most votes.
///
/// With `k > n/2` at most one label can reach `k`; for smaller `k` a tie at
/// the top is treated as disagreement.
pub fn agreed_label(votes: &VoteCounts, k: usize) -> Option<LabelCoarse> {
    let counts = votes.as_array();
    let max = *counts.iter().max()?;
    if max < k || counts.iter().filter(|&&c| c == max).count() > 1 {
        return None;
    }
    LabelCoarse::ALL.into_iter().find(|l| votes.get(*l) == max)
}

/// One line of the auto-label JSONL output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoLabelRecord {
    pub id: String,
    pub label: LabelCoarse,
    pub votes: VoteCounts,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default)]
pub struct AutoLabelOutcome {
    /// Selected tweets in corpus order, provenance `auto`.
    pub dataset: LabeledDataset,
    pub records: Vec<AutoLabelRecord>,
    /// Retained candidates per class before capping (S, A, O).
    pub candidates: [usize; 3],
    /// Tweets skipped because a pool member failed.
    pub skipped: usize,
    pub warnings: Vec<String>,
}

/// Uniform sample without replacement of `min(cap, len)` positions per
/// class, drawn from one generator in S, A, O order; each result is sorted.
pub fn sample_capped(candidates: &[Vec<usize>; 3], cap: usize, seed: u64) -> [Vec<usize>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: [Vec<usize>; 3] = Default::default();
    for (class, pool) in candidates.iter().enumerate() {
        let amount = cap.min(pool.len());
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), amount)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_unstable();
        out[class] = picked;
    }
    out
}

/// Applies the agreement rule and the per-class cap to precomputed votes.
///
/// Returns the selected `(position, label)` pairs in position order and the
/// candidate count per class.
pub fn retain_and_sample(votes: &[(usize, VoteCounts)], cfg: &AutoLabelConfig) -> (Vec<(usize, LabelCoarse)>, [usize; 3]) {
    let mut candidates: [Vec<usize>; 3] = Default::default();
    for &(pos, v) in votes {
        if let Some(label) = agreed_label(&v, cfg.k) {
            candidates[label.index()].push(pos);
        }
    }
    let counts = [candidates[0].len(), candidates[1].len(), candidates[2].len()];
    let sampled = sample_capped(&candidates, cfg.cap, cfg.seed);
    let mut selected: Vec<(usize, LabelCoarse)> = sampled
        .iter()
        .enumerate()
        .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, LabelCoarse::ALL[c])))
        .collect();
    selected.sort_unstable_by_key(|&(p, _)| p);
    (selected, counts)
}

fn pool_votes(pool: &ModelPool, tweet: &Tweet) -> Result<VoteCounts, String> {
    let mut v = VoteCounts::default();
    for h in pool.handles() {
        let p = h.predict(tweet).map_err(|e| format!("tweet {}: model {} failed: {e}", tweet.id, h.id))?;
        v.add(p.argmax());
    }
    Ok(v)
}

/// Labels tweets on which at least `cfg.k` of the `cfg.n` pool members agree.
pub fn auto_label(pool: &ModelPool, unlabeled: &Corpus, cfg: &AutoLabelConfig) -> Result<AutoLabelOutcome, WeakSupervisionError> {
    cfg.validate()?;
    if pool.len() != cfg.n {
        return Err(WeakSupervisionError::PoolSizeMismatch {
            expected: cfg.n,
            got: pool.len(),
        });
    }
    let tweets = unlabeled.tweets();
    let results: Vec<Result<VoteCounts, String>> = tweets.par_iter().map(|t| pool_votes(pool, t)).collect();

    let mut outcome = AutoLabelOutcome::default();
    let mut votes = Vec::with_capacity(results.len());
    for (pos, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => votes.push((pos, v)),
            Err(msg) => {
                log::warn!("skipping {msg}");
                outcome.skipped += 1;
                if outcome.warnings.len() < MAX_WARNINGS {
                    outcome.warnings.push(msg);
                }
            }
        }
    }
    let (selected, candidates) = retain_and_sample(&votes, cfg);
    outcome.candidates = candidates;
    let vote_of: std::collections::HashMap<usize, VoteCounts> = votes.into_iter().collect();
    for (pos, label) in selected {
        let tweet = &tweets[pos];
        outcome.records.push(AutoLabelRecord {
            id: tweet.id.clone(),
            label,
            votes: vote_of[&pos],
            provenance: Provenance::Auto,
        });
        outcome.dataset.push(LabeledExample::new(tweet.clone(), label, Provenance::Auto));
    }
    Ok(outcome)
}

pub fn write_auto_labels<W: Write>(mut w: W, records: &[AutoLabelRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_auto_labels<R: BufRead>(r: R) -> Result<Vec<AutoLabelRecord>, WeakSupervisionError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| WeakSupervisionError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Rebuilds an auto-labeled dataset from records by looking the texts up in `corpus`.
pub fn records_to_dataset(records: &[AutoLabelRecord], corpus: &Corpus) -> Result<LabeledDataset, WeakSupervisionError> {
    let mut d = LabeledDataset::new();
    for (i, r) in records.iter().enumerate() {
        let tweet = corpus.get(&r.id).ok_or_else(|| WeakSupervisionError::Parse {
            line: i + 1,
            message: format!("auto-labeled id {} not in corpus", r.id),
        })?;
        d.push(LabeledExample::new(tweet.clone(), r.label, Provenance::Auto));
    }
    Ok(d)
}

/// Majority label; ties go to the highest summed probability among the tied
/// labels, then to class order S < A < O.
pub fn resolve_ensemble(votes: &VoteCounts, prob_sums: [f64; 3]) -> LabelCoarse {
    let counts = votes.as_array();
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut best: Option<usize> = None;
    for c in 0..3 {
        if counts[c] != max {
            continue;
        }
        best = match best {
            Some(b) if prob_sums[c] <= prob_sums[b] => Some(b),
            _ => Some(c),
        };
    }
    LabelCoarse::ALL[best.unwrap_or(0)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutcome {
    pub label: LabelCoarse,
    pub votes: VoteCounts,
    pub prob_sums: [f64; 3],
    /// Members that failed on this tweet and were left out.
    pub failures: Vec<String>,
}

pub fn ensemble_predict(pool: &ModelPool, tweet: &Tweet) -> Result<EnsembleOutcome, WeakSupervisionError> {
    if pool.is_empty() {
        return Err(WeakSupervisionError::EmptyPool);
    }
    let mut votes = VoteCounts::default();
    let mut sums = [0.0; 3];
    let mut failures = Vec::new();
    for h in pool.handles() {
        match h.predict(tweet) {
            Ok(p) => {
                votes.add(p.argmax());
                for (s, x) in sums.iter_mut().zip(p.0) {
                    *s += x;
                }
            }
            Err(e) => {
                log::warn!("tweet {}: model {} excluded: {e}", tweet.id, h.id);
                failures.push(format!("model {}: {e}", h.id));
            }
        }
    }
    if failures.len() == pool.len() {
        return Err(WeakSupervisionError::AllMembersFailed {
            tweet_id: tweet.id.clone(),
        });
    }
    Ok(EnsembleOutcome {
        label: resolve_ensemble(&votes, sums),
        votes,
        prob_sums: sums,
        failures,
    })
}

/// Ensemble predictions for many tweets in parallel, in input order.
pub fn ensemble_predict_all(pool: &ModelPool, tweets: &[Tweet]) -> Vec<Result<EnsembleOutcome, WeakSupervisionError>> {
    tweets.par_iter().map(|t| ensemble_predict(pool, t)).collect()
}
