//! Loading and saving the artifacts commands pass between each other.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use solidarity_core::annotation::{
    aggregate_all, build_gold, compute_reliability, profiles_from_reliability, read_adjudications_csv,
    read_annotations_csv, Adjudication, Annotation, AnnotatorKind, GoldStandard, Granularity,
};
use solidarity_core::augment::{read_dataset, write_dataset};
use solidarity_core::corpus::{format_timestamp, parse_corpus, parse_timestamp, write_corpus, ParseOptions};
use solidarity_core::weak_supervision::{EnsembleOutcome, VoteCounts};
use solidarity_core::{Corpus, LabelCoarse, LabeledDataset, LabeledExample, Provenance, Tweet};

use crate::run::Run;

pub fn load_corpus(run: &mut Run, path: &Path, opts: &ParseOptions) -> Result<Corpus> {
    let data = run.read(path)?;
    let outcome = parse_corpus(&data[..], opts).with_context(|| format!("{}", path.display()))?;
    for e in &outcome.skipped {
        run.warn(format!("{}: skipped {e}", path.display()));
    }
    Ok(outcome.corpus)
}

pub fn corpus_bytes(corpus: &Corpus) -> Vec<u8> {
    let mut buf = Vec::new();
    write_corpus(&mut buf, corpus).expect("writing to memory");
    buf
}

pub fn load_dataset(run: &mut Run, path: &Path) -> Result<LabeledDataset> {
    let data = run.read(path)?;
    read_dataset(&data[..]).with_context(|| format!("{}", path.display()))
}

pub fn dataset_bytes(d: &LabeledDataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, d).expect("writing to memory");
    buf
}

pub fn load_annotations(run: &mut Run, path: &Path) -> Result<Vec<Annotation>> {
    let data = run.read(path)?;
    Ok(read_annotations_csv(&data[..], &path.display().to_string())?)
}

pub fn load_adjudications(run: &mut Run, path: &Path) -> Result<BTreeMap<String, Adjudication>> {
    let data = run.read(path)?;
    Ok(read_adjudications_csv(&data[..], &path.display().to_string())?)
}

/// Every `"id"` field of a JSONL file.
pub fn load_ids(run: &mut Run, path: &Path) -> Result<BTreeSet<String>> {
    #[derive(Deserialize)]
    struct IdOnly {
        id: String,
    }
    let data = run.read(path)?;
    let mut ids = BTreeSet::new();
    for (i, line) in data.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IdOnly = serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        ids.insert(rec.id);
    }
    Ok(ids)
}

/// One ensemble prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: LabelCoarse,
    pub created_at: String,
    pub votes: VoteCounts,
    pub prob_sums: [f64; 3],
    #[serde(default, skip_serializing_if = "is_zero")]
    pub failed_members: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl PredictionRecord {
    pub fn new(tweet: &Tweet, outcome: &EnsembleOutcome) -> Self {
        PredictionRecord {
            id: tweet.id.clone(),
            label: outcome.label,
            created_at: format_timestamp(&tweet.created_at),
            votes: outcome.votes,
            prob_sums: outcome.prob_sums,
            failed_members: outcome.failures.len(),
        }
    }
}

pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// A dated label from any JSONL with `label` and `created_at` fields
/// (datasets and prediction files both qualify).
#[derive(Debug, Clone, Deserialize)]
pub struct DatedLabel {
    pub id: String,
    pub label: LabelCoarse,
    pub created_at: String,
}

pub fn load_dated_labels(run: &mut Run, path: &Path) -> Result<Vec<(Tweet, LabelCoarse)>> {
    let data = run.read(path)?;
    let mut out = Vec::new();
    for (i, line) in data.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("{}: line {}", path.display(), i + 1);
        let rec: DatedLabel = serde_json::from_str(&line).with_context(ctx)?;
        let Some(ts) = parse_timestamp(&rec.created_at) else {
            bail!("{}: invalid created_at `{}`", ctx(), rec.created_at);
        };
        // only id and date matter downstream
        out.push((Tweet::new(rec.id, "-", solidarity_core::Lang::En, ts), rec.label));
    }
    Ok(out)
}

/// Output of the annotation aggregation step.
#[derive(Debug, Clone)]
pub struct Aggregated {
    pub gold: GoldStandard,
    /// Crowd label per tweet for tweets outside the expert gold set.
    pub crowd_labels: BTreeMap<String, LabelCoarse>,
    pub reliability: BTreeMap<String, Option<f64>>,
    pub human: LabeledDataset,
}

/// Builds the human-labeled dataset: expert gold (collapsed to S/A/O) plus
/// crowd-aggregated labels for tweets without expert gold. Tweets the
/// experts left undecided are dropped even if the crowd labeled them.
pub fn aggregate(
    corpus: &Corpus,
    expert: &[Annotation],
    adjudications: &BTreeMap<String, Adjudication>,
    crowd: &[Annotation],
    granularity: Granularity,
    run: &mut Run,
) -> Result<Aggregated> {
    let gold = build_gold(expert, adjudications)?;
    let reliability = compute_reliability(crowd, &gold, granularity);
    let profiles = profiles_from_reliability(&reliability, AnnotatorKind::Crowd);
    let undefined = reliability.values().filter(|k| k.is_none()).count();
    if undefined > 0 {
        run.note(format!("{undefined} crowd annotators have no overlap with expert gold; their reliability is undefined"));
    }
    let crowd_fine = aggregate_all(crowd, &profiles)?;
    let crowd_labels: BTreeMap<String, LabelCoarse> = crowd_fine
        .into_iter()
        .filter(|(id, _)| gold.get(id).is_none() && !gold.excluded.contains(id))
        .map(|(id, l)| (id, l.collapse()))
        .collect();

    let mut human = LabeledDataset::new();
    let mut missing = Vec::new();
    let labeled: BTreeSet<&String> = gold.labels.keys().chain(crowd_labels.keys()).collect();
    for id in &labeled {
        if corpus.get(id).is_none() {
            missing.push(id.to_string());
        }
    }
    if !missing.is_empty() {
        bail!(
            "{} labeled tweet ids are not in the corpus (first: {})",
            missing.len(),
            missing[0]
        );
    }
    for t in corpus.iter() {
        if let Some(l) = gold.get(&t.id) {
            human.push(LabeledExample::new(t.clone(), l.collapse(), Provenance::Expert));
        } else if let Some(&l) = crowd_labels.get(&t.id) {
            human.push(LabeledExample::new(t.clone(), l, Provenance::Crowd));
        }
    }
    Ok(Aggregated {
        gold,
        crowd_labels,
        reliability: reliability.into_iter().map(|(id, k)| (id, k.map(|k| k.kappa))).collect(),
        human,
    })
}

/// Restricts `d` to the given ids, keeping dataset order.
pub fn subset(d: &LabeledDataset, ids: &[String]) -> LabeledDataset {
    let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    d.filter(|e| keep.contains(e.id()))
}
