//! Human labels: the 4-class annotation scheme, its 3-class collapse, the
//! expert gold standard, annotator reliability and crowd aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::metrics::{cohen_kappa, KappaResult};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("tweet `{0}` has no unique expert majority and no adjudication")]
    MissingAdjudication(String),
    #[error("annotator `{annotator}` labeled tweet `{tweet}` more than once")]
    DuplicateAnnotation { tweet: String, annotator: String },
    #[error("no annotations to aggregate")]
    NoAnnotations,
    #[error("invalid label `{0}`")]
    InvalidLabel(String),
    #[error("invalid granularity {0} (expected 3 or 4)")]
    InvalidGranularity(u8),
    #[error("{path}: row {row}: {message}")]
    Csv { path: String, row: usize, message: String },
}

/// Fine-grained annotation label, integer-coded as in the annotation
/// guidelines (0..=3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelFine {
    Solidarity = 0,
    AntiSolidarity = 1,
    Ambivalent = 2,
    NotApplicable = 3,
}

impl LabelFine {
    pub const ALL: [LabelFine; 4] = [
        LabelFine::Solidarity,
        LabelFine::AntiSolidarity,
        LabelFine::Ambivalent,
        LabelFine::NotApplicable,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        LabelFine::ALL.get(code as usize).copied()
    }

    pub fn collapse(self) -> LabelCoarse {
        collapse_label(self)
    }
}

impl fmt::Display for LabelFine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for LabelFine {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim()
            .parse::<u8>()
            .ok()
            .and_then(LabelFine::from_code)
            .ok_or_else(|| AnnotationError::InvalidLabel(s.to_string()))
    }
}

impl Serialize for LabelFine {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for LabelFine {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = u8::deserialize(d)?;
        LabelFine::from_code(code).ok_or_else(|| serde::de::Error::custom(format!("invalid label code {code}")))
    }
}

/// Task label. Index order S < A < O is used for every probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelCoarse {
    S,
    A,
    O,
}

impl LabelCoarse {
    pub const ALL: [LabelCoarse; 3] = [LabelCoarse::S, LabelCoarse::A, LabelCoarse::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        LabelCoarse::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelCoarse::S => "S",
            LabelCoarse::A => "A",
            LabelCoarse::O => "O",
        }
    }
}

impl fmt::Display for LabelCoarse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelCoarse {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "S" => Ok(LabelCoarse::S),
            "A" => Ok(LabelCoarse::A),
            "O" => Ok(LabelCoarse::O),
            other => Err(AnnotationError::InvalidLabel(other.to_string())),
        }
    }
}

/// Ambivalent and not-applicable both become `O`.
pub fn collapse_label(label: LabelFine) -> LabelCoarse {
    match label {
        LabelFine::Solidarity => LabelCoarse::S,
        LabelFine::AntiSolidarity => LabelCoarse::A,
        LabelFine::Ambivalent | LabelFine::NotApplicable => LabelCoarse::O,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub tweet_id: String,
    pub annotator_id: String,
    pub label: LabelFine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

impl Annotation {
    pub fn new(tweet_id: impl Into<String>, annotator_id: impl Into<String>, label: LabelFine) -> Self {
        Annotation {
            tweet_id: tweet_id.into(),
            annotator_id: annotator_id.into(),
            label,
            stage: None,
        }
    }
}

/// Rejects a second judgment by the same annotator on the same tweet.
pub fn check_unique(annotations: &[Annotation]) -> Result<(), AnnotationError> {
    let mut seen = BTreeSet::new();
    for a in annotations {
        if !seen.insert((a.tweet_id.as_str(), a.annotator_id.as_str())) {
            return Err(AnnotationError::DuplicateAnnotation {
                tweet: a.tweet_id.clone(),
                annotator: a.annotator_id.clone(),
            });
        }
    }
    Ok(())
}

/// Groups annotations by tweet id, keeping input order inside each group.
pub fn group_by_tweet(annotations: &[Annotation]) -> BTreeMap<&str, Vec<&Annotation>> {
    let mut grouped: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for a in annotations {
        grouped.entry(a.tweet_id.as_str()).or_default().push(a);
    }
    grouped
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatorKind {
    Expert,
    Crowd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    pub kind: AnnotatorKind,
    /// Kappa against the gold standard; `None` without overlap.
    pub reliability: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjudication {
    Label(LabelFine),
    Undecided,
}

impl FromStr for Adjudication {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("undecided") {
            Ok(Adjudication::Undecided)
        } else {
            s.parse().map(Adjudication::Label)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldStandard {
    pub labels: BTreeMap<String, LabelFine>,
    pub excluded: BTreeSet<String>,
}

impl GoldStandard {
    pub fn get(&self, tweet_id: &str) -> Option<LabelFine> {
        self.labels.get(tweet_id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// The label with strictly the most votes, if there is one.
pub fn unique_majority<I>(labels: I) -> Option<LabelFine>
where
    I: IntoIterator<Item = LabelFine>,
{
    let mut counts = [0usize; 4];
    for l in labels {
        counts[l.code() as usize] += 1;
    }
    let top = *counts.iter().max()?;
    if top == 0 {
        return None;
    }
    let mut winners = LabelFine::ALL.iter().filter(|l| counts[l.code() as usize] == top);
    let first = *winners.next()?;
    winners.next().is_none().then_some(first)
}

/// Expert gold standard: unique 4-class majority where it exists, otherwise
/// the adjudicated label. Undecided adjudications are excluded. Adjudications
/// for tweets with a unique majority are ignored.
pub fn build_gold(
    expert_annotations: &[Annotation],
    adjudications: &BTreeMap<String, Adjudication>,
) -> Result<GoldStandard, AnnotationError> {
    check_unique(expert_annotations)?;
    let mut gold = GoldStandard::default();
    let grouped = group_by_tweet(expert_annotations);
    for (&tweet, votes) in &grouped {
        if let Some(label) = unique_majority(votes.iter().map(|a| a.label)) {
            gold.labels.insert(tweet.to_string(), label);
            continue;
        }
        match adjudications.get(tweet) {
            Some(Adjudication::Label(l)) => {
                gold.labels.insert(tweet.to_string(), *l);
            }
            Some(Adjudication::Undecided) => {
                gold.excluded.insert(tweet.to_string());
            }
            None => return Err(AnnotationError::MissingAdjudication(tweet.to_string())),
        }
    }
    // Adjudicated tweets without recorded expert votes.
    for (tweet, adj) in adjudications {
        if grouped.contains_key(tweet.as_str()) {
            continue;
        }
        match adj {
            Adjudication::Label(l) => {
                gold.labels.insert(tweet.clone(), *l);
            }
            Adjudication::Undecided => {
                gold.excluded.insert(tweet.clone());
            }
        }
    }
    Ok(gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Granularity {
    #[default]
    Three,
    Four,
}

impl Granularity {
    pub fn from_classes(n: u8) -> Result<Self, AnnotationError> {
        match n {
            3 => Ok(Granularity::Three),
            4 => Ok(Granularity::Four),
            other => Err(AnnotationError::InvalidGranularity(other)),
        }
    }

    /// Label code at this granularity (coarse index for 3 classes).
    pub fn project(self, label: LabelFine) -> u8 {
        match self {
            Granularity::Three => collapse_label(label).index() as u8,
            Granularity::Four => label.code(),
        }
    }
}

/// Kappa of each annotator against the gold standard on the tweets both
/// labeled. Annotators without overlap map to `None`.
pub fn compute_reliability(
    annotations: &[Annotation],
    gold: &GoldStandard,
    granularity: Granularity,
) -> BTreeMap<String, Option<KappaResult>> {
    let mut per_annotator: BTreeMap<String, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    for a in annotations {
        let entry = per_annotator.entry(a.annotator_id.clone()).or_default();
        if let Some(g) = gold.get(&a.tweet_id) {
            entry.0.push(granularity.project(a.label));
            entry.1.push(granularity.project(g));
        }
    }
    per_annotator
        .into_iter()
        .map(|(id, (theirs, gold))| {
            let k = if theirs.is_empty() {
                None
            } else {
                cohen_kappa(&theirs, &gold).ok()
            };
            (id, k)
        })
        .collect()
}

pub fn profiles_from_reliability(
    reliability: &BTreeMap<String, Option<KappaResult>>,
    kind: AnnotatorKind,
) -> BTreeMap<String, AnnotatorProfile> {
    reliability
        .iter()
        .map(|(id, k)| {
            (
                id.clone(),
                AnnotatorProfile {
                    annotator_id: id.clone(),
                    kind,
                    reliability: k.map(|k| k.kappa),
                },
            )
        })
        .collect()
}

/// Aggregates the crowd judgments of one tweet.
///
/// Returns the unique most frequent label. On a tie, the label of the most
/// reliable annotator among those who voted for a tied-top label wins;
/// annotators with a defined reliability outrank those without, and equal
/// reliabilities fall back to the lexicographically smallest annotator id.
pub fn aggregate_crowd<'a, I>(
    annotations: I,
    profiles: &BTreeMap<String, AnnotatorProfile>,
) -> Result<LabelFine, AnnotationError>
where
    I: IntoIterator<Item = &'a Annotation>,
{
    let annotations: Vec<&Annotation> = annotations.into_iter().collect();
    if annotations.is_empty() {
        return Err(AnnotationError::NoAnnotations);
    }
    if let Some(label) = unique_majority(annotations.iter().map(|a| a.label)) {
        return Ok(label);
    }
    let mut counts = [0usize; 4];
    for a in &annotations {
        counts[a.label.code() as usize] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    let reliability = |a: &Annotation| profiles.get(&a.annotator_id).and_then(|p| p.reliability);
    let best = annotations
        .iter()
        .filter(|a| counts[a.label.code() as usize] == top)
        .min_by(|x, y| {
            // Higher reliability first, defined before undefined, then smaller id.
            let rx = reliability(x);
            let ry = reliability(y);
            match (rx, ry) {
                (Some(a), Some(b)) => b.total_cmp(&a),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            }
            .then_with(|| x.annotator_id.cmp(&y.annotator_id))
        })
        .expect("at least one voter for the top label");
    Ok(best.label)
}

/// Aggregated fine label per tweet for a whole crowd annotation set.
pub fn aggregate_all(
    annotations: &[Annotation],
    profiles: &BTreeMap<String, AnnotatorProfile>,
) -> Result<BTreeMap<String, LabelFine>, AnnotationError> {
    check_unique(annotations)?;
    group_by_tweet(annotations)
        .into_iter()
        .map(|(tweet, votes)| Ok((tweet.to_string(), aggregate_crowd(votes, profiles)?)))
        .collect()
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    tweet_id: String,
    annotator_id: String,
    label: String,
    #[serde(default)]
    stage: Option<String>,
}

/// Reads an annotations CSV (`tweet_id,annotator_id,label,stage`).
pub fn read_annotations_csv<R: Read>(reader: R, path: &str) -> Result<Vec<Annotation>, AnnotationError> {
    let mut rdr = csv_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<AnnotationRow>().enumerate() {
        let row_no = i + 2;
        let row = row.map_err(|e| AnnotationError::Csv {
            path: path.to_string(),
            row: row_no,
            message: e.to_string(),
        })?;
        let label = row.label.parse().map_err(|e: AnnotationError| AnnotationError::Csv {
            path: path.to_string(),
            row: row_no,
            message: e.to_string(),
        })?;
        out.push(Annotation {
            tweet_id: row.tweet_id,
            annotator_id: row.annotator_id,
            label,
            stage: row.stage.filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

/// Reads an adjudications CSV (`tweet_id,label`, label in 0..=3 or `undecided`).
pub fn read_adjudications_csv<R: Read>(
    reader: R,
    path: &str,
) -> Result<BTreeMap<String, Adjudication>, AnnotationError> {
    let mut rdr = csv_reader(reader);
    let mut out = BTreeMap::new();
    for (i, row) in rdr.deserialize::<(String, String)>().enumerate() {
        let row_no = i + 2;
        let err = |message: String| AnnotationError::Csv {
            path: path.to_string(),
            row: row_no,
            message,
        };
        let (tweet, label) = row.map_err(|e| err(e.to_string()))?;
        let adj = label.parse().map_err(|e: AnnotationError| err(e.to_string()))?;
        out.insert(tweet, adj);
    }
    Ok(out)
}

pub fn write_annotations_csv<W: std::io::Write>(writer: W, annotations: &[Annotation]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tweet_id", "annotator_id", "label", "stage"])?;
    for a in annotations {
        w.write_record([
            a.tweet_id.as_str(),
            a.annotator_id.as_str(),
            &a.label.to_string(),
            a.stage.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_adjudications_csv<W: std::io::Write>(
    writer: W,
    adjudications: &BTreeMap<String, Adjudication>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tweet_id", "label"])?;
    for (tweet, adj) in adjudications {
        let label = match adj {
            Adjudication::Label(l) => l.to_string(),
            Adjudication::Undecided => "undecided".to_string(),
        };
        w.write_record([tweet.as_str(), &label])?;
    }
    w.flush()?;
    Ok(())
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader)
}
