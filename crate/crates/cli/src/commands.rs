//! Subcommand definitions and their implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::{NaiveDate, TimeZone, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};
use solidarity_core::annotation::{Annotation, Granularity};
use solidarity_core::augment::{build_training_set, AugmentPlan, HttpTranslator, IdentityTranslator, MockTranslator, Translator};
use solidarity_core::corpus::{expand_hashtags, filter_by_hashtags, ParseOptions};
use solidarity_core::metrics::{confusion, fleiss_kappa, macro_f1, mean_pairwise_kappa, ConfusionMatrix, MetricsReport};
use solidarity_core::model::{FeatureMode, Hyperparams};
use solidarity_core::trends::{
    daily_counts, defined, moving_average, read_series_csv, sa_ratio, spearman, weekly_average, write_daily_csv,
    write_long_csv, DailySeries, Series,
};
use solidarity_core::weak_supervision::{
    auto_label, ensemble_predict_all, select_top_k, write_auto_labels, AutoLabelConfig, ModelPool,
};
use solidarity_core::{synth, Corpus, LabelCoarse, LabeledDataset, Lang, Tweet};

use crate::config::{TranslatorConfig, TranslatorKind};
use crate::data::{self, PredictionRecord};
use crate::pool::{load_pool, train_pool};
use crate::run::{usage, write_report, Run};
use crate::splits::{splits_for, SplitSizes};

#[derive(Debug, Parser)]
#[command(
    name = "solidarity",
    version,
    about = "Weakly supervised classification of posts into solidarity (S), anti-solidarity (A) and other (O)"
)]
pub struct Cli {
    /// Where to write the JSON run report [default: next to the main output]
    #[arg(long, global = true, value_name = "PATH")]
    pub report: Option<PathBuf>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and normalize a JSONL corpus
    Ingest(IngestArgs),
    /// Expand seed hashtags by co-occurrence and optionally filter the corpus
    Hashtags(HashtagsArgs),
    /// Build the human-labeled dataset from expert gold and crowd votes
    Aggregate(AggregateArgs),
    /// Inter-annotator agreement of one or more annotation files
    Agreement(AgreementArgs),
    /// Train one or more baseline classifiers and write a pool file
    Train(TrainArgs),
    /// Label unlabeled tweets where enough pool members agree
    Autolabel(AutolabelArgs),
    /// Majority-vote predictions of the top pool members
    Ensemble(EnsembleArgs),
    /// Per-class and macro F1 of predictions or of a confusion matrix
    Eval(EvalArgs),
    /// Daily counts, S/A ratio and weekly averages of labeled tweets
    Trends(TrendsArgs),
    /// Spearman correlation of a daily metric with an external series
    Correlate(CorrelateArgs),
    /// Random dev/test/train manifests over expert-labeled items
    Splits(SplitsArgs),
    /// Assemble a training set with optional oversampling and back-translation
    Augment(AugmentArgs),
    /// Write the synthetic demo fixture
    Synth(SynthArgs),
    /// Run the whole workflow from a JSON config
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Skip malformed lines instead of failing
    #[arg(long)]
    pub lenient: bool,
    /// Earliest accepted UTC date
    #[arg(long)]
    pub from: Option<NaiveDate>,
    /// First UTC date no longer accepted
    #[arg(long)]
    pub to: Option<NaiveDate>,
}

#[derive(Debug, Args)]
pub struct HashtagsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Seed hashtags, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<String>,
    /// Minimum number of tweets a hashtag must share with the seeds
    #[arg(long, default_value_t = 2)]
    pub threshold: usize,
    /// Ranked expansion as JSON
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the corpus restricted to seeds plus expansion
    #[arg(long)]
    pub filtered: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Expert annotations CSV (tweet_id,annotator_id,label,stage)
    #[arg(long)]
    pub expert: Option<PathBuf>,
    /// Expert adjudications CSV (tweet_id,label|undecided)
    #[arg(long)]
    pub adjudications: Option<PathBuf>,
    /// Crowd annotations CSV
    #[arg(long)]
    pub crowd: Option<PathBuf>,
    /// Class granularity for annotator reliability (3 or 4)
    #[arg(long, default_value_t = 3)]
    pub granularity: u8,
    /// Human-labeled dataset (JSONL)
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// Annotation CSVs, pooled
    #[arg(long = "annotations", required = true, num_args = 1..)]
    pub annotations: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub granularity: u8,
    /// Also compute Fleiss' kappa
    #[arg(long)]
    pub fleiss: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hash buckets (power of two)
    #[arg(long, default_value_t = 1 << 18)]
    pub dim: usize,
    /// text_only, hashtags_only or text_and_hashtags
    #[arg(long, default_value_t = FeatureMode::TextAndHashtags)]
    pub mode: FeatureMode,
    #[arg(long)]
    pub no_bigrams: bool,
}

impl HyperArgs {
    pub fn to_hyperparams(&self) -> Result<Hyperparams> {
        let hp = Hyperparams {
            lr: self.lr,
            l2: self.l2,
            epochs: self.epochs,
            batch: self.batch,
            patience: self.patience,
            seed: self.seed,
            dim: self.dim,
            mode: self.mode,
            bigrams: !self.no_bigrams,
        };
        hp.validate().map_err(|e| usage(e.to_string()))?;
        Ok(hp)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Directory for model files and pool.json
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of hyperparameter/seed variants
    #[arg(long, default_value_t = 1)]
    pub variants: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct AutolabelArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSONL files whose ids are not auto-labeled (e.g. human data)
    #[arg(long, num_args = 1..)]
    pub exclude: Vec<PathBuf>,
    /// Agreement threshold
    #[arg(short, long, default_value_t = 7)]
    pub k: usize,
    /// Pool size; larger pools are cut to their top n by dev score
    #[arg(short, long, default_value_t = 9)]
    pub n: usize,
    /// Per-class cap
    #[arg(long, default_value_t = 35_000)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// Corpus or dataset JSONL to predict
    #[arg(long)]
    pub input: PathBuf,
    /// Use the top k members by dev score [default: whole pool]
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gold dataset JSONL
    #[arg(long, requires = "predictions", conflicts_with = "confusion")]
    pub gold: Option<PathBuf>,
    /// Predictions JSONL (`id`, `label`)
    #[arg(long, requires = "gold")]
    pub predictions: Option<PathBuf>,
    /// Confusion matrix CSV (`gold\pred,<labels>` header, one row per gold label)
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the confusion matrix as CSV
    #[arg(long)]
    pub confusion_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrendsArgs {
    /// JSONL with `label` and `created_at` (predictions or a dataset)
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Insert zero-count days between the first and last date
    #[arg(long)]
    pub zero_fill: bool,
    /// Add a centered 7-day moving average of the S/A ratio
    #[arg(long)]
    pub smooth: bool,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Daily table written by `trends`
    #[arg(long, conflicts_with = "labeled", required_unless_present = "labeled")]
    pub daily: Option<PathBuf>,
    /// Or: JSONL with `label` and `created_at`
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// S, A, O or sa_ratio
    #[arg(long, default_value = "A")]
    pub metric: String,
    /// External series CSV (date,value)
    #[arg(long)]
    pub external: PathBuf,
    #[arg(long)]
    pub from: Option<NaiveDate>,
    #[arg(long)]
    pub to: Option<NaiveDate>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitsArgs {
    /// Human-labeled dataset JSONL
    #[arg(long)]
    pub human: PathBuf,
    #[arg(long, default_value_t = 170)]
    pub dev: usize,
    #[arg(long, default_value_t = 170)]
    pub test: usize,
    #[arg(long, default_value_t = 3)]
    pub n_splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub human: PathBuf,
    /// Auto-labeled dataset JSONL
    #[arg(long)]
    pub auto: Option<PathBuf>,
    #[arg(long)]
    pub oversample: bool,
    #[arg(long)]
    pub back_translate: bool,
    #[arg(long, default_value = "de")]
    pub pivot: Lang,
    #[arg(long)]
    pub drop_identical: bool,
    #[arg(long, value_enum, default_value_t = TranslatorKind::Mock)]
    pub translator: TranslatorKind,
    #[arg(long)]
    pub translator_url: Option<String>,
    /// Environment variable holding the translation API key
    #[arg(long, default_value = "SOLIDARITY_TRANSLATE_KEY")]
    pub translator_key_env: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2020)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub tweets: usize,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// RunConfig JSON
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config value, e.g. --set autolabel.k=6
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory [default: the config's out_dir]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Hashtags(_) => "hashtags",
            Command::Aggregate(_) => "aggregate",
            Command::Agreement(_) => "agreement",
            Command::Train(_) => "train",
            Command::Autolabel(_) => "autolabel",
            Command::Ensemble(_) => "ensemble",
            Command::Eval(_) => "eval",
            Command::Trends(_) => "trends",
            Command::Correlate(_) => "correlate",
            Command::Splits(_) => "splits",
            Command::Augment(_) => "augment",
            Command::Synth(_) => "synth",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

/// Runs a parsed command and writes its report. Returns the report path.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let mut run = Run::new(cli.command.name());
    let (summary, default_report) = match &cli.command {
        Command::Ingest(a) => (ingest(&mut run, a)?, sibling(&a.output)),
        Command::Hashtags(a) => (hashtags(&mut run, a)?, sibling(&a.output)),
        Command::Aggregate(a) => (aggregate(&mut run, a)?, sibling(&a.output)),
        Command::Agreement(a) => (agreement(&mut run, a)?, sibling(&a.output)),
        Command::Train(a) => (train(&mut run, a)?, a.out_dir.join("report.json")),
        Command::Autolabel(a) => (autolabel(&mut run, a)?, sibling(&a.output)),
        Command::Ensemble(a) => (ensemble(&mut run, a)?, sibling(&a.output)),
        Command::Eval(a) => (eval(&mut run, a)?, sibling(&a.output)),
        Command::Trends(a) => (trends(&mut run, a)?, a.out_dir.join("report.json")),
        Command::Correlate(a) => (correlate(&mut run, a)?, sibling(&a.output)),
        Command::Splits(a) => (splits(&mut run, a)?, a.out_dir.join("report.json")),
        Command::Augment(a) => (augment(&mut run, a)?, sibling(&a.output)),
        Command::Synth(a) => (synth_fixture(&mut run, a)?, a.out_dir.join("report.json")),
        Command::Pipeline(a) => {
            let (summary, out_dir) = crate::pipeline::pipeline(&mut run, a)?;
            (summary, out_dir.join("run_report.json"))
        }
    };
    let path = cli.report.clone().unwrap_or(default_report);
    let report = run.finish(summary);
    write_report(&path, &report)?;
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(path)
}

/// `<output>.report.json`
fn sibling(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

fn granularity(n: u8) -> Result<Granularity> {
    Granularity::from_classes(n).map_err(|e| usage(e.to_string()))
}

fn ingest(run: &mut Run, a: &IngestArgs) -> Result<Value> {
    let mut opts = ParseOptions {
        lenient: a.lenient,
        ..ParseOptions::default()
    };
    if let Some(d) = a.from {
        opts.window.0 = Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).expect("midnight"));
    }
    if let Some(d) = a.to {
        opts.window.1 = Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).expect("midnight"));
    }
    if opts.window.0 >= opts.window.1 {
        return Err(usage("--from must be before --to"));
    }
    run.config = json!({"lenient": a.lenient, "from": a.from, "to": a.to});
    let corpus = data::load_corpus(run, &a.input, &opts)?;
    run.write(&a.output, &data::corpus_bytes(&corpus))?;
    let mut langs: BTreeMap<&str, usize> = BTreeMap::new();
    for t in corpus.iter() {
        *langs.entry(t.lang.as_str()).or_default() += 1;
    }
    Ok(json!({
        "tweets": corpus.len(),
        "skipped": run.warnings.len(),
        "languages": langs,
        "first": corpus.iter().map(|t| t.created_at).min(),
        "last": corpus.iter().map(|t| t.created_at).max(),
    }))
}

fn hashtags(run: &mut Run, a: &HashtagsArgs) -> Result<Value> {
    if a.threshold == 0 {
        return Err(usage("--threshold must be at least 1"));
    }
    run.config = json!({"seeds": a.seeds, "threshold": a.threshold});
    let corpus = data::load_corpus(run, &a.corpus, &ParseOptions::default())?;
    let seeds: BTreeSet<String> = a.seeds.iter().cloned().collect();
    let expansion = expand_hashtags(&corpus, &seeds, a.threshold)?;
    let ranked: Vec<Value> = expansion.iter().map(|(t, n)| json!({"hashtag": t, "cooccurrences": n})).collect();
    run.write_json(&a.output, &json!({"seeds": seeds, "expansion": ranked}))?;
    let mut summary = json!({"seeds": seeds.len(), "expanded": expansion.len()});
    if let Some(path) = &a.filtered {
        let keep: BTreeSet<String> = seeds.iter().cloned().chain(expansion.iter().map(|(t, _)| t.clone())).collect();
        let filtered = filter_by_hashtags(&corpus, &keep);
        run.write(path, &data::corpus_bytes(&filtered))?;
        summary["filtered_tweets"] = json!(filtered.len());
    }
    Ok(summary)
}

fn aggregate(run: &mut Run, a: &AggregateArgs) -> Result<Value> {
    if a.expert.is_none() && a.crowd.is_none() {
        return Err(usage("need --expert and/or --crowd annotations"));
    }
    let gran = granularity(a.granularity)?;
    run.config = json!({"granularity": a.granularity});
    let corpus = data::load_corpus(run, &a.corpus, &ParseOptions::default())?;
    let expert = match &a.expert {
        Some(p) => data::load_annotations(run, p)?,
        None => Vec::new(),
    };
    let adjudications = match &a.adjudications {
        Some(p) => data::load_adjudications(run, p)?,
        None => BTreeMap::new(),
    };
    let crowd = match &a.crowd {
        Some(p) => data::load_annotations(run, p)?,
        None => Vec::new(),
    };
    let agg = data::aggregate(&corpus, &expert, &adjudications, &crowd, gran, run)?;
    run.write(&a.output, &data::dataset_bytes(&agg.human))?;
    Ok(aggregate_summary(&agg))
}

pub(crate) fn aggregate_summary(agg: &data::Aggregated) -> Value {
    json!({
        "expert_gold": agg.gold.len(),
        "expert_excluded": agg.gold.excluded.len(),
        "crowd_only": agg.crowd_labels.len(),
        "human_total": agg.human.len(),
        "class_counts": class_counts(&agg.human),
        "crowd_reliability": agg.reliability,
    })
}

pub(crate) fn class_counts(d: &LabeledDataset) -> Value {
    json!({"S": d.count(LabelCoarse::S), "A": d.count(LabelCoarse::A), "O": d.count(LabelCoarse::O)})
}

/// Mean pairwise Cohen's kappa (and optionally Fleiss' kappa) of annotations.
pub(crate) fn agreement_summary(annotations: &[Annotation], gran: Granularity, fleiss: bool) -> Result<Value> {
    let mut by_annotator: BTreeMap<String, BTreeMap<String, u8>> = BTreeMap::new();
    let mut by_item: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for ann in annotations {
        let l = gran.project(ann.label);
        by_annotator.entry(ann.annotator_id.clone()).or_default().insert(ann.tweet_id.clone(), l);
        by_item.entry(ann.tweet_id.clone()).or_default().push(l);
    }
    let pw = mean_pairwise_kappa(&by_annotator)?;
    let pairs: Vec<Value> = pw
        .pairs
        .iter()
        .map(|p| json!({"a": p.annotator_a, "b": p.annotator_b, "kappa": p.kappa, "n": p.n_items}))
        .collect();
    let mut out = json!({
        "annotators": by_annotator.len(),
        "items": by_item.len(),
        "mean_pairwise_kappa": pw.mean_kappa,
        "skipped_pairs": pw.skipped_pairs,
        "pairs": pairs,
    });
    if fleiss {
        let f = fleiss_kappa(&by_item)?;
        out["fleiss_kappa"] = json!(f.kappa);
    }
    Ok(out)
}

fn agreement(run: &mut Run, a: &AgreementArgs) -> Result<Value> {
    let gran = granularity(a.granularity)?;
    run.config = json!({"granularity": a.granularity, "fleiss": a.fleiss});
    let mut all = Vec::new();
    for p in &a.annotations {
        all.extend(data::load_annotations(run, p)?);
    }
    solidarity_core::annotation::check_unique(&all)?;
    let summary = agreement_summary(&all, gran, a.fleiss)?;
    run.write_json(&a.output, &summary)?;
    Ok(json!({
        "annotators": summary["annotators"],
        "mean_pairwise_kappa": summary["mean_pairwise_kappa"],
        "fleiss_kappa": summary.get("fleiss_kappa"),
    }))
}

fn train(run: &mut Run, a: &TrainArgs) -> Result<Value> {
    if a.variants == 0 {
        return Err(usage("--variants must be at least 1"));
    }
    let hp = a.hyper.to_hyperparams()?;
    run.seed("train", hp.seed);
    run.config = json!({"hyperparams": hp, "variants": a.variants});
    let train = data::load_dataset(run, &a.train)?;
    let dev = data::load_dataset(run, &a.dev)?;
    let pool = train_pool(&train, &dev, &hp, a.variants, "m")?;
    pool.save(run, &a.out_dir)?;
    let members: Vec<Value> = pool
        .models
        .iter()
        .map(|(id, m)| {
            json!({"id": id, "dev_macro_f1": m.metadata.dev_macro_f1, "epochs_run": m.metadata.epochs_run, "best_epoch": m.metadata.best_epoch})
        })
        .collect();
    Ok(json!({"train_size": train.len(), "dev_size": dev.len(), "models": members}))
}

/// Cuts a pool to its top `n` when it is larger; smaller pools are an error downstream.
fn fit_pool(pool: ModelPool, n: usize) -> Result<ModelPool> {
    if pool.len() > n {
        Ok(select_top_k(&pool, n)?)
    } else {
        Ok(pool)
    }
}

fn autolabel(run: &mut Run, a: &AutolabelArgs) -> Result<Value> {
    let cfg = AutoLabelConfig {
        k: a.k,
        n: a.n,
        cap: a.cap,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    run.seed("autolabel", a.seed);
    run.config = json!({"autolabel": cfg});
    let pool = fit_pool(load_pool(run, &a.pool)?, a.n)?;
    let corpus = data::load_corpus(run, &a.corpus, &ParseOptions::default())?;
    let mut exclude = BTreeSet::new();
    for p in &a.exclude {
        exclude.extend(data::load_ids(run, p)?);
    }
    let unlabeled = corpus.filter(|t| !exclude.contains(&t.id));
    let out = auto_label(&pool, &unlabeled, &cfg)?;
    for w in &out.warnings {
        run.warn(w.clone());
    }
    let mut buf = Vec::new();
    write_auto_labels(&mut buf, &out.records)?;
    run.write(&a.output, &buf)?;
    Ok(json!({
        "pool": pool.ids(),
        "considered": unlabeled.len(),
        "excluded": corpus.len() - unlabeled.len(),
        "skipped": out.skipped,
        "candidates": {"S": out.candidates[0], "A": out.candidates[1], "O": out.candidates[2]},
        "selected": out.records.len(),
        "class_counts": class_counts(&out.dataset),
    }))
}

/// Ensemble predictions for `tweets`; failures are recorded as warnings and skipped.
pub(crate) fn predict_all(run: &mut Run, pool: &ModelPool, tweets: &[Tweet]) -> Vec<PredictionRecord> {
    let mut out = Vec::with_capacity(tweets.len());
    for (t, r) in tweets.iter().zip(ensemble_predict_all(pool, tweets)) {
        match r {
            Ok(o) => {
                for f in &o.failures {
                    run.warn(format!("tweet {}: {f}", t.id));
                }
                out.push(PredictionRecord::new(t, &o));
            }
            Err(e) => run.warn(format!("no prediction: {e}")),
        }
    }
    out
}

fn ensemble(run: &mut Run, a: &EnsembleArgs) -> Result<Value> {
    run.config = json!({"top_k": a.top_k});
    let pool = load_pool(run, &a.pool)?;
    let pool = match a.top_k {
        Some(k) => select_top_k(&pool, k).map_err(|e| usage(e.to_string()))?,
        None => pool,
    };
    let corpus = data::load_corpus(run, &a.input, &ParseOptions::default())?;
    let preds = predict_all(run, &pool, corpus.tweets());
    run.write(&a.output, &data::jsonl_bytes(&preds)?)?;
    let mut counts = [0usize; 3];
    for p in &preds {
        counts[p.label.index()] += 1;
    }
    Ok(json!({
        "pool": pool.ids(),
        "tweets": corpus.len(),
        "predicted": preds.len(),
        "class_counts": {"S": counts[0], "A": counts[1], "O": counts[2]},
    }))
}

/// Parses a confusion matrix CSV: header `gold\pred,L1,..,Lk`, then one
/// row per gold label in the same order.
pub fn parse_confusion_csv(data: &[u8]) -> Result<ConfusionMatrix<String>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(data);
    let header = rdr.headers()?.clone();
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let gold = rec.get(0).unwrap_or_default();
        if labels.get(i).map(String::as_str) != Some(gold) {
            bail!("row {}: expected gold label {:?}, found {gold:?}", i + 2, labels.get(i));
        }
        let counts = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<u64>().with_context(|| format!("row {}: bad count {c:?}", i + 2)))
            .collect::<Result<Vec<u64>>>()?;
        rows.push(counts);
    }
    Ok(ConfusionMatrix::from_counts(labels, rows)?)
}

fn report_json<L: std::fmt::Display + Ord + Clone>(report: &MetricsReport, m: &ConfusionMatrix<L>) -> Value {
    json!({
        "macro_f1": report.macro_f1,
        "accuracy": report.accuracy,
        "n": report.n,
        "per_class": report.per_class,
        "labels": m.labels().iter().map(|l| l.to_string()).collect::<Vec<_>>(),
        "confusion": m.counts(),
        "warnings": report.warnings,
    })
}

#[derive(Deserialize)]
struct IdLabel {
    id: String,
    label: LabelCoarse,
}

pub(crate) fn evaluate_predictions(gold: &LabeledDataset, preds: &[(String, LabelCoarse)]) -> Result<(MetricsReport, ConfusionMatrix<LabelCoarse>)> {
    let gold_map: BTreeMap<String, LabelCoarse> = gold.iter().map(|e| (e.id().to_string(), e.label)).collect();
    let m = confusion(preds, &gold_map, LabelCoarse::ALL.to_vec())?;
    let report = macro_f1(&m)?;
    Ok((report, m))
}

fn eval(run: &mut Run, a: &EvalArgs) -> Result<Value> {
    let (summary, csv) = match (&a.confusion, &a.gold, &a.predictions) {
        (Some(path), None, None) => {
            let data = run.read(path)?;
            let m = parse_confusion_csv(&data).with_context(|| format!("{}", path.display()))?;
            let report = macro_f1(&m)?;
            (report_json(&report, &m), m.to_csv())
        }
        (None, Some(gold), Some(preds)) => {
            let gold = data::load_dataset(run, gold)?;
            let raw = run.read(preds)?;
            let mut pairs = Vec::new();
            for (i, line) in raw.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: IdLabel = serde_json::from_str(&line).with_context(|| format!("{}: line {}", preds.display(), i + 1))?;
                pairs.push((r.id, r.label));
            }
            let (report, m) = evaluate_predictions(&gold, &pairs)?;
            let predicted: BTreeSet<&str> = pairs.iter().map(|(id, _)| id.as_str()).collect();
            let missing = gold.iter().filter(|e| !predicted.contains(e.id())).count();
            if missing > 0 {
                run.warn(format!("{missing} gold items have no prediction"));
            }
            (report_json(&report, &m), m.to_csv())
        }
        _ => return Err(usage("give either --confusion, or --gold with --predictions")),
    };
    for w in summary["warnings"].as_array().into_iter().flatten() {
        run.warn(w.as_str().unwrap_or_default().to_string());
    }
    run.write_json(&a.output, &summary)?;
    if let Some(p) = &a.confusion_out {
        run.write(p, csv.as_bytes())?;
    }
    Ok(json!({"macro_f1": summary["macro_f1"], "accuracy": summary["accuracy"], "n": summary["n"]}))
}

/// Writes daily.csv, long.csv and weekly.json for labeled tweets into `out_dir`.
pub(crate) fn write_trends(run: &mut Run, items: &[(Tweet, LabelCoarse)], out_dir: &Path, zero_fill: bool, smooth: bool) -> Result<(DailySeries, Value)> {
    let mut series = daily_counts(items.iter().map(|(t, l)| (t, *l)));
    if zero_fill {
        series = series.zero_filled();
    }
    let mut buf = Vec::new();
    write_daily_csv(&mut buf, &series)?;
    run.write(&out_dir.join("daily.csv"), &buf)?;
    let ratios = sa_ratio(&series);
    let smoothed = smooth.then(|| moving_average(&defined(&ratios), 7));
    let mut buf = Vec::new();
    write_long_csv(&mut buf, &series, smoothed.as_ref())?;
    run.write(&out_dir.join("long.csv"), &buf)?;
    let totals = series.totals();
    let mut summary = json!({
        "days": series.len(),
        "first_date": series.first_date(),
        "last_date": series.last_date(),
        "totals": totals,
        "overall_sa_ratio": solidarity_core::trends::ratio(totals.s, totals.a),
        "days_sa_undefined": ratios.values().filter(|r| r.is_none()).count(),
        "days_s_above_a": ratios.values().filter(|r| r.is_some_and(|v| v > 1.0)).count(),
    });
    if !series.is_empty() {
        let all = weekly_average(&series, &LabelCoarse::ALL)?;
        let sa = weekly_average(&series, &[LabelCoarse::S, LabelCoarse::A])?;
        run.write_json(&out_dir.join("weekly.json"), &json!({"all_labels": all, "s_and_a": sa}))?;
        summary["weekly_mean_all"] = json!(all.mean);
        summary["weekly_mean_s_and_a"] = json!(sa.mean);
    }
    Ok((series, summary))
}

fn trends(run: &mut Run, a: &TrendsArgs) -> Result<Value> {
    run.config = json!({"zero_fill": a.zero_fill, "smooth": a.smooth});
    let items = data::load_dated_labels(run, &a.labeled)?;
    let (_, summary) = write_trends(run, &items, &a.out_dir, a.zero_fill, a.smooth)?;
    Ok(summary)
}

pub(crate) fn metric_series(series: &DailySeries, metric: &str) -> Result<Series> {
    Ok(match metric {
        "S" => series.label_series(LabelCoarse::S),
        "A" => series.label_series(LabelCoarse::A),
        "O" => series.label_series(LabelCoarse::O),
        "sa_ratio" => defined(&sa_ratio(series)),
        other => return Err(usage(format!("unknown metric `{other}`; use S, A, O or sa_ratio"))),
    })
}

/// Reads the `date,S,A,O,...` table written by `trends`.
fn read_daily_csv(data: &[u8]) -> Result<DailySeries> {
    let mut rdr = csv::Reader::from_reader(data);
    let mut days = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("line {}", i + 2);
        let field = |j: usize| rec.get(j).unwrap_or_default();
        let date: NaiveDate = field(0).parse().with_context(ctx)?;
        let c = solidarity_core::trends::DailyCounts {
            s: field(1).parse().with_context(ctx)?,
            a: field(2).parse().with_context(ctx)?,
            o: field(3).parse().with_context(ctx)?,
        };
        days.insert(date, c);
    }
    Ok(DailySeries { days })
}

pub(crate) fn correlation(metric: &Series, external: &Series, from: Option<NaiveDate>, to: Option<NaiveDate>, name: &str) -> Result<Value> {
    let window = match (from, to) {
        (None, None) => None,
        (f, t) => Some((f.unwrap_or(NaiveDate::MIN), t.unwrap_or(NaiveDate::MAX))),
    };
    let r = spearman(metric, external, window)?;
    Ok(json!({"metric": name, "rho": r.rho, "n": r.n, "method": r.method, "first_date": r.first_date, "last_date": r.last_date}))
}

fn correlate(run: &mut Run, a: &CorrelateArgs) -> Result<Value> {
    run.config = json!({"metric": a.metric, "from": a.from, "to": a.to});
    let series = match (&a.daily, &a.labeled) {
        (Some(p), None) => {
            let d = run.read(p)?;
            read_daily_csv(&d).with_context(|| format!("{}", p.display()))?
        }
        (None, Some(p)) => {
            let items = data::load_dated_labels(run, p)?;
            daily_counts(items.iter().map(|(t, l)| (t, *l)))
        }
        _ => return Err(usage("give exactly one of --daily or --labeled")),
    };
    let metric = metric_series(&series, &a.metric)?;
    let ext_bytes = run.read(&a.external)?;
    let external = read_series_csv(&ext_bytes[..]).with_context(|| format!("{}", a.external.display()))?;
    let result = correlation(&metric, &external, a.from, a.to, &a.metric)?;
    run.write_json(&a.output, &result)?;
    Ok(result)
}

fn splits(run: &mut Run, a: &SplitsArgs) -> Result<Value> {
    let sizes = SplitSizes {
        dev: a.dev,
        test: a.test,
        n: a.n_splits,
    };
    run.seed("splits", a.seed);
    run.config = json!({"sizes": sizes});
    run.note("splits are resampled independently; test sets of different splits may overlap");
    let human = data::load_dataset(run, &a.human)?;
    let manifests = splits_for(&human, sizes, a.seed)?;
    for m in &manifests {
        run.write_json(&a.out_dir.join(format!("split_{}.json", m.split)), m)?;
    }
    Ok(json!({"splits": manifests.iter().map(|m| &m.counts).collect::<Vec<_>>()}))
}

pub(crate) fn make_translator(cfg: &TranslatorConfig) -> Result<Box<dyn Translator>> {
    Ok(match cfg.kind {
        TranslatorKind::Mock => Box::new(MockTranslator),
        TranslatorKind::Identity => Box::new(IdentityTranslator),
        TranslatorKind::Http => {
            let url = cfg.url.clone().ok_or_else(|| usage("the http translator needs a URL"))?;
            Box::new(HttpTranslator::from_env(url, &cfg.key_env, Duration::from_millis(cfg.timeout_ms)))
        }
    })
}

fn augment(run: &mut Run, a: &AugmentArgs) -> Result<Value> {
    let plan = AugmentPlan {
        oversample: a.oversample,
        back_translate: a.back_translate,
        seed: a.seed,
        pivot: a.pivot,
        drop_identical: a.drop_identical,
    };
    let tcfg = TranslatorConfig {
        kind: a.translator,
        url: a.translator_url.clone(),
        key_env: a.translator_key_env.clone(),
        ..TranslatorConfig::default()
    };
    run.seed("augment", a.seed);
    run.config = json!({"plan": plan, "translator": tcfg.kind});
    let translator = make_translator(&tcfg)?;
    let human = data::load_dataset(run, &a.human)?;
    let auto = match &a.auto {
        Some(p) => data::load_dataset(run, p)?,
        None => LabeledDataset::new(),
    };
    let (out, summary) = build_training_set(&human, &auto, &plan, translator.as_ref())?;
    if summary.translation_failures > 0 {
        run.warn(format!("{} back-translations failed and were skipped", summary.translation_failures));
    }
    run.write(&a.output, &data::dataset_bytes(&out))?;
    Ok(json!({"sizes": summary, "class_counts": class_counts(&out)}))
}

/// Reference 3-class confusion matrix shipped with the fixture (macro-F1 ≈ 0.8464).
pub const REFERENCE_CONFUSION: &str = "gold\\pred,S,A,O\nS,63,3,2\nA,5,37,4\nO,5,6,45\n";

fn synth_fixture(run: &mut Run, a: &SynthArgs) -> Result<Value> {
    let cfg = synth::FixtureConfig {
        n_tweets: a.tweets,
        seed: a.seed,
        ..Default::default()
    };
    if cfg.n_expert + cfg.n_crowd_only > cfg.n_tweets {
        return Err(usage(format!("--tweets must be at least {}", cfg.n_expert + cfg.n_crowd_only)));
    }
    run.seed("synth", a.seed);
    let fx = synth::fixture(&cfg);
    let dir = &a.out_dir;
    run.write(&dir.join("corpus.jsonl"), &data::corpus_bytes(&fx.corpus))?;
    let mut buf = Vec::new();
    solidarity_core::annotation::write_annotations_csv(&mut buf, &fx.expert)?;
    run.write(&dir.join("expert.csv"), &buf)?;
    let mut buf = Vec::new();
    solidarity_core::annotation::write_adjudications_csv(&mut buf, &fx.adjudications)?;
    run.write(&dir.join("adjudications.csv"), &buf)?;
    let mut buf = Vec::new();
    solidarity_core::annotation::write_annotations_csv(&mut buf, &fx.crowd)?;
    run.write(&dir.join("crowd.csv"), &buf)?;
    let mut buf = Vec::new();
    solidarity_core::trends::write_series_csv(&mut buf, &fx.infections)?;
    run.write(&dir.join("infections.csv"), &buf)?;
    run.write(&dir.join("reference_confusion.csv"), REFERENCE_CONFUSION.as_bytes())?;

    let (train, dev) = synth::separable(100, a.seed);
    run.write(&dir.join("separable_train.jsonl"), &data::dataset_bytes(&train))?;
    run.write(&dir.join("separable_dev.jsonl"), &data::dataset_bytes(&dev))?;
    let (train, dev) = synth::text_signal(100, a.seed);
    run.write(&dir.join("text_signal_train.jsonl"), &data::dataset_bytes(&train))?;
    run.write(&dir.join("text_signal_dev.jsonl"), &data::dataset_bytes(&dev))?;

    let run_cfg = json!({
        "corpus": "corpus.jsonl",
        "expert": "expert.csv",
        "adjudications": "adjudications.csv",
        "crowd": "crowd.csv",
        "external_series": "infections.csv",
        "out_dir": "run",
        "seed": 13,
        "splits": {"dev": 40, "test": 40, "n": 3},
        "autolabel": {"k": 7, "n": 9, "cap": 30, "seed": 13},
        "pool_candidates": 15,
        "ensemble_size": 15,
        "hyperparams": {"dim": 65536, "epochs": 20, "patience": 3},
        "augment": {"oversample": true, "back_translate": true, "pivot": "de"},
        "trends": {"metric": "A", "smooth": true},
    });
    run.write_json(&dir.join("run.json"), &run_cfg)?;
    Ok(json!({
        "tweets": fx.corpus.len(),
        "expert_annotations": fx.expert.len(),
        "adjudications": fx.adjudications.len(),
        "crowd_annotations": fx.crowd.len(),
        "days": fx.infections.len(),
    }))
}

/// The corpus restricted to tweets not in `exclude`.
pub(crate) fn without(corpus: &Corpus, exclude: &BTreeSet<String>) -> Corpus {
    corpus.filter(|t| !exclude.contains(&t.id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_csv_parses() {
        let m = parse_confusion_csv(REFERENCE_CONFUSION.as_bytes()).unwrap();
        assert_eq!(m.total(), 170);
        let r = macro_f1(&m).unwrap();
        assert!((r.macro_f1 - 0.8464).abs() < 0.002);
        assert_eq!(m.to_csv(), REFERENCE_CONFUSION);
    }

    #[test]
    fn confusion_csv_rejects_misordered_rows() {
        assert!(parse_confusion_csv(b"gold\\pred,S,A\nA,1,2\nS,3,4\n").is_err());
        assert!(parse_confusion_csv(b"gold\\pred,S,A\nS,1,x\nA,3,4\n").is_err());
    }

    #[test]
    fn sibling_report_path() {
        assert_eq!(sibling(Path::new("out/eval.json")), PathBuf::from("out/eval.json.report.json"));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
