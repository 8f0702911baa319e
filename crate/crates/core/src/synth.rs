//! Deterministic synthetic data: an annotated demo corpus with an external
//! daily series, a separable three-class set, and a set whose label depends
//! only on body text.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::{Adjudication, Annotation, LabelCoarse, LabelFine};
use crate::augment::{LabeledDataset, LabeledExample, Provenance};
use crate::corpus::{Corpus, Lang, Tweet};
use crate::trends::Series;

const S_EN: &[&str] = &[
    "welcome", "support", "together", "help", "share", "solidarity", "humanity", "shelter", "donate", "unity", "rescue",
    "protect", "safe", "care", "open",
];
const A_EN: &[&str] = &[
    "close", "borders", "invasion", "burden", "stop", "illegal", "deport", "sovereignty", "threat", "enough", "reject",
    "flood", "ban", "criminal", "wall",
];
const O_EN: &[&str] = &[
    "news", "report", "today", "meeting", "weather", "update", "minister", "video", "read", "summit", "statistics",
    "interview", "debate", "schedule", "press",
];
const S_DE: &[&str] = &[
    "willkommen", "helfen", "gemeinsam", "unterstützen", "teilen", "solidarität", "menschlichkeit", "spenden", "retten",
    "schützen", "zusammenhalt", "offen",
];
const A_DE: &[&str] = &[
    "grenzen", "schließen", "invasion", "belastung", "stoppen", "illegal", "abschieben", "souveränität", "bedrohung",
    "genug", "ablehnen", "mauer",
];
const O_DE: &[&str] = &[
    "nachrichten", "bericht", "heute", "treffen", "wetter", "minister", "video", "lesen", "gipfel", "statistik",
    "interview", "debatte",
];
const FILLER_EN: &[&str] = &["the", "we", "eu", "people", "this", "must", "now", "all", "and", "more", "europe", "in"];
const FILLER_DE: &[&str] = &["die", "wir", "eu", "menschen", "das", "muss", "jetzt", "alle", "und", "mehr", "europa", "in"];
const S_TAGS: &[&str] = &["#refugeeswelcome", "#leavenoonebehind", "#wirhabenplatz"];
const A_TAGS: &[&str] = &["#closetheborders", "#grenzendicht", "#stopmigration"];
const NEUTRAL_TAGS: &[&str] = &["#eu", "#covid19", "#coronavirus", "#migration", "#refugees", "#europe"];

fn vocab(label: LabelCoarse, lang: Lang) -> &'static [&'static str] {
    match (label, lang) {
        (LabelCoarse::S, Lang::En) => S_EN,
        (LabelCoarse::A, Lang::En) => A_EN,
        (LabelCoarse::O, Lang::En) => O_EN,
        (LabelCoarse::S, Lang::De) => S_DE,
        (LabelCoarse::A, Lang::De) => A_DE,
        (LabelCoarse::O, Lang::De) => O_DE,
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).copied().expect("non-empty word list")
}

fn other_label(rng: &mut ChaCha8Rng, label: LabelCoarse) -> LabelCoarse {
    let others: Vec<LabelCoarse> = LabelCoarse::ALL.into_iter().filter(|l| *l != label).collect();
    *others.choose(rng).expect("two other labels")
}

/// Body text with class words, occasional off-class noise and filler.
fn body(rng: &mut ChaCha8Rng, label: LabelCoarse, lang: Lang, noise: f64) -> Vec<String> {
    let filler = if lang == Lang::En { FILLER_EN } else { FILLER_DE };
    let mut words: Vec<String> = Vec::new();
    for _ in 0..rng.gen_range(2..=4) {
        let l = if rng.gen_bool(noise) { other_label(rng, label) } else { label };
        words.push(pick(rng, vocab(l, lang)).to_string());
    }
    for _ in 0..rng.gen_range(2..=5) {
        words.push(pick(rng, filler).to_string());
    }
    words.shuffle(rng);
    words
}

fn tags_for(rng: &mut ChaCha8Rng, label: LabelCoarse) -> Vec<String> {
    let mut tags = Vec::new();
    let class_tags = match label {
        LabelCoarse::S => Some(S_TAGS),
        LabelCoarse::A => Some(A_TAGS),
        LabelCoarse::O => None,
    };
    match class_tags {
        Some(t) if rng.gen_bool(0.6) => tags.push(pick(rng, t).to_string()),
        _ => {}
    }
    if tags.is_empty() || rng.gen_bool(0.5) {
        tags.push(pick(rng, NEUTRAL_TAGS).to_string());
    }
    tags
}

fn fine_label(rng: &mut ChaCha8Rng, coarse: LabelCoarse) -> LabelFine {
    match coarse {
        LabelCoarse::S => LabelFine::Solidarity,
        LabelCoarse::A => LabelFine::AntiSolidarity,
        LabelCoarse::O if rng.gen_bool(0.3) => LabelFine::Ambivalent,
        LabelCoarse::O => LabelFine::NotApplicable,
    }
}

fn noisy_fine(rng: &mut ChaCha8Rng, truth: LabelFine, accuracy: f64) -> LabelFine {
    if rng.gen_bool(accuracy) {
        truth
    } else {
        *LabelFine::ALL.choose(rng).expect("four labels")
    }
}

#[derive(Debug, Clone)]
pub struct FixtureConfig {
    pub n_tweets: usize,
    pub n_expert: usize,
    pub n_crowd_only: usize,
    /// Expert-annotated tweets that crowd workers also label.
    pub n_crowd_overlap: usize,
    pub start: NaiveDate,
    pub days: i64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            n_tweets: 500,
            n_expert: 220,
            n_crowd_only: 100,
            n_crowd_overlap: 60,
            start: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
            days: 92,
            seed: 2020,
        }
    }
}

/// An annotated demo corpus plus a daily case-count series.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub corpus: Corpus,
    pub expert: Vec<Annotation>,
    pub adjudications: BTreeMap<String, Adjudication>,
    pub crowd: Vec<Annotation>,
    pub infections: Series,
    /// Generating label of every tweet.
    pub truth: BTreeMap<String, LabelCoarse>,
}

/// Builds the demo fixture. Anti-solidarity becomes more frequent as the
/// case curve rises, so the two series are positively rank-correlated.
pub fn fixture(cfg: &FixtureConfig) -> Fixture {
    assert!(cfg.n_expert + cfg.n_crowd_only <= cfg.n_tweets, "labeled subsets exceed corpus");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let peak = cfg.days as f64 * 0.45;
    let width = cfg.days as f64 * 0.22;
    let curve = |d: i64| (-((d as f64 - peak) / width).powi(2)).exp();

    let infections: Series = (0..cfg.days)
        .map(|d| {
            let v = (5000.0 * curve(d) * rng.gen_range(0.85..1.15)).round();
            (cfg.start + Duration::days(d), v)
        })
        .collect();

    let mut tweets = Vec::with_capacity(cfg.n_tweets);
    let mut truth = BTreeMap::new();
    let mut fine_truth = Vec::with_capacity(cfg.n_tweets);
    for i in 0..cfg.n_tweets {
        let day = rng.gen_range(0..cfg.days);
        let p_a = 0.15 + 0.35 * curve(day);
        let u: f64 = rng.gen();
        let label = if u < p_a {
            LabelCoarse::A
        } else if u < p_a + 0.4 {
            LabelCoarse::S
        } else {
            LabelCoarse::O
        };
        let lang = if rng.gen_bool(0.35) { Lang::De } else { Lang::En };
        let mut words = body(&mut rng, label, lang, 0.12);
        words.extend(tags_for(&mut rng, label));
        let secs = rng.gen_range(0..86_400);
        let ts = Utc.from_utc_datetime(&(cfg.start + Duration::days(day)).and_hms_opt(0, 0, 0).expect("midnight"))
            + Duration::seconds(secs);
        let id = (1_234_000_000_000_000_000u64 + i as u64 * 7_919).to_string();
        truth.insert(id.clone(), label);
        fine_truth.push(fine_label(&mut rng, label));
        tweets.push(Tweet::new(id, words.join(" "), lang, ts));
    }

    let experts = ["expert_a", "expert_b", "expert_c", "expert_d"];
    let mut expert = Vec::new();
    let mut adjudications = BTreeMap::new();
    for (t, &fine) in tweets.iter().zip(&fine_truth).take(cfg.n_expert) {
        let mut chosen = experts.to_vec();
        chosen.shuffle(&mut rng);
        let votes: Vec<LabelFine> = chosen[..3].iter().map(|_| noisy_fine(&mut rng, fine, 0.85)).collect();
        for (e, l) in chosen[..3].iter().zip(&votes) {
            let mut a = Annotation::new(t.id.clone(), *e, *l);
            a.stage = Some("expert".into());
            expert.push(a);
        }
        if crate::annotation::unique_majority(votes.iter().copied()).is_none() {
            let adj = if rng.gen_bool(0.15) {
                Adjudication::Undecided
            } else {
                Adjudication::Label(fine)
            };
            adjudications.insert(t.id.clone(), adj);
        }
    }

    let workers: Vec<(String, f64)> = (0..12).map(|i| (format!("crowd_{i:02}"), 0.6 + 0.025 * i as f64)).collect();
    let mut crowd = Vec::new();
    let overlap = 0..cfg.n_crowd_overlap.min(cfg.n_expert);
    let crowd_only = cfg.n_expert..cfg.n_expert + cfg.n_crowd_only;
    for i in overlap.chain(crowd_only) {
        let mut ws: Vec<&(String, f64)> = workers.iter().collect();
        ws.shuffle(&mut rng);
        let k = rng.gen_range(3..=5);
        for (w, acc) in ws.into_iter().take(k) {
            let mut a = Annotation::new(tweets[i].id.clone(), w.clone(), noisy_fine(&mut rng, fine_truth[i], *acc));
            a.stage = Some("crowd".into());
            crowd.push(a);
        }
    }

    Fixture {
        corpus: Corpus::from_tweets(tweets).expect("generated ids are unique"),
        expert,
        adjudications,
        crowd,
        infections,
        truth,
    }
}

fn timestamp(rng: &mut ChaCha8Rng) -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 3, 1, 0, 0, 0).single().expect("valid timestamp") + Duration::seconds(rng.gen_range(0..90 * 86_400))
}

/// Splits `items` into train and dev, every fifth item going to dev.
fn split_every_fifth(items: Vec<LabeledExample>) -> (LabeledDataset, LabeledDataset) {
    let (dev, train): (Vec<_>, Vec<_>) = items.into_iter().enumerate().partition(|(i, _)| i % 5 == 4);
    (
        LabeledDataset::from_examples(train.into_iter().map(|(_, e)| e).collect()),
        LabeledDataset::from_examples(dev.into_iter().map(|(_, e)| e).collect()),
    )
}

/// `n_per_class` items per label over disjoint class vocabularies, split 80/20.
pub fn separable(n_per_class: usize, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(3 * n_per_class);
    for i in 0..n_per_class {
        for label in LabelCoarse::ALL {
            let words: Vec<&str> = (0..5).map(|_| pick(&mut rng, vocab(label, Lang::En))).collect();
            let id = format!("sep-{}-{i}", label.as_str());
            let tweet = Tweet::new(id, words.join(" "), Lang::En, timestamp(&mut rng));
            items.push(LabeledExample::new(tweet, label, Provenance::Expert));
        }
    }
    split_every_fifth(items)
}

/// Labels depend only on body text; hashtags are drawn independently of the label.
pub fn text_signal(n_per_class: usize, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all_tags: Vec<&str> = S_TAGS.iter().chain(A_TAGS).chain(NEUTRAL_TAGS).copied().collect();
    let mut items = Vec::with_capacity(3 * n_per_class);
    for i in 0..n_per_class {
        for label in LabelCoarse::ALL {
            let mut words = body(&mut rng, label, Lang::En, 0.1);
            for _ in 0..rng.gen_range(1..=2) {
                words.push(pick(&mut rng, &all_tags).to_string());
            }
            let id = format!("txt-{}-{i}", label.as_str());
            let tweet = Tweet::new(id, words.join(" "), Lang::En, timestamp(&mut rng));
            items.push(LabeledExample::new(tweet, label, Provenance::Expert));
        }
    }
    split_every_fifth(items)
}

/// Small balanced human-labeled set, expert then crowd provenance alternating.
pub fn human_set(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|i| {
            let label = LabelCoarse::ALL[i % 3];
            let provenance = if i % 2 == 0 { Provenance::Expert } else { Provenance::Crowd };
            let lang = if i % 4 == 3 { Lang::De } else { Lang::En };
            let mut words = body(&mut rng, label, lang, 0.0);
            words.extend(tags_for(&mut rng, label));
            let tweet = Tweet::new(format!("h{i}"), words.join(" "), lang, timestamp(&mut rng));
            LabeledExample::new(tweet, label, provenance)
        })
        .collect();
    LabeledDataset::from_examples(items)
}

/// Unlabeled tweets drawn from the same generator, with their hidden labels.
pub fn unlabeled(n: usize, seed: u64) -> (Corpus, Vec<LabelCoarse>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tweets = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = LabelCoarse::ALL[rng.gen_range(0..3)];
        let lang = if rng.gen_bool(0.3) { Lang::De } else { Lang::En };
        let mut words = body(&mut rng, label, lang, 0.1);
        words.extend(tags_for(&mut rng, label));
        tweets.push(Tweet::new(format!("u{i}"), words.join(" "), lang, timestamp(&mut rng)));
        labels.push(label);
    }
    (Corpus::from_tweets(tweets).expect("unique ids"), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::build_gold;

    #[test]
    fn fixture_is_deterministic_and_consistent() {
        let cfg = FixtureConfig::default();
        let a = fixture(&cfg);
        let b = fixture(&cfg);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.expert, b.expert);
        assert_eq!(a.corpus.len(), 500);
        assert_eq!(a.infections.len(), 92);
        assert_eq!(a.expert.len(), 3 * 220);
        let gold = build_gold(&a.expert, &a.adjudications).unwrap();
        assert_eq!(gold.len() + gold.excluded.len(), 220);
        assert!(a.corpus.iter().all(|t| !t.hashtags.is_empty()));
    }

    #[test]
    fn separable_vocabularies_are_disjoint() {
        for (l1, l2) in [(LabelCoarse::S, LabelCoarse::A), (LabelCoarse::S, LabelCoarse::O), (LabelCoarse::A, LabelCoarse::O)] {
            for lang in [Lang::En, Lang::De] {
                assert!(vocab(l1, lang).iter().all(|w| !vocab(l2, lang).contains(w)));
            }
        }
        let (train, dev) = separable(100, 1);
        assert_eq!((train.len(), dev.len()), (240, 60));
        assert_eq!(dev.count(LabelCoarse::S), 20);
    }

    #[test]
    fn human_set_balanced() {
        let h = human_set(30, 3);
        for l in LabelCoarse::ALL {
            assert_eq!(h.count(l), 10);
        }
        assert_eq!(h.human_count(), 30);
    }
}
