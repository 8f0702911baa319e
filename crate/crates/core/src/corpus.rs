//! Tweet corpora: JSONL parsing, hashtag extraction and co-occurrence expansion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SubsecRound, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: missing or empty field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: duplicate id `{id}` (first seen on line {first_line})")]
    DuplicateId {
        line: usize,
        id: String,
        first_line: usize,
    },
    #[error("line {line}: unsupported lang `{value}` (expected \"en\" or \"de\")")]
    UnsupportedLang { line: usize, value: String },
    #[error("line {line}: invalid created_at `{value}`")]
    Timestamp { line: usize, value: String },
    #[error("line {line}: created_at {value} outside validity window [{from}, {to})")]
    OutOfWindow {
        line: usize,
        value: String,
        from: String,
        to: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateTweet(String),
    #[error("seed hashtag set is empty")]
    EmptySeeds,
    #[error("min_cooccurrence must be at least 1")]
    ZeroThreshold,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    /// Source line of a per-line parse error.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Json { line, .. }
            | CorpusError::MissingField { line, .. }
            | CorpusError::DuplicateId { line, .. }
            | CorpusError::UnsupportedLang { line, .. }
            | CorpusError::Timestamp { line, .. }
            | CorpusError::OutOfWindow { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    En,
    De,
}

impl Lang {
    pub fn as_str(self) -> &'static str {
        match self {
            Lang::En => "en",
            Lang::De => "de",
        }
    }

    /// The other supported language.
    pub fn other(self) -> Lang {
        match self {
            Lang::En => Lang::De,
            Lang::De => Lang::En,
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "en" => Ok(Lang::En),
            "de" => Ok(Lang::De),
            other => Err(other.to_string()),
        }
    }
}

/// One post. `hashtags` is always derived from `text`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tweet {
    pub id: String,
    pub text: String,
    pub lang: Lang,
    pub created_at: DateTime<Utc>,
    pub hashtags: Vec<String>,
}

impl Tweet {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        lang: Lang,
        created_at: DateTime<Utc>,
    ) -> Self {
        let text = text.into();
        let hashtags = extract_hashtags(&text);
        Tweet {
            id: id.into(),
            text,
            lang,
            created_at: created_at.trunc_subsecs(0),
            hashtags,
        }
    }

    /// Same post metadata with different text; hashtags are re-derived.
    pub fn with_text(&self, id: impl Into<String>, text: impl Into<String>) -> Self {
        Tweet::new(id, text, self.lang, self.created_at)
    }

    pub fn date(&self) -> NaiveDate {
        self.created_at.date_naive()
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "id": self.id,
            "text": self.text,
            "lang": self.lang.as_str(),
            "created_at": format_timestamp(&self.created_at),
        })
    }
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Parses an ISO-8601 timestamp. Offsets are converted to UTC; a missing
/// offset is read as UTC. Sub-second precision is dropped.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc).trunc_subsecs(0));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&naive).trunc_subsecs(0));
        }
    }
    None
}

/// Ordered, id-indexed collection of tweets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    tweets: Vec<Tweet>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tweets(tweets: Vec<Tweet>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::new();
        for tweet in tweets {
            corpus.push(tweet)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, tweet: Tweet) -> Result<(), CorpusError> {
        if self.index.contains_key(&tweet.id) {
            return Err(CorpusError::DuplicateTweet(tweet.id));
        }
        self.index.insert(tweet.id.clone(), self.tweets.len());
        self.tweets.push(tweet);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Tweet> {
        self.index.get(id).map(|&i| &self.tweets[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn tweets(&self) -> &[Tweet] {
        &self.tweets
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tweet> {
        self.tweets.iter()
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    /// Keeps tweets for which `keep` returns true, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Tweet) -> bool) -> Corpus {
        let tweets: Vec<Tweet> = self.tweets.iter().filter(|t| keep(t)).cloned().collect();
        Corpus::from_tweets(tweets).expect("subset of a valid corpus has unique ids")
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Tweet;
    type IntoIter = std::slice::Iter<'a, Tweet>;

    fn into_iter(self) -> Self::IntoIter {
        self.tweets.iter()
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Skip bad lines (counting them) instead of failing.
    pub lenient: bool,
    /// Accepted `created_at` range, half-open.
    pub window: (DateTime<Utc>, DateTime<Utc>),
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            lenient: false,
            window: (
                Utc.with_ymd_and_hms(2006, 3, 21, 0, 0, 0).unwrap(),
                Utc.with_ymd_and_hms(2100, 1, 1, 0, 0, 0).unwrap(),
            ),
        }
    }
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub corpus: Corpus,
    /// Errors that were skipped in lenient mode.
    pub skipped: Vec<CorpusError>,
}

/// Reads a JSONL corpus. Blank lines are ignored.
pub fn parse_corpus<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<ParseOutcome, CorpusError> {
    let mut outcome = ParseOutcome::default();
    let mut first_line: HashMap<String, usize> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_line(&line, line_no, opts).and_then(|tweet| {
            if let Some(&first) = first_line.get(&tweet.id) {
                return Err(CorpusError::DuplicateId {
                    line: line_no,
                    id: tweet.id,
                    first_line: first,
                });
            }
            Ok(tweet)
        });
        match parsed {
            Ok(tweet) => {
                first_line.insert(tweet.id.clone(), line_no);
                outcome.corpus.push(tweet)?;
            }
            Err(e) if opts.lenient => {
                log::warn!("skipping {e}");
                outcome.skipped.push(e);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}

fn required_str<'a>(
    obj: &'a Map<String, Value>,
    field: &'static str,
    line: usize,
) -> Result<&'a str, CorpusError> {
    match obj.get(field) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s),
        _ => Err(CorpusError::MissingField { line, field }),
    }
}

fn parse_line(line: &str, line_no: usize, opts: &ParseOptions) -> Result<Tweet, CorpusError> {
    let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Json {
        line: line_no,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| CorpusError::Json {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;
    let id = required_str(obj, "id", line_no)?;
    let text = required_str(obj, "text", line_no)?;
    let lang_raw = required_str(obj, "lang", line_no)?;
    let lang = lang_raw.parse::<Lang>().map_err(|value| CorpusError::UnsupportedLang {
        line: line_no,
        value,
    })?;
    let ts_raw = required_str(obj, "created_at", line_no)?;
    let created_at = parse_timestamp(ts_raw).ok_or_else(|| CorpusError::Timestamp {
        line: line_no,
        value: ts_raw.to_string(),
    })?;
    let (from, to) = opts.window;
    if created_at < from || created_at >= to {
        return Err(CorpusError::OutOfWindow {
            line: line_no,
            value: ts_raw.to_string(),
            from: format_timestamp(&from),
            to: format_timestamp(&to),
        });
    }
    Ok(Tweet::new(id, text, lang, created_at))
}

/// Writes the corpus back as JSONL (id, text, lang, created_at).
pub fn write_corpus<W: Write>(mut writer: W, corpus: &Corpus) -> std::io::Result<()> {
    for tweet in corpus {
        serde_json::to_writer(&mut writer, &tweet.to_json())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn is_tag_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Extracts `#tag` tokens: '#' followed by one or more unicode letters,
/// digits or underscores. Returned lowercase without '#', first occurrence
/// order, no duplicates.
pub fn extract_hashtags(text: &str) -> Vec<String> {
    let mut tags: Vec<String> = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        if c != '#' {
            continue;
        }
        let body_start = start + c.len_utf8();
        let mut end = body_start;
        while let Some(&(i, next)) = chars.peek() {
            if !is_tag_char(next) {
                break;
            }
            end = i + next.len_utf8();
            chars.next();
        }
        if end > body_start {
            let tag = text[body_start..end].to_lowercase();
            if !tags.contains(&tag) {
                tags.push(tag);
            }
        }
    }
    tags
}

/// Lowercases a user-supplied hashtag and strips a leading '#'.
pub fn normalize_hashtag(tag: &str) -> String {
    tag.trim().trim_start_matches('#').to_lowercase()
}

/// Non-seed hashtags co-occurring (in the same tweet) with any seed, counted
/// once per tweet. Sorted by count descending, then hashtag ascending.
pub fn expand_hashtags(
    corpus: &Corpus,
    seeds: &BTreeSet<String>,
    min_cooccurrence: usize,
) -> Result<Vec<(String, usize)>, CorpusError> {
    if seeds.is_empty() {
        return Err(CorpusError::EmptySeeds);
    }
    if min_cooccurrence == 0 {
        return Err(CorpusError::ZeroThreshold);
    }
    let seeds: BTreeSet<String> = seeds.iter().map(|s| normalize_hashtag(s)).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for tweet in corpus {
        if !tweet.hashtags.iter().any(|t| seeds.contains(t)) {
            continue;
        }
        for tag in tweet.hashtags.iter().filter(|t| !seeds.contains(*t)) {
            *counts.entry(tag.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_cooccurrence)
        .map(|(t, n)| (t.to_string(), n))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Tweets carrying at least one hashtag from `keep`, in corpus order.
pub fn filter_by_hashtags(corpus: &Corpus, keep: &BTreeSet<String>) -> Corpus {
    let keep: BTreeSet<String> = keep.iter().map(|s| normalize_hashtag(s)).collect();
    corpus.filter(|t| t.hashtags.iter().any(|h| keep.contains(h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 3, d, 12, 0, 0).unwrap()
    }

    fn line(id: &str, text: &str) -> String {
        serde_json::json!({"id": id, "text": text, "lang": "de", "created_at": "2020-03-03T10:00:00Z"})
            .to_string()
    }

    fn parse(input: &str) -> Result<ParseOutcome, CorpusError> {
        parse_corpus(input.as_bytes(), &ParseOptions::default())
    }

    fn corpus_of(texts: &[&str]) -> Corpus {
        let tweets = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Tweet::new(i.to_string(), *t, Lang::En, ts(1)))
            .collect();
        Corpus::from_tweets(tweets).unwrap()
    }

    #[test]
    fn empty_stream_gives_empty_corpus() {
        assert!(parse("").unwrap().corpus.is_empty());
    }

    #[test]
    fn single_line_derives_hashtags() {
        let out = parse(&line("1", "Helft jetzt! #LeaveNoOneBehind")).unwrap();
        assert_eq!(out.corpus.len(), 1);
        assert_eq!(out.corpus.tweets()[0].hashtags, vec!["leavenoonebehind"]);
    }

    #[test]
    fn duplicate_id_names_second_line() {
        let input = format!("{}\n{}\n", line("42", "a"), line("42", "b"));
        // oracle: linear scan with a seen-set
        let mut seen = BTreeSet::new();
        let mut dup_line = None;
        for (i, l) in input.lines().enumerate() {
            let v: Value = serde_json::from_str(l).unwrap();
            if !seen.insert(v["id"].as_str().unwrap().to_string()) {
                dup_line = Some(i + 1);
                break;
            }
        }
        match parse(&input) {
            Err(CorpusError::DuplicateId { line, id, first_line }) => {
                assert_eq!(Some(line), dup_line);
                assert_eq!(line, 2);
                assert_eq!(first_line, 1);
                assert_eq!(id, "42");
            }
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn lenient_mode_counts_skips() {
        let input = format!(
            "{}\nnot json\n{}\n{{\"id\":\"3\",\"text\":\"x\",\"lang\":\"fr\",\"created_at\":\"2020-01-01T00:00:00Z\"}}\n{{\"id\":\"4\",\"lang\":\"en\",\"created_at\":\"2020-01-01T00:00:00Z\"}}\n",
            line("1", "a"),
            line("1", "dup")
        );
        let opts = ParseOptions {
            lenient: true,
            ..Default::default()
        };
        let out = parse_corpus(input.as_bytes(), &opts).unwrap();
        assert_eq!(out.corpus.len(), 1);
        assert_eq!(out.skipped.len(), 4);
        assert!(matches!(out.skipped[0], CorpusError::Json { line: 2, .. }));
        assert!(matches!(out.skipped[1], CorpusError::DuplicateId { line: 3, .. }));
        assert!(matches!(out.skipped[2], CorpusError::UnsupportedLang { line: 4, .. }));
        assert!(matches!(
            out.skipped[3],
            CorpusError::MissingField { line: 5, field: "text" }
        ));
    }

    #[test]
    fn strict_errors() {
        assert!(matches!(parse("{bad"), Err(CorpusError::Json { line: 1, .. })));
        assert!(matches!(
            parse(r#"{"id":"","text":"x","lang":"en","created_at":"2020-01-01T00:00:00Z"}"#),
            Err(CorpusError::MissingField { field: "id", .. })
        ));
        assert!(matches!(
            parse(r#"{"id":"1","text":"x","lang":"en","created_at":"yesterday"}"#),
            Err(CorpusError::Timestamp { .. })
        ));
        assert!(matches!(
            parse(r#"{"id":"1","text":"x","lang":"en","created_at":"1999-01-01T00:00:00Z"}"#),
            Err(CorpusError::OutOfWindow { .. })
        ));
    }

    #[test]
    fn timestamps_normalise_to_utc_seconds() {
        let t = parse_timestamp("2020-03-03T01:30:00.750+02:00").unwrap();
        assert_eq!(format_timestamp(&t), "2020-03-02T23:30:00Z");
        let naive = parse_timestamp("2020-03-03T01:30:00").unwrap();
        assert_eq!(format_timestamp(&naive), "2020-03-03T01:30:00Z");
    }

    #[test]
    fn hashtag_examples() {
        assert!(extract_hashtags("no tags here").is_empty());
        assert_eq!(
            extract_hashtags("Go #RefugeesWelcome! #EU #refugeeswelcome"),
            vec!["refugeeswelcome", "eu"]
        );
        assert_eq!(
            extract_hashtags("#Flüchtlinge, #wirschaffendas."),
            vec!["flüchtlinge", "wirschaffendas"]
        );
        assert_eq!(extract_hashtags("# alone ## #_x1"), vec!["_x1"]);
    }

    #[test]
    fn expand_examples() {
        let seeds: BTreeSet<String> = ["a".to_string()].into();
        assert!(expand_hashtags(&corpus_of(&["#b #c"]), &seeds, 1).unwrap().is_empty());
        let c = corpus_of(&["#a #b", "#a #b", "#a #c"]);
        assert_eq!(expand_hashtags(&c, &seeds, 2).unwrap(), vec![("b".to_string(), 2)]);
        assert_eq!(
            expand_hashtags(&c, &seeds, 1).unwrap(),
            vec![("b".to_string(), 2), ("c".to_string(), 1)]
        );
        assert!(matches!(
            expand_hashtags(&c, &BTreeSet::new(), 1),
            Err(CorpusError::EmptySeeds)
        ));
    }

    #[test]
    fn filter_examples() {
        let c = corpus_of(&[
            "#eurobonds now",
            "#refugees",
            "no tags",
            "#EuroBonds #eu",
            "#eu",
        ]);
        let all: BTreeSet<String> = c.iter().flat_map(|t| t.hashtags.clone()).collect();
        let tagged = filter_by_hashtags(&c, &all);
        assert_eq!(tagged.len(), 4);
        assert!(filter_by_hashtags(&c, &BTreeSet::new()).is_empty());
        let keep: BTreeSet<String> = ["eurobonds".to_string()].into();
        let filtered = filter_by_hashtags(&c, &keep);
        let ids: Vec<&str> = filtered.iter().map(|t| t.id.as_str()).collect();
        let oracle: Vec<&str> = c
            .iter()
            .filter(|t| t.hashtags.contains(&"eurobonds".to_string()))
            .map(|t| t.id.as_str())
            .collect();
        assert_eq!(ids, oracle);
        assert_eq!(ids, vec!["0", "3"]);
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                Just('#'),
                Just(' '),
                Just(','),
                Just('_'),
                Just('ä'),
                Just('Ü'),
                proptest::char::range('a', 'z'),
                proptest::char::range('A', 'Z'),
                proptest::char::range('0', '9'),
            ],
            1..60,
        )
        .prop_map(|cs| cs.into_iter().collect())
    }

    proptest! {
        #[test]
        fn hashtags_case_invariant(text in text_strategy()) {
            prop_assert_eq!(extract_hashtags(&text.to_uppercase()), extract_hashtags(&text));
            prop_assert_eq!(extract_hashtags(&text.to_lowercase()), extract_hashtags(&text));
        }

        #[test]
        fn hashtags_occur_in_text(text in text_strategy()) {
            let lower = text.to_lowercase();
            for tag in extract_hashtags(&text) {
                let needle = format!("#{tag}");
                prop_assert!(lower.contains(&needle));
            }
        }

        #[test]
        fn roundtrip_and_filter_properties(texts in proptest::collection::vec(text_strategy(), 0..12), t1 in 1usize..4, dt in 0usize..3) {
            let c = corpus_of(&texts.iter().map(String::as_str).collect::<Vec<_>>());
            let mut buf = Vec::new();
            write_corpus(&mut buf, &c).unwrap();
            let back = parse_corpus(buf.as_slice(), &ParseOptions::default()).unwrap().corpus;
            prop_assert_eq!(&back, &c);

            let keep: BTreeSet<String> = c.iter().filter_map(|t| t.hashtags.first().cloned()).take(2).collect();
            let once = filter_by_hashtags(&c, &keep);
            prop_assert_eq!(filter_by_hashtags(&once, &keep), once);

            if let Some(seed) = keep.iter().next() {
                let seeds: BTreeSet<String> = [seed.clone()].into();
                let low = expand_hashtags(&c, &seeds, t1).unwrap();
                let high = expand_hashtags(&c, &seeds, t1 + dt).unwrap();
                for entry in &high {
                    prop_assert!(low.contains(entry));
                }
            }
        }
    }
}
