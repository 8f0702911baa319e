//! Daily label counts, S/A ratios, weekly averages and rank correlation
//! against external series such as infection counts.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::LabelCoarse;
use crate::augment::LabeledDataset;
use crate::corpus::Tweet;

#[derive(Debug, Error)]
pub enum TrendsError {
    #[error("need at least 2 overlapping dates, got {0}")]
    TooFewPoints(usize),
    #[error("{0} series has zero variance after ranking")]
    ZeroVariance(&'static str),
    #[error("series contains a non-finite value")]
    NonFinite,
    #[error("empty series")]
    EmptySeries,
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A numeric value per date.
pub type Series = BTreeMap<NaiveDate, f64>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyCounts {
    #[serde(rename = "S")]
    pub s: u64,
    #[serde(rename = "A")]
    pub a: u64,
    #[serde(rename = "O")]
    pub o: u64,
}

impl DailyCounts {
    pub fn get(&self, label: LabelCoarse) -> u64 {
        match label {
            LabelCoarse::S => self.s,
            LabelCoarse::A => self.a,
            LabelCoarse::O => self.o,
        }
    }

    fn bump(&mut self, label: LabelCoarse) {
        match label {
            LabelCoarse::S => self.s += 1,
            LabelCoarse::A => self.a += 1,
            LabelCoarse::O => self.o += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.s + self.a + self.o
    }
}

/// Label counts per UTC calendar date. Days without tweets are absent
/// unless [`DailySeries::zero_filled`] was applied.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DailySeries {
    pub days: BTreeMap<NaiveDate, DailyCounts>,
}

impl DailySeries {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.days.keys().next().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.days.keys().next_back().copied()
    }

    pub fn totals(&self) -> DailyCounts {
        self.days.values().fold(DailyCounts::default(), |acc, c| DailyCounts {
            s: acc.s + c.s,
            a: acc.a + c.a,
            o: acc.o + c.o,
        })
    }

    /// Inserts explicit zero days between the first and last date.
    pub fn zero_filled(&self) -> DailySeries {
        let mut days = self.days.clone();
        if let (Some(first), Some(last)) = (self.first_date(), self.last_date()) {
            for d in first.iter_days().take_while(|d| *d <= last) {
                days.entry(d).or_default();
            }
        }
        DailySeries { days }
    }

    /// Per-day count of one label as a numeric series.
    pub fn label_series(&self, label: LabelCoarse) -> Series {
        self.days.iter().map(|(d, c)| (*d, c.get(label) as f64)).collect()
    }
}

pub fn daily_counts<'a>(items: impl IntoIterator<Item = (&'a Tweet, LabelCoarse)>) -> DailySeries {
    let mut days: BTreeMap<NaiveDate, DailyCounts> = BTreeMap::new();
    for (tweet, label) in items {
        days.entry(tweet.date()).or_default().bump(label);
    }
    DailySeries { days }
}

pub fn daily_counts_of(dataset: &LabeledDataset) -> DailySeries {
    daily_counts(dataset.iter().map(|e| (&e.tweet, e.label)))
}

/// `s / a`, undefined when `a` is zero.
pub fn ratio(s: u64, a: u64) -> Option<f64> {
    (a > 0).then(|| s as f64 / a as f64)
}

/// S/A per day; `None` where no anti-solidarity tweet was seen.
pub type RatioSeries = BTreeMap<NaiveDate, Option<f64>>;

pub fn sa_ratio(series: &DailySeries) -> RatioSeries {
    series.days.iter().map(|(d, c)| (*d, ratio(c.s, c.a))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekSum {
    pub iso_year: i32,
    pub iso_week: u32,
    pub sum: u64,
    /// The series does not cover all seven days of this week.
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyAverage {
    pub weeks: Vec<WeekSum>,
    /// Mean of all weekly sums.
    pub mean: f64,
    /// Mean over weeks fully covered by the series, if any.
    pub mean_full_weeks: Option<f64>,
}

/// Sums the selected labels per ISO week and averages the weekly sums.
pub fn weekly_average(series: &DailySeries, labels: &[LabelCoarse]) -> Result<WeeklyAverage, TrendsError> {
    let (first, last) = match (series.first_date(), series.last_date()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(TrendsError::EmptySeries),
    };
    let mut sums: BTreeMap<(i32, u32), u64> = BTreeMap::new();
    for (d, c) in &series.days {
        let w = d.iso_week();
        *sums.entry((w.year(), w.week())).or_default() += labels.iter().map(|&l| c.get(l)).sum::<u64>();
    }
    let weeks: Vec<WeekSum> = sums
        .into_iter()
        .map(|((iso_year, iso_week), sum)| {
            let monday = NaiveDate::from_isoywd_opt(iso_year, iso_week, chrono::Weekday::Mon).expect("valid iso week");
            let sunday = monday + Duration::days(6);
            WeekSum {
                iso_year,
                iso_week,
                sum,
                partial: first > monday || last < sunday,
            }
        })
        .collect();
    let mean = weeks.iter().map(|w| w.sum as f64).sum::<f64>() / weeks.len() as f64;
    let full: Vec<f64> = weeks.iter().filter(|w| !w.partial).map(|w| w.sum as f64).collect();
    let mean_full_weeks = (!full.is_empty()).then(|| full.iter().sum::<f64>() / full.len() as f64);
    Ok(WeeklyAverage {
        weeks,
        mean,
        mean_full_weeks,
    })
}

/// Centered moving average over calendar days `d - half ..= d + half`,
/// averaging whichever of those days are present.
pub fn moving_average(series: &Series, window: usize) -> Series {
    let half = Duration::days((window / 2) as i64);
    series
        .keys()
        .map(|&d| {
            let vals: Vec<f64> = series.range(d - half..=d + half).map(|(_, v)| *v).collect();
            (d, vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, TrendsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(TrendsError::ZeroVariance("first"));
    }
    if syy == 0.0 {
        return Err(TrendsError::ZeroVariance("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub n: usize,
    pub method: String,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
}

/// Spearman's rho of two equally long value lists.
pub fn spearman_values(x: &[f64], y: &[f64]) -> Result<f64, TrendsError> {
    assert_eq!(x.len(), y.len(), "spearman inputs must be paired");
    if x.len() < 2 {
        return Err(TrendsError::TooFewPoints(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(TrendsError::NonFinite);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Spearman's rho over the dates present in both series, optionally
/// restricted to an inclusive date window.
pub fn spearman(x: &Series, y: &Series, window: Option<(NaiveDate, NaiveDate)>) -> Result<CorrelationResult, TrendsError> {
    let in_window = |d: &NaiveDate| window.is_none_or(|(from, to)| *d >= from && *d <= to);
    let joined: Vec<(NaiveDate, f64, f64)> = x
        .iter()
        .filter(|(d, _)| in_window(d))
        .filter_map(|(d, a)| y.get(d).map(|b| (*d, *a, *b)))
        .collect();
    let xs: Vec<f64> = joined.iter().map(|t| t.1).collect();
    let ys: Vec<f64> = joined.iter().map(|t| t.2).collect();
    let rho = spearman_values(&xs, &ys)?;
    Ok(CorrelationResult {
        rho,
        n: joined.len(),
        method: "spearman".into(),
        first_date: joined.first().map(|t| t.0),
        last_date: joined.last().map(|t| t.0),
    })
}

/// Reads `date,value` rows (ISO dates, header required); dates must increase.
pub fn read_series_csv<R: Read>(r: R) -> Result<Series, TrendsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Series::new();
    let mut prev: Option<NaiveDate> = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let err = |message: String| TrendsError::Csv { line, message };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let (Some(d), Some(v)) = (rec.get(0), rec.get(1)) else {
            return Err(err("expected date,value".into()));
        };
        let date = NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| err(format!("bad date {d:?}: {e}")))?;
        let value: f64 = v.parse().map_err(|_| err(format!("bad value {v:?}")))?;
        if !value.is_finite() {
            return Err(err(format!("non-finite value {v:?}")));
        }
        if prev.is_some_and(|p| date <= p) {
            return Err(err(format!("date {date} is not after the previous row")));
        }
        prev = Some(date);
        out.insert(date, value);
    }
    Ok(out)
}

pub fn write_series_csv<W: Write>(w: W, series: &Series) -> Result<(), TrendsError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "value"]).map_err(csv_io)?;
    for (d, v) in series {
        wtr.write_record([d.to_string(), v.to_string()]).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> TrendsError {
    TrendsError::Io(std::io::Error::other(e))
}

/// Wide per-day table: `date,S,A,O,sa_ratio` (ratio empty when undefined).
pub fn write_daily_csv<W: Write>(w: W, series: &DailySeries) -> Result<(), TrendsError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "S", "A", "O", "sa_ratio"]).map_err(csv_io)?;
    for (d, c) in &series.days {
        let r = ratio(c.s, c.a).map(|r| r.to_string()).unwrap_or_default();
        wtr.write_record([d.to_string(), c.s.to_string(), c.a.to_string(), c.o.to_string(), r])
            .map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Long plot-ready table `date,metric,value`; undefined ratios are omitted.
pub fn write_long_csv<W: Write>(w: W, series: &DailySeries, smoothed_ratio: Option<&Series>) -> Result<(), TrendsError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "metric", "value"]).map_err(csv_io)?;
    for (d, c) in &series.days {
        let ds = d.to_string();
        for l in LabelCoarse::ALL {
            wtr.write_record([ds.as_str(), l.as_str(), &c.get(l).to_string()]).map_err(csv_io)?;
        }
        if let Some(r) = ratio(c.s, c.a) {
            wtr.write_record([ds.as_str(), "sa_ratio", &r.to_string()]).map_err(csv_io)?;
        }
        if let Some(v) = smoothed_ratio.and_then(|s| s.get(d)) {
            wtr.write_record([ds.as_str(), "sa_ratio_ma7", &v.to_string()]).map_err(csv_io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// The defined entries of a ratio series.
pub fn defined(ratios: &RatioSeries) -> Series {
    ratios.iter().filter_map(|(d, r)| r.map(|v| (*d, v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lang;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn tw(id: &str, h: u32, mi: u32, day: u32) -> Tweet {
        Tweet::new(id, "x", Lang::En, Utc.with_ymd_and_hms(2020, 3, day, h, mi, 0).unwrap())
    }

    /// Brute-force ranks: 1 + #smaller + (#equal - 1) / 2.
    fn oracle_ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let eq = v.iter().filter(|b| *b == a).count() as f64;
                1.0 + less + (eq - 1.0) / 2.0
            })
            .collect()
    }

    fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn daily_bucketing() {
        assert!(daily_counts(std::iter::empty()).is_empty());
        let ts = [tw("1", 10, 0, 1), tw("2", 11, 0, 1), tw("3", 12, 0, 1)];
        let s = daily_counts(ts.iter().zip([LabelCoarse::S, LabelCoarse::S, LabelCoarse::A]));
        assert_eq!(s.days[&date(2020, 3, 1)], DailyCounts { s: 2, a: 1, o: 0 });
        let edge = [tw("a", 23, 59, 1), tw("b", 0, 1, 2)];
        let s = daily_counts(edge.iter().map(|t| (t, LabelCoarse::O)));
        assert_eq!(s.days.keys().copied().collect::<Vec<_>>(), vec![date(2020, 3, 1), date(2020, 3, 2)]);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(ratio(5, 5), Some(1.0));
        assert!((ratio(2189, 2569).unwrap() - 0.8521).abs() < 1e-4);
        assert_eq!(ratio(3, 0), None);
    }

    #[test]
    fn weekly_examples() {
        // 2020-03-02 is a Monday
        let week = |start: NaiveDate, per_day: u64, days: i64| -> Vec<(NaiveDate, DailyCounts)> {
            (0..days)
                .map(|i| (start + Duration::days(i), DailyCounts { s: per_day, a: 0, o: 0 }))
                .collect()
        };
        let s = DailySeries {
            days: week(date(2020, 3, 2), 10, 7).into_iter().collect(),
        };
        let w = weekly_average(&s, &[LabelCoarse::S]).unwrap();
        assert_eq!(w.weeks.len(), 1);
        assert_eq!(w.mean, 70.0);
        assert!(!w.weeks[0].partial);

        let mut days: BTreeMap<_, _> = week(date(2020, 3, 2), 0, 7).into_iter().collect();
        days.insert(date(2020, 3, 2), DailyCounts { s: 100, a: 0, o: 0 });
        days.extend(week(date(2020, 3, 9), 0, 7));
        days.insert(date(2020, 3, 10), DailyCounts { s: 150, a: 50, o: 0 });
        let w = weekly_average(&DailySeries { days }, &[LabelCoarse::S, LabelCoarse::A]).unwrap();
        assert_eq!(w.weeks.iter().map(|x| x.sum).collect::<Vec<_>>(), vec![100, 200]);
        assert_eq!(w.mean, 150.0);

        let s = DailySeries {
            days: week(date(2020, 3, 4), 3, 2).into_iter().collect(),
        };
        let w = weekly_average(&s, &[LabelCoarse::S]).unwrap();
        assert_eq!(w.weeks[0].sum, 6);
        assert!(w.weeks[0].partial);
        assert_eq!(w.mean_full_weeks, None);
        assert!(matches!(weekly_average(&DailySeries::default(), &[]), Err(TrendsError::EmptySeries)));
    }

    #[test]
    fn spearman_examples() {
        let up = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman_values(&up, &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_values(&up, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // explicit rank table: x ranks (1, 2.5, 2.5, 4), y ranks (1, 3, 2, 4)
        let x = [1.0, 2.0, 2.0, 3.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        assert_eq!(average_ranks(&x), vec![1.0, 2.5, 2.5, 4.0]);
        let expected = oracle_pearson(&[1.0, 2.5, 2.5, 4.0], &[1.0, 3.0, 2.0, 4.0]);
        assert!((spearman_values(&x, &y).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.9486832980505138).abs() < 1e-12);
        assert!(matches!(spearman_values(&[1.0], &[1.0]), Err(TrendsError::TooFewPoints(1))));
        assert!(matches!(spearman_values(&[1.0, 1.0], &[1.0, 2.0]), Err(TrendsError::ZeroVariance(_))));
    }

    #[test]
    fn spearman_joins_and_windows() {
        let x: Series = (1..=10).map(|d| (date(2020, 3, d), d as f64)).collect();
        let y: Series = (5..=15).map(|d| (date(2020, 3, d), -(d as f64))).collect();
        let r = spearman(&x, &y, None).unwrap();
        assert_eq!(r.n, 6);
        assert_eq!(r.rho, -1.0);
        let r = spearman(&x, &y, Some((date(2020, 3, 6), date(2020, 3, 8)))).unwrap();
        assert_eq!(r.n, 3);
        assert_eq!(r.first_date, Some(date(2020, 3, 6)));
        assert!(spearman(&x, &y, Some((date(2021, 1, 1), date(2021, 2, 1)))).is_err());
    }

    #[test]
    fn series_csv_round_trip_and_errors() {
        let text = "date,value\n2020-03-01,5\n2020-03-02,7.5\n";
        let s = read_series_csv(text.as_bytes()).unwrap();
        assert_eq!(s[&date(2020, 3, 2)], 7.5);
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &s).unwrap();
        assert_eq!(read_series_csv(&buf[..]).unwrap(), s);
        let e = read_series_csv("date,value\n2020-03-02,1\n2020-03-01,2\n".as_bytes()).unwrap_err();
        assert!(matches!(e, TrendsError::Csv { line: 3, .. }));
        assert!(read_series_csv("date,value\n2020-13-01,1\n".as_bytes()).is_err());
    }

    #[test]
    fn moving_average_and_zero_fill() {
        let s: Series = [(date(2020, 3, 1), 1.0), (date(2020, 3, 2), 2.0), (date(2020, 3, 3), 3.0), (date(2020, 3, 20), 9.0)]
            .into_iter()
            .collect();
        let ma = moving_average(&s, 7);
        assert_eq!(ma[&date(2020, 3, 2)], 2.0);
        assert_eq!(ma[&date(2020, 3, 20)], 9.0);
        let d = DailySeries {
            days: [(date(2020, 3, 1), DailyCounts { s: 1, a: 0, o: 0 }), (date(2020, 3, 4), DailyCounts::default())]
                .into_iter()
                .collect(),
        };
        assert_eq!(d.zero_filled().len(), 4);
    }

    #[test]
    fn csv_outputs() {
        let d = DailySeries {
            days: [(date(2020, 3, 1), DailyCounts { s: 2, a: 1, o: 0 }), (date(2020, 3, 2), DailyCounts { s: 1, a: 0, o: 3 })]
                .into_iter()
                .collect(),
        };
        let mut buf = Vec::new();
        write_daily_csv(&mut buf, &d).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "date,S,A,O,sa_ratio\n2020-03-01,2,1,0,2\n2020-03-02,1,0,3,\n");
        let mut buf = Vec::new();
        write_long_csv(&mut buf, &d, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 + 3);
    }

    fn series_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=50).prop_flat_map(|n| {
            (
                prop::collection::vec((0i32..8).prop_map(f64::from), n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_rank_oracle((x, y) in series_pair()) {
            let oracle_rx = oracle_ranks(&x);
            let oracle_ry = oracle_ranks(&y);
            prop_assert_eq!(&average_ranks(&x), &oracle_rx);
            match spearman_values(&x, &y) {
                Ok(rho) => {
                    let expected = oracle_pearson(&oracle_rx, &oracle_ry);
                    prop_assert!((rho - expected).abs() < 1e-12, "{} vs {}", rho, expected);
                    prop_assert!(rho.abs() <= 1.0);
                    prop_assert!((spearman_values(&y, &x).unwrap() - rho).abs() < 1e-12);
                    let transformed: Vec<f64> = x.iter().map(|v| (v * 0.5).exp() - 3.0).collect();
                    prop_assert!((spearman_values(&transformed, &y).unwrap() - rho).abs() < 1e-12);
                }
                Err(TrendsError::ZeroVariance(_)) => {
                    prop_assert!(x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]));
                }
                Err(e) => prop_assert!(false, "unexpected {}", e),
            }
        }

        #[test]
        fn daily_totals_conserved(items in prop::collection::vec((0u32..5, 0u32..24, 0usize..3), 0..200)) {
            let tweets: Vec<(Tweet, LabelCoarse)> = items
                .iter()
                .enumerate()
                .map(|(i, &(d, h, l))| (tw(&i.to_string(), h, 0, d + 1), LabelCoarse::ALL[l]))
                .collect();
            let s = daily_counts(tweets.iter().map(|(t, l)| (t, *l)));
            let totals = s.totals();
            for l in LabelCoarse::ALL {
                prop_assert_eq!(totals.get(l), tweets.iter().filter(|(_, x)| *x == l).count() as u64);
            }
            let ratios = sa_ratio(&s);
            for (d, c) in &s.days {
                if let Some(r) = ratios[d] {
                    prop_assert_eq!(r > 1.0, c.s > c.a);
                }
            }
        }
    }
}
