//! Headline/price records, CSV ingestion, train/test splitting and the
//! synthetic generators used as test oracles.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const CSV_HEADER: [&str; 8] = [
    "date",
    "ticker",
    "company",
    "headline",
    "source",
    "open",
    "close",
    "pct_change",
];

/// Largest tolerated gap between a stored and a recomputed percent change.
pub const PCT_TOLERANCE: f64 = 1e-6;

/// Signed percent change from `open` to `close`, on the ×100 scale.
pub fn compute_pct_change(open: f64, close: f64) -> Result<f64> {
    if !(open.is_finite() && open > 0.0) {
        return Err(Error::Domain(format!("open price must be positive, got {open}")));
    }
    if !(close.is_finite() && close > 0.0) {
        return Err(Error::Domain(format!("close price must be positive, got {close}")));
    }
    Ok((close - open) / open * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsRecord {
    pub date: NaiveDate,
    pub ticker: String,
    pub company: String,
    pub headline: String,
    pub source: String,
    pub open_price: f64,
    pub close_price: f64,
    pub pct_change: f64,
}

impl NewsRecord {
    /// Builds a record, deriving `pct_change` from the prices.
    pub fn new(
        date: NaiveDate,
        ticker: impl Into<String>,
        company: impl Into<String>,
        headline: impl Into<String>,
        source: impl Into<String>,
        open_price: f64,
        close_price: f64,
    ) -> Result<Self> {
        let headline = headline.into();
        if headline.trim().is_empty() {
            return Err(Error::Domain("headline is empty".into()));
        }
        let pct_change = compute_pct_change(open_price, close_price)?;
        Ok(NewsRecord {
            date,
            ticker: ticker.into(),
            company: company.into(),
            headline,
            source: source.into(),
            open_price,
            close_price,
            pct_change,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<NewsRecord>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(records: Vec<NewsRecord>, provenance: Provenance) -> Self {
        Dataset {
            records,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    // chrono accepts unpadded fields; the fixed width rules those out.
    if s.len() != 10 {
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

fn row_err(row: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Row {
        row,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_price(row: usize, field: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| row_err(row, field, format!("`{raw}` is not a decimal number")))?;
    if !v.is_finite() || v <= 0.0 {
        return Err(row_err(row, field, format!("price must be positive, got {raw}")));
    }
    Ok(v)
}

fn parse_row(row: usize, rec: &csv::StringRecord) -> Result<NewsRecord> {
    if rec.len() != CSV_HEADER.len() {
        return Err(row_err(
            row,
            "*",
            format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
        ));
    }
    let date = parse_date(&rec[0])
        .ok_or_else(|| row_err(row, "date", format!("`{}` is not a YYYY-MM-DD date", &rec[0])))?;
    if rec[3].trim().is_empty() {
        return Err(row_err(row, "headline", "headline is empty"));
    }
    let open = parse_price(row, "open", &rec[5])?;
    let close = parse_price(row, "close", &rec[6])?;
    let stored: f64 = rec[7]
        .trim()
        .parse()
        .map_err(|_| row_err(row, "pct_change", format!("`{}` is not a decimal number", &rec[7])))?;
    if !stored.is_finite() {
        return Err(row_err(row, "pct_change", "not finite"));
    }
    let record = NewsRecord::new(date, &rec[1], &rec[2], &rec[3], &rec[4], open, close)
        .map_err(|e| row_err(row, "open", e.to_string()))?;
    if (record.pct_change - stored).abs() > PCT_TOLERANCE {
        return Err(row_err(
            row,
            "pct_change",
            format!(
                "stored {stored} disagrees with recomputed {}",
                record.pct_change
            ),
        ));
    }
    Ok(record)
}

fn check_header(rdr: &mut csv::Reader<impl Read>) -> Result<()> {
    let header = rdr
        .headers()
        .map_err(|e| Error::format("dataset header", e.to_string()))?;
    let got: Vec<&str> = header.iter().map(|h| h.trim_start_matches('\u{feff}')).collect();
    if got != CSV_HEADER {
        return Err(Error::format(
            "dataset header",
            format!("expected `{}`, found `{}`", CSV_HEADER.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader)
}

/// Reads a dataset CSV, stopping at the first bad row.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr)?;
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| row_err(row, "*", e.to_string()))?;
        records.push(parse_row(row, &rec)?);
    }
    Ok(Dataset::new(records, Provenance::Real))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(File::open(path)?)
}

/// Every violation found in a dataset file, rather than only the first.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub rows_checked: usize,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_dataset<R: Read>(reader: R) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut rdr = csv_reader(reader);
    if let Err(e) = check_header(&mut rdr) {
        report.violations.push(e.to_string());
        return report;
    }
    for (i, rec) in rdr.records().enumerate() {
        report.rows_checked += 1;
        let result = rec
            .map_err(|e| row_err(i + 1, "*", e.to_string()))
            .and_then(|rec| parse_row(i + 1, &rec));
        if let Err(e) = result {
            report.violations.push(e.to_string());
        }
    }
    report
}

pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in &dataset.records {
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            r.ticker.clone(),
            r.company.clone(),
            r.headline.clone(),
            r.source.clone(),
            r.open_price.to_string(),
            r.close_price.to_string(),
            r.pct_change.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    /// Test-set size for `n` records: `test_fraction · n` rounded half up.
    pub fn test_size(&self, n: usize) -> usize {
        (self.test_fraction * n as f64 + 0.5).floor() as usize
    }
}

/// Random train/test partition. Both halves keep the dataset's original order.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset".into()));
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {} outside (0, 1)",
            spec.test_fraction
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(spec.seed, "split").shuffle(&mut order);
    let mut is_test = vec![false; n];
    for &i in &order[..spec.test_size(n)] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (rec, t) in dataset.records.iter().zip(is_test) {
        if t {
            test.push(rec.clone());
        } else {
            train.push(rec.clone());
        }
    }
    Ok((
        Dataset::new(train, dataset.provenance),
        Dataset::new(test, dataset.provenance),
    ))
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Picks an (open, close) pair on a cent/micro-dollar grid whose recomputed
/// percent change reproduces `pct` exactly when such a pair is found nearby.
fn back_solve_prices(rng: &mut Rng, pct: f64) -> (f64, f64) {
    let base_cents = 2_000 + rng.below(48_000);
    let mut fallback = None;
    for step in 0..4096 {
        let open = (base_cents + step) as f64 / 100.0;
        let close = round6(open * (1.0 + pct / 100.0));
        if close <= 0.0 {
            continue;
        }
        if compute_pct_change(open, close).ok() == Some(pct) {
            return (open, close);
        }
        fallback.get_or_insert((open, close));
    }
    fallback.unwrap_or((100.0, round6(100.0 + pct)))
}

fn default_neutral() -> Vec<String> {
    ["shares", "stock", "today", "report", "market", "update", "investors", "quarter"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Parameters of the lexicon-driven synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_records: usize,
    pub positive_lexicon: Vec<String>,
    pub negative_lexicon: Vec<String>,
    /// Filler words mixed into every headline; carry no signal.
    pub neutral_lexicon: Vec<String>,
    pub signal_mean: f64,
    pub noise_stddev: f64,
    pub n_tickers: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let words = |w: &[&str]| w.iter().map(|s| s.to_string()).collect();
        SynthConfig {
            n_records: 2000,
            positive_lexicon: words(&[
                "beats", "surges", "record", "upgrade", "growth", "soars", "profit", "rally",
            ]),
            negative_lexicon: words(&[
                "misses", "plunges", "lawsuit", "downgrade", "losses", "slumps", "recall", "probe",
            ]),
            neutral_lexicon: default_neutral(),
            signal_mean: 2.0,
            noise_stddev: 1.0,
            n_tickers: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.positive_lexicon.is_empty() || self.negative_lexicon.is_empty() {
            return bad("lexicons must be non-empty");
        }
        let lists = [
            &self.positive_lexicon,
            &self.negative_lexicon,
            &self.neutral_lexicon,
        ];
        for (i, a) in lists.iter().enumerate() {
            if a.iter().any(|w| w.trim().is_empty() || w.contains(char::is_whitespace)) {
                return bad("lexicon entries must be single non-empty words");
            }
            for b in &lists[i + 1..] {
                if a.iter().any(|w| b.iter().any(|v| v.eq_ignore_ascii_case(w))) {
                    return bad("lexicons must be disjoint");
                }
            }
        }
        if !(self.noise_stddev.is_finite() && self.noise_stddev >= 0.0) {
            return bad("noise_stddev must be finite and non-negative");
        }
        if !(self.signal_mean.is_finite() && self.signal_mean.abs() < 50.0) {
            return bad("signal_mean must be finite and below 50 in magnitude");
        }
        if self.n_tickers == 0 {
            return bad("n_tickers must be at least 1");
        }
        Ok(())
    }
}

fn synth_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 3).expect("valid date")
}

const SOURCES: [&str; 4] = ["Newswire", "Market Daily", "Finance Post", "Street Journal"];

fn ticker_name(i: usize) -> (String, String) {
    let letters: String = [i / 26 % 26, i % 26]
        .iter()
        .map(|&k| (b'A' + k as u8) as char)
        .collect();
    (format!("SY{letters}"), format!("Synthetic {letters} Corp"))
}

/// Generates headlines whose words come from exactly one signed lexicon, with
/// `pct_change = ±signal_mean + N(0, noise_stddev²)` and the sign set by the lexicon.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = Rng::new(config.seed, "synth");
    let neutral = if config.neutral_lexicon.is_empty() {
        vec!["news".to_string()]
    } else {
        config.neutral_lexicon.clone()
    };
    let mut records = Vec::with_capacity(config.n_records);
    for i in 0..config.n_records {
        let positive = rng.uniform() < 0.5;
        let lexicon = if positive {
            &config.positive_lexicon
        } else {
            &config.negative_lexicon
        };
        let n_signal = 1 + rng.below(2);
        let mut words: Vec<&str> = (0..n_signal)
            .map(|_| lexicon[rng.below(lexicon.len())].as_str())
            .collect();
        for _ in 0..2 {
            words.push(neutral[rng.below(neutral.len())].as_str());
        }
        rng.shuffle(&mut words);
        let headline = words.join(" ");

        let sign = if positive { 1.0 } else { -1.0 };
        let pct = loop {
            let v = sign * config.signal_mean + config.noise_stddev * rng.normal();
            if v > -90.0 {
                break v;
            }
        };
        let (open, close) = back_solve_prices(&mut rng, pct);
        let (ticker, company) = ticker_name(i % config.n_tickers);
        let date = synth_start() + Duration::days((i / config.n_tickers) as i64);
        let source = SOURCES[rng.below(SOURCES.len())];
        records.push(NewsRecord::new(
            date, ticker, company, headline, source, open, close,
        )?);
    }
    Ok(Dataset::new(records, Provenance::Synthetic))
}

/// Per-ticker AR(1) percent-change series, `x_t = coefficient · x_{t-1} + N(0, noise²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Config {
    pub n_tickers: usize,
    pub length: usize,
    pub coefficient: f64,
    pub noise_stddev: f64,
    pub seed: u64,
}

impl Default for Ar1Config {
    fn default() -> Self {
        Ar1Config {
            n_tickers: 4,
            length: 500,
            coefficient: 0.8,
            noise_stddev: 0.1,
            seed: 0,
        }
    }
}

/// Records are emitted date-major (all tickers for day 0, then day 1, ...).
pub fn generate_ar1(config: &Ar1Config) -> Result<Dataset> {
    if config.coefficient.abs() >= 1.0 || config.noise_stddev.is_nan() || config.noise_stddev < 0.0 {
        return Err(Error::InvalidArgument(
            "AR(1) needs |coefficient| < 1 and noise_stddev >= 0".into(),
        ));
    }
    let mut rng = Rng::new(config.seed, "ar1");
    let mut state = vec![0.0; config.n_tickers];
    let mut records = Vec::with_capacity(config.n_tickers * config.length);
    for day in 0..config.length {
        for (t, x) in state.iter_mut().enumerate() {
            *x = config.coefficient * *x + config.noise_stddev * rng.normal();
            let (open, close) = back_solve_prices(&mut rng, *x);
            let (ticker, company) = ticker_name(t);
            records.push(NewsRecord::new(
                synth_start() + Duration::days(day as i64),
                ticker,
                company,
                "daily price observation",
                SOURCES[0],
                open,
                close,
            )?);
        }
    }
    Ok(Dataset::new(records, Provenance::Synthetic))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_of(rows: &[&str]) -> String {
        let mut s = CSV_HEADER.join(",");
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s.push('\n');
        s
    }

    #[test]
    fn pct_change_examples() {
        let v = compute_pct_change(6000.0, 5995.0).unwrap();
        assert!((v + 0.083_333_333_333).abs() < 1e-9);
        assert_eq!(compute_pct_change(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(compute_pct_change(50.0, 45.0).unwrap(), -10.0);
        assert!(matches!(compute_pct_change(0.0, 1.0), Err(Error::Domain(_))));
        assert!(compute_pct_change(-3.0, 1.0).is_err());
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let d = read_dataset(csv_of(&[]).as_bytes()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn zero_open_reports_row() {
        let text = csv_of(&[
            "2023-01-02,AAPL,Apple Inc.,Apple rises,Wire,100,101,1",
            "2023-01-03,AAPL,Apple Inc.,Apple flat,Wire,0,101,1",
        ]);
        match read_dataset(text.as_bytes()) {
            Err(Error::Row { row, field, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(field, "open");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn three_rows_in_file_order() {
        let text = csv_of(&[
            "2023-01-02,AAPL,Apple Inc.,\"Apple beats, again\",Wire,100,101,1",
            "2023-01-03,MSFT,Microsoft,Microsoft slips,Post,50,45,-10",
            "2023-01-04,TSLA,Tesla,Tesla flat,Wire,20,20,0",
        ]);
        let d = read_dataset(text.as_bytes()).unwrap();
        let tickers: Vec<&str> = d.records.iter().map(|r| r.ticker.as_str()).collect();
        assert_eq!(tickers, ["AAPL", "MSFT", "TSLA"]);
        assert_eq!(d.records[0].headline, "Apple beats, again");
        assert_eq!(d.records[1].pct_change, -10.0);
    }

    #[test]
    fn pct_mismatch_is_rejected() {
        let text = csv_of(&["2023-01-02,AAPL,Apple Inc.,Apple,Wire,100,101,1.01"]);
        match read_dataset(text.as_bytes()) {
            Err(Error::Row { field, .. }) => assert_eq!(field, "pct_change"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strict_dates() {
        assert!(parse_date("2023-01-15").is_some());
        assert!(parse_date("2023-1-15").is_none());
        assert!(parse_date("15/01/2023").is_none());
        assert!(parse_date("2023-02-30").is_none());
    }

    #[test]
    fn validation_collects_every_violation() {
        let text = csv_of(&[
            "2023-01-02,AAPL,Apple Inc.,Apple,Wire,0,101,1",
            "2023-01-02,AAPL,Apple Inc.,Apple,Wire,100,101,1",
            "bad-date,AAPL,Apple Inc.,Apple,Wire,100,101,1",
        ]);
        let report = validate_dataset(text.as_bytes());
        assert_eq!(report.rows_checked, 3);
        assert_eq!(report.violations.len(), 2);
    }

    #[test]
    fn split_sizes() {
        let d = generate_synthetic(&SynthConfig {
            n_records: 10,
            ..SynthConfig::default()
        })
        .unwrap();
        let (train, test) = split(&d, &SplitSpec::default()).unwrap();
        assert_eq!((train.len(), test.len()), (9, 1));
        assert_eq!(SplitSpec::default().test_size(8000), 800);
        assert_eq!(SplitSpec { test_fraction: 0.25, seed: 0 }.test_size(10), 3);
    }

    #[test]
    fn split_rejects_empty() {
        let d = Dataset::new(vec![], Provenance::Real);
        assert!(matches!(split(&d, &SplitSpec::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_noise_synthetic_is_exact() {
        let d = generate_synthetic(&SynthConfig {
            n_records: 500,
            noise_stddev: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        for r in &d.records {
            assert!(r.pct_change == 2.0 || r.pct_change == -2.0, "{}", r.pct_change);
            let recomputed = compute_pct_change(r.open_price, r.close_price).unwrap();
            assert_eq!(recomputed, r.pct_change);
        }
    }

    #[test]
    fn synth_rejects_overlapping_lexicons() {
        let mut c = SynthConfig::default();
        c.negative_lexicon.push("beats".into());
        assert!(generate_synthetic(&c).is_err());
    }
}
