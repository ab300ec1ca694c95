//! Direction accuracy, within-tolerance directional accuracy, test MSE,
//! cumulative trend series and the cross-model comparison table.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::{direction, TargetMode};
use crate::training::mse_loss;

/// Tolerances, in percentage points, reported for regression models.
pub const TOLERANCES: [f64; 2] = [2.0, 5.0];

pub const NOT_APPLICABLE: &str = "N/A";

fn check_pair(preds: &[f64], actuals: &[f64]) -> Result<()> {
    if preds.len() != actuals.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} actuals",
            preds.len(),
            actuals.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    Ok(())
}

/// Fraction of pairs whose signs agree, zero counted as positive.
pub fn direction_accuracy(preds: &[f64], actuals: &[f64]) -> Result<f64> {
    check_pair(preds, actuals)?;
    let hits = preds
        .iter()
        .zip(actuals)
        .filter(|(p, a)| direction(**p) == direction(**a))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Fraction of pairs in the right direction whose absolute error is at most
/// `tolerance` percentage points. Undefined for symbolic models.
pub fn within_tolerance_directional(
    preds: &[f64],
    actuals: &[f64],
    tolerance: f64,
    mode: TargetMode,
) -> Result<f64> {
    if mode == TargetMode::Symbolic {
        return Err(Error::InvalidArgument(
            "within-tolerance accuracy needs a model trained on percent changes, not signs".into(),
        ));
    }
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tolerance}")));
    }
    check_pair(preds, actuals)?;
    let hits = preds
        .iter()
        .zip(actuals)
        .filter(|(p, a)| direction(**p) == direction(**a) && (*p - *a).abs() <= tolerance)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn test_mse(preds: &[f64], actuals: &[f64]) -> Result<f64> {
    mse_loss(preds, actuals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePrediction {
    pub record_ref: usize,
    pub prediction: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Modality version (`v1`..`v6`) or `lstm`.
    pub version: String,
    pub arch: String,
    pub target_mode: TargetMode,
    pub direction_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_2pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_5pct: Option<f64>,
    pub test_mse: f64,
    pub n_test: usize,
    pub per_example: Vec<ExamplePrediction>,
}

impl MetricsReport {
    /// Scores predictions; `actual` must be on the scale the model was trained on.
    pub fn build(
        version: impl Into<String>,
        arch: impl Into<String>,
        target_mode: TargetMode,
        per_example: Vec<ExamplePrediction>,
    ) -> Result<Self> {
        let preds: Vec<f64> = per_example.iter().map(|e| e.prediction).collect();
        let actuals: Vec<f64> = per_example.iter().map(|e| e.actual).collect();
        let within = |tol| -> Result<Option<f64>> {
            match target_mode {
                TargetMode::Regression => {
                    within_tolerance_directional(&preds, &actuals, tol, target_mode).map(Some)
                }
                TargetMode::Symbolic => Ok(None),
            }
        };
        Ok(MetricsReport {
            version: version.into(),
            arch: arch.into(),
            target_mode,
            direction_accuracy: direction_accuracy(&preds, &actuals)?,
            within_2pct: within(TOLERANCES[0])?,
            within_5pct: within(TOLERANCES[1])?,
            test_mse: test_mse(&preds, &actuals)?,
            n_test: per_example.len(),
            per_example,
        })
    }

    /// Pretty JSON with a trailing newline; byte-identical for equal reports.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: MetricsReport = serde_json::from_str(text)?;
        r.check()?;
        Ok(r)
    }

    fn check(&self) -> Result<()> {
        let ratio = |v: f64| (0.0..=1.0).contains(&v);
        let within_ok = match self.target_mode {
            TargetMode::Regression => matches!(
                (self.within_2pct, self.within_5pct),
                (Some(a), Some(b)) if ratio(a) && ratio(b)
            ),
            TargetMode::Symbolic => self.within_2pct.is_none() && self.within_5pct.is_none(),
        };
        if !ratio(self.direction_accuracy) || !within_ok || self.n_test != self.per_example.len() {
            return Err(Error::format("report", "metrics violate report invariants"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendPoint {
    pub date: NaiveDate,
    pub record_ref: usize,
    pub predicted: f64,
    pub actual: f64,
}

/// Running sums of predicted and actual values in date order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendSeries {
    pub dates: Vec<NaiveDate>,
    pub cum_predicted: Vec<f64>,
    pub cum_actual: Vec<f64>,
    /// Correlation of the two cumulative curves; absent below two points or
    /// when either curve is constant.
    pub pearson_r: Option<f64>,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Sorts by date (ties by record), then accumulates.
pub fn trend_report(points: &[TrendPoint]) -> TrendSeries {
    let mut sorted: Vec<&TrendPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.date.cmp(&b.date).then(a.record_ref.cmp(&b.record_ref)));
    let mut dates = Vec::with_capacity(sorted.len());
    let mut cum_predicted = Vec::with_capacity(sorted.len());
    let mut cum_actual = Vec::with_capacity(sorted.len());
    let (mut p, mut a) = (0.0, 0.0);
    for pt in sorted {
        p += pt.predicted;
        a += pt.actual;
        dates.push(pt.date);
        cum_predicted.push(p);
        cum_actual.push(a);
    }
    let pearson_r = pearson(&cum_predicted, &cum_actual);
    TrendSeries {
        dates,
        cum_predicted,
        cum_actual,
        pearson_r,
    }
}

/// One line of the comparison table; `per_example` is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub version: String,
    pub arch: String,
    pub target_mode: TargetMode,
    pub direction_accuracy: f64,
    pub within_2pct: Option<f64>,
    pub within_5pct: Option<f64>,
    pub test_mse: f64,
    pub n_test: usize,
}

impl From<&MetricsReport> for ComparisonRow {
    fn from(r: &MetricsReport) -> Self {
        ComparisonRow {
            version: r.version.clone(),
            arch: r.arch.clone(),
            target_mode: r.target_mode,
            direction_accuracy: r.direction_accuracy,
            within_2pct: r.within_2pct,
            within_5pct: r.within_5pct,
            test_mse: r.test_mse,
            n_test: r.n_test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub const TABLE_COLUMNS: [&str; 8] = [
    "version",
    "arch",
    "target_mode",
    "direction_accuracy",
    "within_2pct",
    "within_5pct",
    "test_mse",
    "n_test",
];

/// Aligns reports into one table, rows in input order.
pub fn compare_models(reports: &[MetricsReport]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "comparison needs at least two reports, got {}",
            reports.len()
        )));
    }
    Ok(ComparisonTable {
        rows: reports.iter().map(ComparisonRow::from).collect(),
    })
}

fn mode_str(m: TargetMode) -> &'static str {
    match m {
        TargetMode::Regression => "regression",
        TargetMode::Symbolic => "symbolic",
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| NOT_APPLICABLE.to_string(), |x| x.to_string())
}

impl ComparisonTable {
    pub fn single(report: &MetricsReport) -> Self {
        ComparisonTable {
            rows: vec![report.into()],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(TABLE_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.version.clone(),
                r.arch.clone(),
                mode_str(r.target_mode).to_string(),
                r.direction_accuracy.to_string(),
                opt_cell(r.within_2pct),
                opt_cell(r.within_5pct),
                r.test_mse.to_string(),
                r.n_test.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| Error::format("comparison csv", e.to_string()))?;
        if header.iter().ne(TABLE_COLUMNS.iter().copied()) {
            return Err(Error::format("comparison csv", "unexpected header"));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let bad = |m: &str| Error::format("comparison csv", format!("row {}: {m}", i + 1));
            let rec = rec.map_err(|e| bad(&e.to_string()))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
            let opt = |s: &str| {
                if s == NOT_APPLICABLE {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            let target_mode = match &rec[2] {
                "regression" => TargetMode::Regression,
                "symbolic" => TargetMode::Symbolic,
                other => return Err(bad(&format!("unknown target mode `{other}`"))),
            };
            rows.push(ComparisonRow {
                version: rec[0].to_string(),
                arch: rec[1].to_string(),
                target_mode,
                direction_accuracy: num(&rec[3])?,
                within_2pct: opt(&rec[4])?,
                within_5pct: opt(&rec[5])?,
                test_mse: num(&rec[6])?,
                n_test: rec[7].parse().map_err(|_| bad("n_test is not a count"))?,
            });
        }
        Ok(ComparisonTable { rows })
    }
}

impl TrendSeries {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,cum_predicted,cum_actual\n");
        for ((d, p), a) in self.dates.iter().zip(&self.cum_predicted).zip(&self.cum_actual) {
            let _ = writeln!(out, "{},{},{}", d.format("%Y-%m-%d"), p, a);
        }
        out
    }

    /// SVG 1.1 line chart of both cumulative curves with a legend.
    pub fn to_svg(&self, title: &str) -> String {
        const W: f64 = 640.0;
        const H: f64 = 360.0;
        const LEFT: f64 = 60.0;
        const RIGHT: f64 = 20.0;
        const TOP: f64 = 40.0;
        const BOTTOM: f64 = 40.0;
        let all = self.cum_predicted.iter().chain(&self.cum_actual).copied();
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        let (lo, hi) = if lo.is_finite() && hi > lo {
            (lo, hi)
        } else if lo.is_finite() {
            (lo - 1.0, lo + 1.0)
        } else {
            (-1.0, 1.0)
        };
        let n = self.dates.len();
        let x = |i: usize| {
            if n <= 1 {
                LEFT + (W - LEFT - RIGHT) / 2.0
            } else {
                LEFT + (W - LEFT - RIGHT) * i as f64 / (n - 1) as f64
            }
        };
        let y = |v: f64| TOP + (H - TOP - BOTTOM) * (hi - v) / (hi - lo);
        let points = |series: &[f64]| {
            series
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let esc = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
            W / 2.0,
            esc(title)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            H - BOTTOM,
            W - RIGHT,
            H - BOTTOM
        );
        let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, H - BOTTOM);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{:.2}</text>"#,
            LEFT - 4.0,
            y(hi) + 4.0,
            hi
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{:.2}</text>"#,
            LEFT - 4.0,
            y(lo) + 4.0,
            lo
        );
        if let (Some(first), Some(last)) = (self.dates.first(), self.dates.last()) {
            let _ = writeln!(
                s,
                r#"<text x="{LEFT}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
                H - BOTTOM + 16.0,
                first.format("%Y-%m-%d")
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
                W - RIGHT,
                H - BOTTOM + 16.0,
                last.format("%Y-%m-%d")
            );
        }
        let _ = writeln!(
            s,
            r##"<polyline id="actual" fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
            points(&self.cum_actual)
        );
        let _ = writeln!(
            s,
            r##"<polyline id="predicted" fill="none" stroke="#d62728" stroke-width="2" points="{}"/>"##,
            points(&self.cum_predicted)
        );
        let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{TOP}" x2="{}" y2="{TOP}" stroke="#1f77b4" stroke-width="2"/>"##,
            LEFT + 10.0,
            LEFT + 30.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">cumulative actual</text>"#, LEFT + 36.0, TOP + 4.0);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#d62728" stroke-width="2"/>"##,
            LEFT + 10.0,
            TOP + 16.0,
            LEFT + 30.0,
            TOP + 16.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">cumulative predicted</text>"#, LEFT + 36.0, TOP + 20.0);
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, "</svg>");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(preds: &[f64], actuals: &[f64]) -> Vec<ExamplePrediction> {
        preds
            .iter()
            .zip(actuals)
            .enumerate()
            .map(|(i, (&p, &a))| ExamplePrediction {
                record_ref: i,
                prediction: p,
                actual: a,
            })
            .collect()
    }

    #[test]
    fn direction_examples() {
        let acc = direction_accuracy(&[1.2, -0.5, 3.0], &[0.4, 0.2, 5.0]).unwrap();
        assert_eq!(acc, 2.0 / 3.0);
        let xs = [0.3, -1.0, 2.0, -0.1];
        assert_eq!(direction_accuracy(&xs, &xs).unwrap(), 1.0);
        let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
        assert_eq!(direction_accuracy(&neg, &xs).unwrap(), 0.0);
        assert_eq!(direction_accuracy(&[0.0], &[0.5]).unwrap(), 1.0);
        assert!(direction_accuracy(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn within_examples() {
        let r = TargetMode::Regression;
        assert_eq!(within_tolerance_directional(&[1.5], &[1.0], 2.0, r).unwrap(), 1.0);
        assert_eq!(within_tolerance_directional(&[-1.0], &[1.0], 5.0, r).unwrap(), 0.0);
        let xs = [0.3, -4.0, 7.0];
        for tol in TOLERANCES {
            assert_eq!(within_tolerance_directional(&xs, &xs, tol, r).unwrap(), 1.0);
        }
        assert!(within_tolerance_directional(&xs, &xs, 2.0, TargetMode::Symbolic).is_err());
    }

    #[test]
    fn mse_shift_identity() {
        let preds = [0.5, -1.25, 3.0, 2.0];
        let actuals = [1.0, -1.0, 2.5, -0.5];
        let c = 0.75;
        let shifted: Vec<f64> = preds.iter().map(|p| p + c).collect();
        let mean_resid = preds.iter().zip(&actuals).map(|(p, a)| p - a).sum::<f64>() / 4.0;
        let lhs = test_mse(&shifted, &actuals).unwrap();
        let rhs = test_mse(&preds, &actuals).unwrap() + c * c + 2.0 * c * mean_resid;
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(test_mse(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
    }

    #[test]
    fn trend_examples() {
        let d = |k| NaiveDate::from_ymd_opt(2023, 1, k).unwrap();
        let actuals = [1.0, -1.0, 2.0, 0.0];
        let pts: Vec<TrendPoint> = actuals
            .iter()
            .enumerate()
            .map(|(i, &a)| TrendPoint {
                date: d(i as u32 + 1),
                record_ref: i,
                predicted: a,
                actual: a,
            })
            .collect();
        let t = trend_report(&pts);
        assert_eq!(t.cum_actual, [1.0, 0.0, 2.0, 2.0]);
        assert_eq!(t.pearson_r, Some(1.0));

        let neg: Vec<TrendPoint> = pts
            .iter()
            .map(|p| TrendPoint {
                predicted: -p.actual,
                ..p.clone()
            })
            .collect();
        assert!((trend_report(&neg).pearson_r.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(trend_report(&pts[..1]).pearson_r, None);
    }

    #[test]
    fn trend_sorts_by_date_then_record() {
        let d = |k| NaiveDate::from_ymd_opt(2023, 1, k).unwrap();
        let pts = vec![
            TrendPoint { date: d(3), record_ref: 0, predicted: 1.0, actual: 1.0 },
            TrendPoint { date: d(1), record_ref: 5, predicted: 2.0, actual: 2.0 },
            TrendPoint { date: d(1), record_ref: 2, predicted: 4.0, actual: 4.0 },
        ];
        assert_eq!(trend_report(&pts).cum_actual, [4.0, 6.0, 7.0]);
    }

    #[test]
    fn symbolic_reports_omit_within() {
        let r = MetricsReport::build("v5", "bert", TargetMode::Symbolic, ex(&[0.4, -0.2], &[1.0, 1.0])).unwrap();
        assert_eq!(r.within_2pct, None);
        let json = r.to_json().unwrap();
        assert!(!json.contains("within_2pct") && !json.contains("within_5pct"));
        assert_eq!(MetricsReport::from_json(&json).unwrap(), r);
    }

    #[test]
    fn table_rows_and_csv_round_trip() {
        let a = MetricsReport::build("v1", "bert", TargetMode::Regression, ex(&[0.4, -0.2], &[1.0, 0.3])).unwrap();
        let b = MetricsReport::build("v5", "bert", TargetMode::Symbolic, ex(&[0.4, -0.2], &[1.0, 1.0])).unwrap();
        assert!(compare_models(std::slice::from_ref(&a)).is_err());
        let same = compare_models(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.rows[0], same.rows[1]);
        let t = compare_models(&[a, b]).unwrap();
        let csv = t.to_csv();
        assert!(csv.lines().nth(2).unwrap().contains("N/A,N/A"));
        assert_eq!(ComparisonTable::from_csv(&csv).unwrap(), t);
    }

    #[test]
    fn svg_has_two_series() {
        let d = |k| NaiveDate::from_ymd_opt(2023, 1, k).unwrap();
        let pts: Vec<TrendPoint> = [1.0, -1.0, 2.0, 0.0]
            .iter()
            .enumerate()
            .map(|(i, &a)| TrendPoint { date: d(i as u32 + 1), record_ref: i, predicted: a * 0.5, actual: a })
            .collect();
        let svg = trend_report(&pts).to_svg("trend <v2>");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("trend &lt;v2&gt;"));
        assert_eq!(svg, trend_report(&pts).to_svg("trend <v2>"));
    }
}
