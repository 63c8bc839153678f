//! Regression and thresholded-classification metrics plus the analysis
//! tables: prediction comparison, error histogram, month-by-year heatmap
//! and per-feature correlation with popularity.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::{Feature, TrackRecord};
use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "{what} needs equal non-empty lengths (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(preds, targets, "mae")?;
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

/// Binary metrics with "popular" (value >= threshold) as the positive class.
/// Ratios with a zero denominator are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: f64,
    /// Share of actual positives; surfaces class imbalance.
    pub positive_rate: f64,
}

impl ThresholdMetrics {
    pub fn from_confusion(threshold: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        let total = tp + fp + tn + fn_;
        Self {
            threshold,
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
            accuracy: (tp + tn) as f64 / total as f64,
            positive_rate: (tp + fn_) as f64 / total as f64,
        }
    }
}

pub fn threshold_metrics(preds: &[f64], targets: &[f64], threshold: f64) -> Result<ThresholdMetrics> {
    check_pair(preds, targets, "threshold metrics")?;
    if !(threshold > 0.0 && threshold < 100.0) {
        return Err(Error::InvalidInput(format!("threshold {threshold} outside (0, 100)")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in preds.iter().zip(targets) {
        match (t >= threshold, p >= threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    Ok(ThresholdMetrics::from_confusion(threshold, tp, fp, tn, fn_))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "pearson needs two equal-length series of at least 2 values (got {} and {})",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("one of the series is constant".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable {
    /// `(feature, r)` sorted ascending by r.
    pub rows: Vec<(String, f64)>,
    /// Constant features for which r is undefined.
    pub skipped: Vec<String>,
}

impl CorrelationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature,pearson_r\n");
        for (name, r) in &self.rows {
            let _ = writeln!(s, "{name},{r:?}");
        }
        for name in &self.skipped {
            let _ = writeln!(s, "{name},NA");
        }
        s
    }
}

pub fn correlation_report(records: &[TrackRecord], features: &[Feature]) -> Result<CorrelationTable> {
    if records.len() < 2 {
        return Err(Error::InvalidInput("correlation needs at least 2 records".into()));
    }
    let pop: Vec<f64> = records.iter().map(|r| r.popularity).collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &f in features {
        let xs: Vec<f64> = records.iter().map(|r| r.feature(f)).collect();
        match pearson(&xs, &pop) {
            Ok(r) => rows.push((f.name().to_string(), r)),
            Err(Error::UndefinedCorrelation(_)) => skipped.push(f.name().to_string()),
            Err(e) => return Err(e),
        }
    }
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(CorrelationTable { rows, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean_error: f64,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start,bin_end,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{:?},{:?},{c}", self.edges[i], self.edges[i + 1]);
        }
        s
    }
}

/// Histogram of signed errors `pred - actual` over equal-width bins spanning
/// their range; the last bin is closed on the right. A zero range is widened
/// to one unit centred on the value.
pub fn error_histogram(preds: &[f64], targets: &[f64], bins: usize) -> Result<Histogram> {
    check_pair(preds, targets, "error histogram")?;
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    let errors: Vec<f64> = preds.iter().zip(targets).map(|(p, t)| p - t).collect();
    let mut lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for e in &errors {
        let idx = (((e - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapGrid {
    pub years: Vec<i32>,
    /// `means[row][month - 1]`; `None` where no track was released.
    pub means: Vec<[Option<f64>; 12]>,
    pub counts: Vec<[usize; 12]>,
}

impl HeatmapGrid {
    pub fn cell(&self, year: i32, month: u32) -> Option<(f64, usize)> {
        let row = self.years.iter().position(|&y| y == year)?;
        let m = usize::try_from(month).ok()?.checked_sub(1)?;
        self.means[row].get(m).copied().flatten().map(|v| (v, self.counts[row][m]))
    }

    /// Long form: one line per present cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("year,month,mean_popularity,count\n");
        for (row, &year) in self.years.iter().enumerate() {
            for m in 0..12 {
                if let Some(mean) = self.means[row][m] {
                    let _ = writeln!(s, "{year},{},{mean:?},{}", m + 1, self.counts[row][m]);
                }
            }
        }
        s
    }
}

pub fn monthly_popularity_heatmap(records: &[TrackRecord]) -> Result<HeatmapGrid> {
    let mut acc: BTreeMap<i32, [(f64, usize); 12]> = BTreeMap::new();
    for r in records {
        if !(1..=12).contains(&r.release_month) {
            return Err(Error::InvalidInput(format!(
                "track {} has release month {}",
                r.track_id, r.release_month
            )));
        }
        let row = acc.entry(r.release_year).or_insert([(0.0, 0); 12]);
        let cell = &mut row[r.release_month as usize - 1];
        cell.0 += r.popularity;
        cell.1 += 1;
    }
    let mut grid = HeatmapGrid {
        years: Vec::new(),
        means: Vec::new(),
        counts: Vec::new(),
    };
    for (year, row) in acc {
        grid.years.push(year);
        grid.means.push(row.map(|(sum, n)| (n > 0).then(|| sum / n as f64)));
        grid.counts.push(row.map(|(_, n)| n));
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub track_id: String,
    pub actual: f64,
    pub predicted: f64,
    pub abs_error: f64,
}

/// Rows sorted by actual popularity, highest first; ties keep input order.
pub fn prediction_comparison(records: &[TrackRecord], preds: &[f64]) -> Result<Vec<ComparisonRow>> {
    if records.len() != preds.len() {
        return Err(Error::InvalidInput(format!(
            "{} records but {} predictions",
            records.len(),
            preds.len()
        )));
    }
    let mut rows: Vec<ComparisonRow> = records
        .iter()
        .zip(preds)
        .map(|(r, &p)| ComparisonRow {
            track_id: r.track_id.clone(),
            actual: r.popularity,
            predicted: p,
            abs_error: (p - r.popularity).abs(),
        })
        .collect();
    rows.sort_by(|a, b| b.actual.total_cmp(&a.actual));
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("track_id,actual,predicted,abs_error\n");
    for r in rows {
        let _ = writeln!(s, "{},{:?},{:?},{:?}", r.track_id, r.actual, r.predicted, r.abs_error);
    }
    s
}

/// Everything the evaluate step reports for one model on one record set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub mae: f64,
    pub pearson: Option<f64>,
    pub classification: ThresholdMetrics,
    pub rows: Vec<ComparisonRow>,
}

/// `preds` are raw model outputs in popularity points; the comparison rows
/// keep them unclamped.
pub fn evaluate_predictions(records: &[TrackRecord], preds: &[f64], threshold: f64) -> Result<EvaluationReport> {
    let actual: Vec<f64> = records.iter().map(|r| r.popularity).collect();
    Ok(EvaluationReport {
        n: records.len(),
        mae: mae(preds, &actual)?,
        pearson: pearson(preds, &actual).ok(),
        classification: threshold_metrics(preds, &actual, threshold)?,
        rows: prediction_comparison(records, preds)?,
    })
}
