//! Detection metrics with in-distribution as the positive class, run
//! aggregation and report emitters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::Method;

pub const DEFAULT_TPR_TARGET: f64 = 0.95;
pub const HISTOGRAM_BINS: usize = 100;

/// Scores of in-distribution and OOD examples for one (method, dataset) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScores {
    pub in_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl LabeledScores {
    pub fn new(in_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        let s = Self { in_scores, ood_scores };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.in_scores.is_empty() || self.ood_scores.is_empty() {
            return Err(Error::invalid("metrics need non-empty in-distribution and OOD scores"));
        }
        if !self.in_scores.iter().chain(&self.ood_scores).all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite score".into()));
        }
        Ok(())
    }

    /// Distinct score values, descending, with (in, ood) counts per value.
    fn tie_groups_desc(&self) -> Vec<(f64, u64, u64)> {
        let mut all: Vec<(f64, bool)> = self
            .in_scores
            .iter()
            .map(|&v| (v, true))
            .chain(self.ood_scores.iter().map(|&v| (v, false)))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut groups: Vec<(f64, u64, u64)> = Vec::new();
        for (v, is_in) in all {
            match groups.last_mut() {
                Some(g) if g.0 == v => {
                    if is_in {
                        g.1 += 1
                    } else {
                        g.2 += 1
                    }
                }
                _ => groups.push((v, is_in as u64, (!is_in) as u64)),
            }
        }
        groups
    }
}

/// Mann–Whitney AUROC, `P(S_in > S_ood) + ½·P(S_in = S_ood)`, from tie-grouped ranks.
pub fn auroc(ls: &LabeledScores) -> Result<f64> {
    ls.check()?;
    // Twice the U statistic, accumulated exactly.
    let mut u2: u128 = 0;
    let mut ood_below: u128 = ls.ood_scores.len() as u128;
    for (_, a, b) in ls.tie_groups_desc() {
        ood_below -= b as u128;
        u2 += 2 * a as u128 * ood_below + a as u128 * b as u128;
    }
    let pairs = ls.in_scores.len() as f64 * ls.ood_scores.len() as f64;
    Ok(u2 as f64 / (2.0 * pairs))
}

/// Average precision over descending thresholds, ties forming one step.
pub fn aupr(ls: &LabeledScores) -> Result<f64> {
    ls.check()?;
    let n_in = ls.in_scores.len() as f64;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for (_, a, b) in ls.tie_groups_desc() {
        tp += a;
        fp += b;
        if a > 0 {
            ap += (tp as f64 / (tp + fp) as f64) * (a as f64 / n_in);
        }
    }
    Ok(ap)
}

/// FPR at the largest threshold whose TPR reaches `target` (`≥` on both sides).
pub fn fpr_at_tpr(ls: &LabeledScores, target: f64) -> Result<f64> {
    ls.check()?;
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::invalid(format!("TPR target {target} outside (0, 1]")));
    }
    let tau = threshold_at_tpr(&ls.in_scores, target);
    let fp = ls.ood_scores.iter().filter(|&&s| s >= tau).count();
    Ok(fp as f64 / ls.ood_scores.len() as f64)
}

/// The `k`-th largest in-distribution score, `k` minimal with `k/n ≥ target`.
pub fn threshold_at_tpr(in_scores: &[f64], target: f64) -> f64 {
    let n = in_scores.len();
    let mut sorted = in_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = (1..=n).find(|&k| k as f64 / n as f64 >= target).unwrap_or(n);
    sorted[k - 1]
}

pub fn fpr95(ls: &LabeledScores) -> Result<f64> {
    fpr_at_tpr(ls, DEFAULT_TPR_TARGET)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "AUROC")]
    Auroc,
    #[serde(rename = "AUPR")]
    Aupr,
    #[serde(rename = "FPR95")]
    Fpr95,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Auroc, Metric::Aupr, Metric::Fpr95];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auroc => "AUROC",
            Metric::Aupr => "AUPR",
            Metric::Fpr95 => "FPR95",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Fpr95)
    }
}

/// Metrics of one (method, dataset, seed) cell, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: Method,
    pub dataset: String,
    pub seed: u64,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
}

impl EvalRecord {
    pub fn compute(method: Method, dataset: impl Into<String>, seed: u64, ls: &LabeledScores) -> Result<Self> {
        Ok(Self {
            method,
            dataset: dataset.into(),
            seed,
            auroc: auroc(ls)?,
            aupr: aupr(ls)?,
            fpr95: fpr95(ls)?,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Auroc => self.auroc,
            Metric::Aupr => self.aupr,
            Metric::Fpr95 => self.fpr95,
        }
    }
}

pub fn write_records(records: &[EvalRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(r: impl Read) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Mean and sample standard deviation (`n − 1`); σ is 0 for one value.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Cross-seed statistics of per-seed dataset means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

/// Cross-seed statistics of one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub method: Method,
    pub dataset: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

type Grid<'a> = BTreeMap<(Method, u64, &'a str), &'a EvalRecord>;
type Axes<'a> = (BTreeSet<Method>, BTreeSet<u64>, BTreeSet<&'a str>);

/// Indexes records by cell and checks that the (method × seed × dataset) grid is complete.
fn complete_grid(records: &[EvalRecord]) -> Result<(Grid<'_>, Axes<'_>)> {
    if records.is_empty() {
        return Err(Error::invalid("no evaluation records"));
    }
    let methods: BTreeSet<Method> = records.iter().map(|r| r.method).collect();
    let seeds: BTreeSet<u64> = records.iter().map(|r| r.seed).collect();
    let datasets: BTreeSet<&str> = records.iter().map(|r| r.dataset.as_str()).collect();
    let mut grid = BTreeMap::new();
    for r in records {
        if grid.insert((r.method, r.seed, r.dataset.as_str()), r).is_some() {
            return Err(Error::invalid(format!(
                "duplicate record for {} / {} / seed {}",
                r.method, r.dataset, r.seed
            )));
        }
    }
    let mut missing = Vec::new();
    for &m in &methods {
        for &s in &seeds {
            for &d in &datasets {
                if !grid.contains_key(&(m, s, d)) {
                    missing.push(format!("{m} / {d} / seed {s}"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "incomplete record grid, missing: {}",
            missing.join(", ")
        )));
    }
    Ok((grid, (methods, seeds, datasets)))
}

/// Per method and metric: mean over datasets per seed, then mean and σ over seeds.
pub fn summarize(records: &[EvalRecord]) -> Result<Vec<SummaryRow>> {
    let (grid, (methods, seeds, datasets)) = complete_grid(records)?;
    let mut rows = Vec::new();
    for &method in &methods {
        for metric in Metric::ALL {
            let per_seed: Vec<f64> = seeds
                .iter()
                .map(|&s| {
                    datasets.iter().map(|&d| grid[&(method, s, d)].get(metric)).sum::<f64>() / datasets.len() as f64
                })
                .collect();
            let (mean, std) = mean_and_std(&per_seed);
            rows.push(SummaryRow {
                method,
                metric,
                mean,
                std,
                seeds: seeds.len(),
            });
        }
    }
    Ok(rows)
}

/// Per method, dataset and metric: mean and σ over seeds.
pub fn per_dataset(records: &[EvalRecord]) -> Result<Vec<DatasetRow>> {
    let (grid, (methods, seeds, datasets)) = complete_grid(records)?;
    let mut rows = Vec::new();
    for &dataset in &datasets {
        for &method in &methods {
            for metric in Metric::ALL {
                let vals: Vec<f64> = seeds.iter().map(|&s| grid[&(method, s, dataset)].get(metric)).collect();
                let (mean, std) = mean_and_std(&vals);
                rows.push(DatasetRow {
                    method,
                    dataset: dataset.to_string(),
                    metric,
                    mean,
                    std,
                    seeds: seeds.len(),
                });
            }
        }
    }
    Ok(rows)
}

/// `"84.2 ±0.9"`: values ×100, one decimal.
pub fn format_pm(mean: f64, std: f64) -> String {
    format!("{:.1} ±{:.1}", mean * 100.0, std * 100.0)
}

/// Entries within the best entry's σ of the best mean.
pub fn bold_mask(cells: &[(f64, f64)], higher_is_better: bool) -> Vec<bool> {
    let best = cells.iter().copied().reduce(|a, b| {
        let better = if higher_is_better { b.0 > a.0 } else { b.0 < a.0 };
        if better {
            b
        } else {
            a
        }
    });
    match best {
        None => Vec::new(),
        Some((bm, bs)) => cells.iter().map(|&(m, _)| (m - bm).abs() <= bs).collect(),
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "metric", "mean", "std", "seeds", "formatted"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.metric.name().to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.seeds.to_string(),
            format_pm(r.mean, r.std),
        ])
        .map_err(csv_err)?;
    }
    into_string(w)
}

pub fn per_dataset_csv(rows: &[DatasetRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "dataset", "metric", "mean", "std", "seeds", "formatted"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.dataset.clone(),
            r.metric.name().to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.seeds.to_string(),
            format_pm(r.mean, r.std),
        ])
        .map_err(csv_err)?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// One Markdown row: label then one bold-marked cell per method.
fn markdown_row(out: &mut String, label: &str, cells: &[(f64, f64)], metric: Metric) {
    let bold = bold_mask(cells, metric.higher_is_better());
    let _ = write!(out, "| {label} |");
    for (&(m, s), b) in cells.iter().zip(bold) {
        let text = format_pm(m, s);
        if b {
            let _ = write!(out, " **{text}** |");
        } else {
            let _ = write!(out, " {text} |");
        }
    }
    out.push('\n');
}

fn markdown_header(out: &mut String, first: &str, methods: &[Method]) {
    let _ = write!(out, "| {first} |");
    for m in methods {
        let _ = write!(out, " {m} |");
    }
    out.push_str("\n|---|");
    for _ in methods {
        out.push_str("---|");
    }
    out.push('\n');
}

/// Summary table: one row per metric, one column per method.
pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let methods: Vec<Method> = rows
        .iter()
        .map(|r| r.method)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = String::new();
    markdown_header(&mut out, "Metric", &methods);
    for metric in Metric::ALL {
        let cells: Vec<(f64, f64)> = methods
            .iter()
            .filter_map(|&m| rows.iter().find(|r| r.method == m && r.metric == metric))
            .map(|r| (r.mean, r.std))
            .collect();
        if cells.len() == methods.len() {
            markdown_row(&mut out, metric.name(), &cells, metric);
        }
    }
    out
}

/// Per-dataset table: one row per (dataset, metric), one column per method.
pub fn per_dataset_markdown(rows: &[DatasetRow]) -> String {
    let methods: Vec<Method> = rows
        .iter()
        .map(|r| r.method)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let datasets: BTreeSet<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    let mut out = String::new();
    markdown_header(&mut out, "Dataset / metric", &methods);
    for d in datasets {
        for metric in Metric::ALL {
            let cells: Vec<(f64, f64)> = methods
                .iter()
                .filter_map(|&m| {
                    rows.iter()
                        .find(|r| r.method == m && r.metric == metric && r.dataset == d)
                })
                .map(|r| (r.mean, r.std))
                .collect();
            if cells.len() == methods.len() {
                markdown_row(&mut out, &format!("{d} {}", metric.name()), &cells, metric);
            }
        }
    }
    out
}

/// Area-normalized histograms of several score sets over a shared bin grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    /// `(label, density per bin)`.
    pub curves: Vec<(String, Vec<f64>)>,
}

impl Histogram {
    /// `bins` equal-width bins over the pooled range of all curves; the last bin
    /// is closed. A zero-width range is widened to one unit around the value.
    pub fn build(curves: &[(String, Vec<f64>)], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("histogram needs at least one bin"));
        }
        if curves.iter().any(|(_, v)| v.is_empty()) || curves.is_empty() {
            return Err(Error::invalid("histogram curves must be non-empty"));
        }
        let all = curves.iter().flat_map(|(_, v)| v.iter().copied());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in histogram".into()));
        }
        let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if hi <= lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let curves = curves
            .iter()
            .map(|(label, values)| {
                let mut counts = vec![0u64; bins];
                for &v in values {
                    let i = (((v - lo) / width) as usize).min(bins - 1);
                    counts[i] += 1;
                }
                let total = values.len() as f64;
                let density = counts
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| c as f64 / (total * (edges[i + 1] - edges[i])))
                    .collect();
                (label.clone(), density)
            })
            .collect();
        Ok(Self { edges, curves })
    }

    /// `Σ density·width` of curve `i`.
    pub fn area(&self, i: usize) -> f64 {
        self.curves[i]
            .1
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }

    /// Plot-ready CSV: `bin_start,bin_end,<curve>...`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["bin_start".to_string(), "bin_end".to_string()];
        header.extend(self.curves.iter().map(|c| c.0.clone()));
        w.write_record(&header).map_err(csv_err)?;
        for (i, e) in self.edges.windows(2).enumerate() {
            let mut row = vec![e[0].to_string(), e[1].to_string()];
            row.extend(self.curves.iter().map(|c| c.1[i].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        into_string(w)
    }

    /// Parses [`Histogram::to_csv`] output.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let labels: Vec<String> = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .skip(2)
            .map(String::from)
            .collect();
        let mut edges = Vec::new();
        let mut curves: Vec<(String, Vec<f64>)> = labels.into_iter().map(|l| (l, Vec::new())).collect();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Format("short histogram row".into()))?
                    .parse()
                    .map_err(|e| Error::Format(format!("histogram value: {e}")))
            };
            if edges.is_empty() {
                edges.push(num(0)?);
            }
            edges.push(num(1)?);
            for (j, c) in curves.iter_mut().enumerate() {
                c.1.push(num(2 + j)?);
            }
        }
        Ok(Self { edges, curves })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::BaseMethod;

    fn ls(a: &[f64], b: &[f64]) -> LabeledScores {
        LabeledScores::new(a.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&ls(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(auroc(&ls(&[0.5], &[0.5])).unwrap(), 0.5);
        assert_eq!(auroc(&ls(&[0.1], &[0.5, 0.5])).unwrap(), 0.0);
        assert_eq!(auroc(&ls(&[1.0, 0.0], &[0.5])).unwrap(), 0.5);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(LabeledScores::new(vec![], vec![1.0]).is_err());
        let bad = LabeledScores {
            in_scores: vec![1.0],
            ood_scores: vec![],
        };
        assert!(auroc(&bad).is_err());
        assert!(aupr(&bad).is_err());
        assert!(fpr95(&bad).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&ls(&[3.0, 4.0, 5.0], &[1.0])).unwrap(), 1.0);
        assert_eq!(aupr(&ls(&[2.0], &[1.0, 0.0, -1.0])).unwrap(), 1.0);
        let in_s = vec![0.3; 9];
        assert!((aupr(&ls(&in_s, &[0.3])).unwrap() - 0.9).abs() < 1e-15);
        // in, ood, in descending: AP = (1·½ + ⅔·½)
        assert!((aupr(&ls(&[3.0, 1.0], &[2.0])).unwrap() - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn fpr95_examples() {
        assert_eq!(fpr95(&ls(&[5.0, 6.0], &[1.0, 2.0])).unwrap(), 0.0);
        let in_s: Vec<f64> = (1..=20).map(f64::from).collect();
        let ood: Vec<f64> = (0..20).map(|i| 0.5 + i as f64).collect();
        assert_eq!(threshold_at_tpr(&in_s, 0.95), 2.0);
        assert!((fpr95(&ls(&in_s, &ood)).unwrap() - 0.9).abs() < 1e-15);
        let same: Vec<f64> = (0..100).map(f64::from).collect();
        assert!((fpr95(&ls(&same, &same)).unwrap() - 0.95).abs() < 1e-12);
        assert!(fpr_at_tpr(&ls(&[1.0], &[1.0]), 0.0).is_err());
    }

    fn rec(method: &str, dataset: &str, seed: u64, v: f64) -> EvalRecord {
        EvalRecord {
            method: method.parse().unwrap(),
            dataset: dataset.into(),
            seed,
            auroc: v,
            aupr: v,
            fpr95: 1.0 - v,
        }
    }

    #[test]
    fn summary_examples() {
        let one = summarize(&[rec("PEPR", "a", 1, 0.7)]).unwrap();
        assert_eq!(one[0].mean, 0.7);
        assert_eq!(one[0].std, 0.0);

        let recs = vec![
            rec("PEPR", "a", 1, 0.7),
            rec("PEPR", "b", 1, 0.9),
            rec("PEPR", "a", 2, 0.85),
            rec("PEPR", "b", 2, 0.95),
        ];
        let s = summarize(&recs).unwrap();
        let auroc_row = s.iter().find(|r| r.metric == Metric::Auroc).unwrap();
        assert!((auroc_row.mean - 0.85).abs() < 1e-12);
        assert!((auroc_row.std - 0.0707106781).abs() < 1e-9);

        let mut shuffled = recs.clone();
        shuffled.reverse();
        assert_eq!(summarize(&shuffled).unwrap(), s);
    }

    #[test]
    fn summary_reports_gaps() {
        let recs = vec![
            rec("PEPR", "a", 1, 0.7),
            rec("PEPR", "b", 1, 0.9),
            rec("PEPR", "a", 2, 0.8),
        ];
        let err = summarize(&recs).unwrap_err().to_string();
        assert!(err.contains("PEPR / b / seed 2"), "{err}");
        let dup = vec![rec("PEPR", "a", 1, 0.7), rec("PEPR", "a", 1, 0.7)];
        assert!(summarize(&dup).is_err());
    }

    #[test]
    fn records_round_trip_through_csv() {
        let recs = vec![
            rec("CPEPR-10", "noise", 3, 0.123456789),
            rec("MLGT", "shift", 4, 1.0 / 3.0),
        ];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn formatting_and_bolding() {
        assert_eq!(format_pm(0.8423, 0.0091), "84.2 ±0.9");
        assert_eq!(format_pm(0.5, 0.0), "50.0 ±0.0");
        assert_eq!(
            bold_mask(&[(0.80, 0.01), (0.84, 0.02), (0.83, 0.0)], true),
            vec![false, true, true]
        );
        assert_eq!(bold_mask(&[(0.30, 0.05), (0.20, 0.01)], false), vec![false, true]);
    }

    #[test]
    fn markdown_tables() {
        let recs = vec![rec("PEPR", "a", 1, 0.7), rec("MOS", "a", 1, 0.6)];
        let md = summary_markdown(&summarize(&recs).unwrap());
        assert!(md.contains("| AUROC | 60.0 ±0.0 | **70.0 ±0.0** |"), "{md}");
        assert!(md.contains("| FPR95 | 40.0 ±0.0 | **30.0 ±0.0** |"), "{md}");
        let pd = per_dataset_markdown(&per_dataset(&recs).unwrap());
        assert!(pd.contains("| a AUPR |"), "{pd}");
    }

    #[test]
    fn histogram_area_is_one() {
        let h = Histogram::build(
            &[
                ("in".into(), vec![0.0, 0.1, 0.5, 1.0]),
                ("ood".into(), vec![2.0, 2.0, -1.0]),
            ],
            HISTOGRAM_BINS,
        )
        .unwrap();
        assert_eq!(h.edges.len(), HISTOGRAM_BINS + 1);
        assert!((h.area(0) - 1.0).abs() < 1e-12);
        assert!((h.area(1) - 1.0).abs() < 1e-12);
        let constant = Histogram::build(&[("c".into(), vec![3.0; 5])], 10).unwrap();
        assert!((constant.area(0) - 1.0).abs() < 1e-12);
        let back = Histogram::from_csv(&h.to_csv().unwrap()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn metric_names() {
        assert_eq!(Metric::Fpr95.name(), "FPR95");
        let m = Method::single(BaseMethod::Msp);
        let r = EvalRecord::compute(m, "x", 0, &ls(&[1.0], &[0.0])).unwrap();
        assert_eq!((r.auroc, r.aupr, r.fpr95), (1.0, 1.0, 0.0));
    }
}
