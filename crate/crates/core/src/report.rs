//! Fixed-layout CSV tables emitted and re-read by the tool.
//!
//! Every table has a one-line header and a fixed column order. Numbers are
//! carried as [`Fixed`], which remembers how many decimals it was written
//! with, so a parsed table re-emits byte-identically.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lens::{GapStats, GroupAverage, LayerTrajectory};
use crate::metrics::DeltaReport;
use crate::synthetic::{SimulationMode, SweepRow};

/// Decimals used for freshly computed values.
pub const DEFAULT_DECIMALS: u8 = 6;

/// A decimal number with a fixed count of fractional digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixed {
    pub value: f64,
    pub decimals: u8,
}

impl Fixed {
    pub fn new(value: f64, decimals: u8) -> Self {
        let mut f = Self { value, decimals };
        // Print values that round to zero without a sign.
        if f.to_string().trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            f.value = 0.0;
        }
        f
    }

    pub fn computed(value: f64) -> Self {
        Self::new(value, DEFAULT_DECIMALS)
    }

    /// Half a unit in the last printed place.
    pub fn half_ulp(&self) -> f64 {
        0.5 * 10f64.powi(-(self.decimals as i32))
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.*}", self.decimals as usize, self.value)
    }
}

impl FromStr for Fixed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.strip_prefix('-').unwrap_or(s);
        let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
        let well_formed = !int.is_empty()
            && int.bytes().all(|b| b.is_ascii_digit())
            && frac.bytes().all(|b| b.is_ascii_digit())
            && (frac.is_empty() == !digits.contains('.'));
        if !well_formed || frac.len() > u8::MAX as usize {
            return Err(Error::Report(format!("not a decimal number: {s:?}")));
        }
        let value: f64 = s.parse().map_err(|_| Error::Report(format!("not a decimal number: {s:?}")))?;
        Ok(Self {
            value,
            decimals: frac.len() as u8,
        })
    }
}

/// A row type with a fixed header.
pub trait CsvRow: Sized {
    fn header() -> Vec<String>;
    fn to_fields(&self) -> Vec<String>;
    fn from_fields(fields: &[&str]) -> Result<Self>;
}

fn csv_line(fields: &[String]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(fields)?;
    let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

/// Header line plus one line per row.
pub fn write_table<R: CsvRow>(rows: &[R]) -> Result<String> {
    let mut out = csv_line(&R::header())?;
    for row in rows {
        out.push_str(&csv_line(&row.to_fields())?);
    }
    Ok(out)
}

fn read_records(text: &str) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

/// Parses a table, requiring the exact header.
pub fn read_table<R: CsvRow>(text: &str) -> Result<Vec<R>> {
    let (header, records) = read_records(text)?;
    if header != R::header() {
        return Err(Error::Report(format!(
            "unexpected header {:?}, expected {:?}",
            header.join(","),
            R::header().join(",")
        )));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let fields: Vec<&str> = rec.iter().collect();
            R::from_fields(&fields).map_err(|e| Error::Report(format!("row {}: {e}", i + 2)))
        })
        .collect()
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, T::to_string)
}

fn parse<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Report(format!("bad {what}: {s:?}")))
}

fn parse_fixed(s: &str, what: &str) -> Result<Fixed> {
    let f: Fixed = s.parse().map_err(|e| Error::Report(format!("{what}: {e}")))?;
    Ok(f)
}

fn parse_opt<T: FromStr>(s: &str, what: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(s, what).map(Some)
    }
}

fn parse_opt_fixed(s: &str, what: &str) -> Result<Option<Fixed>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_fixed(s, what).map(Some)
    }
}

fn expect_len(fields: &[&str], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::Report(format!("expected {n} fields, found {}", fields.len())));
    }
    Ok(())
}

/// One row of a per-run summary table (dataset × model × shot count).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub k: u64,
    pub n_questions: Option<usize>,
    pub tu: Fixed,
    pub eu: Fixed,
    pub au: Fixed,
    pub acc: Fixed,
    pub auroc: Option<Fixed>,
    pub tau: Option<Fixed>,
    pub pct_decreased: Option<Fixed>,
    pub pct_increased: Option<Fixed>,
    pub delta_acc_decreased: Option<Fixed>,
    pub delta_acc_increased: Option<Fixed>,
}

/// Slack for `tu = eu + au` on unrounded values.
pub const IDENTITY_TOL: f64 = 1e-9;

impl ReportRow {
    /// Checks finiteness and `tu = eu + au` up to [`IDENTITY_TOL`] plus the
    /// rounding of the three printed values.
    pub fn validate(&self) -> Result<()> {
        let all = [Some(self.tu), Some(self.eu), Some(self.au), Some(self.acc), self.auroc, self.tau]
            .into_iter()
            .chain([self.pct_decreased, self.pct_increased, self.delta_acc_decreased, self.delta_acc_increased])
            .flatten();
        for f in all {
            if !f.value.is_finite() {
                return Err(Error::Report(format!("non-finite value in row {}/{}/{}", self.dataset, self.model, self.k)));
            }
        }
        let gap = (self.tu.value - self.eu.value - self.au.value).abs();
        let tol = IDENTITY_TOL + self.tu.half_ulp() + self.eu.half_ulp() + self.au.half_ulp();
        if gap > tol {
            return Err(Error::Report(format!(
                "{}/{}/k={}: tu {} != eu {} + au {} (gap {gap:.3e} > {tol:.3e})",
                self.dataset, self.model, self.k, self.tu, self.eu, self.au
            )));
        }
        Ok(())
    }
}

impl CsvRow for ReportRow {
    fn header() -> Vec<String> {
        header(&[
            "dataset",
            "model",
            "k",
            "n_questions",
            "tu",
            "eu",
            "au",
            "acc",
            "auroc",
            "tau",
            "pct_decreased",
            "pct_increased",
            "delta_acc_decreased",
            "delta_acc_increased",
        ])
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.model.clone(),
            self.k.to_string(),
            opt(&self.n_questions),
            self.tu.to_string(),
            self.eu.to_string(),
            self.au.to_string(),
            self.acc.to_string(),
            opt(&self.auroc),
            opt(&self.tau),
            opt(&self.pct_decreased),
            opt(&self.pct_increased),
            opt(&self.delta_acc_decreased),
            opt(&self.delta_acc_increased),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        expect_len(f, 14)?;
        let row = Self {
            dataset: f[0].to_string(),
            model: f[1].to_string(),
            k: parse(f[2], "k")?,
            n_questions: parse_opt(f[3], "n_questions")?,
            tu: parse_fixed(f[4], "tu")?,
            eu: parse_fixed(f[5], "eu")?,
            au: parse_fixed(f[6], "au")?,
            acc: parse_fixed(f[7], "acc")?,
            auroc: parse_opt_fixed(f[8], "auroc")?,
            tau: parse_opt_fixed(f[9], "tau")?,
            pct_decreased: parse_opt_fixed(f[10], "pct_decreased")?,
            pct_increased: parse_opt_fixed(f[11], "pct_increased")?,
            delta_acc_decreased: parse_opt_fixed(f[12], "delta_acc_decreased")?,
            delta_acc_increased: parse_opt_fixed(f[13], "delta_acc_increased")?,
        };
        row.validate()?;
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRow {
    pub dataset: String,
    pub model: String,
    pub k: u64,
    pub question_id: String,
    pub tu: Fixed,
    pub eu: Fixed,
    pub au: Fixed,
    pub predicted: String,
    pub confidence: Fixed,
    pub correct: bool,
}

impl CsvRow for QuestionRow {
    fn header() -> Vec<String> {
        header(&["dataset", "model", "k", "question_id", "tu", "eu", "au", "predicted", "confidence", "correct"])
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.model.clone(),
            self.k.to_string(),
            self.question_id.clone(),
            self.tu.to_string(),
            self.eu.to_string(),
            self.au.to_string(),
            self.predicted.clone(),
            self.confidence.to_string(),
            self.correct.to_string(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        expect_len(f, 10)?;
        Ok(Self {
            dataset: f[0].to_string(),
            model: f[1].to_string(),
            k: parse(f[2], "k")?,
            question_id: f[3].to_string(),
            tu: parse_fixed(f[4], "tu")?,
            eu: parse_fixed(f[5], "eu")?,
            au: parse_fixed(f[6], "au")?,
            predicted: f[7].to_string(),
            confidence: parse_fixed(f[8], "confidence")?,
            correct: parse(f[9], "correct")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub dataset: String,
    pub model: String,
    pub k: u64,
    pub bin: usize,
    pub lo: Fixed,
    pub hi: Fixed,
    pub count: usize,
}

impl CsvRow for HistogramRow {
    fn header() -> Vec<String> {
        header(&["dataset", "model", "k", "bin", "lo", "hi", "count"])
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.model.clone(),
            self.k.to_string(),
            self.bin.to_string(),
            self.lo.to_string(),
            self.hi.to_string(),
            self.count.to_string(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        expect_len(f, 7)?;
        Ok(Self {
            dataset: f[0].to_string(),
            model: f[1].to_string(),
            k: parse(f[2], "k")?,
            bin: parse(f[3], "bin")?,
            lo: parse_fixed(f[4], "lo")?,
            hi: parse_fixed(f[5], "hi")?,
            count: parse(f[6], "count")?,
        })
    }
}

/// Bin counts of `values` over `[0, upper]` in equal-width bins; values at
/// or above `upper` land in the last bin.
pub fn histogram_counts(values: &[f64], upper: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let width = if upper > 0.0 { upper / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = ((v / width).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * width, (i + 1) as f64 * width, c))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AurocRow {
    pub dataset: String,
    pub model: String,
    pub k: u64,
    pub score: String,
    pub n_questions: Option<usize>,
    pub auroc: Fixed,
}

impl CsvRow for AurocRow {
    fn header() -> Vec<String> {
        header(&["dataset", "model", "k", "score", "n_questions", "auroc"])
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.model.clone(),
            self.k.to_string(),
            self.score.clone(),
            opt(&self.n_questions),
            self.auroc.to_string(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        expect_len(f, 6)?;
        let auroc = parse_fixed(f[5], "auroc")?;
        if !(0.0..=1.0).contains(&auroc.value) {
            return Err(Error::Report(format!("auroc {auroc} outside [0, 1]")));
        }
        Ok(Self {
            dataset: f[0].to_string(),
            model: f[1].to_string(),
            k: parse(f[2], "k")?,
            score: f[3].to_string(),
            n_questions: parse_opt(f[4], "n_questions")?,
            auroc,
        })
    }
}

/// How ΔAcc is computed, echoed in every shift table.
pub const DELTA_ACC_RULE: &str = "subset_target_minus_baseline";

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub score: String,
    pub baseline_k: u64,
    pub target_k: u64,
    pub tau: Fixed,
    pub n_matched: usize,
    pub pct_decreased: Fixed,
    pub pct_increased: Fixed,
    pub pct_unchanged: Fixed,
    pub delta_acc_decreased: Fixed,
    pub delta_acc_increased: Fixed,
    pub decreased_empty: bool,
    pub increased_empty: bool,
    pub delta_acc_rule: String,
}

impl DeltaRow {
    pub fn from_report(score: &str, r: &DeltaReport) -> Self {
        Self {
            score: score.to_string(),
            baseline_k: r.baseline_k,
            target_k: r.target_k,
            tau: Fixed::computed(r.tau),
            n_matched: r.n_matched,
            pct_decreased: Fixed::computed(r.pct_decreased),
            pct_increased: Fixed::computed(r.pct_increased),
            pct_unchanged: Fixed::computed(r.pct_unchanged),
            delta_acc_decreased: Fixed::computed(r.delta_acc_decreased),
            delta_acc_increased: Fixed::computed(r.delta_acc_increased),
            decreased_empty: r.decreased_empty,
            increased_empty: r.increased_empty,
            delta_acc_rule: DELTA_ACC_RULE.to_string(),
        }
    }
}

impl CsvRow for DeltaRow {
    fn header() -> Vec<String> {
        header(&[
            "score",
            "baseline_k",
            "target_k",
            "tau",
            "n_matched",
            "pct_decreased",
            "pct_increased",
            "pct_unchanged",
            "delta_acc_decreased",
            "delta_acc_increased",
            "decreased_empty",
            "increased_empty",
            "delta_acc_rule",
        ])
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.score.clone(),
            self.baseline_k.to_string(),
            self.target_k.to_string(),
            self.tau.to_string(),
            self.n_matched.to_string(),
            self.pct_decreased.to_string(),
            self.pct_increased.to_string(),
            self.pct_unchanged.to_string(),
            self.delta_acc_decreased.to_string(),
            self.delta_acc_increased.to_string(),
            self.decreased_empty.to_string(),
            self.increased_empty.to_string(),
            self.delta_acc_rule.clone(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        expect_len(f, 13)?;
        Ok(Self {
            score: f[0].to_string(),
            baseline_k: parse(f[1], "baseline_k")?,
            target_k: parse(f[2], "target_k")?,
            tau: parse_fixed(f[3], "tau")?,
            n_matched: parse(f[4], "n_matched")?,
            pct_decreased: parse_fixed(f[5], "pct_decreased")?,
            pct_increased: parse_fixed(f[6], "pct_increased")?,
            pct_unchanged: parse_fixed(f[7], "pct_unchanged")?,
            delta_acc_decreased: parse_fixed(f[8], "delta_acc_decreased")?,
            delta_acc_increased: parse_fixed(f[9], "delta_acc_increased")?,
            decreased_empty: parse(f[10], "decreased_empty")?,
            increased_empty: parse(f[11], "increased_empty")?,
            delta_acc_rule: f[12].to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCsvRow {
    pub shots: u64,
    pub mode: String,
    pub repeats: usize,
    /// tu, eu, au estimates; their standard errors; ground truth; absolute errors.
    pub values: [Fixed; 12],
}

impl From<&SweepRow> for SweepCsvRow {
    fn from(r: &SweepRow) -> Self {
        let v = [
            r.tu_est,
            r.eu_est,
            r.au_est,
            r.tu_se,
            r.eu_se,
            r.au_se,
            r.tu_star,
            r.eu_star,
            r.au_star,
            r.tu_abs_err(),
            r.eu_abs_err(),
            r.au_abs_err(),
        ];
        Self {
            shots: r.shots,
            mode: r.mode.as_str().to_string(),
            repeats: r.repeats,
            values: v.map(Fixed::computed),
        }
    }
}

const SWEEP_VALUE_COLS: [&str; 12] = [
    "tu_est", "eu_est", "au_est", "tu_se", "eu_se", "au_se", "tu_star", "eu_star", "au_star", "tu_abs_err",
    "eu_abs_err", "au_abs_err",
];

impl CsvRow for SweepCsvRow {
    fn header() -> Vec<String> {
        let mut h = header(&["n", "mode", "repeats"]);
        h.extend(SWEEP_VALUE_COLS.iter().map(|s| s.to_string()));
        h
    }

    fn to_fields(&self) -> Vec<String> {
        let mut f = vec![self.shots.to_string(), self.mode.clone(), self.repeats.to_string()];
        f.extend(self.values.iter().map(Fixed::to_string));
        f
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        expect_len(f, 15)?;
        let mode: SimulationMode = f[1].parse()?;
        let mut values = [Fixed::computed(0.0); 12];
        for (i, v) in values.iter_mut().enumerate() {
            *v = parse_fixed(f[3 + i], SWEEP_VALUE_COLS[i])?;
        }
        Ok(Self {
            shots: parse(f[0], "n")?,
            mode: mode.as_str().to_string(),
            repeats: parse(f[2], "repeats")?,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapStatsRow {
    pub question_id: String,
    pub gold_label: Option<String>,
    pub top1: String,
    pub top2: String,
    pub logit_diff: Fixed,
    pub largest_logit: Fixed,
    pub consistency_err: Option<Fixed>,
    pub consistent: Option<bool>,
}

impl GapStatsRow {
    pub fn new(
        question_id: &str,
        gold_label: Option<&str>,
        labels: &[String],
        g: &GapStats,
        consistency: Option<(f64, f64)>,
    ) -> Self {
        Self {
            question_id: question_id.to_string(),
            gold_label: gold_label.map(str::to_string),
            top1: labels[g.top1].clone(),
            top2: labels[g.top2].clone(),
            logit_diff: Fixed::computed(g.logit_diff),
            largest_logit: Fixed::computed(g.largest_logit),
            consistency_err: consistency.map(|(err, _)| Fixed::new(err, 12)),
            consistent: consistency.map(|(err, tol)| err <= tol),
        }
    }
}

impl CsvRow for GapStatsRow {
    fn header() -> Vec<String> {
        header(&[
            "question_id",
            "gold_label",
            "top1",
            "top2",
            "logit_diff",
            "largest_logit",
            "consistency_err",
            "consistent",
        ])
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.question_id.clone(),
            opt(&self.gold_label),
            self.top1.clone(),
            self.top2.clone(),
            self.logit_diff.to_string(),
            self.largest_logit.to_string(),
            opt(&self.consistency_err),
            opt(&self.consistent),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        expect_len(f, 8)?;
        Ok(Self {
            question_id: f[0].to_string(),
            gold_label: (!f[1].is_empty()).then(|| f[1].to_string()),
            top1: f[2].to_string(),
            top2: f[3].to_string(),
            logit_diff: parse_fixed(f[4], "logit_diff")?,
            largest_logit: parse_fixed(f[5], "largest_logit")?,
            consistency_err: parse_opt_fixed(f[6], "consistency_err")?,
            consistent: parse_opt(f[7], "consistent")?,
        })
    }
}

/// Mean final-stream logit gap for one (dataset, model, shot count).
#[derive(Debug, Clone, PartialEq)]
pub struct GapSummaryRow {
    pub dataset: String,
    pub model: String,
    pub k: Option<u64>,
    pub n_questions: Option<usize>,
    pub logit_diff: Fixed,
    pub largest_logit: Fixed,
}

impl GapSummaryRow {
    /// `"<mean logit difference> / <mean largest logit>"`.
    pub fn display(&self) -> String {
        format!("{} / {}", self.logit_diff, self.largest_logit)
    }
}

impl CsvRow for GapSummaryRow {
    fn header() -> Vec<String> {
        header(&["dataset", "model", "k", "n_questions", "logit_diff", "largest_logit"])
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.model.clone(),
            opt(&self.k),
            opt(&self.n_questions),
            self.logit_diff.to_string(),
            self.largest_logit.to_string(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        expect_len(f, 6)?;
        let row = Self {
            dataset: f[0].to_string(),
            model: f[1].to_string(),
            k: parse_opt(f[2], "k")?,
            n_questions: parse_opt(f[3], "n_questions")?,
            logit_diff: parse_fixed(f[4], "logit_diff")?,
            largest_logit: parse_fixed(f[5], "largest_logit")?,
        };
        if row.logit_diff.value < 0.0 {
            return Err(Error::Report(format!("negative logit_diff {}", row.logit_diff)));
        }
        Ok(row)
    }
}

fn layer_of(stream_index: usize) -> usize {
    stream_index / 2 + 1
}

/// Wide per-stream table: one row per (question, stream) with one logit and
/// one probability column per label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub labels: Vec<String>,
    pub rows: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    /// Question id, or the gold label for group tables.
    pub key: String,
    /// Only set for group tables.
    pub count: Option<usize>,
    pub stream_index: usize,
    pub layer: usize,
    pub stream_kind: String,
    pub probability_mode: String,
    pub logits: Vec<Fixed>,
    pub probs: Vec<Fixed>,
}

impl TrajectoryTable {
    pub fn from_trajectories(labels: &[String], trajs: &[LayerTrajectory]) -> Self {
        let rows = trajs
            .iter()
            .flat_map(|t| {
                (0..t.logits.len()).map(move |s| TrajectoryRow {
                    key: t.question_id.clone(),
                    count: None,
                    stream_index: s,
                    layer: layer_of(s),
                    stream_kind: t.kinds[s].as_str().to_string(),
                    probability_mode: t.mode.as_str().to_string(),
                    logits: t.logits[s].iter().copied().map(Fixed::computed).collect(),
                    probs: t.probs[s].iter().copied().map(Fixed::computed).collect(),
                })
            })
            .collect();
        Self {
            labels: labels.to_vec(),
            rows,
        }
    }

    pub fn from_group(labels: &[String], mode: &str, g: &GroupAverage) -> Self {
        let key = labels.get(g.gold_label).cloned().unwrap_or_else(|| g.gold_label.to_string());
        let rows = (0..g.mean_logits.len())
            .map(|s| TrajectoryRow {
                key: key.clone(),
                count: Some(g.count),
                stream_index: s,
                layer: layer_of(s),
                stream_kind: g.kinds[s].as_str().to_string(),
                probability_mode: mode.to_string(),
                logits: g.mean_logits[s].iter().copied().map(Fixed::computed).collect(),
                probs: g.mean_probs[s].iter().copied().map(Fixed::computed).collect(),
            })
            .collect();
        Self {
            labels: labels.to_vec(),
            rows,
        }
    }

    fn is_group(&self) -> bool {
        self.rows.first().is_some_and(|r| r.count.is_some())
    }

    fn header_for(labels: &[String], group: bool) -> Vec<String> {
        let mut h = if group {
            header(&["gold_label", "count"])
        } else {
            header(&["question_id"])
        };
        h.extend(header(&["stream_index", "layer", "stream_kind", "probability_mode"]));
        h.extend(labels.iter().map(|l| format!("logit_{l}")));
        h.extend(labels.iter().map(|l| format!("prob_{l}")));
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let group = self.is_group();
        let mut out = csv_line(&Self::header_for(&self.labels, group))?;
        for r in &self.rows {
            let mut f = vec![r.key.clone()];
            if group {
                f.push(opt(&r.count));
            }
            f.extend([
                r.stream_index.to_string(),
                r.layer.to_string(),
                r.stream_kind.clone(),
                r.probability_mode.clone(),
            ]);
            f.extend(r.logits.iter().map(Fixed::to_string));
            f.extend(r.probs.iter().map(Fixed::to_string));
            out.push_str(&csv_line(&f)?);
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (header, records) = read_records(text)?;
        let group = header.first().map(String::as_str) == Some("gold_label");
        let fixed_cols = if group { 6 } else { 5 };
        let label_cols = header.len().saturating_sub(fixed_cols);
        if label_cols == 0 || label_cols % 2 != 0 {
            return Err(Error::Report("trajectory header has no label columns".into()));
        }
        let labels: Vec<String> = header[fixed_cols..fixed_cols + label_cols / 2]
            .iter()
            .map(|h| h.strip_prefix("logit_").map(str::to_string))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Report("trajectory header: expected logit_<label> columns".into()))?;
        if header != Self::header_for(&labels, group) {
            return Err(Error::Report("trajectory header is not in canonical order".into()));
        }
        let y = labels.len();
        let rows = records
            .iter()
            .map(|rec| {
                let f: Vec<&str> = rec.iter().collect();
                expect_len(&f, header.len())?;
                let o = if group { 1 } else { 0 };
                Ok(TrajectoryRow {
                    key: f[0].to_string(),
                    count: if group { Some(parse(f[1], "count")?) } else { None },
                    stream_index: parse(f[1 + o], "stream_index")?,
                    layer: parse(f[2 + o], "layer")?,
                    stream_kind: f[3 + o].to_string(),
                    probability_mode: f[4 + o].to_string(),
                    logits: (0..y).map(|i| parse_fixed(f[fixed_cols + i], "logit")).collect::<Result<_>>()?,
                    probs: (0..y).map(|i| parse_fixed(f[fixed_cols + y + i], "prob")).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { labels, rows })
    }
}
