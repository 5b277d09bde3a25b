//! Loss-log parsing, gap derivation and dataset assembly.
//!
//! Loss logs are CSV with header `run_id,delta,split,tokens,loss`, or JSONL
//! with one object per row using the same keys. Finetuning logs use
//! `run_id,delta,tokens,pt_test_loss,post_ft_loss`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::curve::{LossCurve, LossPoint, RunConfig, Split};
use crate::error::{Error, Result};
use crate::units::{MixtureFraction, TokenCount};

pub const LOSS_LOG_COLUMNS: [&str; 5] = ["run_id", "delta", "split", "tokens", "loss"];
pub const FINETUNE_LOG_COLUMNS: [&str; 5] = ["run_id", "delta", "tokens", "pt_test_loss", "post_ft_loss"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl LogFormat {
    /// Guesses the format from a file name; anything not ending in
    /// `.jsonl`/`.ndjson` is treated as CSV.
    pub fn from_path(path: &str) -> LogFormat {
        let lower = path.to_ascii_lowercase();
        if lower.ends_with(".jsonl") || lower.ends_with(".ndjson") {
            LogFormat::Jsonl
        } else {
            LogFormat::Csv
        }
    }
}

/// A recoverable problem with one input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedLog {
    pub curves: Vec<LossCurve>,
    pub run_deltas: BTreeMap<String, MixtureFraction>,
    pub warnings: Vec<Warning>,
}

type Row = BTreeMap<String, String>;
/// A row with its 1-based input line.
type NumberedRow = (u64, Row);

/// Splits input into keyed rows. Row-level problems become warnings; only
/// undecodable input or an unusable CSV header is fatal.
fn read_rows(bytes: &[u8], format: LogFormat, required: &[&str]) -> Result<(Vec<NumberedRow>, Vec<Warning>)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("input is not valid UTF-8: {e}")))?;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    match format {
        LogFormat::Csv => {
            if text.trim().is_empty() {
                return Ok((rows, warnings));
            }
            let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
            let header = reader.headers().map_err(|e| Error::Format(format!("unreadable header: {e}")))?.clone();
            let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
            for col in required {
                if !names.iter().any(|n| n == col) {
                    return Err(Error::Format(format!("header is missing column `{col}`")));
                }
            }
            for record in reader.records() {
                match record {
                    Ok(rec) => {
                        let line = rec.position().map(|p| p.line()).unwrap_or(0);
                        if rec.len() != names.len() {
                            warnings.push(Warning {
                                line,
                                message: format!("expected {} fields, found {}", names.len(), rec.len()),
                            });
                            continue;
                        }
                        let row = names.iter().cloned().zip(rec.iter().map(str::to_string)).collect();
                        rows.push((line, row));
                    }
                    Err(e) => {
                        let line = e.position().map(|p| p.line()).unwrap_or(0);
                        warnings.push(Warning { line, message: format!("unreadable row: {e}") });
                    }
                }
            }
        }
        LogFormat::Jsonl => {
            for (idx, raw) in text.lines().enumerate() {
                let line = idx as u64 + 1;
                if raw.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = match serde_json::from_str(raw) {
                    Ok(v) => v,
                    Err(e) => {
                        warnings.push(Warning { line, message: format!("invalid JSON: {e}") });
                        continue;
                    }
                };
                let Some(obj) = value.as_object() else {
                    warnings.push(Warning { line, message: "row is not a JSON object".into() });
                    continue;
                };
                let mut row = Row::new();
                for (k, v) in obj {
                    let s = match v {
                        serde_json::Value::String(s) => s.clone(),
                        serde_json::Value::Number(n) => n.to_string(),
                        other => other.to_string(),
                    };
                    row.insert(k.to_ascii_lowercase(), s);
                }
                rows.push((line, row));
            }
        }
    }
    Ok((rows, warnings))
}

fn field<'a>(row: &'a Row, key: &str) -> std::result::Result<&'a str, String> {
    row.get(key).map(String::as_str).ok_or_else(|| format!("missing field `{key}`"))
}

fn parse_loss_value(s: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("invalid {what} `{s}`"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("{what} {v} is not finite and positive"));
    }
    Ok(v)
}

/// Records the mixture fraction of a run, rejecting rows that disagree with
/// the first value seen.
fn note_delta(
    deltas: &mut BTreeMap<String, MixtureFraction>,
    run_id: &str,
    delta: MixtureFraction,
) -> std::result::Result<(), String> {
    match deltas.get(run_id) {
        Some(&prev) if prev != delta => Err(format!("run `{run_id}` has delta {delta}, earlier rows say {prev}")),
        Some(_) => Ok(()),
        None => {
            deltas.insert(run_id.to_string(), delta);
            Ok(())
        }
    }
}

/// Parses a loss log into validated curves sorted by tokens.
pub fn parse_loss_log(bytes: &[u8], format: LogFormat) -> Result<ParsedLog> {
    let (rows, mut warnings) = read_rows(bytes, format, &LOSS_LOG_COLUMNS)?;
    let mut run_deltas = BTreeMap::new();
    let mut grouped: BTreeMap<(String, Split), BTreeMap<TokenCount, f64>> = BTreeMap::new();

    for (line, row) in rows {
        let parsed = (|| -> std::result::Result<_, String> {
            let run_id = field(&row, "run_id")?.trim().to_string();
            if run_id.is_empty() {
                return Err("empty run_id".into());
            }
            let delta: MixtureFraction = field(&row, "delta")?.parse().map_err(|e: Error| e.to_string())?;
            let split: Split = field(&row, "split")?.parse().map_err(|e: Error| e.to_string())?;
            let tokens: TokenCount = field(&row, "tokens")?.parse().map_err(|e: Error| e.to_string())?;
            if tokens.get() == 0 {
                return Err("tokens must be positive".into());
            }
            let loss = parse_loss_value(field(&row, "loss")?, "loss")?;
            Ok((run_id, delta, split, tokens, loss))
        })();
        let (run_id, delta, split, tokens, loss) = match parsed {
            Ok(v) => v,
            Err(message) => {
                warnings.push(Warning { line, message });
                continue;
            }
        };
        if let Err(message) = note_delta(&mut run_deltas, &run_id, delta) {
            warnings.push(Warning { line, message });
            continue;
        }
        let series = grouped.entry((run_id.clone(), split)).or_default();
        match series.get(&tokens) {
            Some(&prev) if prev.to_bits() != loss.to_bits() => {
                return Err(Error::DuplicatePoint {
                    run_id,
                    split: split.to_string(),
                    tokens: tokens.get(),
                    first: prev,
                    second: loss,
                });
            }
            Some(_) => warnings.push(Warning { line, message: "repeated identical point ignored".into() }),
            None => {
                series.insert(tokens, loss);
            }
        }
    }

    let curves = grouped
        .into_iter()
        .map(|((run_id, split), pts)| {
            let points = pts.into_iter().map(|(tokens, loss)| LossPoint { tokens, loss }).collect();
            LossCurve::new(run_id, split, points)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParsedLog { curves, run_deltas, warnings })
}

/// Writes curves back out in the canonical schema, ordered by run, split and
/// tokens.
pub fn write_loss_log(
    curves: &[LossCurve],
    run_deltas: &BTreeMap<String, MixtureFraction>,
    format: LogFormat,
) -> Result<String> {
    let mut sorted: Vec<&LossCurve> = curves.iter().collect();
    sorted.sort_by(|a, b| (&a.run_id, a.split).cmp(&(&b.run_id, b.split)));
    let mut out = String::new();
    if format == LogFormat::Csv {
        out.push_str(&LOSS_LOG_COLUMNS.join(","));
        out.push('\n');
    }
    for curve in sorted {
        let delta = run_deltas.get(&curve.run_id).ok_or_else(|| Error::UnknownRun(curve.run_id.clone()))?;
        for p in curve.points() {
            match format {
                LogFormat::Csv => {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        csv_escape(&curve.run_id),
                        delta,
                        curve.split,
                        p.tokens.get(),
                        p.loss
                    ));
                }
                LogFormat::Jsonl => {
                    let row = serde_json::json!({
                        "run_id": curve.run_id,
                        "delta": delta.value(),
                        "split": curve.split.as_str(),
                        "tokens": p.tokens.get(),
                        "loss": p.loss,
                    });
                    out.push_str(&row.to_string());
                    out.push('\n');
                }
            }
        }
    }
    Ok(out)
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub tokens: TokenCount,
    /// Test minus train loss; may be negative in raw data.
    pub gap: f64,
}

/// Domain test minus domain train loss at the token counts both curves share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    pub run_id: String,
    pub points: Vec<GapPoint>,
}

impl GapSeries {
    pub fn negative_count(&self) -> usize {
        self.points.iter().filter(|p| p.gap < 0.0).count()
    }
}

/// Pairs train and test points at exactly shared abscissae.
pub fn derive_gap(train: &LossCurve, test: &LossCurve) -> Result<GapSeries> {
    if train.run_id != test.run_id {
        return Err(Error::InvariantViolation(format!(
            "cannot pair curves from runs `{}` and `{}`",
            train.run_id, test.run_id
        )));
    }
    if train.split != Split::DomainTrain || test.split != Split::DomainTest {
        return Err(Error::InvariantViolation(format!(
            "gap needs domain_train and domain_test curves, got {} and {}",
            train.split, test.split
        )));
    }
    let test_at: BTreeMap<TokenCount, f64> = test.points().iter().map(|p| (p.tokens, p.loss)).collect();
    let points: Vec<GapPoint> = train
        .points()
        .iter()
        .filter_map(|p| test_at.get(&p.tokens).map(|&t| GapPoint { tokens: p.tokens, gap: t - p.loss }))
        .collect();
    if points.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(GapSeries { run_id: train.run_id.clone(), points })
}

/// Every run, its curves, and the gap series derived from them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDataset {
    pub runs: BTreeMap<String, RunConfig>,
    pub curves: Vec<LossCurve>,
    pub derived_gap_curves: Vec<GapSeries>,
}

impl RunDataset {
    /// Validates that every curve belongs to a known run and derives gap
    /// series wherever train and test curves overlap. Curves are ordered by
    /// `(run_id, split)`.
    pub fn assemble(runs: BTreeMap<String, RunConfig>, mut curves: Vec<LossCurve>) -> Result<(Self, Vec<String>)> {
        for cfg in runs.values() {
            cfg.validate()?;
        }
        if let Some(c) = curves.iter().find(|c| !runs.contains_key(&c.run_id)) {
            return Err(Error::UnknownRun(c.run_id.clone()));
        }
        curves.sort_by(|a, b| (&a.run_id, a.split).cmp(&(&b.run_id, b.split)));
        let mut seen = BTreeSet::new();
        for c in &curves {
            if !seen.insert((c.run_id.clone(), c.split)) {
                return Err(Error::InvariantViolation(format!(
                    "run `{}` has more than one {} curve",
                    c.run_id, c.split
                )));
            }
        }
        let mut gaps = Vec::new();
        let mut notes = Vec::new();
        for run_id in runs.keys() {
            let find = |split| curves.iter().find(|c| &c.run_id == run_id && c.split == split);
            if let (Some(train), Some(test)) = (find(Split::DomainTrain), find(Split::DomainTest)) {
                match derive_gap(train, test) {
                    Ok(g) => {
                        let neg = g.negative_count();
                        if neg > 0 {
                            notes.push(format!("run `{run_id}`: {neg} negative gap point(s) kept"));
                        }
                        gaps.push(g);
                    }
                    Err(Error::NoOverlap) => {
                        notes.push(format!("run `{run_id}`: train and test share no token counts"))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok((RunDataset { runs, curves, derived_gap_curves: gaps }, notes))
    }

    /// Builds run configs from what a loss log reveals: mixture fraction and
    /// the largest token count observed.
    pub fn from_log(log: &ParsedLog) -> Result<(Self, Vec<String>)> {
        let mut runs = BTreeMap::new();
        for (run_id, &delta) in &log.run_deltas {
            let budget = log
                .curves
                .iter()
                .filter(|c| &c.run_id == run_id)
                .filter_map(|c| c.token_range().map(|r| r.1))
                .max()
                .unwrap_or(TokenCount::ZERO);
            runs.insert(
                run_id.clone(),
                RunConfig {
                    run_id: run_id.clone(),
                    delta,
                    domain_dataset_tokens: None,
                    pretrain_budget_tokens: budget,
                    model_params: None,
                    scpt_start_tokens: None,
                },
            );
        }
        Self::assemble(runs, log.curves.clone())
    }

    pub fn curve(&self, run_id: &str, split: Split) -> Option<&LossCurve> {
        self.curves.iter().find(|c| c.run_id == run_id && c.split == split)
    }

    pub fn gap(&self, run_id: &str) -> Option<&GapSeries> {
        self.derived_gap_curves.iter().find(|g| g.run_id == run_id)
    }

    /// Distinct mixture fractions, ascending.
    pub fn deltas(&self) -> Vec<MixtureFraction> {
        let mut ds: Vec<MixtureFraction> = self.runs.values().map(|r| r.delta).collect();
        ds.sort_by(|a, b| a.value().total_cmp(&b.value()));
        ds.dedup();
        ds
    }

    /// Runs with the given mixture fraction, in run-id order.
    pub fn runs_with_delta(&self, delta: MixtureFraction) -> impl Iterator<Item = &RunConfig> {
        self.runs.values().filter(move |r| r.delta == delta)
    }
}

/// Pretrained vs best-after-finetuning domain test loss for one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOutcome {
    pub run_id: String,
    pub pretrain_tokens_at_ft: TokenCount,
    pub best_post_ft_domain_loss: f64,
    pub pt_domain_test_loss: f64,
}

impl FinetuneOutcome {
    pub fn new(
        run_id: impl Into<String>,
        pretrain_tokens_at_ft: TokenCount,
        pt_domain_test_loss: f64,
        best_post_ft_domain_loss: f64,
    ) -> Result<Self> {
        let out = FinetuneOutcome {
            run_id: run_id.into(),
            pretrain_tokens_at_ft,
            best_post_ft_domain_loss,
            pt_domain_test_loss,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.best_post_ft_domain_loss, self.pt_domain_test_loss] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvariantViolation(format!("loss {v} is not finite and positive")));
            }
        }
        if self.best_post_ft_domain_loss > self.pt_domain_test_loss {
            return Err(Error::InvariantViolation(format!(
                "run `{}`: finetuned loss {} exceeds pretrained loss {}",
                self.run_id, self.best_post_ft_domain_loss, self.pt_domain_test_loss
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaTestPoint {
    pub tokens: TokenCount,
    pub improvement: f64,
}

/// `pt_domain_test_loss − best_post_ft_domain_loss` per outcome.
pub fn compute_delta_test_points(outcomes: &[FinetuneOutcome]) -> Result<Vec<DeltaTestPoint>> {
    outcomes
        .iter()
        .map(|o| {
            let improvement = o.pt_domain_test_loss - o.best_post_ft_domain_loss;
            if !(improvement >= 0.0) {
                return Err(Error::InvariantViolation(format!(
                    "run `{}` at {}: finetuning made domain loss worse by {}",
                    o.run_id, o.pretrain_tokens_at_ft, -improvement
                )));
            }
            Ok(DeltaTestPoint { tokens: o.pretrain_tokens_at_ft, improvement })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedFinetuneLog {
    pub outcomes: Vec<FinetuneOutcome>,
    pub run_deltas: BTreeMap<String, MixtureFraction>,
    pub warnings: Vec<Warning>,
}

pub fn parse_finetune_log(bytes: &[u8], format: LogFormat) -> Result<ParsedFinetuneLog> {
    let (rows, mut warnings) = read_rows(bytes, format, &FINETUNE_LOG_COLUMNS)?;
    let mut out = ParsedFinetuneLog::default();
    for (line, row) in rows {
        let parsed = (|| -> std::result::Result<_, String> {
            let run_id = field(&row, "run_id")?.trim().to_string();
            let delta: MixtureFraction = field(&row, "delta")?.parse().map_err(|e: Error| e.to_string())?;
            let tokens: TokenCount = field(&row, "tokens")?.parse().map_err(|e: Error| e.to_string())?;
            let pt = parse_loss_value(field(&row, "pt_test_loss")?, "pt_test_loss")?;
            let post = parse_loss_value(field(&row, "post_ft_loss")?, "post_ft_loss")?;
            let outcome = FinetuneOutcome::new(run_id, tokens, pt, post).map_err(|e| e.to_string())?;
            Ok((delta, outcome))
        })();
        match parsed {
            Ok((delta, outcome)) => {
                if let Err(message) = note_delta(&mut out.run_deltas, &outcome.run_id, delta) {
                    warnings.push(Warning { line, message });
                    continue;
                }
                out.outcomes.push(outcome);
            }
            Err(message) => warnings.push(Warning { line, message }),
        }
    }
    out.outcomes.sort_by(|a, b| (&a.run_id, a.pretrain_tokens_at_ft).cmp(&(&b.run_id, b.pretrain_tokens_at_ft)));
    out.warnings = warnings;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(run: &str, split: Split, pts: &[(u64, f64)]) -> LossCurve {
        let points = pts.iter().map(|&(t, l)| LossPoint { tokens: TokenCount(t), loss: l }).collect();
        LossCurve::new(run, split, points).unwrap()
    }

    #[test]
    fn three_rows_one_curve() {
        let csv = "run_id,delta,split,tokens,loss\nr1,2%,domain_train,30B,2.1\nr1,0.02,domain_train,10B,2.5\nr1,0.02,domain_train,20B,2.3\n";
        let log = parse_loss_log(csv.as_bytes(), LogFormat::Csv).unwrap();
        assert!(log.warnings.is_empty());
        assert_eq!(log.curves.len(), 1);
        let c = &log.curves[0];
        assert_eq!(c.len(), 3);
        assert_eq!(c.points()[0].tokens, TokenCount(10_000_000_000));
        assert_eq!(log.run_deltas["r1"].value(), 0.02);
    }

    #[test]
    fn empty_input_is_empty() {
        for fmt in [LogFormat::Csv, LogFormat::Jsonl] {
            let log = parse_loss_log(b"", fmt).unwrap();
            assert!(log.curves.is_empty());
            assert!(log.warnings.is_empty());
        }
    }

    #[test]
    fn negative_loss_row_is_warned_and_dropped() {
        let csv = "run_id,delta,split,tokens,loss\nr1,0,train,1,2.0\nr1,0,train,2,-1\nr1,0,train,3,1.5\n";
        let log = parse_loss_log(csv.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(log.curves[0].len(), 2);
        assert_eq!(log.warnings.len(), 1);
        assert_eq!(log.warnings[0].line, 3);
    }

    #[test]
    fn conflicting_duplicate_is_an_error() {
        let csv = "run_id,delta,split,tokens,loss\nr1,0,train,1,2.0\nr1,0,train,1,2.5\n";
        let err = parse_loss_log(csv.as_bytes(), LogFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::DuplicatePoint { .. }));
        let same = "run_id,delta,split,tokens,loss\nr1,0,train,1,2.0\nr1,0,train,1,2.0\n";
        let log = parse_loss_log(same.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(log.curves[0].len(), 1);
        assert_eq!(log.warnings.len(), 1);
    }

    #[test]
    fn header_errors_are_fatal() {
        let err = parse_loss_log(b"run,delta\nx,1\n", LogFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        let err = parse_loss_log(&[0xff, 0xfe, 0x00], LogFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn jsonl_rows_and_bad_lines() {
        let text = "{\"run_id\":\"a\",\"delta\":\"1%\",\"split\":\"domain_test\",\"tokens\":\"2B\",\"loss\":1.5}\nnot json\n\n{\"run_id\":\"a\",\"delta\":0.01,\"split\":\"domain_test\",\"tokens\":1000000000,\"loss\":1.7}\n[1,2]\n";
        let log = parse_loss_log(text.as_bytes(), LogFormat::Jsonl).unwrap();
        assert_eq!(log.curves.len(), 1);
        assert_eq!(log.curves[0].len(), 2);
        let lines: Vec<u64> = log.warnings.iter().map(|w| w.line).collect();
        assert_eq!(lines, vec![2, 5]);
    }

    #[test]
    fn conflicting_delta_is_warned() {
        let csv = "run_id,delta,split,tokens,loss\nr1,0.01,train,1,2.0\nr1,0.02,train,2,1.9\n";
        let log = parse_loss_log(csv.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(log.curves[0].len(), 1);
        assert_eq!(log.warnings.len(), 1);
    }

    #[test]
    fn gap_examples() {
        let a = curve("r", Split::DomainTrain, &[(10, 2.0), (20, 1.8)]);
        let same = curve("r", Split::DomainTest, &[(10, 2.0), (20, 1.8)]);
        assert!(derive_gap(&a, &same).unwrap().points.iter().all(|p| p.gap == 0.0));

        let shifted = curve("r", Split::DomainTest, &[(10, 2.1), (20, 1.9)]);
        for p in derive_gap(&a, &shifted).unwrap().points {
            assert!((p.gap - 0.1).abs() < 1e-12);
        }

        let b = curve("r", Split::DomainTest, &[(20, 1.9), (30, 1.85)]);
        let g = derive_gap(&a, &b).unwrap();
        assert_eq!(g.points.len(), 1);
        assert_eq!(g.points[0].tokens, TokenCount(20));

        let far = curve("r", Split::DomainTest, &[(40, 1.9)]);
        assert_eq!(derive_gap(&a, &far).unwrap_err(), Error::NoOverlap);

        let below = curve("r", Split::DomainTest, &[(10, 1.9)]);
        assert_eq!(derive_gap(&a, &below).unwrap().negative_count(), 1);
    }

    #[test]
    fn delta_test_points() {
        let o = |t: u64, pt: f64, post: f64| FinetuneOutcome::new("r", TokenCount(t), pt, post).unwrap();
        let pts = compute_delta_test_points(&[o(1, 3.0, 2.9), o(2, 3.0, 3.0)]).unwrap();
        assert!((pts[0].improvement - 0.1).abs() < 1e-12);
        assert_eq!(pts[1].improvement, 0.0);
        assert!(FinetuneOutcome::new("r", TokenCount(1), 3.0, 3.1).is_err());
        let bad = FinetuneOutcome {
            run_id: "r".into(),
            pretrain_tokens_at_ft: TokenCount(1),
            best_post_ft_domain_loss: 3.2,
            pt_domain_test_loss: 3.0,
        };
        assert!(matches!(compute_delta_test_points(&[bad]), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn assemble_requires_known_runs() {
        let c = curve("ghost", Split::DomainTrain, &[(1, 1.0)]);
        let err = RunDataset::assemble(BTreeMap::new(), vec![c]).unwrap_err();
        assert_eq!(err, Error::UnknownRun("ghost".into()));
    }

    #[test]
    fn finetune_log_parses() {
        let csv = "run_id,delta,tokens,pt_test_loss,post_ft_loss\nr,2%,40B,2.0,1.8\nr,2%,80B,1.9,1.95\n";
        let log = parse_finetune_log(csv.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(log.outcomes.len(), 1);
        assert_eq!(log.warnings.len(), 1);
    }
}
