//! Benchmark harnesses: synthetic sweeps from the forward model and weighted
//! evaluation on cause-effect pair collections laid out like TCEP.
//!
//! Pairs are evaluated in parallel on the current rayon pool; results are
//! collected in pair order, so reports do not depend on scheduling. A failed
//! inference counts as an incorrect decision and is flagged in its outcome.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forward::{ForwardConfig, ForwardModel};
use crate::inference::{CausalModel, InferenceConfig};
use crate::rng::{self, derive_seed};
use crate::{Direction, Error, Result};

/// Default name of the collection's metadata file.
pub const TCEP_META_FILE: &str = "pairmeta.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub direction: Direction,
    pub log_odds: f64,
}

/// Anything that orients a pair of columns.
pub trait DirectionDecider: Sync {
    fn decide(&self, x: &[f64], y: &[f64]) -> Result<Decision>;
}

impl DirectionDecider for CausalModel {
    fn decide(&self, x: &[f64], y: &[f64]) -> Result<Decision> {
        let r = self.infer(x, y)?;
        Ok(Decision {
            direction: r.decided_direction,
            log_odds: r.log_odds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair_id: String,
    pub repeat: usize,
    pub n_samples: usize,
    pub true_direction: Direction,
    pub decided_direction: Option<Direction>,
    pub log_odds: Option<f64>,
    pub weight: f64,
    pub correct: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub forward: Option<ForwardConfig>,
    pub inference: InferenceConfig,
    pub subsample_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub label: String,
    /// Unweighted fraction of correct decisions.
    pub accuracy: f64,
    /// `sum w_i correct_i / sum w_i`; 0 when all weights vanish.
    pub weighted_accuracy: f64,
    pub failures: usize,
    pub repeats: usize,
    pub seed: u64,
    pub config: ReportConfig,
    pub pairs: Vec<PairOutcome>,
}

impl AccuracyReport {
    fn assemble(
        label: String,
        seed: u64,
        repeats: usize,
        config: ReportConfig,
        pairs: Vec<PairOutcome>,
    ) -> Self {
        let n = pairs.len();
        let correct = pairs.iter().filter(|p| p.correct).count();
        let total_weight: f64 = pairs.iter().map(|p| p.weight).sum();
        let correct_weight: f64 = pairs.iter().filter(|p| p.correct).map(|p| p.weight).sum();
        AccuracyReport {
            label,
            accuracy: if n == 0 {
                0.0
            } else {
                correct as f64 / n as f64
            },
            weighted_accuracy: if total_weight > 0.0 {
                correct_weight / total_weight
            } else {
                0.0
            },
            failures: pairs.iter().filter(|p| p.error.is_some()).count(),
            repeats,
            seed,
            config,
            pairs,
        }
    }
}

fn evaluate(
    decider: &dyn DirectionDecider,
    pair_id: String,
    repeat: usize,
    x: &[f64],
    y: &[f64],
    truth: Direction,
    weight: f64,
) -> PairOutcome {
    let (decided, log_odds, error) = match decider.decide(x, y) {
        Ok(d) => (Some(d.direction), Some(d.log_odds), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    PairOutcome {
        pair_id,
        repeat,
        n_samples: x.len(),
        true_direction: truth,
        decided_direction: decided,
        log_odds,
        weight,
        correct: decided == Some(truth),
        error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSuiteConfig {
    pub n_pairs: usize,
    pub forward: ForwardConfig,
    pub inference: InferenceConfig,
    pub master_seed: u64,
}

impl SyntheticSuiteConfig {
    pub fn label(&self) -> String {
        format!(
            "n_bins={} N~={} noise={}",
            self.forward.n_bins, self.forward.target_samples, self.forward.noise_variance
        )
    }
}

/// Forward-model pairs with seeds `derive_seed(master_seed, i)`, decided by
/// the Bayesian model configured in `cfg.inference`.
pub fn run_synthetic_suite(cfg: &SyntheticSuiteConfig) -> Result<AccuracyReport> {
    let model = CausalModel::new(&cfg.inference)?;
    run_synthetic_suite_with(cfg, &model)
}

pub fn run_synthetic_suite_with(
    cfg: &SyntheticSuiteConfig,
    decider: &dyn DirectionDecider,
) -> Result<AccuracyReport> {
    if cfg.n_pairs == 0 {
        return Err(Error::InvalidConfig("n_pairs must be at least 1".into()));
    }
    let forward = ForwardModel::new(&cfg.forward)?;
    let pairs = (0..cfg.n_pairs)
        .into_par_iter()
        .map(|i| {
            let pair = forward.sample(derive_seed(cfg.master_seed, i as u64))?;
            Ok(evaluate(
                decider,
                format!("pair{:04}", i + 1),
                0,
                &pair.x,
                &pair.y,
                pair.true_direction,
                1.0,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let config = ReportConfig {
        forward: Some(cfg.forward.clone()),
        inference: cfg.inference.clone(),
        subsample_cap: None,
    };
    Ok(AccuracyReport::assemble(
        cfg.label(),
        cfg.master_seed,
        1,
        config,
        pairs,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcepPairRecord {
    pub pair_id: String,
    /// Lower-numbered designated column.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub true_direction: Direction,
    pub weight: f64,
}

impl TcepPairRecord {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Uniform subsample without replacement of at most `cap` rows, in the
    /// original row order.
    pub fn subsample(&self, cap: usize, seed: u64) -> TcepPairRecord {
        if self.len() <= cap {
            return self.clone();
        }
        let mut idx = rand::seq::index::sample(&mut rng::seeded(seed), self.len(), cap).into_vec();
        idx.sort_unstable();
        TcepPairRecord {
            pair_id: self.pair_id.clone(),
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            true_direction: self.true_direction,
            weight: self.weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcepCollection {
    pub records: Vec<TcepPairRecord>,
    /// Non-numeric data rows skipped across all pair files.
    pub skipped_rows: usize,
    /// Pairs left out because the cause or the effect is multi-dimensional.
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
struct MetaLine {
    pair_id: String,
    cause: (usize, usize),
    effect: (usize, usize),
    weight: f64,
}

fn parse_meta(path: &Path) -> Result<Vec<MetaLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, what: &str| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {what}"),
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 6 {
            return Err(bad(
                n + 1,
                "expected: id cause-start cause-end effect-start effect-end weight",
            ));
        }
        let col = |s: &str| s.parse::<usize>().ok().filter(|&c| c >= 1);
        let (Some(cs), Some(ce), Some(es), Some(ee)) = (
            col(fields[1]),
            col(fields[2]),
            col(fields[3]),
            col(fields[4]),
        ) else {
            return Err(bad(n + 1, "column indices must be positive integers"));
        };
        let weight: f64 = fields[5]
            .parse()
            .ok()
            .filter(|w: &f64| w.is_finite() && *w >= 0.0)
            .ok_or_else(|| bad(n + 1, "weight must be a non-negative number"))?;
        out.push(MetaLine {
            pair_id: fields[0].to_string(),
            cause: (cs, ce),
            effect: (es, ee),
            weight,
        });
    }
    Ok(out)
}

/// Numeric rows of a whitespace-separated file; comment lines starting with
/// `#` are ignored and other non-numeric rows are counted and skipped.
fn read_rows(path: &Path) -> Result<(Vec<Vec<f64>>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut skipped = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) if row.iter().all(|v| v.is_finite()) => rows.push(row),
            _ => skipped += 1,
        }
    }
    Ok((rows, skipped))
}

/// Location of the data file for `pair_id` (`pair<id>.txt`).
pub fn tcep_pair_path(dir: &Path, pair_id: &str) -> PathBuf {
    dir.join(format!("pair{pair_id}.txt"))
}

/// Loads every pair with a one-dimensional cause and effect from `dir`,
/// subsampling pairs longer than `subsample_cap`.
pub fn load_tcep(dir: &Path, subsample_cap: usize, seed: u64) -> Result<TcepCollection> {
    load_tcep_with_meta(dir, &dir.join(TCEP_META_FILE), subsample_cap, seed)
}

pub fn load_tcep_with_meta(
    dir: &Path,
    meta: &Path,
    subsample_cap: usize,
    seed: u64,
) -> Result<TcepCollection> {
    if subsample_cap == 0 {
        return Err(Error::InvalidConfig(
            "subsample cap must be positive".into(),
        ));
    }
    let lines = parse_meta(meta)?;
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    let mut skipped_rows = 0;
    for (index, m) in lines.iter().enumerate() {
        if m.cause.0 != m.cause.1 || m.effect.0 != m.effect.1 {
            excluded.push(m.pair_id.clone());
            continue;
        }
        let (cause, effect) = (m.cause.0, m.effect.0);
        let path = tcep_pair_path(dir, &m.pair_id);
        let (rows, skipped) = read_rows(&path)?;
        skipped_rows += skipped;
        let width = cause.max(effect);
        let mut first = Vec::with_capacity(rows.len());
        let mut second = Vec::with_capacity(rows.len());
        let (lo, hi) = (cause.min(effect) - 1, width - 1);
        for row in &rows {
            if row.len() < width {
                skipped_rows += 1;
                continue;
            }
            first.push(row[lo]);
            second.push(row[hi]);
        }
        let record = TcepPairRecord {
            pair_id: m.pair_id.clone(),
            x: first,
            y: second,
            true_direction: if cause < effect {
                Direction::XToY
            } else {
                Direction::YToX
            },
            weight: m.weight,
        };
        records.push(record.subsample(subsample_cap, derive_seed(seed, index as u64)));
    }
    Ok(TcepCollection {
        records,
        skipped_rows,
        excluded,
    })
}

/// Weighted accuracy over `records`. When some record is longer than
/// `subsample_cap`, the evaluation is repeated on `repeats` independent
/// subsamplings and pooled (equivalently, averaged over repeats).
pub fn run_tcep_suite(
    records: &[TcepPairRecord],
    inference: &InferenceConfig,
    repeats: usize,
    subsample_cap: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    let model = CausalModel::new(inference)?;
    run_tcep_suite_with(records, inference, &model, repeats, subsample_cap, seed)
}

pub fn run_tcep_suite_with(
    records: &[TcepPairRecord],
    inference: &InferenceConfig,
    decider: &dyn DirectionDecider,
    repeats: usize,
    subsample_cap: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    if repeats == 0 || subsample_cap == 0 {
        return Err(Error::InvalidConfig(
            "repeats and subsample cap must be positive".into(),
        ));
    }
    let effective = if records.iter().any(|r| r.len() > subsample_cap) {
        repeats
    } else {
        1
    };
    let jobs: Vec<(usize, usize)> = (0..effective)
        .flat_map(|r| (0..records.len()).map(move |i| (r, i)))
        .collect();
    let pairs = jobs
        .into_par_iter()
        .map(|(r, i)| {
            let rec = records[i].subsample(
                subsample_cap,
                derive_seed(derive_seed(seed, r as u64), i as u64),
            );
            evaluate(
                decider,
                rec.pair_id.clone(),
                r,
                &rec.x,
                &rec.y,
                rec.true_direction,
                rec.weight,
            )
        })
        .collect();
    let config = ReportConfig {
        forward: None,
        inference: inference.clone(),
        subsample_cap: Some(subsample_cap),
    };
    Ok(AccuracyReport::assemble(
        format!("tcep cap={subsample_cap}"),
        seed,
        effective,
        config,
        pairs,
    ))
}

/// Whitespace-aligned table with one row per report.
pub fn render_table(reports: &[AccuracyReport]) -> String {
    let header = ["setting", "pairs", "failures", "accuracy", "weighted"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                r.pairs.len().to_string(),
                r.failures.to_string(),
                format!("{:.3}", r.accuracy),
                format!("{:.3}", r.weighted_accuracy),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut push_row = |cells: &[&str]| {
        let line: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    push_row(&header);
    for row in &rows {
        push_row(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Tab-separated summary with one row per report.
pub fn render_tsv(reports: &[AccuracyReport]) -> String {
    let mut out = String::from("setting\tpairs\tfailures\taccuracy\tweighted_accuracy\n");
    for r in reports {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.label,
            r.pairs.len(),
            r.failures,
            r.accuracy,
            r.weighted_accuracy
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Always(Direction);

    impl DirectionDecider for Always {
        fn decide(&self, _: &[f64], _: &[f64]) -> Result<Decision> {
            Ok(Decision {
                direction: self.0,
                log_odds: 0.0,
            })
        }
    }

    struct Failing;

    impl DirectionDecider for Failing {
        fn decide(&self, _: &[f64], _: &[f64]) -> Result<Decision> {
            Err(Error::Degenerate("boom".into()))
        }
    }

    fn record(id: &str, n: usize, truth: Direction, weight: f64) -> TcepPairRecord {
        TcepPairRecord {
            pair_id: id.into(),
            x: (0..n).map(|i| i as f64).collect(),
            y: (0..n).map(|i| (i as f64).sin()).collect(),
            true_direction: truth,
            weight,
        }
    }

    #[test]
    fn zero_weight_pairs_do_not_count() {
        let recs = vec![
            record("a", 10, Direction::XToY, 1.0),
            record("b", 10, Direction::YToX, 0.0),
        ];
        let cfg = InferenceConfig::with_bins(8);
        let r = run_tcep_suite_with(&recs, &cfg, &Always(Direction::XToY), 3, 500, 0).unwrap();
        assert_eq!(r.weighted_accuracy, 1.0);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.repeats, 1);
    }

    #[test]
    fn equal_weights_reduce_to_plain_accuracy() {
        let recs: Vec<_> = (0..7)
            .map(|i| {
                let d = if i % 3 == 0 {
                    Direction::YToX
                } else {
                    Direction::XToY
                };
                record(&i.to_string(), 5, d, 2.5)
            })
            .collect();
        let cfg = InferenceConfig::with_bins(8);
        let r = run_tcep_suite_with(&recs, &cfg, &Always(Direction::XToY), 1, 500, 0).unwrap();
        assert_eq!(r.accuracy, r.weighted_accuracy);
        assert!((r.accuracy - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn failures_are_incorrect_and_flagged() {
        let recs = vec![record("a", 10, Direction::XToY, 1.0)];
        let cfg = InferenceConfig::with_bins(8);
        let r = run_tcep_suite_with(&recs, &cfg, &Failing, 1, 500, 0).unwrap();
        assert_eq!(r.failures, 1);
        assert_eq!(r.accuracy, 0.0);
        assert!(r.pairs[0].error.as_deref().unwrap().contains("boom"));
    }

    #[test]
    fn repeats_only_when_subsampling_happens() {
        let recs = vec![record("a", 100, Direction::XToY, 1.0)];
        let cfg = InferenceConfig::with_bins(8);
        let r = run_tcep_suite_with(&recs, &cfg, &Always(Direction::XToY), 20, 75, 1).unwrap();
        assert_eq!(r.repeats, 20);
        assert_eq!(r.pairs.len(), 20);
        assert!(r.pairs.iter().all(|p| p.n_samples == 75));
    }

    #[test]
    fn subsampling() {
        let rec = record("a", 11_000, Direction::XToY, 1.0);
        let sub = rec.subsample(500, 3);
        assert_eq!(sub.len(), 500);
        assert!(sub.x.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sub, rec.subsample(500, 3));
        assert_ne!(sub, rec.subsample(500, 4));
        let small = record("b", 40, Direction::XToY, 1.0);
        assert_eq!(small.subsample(500, 3), small);
    }

    #[test]
    fn table_rendering() {
        let recs = vec![record("a", 10, Direction::XToY, 1.0)];
        let cfg = InferenceConfig::with_bins(8);
        let r = run_tcep_suite_with(&recs, &cfg, &Always(Direction::XToY), 1, 500, 0).unwrap();
        let table = render_table(&[r.clone(), r.clone()]);
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("1.000"));
        let tsv = render_tsv(&[r]);
        assert_eq!(tsv.lines().nth(1).unwrap().split('\t').count(), 5);
    }
}
