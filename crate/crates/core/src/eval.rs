//! Metrics, cross-validation, the criterion × depth benchmark grid, and the
//! V-shaped synthetic classification problem.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RowIndexSet, Task};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tree::{build_tree, Criterion, TrainConfig};

/// Area under the ROC curve: the fraction of (positive, negative) pairs
/// ranked correctly, ties counting one half.
pub fn auc<T: Scalar>(scores: &[T], labels: &[T]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].as_f64().total_cmp(&scores[b].as_f64()));
    // Sum of the (tie-averaged, 1-based) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut n_pos = 0usize;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end) as f64 / 2.0 + 1.0;
        for &k in &order[start..=end] {
            if labels[k] > T::lit(0.5) {
                rank_sum += mid_rank;
                n_pos += 1;
            }
        }
        start = end + 1;
    }
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

pub fn r_squared<T: Scalar>(y: &[T], yhat: &[T]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::Rsquared("need at least two samples".into()));
    }
    let n = y.len() as f64;
    let mean = y.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v.as_f64() - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Rsquared("labels have zero variance".into()));
    }
    let ss_res: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fraction of probabilities on the correct side of 0.5.
pub fn accuracy<T: Scalar>(probabilities: &[T], labels: &[T]) -> f64 {
    let half = T::lit(0.5);
    let hits = probabilities
        .iter()
        .zip(labels)
        .filter(|(p, y)| (**p > half) == (**y > half))
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    R2,
}

impl Metric {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => Metric::Auc,
            Task::Regression => Metric::R2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::R2 => "r2",
        }
    }

    pub fn compute<T: Scalar>(self, labels: &[T], predictions: &[T]) -> Result<f64> {
        match self {
            Metric::Auc => auc(predictions, labels),
            Metric::R2 => r_squared(labels, predictions),
        }
    }
}

/// Test-row indices of each fold after a seeded shuffle. Folds are
/// contiguous chunks whose sizes differ by at most one; with `stratify_by`
/// the shuffled rows are grouped by label and dealt round-robin instead.
pub fn fold_indices<T: Scalar>(
    n: usize,
    k: usize,
    seed: u64,
    stratify_by: Option<&[T]>,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Config(format!(
            "fold count {k} must lie in 2..={n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    match stratify_by {
        Some(labels) => {
            perm.sort_by(|&a, &b| labels[a].as_f64().total_cmp(&labels[b].as_f64()));
            for (p, i) in perm.into_iter().enumerate() {
                folds[p % k].push(i);
            }
        }
        None => {
            let (base, extra) = (n / k, n % k);
            let mut start = 0;
            for (f, fold) in folds.iter_mut().enumerate() {
                let len = base + usize::from(f < extra);
                fold.extend_from_slice(&perm[start..start + len]);
                start += len;
            }
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub value: f64,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub metric: Metric,
    pub folds: Vec<FoldResult>,
    pub mean: f64,
}

/// k-fold cross-validation of `cfg` on `data`; folds run in parallel and are
/// reported in fold order.
pub fn kfold_evaluate<T: Scalar>(
    data: &Dataset<T>,
    cfg: &TrainConfig<T>,
    k: usize,
    seed: u64,
    stratify: bool,
) -> Result<CvResult> {
    let labels = data.labels();
    let folds = fold_indices(data.n_rows(), k, seed, stratify.then_some(labels))?;
    let metric = Metric::for_task(data.task());
    if metric == Metric::Auc {
        for (f, fold) in folds.iter().enumerate() {
            let pos = fold.iter().filter(|&&i| labels[i] > T::lit(0.5)).count();
            if pos == 0 || pos == fold.len() {
                return Err(Error::FoldMissingClass { fold: f });
            }
        }
    }
    let results = folds
        .par_iter()
        .map(|test| -> Result<FoldResult> {
            let mut in_test = vec![false; data.n_rows()];
            test.iter().for_each(|&i| in_test[i] = true);
            let train =
                RowIndexSet::new((0..data.n_rows()).filter(|&i| !in_test[i]).collect())?;
            let test = RowIndexSet::new(test.clone())?;
            let started = Instant::now();
            let tree = build_tree(data, &train, cfg)?;
            let train_seconds = started.elapsed().as_secs_f64();
            let predictions = tree.predict_dataset(data, &test)?;
            let truth: Vec<T> = test.iter().map(|i| data.label(i)).collect();
            Ok(FoldResult {
                value: metric.compute(&truth, &predictions)?,
                train_seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = results.iter().map(|r| r.value).sum::<f64>() / results.len() as f64;
    Ok(CvResult {
        metric,
        folds: results,
        mean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `"linear"` for the plain weak model, otherwise the criterion's short
    /// name.
    pub method: String,
    pub depth: usize,
    pub result: CvResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub k: usize,
    pub metric: Metric,
    pub rows: Vec<ReportRow>,
}

pub const BASELINE_METHOD: &str = "linear";

/// Cross-validates the plain weak model and every `(method, depth)` cell.
/// Rows follow the input order, methods outermost, after the baseline row.
#[allow(clippy::too_many_arguments)]
pub fn benchmark<T: Scalar>(
    data: &Dataset<T>,
    dataset_name: &str,
    base: &TrainConfig<T>,
    methods: &[Criterion],
    depths: &[usize],
    k: usize,
    seed: u64,
    stratify: bool,
) -> Result<EvalReport> {
    let mut cells = vec![(BASELINE_METHOD.to_string(), TrainConfig {
        max_depth: 0,
        ..base.clone()
    })];
    for &criterion in methods {
        for &depth in depths {
            cells.push((
                criterion.short_name().to_string(),
                TrainConfig {
                    max_depth: depth,
                    criterion,
                    ..base.clone()
                },
            ));
        }
    }
    let rows = cells
        .into_par_iter()
        .map(|(method, cfg)| {
            Ok(ReportRow {
                method,
                depth: cfg.max_depth,
                result: kfold_evaluate(data, &cfg, k, seed, stratify)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        dataset: dataset_name.to_string(),
        k,
        metric: Metric::for_task(data.task()),
        rows,
    })
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 7] = [
        "dataset",
        "method",
        "depth",
        "fold",
        "metric",
        "value",
        "train_seconds",
    ];

    /// One row per fold plus a `mean` row per cell, at full precision.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER)?;
        for row in &self.rows {
            let depth = row.depth.to_string();
            let mut emit = |fold: String, value: f64, secs: f64| {
                w.write_record([
                    self.dataset.as_str(),
                    row.method.as_str(),
                    depth.as_str(),
                    fold.as_str(),
                    self.metric.name(),
                    &value.to_string(),
                    &secs.to_string(),
                ])
            };
            for (f, fold) in row.result.folds.iter().enumerate() {
                emit(f.to_string(), fold.value, fold.train_seconds)?;
            }
            let total: f64 = row.result.folds.iter().map(|f| f.train_seconds).sum();
            emit("mean".into(), row.result.mean, total / row.result.folds.len() as f64)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io("<report>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Wide table: one column per cell, metric in percent with one decimal.
    pub fn to_table(&self) -> String {
        let label = |r: &ReportRow| {
            if r.method == BASELINE_METHOD {
                ("Linear".to_string(), String::new())
            } else {
                (r.method.clone(), r.depth.to_string())
            }
        };
        let name_width = self.dataset.chars().count().max(6);
        let widths: Vec<usize> = self
            .rows
            .iter()
            .map(|r| label(r).0.len().max(6))
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<name_width$}", "Method");
        for (r, w) in self.rows.iter().zip(&widths) {
            let _ = write!(out, "  {:>w$}", label(r).0);
        }
        out.push('\n');
        let _ = write!(out, "{:<name_width$}", "Depth");
        for (r, w) in self.rows.iter().zip(&widths) {
            let _ = write!(out, "  {:>w$}", label(r).1);
        }
        out.push('\n');
        let _ = write!(out, "{:<name_width$}", self.dataset);
        for (r, w) in self.rows.iter().zip(&widths) {
            let _ = write!(out, "  {:>w$.1}", 100.0 * r.result.mean);
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "({} in percent, mean over {} folds)",
            self.metric.name(),
            self.k
        );
        out
    }
}

/// Label of a point of the V problem: 1 above `x2 = |x1|` by more than half
/// the gap, 0 below by more than half the gap, `None` inside the band.
pub fn v_label(x1: f64, x2: f64, gap: f64) -> Option<f64> {
    let boundary = x1.abs();
    if x2 > boundary + gap / 2.0 {
        Some(1.0)
    } else if x2 < boundary - gap / 2.0 {
        Some(0.0)
    } else {
        None
    }
}

/// Two-feature problem where the classes meet along a V: `x1 ~ U(-1, 1)`,
/// `x2 ~ U(0, 1)`. Points inside the gap band are resampled.
pub fn generate_v_dataset<T: Scalar>(n: usize, gap: f64, seed: u64) -> Result<Dataset<T>> {
    if n < 100 {
        return Err(Error::Config("V dataset needs at least 100 samples".into()));
    }
    if !(0.0..0.2).contains(&gap) {
        return Err(Error::Config("V dataset gap must lie in [0, 0.2)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let x1: f64 = rng.gen_range(-1.0..1.0);
        let x2: f64 = rng.gen_range(0.0..1.0);
        if let Some(y) = v_label(x1, x2, gap) {
            features.push(T::lit(x1));
            features.push(T::lit(x2));
            labels.push(T::lit(y));
        }
    }
    Dataset::new(
        features,
        labels,
        vec!["x1".into(), "x2".into()],
        Task::Classification,
    )
}
