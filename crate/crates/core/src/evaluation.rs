//! Macro metrics, seed-ensemble voting with attribute tie rules, and the
//! self-contradiction audit.

use serde::{Deserialize, Serialize};

use crate::annotations::Attribute;
use crate::error::{Error, Result};

/// Gold-row by predicted-column counts for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(num_categories: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; num_categories]; num_categories],
        }
    }

    pub fn record(&mut self, gold: usize, predicted: usize) {
        self.counts[gold][predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn num_categories(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub per_category: Vec<CategoryPrf>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Per-category and macro P/R/F1. 0/0 cases are defined as 0 so macro values
/// stay comparable when a minority class vanishes.
pub fn macro_prf(cm: &ConfusionMatrix) -> PrfReport {
    let k = cm.num_categories();
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    let mut per_category = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.counts[c][c] as f64;
        let fp: f64 = (0..k).filter(|&g| g != c).map(|g| cm.counts[g][c] as f64).sum();
        let fn_: f64 = (0..k).filter(|&p| p != c).map(|p| cm.counts[c][p] as f64).sum();
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        per_category.push(CategoryPrf { precision, recall, f1 });
    }
    let kf = k as f64;
    PrfReport {
        macro_precision: per_category.iter().map(|c| c.precision).sum::<f64>() / kf,
        macro_recall: per_category.iter().map(|c| c.recall).sum::<f64>() / kf,
        macro_f1: per_category.iter().map(|c| c.f1).sum::<f64>() / kf,
        per_category,
    }
}

/// How a tie was resolved in an ensemble vote, flagged in reports because
/// the three-way cascade is an extension of the published pairwise rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieKind {
    None,
    TwoWay,
    ThreeWay,
}

/// Majority vote over per-seed predictions for one attribute.
///
/// The highest-frequency category wins. Tied leaders resolve to the
/// least-severe tied category, which reproduces the pairwise rules
/// (Not, Somewhat) -> Not, (Somewhat, Very) -> Somewhat, (Not, Very) -> Not,
/// (N/A, anti-Asian) -> N/A, (Normal, Abusive) -> Normal,
/// (Abusive, Hate) -> Abusive, (Normal, Hate) -> Normal; category order
/// encodes severity. A three-way tie cascades to the least severe overall.
pub fn ensemble_vote(seed_votes: &[usize], num_categories: usize) -> Result<(usize, TieKind)> {
    if seed_votes.is_empty() {
        return Err(Error::Schema("ensemble_vote needs at least one seed".into()));
    }
    let mut counts = vec![0usize; num_categories];
    for &v in seed_votes {
        if v >= num_categories {
            return Err(Error::Schema(format!(
                "vote {v} out of range for {num_categories} categories"
            )));
        }
        counts[v] += 1;
    }
    let max = *counts.iter().max().expect("non-empty");
    let leaders: Vec<usize> = (0..num_categories).filter(|&c| counts[c] == max).collect();
    let tie = match leaders.len() {
        1 => TieKind::None,
        2 => TieKind::TwoWay,
        _ => TieKind::ThreeWay,
    };
    Ok((leaders[0], tie))
}

/// Final predictions for one tweet across the three tasks.
pub type TaskPredictions = [usize; 3];

/// Counts hierarchy violations: Aggression = Not Aggressive (index 0) with a
/// non-neutral Target or Type (index != 0).
pub fn contradiction_count(preds: &[TaskPredictions]) -> usize {
    preds
        .iter()
        .filter(|p| p[0] == 0 && (p[1] != 0 || p[2] != 0))
        .count()
}

/// Full metrics for one run or ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: Vec<TaskMetrics>,
    pub contradictions: usize,
    pub evaluated: usize,
    /// Number of ensemble decisions that exercised the three-way tie cascade.
    #[serde(default)]
    pub three_way_ties: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Attribute,
    pub confusion: ConfusionMatrix,
    pub prf: PrfReport,
}

/// Builds a metrics report from per-tweet gold and predicted labels.
/// `category_counts` gives the number of categories per task.
pub fn evaluate_predictions(
    golds: &[TaskPredictions],
    preds: &[TaskPredictions],
    category_counts: [usize; 3],
) -> Result<MetricsReport> {
    if golds.len() != preds.len() {
        return Err(Error::ShapeMismatch {
            expected: golds.len(),
            got: preds.len(),
            context: "gold vs predicted counts".into(),
        });
    }
    let mut cms: Vec<ConfusionMatrix> = category_counts
        .iter()
        .map(|&k| ConfusionMatrix::new(k))
        .collect();
    for (g, p) in golds.iter().zip(preds) {
        for t in 0..3 {
            cms[t].record(g[t], p[t]);
        }
    }
    let tasks = Attribute::ALL
        .iter()
        .zip(cms)
        .map(|(&task, confusion)| {
            let prf = macro_prf(&confusion);
            TaskMetrics { task, confusion, prf }
        })
        .collect();
    Ok(MetricsReport {
        tasks,
        contradictions: contradiction_count(preds),
        evaluated: preds.len(),
        three_way_ties: 0,
    })
}

/// Ensembles per-seed prediction sets into one final prediction per tweet.
pub fn ensemble_predictions(
    per_seed: &[Vec<TaskPredictions>],
    category_counts: [usize; 3],
) -> Result<(Vec<TaskPredictions>, usize)> {
    let num_seeds = per_seed.len();
    if num_seeds == 0 {
        return Err(Error::Schema("no seed prediction sets".into()));
    }
    let n = per_seed[0].len();
    if per_seed.iter().any(|s| s.len() != n) {
        return Err(Error::Schema("seed prediction sets differ in length".into()));
    }
    let mut out = Vec::with_capacity(n);
    let mut three_way = 0;
    for i in 0..n {
        let mut final_pred = [0usize; 3];
        for t in 0..3 {
            let votes: Vec<usize> = per_seed.iter().map(|s| s[i][t]).collect();
            let (winner, tie) = ensemble_vote(&votes, category_counts[t])?;
            if tie == TieKind::ThreeWay {
                three_way += 1;
            }
            final_pred[t] = winner;
        }
        out.push(final_pred);
    }
    Ok((out, three_way))
}

/// One row of the seed-sweep table: metrics of the first-k-seed ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub num_seeds: usize,
    pub task: Attribute,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// For k = 1..=K, ensembles the first k seed prediction sets (ascending seed
/// order) and reports macro P/R/F1 per task.
pub fn seed_sweep(
    per_seed: &[Vec<TaskPredictions>],
    golds: &[TaskPredictions],
    category_counts: [usize; 3],
) -> Result<Vec<SweepRow>> {
    if per_seed.is_empty() {
        return Err(Error::Schema("seed_sweep needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for k in 1..=per_seed.len() {
        let (preds, _) = ensemble_predictions(&per_seed[..k], category_counts)?;
        let report = evaluate_predictions(golds, &preds, category_counts)?;
        for tm in &report.tasks {
            rows.push(SweepRow {
                num_seeds: k,
                task: tm.task,
                precision: tm.prf.macro_precision,
                recall: tm.prf.macro_recall,
                f1: tm.prf.macro_f1,
            });
        }
    }
    Ok(rows)
}

/// Renders sweep rows as CSV for external plotting.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("num_seeds,task,precision,recall,f1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.num_seeds, r.task, r.precision, r.recall, r.f1
        ));
    }
    out
}
