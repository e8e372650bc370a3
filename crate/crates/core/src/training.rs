//! Optimization loop, data splitting, and k-fold hyperparameter tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{macro_prf, ConfusionMatrix};
use crate::model::{
    batch_backward, predict, Batch, LossConfig, Mode, ModelConfig, ModelParams, SampleTargets,
};

/// Training regime: one task in isolation, or all tasks jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "task")]
pub enum Regime {
    Single(usize),
    Multitask,
}

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-head learning-rate overrides: (task index, lr).
    #[serde(default)]
    pub head_learning_rates: Vec<(usize, f64)>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub regime: Regime,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Effective per-task lambdas: single-task regimes zero out other tasks.
    pub fn effective_lambdas(&self, num_tasks: usize) -> Vec<f64> {
        match self.regime {
            Regime::Multitask => self.loss.task_lambdas.clone(),
            Regime::Single(t) => (0..num_tasks)
                .map(|i| if i == t { self.loss.task_lambdas.get(i).copied().unwrap_or(1.0) } else { 0.0 })
                .collect(),
        }
    }

    fn lr_for_head(&self, head: Option<usize>) -> f64 {
        match head {
            Some(h) => self
                .head_learning_rates
                .iter()
                .find(|(i, _)| *i == h)
                .map(|(_, lr)| *lr)
                .unwrap_or(self.learning_rate),
            None => self.learning_rate,
        }
    }
}

/// Per-parameter Adam moment accumulators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(t, _)| t.len()).collect();
        OptimizerState {
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One AdamW update in place: bias-corrected Adam moments plus decoupled
/// weight decay applied separately from the adaptive step. Per-head learning
/// rate overrides apply to both the adaptive step and the decay.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    for (g, _) in grads.tensors() {
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("gradient contains non-finite values".into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let opt = &cfg.optimizer;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let grad_tensors = grads.tensors();
    for (idx, (theta, head)) in params.tensors_mut().into_iter().enumerate() {
        let lr = cfg.lr_for_head(head);
        let g = grad_tensors[idx].0;
        let m = &mut state.first_moment[idx];
        let v = &mut state.second_moment[idx];
        for i in 0..theta.len() {
            // Decoupled decay first, then the adaptive update.
            theta[i] -= lr * opt.weight_decay * theta[i];
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + opt.epsilon);
        }
    }
    Ok(())
}

/// Train/test split sizes and fold count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            folds: 4,
            seed: 0,
        }
    }
}

/// Seeded shuffle then prefix split; train size is `round(fraction * n)`.
pub fn split<T: Clone>(examples: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    if examples.len() < 2 {
        return Err(Error::Schema("split needs at least 2 examples".into()));
    }
    if !(0.0..1.0).contains(&spec.train_fraction) || spec.train_fraction == 0.0 {
        return Err(Error::Config("train_fraction must be in (0, 1)".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let cut = (spec.train_fraction * examples.len() as f64).round() as usize;
    let cut = cut.clamp(1, examples.len() - 1);
    let train = order[..cut].iter().map(|&i| examples[i].clone()).collect();
    let test = order[cut..].iter().map(|&i| examples[i].clone()).collect();
    Ok((train, test))
}

/// Partitions indices into `k` folds after a seeded shuffle; the remainder is
/// spread one per fold.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config("folds must be >= 2".into()));
    }
    if n < k {
        return Err(Error::Schema(format!("cannot make {k} folds from {n} examples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[at..at + len].to_vec());
        at += len;
    }
    Ok(folds)
}

/// One training example: encoded features plus per-task targets.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub features: Vec<f64>,
    pub targets: SampleTargets,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_losses: Vec<f64>,
    pub combined_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// Set when training aborted on a non-finite loss; `params` then holds the
    /// last good checkpoint (the state at the start of that epoch).
    pub diverged: Option<(usize, String)>,
}

/// Mini-batch training loop. Shuffling is reseeded as `seed + epoch` so batch
/// order varies between epochs but the whole run is reproducible. A non-finite
/// loss aborts, returning the parameters from the last completed epoch.
pub fn train(
    examples: &[TrainExample],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    model_cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Schema("empty training set".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(model_cfg, &mut init_rng);
    let mut state = OptimizerState::new(&params);
    let mut loss_cfg = cfg.loss.clone();
    loss_cfg.task_lambdas = cfg.effective_lambdas(model_cfg.tasks.len());
    let mut history = Vec::new();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    for epoch in 0..cfg.max_epochs {
        let snapshot = params.clone();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut epoch_task_losses = vec![0.0; model_cfg.tasks.len()];
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch {
                features: chunk.iter().map(|&i| examples[i].features.clone()).collect(),
                targets: chunk.iter().map(|&i| examples[i].targets.clone()).collect(),
            };
            let result = match batch_backward(
                &params,
                &batch,
                &loss_cfg,
                model_cfg,
                Mode::Train,
                &mut dropout_rng,
            ) {
                Ok(r) => r,
                Err(Error::NonFinite(reason)) => {
                    return Ok(TrainResult {
                        params: snapshot,
                        history,
                        diverged: Some((epoch, reason)),
                    })
                }
                Err(e) => return Err(e),
            };
            adamw_step(&mut params, &result.grads, &mut state, cfg)?;
            epoch_loss += result.loss;
            for (a, l) in epoch_task_losses.iter_mut().zip(&result.task_losses) {
                *a += l;
            }
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            task_losses: epoch_task_losses.iter().map(|l| l / nb).collect(),
            combined_loss: epoch_loss / nb,
        });
    }
    Ok(TrainResult {
        params,
        history,
        diverged: None,
    })
}

/// Mean macro F1 of `params` on `examples`, averaged over the tasks selected
/// by the regime (one task for single, all for multitask).
pub fn mean_macro_f1(
    params: &ModelParams,
    examples: &[TrainExample],
    model_cfg: &ModelConfig,
    regime: Regime,
) -> Result<f64> {
    let tasks: Vec<usize> = match regime {
        Regime::Single(t) => vec![t],
        Regime::Multitask => (0..model_cfg.tasks.len()).collect(),
    };
    let mut cms: Vec<ConfusionMatrix> = model_cfg
        .tasks
        .iter()
        .map(|t| ConfusionMatrix::new(t.num_categories))
        .collect();
    for ex in examples {
        let preds = predict(params, &ex.features, model_cfg)?;
        for &t in &tasks {
            cms[t].record(ex.targets.silver[t], preds[t]);
        }
    }
    let mean = tasks
        .iter()
        .map(|&t| macro_prf(&cms[t]).macro_f1)
        .sum::<f64>()
        / tasks.len() as f64;
    Ok(mean)
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best: TrainConfig,
    pub best_index: usize,
    /// Mean cross-validation macro F1 per candidate, in enumeration order.
    pub scores: Vec<f64>,
}

/// K-fold grid search: trains each candidate on k-1 folds, scores macro F1 on
/// the held fold, averages, and returns the best candidate. Ties break to the
/// first candidate in enumeration order.
pub fn kfold_tune(
    examples: &[TrainExample],
    candidates: &[TrainConfig],
    spec: &SplitSpec,
    model_cfg: &ModelConfig,
) -> Result<TuneResult> {
    if candidates.is_empty() {
        return Err(Error::Config("empty candidate grid".into()));
    }
    let folds = fold_indices(examples.len(), spec.folds, spec.seed)?;
    if folds.iter().any(Vec::is_empty) {
        return Err(Error::Schema("empty fold".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let mut total = 0.0;
        for held in 0..folds.len() {
            let train_set: Vec<TrainExample> = folds
                .iter()
                .enumerate()
                .filter(|(f, _)| *f != held)
                .flat_map(|(_, idxs)| idxs.iter().map(|&i| examples[i].clone()))
                .collect();
            let held_set: Vec<TrainExample> =
                folds[held].iter().map(|&i| examples[i].clone()).collect();
            let result = train(&train_set, cand, model_cfg)?;
            total += mean_macro_f1(&result.params, &held_set, model_cfg, cand.regime)?;
        }
        scores.push(total / folds.len() as f64);
    }
    let mut best_index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best_index] {
            best_index = i;
        }
    }
    Ok(TuneResult {
        best: candidates[best_index].clone(),
        best_index,
        scores,
    })
}
