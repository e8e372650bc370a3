//! The differentiable classifier: hashed bag-of-tokens encoder projection,
//! shared trunk with LeakyReLU + inverted dropout, per-task softmax heads,
//! and the CE / KL+NLL / multitask objectives with analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::NormalizedText;

pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub num_categories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_dim: usize,
    pub hidden_dim: usize,
    pub intermediate_dim: usize,
    pub tasks: Vec<TaskSpec>,
    pub dropout_p: f64,
    pub leaky_relu_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_dim: 4096,
            hidden_dim: 64,
            intermediate_dim: 364,
            tasks: vec![
                TaskSpec { id: "aggression".into(), num_categories: 3 },
                TaskSpec { id: "target".into(), num_categories: 2 },
                TaskSpec { id: "type".into(), num_categories: 3 },
            ],
            dropout_p: 0.2,
            leaky_relu_slope: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_dim == 0 || self.hidden_dim == 0 || self.intermediate_dim == 0 {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must be in [0, 1)".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task required".into()));
        }
        for t in &self.tasks {
            if !(2..=3).contains(&t.num_categories) {
                return Err(Error::Config(format!(
                    "task {}: category count must be 2 or 3",
                    t.id
                )));
            }
        }
        Ok(())
    }
}

/// Dense layer stored row-major: `w[o * in_dim + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Linear {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = self.b.clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            *out_v += row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
        out
    }

    /// Accumulates `dy ⊗ x` into `gw` and `dy` into `gb`, and returns `W^T dy`.
    fn backward(&self, x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &d) in dy.iter().enumerate() {
            gb[o] += d;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += d * x[i];
                dx[i] += d * row[i];
            }
        }
        dx
    }
}

/// All trainable tensors: encoder projection, shared trunk, per-task heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Linear,
    pub trunk: Linear,
    pub heads: Vec<Linear>,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        ModelParams {
            encoder: Linear::glorot(config.encoder_dim, config.hidden_dim, rng),
            trunk: Linear::glorot(config.hidden_dim, config.intermediate_dim, rng),
            heads: config
                .tasks
                .iter()
                .map(|t| Linear::glorot(config.intermediate_dim, t.num_categories, rng))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            encoder: Linear::zeros(self.encoder.in_dim, self.encoder.out_dim),
            trunk: Linear::zeros(self.trunk.in_dim, self.trunk.out_dim),
            heads: self
                .heads
                .iter()
                .map(|h| Linear::zeros(h.in_dim, h.out_dim))
                .collect(),
        }
    }

    /// Flat views of every tensor, in declared order; `head_of[i]` is the head
    /// index owning tensor `i` (None for shared tensors). Used by the optimizer
    /// for per-head learning-rate overrides and by the checkpoint format.
    pub fn tensors(&self) -> Vec<(&[f64], Option<usize>)> {
        let mut v: Vec<(&[f64], Option<usize>)> = vec![
            (&self.encoder.w, None),
            (&self.encoder.b, None),
            (&self.trunk.w, None),
            (&self.trunk.b, None),
        ];
        for (i, h) in self.heads.iter().enumerate() {
            v.push((&h.w, Some(i)));
            v.push((&h.b, Some(i)));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut Vec<f64>, Option<usize>)> {
        let mut v: Vec<(&mut Vec<f64>, Option<usize>)> = vec![
            (&mut self.encoder.w, None),
            (&mut self.encoder.b, None),
            (&mut self.trunk.w, None),
            (&mut self.trunk.b, None),
        ];
        for (i, h) in self.heads.iter_mut().enumerate() {
            v.push((&mut h.w, Some(i)));
            v.push((&mut h.b, Some(i)));
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(t, _)| t.iter().all(|x| x.is_finite()))
    }
}

/// Versioned JSON checkpoint; round-trips bit-exact (serde_json emits the
/// shortest f64 representation, which parses back to the identical bits).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            params,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Schema(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Ok(ck)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hashed bag-of-tokens feature vector: each token lands in a signed hash
/// bucket; the result is L2-normalized (zero vector for empty text).
pub fn encode(text: &NormalizedText, config: &ModelConfig) -> Vec<f64> {
    let dim = config.encoder_dim;
    let mut v = vec![0.0f64; dim];
    for tok in text.tokens() {
        let h = fnv1a(tok.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate activations of one forward pass, kept so the backward pass
/// reuses the identical dropout mask.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub features: Vec<f64>,
    pub hidden: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub dropout_mask: Option<Vec<f64>>,
    pub trunk_out: Vec<f64>,
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}

/// Forward pass producing per-task probability vectors.
///
/// h = enc(x); z = Dropout(LeakyReLU(trunk(h))); p_t = softmax(head_t(z)).
/// Dropout is inverted (scaled by 1/(1-p) at train time) and disabled in eval
/// mode, where the output is independent of `rng`.
pub fn forward(
    params: &ModelParams,
    features: &[f64],
    config: &ModelConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<ForwardCache> {
    if features.len() != config.encoder_dim {
        return Err(Error::ShapeMismatch {
            expected: config.encoder_dim,
            got: features.len(),
            context: "feature vector".into(),
        });
    }
    let hidden = params.encoder.apply(features);
    let pre_activation = params.trunk.apply(&hidden);
    let slope = config.leaky_relu_slope;
    let mut z: Vec<f64> = pre_activation
        .iter()
        .map(|&u| if u > 0.0 { u } else { slope * u })
        .collect();
    let dropout_mask = if mode == Mode::Train && config.dropout_p > 0.0 {
        let keep = 1.0 - config.dropout_p;
        let mask: Vec<f64> = z
            .iter()
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        for (zi, m) in z.iter_mut().zip(&mask) {
            *zi *= m;
        }
        Some(mask)
    } else {
        None
    };
    let logits: Vec<Vec<f64>> = params.heads.iter().map(|h| h.apply(&z)).collect();
    let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l)).collect();
    Ok(ForwardCache {
        features: features.to_vec(),
        hidden,
        pre_activation,
        dropout_mask,
        trunk_out: z,
        logits,
        probs,
    })
}

/// Loss function selector, objective scalars, and per-task mixing weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub alpha: f64,
    pub beta: f64,
    pub softmax_targets: bool,
    /// Documented variant: swap the KL arguments to match the literal
    /// prediction-first notation instead of the target-first form.
    #[serde(default)]
    pub kl_swap_args: bool,
    /// Per-task, per-category class weights.
    pub class_weights: Vec<Vec<f64>>,
    pub task_lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Klnll,
}

impl LossConfig {
    pub fn ce(class_weights: Vec<Vec<f64>>, task_lambdas: Vec<f64>) -> Self {
        LossConfig {
            kind: LossKind::Ce,
            alpha: 0.0,
            beta: 1.0,
            softmax_targets: false,
            kl_swap_args: false,
            class_weights,
            task_lambdas,
        }
    }

    pub fn klnll(
        alpha: f64,
        beta: f64,
        softmax_targets: bool,
        class_weights: Vec<Vec<f64>>,
        task_lambdas: Vec<f64>,
    ) -> Self {
        LossConfig {
            kind: LossKind::Klnll,
            alpha,
            beta,
            softmax_targets,
            kl_swap_args: false,
            class_weights,
            task_lambdas,
        }
    }
}

fn clamped_ln(p: f64) -> f64 {
    p.max(PROB_EPS).ln()
}

/// Weighted cross entropy against the silver label: `-w[silver] * ln p[silver]`.
pub fn loss_ce(p: &[f64], silver: usize, weights: &[f64]) -> f64 {
    -weights[silver] * clamped_ln(p[silver])
}

/// `KL(t || p) = Σ_j t_j (ln t_j - ln p_j)` with `0 ln 0 = 0`.
pub fn kl_div(t: &[f64], p: &[f64]) -> f64 {
    t.iter()
        .zip(p)
        .map(|(&tj, &pj)| {
            if tj <= 0.0 {
                0.0
            } else {
                tj * (tj.ln() - clamped_ln(pj))
            }
        })
        .sum()
}

/// Combined objective: `alpha * KL(target, p) + beta * (-w[silver] ln p[silver])`.
/// The KL target is `softmax(soft)` when `softmax_targets` is set, else the raw
/// soft label; class weights apply only to the NLL term.
pub fn loss_klnll(p: &[f64], soft: &[f64], silver: usize, cfg: &LossConfig, weights: &[f64]) -> f64 {
    let target = if cfg.softmax_targets {
        softmax(soft)
    } else {
        soft.to_vec()
    };
    let kl = if cfg.kl_swap_args {
        kl_div(p, &target)
    } else {
        kl_div(&target, p)
    };
    cfg.alpha * kl + cfg.beta * loss_ce(p, silver, weights)
}

/// `Σ_t λ_t L_t`.
pub fn loss_multitask(task_losses: &[f64], lambdas: &[f64]) -> f64 {
    task_losses
        .iter()
        .zip(lambdas)
        .map(|(l, lam)| lam * l)
        .sum()
}

/// One sample's targets: per-task soft label and silver index.
#[derive(Debug, Clone)]
pub struct SampleTargets {
    pub soft: Vec<Vec<f64>>,
    pub silver: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<SampleTargets>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Mean combined loss over the batch.
    pub loss: f64,
    /// Mean per-task losses (before lambda weighting).
    pub task_losses: Vec<f64>,
    pub grads: ModelParams,
}

/// Per-sample loss under the configured objective; also returns the gradient
/// of the (lambda-weighted) loss with respect to each task's logits.
fn sample_loss_and_dlogits(
    cache: &ForwardCache,
    targets: &SampleTargets,
    cfg: &LossConfig,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut task_losses = Vec::with_capacity(cache.probs.len());
    let mut dlogits = Vec::with_capacity(cache.probs.len());
    for (t, p) in cache.probs.iter().enumerate() {
        let w = &cfg.class_weights[t];
        let silver = targets.silver[t];
        let lam = cfg.task_lambdas[t];
        let (loss, dlogit) = match cfg.kind {
            LossKind::Ce => {
                let loss = loss_ce(p, silver, w);
                let d: Vec<f64> = p
                    .iter()
                    .enumerate()
                    .map(|(j, &pj)| {
                        let ind = if j == silver { 1.0 } else { 0.0 };
                        w[silver] * (pj - ind)
                    })
                    .collect();
                (loss, d)
            }
            LossKind::Klnll => {
                let loss = loss_klnll(p, &targets.soft[t], silver, cfg, w);
                let target = if cfg.softmax_targets {
                    softmax(&targets.soft[t])
                } else {
                    targets.soft[t].clone()
                };
                let d: Vec<f64> = if cfg.kl_swap_args {
                    // d/dlogit_j of KL(p || target) = p_j (ln p_j - ln t_j - KL)
                    let kl = kl_div(p, &target);
                    p.iter()
                        .enumerate()
                        .map(|(j, &pj)| {
                            let ind = if j == silver { 1.0 } else { 0.0 };
                            let kl_term =
                                pj * (clamped_ln(pj) - clamped_ln(target[j]) - kl);
                            cfg.alpha * kl_term + cfg.beta * w[silver] * (pj - ind)
                        })
                        .collect()
                } else {
                    // d/dlogit_j of KL(target || p) = p_j - t_j
                    p.iter()
                        .enumerate()
                        .map(|(j, &pj)| {
                            let ind = if j == silver { 1.0 } else { 0.0 };
                            cfg.alpha * (pj - target[j])
                                + cfg.beta * w[silver] * (pj - ind)
                        })
                        .collect()
                };
                (loss, d)
            }
        };
        task_losses.push(loss);
        dlogits.push(dlogit.into_iter().map(|d| lam * d).collect());
    }
    (task_losses, dlogits)
}

/// Forward + analytic backward over a batch. Gradients are exact derivatives
/// of the mean batch loss; the dropout mask drawn in the forward pass is the
/// one differentiated through.
pub fn batch_backward(
    params: &ModelParams,
    batch: &Batch,
    loss_cfg: &LossConfig,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::Schema("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut mean_task_losses = vec![0.0; params.heads.len()];
    let mut total = 0.0;
    for (features, targets) in batch.features.iter().zip(&batch.targets) {
        let cache = forward(params, features, config, mode, rng)?;
        let (task_losses, dlogits) = sample_loss_and_dlogits(&cache, targets, loss_cfg);
        let combined = loss_multitask(&task_losses, &loss_cfg.task_lambdas);
        if !combined.is_finite() {
            return Err(Error::NonFinite(format!(
                "batch loss became non-finite (task losses {task_losses:?})"
            )));
        }
        total += combined / n;
        for (acc, l) in mean_task_losses.iter_mut().zip(&task_losses) {
            *acc += l / n;
        }
        // Backprop; 1/N folds into the logit gradients.
        let mut dz = vec![0.0; cache.trunk_out.len()];
        for (t, head) in params.heads.iter().enumerate() {
            let dlogit: Vec<f64> = dlogits[t].iter().map(|d| d / n).collect();
            let ghead = &mut grads.heads[t];
            let dxt = head.backward(&cache.trunk_out, &dlogit, &mut ghead.w, &mut ghead.b);
            for (a, b) in dz.iter_mut().zip(&dxt) {
                *a += b;
            }
        }
        if let Some(mask) = &cache.dropout_mask {
            for (d, m) in dz.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        let slope = config.leaky_relu_slope;
        let du: Vec<f64> = dz
            .iter()
            .zip(&cache.pre_activation)
            .map(|(&d, &u)| if u > 0.0 { d } else { slope * d })
            .collect();
        let dh = params
            .trunk
            .backward(&cache.hidden, &du, &mut grads.trunk.w, &mut grads.trunk.b);
        params.encoder.backward(
            &cache.features,
            &dh,
            &mut grads.encoder.w,
            &mut grads.encoder.b,
        );
    }
    Ok(BatchResult {
        loss: total,
        task_losses: mean_task_losses,
        grads,
    })
}

/// Eval-mode prediction: per-task argmax category indices.
pub fn predict(
    params: &ModelParams,
    features: &[f64],
    config: &ModelConfig,
) -> Result<Vec<usize>> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let cache = forward(params, features, config, Mode::Eval, &mut rng)?;
    Ok(cache
        .probs
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
                .map(|(i, _)| i)
                .expect("non-empty")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            encoder_dim: 8,
            hidden_dim: 4,
            intermediate_dim: 5,
            tasks: vec![
                TaskSpec { id: "aggression".into(), num_categories: 3 },
                TaskSpec { id: "target".into(), num_categories: 2 },
                TaskSpec { id: "type".into(), num_categories: 3 },
            ],
            dropout_p: 0.2,
            leaky_relu_slope: 0.01,
        }
    }

    #[test]
    fn encode_contract() {
        let cfg = ModelConfig::default();
        let zero = encode(&NormalizedText(String::new()), &cfg);
        assert!(zero.iter().all(|&x| x == 0.0));
        let v = encode(&NormalizedText("hello world".into()), &cfg);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let a = encode(&NormalizedText("a b".into()), &cfg);
        let b = encode(&NormalizedText("b a".into()), &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_props() {
        let p = softmax(&[1.0, 0.0, 0.0]);
        assert!((p[0] - 0.576).abs() < 1e-3);
        assert!((p[1] - 0.212).abs() < 1e-3);
        assert!((p[2] - 0.212).abs() < 1e-3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // translation invariance
        let q = softmax(&[11.0, 10.0, 10.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_zero_params_uniform() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).zeros_like();
        let features = vec![0.3; cfg.encoder_dim];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = forward(&params, &features, &cfg, Mode::Eval, &mut rng).unwrap();
        for (p, task) in out.probs.iter().zip(&cfg.tasks) {
            let u = 1.0 / task.num_categories as f64;
            for &pi in p {
                assert!((pi - u).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_mode_rng_independent() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let features = vec![0.5; cfg.encoder_dim];
        let a = forward(&params, &features, &cfg, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let b = forward(&params, &features, &cfg, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(99))
            .unwrap();
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn forward_shape_mismatch_rejected() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let err = forward(&params, &[0.0; 3], &cfg, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(err.is_err());
    }

    #[test]
    fn loss_ce_values() {
        assert_eq!(loss_ce(&[1.0, 0.0], 0, &[1.0, 1.0]), -0.0);
        let l = loss_ce(&[0.5, 0.5], 0, &[1.0, 1.0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l2 = loss_ce(&[0.5, 0.5], 0, &[2.0, 1.0]);
        assert!((l2 - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn klnll_reduces_to_ce() {
        let cfg = LossConfig {
            kind: LossKind::Klnll,
            alpha: 0.0,
            beta: 1.0,
            softmax_targets: false,
            kl_swap_args: false,
            class_weights: vec![vec![1.0; 3]],
            task_lambdas: vec![1.0],
        };
        let p = [0.2, 0.5, 0.3];
        let soft = [0.4, 0.4, 0.2];
        let w = [1.3, 0.7, 2.0];
        for silver in 0..3 {
            let a = loss_klnll(&p, &soft, silver, &cfg, &w);
            let b = loss_ce(&p, silver, &w);
            assert_eq!(a, b, "must match bit-for-bit");
        }
    }

    #[test]
    fn kl_identical_zero() {
        let t = [0.3, 0.45, 0.25];
        assert!(kl_div(&t, &t).abs() < 1e-12);
        assert_eq!(kl_div(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn kl_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let t: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let raw2: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s2: f64 = raw2.iter().sum();
            let p: Vec<f64> = raw2.iter().map(|x| x / s2).collect();
            assert!(kl_div(&t, &p) >= -1e-12);
        }
    }

    #[test]
    fn multitask_weighting() {
        assert_eq!(loss_multitask(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), 6.0);
        let l = loss_multitask(&[1.0, 1.0, 1.0], &[0.2, 0.2, 1.0]);
        assert!((l - 1.4).abs() < 1e-12);
    }

    fn random_batch(cfg: &ModelConfig, n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..n)
            .map(|_| (0..cfg.encoder_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets = (0..n)
            .map(|_| {
                let soft: Vec<Vec<f64>> = cfg
                    .tasks
                    .iter()
                    .map(|t| {
                        let raw: Vec<f64> =
                            (0..t.num_categories).map(|_| rng.gen_range(0.1..1.0)).collect();
                        let s: f64 = raw.iter().sum();
                        raw.into_iter().map(|x| x / s).collect()
                    })
                    .collect();
                let silver = cfg
                    .tasks
                    .iter()
                    .map(|t| rng.gen_range(0..t.num_categories))
                    .collect();
                SampleTargets { soft, silver }
            })
            .collect();
        Batch { features, targets }
    }

    fn loss_cfg_for(cfg: &ModelConfig, kind: LossKind, lambdas: Vec<f64>) -> LossConfig {
        let weights = cfg
            .tasks
            .iter()
            .map(|t| (0..t.num_categories).map(|i| 1.0 + i as f64 * 0.5).collect())
            .collect();
        LossConfig {
            kind,
            alpha: 0.7,
            beta: 0.4,
            softmax_targets: true,
            kl_swap_args: false,
            class_weights: weights,
            task_lambdas: lambdas,
        }
    }

    #[test]
    fn zero_lambdas_zero_grads() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let batch = random_batch(&cfg, 3, 11);
        let lcfg = loss_cfg_for(&cfg, LossKind::Klnll, vec![0.0, 0.0, 0.0]);
        let out = batch_backward(
            &params,
            &batch,
            &lcfg,
            &cfg,
            Mode::Eval,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(out
            .grads
            .tensors()
            .iter()
            .all(|(t, _)| t.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn doubling_beta_doubles_nll_gradient() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let batch = random_batch(&cfg, 2, 11);
        let mut l1 = loss_cfg_for(&cfg, LossKind::Klnll, vec![1.0; 3]);
        l1.alpha = 0.0;
        let mut l2 = l1.clone();
        l2.beta *= 2.0;
        let g1 = batch_backward(&params, &batch, &l1, &cfg, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g2 = batch_backward(&params, &batch, &l2, &cfg, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for ((a, _), (b, _)) in g1.grads.tensors().iter().zip(g2.grads.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let ck = Checkpoint::new(cfg, params);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.params, back.params);
        assert_eq!(ck.config, back.config);
    }
}
