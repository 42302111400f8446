use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{mse, Gradients, Model};
use super::tensor::Scalar;
use super::{Result, SurrogateError};
use crate::raster::GrayImage;

/// Update rule applied to each mini-batch gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    Adam,
    /// Heavy-ball SGD with momentum 0.9.
    SgdMomentum,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd-momentum",
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            OptimizerKind::Adam => 1,
            OptimizerKind::SgdMomentum => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(OptimizerKind::Adam),
            2 => Some(OptimizerKind::SgdMomentum),
            _ => None,
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = SurrogateError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            other => Err(SurrogateError::Config(format!(
                "unknown optimizer `{other}`"
            ))),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;
const MOMENTUM: f64 = 0.9;

/// Moment estimates carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub kind: OptimizerKind,
    pub step: u64,
    /// First moment (Adam) or velocity (SGD).
    pub m: Vec<S>,
    /// Second moment; zeros for SGD.
    pub v: Vec<S>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(kind: OptimizerKind, params: usize) -> Self {
        Self {
            kind,
            step: 0,
            m: vec![S::zero(); params],
            v: vec![S::zero(); params],
        }
    }

    /// Applies one update with learning rate `lr`.
    pub fn apply(&mut self, model: &mut Model<S>, grads: &Gradients<S>, lr: f64) {
        self.step += 1;
        let mut offset = 0;
        let (b1, b2) = (S::from_f64_lossy(BETA1), S::from_f64_lossy(BETA2));
        let (one_b1, one_b2) = (S::one() - b1, S::one() - b2);
        let eps = S::from_f64_lossy(EPSILON);
        let t = self.step as i32;
        let step_size =
            S::from_f64_lossy(lr * (1.0 - BETA2.powi(t)).sqrt() / (1.0 - BETA1.powi(t)));
        let lr_s = S::from_f64_lossy(lr);
        let mu = S::from_f64_lossy(MOMENTUM);
        for (param, grad) in model.params_mut().into_iter().zip(&grads.buffers) {
            let n = param.len();
            let m = &mut self.m[offset..offset + n];
            let v = &mut self.v[offset..offset + n];
            match self.kind {
                OptimizerKind::Adam => {
                    for i in 0..n {
                        let g = grad[i];
                        m[i] = b1 * m[i] + one_b1 * g;
                        v[i] = b2 * v[i] + one_b2 * g * g;
                        param[i] -= step_size * m[i] / (v[i].sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    for i in 0..n {
                        m[i] = mu * m[i] + grad[i];
                        param[i] -= lr_s * m[i];
                    }
                }
            }
            offset += n;
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight-penalty coefficient λ.
    pub lambda: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Extra epochs after the main run, restarted from the best parameters
    /// with a fresh optimizer at a tenth of the learning rate.
    pub fine_tune_epochs: usize,
}

/// Learning-rate divisor of the fine-tuning phase.
pub const FINE_TUNE_DIVISOR: f64 = 10.0;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            lambda: 1e-6,
            dropout: 0.5,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            fine_tune_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SurrogateError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epochs must be positive".into());
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean regularized mini-batch loss, dropout active.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mse: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_mse";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e}",
            r.epoch, r.train_loss, r.val_loss, r.val_mse
        );
    }
    out
}

pub struct TrainOutcome<S> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model<S>,
    pub optimizer: OptimizerState<S>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Inference-mode training MSE before the first step.
    pub initial_train_mse: f64,
}

/// Inference-mode MSE of `model` on labelled images.
pub fn evaluate_mse<S: Scalar>(model: &Model<S>, data: &[(GrayImage, f64)]) -> Result<f64> {
    let images: Vec<&GrayImage> = data.iter().map(|(img, _)| img).collect();
    let targets: Vec<f64> = data.iter().map(|(_, y)| *y).collect();
    mse(&model.predict_batch(&images)?, &targets)
}

struct Best<S> {
    val_loss: f64,
    model: Model<S>,
    epoch: usize,
}

/// One optimizer run over the epoch numbers in `epochs` with a fresh
/// optimizer state; stops early after `cfg.patience` stale epochs.
#[allow(clippy::too_many_arguments)]
fn run_phase<S: Scalar>(
    model: &mut Model<S>,
    train: &[(GrayImage, f64)],
    val: &[(GrayImage, f64)],
    cfg: &TrainConfig,
    lr: f64,
    epochs: std::ops::RangeInclusive<usize>,
    best: &mut Best<S>,
    history: &mut Vec<EpochRecord>,
    on_epoch: &mut impl FnMut(&EpochRecord),
) -> Result<OptimizerState<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = OptimizerState::new(cfg.optimizer, model.param_count());
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<&GrayImage> = chunk.iter().map(|&i| &train[i].0).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| train[i].1).collect();
            let x = model.batch_tensor(&images)?;
            let (value, grads) = model.loss_and_gradient(&x, &targets, cfg.lambda, &mut rng)?;
            if !value.is_finite() {
                return Err(SurrogateError::Diverged { epoch });
            }
            optimizer.apply(model, &grads, lr);
            total += value;
            batches += 1;
        }
        let val_mse = evaluate_mse(model, val)?;
        let val_loss = val_mse + cfg.lambda * model.weight_penalty();
        if !val_loss.is_finite() {
            return Err(SurrogateError::Diverged { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            val_loss,
            val_mse,
        };
        on_epoch(&record);
        history.push(record);
        if val_loss < best.val_loss {
            *best = Best {
                val_loss,
                model: model.clone(),
                epoch,
            };
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    Ok(optimizer)
}

/// Mini-batch training with best-validation checkpointing and early
/// stopping, optionally followed by a fine-tuning phase. Each phase draws its
/// shuffles and dropout masks from a stream seeded with `cfg.seed`, so runs
/// are deterministic.
pub fn train<S: Scalar>(
    mut model: Model<S>,
    train: &[(GrayImage, f64)],
    val: &[(GrayImage, f64)],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(SurrogateError::Config(
            "training and validation sets must be nonempty".into(),
        ));
    }
    model.set_dropout(cfg.dropout)?;
    let initial_train_mse = evaluate_mse(&model, train)?;
    let mut best = Best {
        val_loss: f64::INFINITY,
        model: model.clone(),
        epoch: 0,
    };
    let mut history = Vec::new();
    let mut optimizer = run_phase(
        &mut model,
        train,
        val,
        cfg,
        cfg.learning_rate,
        1..=cfg.max_epochs,
        &mut best,
        &mut history,
        &mut on_epoch,
    )?;
    if cfg.fine_tune_epochs > 0 {
        let mut model = best.model.clone();
        let start = history.len() + 1;
        let epochs = start..=start + cfg.fine_tune_epochs - 1;
        let lr = cfg.learning_rate / FINE_TUNE_DIVISOR;
        optimizer = run_phase(
            &mut model,
            train,
            val,
            cfg,
            lr,
            epochs,
            &mut best,
            &mut history,
            &mut on_epoch,
        )?;
    }
    Ok(TrainOutcome {
        model: best.model,
        optimizer,
        history,
        best_epoch: best.epoch,
        initial_train_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::Architecture;
    use rand::Rng;

    fn toy_data(n: usize, side: usize, seed: u64) -> Vec<(GrayImage, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let fill: f32 = rng.gen_range(0.1..0.9);
                let data: Vec<f32> = (0..side * side)
                    .map(|_| if rng.gen::<f32>() < fill { 1.0 } else { 0.0 })
                    .collect();
                let mean = data.iter().sum::<f32>() as f64 / data.len() as f64;
                (GrayImage::new(side, data).unwrap(), mean * mean)
            })
            .collect()
    }

    #[test]
    fn history_respects_epoch_budget_and_is_deterministic() {
        let data = toy_data(20, 16, 1);
        let cfg = TrainConfig {
            max_epochs: 3,
            patience: 100,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let run = || {
            let model = Model::<f32>::build(Architecture::Desk, 16, 0.5, 2).unwrap();
            train(model, &data[..15], &data[15..], &cfg, |_| {}).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history.len(), 3);
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert!(history_csv(&a.history).lines().count() == 4);
        assert!(history_csv(&a.history).starts_with(HISTORY_HEADER));
    }

    #[test]
    fn zero_patience_stops_after_first_non_improving_epoch() {
        let data = toy_data(12, 16, 3);
        // A large step makes validation loss bounce quickly.
        let cfg = TrainConfig {
            max_epochs: 50,
            patience: 0,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let model = Model::<f32>::build(Architecture::Desk, 16, 0.5, 4).unwrap();
        let out = train(model, &data[..8], &data[8..], &cfg, |_| {}).unwrap();
        let h = &out.history;
        assert!(h.len() < 50);
        let last = h.len() - 1;
        let best_before = h[..last]
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(h[last].val_loss >= best_before);
        assert!(h[..last].windows(2).all(|w| w[1].val_loss < w[0].val_loss));
        assert_eq!(out.best_epoch, last);
    }

    #[test]
    fn empty_split_and_bad_config_rejected() {
        let data = toy_data(4, 16, 5);
        let model = Model::<f32>::build(Architecture::Desk, 16, 0.5, 4).unwrap();
        assert!(train(model.clone(), &data, &[], &TrainConfig::default(), |_| {}).is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(model, &data, &data, &cfg, |_| {}).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let data = toy_data(8, 16, 6);
        let cfg = TrainConfig {
            learning_rate: 1e30,
            optimizer: OptimizerKind::SgdMomentum,
            ..TrainConfig::default()
        };
        let model = Model::<f32>::build(Architecture::Desk, 16, 0.5, 4).unwrap();
        assert!(matches!(
            train(model, &data, &data, &cfg, |_| {}),
            Err(SurrogateError::Diverged { .. })
        ));
    }

    #[test]
    fn fine_tuning_extends_history_and_keeps_the_best_model() {
        let data = toy_data(20, 16, 7);
        let base = TrainConfig {
            max_epochs: 3,
            patience: 100,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let tuned = TrainConfig {
            fine_tune_epochs: 2,
            ..base.clone()
        };
        let model = Model::<f32>::build(Architecture::Desk, 16, 0.5, 2).unwrap();
        let plain = train(model.clone(), &data[..15], &data[15..], &base, |_| {}).unwrap();
        let out = train(model, &data[..15], &data[15..], &tuned, |_| {}).unwrap();
        assert_eq!(
            out.history.iter().map(|r| r.epoch).collect::<Vec<_>>(),
            [1, 2, 3, 4, 5]
        );
        assert_eq!(out.history[..3], plain.history[..]);
        let best = out
            .history
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.history[out.best_epoch - 1].val_loss, best);
        assert_eq!(
            evaluate_mse(&out.model, &data[15..]).unwrap()
                + base.lambda * out.model.weight_penalty(),
            best
        );
    }

    #[test]
    fn adam_first_step_moves_each_parameter_by_lr() {
        let mut model = Model::<f64>::build(Architecture::Desk, 8, 0.0, 1).unwrap();
        let before: Vec<f64> = model.params().concat();
        let grads = Gradients {
            buffers: model.params().iter().map(|p| vec![0.5; p.len()]).collect(),
        };
        let mut opt = OptimizerState::new(OptimizerKind::Adam, model.param_count());
        opt.apply(&mut model, &grads, 1e-3);
        let after: Vec<f64> = model.params().concat();
        for (a, b) in after.iter().zip(&before) {
            assert!(((b - a) - 1e-3).abs() < 1e-9);
        }
    }
}
