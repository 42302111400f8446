//! Convolutional regression network mapping a shape image to its torsional
//! rigidity, trained by backpropagation on the penalized squared error.

mod checkpoint;
mod layers;
mod model;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, load as load_checkpoint,
};
pub use checkpoint::{save as save_checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use layers::{Conv2d, Dense, Layer};
pub use model::{loss, mse, Architecture, Gradients, LayerSpec, Model, Trace};
pub use tensor::{Scalar, Tensor};
pub use train::{
    evaluate_mse, history_csv, train, EpochRecord, OptimizerKind, OptimizerState, TrainConfig,
    TrainOutcome, FINE_TUNE_DIVISOR, HISTORY_HEADER,
};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{0}")]
    Config(String),
    #[error("backward called before any forward pass was recorded")]
    NoForward,
    #[error("trace does not belong to this model: {0}")]
    TraceMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("{preds} predictions for {targets} targets")]
    Length { preds: usize, targets: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SurrogateError>;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest relative deviation over the compared parameters.
    pub worst_relative_error: f64,
    pub compared: usize,
    /// Parameters whose ±ε probes crossed a ReLU or max-pool switch, where
    /// the loss is not differentiable over the stencil.
    pub skipped: usize,
}

/// Compares the analytic gradient of the penalized loss with central
/// differences of step `eps` for every parameter. Dropout masks are held
/// fixed by reseeding each evaluation.
pub fn gradient_check(
    model: &Model<f64>,
    x: &Tensor<f64>,
    targets: &[f64],
    lambda: f64,
    eps: f64,
    seed: u64,
) -> Result<GradientCheck> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let probe_loss = |m: &Model<f64>| -> Result<(f64, u64)> {
        let (y, trace) = m.forward_trace(x, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let preds: Vec<f64> = y.data().to_vec();
        Ok((
            loss(&preds, targets, &m.weights(), lambda)?,
            trace.activation_pattern(),
        ))
    };
    let analytic = model
        .loss_and_gradient(x, targets, lambda, &mut ChaCha8Rng::seed_from_u64(seed))?
        .1
        .flat();
    let (_, pattern) = probe_loss(model)?;
    let mut probe = model.clone();
    let mut report = GradientCheck {
        worst_relative_error: 0.0,
        compared: 0,
        skipped: 0,
    };
    let mut k = 0;
    for b in 0..probe.params().len() {
        for i in 0..probe.params()[b].len() {
            let original = probe.params()[b][i];
            probe.params_mut()[b][i] = original + eps;
            let (plus, pattern_plus) = probe_loss(&probe)?;
            probe.params_mut()[b][i] = original - eps;
            let (minus, pattern_minus) = probe_loss(&probe)?;
            probe.params_mut()[b][i] = original;
            let a = analytic[k];
            k += 1;
            if pattern_plus != pattern || pattern_minus != pattern {
                report.skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * eps);
            // Absolute floor keeps round-off on vanishing gradients from
            // dominating the ratio.
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            report.worst_relative_error = report.worst_relative_error.max(rel);
            report.compared += 1;
        }
    }
    Ok(report)
}
