//! Sequence-to-sequence forecasting models with hand-written reverse-mode
//! gradients, plus the MAE loss and Adam optimizer that drive them.
//!
//! Both models emit one output step per input step, so the prediction
//! sequence has the input's length and the horizon shift lives entirely in
//! how the `(x, y)` pairs were cut.

mod gcgru;
mod linear;

pub use gcgru::Gcgru;
pub use linear::LinearSeq2Seq;

use crate::batching::Batch;
use crate::dataset::GraphSpec;
use crate::preprocess::StandardizationStats;
use crate::seed::{mix, TAG_MODEL_INIT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("gradient coordinate {coordinate} is non-finite")]
    NonFiniteGradient { coordinate: usize },
    #[error("vector length {found} does not match parameter count {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] crate::dataset::DataError),
}

/// A model over a flat parameter vector. `forward` is deterministic in
/// `(params, input)`; `backward` returns the exact reverse-mode gradient of
/// the batch-mean MAE with the same dimension as the parameters.
pub trait SequenceModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn features(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Predict `input_len` steps from `input_len` observed steps. The hidden
    /// state (where one exists) starts at zero.
    fn forward(
        &self,
        x: &[f64],
        input_len: usize,
        graph: &GraphSpec,
    ) -> Result<Vec<f64>, ModelError>;

    /// Batch-mean MAE on standardized values and its gradient.
    fn backward(&self, batch: &Batch, graph: &GraphSpec) -> Result<(f64, Vec<f64>), ModelError>;
}

pub(crate) fn check_batch_shape(
    batch: &Batch,
    graph: &GraphSpec,
    features: usize,
) -> Result<(), ModelError> {
    if batch.input_len != batch.output_len {
        return Err(ModelError::ShapeMismatch(format!(
            "stepwise models need input_len == output_len, got {} and {}",
            batch.input_len, batch.output_len
        )));
    }
    if batch.nodes != graph.n() {
        return Err(ModelError::ShapeMismatch(format!(
            "batch carries {} nodes, graph has {}",
            batch.nodes,
            graph.n()
        )));
    }
    if batch.features != features {
        return Err(ModelError::ShapeMismatch(format!(
            "batch carries {} features, model expects {features}",
            batch.features
        )));
    }
    if batch.is_empty() {
        return Err(ModelError::ShapeMismatch("empty batch".to_string()));
    }
    Ok(())
}

/// Mean absolute error over all elements. With `destandardize` set, both
/// tensors are mapped back through `v * sigma + mu` first so the error is
/// reported in original units.
pub fn loss_mae(
    y_hat: &[f64],
    y: &[f64],
    stats: &StandardizationStats,
    destandardize: bool,
) -> Result<f64, ModelError> {
    if y_hat.len() != y.len() || y.is_empty() {
        return Err(ModelError::ShapeMismatch(format!(
            "prediction has {} elements, target has {}",
            y_hat.len(),
            y.len()
        )));
    }
    let mut sum = 0.0;
    if destandardize {
        for (a, b) in y_hat.iter().zip(y) {
            let da = a * stats.sigma + stats.mu;
            let db = b * stats.sigma + stats.mu;
            sum += (da - db).abs();
        }
    } else {
        for (a, b) in y_hat.iter().zip(y) {
            sum += (a - b).abs();
        }
    }
    Ok(sum / y_hat.len() as f64)
}

/// Subgradient of `|e|` with the tie broken to 0.
#[inline]
pub(crate) fn mae_sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adam optimizer state: first/second moments sized to the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// Textbook Adam update with bias correction. Deterministic in
/// `(state, params, grad)`; rejects non-finite gradients up front, naming
/// the offending coordinate.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
) -> Result<(), ModelError> {
    if params.len() != state.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: state.dim(),
            found: params.len(),
        });
    }
    if grad.len() != params.len() {
        return Err(ModelError::DimensionMismatch {
            expected: params.len(),
            found: grad.len(),
        });
    }
    if let Some(coordinate) = grad.iter().position(|g| !g.is_finite()) {
        return Err(ModelError::NonFiniteGradient { coordinate });
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Uniform init in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, one shared stream
/// per model so the whole vector is a pure function of the seed.
pub(crate) struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(mix(&[seed, TAG_MODEL_INIT])),
        }
    }

    pub(crate) fn fill(&mut self, out: &mut Vec<f64>, count: usize, fan_in: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..count {
            out.push(self.rng.gen_range(-bound..=bound));
        }
    }
}

/// Which model to build, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelConfig {
    Linear,
    Gcgru { hidden: usize, diffusion_order: usize },
}

impl ModelConfig {
    pub fn build(&self, features: usize, seed: u64) -> AnyModel {
        match *self {
            ModelConfig::Linear => AnyModel::Linear(LinearSeq2Seq::new(features, seed)),
            ModelConfig::Gcgru { hidden, diffusion_order } => {
                AnyModel::Gcgru(Gcgru::new(features, hidden, diffusion_order, seed))
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            ModelConfig::Linear => "model=linear".to_string(),
            ModelConfig::Gcgru { hidden, diffusion_order } => {
                format!("model=gcgru\nhidden={hidden}\ndiffusion_order={diffusion_order}")
            }
        }
    }
}

/// Enum dispatch over the concrete models.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Linear(LinearSeq2Seq),
    Gcgru(Gcgru),
}

impl SequenceModel for AnyModel {
    fn name(&self) -> &'static str {
        match self {
            AnyModel::Linear(m) => m.name(),
            AnyModel::Gcgru(m) => m.name(),
        }
    }

    fn features(&self) -> usize {
        match self {
            AnyModel::Linear(m) => m.features(),
            AnyModel::Gcgru(m) => m.features(),
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            AnyModel::Linear(m) => m.params(),
            AnyModel::Gcgru(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            AnyModel::Linear(m) => m.params_mut(),
            AnyModel::Gcgru(m) => m.params_mut(),
        }
    }

    fn forward(
        &self,
        x: &[f64],
        input_len: usize,
        graph: &GraphSpec,
    ) -> Result<Vec<f64>, ModelError> {
        match self {
            AnyModel::Linear(m) => m.forward(x, input_len, graph),
            AnyModel::Gcgru(m) => m.forward(x, input_len, graph),
        }
    }

    fn backward(&self, batch: &Batch, graph: &GraphSpec) -> Result<(f64, Vec<f64>), ModelError> {
        match self {
            AnyModel::Linear(m) => m.backward(batch, graph),
            AnyModel::Gcgru(m) => m.backward(batch, graph),
        }
    }
}

/// Write the flat parameter vector as an stb file (`|theta| x 1 x 1`) next
/// to a `key=value` config sidecar.
pub fn save_checkpoint(
    model: &impl SequenceModel,
    extra: &[(String, String)],
    stb_path: impl AsRef<Path>,
    cfg_path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let theta = model.params().to_vec();
    let signal = crate::dataset::TemporalSignal::new(theta.len(), 1, 1, theta)?;
    crate::dataset::save_signal(&signal, stb_path, crate::dataset::SignalFormat::Stb)?;
    let mut f = fs::File::create(cfg_path)?;
    writeln!(f, "# stib checkpoint v1")?;
    writeln!(f, "model={}", model.name())?;
    writeln!(f, "features={}", model.features())?;
    writeln!(f, "params={}", model.params().len())?;
    for (k, v) in extra {
        writeln!(f, "{k}={v}")?;
    }
    Ok(())
}
