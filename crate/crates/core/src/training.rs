//! Mean squared error, Adam, the mini-batch loop and gradient checking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, init_params, ModelConfig, Parameters};
use crate::modality::TrainingExample;
use crate::numerics::{Rng, Tensor};
use crate::tokenizer::{encode, TokenSequence, Vocabulary};

/// A fixed, ordered collection of trainable tensors.
pub trait ParamSet {
    /// Named tensors in a stable order.
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    /// The same tensors, same order, mutably.
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
}

/// `(1/n) Σ (ŷᵢ − yᵢ)²`.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("loss over zero examples".into()));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(sum / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 3,
            seed: 0,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon.is_finite()
            && self.epsilon > 0.0
            && self.batch_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place. Nothing is modified if any
/// gradient is non-finite or mis-shaped.
pub fn adam_step<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    let named_grads = grads.tensors();
    let shapes: Vec<Vec<usize>> = params
        .tensors()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    if named_grads.len() != shapes.len() || state.m.len() != shapes.len() {
        return Err(Error::Shape("gradient/optimizer state does not match parameters".into()));
    }
    for ((name, g), (shape, m)) in named_grads.iter().zip(shapes.iter().zip(&state.m)) {
        if g.shape() != shape.as_slice() || m.shape() != shape.as_slice() {
            return Err(Error::Shape(format!("gradient `{name}` has shape {:?}", g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient `{name}`")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    for (i, p) in params.tensors_mut().into_iter().enumerate() {
        let g = named_grads[i].1.data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

pub fn encode_all(texts: &[&str], vocab: &Vocabulary, max_len: usize) -> Result<Vec<TokenSequence>> {
    texts.iter().map(|t| encode(t, vocab, max_len)).collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch Adam on MSE. Randomness comes from the `init`, `shuffle` and
/// `dropout` sub-streams of `train_config.seed`.
pub fn train(
    examples: &[TrainingExample],
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::Empty("training examples".into()));
    }
    model_config.validate()?;
    train_config.validate()?;
    if vocab.len() > model_config.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "vocabulary of {} tokens exceeds model vocab_size {}",
            vocab.len(),
            model_config.vocab_size
        )));
    }
    let texts: Vec<&str> = examples.iter().map(|e| e.input_text.as_str()).collect();
    let sequences = encode_all(&texts, vocab, model_config.max_len)?;
    let targets: Vec<f64> = examples.iter().map(|e| e.target).collect();

    let seed = train_config.seed;
    let mut params = init_params(model_config, &mut Rng::new(seed, "init"))?;
    let mut shuffle_rng = Rng::new(seed, "shuffle");
    let mut dropout_rng = Rng::new(seed, "dropout");
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_history = Vec::with_capacity(train_config.epochs);

    for epoch in 0..train_config.epochs {
        if train_config.shuffle_each_epoch {
            shuffle_rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        for (b, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let batch: Vec<TokenSequence> = chunk.iter().map(|&i| sequences[i].clone()).collect();
            let batch_targets: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let step = model::loss_and_gradients(
                &batch,
                &batch_targets,
                &params,
                model_config,
                Some(&mut dropout_rng),
                true,
            )?;
            if !step.loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            adam_step(&mut params, &step.grads, &mut state, train_config)?;
            total += step.loss * chunk.len() as f64;
        }
        loss_history.push(total / examples.len() as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_history,
    })
}

/// Inference-mode predictions for raw texts.
pub fn predict(
    texts: &[&str],
    vocab: &Vocabulary,
    params: &Parameters,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let sequences = encode_all(texts, vocab, config.max_len)?;
    model::forward(&sequences, params, config, None, false)
}

/// Loss-history CSV: `epoch,mean_loss`, epochs counted from 1.
pub fn loss_history_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-3;
/// Denominator floor for the element-wise relative error, so entries whose
/// true gradient is ~0 are judged on absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: (String, usize),
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= GRAD_CHECK_TOLERANCE
    }
}

/// Deliberate defects for checking that the gradient check can fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Multiply the GELU backward pass by this factor.
    GeluGradScale(f64),
}

pub(crate) fn compare_gradients<P: ParamSet + Clone>(
    params: &P,
    analytic: &P,
    mut loss: impl FnMut(&P) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (String::new(), 0),
        entries_checked: 0,
    };
    let names: Vec<(String, usize)> = params
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.len()))
        .collect();
    let grads: Vec<Vec<f64>> = analytic
        .tensors()
        .iter()
        .map(|(_, t)| t.data().to_vec())
        .collect();
    let mut probe = params.clone();
    for (ti, (name, len)) in names.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for j in 0..*len {
            let original = probe.tensors_mut()[ti].data()[j];
            probe.tensors_mut()[ti].data_mut()[j] = original + GRAD_CHECK_STEP;
            let up = loss(&probe)?;
            probe.tensors_mut()[ti].data_mut()[j] = original - GRAD_CHECK_STEP;
            let down = loss(&probe)?;
            probe.tensors_mut()[ti].data_mut()[j] = original;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let err = relative_error(grads[ti][j], numeric);
            report.entries_checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (name.clone(), j);
            }
        }
    }
    Ok(report)
}

/// The fixed batch used by [`grad_check`]: two random sequences with random targets.
pub fn grad_check_batch(config: &ModelConfig, seed: u64) -> (Vec<TokenSequence>, Vec<f64>) {
    use crate::tokenizer::{CLS_ID, PAD_ID, SEP_ID};
    let mut rng = Rng::new(seed, "grad-check-batch");
    let mut batch = Vec::new();
    let mut targets = Vec::new();
    for i in 0..2 {
        let inner = if i == 0 {
            config.max_len - 2
        } else {
            1 + rng.below(config.max_len - 2)
        };
        let mut ids = vec![CLS_ID];
        ids.extend((0..inner).map(|_| 4 + rng.below(config.vocab_size - 4) as u32));
        ids.push(SEP_ID);
        let true_length = ids.len();
        ids.resize(config.max_len, PAD_ID);
        batch.push(TokenSequence {
            mask: (0..config.max_len).map(|p| u8::from(p < true_length)).collect(),
            ids,
            true_length,
        });
        targets.push(2.0 * rng.normal());
    }
    (batch, targets)
}

/// Analytic gradients of the full encoder against central finite differences.
/// Dropout is disabled so the loss is a deterministic function of the weights.
pub fn grad_check(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    grad_check_with(config, seed, None)
}

pub fn grad_check_with(config: &ModelConfig, seed: u64, fault: Option<Fault>) -> Result<GradCheckReport> {
    config.validate()?;
    if config.parameter_count() > 200_000 || config.max_len < 3 {
        return Err(Error::InvalidArgument(
            "gradient check expects a micro-scale config".into(),
        ));
    }
    let gelu_scale = match fault {
        Some(Fault::GeluGradScale(s)) => s,
        None => 1.0,
    };
    let params = init_params(config, &mut Rng::new(seed, "init"))?;
    let (batch, targets) = grad_check_batch(config, seed);
    let analytic =
        model::loss_and_gradients_with(&batch, &targets, &params, config, None, false, gelu_scale)?;
    compare_gradients(&params, &analytic.grads, |p| {
        let preds = model::forward(&batch, p, config, None, false)?;
        mse_loss(&preds, &targets)
    })
}
