//! Single-layer LSTM over windows of a ticker's past percent changes.
//!
//! Gate blocks are stacked in the order input, forget, candidate, output, so
//! each `4h`-row weight splits into four `h`-row blocks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{check_layout, entries_of, fill_params, read_container, write_container, TensorEntry, LSTM_MAGIC};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{ExamplePrediction, MetricsReport};
use crate::modality::TargetMode;
use crate::numerics::{Rng, Tensor};
use crate::training::{adam_step, compare_gradients, mse_loss, AdamState, GradCheckReport, ParamSet, TrainConfig};

pub const LSTM_LABEL: &str = "lstm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub window: usize,
    pub hidden_dim: usize,
    pub train: TrainConfig,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            window: 5,
            hidden_dim: 64,
            train: TrainConfig {
                learning_rate: 5e-3,
                epochs: 20,
                ..TrainConfig::default()
            },
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("LSTM window and hidden_dim must be at least 1".into()));
        }
        if self.hidden_dim > 4096 || self.window > 4096 {
            return Err(Error::InvalidArgument("LSTM config is unreasonably large".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowExample {
    pub inputs: Vec<f64>,
    pub target: f64,
    /// Index of the target record in the source dataset.
    pub record_ref: usize,
}

/// Sliding windows of `k` consecutive percent changes per ticker, each
/// predicting the next one. Records of a ticker are ordered by date, ties by
/// position in the dataset.
pub fn build_windows(dataset: &Dataset, k: usize) -> Vec<WindowExample> {
    let mut by_ticker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        by_ticker.entry(r.ticker.as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    for idx in by_ticker.values_mut() {
        idx.sort_by_key(|&i| (dataset.records[i].date, i));
        for w in idx.windows(k + 1) {
            out.push(WindowExample {
                inputs: w[..k].iter().map(|&i| dataset.records[i].pct_change).collect(),
                target: dataset.records[w[k]].pct_change,
                record_ref: w[k],
            });
        }
    }
    out.sort_by_key(|w| w.record_ref);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[4h, 1]`
    pub input_weight: Tensor,
    /// `[4h, h]`
    pub recurrent_weight: Tensor,
    /// `[4h]`
    pub bias: Tensor,
    /// `[h]`
    pub head_weight: Tensor,
    /// `[1]`
    pub head_bias: Tensor,
}

impl LstmParams {
    pub fn zeros(hidden: usize) -> Self {
        LstmParams {
            input_weight: Tensor::zeros(&[4 * hidden, 1]),
            recurrent_weight: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
            head_weight: Tensor::zeros(&[hidden]),
            head_bias: Tensor::zeros(&[1]),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.head_weight.len()
    }

    pub fn layout(hidden: usize) -> Vec<TensorEntry> {
        let e = |name: &str, shape: Vec<usize>| TensorEntry {
            name: name.into(),
            shape,
        };
        vec![
            e("input_weight", vec![4 * hidden, 1]),
            e("recurrent_weight", vec![4 * hidden, hidden]),
            e("bias", vec![4 * hidden]),
            e("head_weight", vec![hidden]),
            e("head_bias", vec![1]),
        ]
    }
}

impl ParamSet for LstmParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("input_weight".into(), &self.input_weight),
            ("recurrent_weight".into(), &self.recurrent_weight),
            ("bias".into(), &self.bias),
            ("head_weight".into(), &self.head_weight),
            ("head_bias".into(), &self.head_bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.input_weight,
            &mut self.recurrent_weight,
            &mut self.bias,
            &mut self.head_weight,
            &mut self.head_bias,
        ]
    }
}

/// Uniform weights in ±1/√h, zero biases except a forget-gate bias of 1.
pub fn init_lstm(hidden: usize, rng: &mut Rng) -> LstmParams {
    let mut p = LstmParams::zeros(hidden);
    let bound = 1.0 / (hidden as f64).sqrt();
    for t in [&mut p.input_weight, &mut p.recurrent_weight, &mut p.head_weight] {
        for v in t.data_mut() {
            *v = bound * (2.0 * rng.uniform() - 1.0);
        }
    }
    for v in &mut p.bias.data_mut()[hidden..2 * hidden] {
        *v = 1.0;
    }
    p
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one time step.
#[derive(Debug, Clone)]
pub struct Step {
    pub input: f64,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates `[i, f, g, o]`, each of length h.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub steps: Vec<Step>,
    pub prediction: f64,
}

pub fn lstm_trace(inputs: &[f64], params: &LstmParams) -> Result<LstmTrace> {
    let h = params.hidden_dim();
    if params.input_weight.len() != 4 * h
        || params.recurrent_weight.shape() != [4 * h, h]
        || params.bias.len() != 4 * h
        || params.head_bias.len() != 1
    {
        return Err(Error::Shape("LSTM parameter shapes disagree".into()));
    }
    if inputs.is_empty() {
        return Err(Error::Empty("LSTM window".into()));
    }
    let wx = params.input_weight.data();
    let wh = params.recurrent_weight.data();
    let b = params.bias.data();
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut steps = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let mut gates = vec![0.0; 4 * h];
        for (r, z) in gates.iter_mut().enumerate() {
            let row = &wh[r * h..(r + 1) * h];
            let mut acc = wx[r] * x + b[r];
            for (w, hp) in row.iter().zip(&h_prev) {
                acc += w * hp;
            }
            *z = if (2 * h..3 * h).contains(&r) { acc.tanh() } else { sigmoid(acc) };
        }
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for j in 0..h {
            c[j] = gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j];
            hn[j] = gates[3 * h + j] * c[j].tanh();
        }
        steps.push(Step {
            input: x,
            h_prev: std::mem::replace(&mut h_prev, hn.clone()),
            c_prev: std::mem::replace(&mut c_prev, c.clone()),
            gates,
            c,
            h: hn,
        });
    }
    let prediction = params.head_bias.data()[0]
        + params.head_weight.data().iter().zip(&h_prev).map(|(w, v)| w * v).sum::<f64>();
    Ok(LstmTrace { steps, prediction })
}

pub fn lstm_forward(window: &WindowExample, params: &LstmParams) -> Result<f64> {
    lstm_trace(&window.inputs, params).map(|t| t.prediction)
}

/// Back-propagation through time of `dloss/dprediction = dpred`,
/// accumulated into `grads`.
pub fn lstm_backward(trace: &LstmTrace, dpred: f64, params: &LstmParams, grads: &mut LstmParams) {
    let h = params.hidden_dim();
    let wh = params.recurrent_weight.data();
    let last = &trace.steps.last().expect("non-empty trace").h;
    grads.head_bias.data_mut()[0] += dpred;
    for (g, v) in grads.head_weight.data_mut().iter_mut().zip(last) {
        *g += dpred * v;
    }
    let mut dh: Vec<f64> = params.head_weight.data().iter().map(|w| dpred * w).collect();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for step in trace.steps.iter().rev() {
        let g = &step.gates;
        for j in 0..h {
            let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = step.c[j].tanh();
            dc[j] += dh[j] * o * (1.0 - tc * tc);
            dz[j] = dc[j] * cand * i * (1.0 - i);
            dz[h + j] = dc[j] * step.c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc[j] * i * (1.0 - cand * cand);
            dz[3 * h + j] = dh[j] * tc * o * (1.0 - o);
            dc[j] *= f;
        }
        let gwx = grads.input_weight.data_mut();
        for r in 0..4 * h {
            gwx[r] += dz[r] * step.input;
        }
        for (gb, d) in grads.bias.data_mut().iter_mut().zip(&dz) {
            *gb += d;
        }
        let gwh = grads.recurrent_weight.data_mut();
        for r in 0..4 * h {
            for k in 0..h {
                gwh[r * h + k] += dz[r] * step.h_prev[k];
            }
        }
        dh.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..4 * h {
            for k in 0..h {
                dh[k] += wh[r * h + k] * dz[r];
            }
        }
    }
}

pub struct LstmGradients {
    pub loss: f64,
    pub predictions: Vec<f64>,
    pub grads: LstmParams,
}

/// Batch MSE and its gradient.
pub fn loss_and_gradients(batch: &[WindowExample], params: &LstmParams) -> Result<LstmGradients> {
    if batch.is_empty() {
        return Err(Error::Empty("LSTM batch".into()));
    }
    let traces = batch
        .iter()
        .map(|w| lstm_trace(&w.inputs, params))
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<f64> = traces.iter().map(|t| t.prediction).collect();
    let targets: Vec<f64> = batch.iter().map(|w| w.target).collect();
    let loss = mse_loss(&predictions, &targets)?;
    let mut grads = LstmParams::zeros(params.hidden_dim());
    let n = batch.len() as f64;
    for (t, y) in traces.iter().zip(&targets) {
        lstm_backward(t, 2.0 * (t.prediction - y) / n, params, &mut grads);
    }
    Ok(LstmGradients {
        loss,
        predictions,
        grads,
    })
}

#[derive(Debug, Clone)]
pub struct LstmOutcome {
    pub params: LstmParams,
    pub loss_history: Vec<f64>,
}

/// Mini-batch Adam on MSE, drawing from the `init` and `shuffle` streams.
pub fn train_lstm(windows: &[WindowExample], config: &LstmConfig) -> Result<LstmOutcome> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::Empty("no LSTM training windows".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.inputs.len() != config.window) {
        return Err(Error::Shape(format!(
            "window of length {} for a k = {} model",
            w.inputs.len(),
            config.window
        )));
    }
    let tc = &config.train;
    let mut params = init_lstm(config.hidden_dim, &mut Rng::new(tc.seed, "init"));
    let mut shuffle_rng = Rng::new(tc.seed, "shuffle");
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut loss_history = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        if tc.shuffle_each_epoch {
            shuffle_rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let batch: Vec<WindowExample> = chunk.iter().map(|&i| windows[i].clone()).collect();
            let step = loss_and_gradients(&batch, &params)?;
            if !step.loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            adam_step(&mut params, &step.grads, &mut state, tc)?;
            total += step.loss * chunk.len() as f64;
        }
        loss_history.push(total / windows.len() as f64);
    }
    Ok(LstmOutcome {
        params,
        loss_history,
    })
}

pub fn predict_lstm(windows: &[WindowExample], params: &LstmParams) -> Result<Vec<f64>> {
    windows.iter().map(|w| lstm_forward(w, params)).collect()
}

/// Scores the model with the shared report schema, version label `lstm`.
pub fn evaluate_lstm(windows: &[WindowExample], params: &LstmParams) -> Result<MetricsReport> {
    let preds = predict_lstm(windows, params)?;
    let per_example = windows
        .iter()
        .zip(preds)
        .map(|(w, p)| ExamplePrediction {
            record_ref: w.record_ref,
            prediction: p,
            actual: w.target,
        })
        .collect();
    MetricsReport::build(LSTM_LABEL, LSTM_LABEL, TargetMode::Regression, per_example)
}

/// BPTT gradients against central finite differences on random windows.
pub fn grad_check_lstm(hidden: usize, k: usize, seed: u64) -> Result<GradCheckReport> {
    if hidden == 0 || k == 0 || hidden > 16 || k > 16 {
        return Err(Error::InvalidArgument("gradient check expects a micro LSTM".into()));
    }
    let mut rng = Rng::new(seed, "grad-check");
    let mut params = init_lstm(hidden, &mut rng);
    for v in params.bias.data_mut() {
        *v += 0.5 * rng.normal();
    }
    let batch: Vec<WindowExample> = (0..3)
        .map(|i| WindowExample {
            inputs: (0..k).map(|_| 1.5 * rng.normal()).collect(),
            target: rng.normal(),
            record_ref: i,
        })
        .collect();
    let analytic = loss_and_gradients(&batch, &params)?;
    let targets: Vec<f64> = batch.iter().map(|w| w.target).collect();
    compare_gradients(&params, &analytic.grads, |p| {
        mse_loss(&predict_lstm(&batch, p)?, &targets)
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct LstmMeta {
    config: LstmConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCheckpoint {
    pub config: LstmConfig,
    pub params: LstmParams,
}

impl LstmCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = LstmMeta {
            config: self.config,
            tensors: entries_of(&self.params),
        };
        let tensors: Vec<&Tensor> = self.params.tensors().into_iter().map(|(_, t)| t).collect();
        write_container(LSTM_MAGIC, &meta, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, payload) = read_container(bytes, LSTM_MAGIC)?;
        let meta: LstmMeta =
            serde_json::from_slice(meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        meta.config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("LSTM config: {e}")))?;
        check_layout(&meta.tensors, &LstmParams::layout(meta.config.hidden_dim), payload)?;
        let mut params = LstmParams::zeros(meta.config.hidden_dim);
        fill_params(&mut params, payload);
        Ok(LstmCheckpoint {
            config: meta.config,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        LstmCheckpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{NewsRecord, Provenance};
    use chrono::NaiveDate;

    fn record(day: u32, ticker: &str, pct: f64) -> NewsRecord {
        NewsRecord::new(
            NaiveDate::from_ymd_opt(2023, 3, day).unwrap(),
            ticker,
            "Co",
            "h",
            "s",
            100.0,
            100.0 + pct,
        )
        .unwrap()
    }

    #[test]
    fn sliding_windows() {
        let ds = Dataset::new(
            (1..=4).map(|d| record(d, "A", d as f64)).collect(),
            Provenance::Synthetic,
        );
        let w = build_windows(&ds, 2);
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].inputs.clone(), w[0].target), (vec![1.0, 2.0], 3.0));
        assert_eq!((w[1].inputs.clone(), w[1].target), (vec![2.0, 3.0], 4.0));
        assert!(build_windows(&ds, 4).is_empty());
    }

    #[test]
    fn zero_params_predict_head_bias() {
        let mut p = LstmParams::zeros(3);
        p.head_bias.data_mut()[0] = 0.7;
        let w = WindowExample { inputs: vec![1.0, -2.0], target: 0.0, record_ref: 0 };
        let t = lstm_trace(&w.inputs, &p).unwrap();
        assert!(t.steps.iter().all(|s| s.h.iter().all(|v| *v == 0.0)));
        assert_eq!(t.prediction, 0.7);
    }

    #[test]
    fn single_step_hand_computed() {
        // Two units, one step: c = i·g, h = o·tanh(c).
        let mut p = LstmParams::zeros(2);
        p.input_weight = Tensor::new(vec![8, 1], vec![0.5, -0.3, 0.2, 0.1, 0.4, -0.6, 0.7, 0.9]).unwrap();
        p.bias = Tensor::vector(vec![0.1, 0.0, 0.0, 0.2, -0.1, 0.3, 0.0, -0.2]);
        p.head_weight = Tensor::vector(vec![1.5, -2.0]);
        p.head_bias = Tensor::vector(vec![0.25]);
        let x: f64 = 2.0;
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = [s(0.5 * x + 0.1), s(-0.3 * x)];
        let g = [(0.4 * x - 0.1).tanh(), (-0.6 * x + 0.3).tanh()];
        let o = [s(0.7 * x), s(0.9 * x - 0.2)];
        let h = [o[0] * (i[0] * g[0]).tanh(), o[1] * (i[1] * g[1]).tanh()];
        let expected = 0.25 + 1.5 * h[0] - 2.0 * h[1];
        let got = lstm_forward(&WindowExample { inputs: vec![x], target: 0.0, record_ref: 0 }, &p).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn gates_in_unit_interval() {
        let p = init_lstm(5, &mut Rng::new(1, "t"));
        let t = lstm_trace(&[30.0, -50.0, 4.0], &p).unwrap();
        for s in &t.steps {
            for (r, v) in s.gates.iter().enumerate() {
                if !(10..15).contains(&r) {
                    assert!(*v > 0.0 && *v < 1.0, "gate {r} = {v}");
                }
            }
        }
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let p = init_lstm(4, &mut Rng::new(2, "t"));
        let mut w = WindowExample { inputs: vec![0.5, -1.0, 2.0], target: 0.0, record_ref: 0 };
        w.target = lstm_forward(&w, &p).unwrap();
        let g = loss_and_gradients(&[w], &p).unwrap();
        for (_, t) in g.grads.tensors() {
            assert!(t.data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn zero_inputs_give_zero_input_weight_gradient() {
        let p = init_lstm(4, &mut Rng::new(3, "t"));
        let w = WindowExample { inputs: vec![0.0; 3], target: 1.0, record_ref: 0 };
        let g = loss_and_gradients(&[w], &p).unwrap();
        assert!(g.grads.input_weight.data().iter().all(|v| *v == 0.0));
        assert!(g.grads.bias.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let ck = LstmCheckpoint {
            config: LstmConfig { hidden_dim: 3, window: 2, ..LstmConfig::default() },
            params: init_lstm(3, &mut Rng::new(4, "t")),
        };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(LstmCheckpoint::from_bytes(&bytes).unwrap(), ck);
        assert!(LstmCheckpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
