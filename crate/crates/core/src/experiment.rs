//! Dataset-level training and evaluation for both architectures.

use crate::checkpoint::EncoderCheckpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{trend_report, ExamplePrediction, MetricsReport, TrendPoint, TrendSeries};
use crate::lstm::{build_windows, predict_lstm, train_lstm, LstmCheckpoint, LstmConfig, LSTM_LABEL};
use crate::modality::{build_examples, TargetMode, VersionId};
use crate::model::ModelConfig;
use crate::tokenizer::Vocabulary;
use crate::training::{predict, train, TrainConfig};

pub const ENCODER_LABEL: &str = "bert";

pub struct Trained<C> {
    pub checkpoint: C,
    pub loss_history: Vec<f64>,
}

pub fn train_encoder(
    dataset: &Dataset,
    version: VersionId,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<Trained<EncoderCheckpoint>> {
    let examples = build_examples(dataset, &version.spec())?;
    let outcome = train(&examples, vocab, model_config, train_config)?;
    Ok(Trained {
        checkpoint: EncoderCheckpoint {
            model_config: *model_config,
            train_config: *train_config,
            version,
            vocab: vocab.clone(),
            params: outcome.params,
        },
        loss_history: outcome.loss_history,
    })
}

fn finish(
    dataset: &Dataset,
    version: &str,
    arch: &str,
    mode: TargetMode,
    per_example: Vec<ExamplePrediction>,
) -> Result<(MetricsReport, TrendSeries)> {
    let points: Vec<TrendPoint> = per_example
        .iter()
        .map(|e| TrendPoint {
            date: dataset.records[e.record_ref].date,
            record_ref: e.record_ref,
            predicted: e.prediction,
            actual: e.actual,
        })
        .collect();
    let report = MetricsReport::build(version, arch, mode, per_example)?;
    Ok((report, trend_report(&points)))
}

/// Scores an encoder on `dataset`. Actuals are the targets the model was
/// trained on: percent changes, or ±1 for symbolic versions.
pub fn evaluate_encoder(ck: &EncoderCheckpoint, dataset: &Dataset) -> Result<(MetricsReport, TrendSeries)> {
    let spec = ck.version.spec();
    let examples = build_examples(dataset, &spec)?;
    if examples.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    let texts: Vec<&str> = examples.iter().map(|e| e.input_text.as_str()).collect();
    let preds = predict(&texts, &ck.vocab, &ck.params, &ck.model_config)?;
    let per_example = examples
        .iter()
        .zip(preds)
        .map(|(e, p)| ExamplePrediction {
            record_ref: e.record_ref,
            prediction: p,
            actual: e.target,
        })
        .collect();
    finish(dataset, ck.version.as_str(), ENCODER_LABEL, spec.target_mode, per_example)
}

pub fn train_lstm_on(dataset: &Dataset, config: &LstmConfig) -> Result<Trained<LstmCheckpoint>> {
    let windows = build_windows(dataset, config.window);
    let outcome = train_lstm(&windows, config)?;
    Ok(Trained {
        checkpoint: LstmCheckpoint {
            config: *config,
            params: outcome.params,
        },
        loss_history: outcome.loss_history,
    })
}

pub fn evaluate_lstm_on(ck: &LstmCheckpoint, dataset: &Dataset) -> Result<(MetricsReport, TrendSeries)> {
    let windows = build_windows(dataset, ck.config.window);
    if windows.is_empty() {
        return Err(Error::Empty(format!(
            "no ticker in the evaluation data has more than {} records",
            ck.config.window
        )));
    }
    let preds = predict_lstm(&windows, &ck.params)?;
    let per_example = windows
        .iter()
        .zip(preds)
        .map(|(w, p)| ExamplePrediction {
            record_ref: w.record_ref,
            prediction: p,
            actual: w.target,
        })
        .collect();
    finish(dataset, LSTM_LABEL, LSTM_LABEL, TargetMode::Regression, per_example)
}
