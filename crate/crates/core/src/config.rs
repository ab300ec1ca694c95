//! `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored, and
//! keys may not repeat. Values are kept as strings until a consumer asks for
//! a typed value; any key no consumer claims is reported by [`ConfigFile::finish`].

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::data::{Ar1Config, SynthConfig};
use crate::error::{Error, Result};
use crate::lstm::LstmConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("invalid key `{key}`"),
                });
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (line_no, value.to_string())) {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("`{key}` already set on line {first}"),
                });
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ConfigFile::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets or replaces a value, as a command-line override would.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (0, value.into()));
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes and parses `key`, leaving `slot` untouched when absent.
    pub fn take<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some((line, value)) = self.entries.remove(key) {
            *slot = value.parse().map_err(|_| Error::Config {
                line,
                message: format!("cannot parse `{value}` for `{key}`"),
            })?;
        }
        Ok(())
    }

    fn take_list(&mut self, key: &str, slot: &mut Vec<String>) {
        if let Some((_, value)) = self.entries.remove(key) {
            *slot = value
                .split(',')
                .map(|w| w.trim().to_string())
                .filter(|w| !w.is_empty())
                .collect();
        }
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            Some((key, (line, _))) => Err(Error::Config {
                line,
                message: format!("unknown key `{key}`"),
            }),
            None => Ok(()),
        }
    }

    pub fn train_config(&mut self, mut c: TrainConfig) -> Result<TrainConfig> {
        self.take("learning_rate", &mut c.learning_rate)?;
        self.take("beta1", &mut c.beta1)?;
        self.take("beta2", &mut c.beta2)?;
        self.take("epsilon", &mut c.epsilon)?;
        self.take("batch_size", &mut c.batch_size)?;
        self.take("epochs", &mut c.epochs)?;
        self.take("seed", &mut c.seed)?;
        self.take("shuffle_each_epoch", &mut c.shuffle_each_epoch)?;
        c.validate()?;
        Ok(c)
    }

    pub fn model_config(&mut self, mut c: ModelConfig) -> Result<ModelConfig> {
        self.take("vocab_size", &mut c.vocab_size)?;
        self.take("hidden_dim", &mut c.hidden_dim)?;
        self.take("num_layers", &mut c.num_layers)?;
        self.take("num_heads", &mut c.num_heads)?;
        self.take("ff_dim", &mut c.ff_dim)?;
        self.take("max_len", &mut c.max_len)?;
        self.take("dropout_p", &mut c.dropout_p)?;
        self.take("init_stddev", &mut c.init_stddev)?;
        c.validate()?;
        Ok(c)
    }

    pub fn lstm_config(&mut self, mut c: LstmConfig) -> Result<LstmConfig> {
        self.take("window", &mut c.window)?;
        self.take("hidden_dim", &mut c.hidden_dim)?;
        c.train = self.train_config(c.train)?;
        c.validate()?;
        Ok(c)
    }

    pub fn synth_config(&mut self, mut c: SynthConfig) -> Result<SynthConfig> {
        self.take("n_records", &mut c.n_records)?;
        self.take("signal_mean", &mut c.signal_mean)?;
        self.take("noise_stddev", &mut c.noise_stddev)?;
        self.take("n_tickers", &mut c.n_tickers)?;
        self.take("seed", &mut c.seed)?;
        self.take_list("positive_lexicon", &mut c.positive_lexicon);
        self.take_list("negative_lexicon", &mut c.negative_lexicon);
        self.take_list("neutral_lexicon", &mut c.neutral_lexicon);
        c.validate()?;
        Ok(c)
    }

    pub fn ar1_config(&mut self, mut c: Ar1Config) -> Result<Ar1Config> {
        self.take("n_tickers", &mut c.n_tickers)?;
        self.take("length", &mut c.length)?;
        self.take("coefficient", &mut c.coefficient)?;
        self.take("noise_stddev", &mut c.noise_stddev)?;
        self.take("seed", &mut c.seed)?;
        Ok(c)
    }
}
