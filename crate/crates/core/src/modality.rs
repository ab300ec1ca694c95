//! The six input/target configurations and the record → example transforms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NewsRecord};
use crate::error::{Error, Result};

pub const FIELD_DELIMITER: &str = " | ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Train on the percent change itself.
    Regression,
    /// Train on its sign, ±1.
    Symbolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VersionId {
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl VersionId {
    pub const ALL: [VersionId; 6] = [
        VersionId::V1,
        VersionId::V2,
        VersionId::V3,
        VersionId::V4,
        VersionId::V5,
        VersionId::V6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VersionId::V1 => "v1",
            VersionId::V2 => "v2",
            VersionId::V3 => "v3",
            VersionId::V4 => "v4",
            VersionId::V5 => "v5",
            VersionId::V6 => "v6",
        }
    }

    pub fn spec(self) -> ModalityVersion {
        ModalityVersion::from_id(self)
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VersionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VersionId::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown version `{s}`; expected v1..v6")))
    }
}

/// Which record fields reach the model input, and how the target is formed.
/// The headline is always included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityVersion {
    pub id: VersionId,
    pub include_source: bool,
    pub include_company: bool,
    pub include_date: bool,
    pub target_mode: TargetMode,
}

impl ModalityVersion {
    pub fn from_id(id: VersionId) -> Self {
        let (source, company, date, mode) = match id {
            VersionId::V1 => (true, true, false, TargetMode::Regression),
            VersionId::V2 => (false, true, false, TargetMode::Regression),
            VersionId::V3 => (true, false, false, TargetMode::Regression),
            VersionId::V4 => (true, true, true, TargetMode::Regression),
            VersionId::V5 => (true, true, false, TargetMode::Symbolic),
            VersionId::V6 => (true, true, true, TargetMode::Symbolic),
        };
        ModalityVersion {
            id,
            include_source: source,
            include_company: company,
            include_date: date,
            target_mode: mode,
        }
    }
}

/// Joins the version's fields in the order headline, source, company, date.
pub fn compose_input(record: &NewsRecord, version: &ModalityVersion) -> String {
    let mut parts = vec![record.headline.clone()];
    if version.include_source {
        parts.push(record.source.clone());
    }
    if version.include_company {
        parts.push(record.company.clone());
    }
    if version.include_date {
        parts.push(record.date.format("%Y-%m-%d").to_string());
    }
    parts.join(FIELD_DELIMITER)
}

/// Regression passes the percent change through; symbolic maps it to its
/// sign, with zero counted as positive.
pub fn make_target(pct_change: f64, mode: TargetMode) -> Result<f64> {
    if !pct_change.is_finite() {
        return Err(Error::Domain(format!("target {pct_change} is not finite")));
    }
    Ok(match mode {
        TargetMode::Regression => pct_change,
        TargetMode::Symbolic => direction(pct_change),
    })
}

/// +1 for non-negative values, −1 otherwise. Shared by targets and metrics.
pub fn direction(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input_text: String,
    pub target: f64,
    pub record_ref: usize,
}

pub fn build_examples(dataset: &Dataset, version: &ModalityVersion) -> Result<Vec<TrainingExample>> {
    dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(TrainingExample {
                input_text: compose_input(r, version),
                target: make_target(r.pct_change, version.target_mode)?,
                record_ref: i,
            })
        })
        .collect()
}
