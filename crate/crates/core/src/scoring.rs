//! Anomaly scores over encoded completions: the minimum completion
//! distance and its mean / median counterparts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::InpainterModel;

/// Encoded completion `h_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Maps `d_m × d_m` completions into the space distances are measured in.
#[derive(Debug, Clone, Copy)]
pub enum Encoder<'a> {
    /// Row-major pixels ("image space").
    Identity { side: usize },
    /// Flattened deepest activation of the completion network's encoder
    /// trunk ("feature space").
    Trunk { model: &'a InpainterModel<f32>, side: usize },
}

impl<'a> Encoder<'a> {
    pub fn identity(side: usize) -> Self {
        Encoder::Identity { side }
    }

    pub fn trunk(model: &'a InpainterModel<f32>, side: usize) -> Self {
        Encoder::Trunk { model, side }
    }

    pub fn output_len(&self) -> Result<usize> {
        match *self {
            Encoder::Identity { side } => Ok(side * side),
            Encoder::Trunk { model, side } => model.arch().feature_len(side),
        }
    }

    pub fn encode(&self, completion: &Grid) -> Result<FeatureVector> {
        let side = match *self {
            Encoder::Identity { side } | Encoder::Trunk { side, .. } => side,
        };
        if completion.dims() != (side, side) {
            return Err(Error::Config(format!(
                "encoder expects {side}x{side} completions, got {}x{}",
                completion.height(),
                completion.width()
            )));
        }
        Ok(match *self {
            Encoder::Identity { .. } => FeatureVector(completion.data().iter().map(|&v| f64::from(v)).collect()),
            Encoder::Trunk { model, side } => {
                FeatureVector(model.trunk_features(completion.data(), side)?.into_iter().map(f64::from).collect())
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricChoice {
    #[default]
    Min,
    Mean,
    Median,
}

impl FromStr for MetricChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(MetricChoice::Min),
            "mean" => Ok(MetricChoice::Mean),
            "median" => Ok(MetricChoice::Median),
            _ => Err(Error::Config(format!("unknown metric '{s}' (expected min, mean or median)"))),
        }
    }
}

impl fmt::Display for MetricChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricChoice::Min => "min",
            MetricChoice::Mean => "mean",
            MetricChoice::Median => "median",
        })
    }
}

/// Euclidean distances from the ground truth to every sample.
pub fn completion_distances(gt: &FeatureVector, samples: &[FeatureVector]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Usage("no completion samples to score against".into()));
    }
    samples
        .iter()
        .map(|s| {
            if s.len() != gt.len() {
                Err(Error::Config(format!("feature length mismatch: ground truth {} vs sample {}", gt.len(), s.len())))
            } else {
                Ok(gt.distance(s))
            }
        })
        .collect()
}

pub fn min_of(d: &[f64]) -> f64 {
    d.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Arithmetic mean, kept inside `[min, max]` despite summation rounding.
pub fn mean_of(d: &[f64]) -> f64 {
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m.clamp(min_of(d), hi)
}

/// Median; an even count averages the two central order statistics.
pub fn median_of(d: &[f64]) -> f64 {
    let mut v = d.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Minimum completion distance `min_i ||h0 - h_i||₂`.
pub fn mcd_score(gt: &FeatureVector, samples: &[FeatureVector]) -> Result<f64> {
    completion_distances(gt, samples).map(|d| min_of(&d))
}

pub fn mean_cd_score(gt: &FeatureVector, samples: &[FeatureVector]) -> Result<f64> {
    completion_distances(gt, samples).map(|d| mean_of(&d))
}

pub fn median_cd_score(gt: &FeatureVector, samples: &[FeatureVector]) -> Result<f64> {
    completion_distances(gt, samples).map(|d| median_of(&d))
}

pub fn score(metric: MetricChoice, gt: &FeatureVector, samples: &[FeatureVector]) -> Result<f64> {
    let d = completion_distances(gt, samples)?;
    Ok(match metric {
        MetricChoice::Min => min_of(&d),
        MetricChoice::Mean => mean_of(&d),
        MetricChoice::Median => median_of(&d),
    })
}
