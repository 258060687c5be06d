//! Metrics, chance baselines and paired significance tests.

mod sweep;

pub use sweep::{sweep_active_sampling, sweep_active_sampling_with, SweepArm, SweepGrid, SweepPoint, SweepSpec};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{binarize, BinarizationRule};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// `[[tn, fp], [fn, tp]]` counts with the stressed class as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Self {
        assert_eq!(predicted.len(), actual.len(), "prediction/label length");
        let mut c = Confusion::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// F1 of the stressed class; 0 when precision + recall is 0.
    pub fn f1(&self) -> f64 {
        f1_from(self.tp, self.fp, self.fn_)
    }

    /// F1 of the non-stressed class.
    pub fn f1_negative(&self) -> f64 {
        f1_from(self.tn, self.fn_, self.fp)
    }

    pub fn macro_f1(&self) -> f64 {
        0.5 * (self.f1() + self.f1_negative())
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1_from(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn threshold_predictions(probabilities: &[f64], threshold: f64) -> Vec<bool> {
    probabilities.iter().map(|&p| p >= threshold).collect()
}

/// Positive-class F1 of `probabilities ≥ threshold` against boolean labels.
pub fn f1_score(probabilities: &[f64], labels: &[bool], threshold: f64) -> f64 {
    Confusion::from_predictions(&threshold_predictions(probabilities, threshold), labels).f1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelAccuracy {
    pub count: usize,
    pub accuracy: f64,
}

/// Accuracy of the binary predictions within each raw self-report level.
pub fn sublevel_accuracy(
    predicted: &[bool],
    participants: &[String],
    raw_levels: &[i64],
    rule: BinarizationRule,
) -> Result<BTreeMap<i64, LevelAccuracy>> {
    if predicted.len() != raw_levels.len() || participants.len() != raw_levels.len() {
        return Err(Error::DimensionMismatch {
            context: "sub-level accuracy",
            expected: raw_levels.len().to_string(),
            actual: predicted.len().to_string(),
        });
    }
    let pairs: Vec<(String, i64)> = participants.iter().cloned().zip(raw_levels.iter().copied()).collect();
    let labels = binarize(&pairs, rule)?.labels;
    let mut tally: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for ((&p, &level), label) in predicted.iter().zip(raw_levels).zip(labels) {
        let e = tally.entry(level).or_default();
        e.0 += 1;
        e.1 += usize::from(p == label.is_stressed());
    }
    Ok(tally
        .into_iter()
        .map(|(level, (count, correct))| {
            (
                level,
                LevelAccuracy {
                    count,
                    accuracy: correct as f64 / count as f64,
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Sample standard deviation (ddof 1; 0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std, n }
    }
}

/// Score a classifier that draws each test label from the training class prior.
pub fn random_baseline(train_labels: &[bool], test_labels: &[bool], repetitions: usize, seed: RngSeed) -> Result<MeanStd> {
    if repetitions < 100 {
        return Err(Error::invalid("repetitions", "at least 100 repetitions are required"));
    }
    if train_labels.is_empty() || test_labels.is_empty() {
        return Err(Error::InsufficientData {
            what: "random baseline",
            reason: "empty training or test labels".into(),
        });
    }
    let p = train_labels.iter().filter(|&&y| y).count() as f64 / train_labels.len() as f64;
    let mut rng = seed.rng();
    let scores: Vec<f64> = (0..repetitions)
        .map(|_| {
            let draws: Vec<bool> = (0..test_labels.len()).map(|_| rng.random::<f64>() < p).collect();
            Confusion::from_predictions(&draws, test_labels).f1()
        })
        .collect();
    Ok(MeanStd::of(&scores))
}

/// Large-sample expectation of the random-baseline F1: `2pq / (p + q)` for
/// training prior `p` and test positive rate `q`.
pub fn random_baseline_expected_f1(train_positive_rate: f64, test_positive_rate: f64) -> f64 {
    let (p, q) = (train_positive_rate, test_positive_rate);
    if p + q == 0.0 {
        0.0
    } else {
        2.0 * p * q / (p + q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_difference: f64,
    /// `None` when every difference is identical (zero variance).
    pub t: Option<f64>,
    pub p_two_sided: f64,
    /// One-sided p for the alternative `mean(a) > mean(b)`.
    pub p_greater: f64,
    pub exact_tie: bool,
}

/// Paired t-test of `a` against `b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "paired test",
            expected: a.len().to_string(),
            actual: b.len().to_string(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            what: "paired test",
            reason: format!("{n} pairs, need at least 2"),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let stats = MeanStd::of(&d);
    if stats.std == 0.0 || d.iter().all(|&v| v == d[0]) {
        let (p2, pg) = if stats.mean == 0.0 {
            (1.0, 0.5)
        } else if stats.mean > 0.0 {
            (0.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        return Ok(PairedTest {
            n,
            mean_difference: stats.mean,
            t: None,
            p_two_sided: p2,
            p_greater: pg,
            exact_tie: true,
        });
    }
    let t = stats.mean / (stats.std / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    let p_greater = 1.0 - dist.cdf(t);
    let p_two_sided = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(PairedTest {
        n,
        mean_difference: stats.mean,
        t: Some(t),
        p_two_sided,
        p_greater,
        exact_tie: false,
    })
}
