use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{f1_score, MeanStd};
use crate::active::{select_by_nll, select_random};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::to_time_major;
use crate::rng::RngSeed;
use crate::trainer::{density_scores, pretrain_on, train_on_fold, FoldData, TrainSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepArm {
    Active,
    Random,
}

impl SweepArm {
    pub fn name(self) -> &'static str {
        match self {
            SweepArm::Active => "active",
            SweepArm::Random => "random",
        }
    }
}

/// Operating points of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepGrid {
    /// Absolute NLL thresholds.
    Thresholds(Vec<f64>),
    /// Target fractions of the unlabeled pool; each becomes the matching NLL quantile per run.
    Fractions(Vec<f64>),
}

impl SweepGrid {
    fn values(&self) -> &[f64] {
        match self {
            SweepGrid::Thresholds(v) | SweepGrid::Fractions(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub grid: SweepGrid,
    pub seeds: Vec<u64>,
    pub folds: Vec<usize>,
    /// Fine-tuning spec; its `ae` and `active` sections drive pretraining and scoring.
    pub train: TrainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Grid value: an NLL threshold or a target fraction.
    pub threshold: f64,
    pub arm: SweepArm,
    pub f1: MeanStd,
    /// Per-seed f1, averaged over folds, in `seeds` order.
    pub f1_by_seed: Vec<f64>,
    pub frac_labeled: f64,
    pub frac_unlabeled: f64,
    /// Runs where nothing was selected and training started cold.
    pub empty_runs: usize,
}

/// Value at quantile `q` of `v` by the nearest-rank rule (`q=1` is the maximum).
fn nearest_rank(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() || q <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let k = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[k - 1]
}

/// Pretrain on actively selected and on size-matched random unlabeled windows
/// at every grid point, fine-tune, and report validation f1 per arm.
pub fn sweep_active_sampling(dataset: &Dataset, split: &Split, spec: &SweepSpec) -> Result<Vec<SweepPoint>> {
    sweep_active_sampling_with(dataset, split, spec, |fd| {
        let truth = fd.validation_labels.iter().map(|&y| y > 0.5).collect();
        Ok((fd.validation.clone(), truth))
    })
}

/// [`sweep_active_sampling`] scored on a caller-chosen evaluation set: `eval`
/// maps a prepared fold to scaled windows and their labels.
pub fn sweep_active_sampling_with<E>(dataset: &Dataset, split: &Split, spec: &SweepSpec, eval: E) -> Result<Vec<SweepPoint>>
where
    E: Fn(&FoldData) -> Result<(Vec<Array2<f64>>, Vec<bool>)>,
{
    let values = spec.grid.values();
    if values.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid("thresholds", "grid must be sorted ascending"));
    }
    if spec.seeds.is_empty() || spec.folds.is_empty() || values.is_empty() {
        return Err(Error::invalid("sweep", "seeds, folds and grid must be non-empty"));
    }
    spec.train.validate()?;
    // (point, arm) -> per-seed accumulators
    let mut acc: BTreeMap<(usize, SweepArm), (Vec<f64>, Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for &s in &spec.seeds {
        let seed = RngSeed(s);
        let mut per_fold: BTreeMap<(usize, SweepArm), (f64, f64, f64)> = BTreeMap::new();
        for &fold in &spec.folds {
            let base = FoldData::prepare(dataset, split, fold, spec.train.scaler_uses_unlabeled)?;
            let (eval_x, truth) = eval(&base)?;
            let fold_seed = seed.derive(&[fold as u64]);
            let scores = density_scores(&base, &spec.train, fold_seed)?;
            for (pi, &value) in values.iter().enumerate() {
                let threshold = match spec.grid {
                    SweepGrid::Thresholds(_) => value,
                    SweepGrid::Fractions(_) => nearest_rank(&scores.unlabeled_nll, value),
                };
                let report = select_by_nll(&scores.unlabeled_nll, &scores.labeled_nll, threshold);
                let n = report.selected.len();
                let random = select_random(base.unlabeled.len(), n, fold_seed.derive(&[0x7a, pi as u64]));
                for (arm, chosen) in [(SweepArm::Active, report.selected.clone()), (SweepArm::Random, random)] {
                    let mut fd = base.clone();
                    let mut train = spec.train.clone();
                    let pretrained = if chosen.len() >= 2 {
                        Some(pretrain_on(&mut fd, chosen, &train, fold_seed)?.model)
                    } else {
                        train.method = crate::trainer::Method::Baseline;
                        None
                    };
                    let out = train_on_fold(&fd, &train, pretrained.as_ref(), fold_seed)?;
                    fd.provenance.check()?;
                    let mut probs = Vec::with_capacity(eval_x.len());
                    for chunk in eval_x.chunks(256) {
                        probs.extend(out.model.predict_proba(&to_time_major(chunk.iter().map(|w| w.view())))?);
                    }
                    let e = per_fold.entry((pi, arm)).or_default();
                    e.0 += f1_score(&probs, &truth, 0.5);
                    e.1 += report.fraction_labeled_below_threshold;
                    e.2 += report.fraction_unlabeled_selected;
                    if pretrained.is_none() {
                        acc.entry((pi, arm)).or_default().3 += 1;
                    }
                }
            }
        }
        let nf = spec.folds.len() as f64;
        for (key, (f1, fl, fu)) in per_fold {
            let e = acc.entry(key).or_default();
            e.0.push(f1 / nf);
            e.1.push(fl / nf);
            e.2.push(fu / nf);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(acc
        .into_iter()
        .map(|((pi, arm), (f1, fl, fu, empty))| SweepPoint {
            threshold: values[pi],
            arm,
            f1: MeanStd::of(&f1),
            frac_labeled: mean(&fl),
            frac_unlabeled: mean(&fu),
            f1_by_seed: f1,
            empty_runs: empty,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_quantiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(nearest_rank(&v, 1.0), 5.0);
        assert_eq!(nearest_rank(&v, 0.2), 1.0);
        assert_eq!(nearest_rank(&v, 0.5), 3.0);
        assert_eq!(nearest_rank(&v, 0.0), f64::NEG_INFINITY);
    }
}
