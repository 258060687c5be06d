//! Synthetic wearable-like cohorts and the method ablation benchmark.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::data::{make_splits, BinarizationRule, BinaryLabel, Dataset, SequenceWindow};
use crate::error::{Error, Result};
use crate::eval::{
    f1_score, random_baseline, random_baseline_expected_f1, sweep_active_sampling_with, MeanStd, SweepPoint, SweepSpec,
};
use crate::nn::to_time_major;
use crate::rng::RngSeed;
use crate::trainer::{pretrain_for_fold, train_on_fold, FoldData, Method, TrainSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub participants: usize,
    pub windows_per_participant: usize,
    pub steps: usize,
    pub features: usize,
    /// Share of all windows that carry a label.
    pub label_fraction: f64,
    /// Peak height of the stress ramp, in units of the baseline process std.
    pub signal_strength: f64,
    /// Share of unlabeled windows drawn from the shifted regime.
    pub contaminant_fraction: f64,
    /// Std of white measurement noise added on top of the AR(1) process.
    pub noise_floor: f64,
    pub seed: u64,
    pub ar_coefficient: f64,
    /// Std of the per-participant, per-feature mean offsets.
    pub participant_offset_std: f64,
    /// Std of the log of per-participant, per-feature gains.
    pub participant_gain_std: f64,
    pub signature_features: Vec<usize>,
    /// Share of the final third over which the ramp rises before holding at its peak.
    pub signature_rise: f64,
    pub stress_prevalence: f64,
    /// Mean shift of contaminant windows on every feature.
    pub contaminant_shift: f64,
    /// Std multiplier of contaminant windows.
    pub contaminant_scale: f64,
    /// AR(1) coefficient of the contaminant regime.
    pub contaminant_ar_coefficient: f64,
    pub step_minutes: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            participants: 40,
            windows_per_participant: 400,
            steps: 20,
            features: 12,
            label_fraction: 0.01,
            signal_strength: 3.0,
            contaminant_fraction: 0.0,
            noise_floor: 0.3,
            seed: 0,
            ar_coefficient: 0.8,
            participant_offset_std: 1.5,
            participant_gain_std: 0.4,
            signature_features: vec![0, 1],
            signature_rise: 1.0,
            stress_prevalence: 0.45,
            contaminant_shift: 3.0,
            contaminant_scale: 2.0,
            contaminant_ar_coefficient: 0.0,
            step_minutes: 5.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.label_fraction) || !unit(self.contaminant_fraction) || !unit(self.stress_prevalence) {
            return Err(Error::invalid("synth", "fractions must lie in [0, 1]"));
        }
        if !(self.signal_strength >= 0.0) || !(self.noise_floor >= 0.0) || !(self.participant_offset_std >= 0.0)
            || !(self.participant_gain_std >= 0.0)
        {
            return Err(Error::invalid("synth", "signal_strength, noise_floor and offsets must be non-negative"));
        }
        if !(self.ar_coefficient.abs() < 1.0) || !(self.contaminant_ar_coefficient.abs() < 1.0) {
            return Err(Error::invalid("ar_coefficient", "must lie in (-1, 1)"));
        }
        if self.participants == 0 || self.windows_per_participant == 0 || self.steps < 3 || self.features == 0 {
            return Err(Error::invalid("synth", "need participants, windows, at least 3 steps and 1 feature"));
        }
        if self.signature_features.iter().any(|&f| f >= self.features) {
            return Err(Error::invalid("signature_features", "index out of range"));
        }
        if !(self.signature_rise > 0.0 && self.signature_rise <= 1.0) {
            return Err(Error::invalid("signature_rise", "must lie in (0, 1]"));
        }
        if !(self.contaminant_scale > 0.0) || !(self.step_minutes > 0.0) {
            return Err(Error::invalid("synth", "contaminant_scale and step_minutes must be positive"));
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        (0..self.features).map(|f| format!("f{f}")).collect()
    }

    /// First step of the planted ramp.
    pub fn signature_start(&self) -> usize {
        self.steps - self.steps.div_ceil(3)
    }
}

/// Ground truth kept for every window, labeled or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowTruth {
    pub stressed: bool,
    pub level: i64,
    pub contaminant: bool,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Parallel to `dataset.windows()`.
    pub truth: Vec<WindowTruth>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let seed = RngSeed(spec.seed);
    let (t_len, f_len) = (spec.steps, spec.features);
    let total = spec.participants * spec.windows_per_participant;
    let n_labeled = (spec.label_fraction * total as f64).round() as usize;
    let mut is_labeled = vec![false; total];
    for i in sample(&mut seed.derive_rng(&[0x1ab]), total, n_labeled) {
        is_labeled[i] = true;
    }
    let unlabeled: Vec<usize> = (0..total).filter(|&i| !is_labeled[i]).collect();
    let n_cont = (spec.contaminant_fraction * unlabeled.len() as f64).round() as usize;
    let mut is_cont = vec![false; total];
    for j in sample(&mut seed.derive_rng(&[0xc0]), unlabeled.len(), n_cont) {
        is_cont[unlabeled[j]] = true;
    }

    let start = spec.signature_start();
    let rise = ((t_len - start) as f64 * spec.signature_rise).round().max(1.0);
    let mut windows = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    for p in 0..spec.participants {
        let mut rng = seed.derive_rng(&[0x9a, p as u64]);
        let offsets: Vec<f64> = (0..f_len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                spec.participant_offset_std * z
            })
            .collect();
        let gains: Vec<f64> = (0..f_len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (spec.participant_gain_std * z).exp()
            })
            .collect();
        for w in 0..spec.windows_per_participant {
            let idx = p * spec.windows_per_participant + w;
            let cont = is_cont[idx];
            let stressed = rng.random_bool(spec.stress_prevalence);
            let level = if stressed { rng.random_range(2..=7) } else { 1 };
            let mut x = Array2::<f64>::zeros((t_len, f_len));
            let ar = if cont { spec.contaminant_ar_coefficient } else { spec.ar_coefficient };
            let innovation = (1.0 - ar * ar).sqrt();
            for f in 0..f_len {
                let mut state: f64 = StandardNormal.sample(&mut rng);
                for t in 0..t_len {
                    if t > 0 {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        state = ar * state + innovation * e;
                    }
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x[[t, f]] = state + spec.noise_floor * e;
                }
            }
            if stressed && !cont {
                let amp = spec.signal_strength * (0.5 + 0.5 * (level - 2) as f64 / 5.0);
                for &f in &spec.signature_features {
                    for t in start..t_len {
                        x[[t, f]] += amp * ((t - start + 1) as f64 / rise).min(1.0);
                    }
                }
            }
            for f in 0..f_len {
                x.column_mut(f).mapv_inplace(|v| offsets[f] + gains[f] * v);
            }
            if cont {
                x.mapv_inplace(|v| v * spec.contaminant_scale + spec.contaminant_shift);
            }
            let labeled = is_labeled[idx];
            windows.push(SequenceWindow {
                participant_id: format!("p{p:03}"),
                t_end: ((w + 1) * t_len) as i64 * (spec.step_minutes * 60.0) as i64,
                features: x,
                label: labeled.then(|| BinaryLabel::from_bool(stressed)),
                raw_level: labeled.then_some(level),
            });
            truth.push(WindowTruth {
                stressed,
                level,
                contaminant: cont,
            });
        }
    }
    let dataset = Dataset::new(windows, spec.feature_names(), t_len, spec.step_minutes, Some(BinarizationRule::threshold(1)))?;
    Ok(SynthData { dataset, truth })
}

impl SynthData {
    /// Clean windows of `indices` with their true labels.
    pub fn evaluation_set(&self, indices: &[usize]) -> (Vec<usize>, Vec<bool>) {
        let keep: Vec<usize> = indices.iter().copied().filter(|&i| !self.truth[i].contaminant).collect();
        let labels = keep.iter().map(|&i| self.truth[i].stressed).collect();
        (keep, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub synth: SynthSpec,
    /// Base training spec; `method` is replaced per row.
    pub train: TrainSpec,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub fold_count: usize,
    /// Folds evaluated per seed.
    pub folds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub f1: MeanStd,
    /// Per-seed f1 averaged over folds, in `seeds` order.
    pub f1_by_seed: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    /// Analytic chance f1 for the observed class balance, averaged over runs.
    pub analytic_random_f1: f64,
}

impl AblationResult {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "f1_mean", "f1_std", "n"])?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                format!("{:.6}", r.f1.mean),
                format!("{:.6}", r.f1.std),
                r.f1.n.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn markdown(&self) -> String {
        let mut s = String::from("| Method | f1 (mean ± std) |\n|---|---|\n");
        for r in &self.rows {
            let label = r.name.parse::<Method>().map(|m| m.label().to_string()).unwrap_or_else(|_| r.name.clone());
            s.push_str(&format!("| {label} | {:.3} ± {:.3} |\n", r.f1.mean, r.f1.std));
        }
        s
    }
}

/// Active-vs-random sweep where every seed draws its own cohort and runs are
/// scored on clean validation-fold windows against their true labels.
pub fn run_sampling_sweep(synth: &SynthSpec, sweep: &SweepSpec, fold_count: usize) -> Result<Vec<SweepPoint>> {
    if sweep.seeds.is_empty() {
        return Err(Error::invalid("sweep", "seeds must be non-empty"));
    }
    let mut merged: Vec<SweepPoint> = Vec::new();
    for &s in &sweep.seeds {
        let data = generate(&SynthSpec { seed: s, ..synth.clone() })?;
        let split = make_splits(&data.dataset, fold_count, RngSeed(s).derive(&[0x5b]))?;
        let one = SweepSpec { seeds: vec![s], ..sweep.clone() };
        let points = sweep_active_sampling_with(&data.dataset, &split, &one, |fd| {
            let (idx, truth) = data.evaluation_set(&split.validation_indices(&data.dataset, fd.fold)?);
            let x = idx
                .iter()
                .map(|&i| fd.scaler.transform(data.dataset.window(i).features.view()))
                .collect::<Result<Vec<_>>>()?;
            Ok((x, truth))
        })?;
        if merged.is_empty() {
            merged = points;
            continue;
        }
        for (m, p) in merged.iter_mut().zip(points) {
            let k = m.f1_by_seed.len() as f64;
            m.frac_labeled = (m.frac_labeled * k + p.frac_labeled) / (k + 1.0);
            m.frac_unlabeled = (m.frac_unlabeled * k + p.frac_unlabeled) / (k + 1.0);
            m.f1_by_seed.extend(p.f1_by_seed);
            m.empty_runs += p.empty_runs;
        }
    }
    for m in &mut merged {
        m.f1 = MeanStd::of(&m.f1_by_seed);
    }
    Ok(merged)
}

/// Train every method on the same generated cohorts and score f1 on the
/// clean validation-fold windows against their true labels.
pub fn run_ablation(spec: &AblationSpec) -> Result<AblationResult> {
    if spec.seeds.is_empty() || spec.folds.is_empty() || spec.methods.is_empty() {
        return Err(Error::invalid("ablation", "seeds, folds and methods must be non-empty"));
    }
    let mut per_method: BTreeMap<Method, (Vec<f64>, f64)> = BTreeMap::new();
    let mut chance = Vec::new();
    let mut analytic = Vec::new();
    for &s in &spec.seeds {
        let seed = RngSeed(s);
        let data = generate(&SynthSpec { seed: s, ..spec.synth.clone() })?;
        let split = make_splits(&data.dataset, spec.fold_count, seed.derive(&[0x5b]))?;
        let mut sums: BTreeMap<Method, f64> = BTreeMap::new();
        let (mut ch, mut an) = (0.0, 0.0);
        for &fold in &spec.folds {
            let mut fd = FoldData::prepare(&data.dataset, &split, fold, spec.train.scaler_uses_unlabeled)?;
            let (eval_idx, truth) = data.evaluation_set(&split.validation_indices(&data.dataset, fold)?);
            let scaled: Vec<Array2<f64>> = eval_idx
                .iter()
                .map(|&i| fd.scaler.transform(data.dataset.window(i).features.view()))
                .collect::<Result<_>>()?;
            let eval_x: Vec<ArrayView2<'_, f64>> = scaled.iter().map(|w| w.view()).collect();
            let fold_seed = seed.derive(&[0xf0, fold as u64]);
            let mut ae: Option<Autoencoder> = None;
            for &method in &spec.methods {
                let started = Instant::now();
                let train = TrainSpec { method, ..spec.train.clone() };
                if method.pretrains() && ae.is_none() {
                    ae = Some(pretrain_for_fold(&mut fd, &train, fold_seed)?.model);
                }
                let out = train_on_fold(&fd, &train, ae.as_ref(), fold_seed)?;
                out.provenance.check()?;
                let mut probs = Vec::with_capacity(eval_x.len());
                for chunk in eval_x.chunks(256) {
                    probs.extend(out.model.predict_proba(&to_time_major(chunk.iter().copied()))?);
                }
                *sums.entry(method).or_default() += f1_score(&probs, &truth, 0.5);
                per_method.entry(method).or_default().1 += started.elapsed().as_secs_f64();
            }
            let train_labels: Vec<bool> = fd.labels.iter().map(|&y| y > 0.5).collect();
            ch += random_baseline(&train_labels, &truth, 1000, fold_seed.derive(&[0xba]))?.mean;
            let rate = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len().max(1) as f64;
            an += random_baseline_expected_f1(rate(&train_labels), rate(&truth));
        }
        let nf = spec.folds.len() as f64;
        for (m, v) in sums {
            per_method.entry(m).or_default().0.push(v / nf);
        }
        chance.push(ch / nf);
        analytic.push(an / nf);
    }
    let mut rows = vec![AblationRow {
        name: "random".into(),
        f1: MeanStd::of(&chance),
        f1_by_seed: chance,
        seconds: 0.0,
    }];
    for &m in &spec.methods {
        let (f1, secs) = per_method.remove(&m).unwrap_or_default();
        rows.push(AblationRow {
            name: m.name().into(),
            f1: MeanStd::of(&f1),
            f1_by_seed: f1,
            seconds: secs,
        });
    }
    Ok(AblationResult {
        rows,
        analytic_random_f1: analytic.iter().sum::<f64>() / analytic.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            participants: 6,
            windows_per_participant: 50,
            steps: 9,
            features: 4,
            label_fraction: 0.2,
            contaminant_fraction: 0.5,
            seed: 3,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_and_exact_fractions() {
        let spec = small();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.dataset.labeled_indices().len(), 60);
        let unl = a.dataset.unlabeled_indices();
        assert_eq!(unl.iter().filter(|&&i| a.truth[i].contaminant).count(), 120);
        assert!(a.dataset.labeled_indices().iter().all(|&i| !a.truth[i].contaminant));
        let c = generate(&SynthSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn levels_match_labels() {
        let d = generate(&small()).unwrap();
        for (w, t) in d.dataset.windows().iter().zip(&d.truth) {
            assert_eq!(t.stressed, t.level >= 2);
            if let Some(l) = w.label {
                assert_eq!(l.is_stressed(), t.stressed);
                assert_eq!(w.raw_level, Some(t.level));
            }
        }
    }

    #[test]
    fn signature_sits_in_final_third() {
        let spec = SynthSpec {
            signal_strength: 5.0,
            noise_floor: 0.0,
            participant_offset_std: 0.0,
            ..small()
        };
        let d = generate(&spec).unwrap();
        let clean = SynthData { truth: d.truth.clone(), ..generate(&SynthSpec { signal_strength: 0.0, ..spec.clone() }).unwrap() };
        let start = spec.signature_start();
        assert_eq!(start, 6);
        for (i, t) in d.truth.iter().enumerate() {
            let diff = &d.dataset.window(i).features - &clean.dataset.window(i).features;
            for ((step, f), v) in diff.indexed_iter() {
                let planted = t.stressed && !t.contaminant && step >= start && spec.signature_features.contains(&f);
                if planted {
                    assert!(*v > 0.0);
                } else {
                    assert!(v.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn quick_rise_holds_at_peak() {
        let spec = SynthSpec { signal_strength: 5.0, noise_floor: 0.0, participant_offset_std: 0.0, participant_gain_std: 0.0, signature_rise: 0.5, contaminant_fraction: 0.0, steps: 18, ..small() };
        let d = generate(&spec).unwrap();
        let clean = generate(&SynthSpec { signal_strength: 0.0, ..spec.clone() }).unwrap();
        let i = d.truth.iter().position(|t| t.level == 7).expect("a level-7 window");
        let diff = &d.dataset.window(i).features - &clean.dataset.window(i).features;
        let col: Vec<f64> = diff.column(0).iter().copied().collect();
        let start = spec.signature_start();
        // three steps up to the peak, then flat
        assert!((col[start] - 5.0 / 3.0).abs() < 1e-9);
        for v in &col[start + 2..] {
            assert!((v - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trips_through_disk() {
        let d = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.dataset.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d.dataset);
    }

    #[test]
    fn invalid_specs() {
        assert!(SynthSpec { label_fraction: 1.5, ..small() }.validate().is_err());
        assert!(SynthSpec { signal_strength: -1.0, ..small() }.validate().is_err());
        assert!(SynthSpec { signature_features: vec![9], ..small() }.validate().is_err());
    }
}
