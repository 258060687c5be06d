//! Supervised and consistency-regularized training of the sequence classifier.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::active::{fit_gmm, pca_project, select_by_nll, select_k, GmmSpace, KCriterion};
use crate::augment::{augment_window, AugmentationSpec, NormalDist};
use crate::autoencoder::{pretrain, transplant, AePretrainSpec, Autoencoder, LossPoint, UnlabeledSource};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::f1_score;
use crate::nn::{
    bce_with_logits, kl_bernoulli_logits, sigmoid, to_time_major, Adam, Checkpoint, Classifier, ClassifierCache, ClassifierGrads,
    LstmLayerSpec, Mode, NetworkSpec,
};
use crate::rng::RngSeed;

pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature standardization fitted on training-fold windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation over every row of every window.
    pub fn fit(windows: &[ArrayView2<'_, f64>]) -> Result<Self> {
        let f = windows.first().map(|w| w.ncols()).ok_or_else(|| Error::InsufficientData {
            what: "scaler",
            reason: "no training windows".into(),
        })?;
        let mut mean = vec![0.0; f];
        let mut n = 0usize;
        for w in windows {
            if w.ncols() != f {
                return Err(Error::DimensionMismatch {
                    context: "scaler fit",
                    expected: f.to_string(),
                    actual: w.ncols().to_string(),
                });
            }
            for row in w.outer_iter() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            n += w.nrows();
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for w in windows {
            for row in w.outer_iter() {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Scaler { mean, std })
    }

    pub fn transform(&self, w: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if w.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "scaler features",
                expected: self.mean.len().to_string(),
                actual: w.ncols().to_string(),
            });
        }
        let mut out = w.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Da,
    DaAe,
    DaCr,
    DaAeCr,
    /// Pretraining followed by plain supervised fine-tuning; not part of [`Method::ALL`].
    Ae,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Baseline, Method::Da, Method::DaAe, Method::DaCr, Method::DaAeCr];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Da => "da",
            Method::DaAe => "da_ae",
            Method::DaCr => "da_cr",
            Method::DaAeCr => "da_ae_cr",
            Method::Ae => "ae",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Baseline => "Baseline LSTM",
            Method::Da => "DA",
            Method::DaAe => "DA + LSTM-AE",
            Method::DaCr => "DA + CR",
            Method::DaAeCr => "DA + LSTM-AE + CR",
            Method::Ae => "LSTM-AE",
        }
    }

    pub fn augments(self) -> bool {
        !matches!(self, Method::Baseline | Method::Ae)
    }

    pub fn pretrains(self) -> bool {
        matches!(self, Method::DaAe | Method::DaAeCr | Method::Ae)
    }

    pub fn regularizes(self) -> bool {
        matches!(self, Method::DaCr | Method::DaAeCr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .chain([Method::Ae])
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::invalid("method", format!("unknown method `{s}` (baseline, da, da_ae, da_cr, da_ae_cr, ae)")))
    }
}

/// Weights of the consistency terms and the number of augmented copies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub m: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            lambda: 1.0,
            m: 10,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::invalid("loss_weights", "alpha and lambda must be non-negative"));
        }
        if self.m == 0 {
            return Err(Error::invalid("loss_weights.m", "at least one augmented copy is required"));
        }
        Ok(())
    }
}

/// Unlabeled-window selection ahead of autoencoder pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActiveSpec {
    pub k_min: usize,
    pub k_max: usize,
    /// Keep unlabeled windows with NLL at or below this value.
    pub threshold: f64,
    pub gmm_space: GmmSpace,
    /// Epochs of the labeled-only autoencoder that provides the latents.
    pub latent_epochs: usize,
}

impl Default for ActiveSpec {
    fn default() -> Self {
        ActiveSpec {
            k_min: 1,
            k_max: 10,
            threshold: 0.0,
            gmm_space: GmmSpace::Latent,
            latent_epochs: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelection {
    /// Keep the epoch with the best validation F1.
    BestValidationF1,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub method: Method,
    pub network: NetworkSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    /// Unlabeled windows drawn per labeled window at each step.
    #[serde(default = "one")]
    pub unlabeled_batch_ratio: f64,
    #[serde(default)]
    pub ae: AePretrainSpec,
    #[serde(default)]
    pub active: ActiveSpec,
    /// Fit the scaler on unlabeled training windows as well as labeled ones.
    #[serde(default = "yes")]
    pub scaler_uses_unlabeled: bool,
    #[serde(default = "best_f1")]
    pub selection: ModelSelection,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn best_f1() -> ModelSelection {
    ModelSelection::BestValidationF1
}

impl TrainSpec {
    /// Named hyperparameter presets: `smile`, `tiles`, `crosscheck` and the small `desk`.
    pub fn preset(name: &str, input_dim: usize) -> Result<Self> {
        let stack = |units: usize, layers: usize, dropout: f64, rec: f64| {
            vec![
                LstmLayerSpec {
                    hidden: units,
                    dropout,
                    recurrent_dropout: rec,
                };
                layers
            ]
        };
        let net = |lstm_layers, dense_hidden, dense_dropout| NetworkSpec {
            input_dim,
            lstm_layers,
            batch_norm: true,
            bn_momentum: 0.9,
            bn_eps: 1e-3,
            dense_hidden,
            dense_dropout,
        };
        let base = |network, epochs, batch_size, learning_rate| TrainSpec {
            method: Method::DaAeCr,
            network,
            epochs,
            batch_size,
            learning_rate,
            loss_weights: LossWeights::default(),
            augmentation: AugmentationSpec::default(),
            unlabeled_batch_ratio: 1.0,
            ae: AePretrainSpec::default(),
            active: ActiveSpec::default(),
            scaler_uses_unlabeled: true,
            selection: ModelSelection::BestValidationF1,
        };
        match name {
            "smile" => Ok(base(net(stack(64, 3, 0.3, 0.4), 512, 0.5), 100, 64, 1e-4)),
            "tiles" | "crosscheck" => Ok(base(net(stack(32, 3, 0.3, 0.0), 256, 0.5), 100, 64, 5e-5)),
            "desk" => {
                let mut spec = base(net(stack(16, 1, 0.1, 0.0), 16, 0.2), 60, 32, 3e-3);
                spec.loss_weights.m = 4;
                spec.augmentation.count = 4;
                spec.augmentation.jitter_sigma = 0.3;
                spec.augmentation.scale = NormalDist::around_one(0.4);
                spec.augmentation.magnitude_warp = NormalDist::around_one(0.1);
                spec.ae = AePretrainSpec {
                    epochs: 8,
                    batch_size: 64,
                    learning_rate: 3e-3,
                    ..AePretrainSpec::default()
                };
                spec.active.latent_epochs = 20;
                Ok(spec)
            }
            other => Err(Error::invalid("preset", format!("unknown preset `{other}` (smile, tiles, crosscheck, desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss_weights.validate()?;
        if self.method.augments() {
            self.augmentation.validate()?;
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("train", "epochs and batch_size must be positive"));
        }
        if self.network.batch_norm && self.batch_size < 2 {
            return Err(Error::invalid("batch_size", "batch normalization needs batches of at least 2"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(self.unlabeled_batch_ratio >= 0.0) {
            return Err(Error::invalid("unlabeled_batch_ratio", "must be non-negative"));
        }
        if self.method.pretrains() {
            self.ae.validate()?;
        }
        Ok(())
    }

    /// Consistency weights actually applied for the spec's method.
    pub fn effective_weights(&self) -> LossWeights {
        if self.method.regularizes() {
            self.loss_weights
        } else {
            LossWeights {
                alpha: 0.0,
                lambda: 0.0,
                ..self.loss_weights
            }
        }
    }
}

/// The three terms of the composite objective and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub ce: f64,
    pub kl_l: f64,
    pub kl_u: f64,
}

pub struct CompositeOutput {
    pub terms: LossTerms,
    pub grads: ClassifierGrads,
    /// Cache of the supervised pass; its batch statistics update batch norm.
    pub ce_cache: ClassifierCache,
}

/// Augmented copies of a batch with their clean-prediction targets.
///
/// Copies are stacked along the batch axis: copy `m` of sample `b` sits at `m·B + b`.
pub struct ConsistencyBatch {
    pub copies: Array3<f64>,
    /// Clean eval-mode probabilities, one per original sample.
    pub targets: Vec<f64>,
}

impl ConsistencyBatch {
    fn repeated_targets(&self) -> Vec<f64> {
        let b = self.targets.len();
        let m = self.copies.dim().1 / b.max(1);
        (0..m).flat_map(|_| self.targets.iter().copied()).collect()
    }
}

fn check_term(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss term `{name}`")))
    }
}

/// Clean eval-mode probabilities used as fixed consistency targets.
pub fn consistency_targets(model: &Classifier, x: &Array3<f64>) -> Result<Vec<f64>> {
    model.predict_proba(x)
}

/// `count` augmented copies of every window in `x`, stacked as in [`ConsistencyBatch`].
pub fn augmented_copies(x: &Array3<f64>, aug: &AugmentationSpec, count: usize, seed: RngSeed) -> Array3<f64> {
    let (t, b, f) = x.dim();
    let mut out = Array3::zeros((t, count * b, f));
    for m in 0..count {
        for bi in 0..b {
            let mut rng = seed.derive_rng(&[bi as u64, m as u64]);
            let w = augment_window(x.slice(s![.., bi, ..]), aug, &mut rng);
            out.slice_mut(s![.., m * b + bi, ..]).assign(&w);
        }
    }
    out
}

/// Composite loss for explicit copies and targets.
///
/// With `supervised_aug` the cross-entropy covers the clean labeled batch and
/// its copies in one train-mode pass, and that pass also supplies the labeled
/// consistency predictions. Terms whose weight is zero are skipped entirely.
pub fn composite_loss_given(
    model: &Classifier,
    xl: &Array3<f64>,
    yl: &[f64],
    labeled: Option<&ConsistencyBatch>,
    unlabeled: Option<&ConsistencyBatch>,
    weights: &LossWeights,
    supervised_aug: bool,
    rng: &mut crate::rng::Rng,
) -> Result<CompositeOutput> {
    let b = yl.len();
    if xl.dim().1 != b {
        return Err(Error::DimensionMismatch {
            context: "labeled batch",
            expected: b.to_string(),
            actual: xl.dim().1.to_string(),
        });
    }
    let mut terms = LossTerms::default();
    let combine = supervised_aug && labeled.is_some();
    let (x_ce, y_ce) = match (combine, labeled) {
        (true, Some(l)) => {
            let m = l.copies.dim().1 / b;
            let x = concatenate(Axis(1), &[xl.view(), l.copies.view()]).expect("matching window shapes");
            let y: Vec<f64> = (0..=m).flat_map(|_| yl.iter().copied()).collect();
            (x, y)
        }
        _ => (xl.clone(), yl.to_vec()),
    };
    let ce_cache = model.forward(&x_ce, Mode::Train, rng)?;
    let (ce, mut dlogits) = bce_with_logits(ce_cache.logits(), &y_ce);
    check_term("ce", ce)?;
    terms.ce = ce;

    let mut extra: Option<ClassifierGrads> = None;
    if weights.alpha > 0.0 {
        if let Some(l) = labeled {
            let p = l.repeated_targets();
            if combine {
                let (kl, g) = kl_bernoulli_logits(&p, &ce_cache.logits()[b..]);
                check_term("kl_l", kl)?;
                terms.kl_l = kl;
                for (d, gi) in dlogits[b..].iter_mut().zip(g) {
                    *d += weights.alpha * gi;
                }
            } else {
                let cache = model.forward(&l.copies, Mode::Train, rng)?;
                let (kl, g) = kl_bernoulli_logits(&p, cache.logits());
                check_term("kl_l", kl)?;
                terms.kl_l = kl;
                let g: Vec<f64> = g.iter().map(|v| v * weights.alpha).collect();
                extra = Some(model.backward(&cache, &g).0);
            }
        }
    }
    let (mut grads, _) = model.backward(&ce_cache, &dlogits);
    if let Some(e) = extra {
        grads.add_assign(&e);
    }
    if weights.lambda > 0.0 {
        if let Some(u) = unlabeled {
            if u.copies.dim().1 > 0 {
                let cache = model.forward(&u.copies, Mode::Train, rng)?;
                let (kl, g) = kl_bernoulli_logits(&u.repeated_targets(), cache.logits());
                check_term("kl_u", kl)?;
                terms.kl_u = kl;
                let g: Vec<f64> = g.iter().map(|v| v * weights.lambda).collect();
                grads.add_assign(&model.backward(&cache, &g).0);
            }
        }
    }
    terms.total = terms.ce + weights.alpha * terms.kl_l + weights.lambda * terms.kl_u;
    check_term("total", terms.total)?;
    Ok(CompositeOutput { terms, grads, ce_cache })
}

/// Composite loss with freshly drawn augmented copies.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    model: &Classifier,
    xl: &Array3<f64>,
    yl: &[f64],
    xu: Option<&Array3<f64>>,
    weights: &LossWeights,
    aug: &AugmentationSpec,
    supervised_aug: bool,
    seed: RngSeed,
) -> Result<CompositeOutput> {
    let need_l = supervised_aug || weights.alpha > 0.0;
    let labeled = if need_l {
        let copies = augmented_copies(xl, aug, weights.m, seed.derive(&[1]));
        let targets = if weights.alpha > 0.0 { consistency_targets(model, xl)? } else { vec![0.0; yl.len()] };
        Some(ConsistencyBatch { copies, targets })
    } else {
        None
    };
    let unlabeled = match xu {
        Some(xu) if weights.lambda > 0.0 && xu.dim().1 > 0 => Some(ConsistencyBatch {
            copies: augmented_copies(xu, aug, weights.m, seed.derive(&[2])),
            targets: consistency_targets(model, xu)?,
        }),
        _ => None,
    };
    composite_loss_given(
        model,
        xl,
        yl,
        labeled.as_ref(),
        unlabeled.as_ref(),
        weights,
        supervised_aug,
        &mut seed.derive_rng(&[3]),
    )
}

/// Participants whose data touched each fitted component.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub fold: usize,
    pub validation_participants: BTreeSet<String>,
    pub scaler_participants: BTreeSet<String>,
    pub ae_participants: BTreeSet<String>,
    pub classifier_participants: BTreeSet<String>,
}

impl Provenance {
    /// Error if any fitted component saw a validation participant.
    pub fn check(&self) -> Result<()> {
        for (what, set) in [
            ("scaler", &self.scaler_participants),
            ("autoencoder", &self.ae_participants),
            ("classifier", &self.classifier_participants),
        ] {
            if let Some(p) = set.intersection(&self.validation_participants).next() {
                return Err(Error::invalid(
                    "leakage",
                    format!("{what} was fit on validation participant `{p}` in fold {}", self.fold),
                ));
            }
        }
        Ok(())
    }
}

/// Standardized windows of one fold.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub fold: usize,
    pub scaler: Scaler,
    pub labeled: Vec<Array2<f64>>,
    pub labels: Vec<f64>,
    pub labeled_participants: Vec<String>,
    pub unlabeled: Vec<Array2<f64>>,
    pub unlabeled_participants: Vec<String>,
    /// Labeled validation windows.
    pub validation: Vec<Array2<f64>>,
    pub validation_labels: Vec<f64>,
    pub validation_levels: Vec<Option<i64>>,
    pub validation_participant_ids: Vec<String>,
    pub provenance: Provenance,
}

impl FoldData {
    pub fn prepare(dataset: &Dataset, split: &Split, fold: usize, scaler_uses_unlabeled: bool) -> Result<Self> {
        let train = split.train_indices(dataset, fold)?;
        let val = split.validation_indices(dataset, fold)?;
        let fit_on: Vec<usize> = train
            .iter()
            .copied()
            .filter(|&i| scaler_uses_unlabeled || dataset.window(i).is_labeled())
            .collect();
        let views: Vec<_> = fit_on.iter().map(|&i| dataset.window(i).features.view()).collect();
        let scaler = Scaler::fit(&views)?;
        let mut provenance = Provenance {
            fold,
            validation_participants: val.iter().map(|&i| dataset.window(i).participant_id.clone()).collect(),
            scaler_participants: fit_on.iter().map(|&i| dataset.window(i).participant_id.clone()).collect(),
            ..Default::default()
        };
        let mut fd = FoldData {
            fold,
            scaler,
            labeled: Vec::new(),
            labels: Vec::new(),
            labeled_participants: Vec::new(),
            unlabeled: Vec::new(),
            unlabeled_participants: Vec::new(),
            validation: Vec::new(),
            validation_labels: Vec::new(),
            validation_levels: Vec::new(),
            validation_participant_ids: Vec::new(),
            provenance: Provenance::default(),
        };
        for &i in &train {
            let w = dataset.window(i);
            let x = fd.scaler.transform(w.features.view())?;
            match w.label {
                Some(l) => {
                    fd.labeled.push(x);
                    fd.labels.push(l.as_f64());
                    fd.labeled_participants.push(w.participant_id.clone());
                }
                None => {
                    fd.unlabeled.push(x);
                    fd.unlabeled_participants.push(w.participant_id.clone());
                }
            }
        }
        for &i in &val {
            let w = dataset.window(i);
            if let Some(l) = w.label {
                fd.validation.push(fd.scaler.transform(w.features.view())?);
                fd.validation_labels.push(l.as_f64());
                fd.validation_levels.push(w.raw_level);
                fd.validation_participant_ids.push(w.participant_id.clone());
            }
        }
        provenance.classifier_participants = fd.labeled_participants.iter().cloned().collect();
        fd.provenance = provenance;
        Ok(fd)
    }

    pub fn unlabeled_views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.unlabeled.iter().map(|w| w.view()).collect()
    }

    pub fn labeled_views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.labeled.iter().map(|w| w.view()).collect()
    }
}

/// Latent-density scores from an autoencoder trained on labeled windows only.
#[derive(Debug, Clone)]
pub struct DensityScores {
    pub k: usize,
    pub criteria: Vec<KCriterion>,
    pub labeled_nll: Vec<f64>,
    pub unlabeled_nll: Vec<f64>,
}

/// Fit the labeled-only autoencoder, choose K, fit the mixture and score every window.
pub fn density_scores(fd: &FoldData, spec: &TrainSpec, seed: RngSeed) -> Result<DensityScores> {
    let ae_spec = AePretrainSpec {
        epochs: spec.active.latent_epochs.max(1),
        ..spec.ae.clone()
    };
    let labeled = fd.labeled_views();
    let ae = pretrain(&labeled, &spec.network, &ae_spec, seed.derive(&[0xd5, 1]))?.model;
    let lat_l = ae.latents(&labeled)?;
    let lat_u = ae.latents(&fd.unlabeled_views())?;
    let (lat_l, lat_u) = match spec.active.gmm_space {
        GmmSpace::Latent => (lat_l, lat_u),
        GmmSpace::Pca(d) => {
            let pca = pca_project(lat_l.view(), d)?;
            (pca.projected.clone(), pca.transform(lat_u.view()))
        }
    };
    let (k, criteria) = select_k(lat_l.view(), spec.active.k_min..=spec.active.k_max, seed.derive(&[0xd5, 2]))?;
    let gmm = fit_gmm(lat_l.view(), k, seed.derive(&[0xd5, 3]))?;
    Ok(DensityScores {
        k,
        criteria,
        labeled_nll: gmm.nll_all(lat_l.view()),
        unlabeled_nll: gmm.nll_all(lat_u.view()),
    })
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: Autoencoder,
    pub curve: Vec<LossPoint>,
    /// Indices into `FoldData::unlabeled` used for pretraining.
    pub used: Vec<usize>,
}

/// Pretrain on the given unlabeled windows of the fold and record their participants.
pub fn pretrain_on(fd: &mut FoldData, used: Vec<usize>, spec: &TrainSpec, seed: RngSeed) -> Result<PretrainOutcome> {
    let views: Vec<_> = used.iter().map(|&i| fd.unlabeled[i].view()).collect();
    let out = pretrain(&views, &spec.network, &spec.ae, seed.derive(&[0xae]))?;
    fd.provenance.ae_participants = used.iter().map(|&i| fd.unlabeled_participants[i].clone()).collect();
    Ok(PretrainOutcome {
        model: out.model,
        curve: out.curve,
        used,
    })
}

/// Pretrain according to `spec.ae.unlabeled_source`.
pub fn pretrain_for_fold(fd: &mut FoldData, spec: &TrainSpec, seed: RngSeed) -> Result<PretrainOutcome> {
    let used = match spec.ae.unlabeled_source {
        UnlabeledSource::All => (0..fd.unlabeled.len()).collect(),
        UnlabeledSource::ActiveSelected => {
            let scores = density_scores(fd, spec, seed)?;
            select_by_nll(&scores.unlabeled_nll, &scores.labeled_nll, spec.active.threshold).selected
        }
    };
    pretrain_on(fd, used, spec, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_kl_l: f64,
    pub loss_kl_u: f64,
    pub val_f1: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Classifier,
    pub scaler: Scaler,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub provenance: Provenance,
}

/// Train on the fold's standardized windows, starting from `pretrained` when given.
pub fn train_on_fold(fd: &FoldData, spec: &TrainSpec, pretrained: Option<&Autoencoder>, seed: RngSeed) -> Result<TrainOutcome> {
    spec.validate()?;
    if fd.labeled.is_empty() {
        return Err(Error::InsufficientData {
            what: "training",
            reason: format!("fold {} has no labeled training windows", fd.fold),
        });
    }
    if spec.method.pretrains() && pretrained.is_none() {
        return Err(Error::invalid("method", format!("`{}` needs a pretrained autoencoder", spec.method)));
    }
    let mut init_rng = seed.derive_rng(&[0x11]);
    let mut model = match pretrained.filter(|_| spec.method.pretrains()) {
        Some(ae) => transplant(ae, &spec.network, &mut init_rng)?,
        None => Classifier::new(spec.network.clone(), &mut init_rng)?,
    };
    let weights = spec.effective_weights();
    let supervised_aug = spec.method.augments();
    let mut adam = Adam::new(spec.learning_rate);
    let mut labeled_order: Vec<usize> = (0..fd.labeled.len()).collect();
    let mut unlabeled_order: Vec<usize> = (0..fd.unlabeled.len()).collect();
    let use_unlabeled = weights.lambda > 0.0 && !fd.unlabeled.is_empty() && spec.unlabeled_batch_ratio > 0.0;
    let val_x = (!fd.validation.is_empty()).then(|| to_time_major(fd.validation.iter().map(|w| w.view())));
    let val_truth: Vec<bool> = fd.validation_labels.iter().map(|&y| y > 0.5).collect();

    let mut log = Vec::with_capacity(spec.epochs);
    let mut best: Option<(f64, f64, usize, Classifier)> = None;
    let mut u_pos = 0usize;
    let mut u_round = 0u64;
    for epoch in 1..=spec.epochs {
        labeled_order.shuffle(&mut seed.derive_rng(&[0x12, epoch as u64]));
        let mut batches: Vec<&[usize]> = labeled_order.chunks(spec.batch_size).collect();
        if spec.network.batch_norm && batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
            batches.pop();
        }
        let mut sums = LossTerms::default();
        let mut seen = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            if spec.network.batch_norm && batch.len() < 2 {
                continue;
            }
            let xl = to_time_major(batch.iter().map(|&i| fd.labeled[i].view()));
            let yl: Vec<f64> = batch.iter().map(|&i| fd.labels[i]).collect();
            let xu = if use_unlabeled {
                let want = ((batch.len() as f64 * spec.unlabeled_batch_ratio).ceil() as usize).max(1);
                let mut picked = Vec::with_capacity(want);
                while picked.len() < want {
                    if u_pos == 0 {
                        unlabeled_order.shuffle(&mut seed.derive_rng(&[0x13, u_round]));
                        u_round += 1;
                    }
                    picked.push(unlabeled_order[u_pos]);
                    u_pos = (u_pos + 1) % unlabeled_order.len();
                }
                Some(to_time_major(picked.iter().map(|&i| fd.unlabeled[i].view())))
            } else {
                None
            };
            let out = composite_loss(
                &model,
                &xl,
                &yl,
                xu.as_ref(),
                &weights,
                &spec.augmentation,
                supervised_aug,
                seed.derive(&[0x14, epoch as u64, bi as u64]),
            )?;
            adam.step(model.param_slices_mut(), &out.grads.slices());
            model.update_running_stats(&out.ce_cache);
            if !model.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after epoch {epoch}, step {bi}; lower the learning rate (now {})",
                    spec.learning_rate
                )));
            }
            let n = batch.len() as f64;
            sums.ce += out.terms.ce * n;
            sums.kl_l += out.terms.kl_l * n;
            sums.kl_u += out.terms.kl_u * n;
            seen += batch.len();
        }
        let seen = seen.max(1) as f64;
        let (val_f1, val_loss) = match &val_x {
            Some(x) => {
                let probs = model.predict_proba(x)?;
                let logits: Vec<f64> = probs.iter().map(|&p| logit(p)).collect();
                (f1_score(&probs, &val_truth, 0.5), bce_with_logits(&logits, &fd.validation_labels).0)
            }
            None => (f64::NAN, f64::NAN),
        };
        log.push(EpochLog {
            epoch,
            loss_ce: sums.ce / seen,
            loss_kl_l: sums.kl_l / seen,
            loss_kl_u: sums.kl_u / seen,
            val_f1,
            val_loss,
        });
        let better = match (&best, spec.selection) {
            (_, ModelSelection::LastEpoch) | (None, _) => true,
            (Some((f, l, _, _)), ModelSelection::BestValidationF1) => {
                val_f1 > *f || (val_f1 == *f && val_loss < *l) || (f.is_nan() && !val_f1.is_nan())
            }
        };
        if better {
            best = Some((val_f1, val_loss, epoch, model.clone()));
        }
    }
    let (_, _, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        scaler: fd.scaler.clone(),
        log,
        best_epoch,
        provenance: fd.provenance.clone(),
    })
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Full pipeline for one fold: scaler, optional pretraining, training.
pub fn train(dataset: &Dataset, split: &Split, fold: usize, spec: &TrainSpec, pretrained: Option<&Autoencoder>, seed: RngSeed) -> Result<TrainOutcome> {
    spec.validate()?;
    let mut fd = FoldData::prepare(dataset, split, fold, spec.scaler_uses_unlabeled)?;
    let own;
    let pretrained = match (pretrained, spec.method.pretrains()) {
        (Some(ae), _) => Some(ae),
        (None, true) => {
            own = pretrain_for_fold(&mut fd, spec, seed)?.model;
            Some(&own)
        }
        (None, false) => None,
    };
    let out = train_on_fold(&fd, spec, pretrained, seed)?;
    out.provenance.check()?;
    Ok(out)
}

/// A trained classifier bundled with its input scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub classifier: Classifier,
    pub scaler: Scaler,
    pub feature_names: Vec<String>,
    pub method: Method,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    scaler: Scaler,
    feature_names: Vec<String>,
    method: Method,
}

impl TrainedModel {
    pub fn predict(&self, windows: &[ArrayView2<'_, f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let scaled: Vec<Array2<f64>> = chunk.iter().map(|w| self.scaler.transform(*w)).collect::<Result<_>>()?;
            if let Some(w) = scaled.iter().find(|w| w.nrows() != scaled[0].nrows()) {
                return Err(Error::DimensionMismatch {
                    context: "window steps",
                    expected: scaled[0].nrows().to_string(),
                    actual: w.nrows().to_string(),
                });
            }
            out.extend(self.classifier.predict_proba(&to_time_major(scaled.iter().map(|w| w.view())))?);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, seed: Option<u64>, step: u64) -> Result<Checkpoint> {
        let meta = BundleMeta {
            scaler: self.scaler.clone(),
            feature_names: self.feature_names.clone(),
            method: self.method,
        };
        self.classifier.to_checkpoint(seed, step, serde_json::to_value(meta)?)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: BundleMeta = serde_json::from_value(ck.extra.clone())
            .map_err(|e| Error::format("checkpoint", format!("missing scaler metadata: {e}")))?;
        let classifier = Classifier::from_checkpoint(ck)?;
        if meta.scaler.mean.len() != classifier.spec.input_dim {
            return Err(Error::format("checkpoint", "scaler and network disagree on the feature count"));
        }
        Ok(TrainedModel {
            classifier,
            scaler: meta.scaler,
            feature_names: meta.feature_names,
            method: meta.method,
        })
    }

    pub fn save(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        self.to_checkpoint(seed, 0)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Probabilities for the given raw windows.
pub fn predict(model: &TrainedModel, windows: &[ArrayView2<'_, f64>]) -> Result<Vec<f64>> {
    model.predict(windows)
}

/// Eval-mode probability of a single standardized window.
pub fn probability_of(model: &Classifier, window: ArrayView2<'_, f64>) -> Result<f64> {
    let cache = model.forward(&to_time_major([window]), Mode::Eval, &mut RngSeed(0).rng())?;
    Ok(sigmoid(cache.logits()[0]))
}
