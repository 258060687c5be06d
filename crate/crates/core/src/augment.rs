//! Stochastic time-series augmentation: jitter, scaling, time warping and
//! magnitude warping.
//!
//! Operators act on one `steps × features` window and preserve its shape.
//! Windows are expected in standardized units, so noise parameters are
//! scale-free. Each operator is the exact identity when its noise parameter
//! is zero.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SequenceWindow;
use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::spline::CubicSpline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Jitter,
    Scale,
    TimeWarp,
    MagnitudeWarp,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 4] = [AugmentOp::Jitter, AugmentOp::Scale, AugmentOp::TimeWarp, AugmentOp::MagnitudeWarp];

    pub fn name(self) -> &'static str {
        match self {
            AugmentOp::Jitter => "jitter",
            AugmentOp::Scale => "scale",
            AugmentOp::TimeWarp => "time_warp",
            AugmentOp::MagnitudeWarp => "magnitude_warp",
        }
    }
}

/// Gaussian `N(mean, std)`; `std == 0` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalDist {
    pub mean: f64,
    pub std: f64,
}

impl NormalDist {
    pub const fn around_one(std: f64) -> Self {
        NormalDist { mean: 1.0, std }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.std * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePer {
    Feature,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    /// Applied in this order to every copy.
    pub ops: Vec<AugmentOp>,
    /// Jitter standard deviation, in units of each feature's standard deviation.
    pub jitter_sigma: f64,
    pub scale: NormalDist,
    pub scale_per: ScalePer,
    pub magnitude_warp: NormalDist,
    pub mw_knots: usize,
    pub tw_knots: usize,
    pub tw_sigma: f64,
    /// Augmented copies generated per window.
    pub count: usize,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            ops: AugmentOp::ALL.to_vec(),
            jitter_sigma: 0.03,
            scale: NormalDist::around_one(0.05),
            scale_per: ScalePer::Feature,
            magnitude_warp: NormalDist::around_one(0.05),
            mw_knots: 4,
            tw_knots: 4,
            tw_sigma: 0.2,
            count: 10,
        }
    }
}

impl AugmentationSpec {
    /// All operators listed but with zero noise.
    pub fn identity(count: usize) -> Self {
        AugmentationSpec {
            jitter_sigma: 0.0,
            scale: NormalDist::around_one(0.0),
            magnitude_warp: NormalDist::around_one(0.0),
            tw_sigma: 0.0,
            count,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("count", "at least one augmented copy is required"));
        }
        if self.jitter_sigma < 0.0 || self.scale.std < 0.0 || self.magnitude_warp.std < 0.0 || self.tw_sigma < 0.0 {
            return Err(Error::invalid("sigma", "noise parameters must be non-negative"));
        }
        if self.mw_knots < 2 || self.tw_knots < 2 {
            return Err(Error::invalid("knots", "warps need at least two knots"));
        }
        Ok(())
    }
}

/// Add `N(0, (sigma·feature_std[f])²)` noise to every cell of column `f`.
pub fn jitter<R: Rng + ?Sized>(window: ArrayView2<f64>, sigma: f64, feature_std: &[f64], rng: &mut R) -> Array2<f64> {
    let mut out = window.to_owned();
    if sigma == 0.0 {
        return out;
    }
    for mut row in out.rows_mut() {
        for (v, s) in row.iter_mut().zip(feature_std) {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * s * z;
        }
    }
    out
}

/// Multiply each column by its own factor drawn from `dist` (or one factor for the whole window).
pub fn scale<R: Rng + ?Sized>(window: ArrayView2<f64>, dist: NormalDist, per: ScalePer, rng: &mut R) -> Array2<f64> {
    let f = window.ncols();
    let factors: Vec<f64> = match per {
        ScalePer::Feature => (0..f).map(|_| dist.sample(rng)).collect(),
        ScalePer::Window => vec![dist.sample(rng); f],
    };
    let mut out = window.to_owned();
    for mut row in out.rows_mut() {
        row.iter_mut().zip(&factors).for_each(|(v, c)| *v *= c);
    }
    out
}

/// Smooth curve over `steps` points: a natural cubic spline through `knots`
/// equally spaced values drawn from `dist`.
pub fn smooth_curve<R: Rng + ?Sized>(steps: usize, dist: NormalDist, knots: usize, rng: &mut R) -> Vec<f64> {
    let values: Vec<f64> = (0..knots).map(|_| dist.sample(rng)).collect();
    eval_curve(steps, &values)
}

fn eval_curve(steps: usize, knot_values: &[f64]) -> Vec<f64> {
    let span = (steps.max(2) - 1) as f64;
    let spline = CubicSpline::uniform(span, knot_values).expect("at least two knots");
    (0..steps).map(|t| spline.eval(t as f64)).collect()
}

/// Multiply each column elementwise by its own smooth curve around `dist.mean`.
pub fn magnitude_warp<R: Rng + ?Sized>(
    window: ArrayView2<f64>,
    dist: NormalDist,
    knots: usize,
    rng: &mut R,
) -> Array2<f64> {
    let (t, f) = window.dim();
    let mut out = window.to_owned();
    for c in 0..f {
        let curve = smooth_curve(t, dist, knots, rng);
        out.column_mut(c).iter_mut().zip(&curve).for_each(|(v, k)| *v *= k);
    }
    out
}

/// Monotone warp `τ` of `[0, steps-1]` onto itself with fixed endpoints.
///
/// `τ` integrates a positive smooth speed curve whose knots are drawn from
/// `N(1, sigma)` (non-positive draws and non-positive curves are redrawn), then
/// is rescaled to end at `steps - 1`.
pub fn time_warp_path<R: Rng + ?Sized>(steps: usize, knots: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    if steps < 2 {
        return vec![0.0; steps];
    }
    let dist = NormalDist::around_one(sigma);
    let mut speed = Vec::new();
    for attempt in 0..1000 {
        let values: Vec<f64> = (0..knots)
            .map(|_| loop {
                let v = dist.sample(rng);
                if v > 0.0 {
                    break v;
                }
            })
            .collect();
        speed = eval_curve(steps, &values);
        if speed.iter().all(|&v| v > 0.0) {
            break;
        }
        if attempt == 999 {
            speed.iter_mut().for_each(|v| *v = v.abs().max(1e-3));
        }
    }
    let mut tau = vec![0.0; steps];
    for t in 1..steps {
        tau[t] = tau[t - 1] + 0.5 * (speed[t - 1] + speed[t]);
    }
    let end = (steps - 1) as f64;
    let k = end / tau[steps - 1];
    for v in tau.iter_mut() {
        *v = (*v * k).min(end);
    }
    tau[steps - 1] = end;
    tau
}

/// Resample every column at the warped times `τ(t)` by linear interpolation.
pub fn time_warp<R: Rng + ?Sized>(window: ArrayView2<f64>, knots: usize, sigma: f64, rng: &mut R) -> Array2<f64> {
    let (t, _) = window.dim();
    let tau = time_warp_path(t, knots, sigma, rng);
    apply_time_warp(window, &tau)
}

pub fn apply_time_warp(window: ArrayView2<f64>, tau: &[f64]) -> Array2<f64> {
    let (t, f) = window.dim();
    let mut out = Array2::zeros((t, f));
    for (r, &pos) in tau.iter().enumerate() {
        let i = (pos.floor() as usize).min(t - 1);
        let frac = pos - i as f64;
        for c in 0..f {
            let a = window[[i, c]];
            out[[r, c]] = if i + 1 < t && frac > 0.0 {
                a + (window[[i + 1, c]] - a) * frac
            } else {
                a
            };
        }
    }
    out
}

/// Apply `spec.ops` in order to one standardized window.
pub fn augment_window<R: Rng + ?Sized>(window: ArrayView2<f64>, spec: &AugmentationSpec, rng: &mut R) -> Array2<f64> {
    let ones = vec![1.0; window.ncols()];
    let mut x = window.to_owned();
    for op in &spec.ops {
        x = match op {
            AugmentOp::Jitter => jitter(x.view(), spec.jitter_sigma, &ones, rng),
            AugmentOp::Scale => scale(x.view(), spec.scale, spec.scale_per, rng),
            AugmentOp::TimeWarp => time_warp(x.view(), spec.tw_knots, spec.tw_sigma, rng),
            AugmentOp::MagnitudeWarp => magnitude_warp(x.view(), spec.magnitude_warp, spec.mw_knots, rng),
        };
    }
    x
}

/// `spec.count` augmented copies of each window; copy `m` of window `i` uses
/// the stream `seed.derive([i, m])`. Labels and raw levels are carried over.
pub fn augment_batch(windows: &[SequenceWindow], spec: &AugmentationSpec, seed: RngSeed) -> Result<Vec<Vec<SequenceWindow>>> {
    spec.validate()?;
    Ok(windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            (0..spec.count)
                .map(|m| {
                    let mut rng = seed.derive_rng(&[i as u64, m as u64]);
                    SequenceWindow {
                        features: augment_window(w.features.view(), spec, &mut rng),
                        ..w.clone()
                    }
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BinaryLabel;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn rng(s: u64) -> crate::rng::Rng {
        RngSeed(s).rng()
    }

    fn window(t: usize, f: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        Array2::from_shape_fn((t, f), |_| r.random_range(-3.0..3.0))
    }

    #[test]
    fn zero_noise_is_exact_identity() {
        let x = window(30, 5, 1);
        let mut r = rng(2);
        assert_eq!(jitter(x.view(), 0.0, &[1.0; 5], &mut r), x);
        assert_eq!(scale(x.view(), NormalDist::around_one(0.0), ScalePer::Feature, &mut r), x);
        assert_eq!(magnitude_warp(x.view(), NormalDist::around_one(0.0), 4, &mut r), x);
        assert_eq!(time_warp(x.view(), 4, 0.0, &mut r), x);
        assert_eq!(augment_window(x.view(), &AugmentationSpec::identity(1), &mut r), x);
    }

    #[test]
    fn jitter_noise_matches_sigma() {
        let t = 10_000;
        let x = Array2::from_elem((t, 1), 4.0);
        let out = jitter(x.view(), 0.03, &[2.0], &mut rng(5));
        let d: Vec<f64> = (&out - &x).iter().copied().collect();
        let m = d.iter().sum::<f64>() / t as f64;
        let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (t - 1) as f64).sqrt();
        assert!((sd / 0.06 - 1.0).abs() < 0.05, "{sd}");
    }

    #[test]
    fn jitter_is_deterministic() {
        let x = window(20, 3, 1);
        assert_eq!(
            jitter(x.view(), 0.1, &[1.0; 3], &mut rng(9)),
            jitter(x.view(), 0.1, &[1.0; 3], &mut rng(9))
        );
    }

    #[test]
    fn scale_constant_column_gives_factor() {
        let x = Array2::ones((12, 3));
        let mut r = rng(3);
        let out = scale(x.view(), NormalDist::around_one(0.05), ScalePer::Feature, &mut r);
        for c in 0..3 {
            let col = out.column(c);
            assert!(col.iter().all(|&v| v == col[0]));
        }
        let win = scale(x.view(), NormalDist::around_one(0.05), ScalePer::Window, &mut r);
        assert!(win.iter().all(|&v| v == win[[0, 0]]));
    }

    #[test]
    fn scale_factors_average_to_one() {
        let x = Array2::ones((1, 1));
        let n = 20_000;
        let mean = (0..n)
            .map(|s| scale(x.view(), NormalDist::around_one(0.05), ScalePer::Feature, &mut rng(s))[[0, 0]])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn constant_knots_scale_exactly() {
        let x = window(30, 4, 7);
        let out = magnitude_warp(x.view(), NormalDist { mean: 2.0, std: 0.0 }, 4, &mut rng(1));
        for (o, i) in out.iter().zip(x.iter()) {
            assert!((o - 2.0 * i).abs() < 1e-12);
        }
    }

    #[test]
    fn magnitude_warp_curve_stays_near_one() {
        let mut excursions = 0;
        for s in 0..10_000 {
            let c = smooth_curve(30, NormalDist::around_one(0.05), 4, &mut rng(s));
            if c.iter().any(|v| (v - 1.0).abs() > 0.25) {
                excursions += 1;
            }
        }
        // P < 1e-3 over 1e4 draws
        assert!(excursions < 10, "{excursions}");
    }

    #[test]
    fn time_warp_endpoints_fixed() {
        let x = window(30, 3, 11);
        for s in 0..200 {
            let out = time_warp(x.view(), 4, 0.2, &mut rng(s));
            assert_eq!(out.row(0), x.row(0));
            assert_eq!(out.row(29), x.row(29));
        }
    }

    #[test]
    fn time_warp_is_strictly_monotone() {
        for s in 0..500 {
            let tau = time_warp_path(30, 4, 0.6, &mut rng(s));
            assert_eq!(tau[0], 0.0);
            assert_eq!(tau[29], 29.0);
            assert!(tau.windows(2).all(|w| w[1] > w[0]), "seed {s}");
        }
    }

    fn labeled(x: Array2<f64>) -> SequenceWindow {
        SequenceWindow {
            participant_id: "p".into(),
            t_end: 100,
            features: x,
            label: Some(BinaryLabel::Stressed),
            raw_level: Some(6),
        }
    }

    #[test]
    fn batch_identity_and_copies() {
        let w = labeled(window(8, 2, 1));
        let spec = AugmentationSpec {
            ops: vec![],
            count: 1,
            ..Default::default()
        };
        let out = augment_batch(std::slice::from_ref(&w), &spec, RngSeed(1)).unwrap();
        assert_eq!(out[0], vec![w.clone()]);

        let spec = AugmentationSpec::default();
        let out = augment_batch(std::slice::from_ref(&w), &spec, RngSeed(4)).unwrap();
        assert_eq!(out[0].len(), 10);
        let mut hashes: Vec<Vec<u64>> = out[0].iter().map(|c| c.features.iter().map(|v| v.to_bits()).collect()).collect();
        hashes.sort();
        hashes.dedup();
        assert_eq!(hashes.len(), 10);
        assert!(out[0].iter().all(|c| c.label == w.label && c.raw_level == w.raw_level));
        assert_eq!(out, augment_batch(std::slice::from_ref(&w), &spec, RngSeed(4)).unwrap());
    }

    #[test]
    fn invalid_specs() {
        assert!(AugmentationSpec { count: 0, ..Default::default() }.validate().is_err());
        assert!(AugmentationSpec { tw_knots: 1, ..Default::default() }.validate().is_err());
        assert!(AugmentationSpec { jitter_sigma: -1.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn time_warp_stays_in_column_range(seed in 0u64..10_000, t in 2usize..40, f in 1usize..5) {
            let x = window(t, f, seed);
            let out = time_warp(x.view(), 4, 0.3, &mut rng(seed ^ 0xabc));
            for c in 0..f {
                let lo = x.column(c).iter().copied().fold(f64::INFINITY, f64::min);
                let hi = x.column(c).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.column(c).iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            }
        }

        #[test]
        fn ops_preserve_shape(seed in 0u64..10_000, t in 2usize..40, f in 1usize..6) {
            let x = window(t, f, seed);
            let out = augment_window(x.view(), &AugmentationSpec::default(), &mut rng(seed));
            prop_assert_eq!(out.dim(), (t, f));
        }
    }
}
