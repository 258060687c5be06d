//! ECG-derived heart rate variability features from RR-interval streams.

use serde::{Deserialize, Serialize};

use super::spectral::{band_power, welch_psd};
use crate::data::Timestamp;
use crate::error::{Error, Result};
use crate::spline::CubicSpline;

pub const RR_MIN_MS: f64 = 200.0;
pub const RR_MAX_MS: f64 = 3000.0;

/// Successive RR intervals in milliseconds, starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RrSeries {
    intervals: Vec<f64>,
    pub t0: Timestamp,
}

impl RrSeries {
    /// Keep plausible intervals (200..=3000 ms); returns the series and the drop count.
    pub fn from_raw(intervals: &[f64], t0: Timestamp) -> (Self, usize) {
        let kept: Vec<f64> = intervals
            .iter()
            .copied()
            .filter(|v| v.is_finite() && (RR_MIN_MS..=RR_MAX_MS).contains(v))
            .collect();
        let dropped = intervals.len() - kept.len();
        (RrSeries { intervals: kept, t0 }, dropped)
    }

    pub fn intervals(&self) -> &[f64] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.intervals.iter().sum::<f64>() / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvTimeFeatures {
    pub mean_nni: f64,
    pub sdnn: f64,
    pub sdsd: f64,
    pub rmssd: f64,
    pub median_nni: f64,
    pub nni_50: f64,
    pub pnni_50: f64,
    pub nni_20: f64,
    pub pnni_20: f64,
    pub range_nni: f64,
    pub cvsd: f64,
    pub cvnni: f64,
    pub mean_hr: f64,
    pub max_hr: f64,
    pub min_hr: f64,
    pub std_hr: f64,
}

impl HrvTimeFeatures {
    pub const NAMES: [&'static str; 16] = [
        "mean_nni", "sdnn", "sdsd", "rmssd", "median_nni", "nni_50", "pnni_50", "nni_20", "pnni_20",
        "range_nni", "cvsd", "cvnni", "mean_hr", "max_hr", "min_hr", "std_hr",
    ];

    pub fn values(&self) -> [f64; 16] {
        [
            self.mean_nni, self.sdnn, self.sdsd, self.rmssd, self.median_nni, self.nni_50, self.pnni_50,
            self.nni_20, self.pnni_20, self.range_nni, self.cvsd, self.cvnni, self.mean_hr, self.max_hr,
            self.min_hr, self.std_hr,
        ]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard deviation with `ddof` degrees of freedom removed; 0 when undefined.
fn std(v: &[f64], ddof: usize) -> f64 {
    if v.len() <= ddof {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - ddof) as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn hrv_time_features(rr: &RrSeries) -> Result<HrvTimeFeatures> {
    let nn = rr.intervals();
    if nn.len() < 2 {
        return Err(Error::InsufficientData {
            what: "hrv time features",
            reason: format!("{} intervals, need at least 2", nn.len()),
        });
    }
    let diffs: Vec<f64> = nn.windows(2).map(|w| w[1] - w[0]).collect();
    let n_diffs = diffs.len() as f64;
    let nni_50 = diffs.iter().filter(|d| d.abs() > 50.0).count() as f64;
    let nni_20 = diffs.iter().filter(|d| d.abs() > 20.0).count() as f64;
    let mean_nni = mean(nn);
    let sdnn = std(nn, 1);
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / n_diffs).sqrt();
    let hr: Vec<f64> = nn.iter().map(|v| 60_000.0 / v).collect();
    let (min_nn, max_nn) = nn
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(HrvTimeFeatures {
        mean_nni,
        sdnn,
        sdsd: std(&diffs, 0),
        rmssd,
        median_nni: median(nn),
        nni_50,
        pnni_50: nni_50 / n_diffs,
        nni_20,
        pnni_20: nni_20 / n_diffs,
        range_nni: max_nn - min_nn,
        cvsd: rmssd / mean_nni,
        cvnni: sdnn / mean_nni,
        mean_hr: mean(&hr),
        max_hr: hr.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_hr: hr.iter().copied().fold(f64::INFINITY, f64::min),
        std_hr: std(&hr, 1),
    })
}

/// Frequency bands in Hz, each `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub vlf: (f64, f64),
    pub lf: (f64, f64),
    pub hf: (f64, f64),
}

impl Default for BandSpec {
    fn default() -> Self {
        BandSpec {
            vlf: (0.003, 0.04),
            lf: (0.04, 0.15),
            hf: (0.15, 0.40),
        }
    }
}

impl BandSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = [self.vlf, self.lf, self.hf]
            .iter()
            .all(|(lo, hi)| *lo >= 0.0 && hi > lo)
            && self.vlf.1 <= self.lf.0
            && self.lf.1 <= self.hf.0;
        if ordered {
            Ok(())
        } else {
            Err(Error::invalid("bands", "bands must be ordered and non-overlapping"))
        }
    }
}

/// Tachogram resampling and Welch settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub resample_hz: f64,
    pub max_segment: usize,
    pub min_span_s: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            resample_hz: 4.0,
            max_segment: 256,
            min_span_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvFreqFeatures {
    pub total_power: f64,
    pub vlf: f64,
    pub lf: f64,
    pub hf: f64,
    pub lf_hf_ratio: f64,
    pub lfnu: f64,
    pub hfnu: f64,
    /// Set when `lf + hf` (or `hf` for the ratio) is zero and the ratios were zeroed.
    pub degenerate: bool,
}

impl HrvFreqFeatures {
    pub const NAMES: [&'static str; 7] = ["total_power", "vlf", "lf", "hf", "lf_hf_ratio", "lfnu", "hfnu"];

    pub fn values(&self) -> [f64; 7] {
        [self.total_power, self.vlf, self.lf, self.hf, self.lf_hf_ratio, self.lfnu, self.hfnu]
    }
}

/// Band powers below this are treated as numerically zero.
pub const POWER_FLOOR: f64 = 1e-10;

/// Evenly resampled, mean-removed tachogram (ms) at `fs` Hz.
pub fn resample_tachogram(rr: &RrSeries, fs: f64) -> Result<Vec<f64>> {
    let nn = rr.intervals();
    if nn.len() < 2 {
        return Err(Error::InsufficientData {
            what: "tachogram",
            reason: "need at least 2 intervals".into(),
        });
    }
    let mut t = Vec::with_capacity(nn.len());
    let mut acc = 0.0;
    for v in nn {
        acc += v / 1000.0;
        t.push(acc - nn[0] / 1000.0);
    }
    let spline = CubicSpline::new(&t, nn)?;
    let end = *t.last().expect("non-empty");
    let n = (end * fs).floor() as usize + 1;
    let mut out: Vec<f64> = (0..n).map(|i| spline.eval(i as f64 / fs)).collect();
    let m = mean(&out);
    out.iter_mut().for_each(|v| *v -= m);
    Ok(out)
}

pub fn hrv_freq_features(rr: &RrSeries, bands: &BandSpec) -> Result<HrvFreqFeatures> {
    hrv_freq_features_with(rr, bands, &SpectralConfig::default())
}

pub fn hrv_freq_features_with(rr: &RrSeries, bands: &BandSpec, cfg: &SpectralConfig) -> Result<HrvFreqFeatures> {
    bands.validate()?;
    if rr.len() < 4 || rr.duration_s() < cfg.min_span_s {
        return Err(Error::InsufficientData {
            what: "hrv frequency features",
            reason: format!(
                "{} intervals spanning {:.1} s; need at least 4 spanning {} s",
                rr.len(),
                rr.duration_s(),
                cfg.min_span_s
            ),
        });
    }
    let x = resample_tachogram(rr, cfg.resample_hz)?;
    let seg = cfg.max_segment.min(x.len());
    let psd = welch_psd(&x, cfg.resample_hz, seg, seg / 2)?;
    let floor = |p: f64| if p < POWER_FLOOR { 0.0 } else { p };
    let vlf = floor(band_power(&psd, bands.vlf.0, bands.vlf.1));
    let lf = floor(band_power(&psd, bands.lf.0, bands.lf.1));
    let hf = floor(band_power(&psd, bands.hf.0, bands.hf.1));
    let total_power = floor(psd.total_power());
    let mut degenerate = false;
    let (lfnu, hfnu) = if lf + hf > 0.0 {
        (100.0 * lf / (lf + hf), 100.0 * hf / (lf + hf))
    } else {
        degenerate = true;
        (0.0, 0.0)
    };
    let lf_hf_ratio = if hf > 0.0 {
        lf / hf
    } else {
        degenerate = true;
        0.0
    };
    Ok(HrvFreqFeatures {
        total_power,
        vlf,
        lf,
        hf,
        lf_hf_ratio,
        lfnu,
        hfnu,
        degenerate,
    })
}
