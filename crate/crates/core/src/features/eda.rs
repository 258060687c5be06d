//! Skin-conductance level and response (SCR) features.

use serde::{Deserialize, Serialize};

use super::filter::{BandPass, LowPass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScSeries {
    /// Microsiemens.
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl ScSeries {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::invalid("sample_rate", "must be positive"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("skin conductance samples".into()));
        }
        Ok(ScSeries { samples, sample_rate })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Phasic band and SCR detector thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrConfig {
    pub phasic_low_hz: f64,
    pub phasic_high_hz: f64,
    pub filter_order: usize,
    /// µS/s on the band-passed trace that marks an onset.
    pub onset_slope: f64,
    /// Smallest trough-to-peak rise counted as a response, µS.
    pub min_amplitude: f64,
    /// Longest onset-to-peak rise searched, seconds.
    pub max_rise_s: f64,
    pub min_window_s: f64,
}

impl Default for ScrConfig {
    fn default() -> Self {
        ScrConfig {
            phasic_low_hz: 0.16,
            phasic_high_hz: 2.1,
            filter_order: 4,
            onset_slope: 0.01,
            min_amplitude: 0.05,
            max_rise_s: 5.0,
            min_window_s: 10.0,
        }
    }
}

impl ScrConfig {
    /// Smallest sample rate whose Nyquist frequency covers the phasic band.
    pub fn min_sample_rate(&self) -> f64 {
        2.0 * self.phasic_high_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScResponse {
    pub onset_s: f64,
    pub peak_s: f64,
    pub amplitude: f64,
    pub duration_s: f64,
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScFeatures {
    pub level: f64,
    pub phasic_power: f64,
    pub response_rate: f64,
    pub second_diff_power: f64,
    pub response_count: f64,
    pub magnitude_sum: f64,
    pub duration_sum: f64,
    pub area_sum: f64,
}

impl ScFeatures {
    pub const NAMES: [&'static str; 8] = [
        "sc_level",
        "sc_phasic_power",
        "sc_response_rate",
        "sc_second_diff_power",
        "sc_response_count",
        "sc_magnitude",
        "sc_duration",
        "sc_area",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.level,
            self.phasic_power,
            self.response_rate,
            self.second_diff_power,
            self.response_count,
            self.magnitude_sum,
            self.duration_sum,
            self.area_sum,
        ]
    }
}

pub fn sc_features(sc: &ScSeries) -> Result<ScFeatures> {
    sc_features_with(sc, &ScrConfig::default())
}

pub fn sc_features_with(sc: &ScSeries, cfg: &ScrConfig) -> Result<ScFeatures> {
    let responses = detect_responses(sc, cfg)?;
    let x = &sc.samples;
    let n = x.len() as f64;
    let phasic = BandPass::new(cfg.phasic_low_hz, cfg.phasic_high_hz, sc.sample_rate, cfg.filter_order)?.filtfilt(x);
    let second: Vec<f64> = x.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    let second_diff_power = if second.is_empty() {
        0.0
    } else {
        second.iter().map(|v| v * v).sum::<f64>() / second.len() as f64
    };
    Ok(ScFeatures {
        level: x.iter().sum::<f64>() / n,
        phasic_power: phasic.iter().map(|v| v * v).sum::<f64>() / n,
        response_rate: responses.len() as f64 / sc.duration_s(),
        second_diff_power,
        response_count: responses.len() as f64,
        magnitude_sum: responses.iter().map(|r| r.amplitude).sum(),
        duration_sum: responses.iter().map(|r| r.duration_s).sum(),
        area_sum: responses.iter().map(|r| r.area).sum(),
    })
}

/// Trough-to-peak SCR scan.
///
/// Onsets are where the band-passed derivative rises above `onset_slope`.
/// The band-pass attenuates slow rises, so the response itself (peak,
/// amplitude, half-recovery, area) is measured on the low-passed trace
/// starting from the band-passed peak.
pub fn detect_responses(sc: &ScSeries, cfg: &ScrConfig) -> Result<Vec<ScResponse>> {
    let fs = sc.sample_rate;
    if fs < cfg.min_sample_rate() {
        return Err(Error::SampleRateTooLow {
            required: cfg.min_sample_rate(),
            actual: fs,
        });
    }
    if sc.duration_s() < cfg.min_window_s {
        return Err(Error::InsufficientData {
            what: "skin conductance window",
            reason: format!("{:.1} s, need at least {} s", sc.duration_s(), cfg.min_window_s),
        });
    }
    let x = &sc.samples;
    let n = x.len();
    let phasic = BandPass::new(cfg.phasic_low_hz, cfg.phasic_high_hz, fs, cfg.filter_order)?.filtfilt(x);
    // low-pass strictly inside Nyquist even at the minimum rate
    let smooth_cut = cfg.phasic_high_hz.min(0.45 * fs);
    let smooth = LowPass::new(smooth_cut, fs, 2)?.filtfilt(x);
    let slope = |v: &[f64], i: usize| (v[i + 1] - v[i]) * fs;
    let max_rise = (cfg.max_rise_s * fs).ceil() as usize;

    let mut out = Vec::new();
    let mut i = 0;
    let mut armed = true;
    while i + 1 < n {
        let s = slope(&phasic, i);
        if !armed {
            armed = s <= cfg.onset_slope;
            i += 1;
            continue;
        }
        if s <= cfg.onset_slope {
            i += 1;
            continue;
        }
        let onset = i;
        armed = false;
        // band-passed local maximum
        let mut peak = onset;
        while peak + 1 < n && peak - onset < max_rise && phasic[peak + 1] > phasic[peak] {
            peak += 1;
        }
        // continue the rise on the low-passed trace
        while peak + 1 < n && peak - onset < max_rise && smooth[peak + 1] > smooth[peak] {
            peak += 1;
        }
        let base = smooth[onset];
        let amplitude = smooth[peak] - base;
        if amplitude < cfg.min_amplitude {
            i = peak.max(onset + 1);
            continue;
        }
        let half = smooth[peak] - amplitude / 2.0;
        let mut end = peak;
        while end + 1 < n && smooth[end] > half {
            end += 1;
        }
        let area: f64 = smooth[onset..=end].iter().map(|v| (v - base).max(0.0)).sum::<f64>() / fs;
        out.push(ScResponse {
            onset_s: onset as f64 / fs,
            peak_s: peak as f64 / fs,
            amplitude,
            duration_s: (end - onset) as f64 / fs,
            area,
        });
        i = end.max(onset + 1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Baseline 5 µS, linear rise of `amp` over 2 s from each onset, exponential decay (τ = 4 s).
    pub(crate) fn synthetic_scr(fs: f64, seconds: f64, onsets: &[f64], amp: f64) -> ScSeries {
        let n = (fs * seconds) as usize;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                5.0 + onsets
                    .iter()
                    .map(|&o| {
                        let dt = t - o;
                        if dt < 0.0 {
                            0.0
                        } else if dt < 2.0 {
                            amp * dt / 2.0
                        } else {
                            amp * (-(dt - 2.0) / 4.0).exp()
                        }
                    })
                    .sum::<f64>()
            })
            .collect();
        ScSeries::new(samples, fs).unwrap()
    }

    #[test]
    fn constant_signal_has_no_responses() {
        let f = sc_features(&ScSeries::new(vec![4.0; 8 * 60], 8.0).unwrap()).unwrap();
        assert_eq!(f.level, 4.0);
        assert!(f.phasic_power < 1e-12);
        assert_eq!(f.response_count, 0.0);
        assert_eq!((f.magnitude_sum, f.duration_sum, f.area_sum, f.response_rate), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn single_response() {
        let sc = synthetic_scr(8.0, 60.0, &[20.0], 0.3);
        let r = detect_responses(&sc, &ScrConfig::default()).unwrap();
        assert_eq!(r.len(), 1, "{r:?}");
        assert!((r[0].amplitude - 0.3).abs() <= 0.03, "{r:?}");
        assert!(r[0].duration_s > 0.0 && r[0].area > 0.0);
        assert!((r[0].onset_s - 20.0).abs() < 1.5);
    }

    #[test]
    fn two_separated_responses() {
        let sc = synthetic_scr(8.0, 60.0, &[10.0, 38.0], 0.3);
        let f = sc_features(&sc).unwrap();
        assert_eq!(f.response_count, 2.0);
        assert!((f.response_rate - 2.0 / 60.0).abs() < 1e-12);
        assert!((f.magnitude_sum - 0.6).abs() <= 0.06);
    }

    #[test]
    fn rate_and_length_checks() {
        let low = ScSeries::new(vec![1.0; 100], 4.0).unwrap();
        assert!(matches!(sc_features(&low), Err(Error::SampleRateTooLow { required, .. }) if required == 4.2));
        let short = ScSeries::new(vec![1.0; 40], 8.0).unwrap();
        assert!(matches!(sc_features(&short), Err(Error::InsufficientData { .. })));
    }
}
