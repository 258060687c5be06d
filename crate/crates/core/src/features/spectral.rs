//! Welch power spectral density.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// One-sided power spectral density on a uniform frequency grid.
#[derive(Debug, Clone)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub density: Vec<f64>,
    pub df: f64,
}

impl Psd {
    /// Integral of the density over the whole one-sided spectrum.
    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.df
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch estimate: Hann-windowed, per-segment mean-removed, density-scaled
/// periodograms averaged over segments of `segment` samples overlapping by
/// `overlap`.
pub fn welch_psd(x: &[f64], fs: f64, segment: usize, overlap: usize) -> Result<Psd> {
    if segment < 2 || segment > x.len() {
        return Err(Error::invalid(
            "segment",
            format!("segment length {segment} must be in 2..={}", x.len()),
        ));
    }
    if overlap >= segment {
        return Err(Error::invalid("overlap", "overlap must be shorter than the segment"));
    }
    let window = hann(segment);
    let scale = 1.0 / (fs * window.iter().map(|w| w * w).sum::<f64>());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment);
    let bins = segment / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut count = 0usize;
    let step = segment - overlap;
    let mut buf = vec![Complex::new(0.0, 0.0); segment];
    let mut start = 0;
    while start + segment <= x.len() {
        let seg = &x[start..start + segment];
        let m = seg.iter().sum::<f64>() / segment as f64;
        for ((b, v), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((v - m) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let mut p = buf[k].norm_sqr() * scale;
            let is_nyquist = segment % 2 == 0 && k == segment / 2;
            if k != 0 && !is_nyquist {
                p *= 2.0;
            }
            *a += p;
        }
        count += 1;
        start += step;
    }
    let df = fs / segment as f64;
    Ok(Psd {
        freqs: (0..bins).map(|k| k as f64 * df).collect(),
        density: acc.into_iter().map(|a| a / count as f64).collect(),
        df,
    })
}

/// Power in `[lo, hi)` as a rectangle-rule integral over the bins.
pub fn band_power(psd: &Psd, lo: f64, hi: f64) -> f64 {
    psd.freqs
        .iter()
        .zip(&psd.density)
        .filter(|(f, _)| **f >= lo && **f < hi)
        .map(|(_, p)| p)
        .sum::<f64>()
        * psd.df
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_noise_power_matches_variance() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..8192).map(|_| StandardNormal.sample(&mut rng)).collect();
        let psd = welch_psd(&x, 4.0, 256, 128).unwrap();
        assert!((psd.total_power() - 1.0).abs() < 0.05, "{}", psd.total_power());
    }

    #[test]
    fn sinusoid_power_is_half_amplitude_squared() {
        let fs = 4.0;
        let x: Vec<f64> = (0..2048)
            .map(|i| 3.0 * (2.0 * std::f64::consts::PI * 0.25 * i as f64 / fs).sin())
            .collect();
        let psd = welch_psd(&x, fs, 256, 128).unwrap();
        assert!((band_power(&psd, 0.2, 0.3) - 4.5).abs() < 0.05);
    }

    #[test]
    fn bad_segment_rejected() {
        assert!(welch_psd(&[0.0; 10], 4.0, 20, 0).is_err());
        assert!(welch_psd(&[0.0; 10], 4.0, 8, 8).is_err());
    }
}
