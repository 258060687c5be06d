//! Butterworth biquad cascades and zero-phase (forward-backward) filtering.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn new(kind: Kind, cutoff_hz: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = match kind {
            Kind::Low => [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            Kind::High => [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
        };
        Biquad {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Direct form II transposed, started in steady state for a constant input `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let y0 = self.dc_gain() * x0;
        let mut z1 = y0 - self.b[0] * x0;
        let mut z2 = self.b[2] * x0 - self.a[1] * y0;
        for v in x.iter_mut() {
            let xin = *v;
            let y = self.b[0] * xin + z1;
            z1 = self.b[1] * xin - self.a[0] * y + z2;
            z2 = self.b[2] * xin - self.a[1] * y;
            *v = y;
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Low,
    High,
}

/// Q factors of the biquads making up an even-order Butterworth filter.
fn butterworth_qs(order: usize) -> Vec<f64> {
    (1..=order / 2)
        .map(|k| 1.0 / (2.0 * ((2 * k - 1) as f64 * PI / (2 * order) as f64).sin()))
        .collect()
}

/// Butterworth band-pass built from a high-pass and a low-pass of half the order each.
#[derive(Debug, Clone)]
pub struct BandPass {
    sections: Vec<Biquad>,
}

impl BandPass {
    /// `order` counts both edges and must be a positive multiple of 4.
    pub fn new(low_hz: f64, high_hz: f64, fs: f64, order: usize) -> Result<Self> {
        if order == 0 || order % 4 != 0 {
            return Err(Error::invalid("order", format!("band-pass order {order} must be a multiple of 4")));
        }
        if !(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
            return Err(Error::invalid(
                "band",
                format!("need 0 < {low_hz} < {high_hz} < Nyquist ({})", fs / 2.0),
            ));
        }
        let qs = butterworth_qs(order / 2);
        let mut sections: Vec<Biquad> = qs.iter().map(|&q| Biquad::new(Kind::High, low_hz, fs, q)).collect();
        sections.extend(qs.iter().map(|&q| Biquad::new(Kind::Low, high_hz, fs, q)));
        Ok(BandPass { sections })
    }

    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        filtfilt(&self.sections, x)
    }
}

/// Butterworth low-pass.
#[derive(Debug, Clone)]
pub struct LowPass {
    sections: Vec<Biquad>,
}

impl LowPass {
    /// `order` must be a positive even number.
    pub fn new(cutoff_hz: f64, fs: f64, order: usize) -> Result<Self> {
        if order == 0 || order % 2 != 0 {
            return Err(Error::invalid("order", format!("low-pass order {order} must be even")));
        }
        if !(0.0 < cutoff_hz && cutoff_hz < fs / 2.0) {
            return Err(Error::invalid("cutoff", format!("{cutoff_hz} Hz is not below Nyquist")));
        }
        Ok(LowPass {
            sections: butterworth_qs(order)
                .into_iter()
                .map(|q| Biquad::new(Kind::Low, cutoff_hz, fs, q))
                .collect(),
        })
    }

    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        filtfilt(&self.sections, x)
    }
}

/// Zero-phase filtering with odd-reflection padding at both ends.
fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let pad = (6 * sections.len() + 3).min(n - 1);
    let mut buf = Vec::with_capacity(n + 2 * pad);
    buf.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    buf.extend_from_slice(x);
    buf.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.run(&mut buf);
    }
    buf.reverse();
    for s in sections {
        s.run(&mut buf);
    }
    buf.reverse();
    buf[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn passband_and_stopband() {
        let fs = 16.0;
        let bp = BandPass::new(0.16, 2.1, fs, 4).unwrap();
        let n = 4096;
        let mid = bp.filtfilt(&tone(0.6, fs, n));
        assert!((rms(&mid[500..3500]) / rms(&tone(0.6, fs, n)[500..3500]) - 1.0).abs() < 0.05);
        let slow = bp.filtfilt(&tone(0.01, fs, n));
        assert!(rms(&slow[500..3500]) < 0.02);
        let fast = bp.filtfilt(&tone(6.0, fs, n));
        assert!(rms(&fast[500..3500]) < 0.02);
    }

    #[test]
    fn constant_input_has_no_phasic_part() {
        let bp = BandPass::new(0.16, 2.1, 8.0, 4).unwrap();
        let y = bp.filtfilt(&[5.0; 400]);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
        let lp = LowPass::new(2.1, 8.0, 2).unwrap();
        assert!(lp.filtfilt(&[5.0; 400]).iter().all(|v| (v - 5.0).abs() < 1e-9));
    }

    #[test]
    fn invalid_designs() {
        assert!(BandPass::new(0.16, 2.1, 8.0, 6).is_err());
        assert!(BandPass::new(0.16, 5.0, 8.0, 4).is_err());
        assert!(LowPass::new(1.0, 8.0, 3).is_err());
    }
}
