//! Binary cross-entropy and Bernoulli KL heads on logits.

use super::sigmoid;

pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of `logits` against 0/1 `labels`, with its gradient.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), labels.len(), "bce: logits and labels differ in length");
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - y) / n
        })
        .collect();
    (loss / n, grad)
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn kl_term(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp(p), clamp(q));
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Mean `KL(p ‖ q)` between Bernoulli probabilities.
pub fn kl_bernoulli(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "kl: length mismatch");
    p.iter().zip(q).map(|(&a, &b)| kl_term(a, b)).sum::<f64>() / p.len().max(1) as f64
}

/// Mean `KL(p ‖ σ(z))` with the gradient flowing only into the logits `z`.
pub fn kl_bernoulli_logits(p: &[f64], q_logits: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(p.len(), q_logits.len(), "kl: length mismatch");
    let n = p.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = p
        .iter()
        .zip(q_logits)
        .map(|(&p, &z)| {
            let q = sigmoid(z);
            loss += kl_term(p, q);
            if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&q) {
                (q - clamp(p)) / n
            } else {
                0.0
            }
        })
        .collect();
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_grads;
    use proptest::prelude::*;

    #[test]
    fn bce_values() {
        assert!((bce_with_logits(&[0.0], &[1.0]).0 - 2f64.ln()).abs() < 1e-15);
        assert!(bce_with_logits(&[20.0], &[1.0]).0 < 1e-8);
        assert!(bce_with_logits(&[-800.0], &[1.0]).0.is_finite());
    }

    #[test]
    fn bce_gradient() {
        let z = vec![0.3, -1.2, 2.5, 0.0];
        let y = vec![1.0, 0.0, 0.0, 1.0];
        let (_, g) = bce_with_logits(&z, &y);
        check_grads("bce", &g, |i, h| {
            let mut z2 = z.clone();
            z2[i] += h;
            bce_with_logits(&z2, &y).0
        }, 1);
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_bernoulli(&[0.3, 0.9], &[0.3, 0.9]), 0.0);
        let expected = 0.5 * (2.0f64 / 3.0).ln() + 0.5 * 2f64.ln();
        assert!((kl_bernoulli(&[0.5], &[0.75]) - expected).abs() < 1e-12);
        assert!((expected - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn kl_gradient() {
        let p = vec![0.2, 0.5, 0.9, 0.6];
        let z = vec![0.4, -2.0, 1.0, 0.0];
        let (_, g) = kl_bernoulli_logits(&p, &z);
        check_grads("kl", &g, |i, h| {
            let mut z2 = z.clone();
            z2[i] += h;
            kl_bernoulli_logits(&p, &z2).0
        }, 2);
    }

    proptest! {
        #[test]
        fn kl_non_negative(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            prop_assert!(kl_bernoulli(&[p], &[q]) >= -1e-15);
        }
    }
}
