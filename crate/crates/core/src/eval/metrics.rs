//! Calibration metrics (ECE, ENCE) and per-DoF error statistics.

use thiserror::Error;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("input lengths differ")]
    LengthMismatch,
    #[error("need at least 2 bins")]
    TooFewBins,
    #[error("predicted variances must be positive and finite")]
    InvalidVariance,
}

/// Bin of `x ∈ [lo, hi]` among `bins` uniform bins; edges go to the higher
/// bin and `hi` to the last.
fn uniform_bin(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let b = ((x - lo) / (hi - lo) * bins as f64).floor();
    (b.max(0.0) as usize).min(bins - 1)
}

/// Expected calibration error over `bins` uniform confidence bins on `[0, 1]`.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64, MetricsError> {
    if confidences.len() != correct.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if confidences.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if bins < 2 {
        return Err(MetricsError::TooFewBins);
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = uniform_bin(c, 0.0, 1.0, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += usize::from(ok);
    }
    let n = confidences.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (hits[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum())
}

/// Expected normalized calibration error: samples binned uniformly over the
/// observed range of predicted variance; empty bins are skipped.
pub fn ence(
    predicted_vars: &[f64],
    squared_errors: &[f64],
    bins: usize,
) -> Result<f64, MetricsError> {
    if predicted_vars.len() != squared_errors.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if predicted_vars.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if bins < 1 {
        return Err(MetricsError::TooFewBins);
    }
    if predicted_vars.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(MetricsError::InvalidVariance);
    }
    let lo = predicted_vars.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = predicted_vars
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut count = vec![0usize; bins];
    let mut var_sum = vec![0.0; bins];
    let mut sq_sum = vec![0.0; bins];
    for (&v, &e2) in predicted_vars.iter().zip(squared_errors) {
        let b = uniform_bin(v, lo, hi, bins);
        count[b] += 1;
        var_sum[b] += v;
        sq_sum[b] += e2;
    }
    let terms: Vec<f64> = (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            let rmv = (var_sum[b] / nb).sqrt();
            let rmse = (sq_sum[b] / nb).sqrt();
            (rmv - rmse).abs() / rmv
        })
        .collect();
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub fn mae(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn hand_computed_two_bin_case() {
        // acc (0.8, 0.6) against conf (0.9, 0.5), 50 samples each.
        let mut conf = vec![0.9; 50];
        conf.extend(vec![0.5; 50]);
        let mut ok = vec![true; 40];
        ok.extend(vec![false; 10]);
        ok.extend(vec![true; 30]);
        ok.extend(vec![false; 20]);
        let e = ece(&conf, &ok, 10).unwrap();
        assert!((e - 0.1).abs() < 1e-12, "{e}");
    }

    #[test]
    fn edges_go_to_higher_bin() {
        assert_eq!(uniform_bin(0.5, 0.0, 1.0, 10), 5);
        assert_eq!(uniform_bin(1.0, 0.0, 1.0, 10), 9);
        assert_eq!(uniform_bin(0.0, 0.0, 1.0, 10), 0);
    }

    #[test]
    fn confident_and_correct_is_zero() {
        assert_eq!(ece(&[1.0; 20], &[true; 20], 10).unwrap(), 0.0);
    }

    #[test]
    fn calibrated_stream_has_small_ece() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let n = 100_000;
        let conf: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let ok: Vec<bool> = conf.iter().map(|&c| rng.random_bool(c)).collect();
        assert!(ece(&conf, &ok, 10).unwrap() < 0.01);
    }

    #[test]
    fn ence_examples() {
        assert_eq!(ence(&[4.0; 10], &[4.0; 10], 10).unwrap(), 0.0);
        assert!((ence(&[4.0; 10], &[9.0; 10], 10).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn variance_matched_errors_have_small_ence() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let n = 100_000;
        let vars: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
        let sq: Vec<f64> = vars
            .iter()
            .map(|&v| {
                Normal::new(0.0, f64::sqrt(v))
                    .unwrap()
                    .sample(&mut rng)
                    .powi(2)
            })
            .collect();
        assert!(ence(&vars, &sq, 10).unwrap() < 0.05);
    }

    #[test]
    fn errors_on_bad_input() {
        assert_eq!(ece(&[], &[], 10), Err(MetricsError::EmptyInput));
        assert_eq!(
            ece(&[0.5], &[true, false], 10),
            Err(MetricsError::LengthMismatch)
        );
        assert_eq!(ece(&[0.5], &[true], 1), Err(MetricsError::TooFewBins));
        assert_eq!(ence(&[], &[], 10), Err(MetricsError::EmptyInput));
        assert_eq!(ence(&[0.0], &[1.0], 10), Err(MetricsError::InvalidVariance));
    }

    #[test]
    fn rmse_and_mae() {
        assert_eq!(rmse(&[3.0, -4.0]), (12.5f64).sqrt());
        assert_eq!(mae(&[3.0, -4.0]), 3.5);
        assert!(rmse(&[]).is_nan());
    }
}
