use super::CostMapError;

pub const OTSU_BINS: usize = 256;

/// Histogram bin of `v` for `OTSU_BINS` uniform bins over `[min, max]`.
pub fn otsu_bin(v: f64, min: f64, max: f64) -> usize {
    let b = ((v - min) / (max - min) * OTSU_BINS as f64).floor();
    (b.max(0.0) as usize).min(OTSU_BINS - 1)
}

/// Value of the boundary below bin `cut`.
pub fn otsu_boundary(cut: usize, min: f64, max: f64) -> f64 {
    min + cut as f64 * (max - min) / OTSU_BINS as f64
}

/// Best cut index in `1..OTSU_BINS` (class 0 holds bins `< cut`) and the
/// observed value range.
pub fn otsu_cut(values: &[f64]) -> Result<(usize, f64, f64), CostMapError> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() || !(max > min) {
        return Err(CostMapError::DegenerateInput);
    }
    let mut hist = [0u64; OTSU_BINS];
    for &v in values {
        hist[otsu_bin(v, min, max)] += 1;
    }
    let total_n = values.len() as f64;
    let total_s: f64 = hist
        .iter()
        .enumerate()
        .map(|(b, &c)| b as f64 * c as f64)
        .sum();

    let mut best = (1, f64::NEG_INFINITY);
    let (mut n0, mut s0) = (0.0, 0.0);
    for cut in 1..OTSU_BINS {
        let b = cut - 1;
        n0 += hist[b] as f64;
        s0 += b as f64 * hist[b] as f64;
        let n1 = total_n - n0;
        let s1 = total_s - s0;
        let var = if n0 == 0.0 || n1 == 0.0 {
            0.0
        } else {
            between_class_variance(n0, s0, n1, s1, total_n)
        };
        if var > best.1 {
            best = (cut, var);
        }
    }
    Ok((best.0, min, max))
}

pub(crate) fn between_class_variance(n0: f64, s0: f64, n1: f64, s1: f64, n: f64) -> f64 {
    let m0 = s0 / n0;
    let m1 = s1 / n1;
    n0 * n1 * (m0 - m1) * (m0 - m1) / (n * n)
}

/// Otsu threshold over a 256-bin histogram spanning the observed range.
/// Values above the returned threshold form the upper class. Ties go to
/// the lowest threshold.
pub fn otsu_threshold(values: &[f64]) -> Result<f64, CostMapError> {
    let (cut, min, max) = otsu_cut(values)?;
    Ok(otsu_boundary(cut, min, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search recomputing both classes from the raw values per cut.
    fn brute_force_cut(values: &[f64]) -> usize {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut best = (0, f64::NEG_INFINITY);
        for cut in 1..OTSU_BINS {
            let (mut n0, mut s0, mut n1, mut s1) = (0.0, 0.0, 0.0, 0.0);
            for &v in values {
                let b = otsu_bin(v, min, max) as f64;
                if (b as usize) < cut {
                    n0 += 1.0;
                    s0 += b;
                } else {
                    n1 += 1.0;
                    s1 += b;
                }
            }
            let var = if n0 == 0.0 || n1 == 0.0 {
                0.0
            } else {
                let m0 = s0 / n0;
                let m1 = s1 / n1;
                let n = values.len() as f64;
                n0 * n1 * (m0 - m1) * (m0 - m1) / (n * n)
            };
            if var > best.1 {
                best = (cut, var);
            }
        }
        best.0
    }

    #[test]
    fn bimodal_threshold_separates_modes() {
        let mut v = vec![0.1; 50];
        v.extend(vec![0.9; 50]);
        let t = otsu_threshold(&v).unwrap();
        assert!(t > 0.1 && t < 0.9);
    }

    #[test]
    fn constant_input_is_degenerate() {
        assert!(matches!(
            otsu_threshold(&[0.4; 10]),
            Err(CostMapError::DegenerateInput)
        ));
        assert!(matches!(
            otsu_threshold(&[]),
            Err(CostMapError::DegenerateInput)
        ));
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..100 {
            let n = 32 * 32;
            let values: Vec<f64> = if trial % 2 == 0 {
                (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
            } else {
                (0..n)
                    .map(|_| {
                        let mode = if rng.random_bool(0.3) { 0.8 } else { 0.2 };
                        mode + rng.random_range(-0.15..0.15)
                    })
                    .collect()
            };
            let (cut, _, _) = otsu_cut(&values).unwrap();
            assert_eq!(cut, brute_force_cut(&values), "trial {trial}");
        }
    }
}
