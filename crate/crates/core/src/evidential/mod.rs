//! Evidential classification (Dirichlet) and regression (Normal-Inverse-Gamma).
//!
//! Probability and uncertainty transforms, the per-pixel semantic loss
//! (sum-of-squares risk plus annealed KL regularizer), the box-edge detection
//! loss (Student-t NLL plus evidence-scaled error regularizer) and their
//! analytic gradients.

mod raster;
pub mod special;

pub use raster::{semantic_loss, DirichletRaster};

use thiserror::Error;

use special::{digamma, ln_gamma, trigamma};

/// Weight of the evidence regularizer in the detection loss.
pub const DEFAULT_LAMBDA_DET: f64 = 0.04;
/// Weight of the detection loss in the combined loss.
pub const DEFAULT_LAMBDA: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvidentialError {
    #[error("dirichlet parameters must all be >= 1 (got {0})")]
    InvalidAlpha(f64),
    #[error("dirichlet needs at least one class")]
    NoClasses,
    #[error("NIG parameters out of range: upsilon > 0, alpha > 1, beta > 0 required ({0})")]
    InvalidNig(String),
    #[error("class index {index} out of range for {classes} classes")]
    BadLabel { index: usize, classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self, EvidentialError> {
        if alpha.is_empty() {
            return Err(EvidentialError::NoClasses);
        }
        if let Some(&bad) = alpha.iter().find(|a| !(**a >= 1.0) || !a.is_finite()) {
            return Err(EvidentialError::InvalidAlpha(bad));
        }
        Ok(Self { alpha })
    }

    /// Parameters from non-negative evidence, `α = e + 1`.
    pub fn from_evidence(evidence: &[f64]) -> Result<Self, EvidentialError> {
        Self::new(evidence.iter().map(|e| e + 1.0).collect())
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn strength(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

/// `p_i = α_i / S`.
pub fn dirichlet_expected_prob(d: &DirichletParams) -> Vec<f64> {
    expected_prob(d.alpha())
}

/// `u = N / S`.
pub fn dirichlet_uncertainty(d: &DirichletParams) -> f64 {
    uncertainty(d.alpha())
}

pub(crate) fn expected_prob(alpha: &[f64]) -> Vec<f64> {
    let s: f64 = alpha.iter().sum();
    alpha.iter().map(|a| a / s).collect()
}

pub(crate) fn uncertainty(alpha: &[f64]) -> f64 {
    alpha.len() as f64 / alpha.iter().sum::<f64>()
}

/// Index of the largest α, or `None` when the maximum is shared.
pub(crate) fn unique_argmax(alpha: &[f64]) -> Option<usize> {
    let mut best = 0;
    let mut tied = false;
    for (i, &a) in alpha.iter().enumerate().skip(1) {
        if a > alpha[best] {
            best = i;
            tied = false;
        } else if a == alpha[best] {
            tied = true;
        }
    }
    (!tied).then_some(best)
}

fn check_label(d: &DirichletParams, label: usize) -> Result<(), EvidentialError> {
    if label >= d.classes() {
        return Err(EvidentialError::BadLabel {
            index: label,
            classes: d.classes(),
        });
    }
    Ok(())
}

/// Sum-of-squares Bayes risk `Σ_j (y_j − p_j)² + p_j(1 − p_j)/(S + 1)`.
pub fn sum_of_squares_risk(d: &DirichletParams, label: usize) -> Result<f64, EvidentialError> {
    check_label(d, label)?;
    let s = d.strength();
    Ok(d.alpha()
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let p = a / s;
            let y = if j == label { 1.0 } else { 0.0 };
            (y - p).powi(2) + p * (1.0 - p) / (s + 1.0)
        })
        .sum())
}

/// `α̃ = y + (1 − y) ⊙ α`: evidence for the true class removed.
fn misleading_alpha(d: &DirichletParams, label: usize) -> Vec<f64> {
    d.alpha()
        .iter()
        .enumerate()
        .map(|(j, &a)| if j == label { 1.0 } else { a })
        .collect()
}

/// `KL(Dir(α) ‖ Dir(1))`.
fn kl_to_uniform(alpha: &[f64]) -> f64 {
    let k = alpha.len() as f64;
    let s: f64 = alpha.iter().sum();
    let psi_s = digamma(s);
    let mut kl = ln_gamma(s) - ln_gamma(k);
    for &a in alpha {
        kl += -ln_gamma(a) + (a - 1.0) * (digamma(a) - psi_s);
    }
    kl
}

/// KL regularizer on the misleading evidence, `KL(Dir(α̃) ‖ Dir(1))`.
pub fn dirichlet_kl(d: &DirichletParams, label: usize) -> Result<f64, EvidentialError> {
    check_label(d, label)?;
    Ok(kl_to_uniform(&misleading_alpha(d, label)))
}

/// Per-pixel semantic loss `L(ζ) + λ_s · L^KL`.
pub fn dirichlet_loss(
    d: &DirichletParams,
    label: usize,
    lambda_s: f64,
) -> Result<f64, EvidentialError> {
    Ok(sum_of_squares_risk(d, label)? + lambda_s * dirichlet_kl(d, label)?)
}

/// Analytic `∂ dirichlet_loss / ∂α`.
pub fn dirichlet_loss_grad(
    d: &DirichletParams,
    label: usize,
    lambda_s: f64,
) -> Result<Vec<f64>, EvidentialError> {
    check_label(d, label)?;
    let alpha = d.alpha();
    let s = d.strength();
    let p: Vec<f64> = alpha.iter().map(|a| a / s).collect();
    let y = |j: usize| if j == label { 1.0 } else { 0.0 };
    let resid_dot_p: f64 = (0..p.len()).map(|j| (y(j) - p[j]) * p[j]).sum();
    let sum_p2: f64 = p.iter().map(|v| v * v).sum();
    let var_sum = 1.0 - sum_p2;

    let tilde = misleading_alpha(d, label);
    let k = tilde.len() as f64;
    let s_tilde: f64 = tilde.iter().sum();
    let tri_s = trigamma(s_tilde);

    Ok((0..p.len())
        .map(|i| {
            let d_err = -2.0 / s * ((y(i) - p[i]) - resid_dot_p);
            let d_var = -2.0 / s * (p[i] - sum_p2);
            let risk = d_err + d_var / (s + 1.0) - var_sum / ((s + 1.0) * (s + 1.0));
            // α̃_i depends on α_i only off the true class.
            let kl = if i == label {
                0.0
            } else {
                (tilde[i] - 1.0) * trigamma(tilde[i]) - (s_tilde - k) * tri_s
            };
            risk + lambda_s * kl
        })
        .collect())
}

/// `λ_s = min(1, t / 4)` with `t` the fractional epoch count.
pub fn annealing_coefficient(iteration: u64, iters_per_epoch: u64) -> f64 {
    assert!(iters_per_epoch > 0, "iters_per_epoch must be positive");
    let t = iteration as f64 / iters_per_epoch as f64;
    (t / 4.0).clamp(0.0, 1.0)
}

/// Normal-Inverse-Gamma parameters of one regressed quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigParams {
    pub gamma: f64,
    pub upsilon: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigParams {
    pub fn new(gamma: f64, upsilon: f64, alpha: f64, beta: f64) -> Result<Self, EvidentialError> {
        let ok = gamma.is_finite()
            && upsilon > 0.0
            && upsilon.is_finite()
            && alpha > 1.0
            && alpha.is_finite()
            && beta > 0.0
            && beta.is_finite();
        if !ok {
            return Err(EvidentialError::InvalidNig(format!(
                "gamma={gamma}, upsilon={upsilon}, alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self {
            gamma,
            upsilon,
            alpha,
            beta,
        })
    }

    /// Member of the `α = 3, υ = 1` family whose aleatoric variance is `u_a`.
    pub fn with_aleatoric(gamma: f64, u_a: f64) -> Result<Self, EvidentialError> {
        const ALPHA: f64 = 3.0;
        Self::new(gamma, 1.0, ALPHA, u_a * (ALPHA - 1.0))
    }

    pub fn aleatoric(&self) -> f64 {
        self.beta / (self.alpha - 1.0)
    }

    pub fn epistemic(&self) -> f64 {
        self.aleatoric() / self.upsilon
    }
}

/// `(U_a, U_e) = (β/(α−1), U_a/υ)`.
pub fn nig_uncertainties(n: &NigParams) -> (f64, f64) {
    (n.aleatoric(), n.epistemic())
}

/// Student-t marginal negative log-likelihood of `y`.
pub fn nig_nll(n: &NigParams, y: f64) -> f64 {
    let omega = 2.0 * n.beta * (1.0 + n.upsilon);
    let r = y - n.gamma;
    0.5 * (std::f64::consts::PI / n.upsilon).ln() - n.alpha * omega.ln()
        + (n.alpha + 0.5) * (r * r * n.upsilon + omega).ln()
        + ln_gamma(n.alpha)
        - ln_gamma(n.alpha + 0.5)
}

/// Gradient of [`nig_nll`] in `(γ, υ, α, β)` order.
pub fn nig_nll_grad(n: &NigParams, y: f64) -> [f64; 4] {
    let omega = 2.0 * n.beta * (1.0 + n.upsilon);
    let r = y - n.gamma;
    let q = r * r * n.upsilon + omega;
    let a_half = n.alpha + 0.5;
    [
        -2.0 * a_half * r * n.upsilon / q,
        -0.5 / n.upsilon - n.alpha * 2.0 * n.beta / omega + a_half * (r * r + 2.0 * n.beta) / q,
        -omega.ln() + q.ln() + digamma(n.alpha) - digamma(a_half),
        -n.alpha / n.beta + a_half * 2.0 * (1.0 + n.upsilon) / q,
    ]
}

/// Evidence-scaled error `|y − γ| · (2υ + α)`.
pub fn nig_regularizer(n: &NigParams, y: f64) -> f64 {
    (y - n.gamma).abs() * (2.0 * n.upsilon + n.alpha)
}

/// Gradient of [`nig_regularizer`] in `(γ, υ, α, β)` order (subgradient 0 at `γ = y`).
pub fn nig_regularizer_grad(n: &NigParams, y: f64) -> [f64; 4] {
    let r = y - n.gamma;
    let sign = if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    };
    [
        -sign * (2.0 * n.upsilon + n.alpha),
        2.0 * r.abs(),
        r.abs(),
        0.0,
    ]
}

/// NIG parameters of the four edges `(x_min, y_min, x_max, y_max)` of one box.
pub type BoxEdges = [NigParams; 4];

/// `Σ_boxes Σ_edges nll + λ_det · regularizer`.
pub fn detection_loss(boxes: &[(BoxEdges, [f64; 4])], lambda_det: f64) -> f64 {
    boxes
        .iter()
        .flat_map(|(edges, target)| edges.iter().zip(target.iter()))
        .map(|(n, &y)| nig_nll(n, y) + lambda_det * nig_regularizer(n, y))
        .sum()
}

/// `L_sem + λ · L_det`.
pub fn combined_loss(sem: f64, det: f64, lambda: f64) -> f64 {
    sem + lambda * det
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dir(a: &[f64]) -> DirichletParams {
        DirichletParams::new(a.to_vec()).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        diff / norm.max(1.0)
    }

    #[test]
    fn expected_prob_examples() {
        let p = dirichlet_expected_prob(&dir(&[1.0, 1.0, 1.0]));
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(dirichlet_expected_prob(&dir(&[9.0, 1.0])), vec![0.9, 0.1]);
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(dirichlet_uncertainty(&dir(&[1.0, 1.0])), 1.0);
        assert!((dirichlet_uncertainty(&dir(&[99.0, 1.0])) - 0.02).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for k in 0..=990 {
            let a1 = 1.0 + k as f64 * 0.1;
            let u = dirichlet_uncertainty(&dir(&[a1, 2.0, 3.0]));
            assert!(u < last);
            last = u;
        }
    }

    #[test]
    fn invalid_dirichlet_rejected() {
        assert!(DirichletParams::new(vec![0.5, 2.0]).is_err());
        assert!(DirichletParams::new(vec![]).is_err());
        assert!(DirichletParams::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn loss_vanishes_for_overwhelming_correct_evidence() {
        let d = dir(&[1e6, 1.0, 1.0]);
        assert!(dirichlet_loss(&d, 0, 0.0).unwrap() < 1e-3);
    }

    #[test]
    fn kl_is_zero_at_uniform() {
        for label in 0..3 {
            assert!(dirichlet_kl(&dir(&[1.0, 1.0, 1.0]), label).unwrap().abs() < 1e-14);
            let l0 = dirichlet_loss(&dir(&[1.0, 1.0, 1.0]), label, 0.0).unwrap();
            let l1 = dirichlet_loss(&dir(&[1.0, 1.0, 1.0]), label, 0.7).unwrap();
            assert!((l0 - l1).abs() < 1e-14);
        }
    }

    #[test]
    fn bad_label_rejected() {
        assert!(matches!(
            dirichlet_loss(&dir(&[1.0, 2.0]), 2, 0.0),
            Err(EvidentialError::BadLabel { .. })
        ));
    }

    #[test]
    fn dirichlet_loss_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..1000 {
            let n = rng.random_range(2..6);
            let alpha: Vec<f64> = (0..n)
                .map(|_| 1.0 + h + rng.random_range(0.0..30.0))
                .collect();
            let label = rng.random_range(0..n);
            let lambda = rng.random_range(0.0..1.0);
            let d = dir(&alpha);
            let grad = dirichlet_loss_grad(&d, label, lambda).unwrap();
            let num: Vec<f64> = (0..n)
                .map(|i| {
                    let mut ap = alpha.clone();
                    let mut am = alpha.clone();
                    ap[i] += h;
                    am[i] -= h;
                    (dirichlet_loss(&dir(&ap), label, lambda).unwrap()
                        - dirichlet_loss(&dir(&am), label, lambda).unwrap())
                        / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&grad, &num) < 1e-5, "{grad:?} vs {num:?}");
        }
    }

    #[test]
    fn annealing_schedule() {
        assert_eq!(annealing_coefficient(0, 100), 0.0);
        assert_eq!(annealing_coefficient(200, 100), 0.5);
        assert_eq!(annealing_coefficient(800, 100), 1.0);
        assert_eq!(annealing_coefficient(10_000, 100), 1.0);
    }

    #[test]
    fn nig_uncertainty_examples() {
        let n = NigParams::new(2.0, 1.0, 2.0, 3.0).unwrap();
        assert_eq!(nig_uncertainties(&n), (3.0, 3.0));
        let big = NigParams::new(2.0, 1e12, 2.0, 3.0).unwrap();
        assert!(nig_uncertainties(&big).1 < 1e-11);
        let pole = NigParams::new(2.0, 1.0, 1.0 + 1e-12, 3.0).unwrap();
        assert!(nig_uncertainties(&pole).0 > 1e12);
        assert!(NigParams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(NigParams::new(0.0, 0.0, 2.0, 1.0).is_err());
        assert!(NigParams::new(0.0, 1.0, 2.0, 0.0).is_err());
        let fam = NigParams::with_aleatoric(5.0, 4.0).unwrap();
        assert!((fam.aleatoric() - 4.0).abs() < 1e-15);
    }

    fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        while hi - lo > 1e-10 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    fn random_nig(rng: &mut impl Rng) -> NigParams {
        NigParams::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(0.05..10.0),
            rng.random_range(1.05..10.0),
            rng.random_range(0.05..10.0),
        )
        .unwrap()
    }

    #[test]
    fn nll_is_minimized_at_the_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = random_nig(&mut rng);
            let y = rng.random_range(-20.0..20.0);
            let g = golden_section_min(
                |g| nig_nll(&NigParams { gamma: g, ..n }, y),
                y - 30.0,
                y + 25.0,
            );
            assert!((g - y).abs() < 1e-6);
            let at = nig_nll(&NigParams { gamma: y, ..n }, y);
            let off = nig_nll(
                &NigParams {
                    gamma: y + 1.0,
                    ..n
                },
                y,
            );
            assert!(at < off);
        }
    }

    #[test]
    fn nll_and_regularizer_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-5;
        for _ in 0..1000 {
            let n = random_nig(&mut rng);
            let y = n.gamma + rng.random_range(-10.0..10.0);
            let params = [n.gamma, n.upsilon, n.alpha, n.beta];
            let make = |p: [f64; 4]| NigParams::new(p[0], p[1], p[2], p[3]).unwrap();
            let num = |f: &dyn Fn(&NigParams) -> f64| -> Vec<f64> {
                (0..4)
                    .map(|i| {
                        let mut pp = params;
                        let mut pm = params;
                        pp[i] += h;
                        pm[i] -= h;
                        (f(&make(pp)) - f(&make(pm))) / (2.0 * h)
                    })
                    .collect()
            };
            let g = nig_nll_grad(&n, y);
            let gn = num(&|m| nig_nll(m, y));
            assert!(rel_err(&g, &gn) < 1e-5, "{g:?} vs {gn:?}");
            let g = nig_regularizer_grad(&n, y);
            let gn = num(&|m| nig_regularizer(m, y));
            assert!(rel_err(&g, &gn) < 1e-5, "{g:?} vs {gn:?}");
        }
    }

    #[test]
    fn regularizer_examples() {
        let n = NigParams::new(3.0, 1.0, 2.0, 1.0).unwrap();
        assert_eq!(nig_regularizer(&n, 3.0), 0.0);
        assert_eq!(nig_regularizer(&n, 4.0), 4.0);
        assert_eq!(nig_regularizer(&n, 5.0), 2.0 * nig_regularizer(&n, 4.0));
    }

    #[test]
    fn detection_loss_examples() {
        assert_eq!(detection_loss(&[], DEFAULT_LAMBDA_DET), 0.0);
        let target = [60.0, 60.0, 68.0, 68.0];
        let perfect = target.map(|t| NigParams::new(t, 1.0, 2.0, 1.0).unwrap());
        let nll: f64 = perfect
            .iter()
            .zip(&target)
            .map(|(n, &y)| nig_nll(n, y))
            .sum();
        assert!((detection_loss(&[(perfect, target)], 0.04) - nll).abs() < 1e-12);

        let off = [61.0, 58.5, 70.0, 67.0];
        let bad = off.map(|g| NigParams::new(g, 1.5, 2.5, 0.7).unwrap());
        let reg: f64 = bad
            .iter()
            .zip(&target)
            .map(|(n, &y)| nig_regularizer(n, y))
            .sum();
        let diff = detection_loss(&[(bad, target)], 0.04) - detection_loss(&[(bad, target)], 0.01);
        assert!((diff - 0.03 * reg).abs() < 1e-12);
    }

    #[test]
    fn combined_loss_examples() {
        assert_eq!(combined_loss(1.0, 0.0, DEFAULT_LAMBDA), 1.0);
        assert_eq!(combined_loss(0.0, 1.0, DEFAULT_LAMBDA), 15.0);
        assert_eq!(combined_loss(2.0, 3.0, DEFAULT_LAMBDA), 47.0);
    }

    #[test]
    fn unique_argmax_reports_ties() {
        assert_eq!(unique_argmax(&[1.0, 3.0, 2.0]), Some(1));
        assert_eq!(unique_argmax(&[1.0, 1.0, 1.0]), None);
        assert_eq!(unique_argmax(&[3.0, 3.0, 1.0]), None);
        assert_eq!(unique_argmax(&[3.0, 1.0, 3.5]), Some(2));
    }

    proptest! {
        #[test]
        fn probabilities_normalize(alpha in proptest::collection::vec(1.0f64..1e4, 1..12)) {
            let d = DirichletParams::new(alpha).unwrap();
            let sum: f64 = dirichlet_expected_prob(&d).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let u = dirichlet_uncertainty(&d);
            prop_assert!(u > 0.0 && u <= 1.0);
        }

        #[test]
        fn nll_is_shift_invariant(
            gamma in -50.0f64..50.0, y in -50.0f64..50.0, shift in -100.0f64..100.0,
            upsilon in 0.1f64..5.0, alpha in 1.1f64..6.0, beta in 0.1f64..5.0,
        ) {
            let n = NigParams::new(gamma, upsilon, alpha, beta).unwrap();
            let m = NigParams { gamma: gamma + shift, ..n };
            prop_assert!((nig_nll(&n, y) - nig_nll(&m, y + shift)).abs() < 1e-9);
        }

        #[test]
        fn loss_is_nonnegative(
            alpha in proptest::collection::vec(1.0f64..100.0, 2..6), lambda in 0.0f64..1.0, pick in 0usize..6,
        ) {
            let label = pick % alpha.len();
            let d = DirichletParams::new(alpha).unwrap();
            prop_assert!(dirichlet_loss(&d, label, lambda).unwrap() >= -1e-12);
        }
    }
}
