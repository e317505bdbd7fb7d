//! Log-gamma, digamma and trigamma for positive real arguments.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` via the Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        return (PI / (PI * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    let series = x2
        * (1.0 / 12.0
            - x2 * (1.0 / 120.0 - x2 * (1.0 / 252.0 - x2 * (1.0 / 240.0 - x2 * (1.0 / 132.0)))));
    acc + x.ln() - 0.5 / x - series
}

/// `ψ′(x)` for `x > 0`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let ix = 1.0 / x;
    let x2 = ix * ix;
    let series = ix
        + 0.5 * x2
        + ix * x2
            * (1.0 / 6.0
                - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0 - x2 * (5.0 / 66.0)))));
    acc + series
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn ln_gamma_reference_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - 0.5 * PI.ln()).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        // Γ(10.5) = 1133278.3889487855...
        assert!((ln_gamma(10.5) / 1_133_278.388_948_785_5f64.ln() - 1.0).abs() < 1e-12);
        let mut fact = 0.0;
        for n in 1..60 {
            fact += (n as f64).ln();
            let rel = (ln_gamma(n as f64 + 1.0) - fact).abs() / fact.max(1.0);
            assert!(rel < 1e-10, "n={n} rel={rel}");
        }
    }

    #[test]
    fn digamma_reference_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-12);
        assert!((digamma(0.5) + EULER_GAMMA + 2.0 * 2f64.ln()).abs() < 1e-12);
        // ψ(x+1) = ψ(x) + 1/x
        for &x in &[0.3, 1.7, 4.2, 25.0] {
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-12);
        }
    }

    #[test]
    fn trigamma_reference_values() {
        assert!((trigamma(1.0) - PI * PI / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-11);
    }

    #[test]
    fn derivatives_are_consistent() {
        let h = 1e-5;
        for &x in &[0.7, 1.0, 2.5, 9.9, 10.1, 42.0, 300.0] {
            let num = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert!(
                (num - digamma(x)).abs() < 1e-8 * digamma(x).abs().max(1.0),
                "x={x}"
            );
            let num = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!(
                (num - trigamma(x)).abs() < 1e-7 * trigamma(x).max(1.0),
                "x={x}"
            );
        }
    }
}
