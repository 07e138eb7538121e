//! Hurwitz and Riemann zeta functions on the real line.
//!
//! Both are evaluated with the Euler–Maclaurin formula after shifting the
//! argument by `SHIFT` terms. For `s` well below zero the Riemann function
//! goes through the reflection formula instead, since the shifted head and
//! tail then cancel to many digits.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

const SHIFT: usize = 24;

/// B_2, B_4, ..., B_24 divided by (2k)!.
const BERNOULLI_OVER_FACTORIAL: [f64; 12] = [
    1.0 / 6.0 / 2.0,
    -1.0 / 30.0 / 24.0,
    1.0 / 42.0 / 720.0,
    -1.0 / 30.0 / 40320.0,
    5.0 / 66.0 / 3628800.0,
    -691.0 / 2730.0 / 479001600.0,
    7.0 / 6.0 / 87178291200.0,
    -3617.0 / 510.0 / 20922789888000.0,
    43867.0 / 798.0 / 6402373705728000.0,
    -174611.0 / 330.0 / 2432902008176640000.0,
    854513.0 / 138.0 / 1.1240007277776077e21,
    -236364091.0 / 2730.0 / 6.204484017332394e23,
];

/// Hurwitz zeta `ζ(s, a) = Σ_{n≥0} (n + a)^{-s}` for real `s ≠ 1` and `a > 0`.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    assert!(a > 0.0, "hurwitz_zeta requires a > 0, got {a}");
    assert!((s - 1.0).abs() > 1e-14, "hurwitz_zeta has a pole at s = 1");

    let mut head = 0.0;
    for n in 0..SHIFT {
        head += (a + n as f64).powf(-s);
    }
    let x = a + SHIFT as f64;
    let mut tail = x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);

    // rising factorial s (s+1) ... (s+2k-2) times x^{-s-2k+1}
    let mut rising = s;
    let mut power = x.powf(-s - 1.0);
    for (k, coeff) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        let term = coeff * rising * power;
        tail += term;
        if term.abs() < 1e-18 * tail.abs().max(head.abs()) {
            break;
        }
        let j = 2.0 * k as f64;
        rising *= (s + j + 1.0) * (s + j + 2.0);
        power /= x * x;
    }
    head + tail
}

/// Riemann zeta `ζ(s)` for real `s ≠ 1`, including the continuation to `s < 1`.
pub fn riemann_zeta(s: f64) -> f64 {
    if s >= -0.25 {
        return hurwitz_zeta(s, 1.0);
    }
    // ζ(s) = 2^s π^{s−1} sin(πs/2) Γ(1−s) ζ(1−s)
    let half = 0.5 * s;
    if half == half.round() {
        return 0.0;
    }
    2f64.powf(s) * PI.powf(s - 1.0) * (PI * half).sin() * gamma(1.0 - s) * hurwitz_zeta(1.0 - s, 1.0)
}
