//! Independent reference solutions shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use levy_burgers::SpectralField;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Points used to represent the heat-equation potential.
pub const COLE_HOPF_GRID: usize = 1024;

/// Exact solution of `u_t = u_xx − u u_x` on the torus at time `t`, via
/// `u = −2 ψ_x / ψ` where `ψ` solves the heat equation from
/// `ψ_0 = exp(−½ ∫φ)`. Returned with `n_out` retained wavenumbers.
pub fn cole_hopf(phi: &SpectralField, t: f64, n_out: usize) -> SpectralField {
    let m = COLE_HOPF_GRID;
    let s = 1.0 / PI.sqrt();
    // Antiderivative of a mean-zero trigonometric polynomial, pointwise.
    let potential: Vec<f64> = (0..m)
        .map(|j| {
            let x = 2.0 * PI * j as f64 / m as f64;
            (1..=phi.n_max())
                .map(|k| {
                    let (a, b) = phi.mode(k);
                    let kf = k as f64;
                    s * (a * (kf * x).sin() - b * (kf * x).cos()) / kf
                })
                .sum::<f64>()
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);

    let mut psi: Vec<Complex64> = potential.iter().map(|p| Complex64::new((-0.5 * p).exp(), 0.0)).collect();
    fwd.process(&mut psi);
    let wavenumber = |i: usize| if i <= m / 2 { i as f64 } else { i as f64 - m as f64 };
    let mut dpsi = psi.clone();
    for i in 0..m {
        let k = wavenumber(i);
        let decay = (-k * k * t).exp();
        psi[i] *= decay;
        dpsi[i] *= decay * Complex64::new(0.0, k);
    }
    if m % 2 == 0 {
        dpsi[m / 2] = Complex64::new(0.0, 0.0);
    }
    inv.process(&mut psi);
    inv.process(&mut dpsi);
    let mut u: Vec<Complex64> = psi
        .iter()
        .zip(&dpsi)
        .map(|(p, d)| Complex64::new(-2.0 * d.re / p.re, 0.0))
        .collect();
    fwd.process(&mut u);
    let scale = 2.0 * PI / m as f64 * s;
    let mut out = SpectralField::zeros(n_out);
    for k in 1..=n_out {
        out.set_mode(k, scale * u[k].re, -scale * u[k].im);
    }
    out
}

/// `E S_1^{-q} = Γ(1 + 2q/α) / Γ(1 + q)` for the standard positive
/// stable law of index `α/2`.
pub fn stable_negative_moment(alpha: f64, q: f64) -> f64 {
    use statrs::function::gamma::gamma;
    gamma(1.0 + 2.0 * q / alpha) / gamma(1.0 + q)
}

/// Sum of per-coefficient absolute differences.
pub fn l1_distance(a: &SpectralField, b: &SpectralField) -> f64 {
    (1..=a.n_max())
        .map(|k| (a.mode(k).0 - b.mode(k).0).abs() + (a.mode(k).1 - b.mode(k).1).abs())
        .sum()
}
