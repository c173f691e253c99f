//! The Burgers bilinear form `B(u, v) = u v'`, its smooth truncation
//! `B_R(u) = B(u) χ(‖u‖₁ / 5R)`, and the derivatives needed by the
//! variational flow.
//!
//! Products are formed on a padded grid of `m >= 3N + 1` points, so every
//! retained coefficient of `u v'` is alias-free and `⟨B(u, u), u⟩₀`
//! vanishes up to rounding.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlannerScalar};

use crate::spectral::SpectralField;

/// FFT plans for products of fields with `n_max` retained wavenumbers.
#[derive(Clone)]
pub struct Galerkin {
    n_max: usize,
    grid: usize,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Galerkin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Galerkin")
            .field("n_max", &self.n_max)
            .field("grid", &self.grid)
            .finish()
    }
}

impl Galerkin {
    pub fn new(n_max: usize) -> Self {
        let grid = (3 * n_max + 1).next_power_of_two();
        // The scalar planner keeps results identical across CPUs.
        let mut planner = FftPlannerScalar::new();
        Self {
            n_max,
            grid,
            inverse: planner.plan_fft(grid, FftDirection::Inverse),
            forward: planner.plan_fft(grid, FftDirection::Forward),
        }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Number of physical grid points used for products.
    pub fn grid_len(&self) -> usize {
        self.grid
    }

    /// Galerkin-exact coefficients of `u v'`, truncated to `n_max`.
    pub fn bilinear(&self, u: &SpectralField, v: &SpectralField) -> SpectralField {
        let mut out = SpectralField::zeros(self.n_max);
        self.bilinear_into(u, v, &mut out);
        out
    }

    /// `B(u) = u u'`.
    pub fn burgers(&self, u: &SpectralField) -> SpectralField {
        self.bilinear(u, u)
    }

    /// Derivative of `B` at `u` along `j`: `B(j, u) + B(u, j) = (u j)'`.
    pub fn burgers_derivative(&self, u: &SpectralField, j: &SpectralField) -> SpectralField {
        let mut out = self.bilinear(j, u);
        out.axpy(1.0, &self.bilinear(u, j));
        out
    }

    pub fn bilinear_into(&self, u: &SpectralField, v: &SpectralField, out: &mut SpectralField) {
        let n = self.n_max;
        assert!(u.n_max() == n && v.n_max() == n && out.n_max() == n, "mode count mismatch");
        let m = self.grid;
        let s = 0.5 / PI.sqrt();
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        let (ua, ub) = (u.cos_coeffs(), u.sin_coeffs());
        let (va, vb) = (v.cos_coeffs(), v.sin_coeffs());
        for k in 1..=n {
            let kf = k as f64;
            // u:  c_k = s (a - i b);  v': d_k = s k (b + i a).
            let c = Complex64::new(s * ua[k - 1], -s * ub[k - 1]);
            let d = Complex64::new(s * kf * vb[k - 1], s * kf * va[k - 1]);
            let i = Complex64::i();
            buf[k] = c + i * d;
            buf[m - k] = c.conj() + i * d.conj();
        }
        self.inverse.process(&mut buf);
        for z in buf.iter_mut() {
            *z = Complex64::new(z.re * z.im, 0.0);
        }
        self.forward.process(&mut buf);
        let scale = 2.0 * PI.sqrt() / m as f64;
        let oa = out.cos_coeffs_mut();
        for k in 1..=n {
            oa[k - 1] = scale * buf[k].re;
        }
        let ob = out.sin_coeffs_mut();
        for k in 1..=n {
            ob[k - 1] = -scale * buf[k].im;
        }
    }

    /// `B_R(u) = B(u) χ(‖u‖₁ / 5R)`.
    pub fn truncated(&self, u: &SpectralField, r: f64) -> SpectralField {
        let c = cutoff(u.norm(1.0) / (5.0 * r));
        if c == 0.0 {
            SpectralField::zeros(self.n_max)
        } else {
            self.burgers(u).scaled(c)
        }
    }

    /// Derivative of `B_R` at `u` along `j`:
    /// `χ(r)(B(j,u) + B(u,j)) + B(u) χ'(r) ⟨u, j⟩₁ / (5R‖u‖₁)`.
    pub fn truncated_derivative(&self, u: &SpectralField, j: &SpectralField, r: f64) -> SpectralField {
        let norm1 = u.norm(1.0);
        let arg = norm1 / (5.0 * r);
        let c = cutoff(arg);
        let dc = cutoff_derivative(arg);
        let mut out = if c == 0.0 {
            SpectralField::zeros(self.n_max)
        } else {
            self.burgers_derivative(u, j).scaled(c)
        };
        if dc != 0.0 && norm1 > 0.0 {
            let radial = u.inner(j, 1.0) / (5.0 * r * norm1);
            out.axpy(dc * radial, &self.burgers(u));
        }
        out
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Galerkin>> = RefCell::new(HashMap::new());
}

/// Cached [`Galerkin`] for the calling thread.
pub fn galerkin(n_max: usize) -> Galerkin {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry(n_max)
            .or_insert_with(|| Galerkin::new(n_max))
            .clone()
    })
}

/// `B(u, v) = u v'` with alias-free evaluation.
pub fn bilinear(u: &SpectralField, v: &SpectralField) -> SpectralField {
    galerkin(u.n_max()).bilinear(u, v)
}

/// `⟨B(u, v), w⟩₀`.
pub fn trilinear_pairing(u: &SpectralField, v: &SpectralField, w: &SpectralField) -> f64 {
    bilinear(u, v).inner(w, 0.0)
}

pub fn truncated_nonlinearity(u: &SpectralField, r: f64) -> SpectralField {
    galerkin(u.n_max()).truncated(u, r)
}

#[inline]
fn bump(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

/// Smooth cutoff: 1 on `|r| <= 1`, 0 on `|r| >= 2`, and
/// `g(2-|r|) / (g(2-|r|) + g(|r|-1))` in between with `g(s) = e^{-1/s}`.
pub fn cutoff(r: f64) -> f64 {
    let r = r.abs();
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let p = bump(2.0 - r);
        let q = bump(r - 1.0);
        p / (p + q)
    }
}

/// `χ'(r)`.
pub fn cutoff_derivative(r: f64) -> f64 {
    let a = r.abs();
    if a <= 1.0 || a >= 2.0 {
        return 0.0;
    }
    let p = bump(2.0 - a);
    let q = bump(a - 1.0);
    let d = -p * q * ((2.0 - a).powi(-2) + (a - 1.0).powi(-2)) / (p + q).powi(2);
    d * r.signum()
}

/// Random field whose coefficients are Gaussian with a random power-law
/// envelope `k^{-s}`, `s ∈ [0, 2]`, used to probe functional inequalities.
pub fn random_probe_field<R: Rng + ?Sized>(rng: &mut R, n_max: usize) -> SpectralField {
    let decay: f64 = rng.random_range(0.0..2.0);
    let mut f = SpectralField::zeros(n_max);
    for k in 1..=n_max {
        let env = (k as f64).powf(-decay);
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        f.set_mode(k, env * a, env * b);
    }
    f
}

/// Empirical supremum of
/// `|⟨B(u, v), w⟩₀| / (‖u‖_{σ₁} ‖v‖_{σ₂+1} ‖w‖_{σ₃})` over random triples.
pub fn fit_trilinear_constant<R: Rng + ?Sized>(
    sigmas: (f64, f64, f64),
    n_max: usize,
    trials: usize,
    rng: &mut R,
) -> f64 {
    let g = galerkin(n_max);
    let mut sup: f64 = 0.0;
    for _ in 0..trials {
        let u = random_probe_field(rng, n_max);
        let v = random_probe_field(rng, n_max);
        let w = random_probe_field(rng, n_max);
        let denom = u.norm(sigmas.0) * v.norm(sigmas.1 + 1.0) * w.norm(sigmas.2);
        if denom > 0.0 {
            sup = sup.max(g.bilinear(&u, &v).inner(&w, 0.0).abs() / denom);
        }
    }
    sup
}
