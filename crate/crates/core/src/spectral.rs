//! Mean-zero trigonometric fields on the torus and the diagonal operators
//! acting on them.
//!
//! A field is stored as a pair of coefficient arrays `(a_k, b_k)`,
//! `k = 1..=n_max`, against the orthonormal basis
//! `π^{-1/2} cos(kx)`, `π^{-1/2} sin(kx)`. The Laplacian `A = -∂²` acts on
//! wavenumber `k` with eigenvalue `k²`, so every operator in this module is
//! a per-wavenumber multiplier.
//!
//! The flat basis index used in the literature (`e_{2k}` for the cosine and
//! `e_{2k+1}` for the sine of wavenumber `k`) is available through
//! [`BasisComponent::from_flat_index`] and [`BasisComponent::flat_index`].

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};

/// Cosine or sine member of wavenumber `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisComponent {
    Cos(usize),
    Sin(usize),
}

impl BasisComponent {
    /// Maps the flat index `i >= 2` onto a wavenumber component.
    pub fn from_flat_index(i: usize) -> Option<Self> {
        if i < 2 {
            return None;
        }
        let k = i / 2;
        Some(if i % 2 == 0 { Self::Cos(k) } else { Self::Sin(k) })
    }

    pub fn flat_index(self) -> usize {
        match self {
            Self::Cos(k) => 2 * k,
            Self::Sin(k) => 2 * k + 1,
        }
    }

    pub fn wavenumber(self) -> usize {
        match self {
            Self::Cos(k) | Self::Sin(k) => k,
        }
    }
}

/// Exponent of a fractional Sobolev norm, possibly negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SobolevIndex(pub f64);

impl From<f64> for SobolevIndex {
    fn from(g: f64) -> Self {
        SobolevIndex(g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(n_max: usize) -> Self {
        Self {
            cos: vec![0.0; n_max],
            sin: vec![0.0; n_max],
        }
    }

    /// Builds a field from coefficient arrays; rejects mismatched lengths
    /// and non-finite entries.
    pub fn from_coeffs(cos: Vec<f64>, sin: Vec<f64>) -> Result<Self> {
        if cos.len() != sin.len() {
            return Err(Error::ModeMismatch {
                left: cos.len(),
                right: sin.len(),
            });
        }
        if cos.iter().chain(&sin).any(|c| !c.is_finite()) {
            return Err(invalid("field coefficients must be finite"));
        }
        Ok(Self { cos, sin })
    }

    /// Field equal to `Σ c_k cos(kx) + s_k sin(kx)` as a function of `x`,
    /// i.e. amplitudes are physical rather than basis coefficients.
    pub fn from_trig(n_max: usize, terms: &[(usize, f64, f64)]) -> Self {
        let mut f = Self::zeros(n_max);
        let scale = PI.sqrt();
        for &(k, c, s) in terms {
            assert!((1..=n_max).contains(&k), "wavenumber {k} outside 1..={n_max}");
            f.cos[k - 1] += c * scale;
            f.sin[k - 1] += s * scale;
        }
        f
    }

    /// Unit vector `e` for the given component.
    pub fn basis(n_max: usize, component: BasisComponent) -> Self {
        let mut f = Self::zeros(n_max);
        match component {
            BasisComponent::Cos(k) => f.cos[k - 1] = 1.0,
            BasisComponent::Sin(k) => f.sin[k - 1] = 1.0,
        }
        f
    }

    #[inline]
    pub fn n_max(&self) -> usize {
        self.cos.len()
    }

    pub fn cos_coeffs(&self) -> &[f64] {
        &self.cos
    }

    pub fn sin_coeffs(&self) -> &[f64] {
        &self.sin
    }

    pub fn cos_coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.cos
    }

    pub fn sin_coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.sin
    }

    /// `(a_k, b_k)` for wavenumber `k` (1-based); zero beyond `n_max`.
    pub fn mode(&self, k: usize) -> (f64, f64) {
        if k == 0 || k > self.n_max() {
            (0.0, 0.0)
        } else {
            (self.cos[k - 1], self.sin[k - 1])
        }
    }

    pub fn component(&self, c: BasisComponent) -> f64 {
        match c {
            BasisComponent::Cos(k) => self.mode(k).0,
            BasisComponent::Sin(k) => self.mode(k).1,
        }
    }

    pub fn set_mode(&mut self, k: usize, a: f64, b: f64) {
        self.cos[k - 1] = a;
        self.sin[k - 1] = b;
    }

    pub fn is_finite(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|c| c.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|&c| c == 0.0)
    }

    /// Multiplies wavenumber `k` by `factor(k)` in place.
    #[inline]
    pub fn scale_modes(&mut self, mut factor: impl FnMut(usize) -> f64) {
        for k in 1..=self.n_max() {
            let f = factor(k);
            self.cos[k - 1] *= f;
            self.sin[k - 1] *= f;
        }
    }

    pub fn map_modes(&self, factor: impl FnMut(usize) -> f64) -> Self {
        let mut out = self.clone();
        out.scale_modes(factor);
        out
    }

    /// `self += a * other`.
    #[inline]
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert_eq!(self.n_max(), other.n_max());
        for (x, y) in self.cos.iter_mut().zip(&other.cos) {
            *x += a * y;
        }
        for (x, y) in self.sin.iter_mut().zip(&other.sin) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map_modes(|_| a)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// `⟨u, v⟩_γ = Σ k^{2γ}(a_k a'_k + b_k b'_k)`.
    pub fn inner(&self, other: &Self, gamma: f64) -> f64 {
        (1..=self.n_max().min(other.n_max()))
            .map(|k| {
                let w = weight(k, gamma);
                w * (self.cos[k - 1] * other.cos[k - 1] + self.sin[k - 1] * other.sin[k - 1])
            })
            .sum()
    }

    pub fn norm(&self, gamma: f64) -> f64 {
        self.norm_sq(gamma).sqrt()
    }

    pub fn norm_sq(&self, gamma: f64) -> f64 {
        (1..=self.n_max())
            .map(|k| weight(k, gamma) * (self.cos[k - 1].powi(2) + self.sin[k - 1].powi(2)))
            .sum()
    }

    /// Copy with `n` retained wavenumbers, padding with zeros if `n > n_max`.
    pub fn resized(&self, n: usize) -> Self {
        let mut out = Self::zeros(n);
        let m = n.min(self.n_max());
        out.cos[..m].copy_from_slice(&self.cos[..m]);
        out.sin[..m].copy_from_slice(&self.sin[..m]);
        out
    }

    /// Point values on `m` equispaced points `x_j = 2πj/m`, by direct summation.
    pub fn sample_grid(&self, m: usize) -> Vec<f64> {
        let norm = 1.0 / PI.sqrt();
        (0..m)
            .map(|j| {
                let x = 2.0 * PI * j as f64 / m as f64;
                norm * (1..=self.n_max())
                    .map(|k| {
                        let (s, c) = (k as f64 * x).sin_cos();
                        self.cos[k - 1] * c + self.sin[k - 1] * s
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    /// CSV row: `n_max, a_1..a_N, b_1..b_N` with round-trip exact decimals.
    pub fn to_csv_row(&self) -> String {
        let mut cells = Vec::with_capacity(1 + 2 * self.n_max());
        cells.push(self.n_max().to_string());
        cells.extend(self.cos.iter().chain(&self.sin).map(|&x| crate::report::format_f64(x)));
        cells.join(",")
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let cells: Vec<&str> = row.trim().split(',').map(str::trim).collect();
        let n: usize = cells
            .first()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad field row: {row}")))?;
        if cells.len() != 1 + 2 * n {
            return Err(Error::Parse(format!(
                "field row declares {n} modes but has {} cells",
                cells.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number {s:?}")))
        };
        let cos = cells[1..=n].iter().map(|c| parse(c)).collect::<Result<Vec<_>>>()?;
        let sin = cells[n + 1..].iter().map(|c| parse(c)).collect::<Result<Vec<_>>>()?;
        Self::from_coeffs(cos, sin)
    }
}

#[inline]
fn weight(k: usize, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else if gamma == 1.0 {
        (k * k) as f64
    } else {
        (k as f64).powf(2.0 * gamma)
    }
}

#[inline]
pub(crate) fn eigenvalue(k: usize) -> f64 {
    (k * k) as f64
}

pub fn sobolev_norm(u: &SpectralField, gamma: SobolevIndex) -> f64 {
    u.norm(gamma.0)
}

/// `A^{γ/2} u`: scales wavenumber `k` by `k^γ`.
pub fn apply_fractional_power(u: &SpectralField, gamma: f64) -> SpectralField {
    u.map_modes(|k| (k as f64).powf(gamma))
}

/// `e^{-tA} u`.
pub fn apply_semigroup(u: &SpectralField, t: f64) -> Result<SpectralField> {
    if !(t >= 0.0) {
        return Err(invalid(format!("semigroup time must be nonnegative, got {t}")));
    }
    Ok(u.map_modes(|k| (-eigenvalue(k) * t).exp()))
}

/// Galerkin projection onto wavenumbers `1..=n`; the mode count is kept.
pub fn project(u: &SpectralField, n: usize) -> SpectralField {
    u.map_modes(|k| if k <= n { 1.0 } else { 0.0 })
}

/// Diagonal noise intensity `Q_β` with one coefficient per wavenumber,
/// shared by the cosine and sine components.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIntensity {
    theta: f64,
    theta_prime: f64,
    delta: f64,
    beta: Vec<f64>,
}

impl NoiseIntensity {
    /// Validated intensity: requires `θ >= θ' >= 0`, `δ > 0` and
    /// `δ k^{-θ} <= |β_k| <= δ^{-1} k^{-θ'}` for every retained `k`.
    pub fn new(theta: f64, theta_prime: f64, delta: f64, beta: Vec<f64>) -> Result<Self> {
        if !(theta >= theta_prime && theta_prime >= 0.0) {
            return Err(invalid(format!(
                "need theta >= theta_prime >= 0, got theta = {theta}, theta_prime = {theta_prime}"
            )));
        }
        if !(delta > 0.0) {
            return Err(invalid(format!("delta must be positive, got {delta}")));
        }
        for (i, &b) in beta.iter().enumerate() {
            let k = (i + 1) as f64;
            let (lo, hi) = (delta * k.powf(-theta), k.powf(-theta_prime) / delta);
            let tol = 1e-12 * hi;
            if !(b.abs() >= lo - tol && b.abs() <= hi + tol) {
                return Err(invalid(format!(
                    "|beta_{}| = {} outside [{lo}, {hi}]",
                    i + 1,
                    b.abs()
                )));
            }
        }
        Ok(Self {
            theta,
            theta_prime,
            delta,
            beta,
        })
    }

    /// `β_k = k^{-θ}` with `θ' = θ` and `δ = 1`.
    pub fn power_law(theta: f64, n_max: usize) -> Self {
        let beta = (1..=n_max).map(|k| (k as f64).powf(-theta)).collect();
        Self::new(theta, theta, 1.0, beta).expect("power law satisfies its own bounds")
    }

    /// `β_k = c·k^{-θ}` for `c ∈ (0, 1]`, with `δ = c` recorded.
    pub fn scaled_power_law(theta: f64, theta_prime: f64, scale: f64, n_max: usize) -> Result<Self> {
        let beta = (1..=n_max).map(|k| scale * (k as f64).powf(-theta)).collect();
        Self::new(theta, theta_prime, scale.min(1.0 / scale), beta)
    }

    /// Intensity with arbitrary coefficients and no decay bounds attached.
    /// Used for degenerate test configurations such as `β ≡ 0`.
    pub fn unconstrained(beta: Vec<f64>) -> Self {
        Self {
            theta: f64::NAN,
            theta_prime: f64::NAN,
            delta: f64::NAN,
            beta,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn theta_prime(&self) -> f64 {
        self.theta_prime
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_max(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `β_k` for wavenumber `k`; zero beyond the stored range.
    #[inline]
    pub fn beta_k(&self, k: usize) -> f64 {
        self.beta.get(k.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    pub fn with_mode_count(&self, n: usize) -> Self {
        let mut beta = self.beta.clone();
        beta.resize(n, 0.0);
        if n > self.n_max() && self.theta.is_finite() {
            for k in self.n_max() + 1..=n {
                beta[k - 1] = (k as f64).powf(-self.theta) * self.delta.max(f64::MIN_POSITIVE);
            }
        }
        Self { beta, ..self.clone() }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::unconstrained(self.beta.iter().map(|b| b * c).collect())
    }

    /// `K_γ = Σ λ_k^γ β_k²` over both components of each wavenumber.
    pub fn trace_weight(&self, gamma: f64) -> f64 {
        self.beta
            .iter()
            .enumerate()
            .map(|(i, b)| 2.0 * eigenvalue(i + 1).powf(gamma) * b * b)
            .sum()
    }
}

/// `Q_β u`.
pub fn q_apply(q: &NoiseIntensity, u: &SpectralField) -> SpectralField {
    u.map_modes(|k| q.beta_k(k))
}

/// `Q_β^{-1} u`; fails if any retained `β_k` vanishes.
pub fn q_inverse(q: &NoiseIntensity, u: &SpectralField) -> Result<SpectralField> {
    for k in 1..=u.n_max() {
        if q.beta_k(k) == 0.0 {
            return Err(Error::SingularIntensity { wavenumber: k });
        }
    }
    Ok(u.map_modes(|k| 1.0 / q.beta_k(k)))
}
