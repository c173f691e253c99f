//! Mild solutions of the shifted Burgers equation
//!
//! ```text
//! w_t = e^{-tA} φ - ∫₀ᵗ e^{-(t-s)A} B(w_s + Z_s) ds
//! ```
//!
//! by Picard iteration in the weighted norm
//! `‖w‖_{M_T} = sup_t max(‖w_t‖₀, t^{1/2} ‖w_t‖₁)`, plus the contraction,
//! data-Lipschitz, persistence and energy estimates that go with it.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::nonlinearity::{galerkin, random_probe_field, Galerkin};
use crate::spectral::{eigenvalue, SpectralField};

/// Uniform grid `t_j = j T / steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || steps == 0 {
            return Err(invalid(format!("bad time grid: t_end = {t_end}, steps = {steps}")));
        }
        Ok(Self { t_end, steps })
    }

    /// Grid on `[0, t_end]` whose spacing does not exceed `h`.
    pub fn with_step(t_end: f64, h: f64) -> Result<Self> {
        Self::new(t_end, ((t_end / h) - 1e-9).ceil().max(1.0) as usize)
    }

    pub fn h(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t_end * j as f64 / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }
}

/// `sup_j max(‖w_j‖₀, t_j^{1/2} ‖w_j‖₁)`.
pub fn m_norm(times: &[f64], values: &[SpectralField]) -> f64 {
    times
        .iter()
        .zip(values)
        .map(|(t, w)| w.norm(0.0).max(t.sqrt() * w.norm(1.0)))
        .fold(0.0, f64::max)
}

/// `‖v - w‖_{M_T}`.
pub fn m_distance(times: &[f64], v: &[SpectralField], w: &[SpectralField]) -> f64 {
    times
        .iter()
        .zip(v.iter().zip(w))
        .map(|(t, (a, b))| {
            let d = a.sub(b);
            d.norm(0.0).max(t.sqrt() * d.norm(1.0))
        })
        .fold(0.0, f64::max)
}

/// A path on a time grid together with its `M_T` norm.
#[derive(Debug, Clone, PartialEq)]
pub struct MTNormedPath {
    times: Vec<f64>,
    values: Vec<SpectralField>,
    m_norm: f64,
}

impl MTNormedPath {
    pub fn new(times: Vec<f64>, values: Vec<SpectralField>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(invalid("path needs one value per grid point"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("path values must be finite"));
        }
        let m = m_norm(&times, &values);
        Ok(Self {
            times,
            values,
            m_norm: m,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[SpectralField] {
        &self.values
    }

    pub fn into_values(self) -> Vec<SpectralField> {
        self.values
    }

    pub fn m_norm(&self) -> f64 {
        self.m_norm
    }

    pub fn last(&self) -> &SpectralField {
        self.values.last().expect("nonempty path")
    }

    pub fn distance(&self, other: &Self) -> f64 {
        m_distance(&self.times, &self.values, &other.values)
    }

    /// `sup_t ‖w_t‖₁`.
    pub fn sup_h1(&self) -> f64 {
        self.values.iter().map(|w| w.norm(1.0)).fold(0.0, f64::max)
    }
}

/// Local existence horizon `T(R) = min((ĈR)^{-2/(1-σ)}, 1, 1/(2ĈR))`
/// for a trilinear constant `Ĉ` measured at exponent `σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTime {
    pub r: f64,
    pub t: f64,
    pub sigma: f64,
    pub c_hat: f64,
}

impl LocalTime {
    pub fn new(r: f64, c_hat: f64, sigma: f64) -> Result<Self> {
        if !(r > 0.0 && c_hat > 0.0 && sigma > 0.5 && sigma < 1.0) {
            return Err(invalid(format!(
                "need R > 0, C > 0 and sigma in (1/2, 1); got R = {r}, C = {c_hat}, sigma = {sigma}"
            )));
        }
        let cr = c_hat * r;
        let t = cr.powf(-2.0 / (1.0 - sigma)).min(1.0).min(1.0 / (2.0 * cr));
        Ok(Self { r, t, sigma, c_hat })
    }
}

/// Quadrature rule for the mild integral over one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// Integrand interpolated linearly in time and integrated against the
    /// exact kernel. Second order.
    #[default]
    ExponentialTrapezoid,
    /// Left-point integrand pushed through the full-step semigroup,
    /// `e^{-hA}(I + hF)`. First order; the same map as the stochastic stepper.
    ExponentialEuler,
}

/// Per-mode step weights: `I_{j+1} = e I_j + w0 F_j + w1 F_{j+1}`.
#[derive(Debug, Clone)]
struct StepWeights {
    decay: Vec<f64>,
    w0: Vec<f64>,
    w1: Vec<f64>,
}

/// `(x - 1 + e^{-x}) / x²`.
fn phi2(x: f64) -> f64 {
    if x < 0.2 {
        let mut term = 0.5;
        let mut sum = 0.0;
        for m in 0..20 {
            sum += term;
            term *= -x / (m as f64 + 3.0);
        }
        sum
    } else {
        (x - 1.0 + (-x).exp()) / (x * x)
    }
}

/// `(1 - e^{-x}) / x`.
fn phi1(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

impl StepWeights {
    fn new(n: usize, h: f64, quad: Quadrature) -> Self {
        let mut s = Self {
            decay: Vec::with_capacity(n),
            w0: Vec::with_capacity(n),
            w1: Vec::with_capacity(n),
        };
        for k in 1..=n {
            let x = eigenvalue(k) * h;
            let e = (-x).exp();
            s.decay.push(e);
            match quad {
                Quadrature::ExponentialTrapezoid => {
                    let w1 = h * phi2(x);
                    s.w0.push(h * phi1(x) - w1);
                    s.w1.push(w1);
                }
                Quadrature::ExponentialEuler => {
                    s.w0.push(h * e);
                    s.w1.push(0.0);
                }
            }
        }
        s
    }

    /// `i ← e·i + w0·f0 + w1·f1`, per mode.
    fn advance(&self, i: &mut SpectralField, f0: &SpectralField, f1: &SpectralField) {
        let blend = |dst: &mut [f64], a: &[f64], b: &[f64]| {
            for k in 0..dst.len() {
                dst[k] = self.decay[k] * dst[k] + self.w0[k] * a[k] + self.w1[k] * b[k];
            }
        };
        blend(i.cos_coeffs_mut(), f0.cos_coeffs(), f1.cos_coeffs());
        blend(i.sin_coeffs_mut(), f0.sin_coeffs(), f1.sin_coeffs());
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    /// Stop once successive iterates differ by less than this in `M_T`.
    pub tol: f64,
    pub max_iter: usize,
    pub quadrature: Quadrature,
    /// Largest tolerated ratio of successive iterate distances.
    pub max_contraction: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 200,
            quadrature: Quadrature::ExponentialTrapezoid,
            max_contraction: 0.55,
        }
    }
}

/// The Picard map on a grid.
pub struct PicardMap<'a> {
    phi: &'a SpectralField,
    z: &'a [SpectralField],
    grid: TimeGrid,
    times: Vec<f64>,
    weights: StepWeights,
    galerkin: Galerkin,
    /// `e^{-t_j A} φ` for every grid point.
    free: Vec<SpectralField>,
}

impl<'a> PicardMap<'a> {
    pub fn new(phi: &'a SpectralField, z: &'a [SpectralField], grid: TimeGrid, quad: Quadrature) -> Result<Self> {
        let n = phi.n_max();
        if z.len() != grid.steps + 1 {
            return Err(invalid(format!(
                "shift path has {} points, grid has {}",
                z.len(),
                grid.steps + 1
            )));
        }
        if let Some(bad) = z.iter().find(|f| f.n_max() != n) {
            return Err(Error::ModeMismatch {
                left: n,
                right: bad.n_max(),
            });
        }
        let times = grid.times();
        let free = times
            .iter()
            .map(|t| phi.map_modes(|k| (-eigenvalue(k) * t).exp()))
            .collect();
        Ok(Self {
            phi,
            z,
            grid,
            times,
            weights: StepWeights::new(n, grid.h(), quad),
            galerkin: galerkin(n),
            free,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn phi(&self) -> &SpectralField {
        self.phi
    }

    /// `e^{-tA} φ` on the grid, the first iterate.
    pub fn free_evolution(&self) -> Vec<SpectralField> {
        self.free.clone()
    }

    /// `M(w)_t = e^{-tA} φ - ∫₀ᵗ e^{-(t-s)A} B(w_s + Z_s) ds`.
    pub fn apply(&self, w: &[SpectralField]) -> Vec<SpectralField> {
        let n = self.phi.n_max();
        let forcing = |j: usize| self.galerkin.burgers(&w[j].add(&self.z[j]));
        let mut out = Vec::with_capacity(w.len());
        let mut integral = SpectralField::zeros(n);
        let mut f_prev = forcing(0);
        out.push(self.free[0].clone());
        for j in 0..self.grid.steps {
            let f_next = forcing(j + 1);
            self.weights.advance(&mut integral, &f_prev, &f_next);
            out.push(self.free[j + 1].sub(&integral));
            f_prev = f_next;
        }
        out
    }
}

/// Fixed point and convergence history of a Picard solve.
#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub path: MTNormedPath,
    pub iterations: usize,
    /// Successive iterate distances in `M_T`.
    pub distances: Vec<f64>,
}

impl PicardSolution {
    /// Largest ratio of successive iterate distances above the round-off floor.
    pub fn worst_ratio(&self) -> f64 {
        ratios(&self.distances, self.path.m_norm()).fold(0.0, f64::max)
    }
}

fn ratios(d: &[f64], scale: f64) -> impl Iterator<Item = f64> + '_ {
    let floor = 1e-11 * (1.0 + scale);
    d.windows(2).filter(move |w| w[0] > floor).map(|w| w[1] / w[0])
}

/// Solves the shifted equation on `grid` by Picard iteration started at
/// `e^{-tA} φ`. Fails with [`Error::HorizonTooLarge`] as soon as one
/// iterate distance fails to shrink by `max_contraction`.
pub fn picard_solve(
    phi: &SpectralField,
    z: &[SpectralField],
    grid: TimeGrid,
    opts: &PicardOptions,
) -> Result<PicardSolution> {
    let map = PicardMap::new(phi, z, grid, opts.quadrature)?;
    let mut w = map.free_evolution();
    let mut distances = Vec::new();
    for it in 1..=opts.max_iter {
        let next = map.apply(&w);
        if next.iter().any(|f| !f.is_finite()) {
            let last = w.iter().rposition(|f| f.is_finite()).unwrap_or(0);
            return Err(Error::BlowUp {
                time: map.times()[last],
                last_finite: Box::new(w[last].clone()),
            });
        }
        let d = m_distance(map.times(), &next, &w);
        distances.push(d);
        w = next;
        if d < opts.tol {
            return Ok(PicardSolution {
                path: MTNormedPath::new(map.times().to_vec(), w)?,
                iterations: it,
                distances,
            });
        }
        let scale = m_norm(map.times(), &w);
        if let Some(r) = ratios(&distances[distances.len().saturating_sub(2)..], scale).last() {
            if r > opts.max_contraction {
                return Err(Error::HorizonTooLarge { factor: r });
            }
        }
    }
    let scale = m_norm(map.times(), &w);
    Err(Error::HorizonTooLarge {
        factor: ratios(&distances, scale).fold(0.0, f64::max),
    })
}

/// `‖M(w) − M(v)‖_{M_T} / ‖w − v‖_{M_T}`, or 0 for identical inputs.
pub fn measure_contraction(
    phi: &SpectralField,
    z: &[SpectralField],
    grid: TimeGrid,
    w: &[SpectralField],
    v: &[SpectralField],
    quad: Quadrature,
) -> Result<f64> {
    let map = PicardMap::new(phi, z, grid, quad)?;
    let times = map.times();
    let d = m_distance(times, w, v);
    if d == 0.0 {
        return Ok(0.0);
    }
    Ok(m_distance(times, &map.apply(w), &map.apply(v)) / d)
}

/// `‖w(φ₁) − w(φ₂)‖_{M_T} / ‖φ₁ − φ₂‖₀`, or 0 when the data coincide.
pub fn lipschitz_in_data(
    phi1: &SpectralField,
    phi2: &SpectralField,
    z: &[SpectralField],
    grid: TimeGrid,
    opts: &PicardOptions,
) -> Result<f64> {
    let d0 = phi1.sub(phi2).norm(0.0);
    if d0 == 0.0 {
        return Ok(0.0);
    }
    let a = picard_solve(phi1, z, grid, opts)?;
    let b = picard_solve(phi2, z, grid, opts)?;
    Ok(a.path.distance(&b.path) / d0)
}

/// `sup_{t<=T} ‖w_t(φ)‖₁`.
pub fn h1_persistence(phi: &SpectralField, z: &[SpectralField], grid: TimeGrid, opts: &PicardOptions) -> Result<f64> {
    Ok(picard_solve(phi, z, grid, opts)?.path.sup_h1())
}

/// Solution on an arbitrarily long grid, obtained by chaining Picard
/// solves over windows. A window that fails to contract is halved; after a
/// success the window is allowed to grow again.
pub fn solve_global(
    phi: &SpectralField,
    z: &[SpectralField],
    grid: TimeGrid,
    opts: &PicardOptions,
) -> Result<Vec<SpectralField>> {
    if z.len() != grid.steps + 1 {
        return Err(invalid("shift path does not match the grid"));
    }
    let h = grid.h();
    let mut out = vec![phi.clone()];
    let mut start = 0usize;
    let mut window = grid.steps;
    let mut state = phi.clone();
    while start < grid.steps {
        let len = window.min(grid.steps - start);
        let sub = TimeGrid::new(h * len as f64, len)?;
        match picard_solve(&state, &z[start..=start + len], sub, opts) {
            Ok(sol) => {
                let vals = sol.path.into_values();
                state = vals[len].clone();
                out.extend(vals.into_iter().skip(1));
                start += len;
                window = window.saturating_mul(2).min(grid.steps);
            }
            Err(Error::HorizonTooLarge { factor }) => {
                if len == 1 {
                    return Err(Error::HorizonTooLarge { factor });
                }
                window = len / 2;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// A random path with `‖w‖_{M_T} = radius`, built from two random fields
/// joined linearly in time and smoothed by the semigroup.
pub fn random_ball_path<R: Rng + ?Sized>(rng: &mut R, grid: TimeGrid, n: usize, radius: f64) -> Vec<SpectralField> {
    let a = random_probe_field(rng, n);
    let b = random_probe_field(rng, n);
    let times = grid.times();
    let raw: Vec<SpectralField> = times
        .iter()
        .map(|&t| {
            let s = t / grid.t_end;
            a.map_modes(|k| (-eigenvalue(k) * t).exp())
                .scaled(1.0 - s)
                .add(&b.scaled(s))
        })
        .collect();
    let m = m_norm(&times, &raw);
    raw.iter().map(|w| w.scaled(radius / m)).collect()
}

/// Constants of the energy inequality
/// `‖w_t‖₀² <= ‖φ‖₀² e^{∫(C₁‖Z‖₁²−1)} + C₂ ∫ e^{∫(C₁‖Z‖₁²−1)} ‖Z_s‖₁⁴ ds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConstants {
    pub c1: f64,
    pub c2: f64,
}

/// One calibration point `(a, b, g)` with `a = ‖w‖₀²‖Z‖₁²`,
/// `b = ‖Z‖₁⁴` and `g = 2|⟨B(w+Z), w⟩₀| − ‖w‖₁²`; the inequality needs
/// `g <= C₁ a + C₂ b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub a: f64,
    pub b: f64,
    pub g: f64,
}

pub fn energy_sample(w: &SpectralField, z: &SpectralField) -> EnergySample {
    let g = galerkin(w.n_max());
    let z1 = z.norm_sq(1.0);
    EnergySample {
        a: w.norm_sq(0.0) * z1,
        b: z1 * z1,
        g: 2.0 * g.burgers(&w.add(z)).inner(w, 0.0).abs() - w.norm_sq(1.0),
    }
}

/// Least-squares fit of `g ≈ C₁ a + C₂ b` with nonnegative coefficients,
/// rescaled so every calibration point satisfies `g <= C₁ a + C₂ b`, then
/// inflated by `margin`.
pub fn fit_energy_constants(samples: &[EnergySample], margin: f64) -> Result<EnergyConstants> {
    let active: Vec<&EnergySample> = samples.iter().filter(|s| s.a > 0.0 || s.b > 0.0).collect();
    if active.is_empty() {
        return Err(invalid("energy calibration needs samples with nonzero shift"));
    }
    let (mut saa, mut sab, mut sbb, mut sag, mut sbg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in &active {
        saa += s.a * s.a;
        sab += s.a * s.b;
        sbb += s.b * s.b;
        sag += s.a * s.g;
        sbg += s.b * s.g;
    }
    let det = saa * sbb - sab * sab;
    let (mut c1, mut c2) = if det > 1e-12 * saa * sbb {
        ((sag * sbb - sbg * sab) / det, (sbg * saa - sag * sab) / det)
    } else {
        (0.0, 0.0)
    };
    // Keep both directions of the bound alive.
    let floor1 = (sag / saa).abs().max(1e-6);
    let floor2 = (sbg / sbb).abs().max(1e-6);
    if !(c1 > 0.0) {
        c1 = 1e-3 * floor1;
    }
    if !(c2 > 0.0) {
        c2 = 1e-3 * floor2;
    }
    let worst = active
        .iter()
        .map(|s| s.g / (c1 * s.a + c2 * s.b))
        .fold(f64::MIN, f64::max);
    let stretch = worst.max(1.0) * margin;
    Ok(EnergyConstants {
        c1: c1 * stretch,
        c2: c2 * stretch,
    })
}

/// Right-hand side of the energy inequality on a uniform grid, from the
/// ODE `y' = (C₁ z² − 1) y + C₂ z⁴`, `y(0) = ‖φ‖₀²`, with `z = ‖Z_t‖₁`
/// frozen at the larger endpoint value on each step.
pub fn energy_bound(phi_norm_sq: f64, z_h1: &[f64], h: f64, c: EnergyConstants) -> Vec<f64> {
    let mut y = phi_norm_sq;
    let mut out = Vec::with_capacity(z_h1.len());
    out.push(y);
    for w in z_h1.windows(2) {
        let z = w[0].max(w[1]);
        let a = c.c1 * z * z - 1.0;
        let b = c.c2 * z.powi(4);
        let growth = (a * h).exp();
        // ∫₀ʰ e^{a(h−s)} ds = h·φ₁(−a h)
        y = growth * y + b * h * phi1(-a * h);
        out.push(y);
    }
    out
}

/// Worst ratio `‖w_t‖₀² / RHS_t` over a trajectory.
pub fn energy_ratio(w: &[SpectralField], z: &[SpectralField], h: f64, c: EnergyConstants) -> f64 {
    let zn: Vec<f64> = z.iter().map(|f| f.norm(1.0)).collect();
    let rhs = energy_bound(w[0].norm_sq(0.0), &zn, h, c);
    w.iter()
        .zip(&rhs)
        .skip(1)
        .map(|(wi, r)| {
            let l = wi.norm_sq(0.0);
            if l == 0.0 {
                0.0
            } else {
                l / r
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::apply_semigroup;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeros(grid: TimeGrid, n: usize) -> Vec<SpectralField> {
        vec![SpectralField::zeros(n); grid.steps + 1]
    }

    #[test]
    fn weight_series_match_closed_forms() {
        for &x in &[0.19, 0.21, 0.5, 3.0] {
            let direct = (x - 1.0 + (-x as f64).exp()) / (x * x);
            assert!((phi2(x) - direct).abs() < 1e-13, "x={x}");
        }
        assert!((phi2(0.0) - 0.5).abs() < 1e-16);
        assert!((phi1(1e-300) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let phi = SpectralField::zeros(8);
        let sol = picard_solve(&phi, &zeros(grid, 8), grid, &PicardOptions::default()).unwrap();
        assert!(sol.path.values().iter().all(|w| w.is_zero()));
        assert_eq!(sol.path.m_norm(), 0.0);
    }

    #[test]
    fn linearization_about_zero() {
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let phi = SpectralField::from_trig(16, &[(1, 0.0, 0.1)]);
        let sol = picard_solve(&phi, &zeros(grid, 16), grid, &PicardOptions::default()).unwrap();
        let lin = apply_semigroup(&phi, 1.0).unwrap();
        let diff = sol.path.last().sub(&lin).norm(0.0);
        assert!(diff < 1e-2 && diff > 0.0, "{diff}");
    }

    #[test]
    fn mt_norm_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = TimeGrid::new(0.5, 20).unwrap();
        let w = random_ball_path(&mut rng, grid, 6, 0.7);
        let p = MTNormedPath::new(grid.times(), w).unwrap();
        assert!((p.m_norm() - 0.7).abs() < 1e-12);
        assert!((m_norm(p.times(), p.values()) - p.m_norm()).abs() == 0.0);
    }

    #[test]
    fn contraction_of_identical_inputs_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = TimeGrid::new(0.5, 20).unwrap();
        let w = random_ball_path(&mut rng, grid, 6, 0.5);
        let phi = SpectralField::zeros(6);
        let r = measure_contraction(&phi, &zeros(grid, 6), grid, &w, &w, Quadrature::default()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn contraction_breaks_down_on_long_horizons_with_large_data() {
        let grid = TimeGrid::new(4.0, 400).unwrap();
        let phi = SpectralField::from_trig(8, &[(1, 0.0, 6.0)]);
        let err = picard_solve(&phi, &zeros(grid, 8), grid, &PicardOptions::default()).unwrap_err();
        assert!(matches!(err, Error::HorizonTooLarge { factor } if factor > 0.55));
    }

    #[test]
    fn windowed_solver_matches_single_window() {
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let phi = SpectralField::from_trig(8, &[(1, 0.0, 0.3), (2, 0.1, 0.0)]);
        let z = zeros(grid, 8);
        let opts = PicardOptions::default();
        let one = picard_solve(&phi, &z, grid, &opts).unwrap().path.into_values();
        let many = solve_global(&phi, &z, grid, &opts).unwrap();
        assert_eq!(one.len(), many.len());
        for (a, b) in one.iter().zip(&many) {
            assert!(a.sub(b).norm(0.0) < 1e-11);
        }
        // Large data: windows shrink but the solve completes.
        let big = SpectralField::from_trig(8, &[(1, 0.0, 6.0)]);
        let grid = TimeGrid::new(2.0, 2000).unwrap();
        let w = solve_global(&big, &zeros(grid, 8), grid, &opts).unwrap();
        assert!(w.last().unwrap().norm(0.0) < big.norm(0.0) * (-2.0f64).exp());
    }

    #[test]
    fn trapezoid_is_second_order_and_euler_first() {
        let phi = SpectralField::from_trig(16, &[(1, 0.2, 0.3), (3, 0.0, 0.1)]);
        let opts = PicardOptions::default();
        let reference = {
            let g = TimeGrid::new(0.5, 4000).unwrap();
            picard_solve(&phi, &zeros(g, 16), g, &opts).unwrap().path.last().clone()
        };
        for (quad, expected) in [(Quadrature::ExponentialTrapezoid, 2.0), (Quadrature::ExponentialEuler, 1.0)] {
            let o = PicardOptions { quadrature: quad, ..opts };
            let errs: Vec<f64> = [50usize, 100]
                .iter()
                .map(|&m| {
                    let g = TimeGrid::new(0.5, m).unwrap();
                    picard_solve(&phi, &zeros(g, 16), g, &o).unwrap().path.last().sub(&reference).norm(0.0)
                })
                .collect();
            let order = (errs[0] / errs[1]).log2();
            assert!((order - expected).abs() < 0.2, "{quad:?}: {order}");
        }
    }

    #[test]
    fn lipschitz_of_identical_data_is_zero() {
        let grid = TimeGrid::new(0.5, 20).unwrap();
        let phi = SpectralField::from_trig(4, &[(1, 0.1, 0.0)]);
        assert_eq!(
            lipschitz_in_data(&phi, &phi, &zeros(grid, 4), grid, &PicardOptions::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn persistence_of_zero_is_zero() {
        let grid = TimeGrid::new(0.5, 20).unwrap();
        let phi = SpectralField::zeros(4);
        assert_eq!(h1_persistence(&phi, &zeros(grid, 4), grid, &PicardOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn local_time_formula() {
        let lt = LocalTime::new(0.5, 1.0, 0.75).unwrap();
        assert_eq!(lt.t, 1.0);
        let lt = LocalTime::new(4.0, 1.0, 0.75).unwrap();
        assert!((lt.t - 4f64.powi(-8)).abs() < 1e-18);
        let small = LocalTime::new(0.25, 3.0, 0.75).unwrap().t;
        let large = LocalTime::new(0.5, 3.0, 0.75).unwrap().t;
        assert!(small >= large);
        assert!(LocalTime::new(0.5, 1.0, 0.4).is_err());
    }

    #[test]
    fn energy_without_shift_is_pure_dissipation() {
        let grid = TimeGrid::new(2.0, 2000).unwrap();
        let phi = SpectralField::from_trig(16, &[(1, 0.0, 2.0), (2, 0.5, 0.0)]);
        let z = zeros(grid, 16);
        let w = solve_global(&phi, &z, grid, &PicardOptions::default()).unwrap();
        for (j, wj) in w.iter().enumerate() {
            let t = grid.time(j);
            assert!(wj.norm_sq(0.0) <= phi.norm_sq(0.0) * (-t).exp() * (1.0 + 1e-9));
        }
        let c = EnergyConstants { c1: 1.0, c2: 1.0 };
        assert!(energy_ratio(&w, &z, grid.h(), c) <= 1.0);
    }

    #[test]
    fn discrete_energy_identity() {
        // d/dt ‖w‖₀² = −2‖w‖₁² − 2⟨B(w+Z), w⟩₀ up to quadrature order,
        // here with a smooth deterministic shift.
        let grid = TimeGrid::new(0.5, 2000).unwrap();
        let n = 8;
        let z: Vec<SpectralField> = grid
            .times()
            .iter()
            .map(|t| SpectralField::from_trig(n, &[(1, 0.3 * t.cos(), 0.0), (2, 0.0, 0.2 * t)]))
            .collect();
        let phi = SpectralField::from_trig(n, &[(1, 0.0, 0.4)]);
        let w = picard_solve(&phi, &z, grid, &PicardOptions::default()).unwrap().path.into_values();
        let g = galerkin(n);
        let h = grid.h();
        let mut worst: f64 = 0.0;
        for j in 1..grid.steps {
            let lhs = (w[j + 1].norm_sq(0.0) - w[j - 1].norm_sq(0.0)) / (2.0 * h);
            let rhs = -2.0 * w[j].norm_sq(1.0) - 2.0 * g.burgers(&w[j].add(&z[j])).inner(&w[j], 0.0);
            worst = worst.max((lhs - rhs).abs());
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn energy_fit_covers_its_calibration_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<EnergySample> = (0..500)
            .map(|_| {
                let w = random_probe_field(&mut rng, 8);
                let z = random_probe_field(&mut rng, 8).scaled(rng.random_range(0.01..2.0));
                energy_sample(&w, &z)
            })
            .collect();
        let c = fit_energy_constants(&samples, 1.0).unwrap();
        for s in &samples {
            assert!(s.g <= (c.c1 * s.a + c.c2 * s.b) * (1.0 + 1e-12));
        }
        assert!(c.c1 > 0.0 && c.c2 > 0.0);
        assert!(fit_energy_constants(&[], 2.0).is_err());
    }

    #[test]
    fn energy_bound_solves_its_ode() {
        let c = EnergyConstants { c1: 0.5, c2: 0.25 };
        let z = vec![1.0; 1001];
        let y = energy_bound(2.0, &z, 1e-3, c);
        // y' = −0.5 y + 0.25, y(0) = 2.
        let exact = 0.5 + 1.5 * (-0.5f64).exp();
        assert!((y[1000] - exact).abs() < 1e-12);
    }
}
