//! Sampled realizations of the subordinated cylindrical noise
//! `L_t = W_{S_t}` on finitely many modes, and the stochastic convolution
//! `Z_t = ∫₀ᵗ e^{-(t-s)A} Q dL_s` computed two independent ways.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::seed::stream_rng;
use crate::spectral::{eigenvalue, NoiseIntensity, SpectralField};
use crate::stats::{hill_estimator, linear_fit, quantile, sorted, Accumulator};
use crate::subordinator::StableSubordinatorSampler;

/// `steps + 1` equally spaced points on `[0, t_end]`.
pub fn uniform_grid(t_end: f64, steps: usize) -> Result<Vec<f64>> {
    if !(t_end > 0.0) || steps == 0 {
        return Err(invalid(format!(
            "grid needs t_end > 0 and at least one step, got t_end = {t_end}, steps = {steps}"
        )));
    }
    Ok((0..=steps).map(|j| t_end * j as f64 / steps as f64).collect())
}

/// One draw of the noise on a time grid: subordinator increments and the
/// standard Gaussian vectors that turn them into `ΔL_j = √ΔS_j ξ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    times: Vec<f64>,
    ds: Vec<f64>,
    /// Row `j` holds `ξ_j`: cosine components for `k = 1..n`, then sines.
    gauss: Vec<f64>,
    n_modes: usize,
}

impl NoisePath {
    pub fn new(times: Vec<f64>, ds: Vec<f64>, gauss: Vec<f64>, n_modes: usize) -> Result<Self> {
        let steps = times.len().saturating_sub(1);
        if ds.len() != steps || gauss.len() != steps * 2 * n_modes {
            return Err(invalid("noise path arrays do not match the grid"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("noise path times must be strictly increasing"));
        }
        if ds.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(invalid("subordinator increments must be finite and nonnegative"));
        }
        Ok(Self {
            times,
            ds,
            gauss,
            n_modes,
        })
    }

    /// Path with no noise at all.
    pub fn silent(times: Vec<f64>, n_modes: usize) -> Result<Self> {
        let steps = times.len().saturating_sub(1);
        Self::new(times, vec![0.0; steps], vec![0.0; steps * 2 * n_modes], n_modes)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn ds(&self) -> &[f64] {
        &self.ds
    }

    pub fn gauss(&self) -> &[f64] {
        &self.gauss
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn steps(&self) -> usize {
        self.ds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ds.is_empty()
    }

    pub fn step_len(&self, j: usize) -> f64 {
        self.times[j + 1] - self.times[j]
    }

    pub fn xi(&self, j: usize) -> &[f64] {
        let w = 2 * self.n_modes;
        &self.gauss[j * w..(j + 1) * w]
    }

    /// Subordinator value at the end of the grid, `S_T = Σ ΔS_j`.
    pub fn subordinator_total(&self) -> f64 {
        self.ds.iter().sum()
    }

    /// `ΔL_j` as a field.
    pub fn increment(&self, j: usize) -> SpectralField {
        let mut out = SpectralField::zeros(self.n_modes);
        self.add_scaled_increment(j, None, &mut out);
        out
    }

    /// `target += Q ΔL_j` (or `ΔL_j` when `q` is `None`). Modes beyond the
    /// path's mode count receive no noise.
    pub fn add_scaled_increment(&self, j: usize, q: Option<&NoiseIntensity>, target: &mut SpectralField) {
        let root = self.ds[j].sqrt();
        if root == 0.0 {
            return;
        }
        let n = self.n_modes.min(target.n_max());
        let xi = self.xi(j);
        let beta = |k: usize| q.map_or(1.0, |q| q.beta_k(k));
        {
            let a = target.cos_coeffs_mut();
            for k in 1..=n {
                a[k - 1] += beta(k) * root * xi[k - 1];
            }
        }
        let b = target.sin_coeffs_mut();
        for k in 1..=n {
            b[k - 1] += beta(k) * root * xi[self.n_modes + k - 1];
        }
    }

    /// `L_{t_j}` at every grid point (cumulative sums of the increments).
    pub fn levels(&self) -> Vec<SpectralField> {
        let mut out = Vec::with_capacity(self.times.len());
        let mut l = SpectralField::zeros(self.n_modes);
        out.push(l.clone());
        for j in 0..self.steps() {
            self.add_scaled_increment(j, None, &mut l);
            out.push(l.clone());
        }
        out
    }

    /// Aggregates `factor` consecutive steps into one. The coarse increment
    /// `ΔL` is the exact sum of the fine ones, so coarse and fine paths are
    /// two discretizations of the same noise realization.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(invalid(format!(
                "cannot aggregate {} steps in blocks of {factor}",
                self.steps()
            )));
        }
        let n = self.n_modes;
        let coarse = self.steps() / factor;
        let mut times = Vec::with_capacity(coarse + 1);
        let mut ds = Vec::with_capacity(coarse);
        let mut gauss = Vec::with_capacity(coarse * 2 * n);
        for c in 0..coarse {
            times.push(self.times[c * factor]);
            let mut total = 0.0;
            let mut dl = vec![0.0; 2 * n];
            for j in c * factor..(c + 1) * factor {
                total += self.ds[j];
                let root = self.ds[j].sqrt();
                for (d, x) in dl.iter_mut().zip(self.xi(j)) {
                    *d += root * x;
                }
            }
            let inv = if total > 0.0 { 1.0 / total.sqrt() } else { 0.0 };
            ds.push(total);
            gauss.extend(dl.iter().map(|d| d * inv));
        }
        times.push(*self.times.last().expect("grid has an end point"));
        Self::new(times, ds, gauss, n)
    }

    /// Same subordinator draws with different Gaussian vectors.
    pub fn with_gauss(&self, gauss: Vec<f64>) -> Result<Self> {
        Self::new(self.times.clone(), self.ds.clone(), gauss, self.n_modes)
    }
}

fn fill_gauss<R: Rng + ?Sized>(rng: &mut R, row: &mut Vec<f64>, width: usize) {
    for _ in 0..width {
        row.push(rng.sample(StandardNormal));
    }
}

/// One draw of the subordinated noise on `times` restricted to `n_modes`
/// wavenumbers. Per step the subordinator increment is drawn first,
/// then the `2 n_modes` Gaussian components.
pub fn generate_path(
    sampler: &mut StableSubordinatorSampler,
    n_modes: usize,
    times: &[f64],
) -> Result<NoisePath> {
    let steps = times.len().saturating_sub(1);
    let mut ds = Vec::with_capacity(steps);
    let mut gauss = Vec::with_capacity(steps * 2 * n_modes);
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        ds.push(sampler.sample_increment(dt)?);
        fill_gauss(sampler.rng_mut(), &mut gauss, 2 * n_modes);
    }
    NoisePath::new(times.to_vec(), ds, gauss, n_modes)
}

/// Path with the subordinator frozen at `S_t = t`, i.e. plain cylindrical
/// Brownian motion.
pub fn generate_brownian_path<R: Rng + ?Sized>(rng: &mut R, n_modes: usize, times: &[f64]) -> Result<NoisePath> {
    let mut ds = Vec::with_capacity(times.len().saturating_sub(1));
    let mut gauss = Vec::with_capacity(ds.capacity() * 2 * n_modes);
    for w in times.windows(2) {
        ds.push(w[1] - w[0]);
        fill_gauss(rng, &mut gauss, 2 * n_modes);
    }
    NoisePath::new(times.to_vec(), ds, gauss, n_modes)
}

/// Path number `index` of an ensemble seeded with `base_seed`.
pub fn path_for_stream(alpha: f64, base_seed: u64, index: u64, n_modes: usize, times: &[f64]) -> Result<NoisePath> {
    let mut s = StableSubordinatorSampler::for_stream(alpha, base_seed, index)?;
    generate_path(&mut s, n_modes, times)
}

/// Running value of the stochastic convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionState {
    pub z: SpectralField,
    pub t: f64,
}

impl ConvolutionState {
    pub fn new(n_modes: usize) -> Self {
        Self {
            z: SpectralField::zeros(n_modes),
            t: 0.0,
        }
    }

    /// `z ← e^{-hA} z + Q √ΔS ξ`: exact decay over the step with the
    /// increment entering undamped at the step end.
    pub fn step(&mut self, q: &NoiseIntensity, h: f64, ds: f64, xi: &[f64]) -> Result<()> {
        if !(h > 0.0) {
            return Err(invalid(format!("step must be positive, got {h}")));
        }
        let n = self.z.n_max();
        if xi.len() != 2 * n {
            return Err(invalid("Gaussian vector length must be twice the mode count"));
        }
        let root = ds.sqrt();
        self.z.scale_modes(|k| (-eigenvalue(k) * h).exp());
        let a = self.z.cos_coeffs_mut();
        for k in 1..=n {
            a[k - 1] += q.beta_k(k) * root * xi[k - 1];
        }
        let b = self.z.sin_coeffs_mut();
        for k in 1..=n {
            b[k - 1] += q.beta_k(k) * root * xi[n + k - 1];
        }
        self.t += h;
        Ok(())
    }
}

/// `Z` at every grid point of `path` by the step recursion.
pub fn convolve(path: &NoisePath, q: &NoiseIntensity) -> Vec<SpectralField> {
    let mut out = Vec::with_capacity(path.times().len());
    let mut z = SpectralField::zeros(path.n_modes());
    out.push(z.clone());
    for j in 0..path.steps() {
        let h = path.step_len(j);
        z.scale_modes(|k| (-eigenvalue(k) * h).exp());
        path.add_scaled_increment(j, Some(q), &mut z);
        out.push(z.clone());
    }
    out
}

/// `Z_T` at the last grid point through the integration-by-parts
/// representation `Z_t = Q L_t - ∫₀ᵗ A e^{-(t-s)A} Q L_s ds`, where `L` is
/// taken constant between grid points (the càdlàg interpolation of the
/// sampled path) and the integral is evaluated in closed form.
pub fn convolution_by_parts(path: &NoisePath, q: &NoiseIntensity) -> SpectralField {
    let levels = path.levels();
    let times = path.times();
    let t = *times.last().expect("grid has an end point");
    let n = path.n_modes();
    let mut out = SpectralField::zeros(n);
    for k in 1..=n {
        let lam = eigenvalue(k);
        let beta = q.beta_k(k);
        let mut integral = (0.0, 0.0);
        for j in 0..path.steps() {
            // ∫_{t_j}^{t_{j+1}} λ e^{-λ(t-s)} ds
            let w = (-lam * (t - times[j + 1])).exp() - (-lam * (t - times[j])).exp();
            let (a, b) = levels[j].mode(k);
            integral.0 += w * a;
            integral.1 += w * b;
        }
        let (la, lb) = levels[path.steps()].mode(k);
        out.set_mode(k, beta * (la - integral.0), beta * (lb - integral.1));
    }
    out
}

/// Estimated moment at one horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
}

/// Log-log scaling of `E sup_{t<=T} ‖Z_t‖_θ^p` over a set of horizons.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionMomentReport {
    pub rows: Vec<ScalingRow>,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    pub target_slope: f64,
    pub tolerance: f64,
    /// `P(sup_{t<=T_max} ‖Z_t‖_θ <= ε)` with `ε` the pilot 5% quantile.
    pub small_ball_frequency: f64,
    pub small_ball_radius: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ConvolutionMomentConfig {
    pub alpha: f64,
    pub q: NoiseIntensity,
    /// Sobolev index of the norm inside the moment.
    pub theta: f64,
    pub p: f64,
    pub horizons: Vec<f64>,
    pub steps_per_horizon: usize,
    pub paths: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl ConvolutionMomentConfig {
    pub fn new(alpha: f64, n_modes: usize) -> Self {
        Self {
            alpha,
            q: NoiseIntensity::power_law(1.75, n_modes),
            theta: 0.5,
            p: 1.0,
            horizons: (5..=10).rev().map(|e| 2f64.powi(-e)).collect(),
            steps_per_horizon: 64,
            paths: 10_000,
            seed: 0,
            tolerance: 0.15,
        }
    }
}

/// `sup_{t<=T} ‖Z_t‖_θ` along one path.
pub fn running_sup_norm(path: &NoisePath, q: &NoiseIntensity, theta: f64) -> f64 {
    convolve(path, q).iter().map(|z| z.norm(theta)).fold(0.0, f64::max)
}

/// Monte Carlo estimate of `E sup_{t<=T} ‖Z_t‖_θ^p` over the configured
/// horizons; the fitted log-log slope is compared against `p/α`. Path `i`
/// uses the same random stream at every horizon.
pub fn verify_convolution_moments(cfg: &ConvolutionMomentConfig) -> Result<ConvolutionMomentReport> {
    if !(cfg.p > 0.0 && cfg.p < cfg.alpha) {
        return Err(invalid(format!(
            "moment order p must lie in (0, alpha) = (0, {}), got {}",
            cfg.alpha, cfg.p
        )));
    }
    if cfg.horizons.len() < 2 || cfg.paths < 2 {
        return Err(invalid("need at least two horizons and two paths"));
    }
    let n = cfg.q.n_max();
    let mut rows = Vec::with_capacity(cfg.horizons.len());
    let mut last_sups = Vec::new();
    for &t in &cfg.horizons {
        let grid = uniform_grid(t, cfg.steps_per_horizon)?;
        let sups: Vec<f64> = (0..cfg.paths as u64)
            .into_par_iter()
            .map(|i| {
                path_for_stream(cfg.alpha, cfg.seed, i, n, &grid)
                    .map(|path| running_sup_norm(&path, &cfg.q, cfg.theta))
            })
            .collect::<Result<_>>()?;
        let acc: Accumulator = sups.iter().map(|s| s.powf(cfg.p)).collect();
        rows.push(ScalingRow {
            t,
            estimate: acc.mean(),
            stderr: acc.stderr(),
        });
        last_sups = sups;
    }
    let target_slope = cfg.p / cfg.alpha;
    if rows.iter().all(|r| r.estimate == 0.0) {
        return Ok(ConvolutionMomentReport {
            rows,
            fitted_slope: 0.0,
            slope_stderr: 0.0,
            target_slope,
            tolerance: cfg.tolerance,
            small_ball_frequency: 1.0,
            small_ball_radius: 0.0,
            pass: false,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.t.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.estimate.ln()).collect();
    let fit = linear_fit(&x, &y);

    // Small-ball frequency at the longest horizon: the radius comes from a
    // pilot ensemble on disjoint streams, the frequency from the main one.
    let t_max = cfg.horizons.iter().copied().fold(f64::MIN, f64::max);
    let grid = uniform_grid(t_max, cfg.steps_per_horizon)?;
    let pilot_n = (cfg.paths / 4).max(100) as u64;
    let pilot: Vec<f64> = (0..pilot_n)
        .into_par_iter()
        .map(|i| {
            path_for_stream(cfg.alpha, cfg.seed ^ 0xB411, i, n, &grid)
                .map(|p| running_sup_norm(&p, &cfg.q, cfg.theta))
        })
        .collect::<Result<_>>()?;
    let radius = quantile(&sorted(&pilot), 0.05);
    let main = if (t_max - rows.last().map_or(0.0, |r| r.t)).abs() < 1e-15 {
        last_sups
    } else {
        (0..cfg.paths as u64)
            .into_par_iter()
            .map(|i| path_for_stream(cfg.alpha, cfg.seed, i, n, &grid).map(|p| running_sup_norm(&p, &cfg.q, cfg.theta)))
            .collect::<Result<_>>()?
    };
    let freq = main.iter().filter(|s| **s <= radius).count() as f64 / main.len() as f64;
    Ok(ConvolutionMomentReport {
        pass: (fit.slope - target_slope).abs() <= cfg.tolerance && freq > 0.0,
        rows,
        fitted_slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        target_slope,
        tolerance: cfg.tolerance,
        small_ball_frequency: freq,
        small_ball_radius: radius,
    })
}

/// Discretization bias of the step recursion against the
/// integration-by-parts evaluation, for one coarse step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRow {
    pub h: f64,
    /// Median over paths of `‖Z^h_T - Z_T‖₀ / ‖Z_T‖₀`.
    pub rel_error: f64,
    pub rel_error_mean: f64,
}

#[derive(Debug, Clone)]
pub struct ConvolutionOracleConfig {
    pub alpha: f64,
    pub q: NoiseIntensity,
    pub horizon: f64,
    pub coarse_steps: Vec<f64>,
    /// Fine-grid refinement relative to the smallest coarse step.
    pub refinement: usize,
    pub paths: usize,
    pub seed: u64,
}

impl ConvolutionOracleConfig {
    pub fn new(alpha: f64, n_modes: usize) -> Self {
        Self {
            alpha,
            q: NoiseIntensity::power_law(1.75, n_modes),
            horizon: 1.0,
            coarse_steps: vec![1e-2, 5e-3, 2.5e-3],
            refinement: 16,
            paths: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionOracleReport {
    pub rows: Vec<OracleRow>,
    pub fitted_order: f64,
    pub order_stderr: f64,
}

/// Runs the recursion on aggregated coarse paths and compares `Z_T` with
/// the integration-by-parts value computed on the fine path.
pub fn convolution_oracle_study(cfg: &ConvolutionOracleConfig) -> Result<ConvolutionOracleReport> {
    let h_min = cfg.coarse_steps.iter().copied().fold(f64::MAX, f64::min);
    let h_fine = h_min / cfg.refinement as f64;
    let fine_steps = (cfg.horizon / h_fine).round() as usize;
    let factors: Vec<usize> = cfg
        .coarse_steps
        .iter()
        .map(|h| (h / h_fine).round() as usize)
        .collect();
    if factors.iter().any(|f| *f == 0 || fine_steps % f != 0) {
        return Err(invalid("coarse steps must divide the horizon on the fine grid"));
    }
    let grid = uniform_grid(cfg.horizon, fine_steps)?;
    let n = cfg.q.n_max();
    let per_path: Vec<Vec<f64>> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let fine = path_for_stream(cfg.alpha, cfg.seed, i, n, &grid)?;
            let exact = convolution_by_parts(&fine, &cfg.q);
            let scale = exact.norm(0.0);
            factors
                .iter()
                .map(|&f| {
                    let coarse = fine.coarsen(f)?;
                    let z = convolve(&coarse, &cfg.q).pop().expect("nonempty");
                    Ok(z.sub(&exact).norm(0.0) / scale)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<OracleRow> = cfg
        .coarse_steps
        .iter()
        .enumerate()
        .map(|(c, &h)| {
            let errs: Vec<f64> = per_path.iter().map(|e| e[c]).filter(|e| e.is_finite()).collect();
            let acc: Accumulator = errs.iter().copied().collect();
            OracleRow {
                h,
                rel_error: quantile(&sorted(&errs), 0.5),
                rel_error_mean: acc.mean(),
            }
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.rel_error.ln()).collect();
    let fit = linear_fit(&x, &y);
    Ok(ConvolutionOracleReport {
        rows,
        fitted_order: fit.slope,
        order_stderr: fit.slope_stderr,
    })
}

/// Hill estimate of the tail index of one noise coordinate `ΔL^k`
/// pooled over an ensemble of paths.
pub fn increment_tail_index(alpha: f64, n_modes: usize, dt: f64, steps: usize, paths: usize, seed: u64) -> Result<f64> {
    let grid = uniform_grid(dt * steps as f64, steps)?;
    let samples: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = path_for_stream(alpha, seed, i, n_modes, &grid)?;
            Ok((0..p.steps()).map(|j| p.ds()[j].sqrt() * p.xi(j)[0]).collect())
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = samples.into_iter().flatten().collect();
    let k = (flat.len() / 200).max(10);
    Ok(hill_estimator(&flat, k))
}

/// `β_k² (1 - e^{-2λ_k t}) / (2λ_k)`: variance of one component of mode
/// `k` of the convolution against Brownian noise.
pub fn brownian_convolution_variance(beta: f64, k: usize, t: f64) -> f64 {
    let lam = eigenvalue(k);
    beta * beta * (1.0 - (-2.0 * lam * t).exp()) / (2.0 * lam)
}

/// Per-path stream of a Brownian-clock path, for tests and calibration.
pub fn brownian_path_for_stream(base_seed: u64, index: u64, n_modes: usize, times: &[f64]) -> Result<NoisePath> {
    generate_brownian_path(&mut stream_rng(base_seed, index), n_modes, times)
}
