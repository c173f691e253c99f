//! Directional derivatives of the Galerkin dynamics with respect to the
//! initial condition, and the Bismut-type Monte Carlo estimator of
//! `∇_h E Φ(u_t)` that avoids differentiating `Φ`.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::spde::{add_noise, Dynamics, NoiseStream, Observable, SpdeConfig, Stepper};
use crate::spectral::{eigenvalue, NoiseIntensity, SpectralField};
use crate::stats::{median_of_means, Accumulator};

/// A base state and a tangent vector carried along with it.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub u: SpectralField,
    pub j: SpectralField,
}

impl VariationalState {
    pub fn new(u: SpectralField, j: SpectralField) -> Self {
        Self { u, j }
    }
}

/// `DF(u) J` for the stepper's drift.
pub fn drift_derivative(stepper: &Stepper, u: &SpectralField, j: &SpectralField) -> SpectralField {
    let g = stepper.galerkin();
    match stepper.dynamics() {
        Dynamics::Full => g.burgers_derivative(u, j).scaled(-1.0),
        Dynamics::Truncated { r } => g.truncated_derivative(u, j, r).scaled(-1.0),
        Dynamics::Linear => SpectralField::zeros(u.n_max()),
    }
}

/// Deterministic part of one step for the pair: `J ← e^{-hA}(J + h DF(u) J)`
/// and `u ← e^{-hA}(u + h F(u))`, with the same sub-stepping as the base
/// stepper so `J` is the exact derivative of the discrete map.
pub fn deterministic_variational_step(stepper: &Stepper, s: &mut VariationalState) {
    let m = stepper.substeps(&s.u);
    let hs = stepper.h() / m as f64;
    let decay: Vec<f64> = (1..=stepper.n_modes()).map(|k| (-eigenvalue(k) * hs).exp()).collect();
    for _ in 0..m {
        let dj = drift_derivative(stepper, &s.u, &s.j);
        let f = stepper.drift(&s.u);
        s.j.axpy(hs, &dj);
        s.j.scale_modes(|k| decay[k - 1]);
        s.u.axpy(hs, &f);
        s.u.scale_modes(|k| decay[k - 1]);
    }
}

/// Full step; the additive noise moves `u` only.
pub fn step_variational(stepper: &Stepper, s: &mut VariationalState, ds: f64, xi: &[f64]) {
    deterministic_variational_step(stepper, s);
    add_noise(&mut s.u, stepper.intensity(), ds, xi);
}

/// `⟨Q^{-1} J, √ds ξ⟩₀`.
fn weight_increment(q: &NoiseIntensity, j: &SpectralField, ds: f64, xi: &[f64]) -> f64 {
    let n = j.n_max();
    let root = ds.sqrt();
    let mut acc = 0.0;
    for k in 1..=n {
        let b = q.beta_k(k);
        acc += (j.cos_coeffs()[k - 1] * xi[k - 1] + j.sin_coeffs()[k - 1] * xi[n + k - 1]) / b;
    }
    root * acc
}

/// Configuration of a gradient check at one `(n, t)` point.
#[derive(Debug, Clone)]
pub struct GradientConfig {
    pub spde: SpdeConfig,
    pub phi: SpectralField,
    pub direction: SpectralField,
    pub observable: Observable,
    /// Half-width of the central finite difference.
    pub eps: f64,
    /// Number of blocks for the median-of-means estimator.
    pub groups: usize,
}

/// Bismut and finite-difference estimates of `∇_h E Φ(u_t(φ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Median-of-means Bismut estimate.
    pub bismut: f64,
    pub bismut_se: f64,
    /// Plain Bismut sample mean, reported alongside.
    pub bismut_mean: f64,
    pub bismut_mean_se: f64,
    pub fd: f64,
    pub fd_se: f64,
    pub censored: usize,
    pub paths: usize,
}

impl GradientEstimate {
    /// `|bismut − fd| / sqrt(se_b² + se_fd²)`.
    pub fn z_score(&self) -> f64 {
        let s = (self.bismut_se.powi(2) + self.fd_se.powi(2)).sqrt();
        if s == 0.0 {
            if self.bismut == self.fd {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.bismut - self.fd).abs() / s
        }
    }
}

/// One path: `(Φ(u_t)·weight, FD sample)`, or `None` if any of the three
/// coupled trajectories stopped being finite.
fn gradient_sample(cfg: &GradientConfig, stepper: &Stepper, index: u64) -> Result<Option<(f64, f64)>> {
    let sc = &cfg.spde;
    let n = cfg.phi.n_max();
    let h = sc.step_len();
    let mut noise = NoiseStream::for_stream(sc.alpha, sc.seed, index, n)?;
    let mut base = VariationalState::new(cfg.phi.clone(), cfg.direction.clone());
    let mut plus = cfg.phi.add(&cfg.direction.scaled(cfg.eps));
    let mut minus = cfg.phi.sub(&cfg.direction.scaled(cfg.eps));
    let mut weight = 0.0;
    let mut s_total = 0.0;
    for _ in 0..sc.steps() {
        let (ds, xi) = noise.next(h);
        deterministic_variational_step(stepper, &mut base);
        // J_{j+1} is the derivative of the mean of u_{j+1} given u_j.
        weight += weight_increment(&sc.q, &base.j, ds, xi);
        add_noise(&mut base.u, &sc.q, ds, xi);
        stepper.step(&mut plus, ds, xi);
        stepper.step(&mut minus, ds, xi);
        s_total += ds;
    }
    if !(base.u.is_finite() && base.j.is_finite() && plus.is_finite() && minus.is_finite() && weight.is_finite()) {
        return Ok(None);
    }
    let phi_t = cfg.observable.eval(&base.u);
    let fd = (cfg.observable.eval(&plus) - cfg.observable.eval(&minus)) / (2.0 * cfg.eps);
    Ok(Some((phi_t * weight / s_total, fd)))
}

/// `∇_h E Φ(u_t) = E[Φ(u_t) S_t^{-1} Σ_j ⟨Q^{-1} J_{j+1}, ΔL_j⟩₀]`, where
/// `J_{j+1}` is the tangent after the deterministic part of step `j`,
/// together with a central finite difference on common random numbers.
pub fn bismut_gradient(cfg: &GradientConfig) -> Result<GradientEstimate> {
    let sc = &cfg.spde;
    if cfg.phi.n_max() != sc.q.n_max() || cfg.direction.n_max() != sc.q.n_max() {
        return Err(invalid("initial condition, direction and intensity must share the mode count"));
    }
    for k in 1..=sc.q.n_max() {
        if sc.q.beta_k(k) == 0.0 {
            return Err(crate::Error::SingularIntensity { wavenumber: k });
        }
    }
    if !(cfg.eps > 0.0) {
        return Err(invalid("finite-difference width must be positive"));
    }
    let stepper = sc.stepper()?;
    let samples: Vec<Option<(f64, f64)>> = (0..sc.paths as u64)
        .into_par_iter()
        .map(|i| gradient_sample(cfg, &stepper, i))
        .collect::<Result<_>>()?;
    let censored = samples.iter().filter(|s| s.is_none()).count();
    let kept: Vec<(f64, f64)> = samples.into_iter().flatten().collect();
    let b: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let f: Accumulator = kept.iter().map(|p| p.1).collect();
    let (mom, mom_se) = median_of_means(&b, cfg.groups);
    let plain: Accumulator = b.iter().copied().collect();
    Ok(GradientEstimate {
        bismut: mom,
        bismut_se: mom_se,
        bismut_mean: plain.mean(),
        bismut_mean_se: plain.stderr(),
        fd: f.mean(),
        fd_se: f.stderr(),
        censored,
        paths: sc.paths,
    })
}

/// `sup_t t^{(θ−σ)/2} ‖J_t‖_θ / ‖h‖_σ` along one trajectory; 0 for `h = 0`.
pub fn variational_growth_ratio(
    stepper: &Stepper,
    phi: &SpectralField,
    direction: &SpectralField,
    sigma: f64,
    theta: f64,
    t_end: f64,
    noise: Option<&mut NoiseStream>,
) -> f64 {
    let hn = direction.norm(sigma);
    if hn == 0.0 {
        return 0.0;
    }
    let steps = ((t_end / stepper.h()) - 1e-9).ceil().max(1.0) as usize;
    let mut s = VariationalState::new(phi.clone(), direction.clone());
    let a = (theta - sigma) / 2.0;
    let mut sup: f64 = 0.0;
    let mut noise = noise;
    for j in 1..=steps {
        match noise.as_deref_mut() {
            Some(ns) => {
                let (ds, xi) = ns.next(stepper.h());
                step_variational(stepper, &mut s, ds, xi);
            }
            None => deterministic_variational_step(stepper, &mut s),
        }
        let t = j as f64 * stepper.h();
        sup = sup.max(t.powf(a) * s.j.norm(theta));
    }
    sup / hn
}

/// Distribution over an ensemble of the per-path growth constant, each
/// path taking the worst direction `e_k` over the retained wavenumbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthSummary {
    pub median: f64,
    pub q90: f64,
    pub max: f64,
    pub paths: usize,
}

pub fn variational_growth_bound(
    cfg: &SpdeConfig,
    phi: &SpectralField,
    sigma: f64,
    theta: f64,
) -> Result<GrowthSummary> {
    let stepper = cfg.stepper()?;
    let n = phi.n_max();
    let mut per_path: Vec<f64> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut worst: f64 = 0.0;
            for k in 1..=n {
                let mut dir = SpectralField::zeros(n);
                dir.set_mode(k, 1.0, 0.0);
                let mut ns = NoiseStream::for_stream(cfg.alpha, cfg.seed, i, n)?;
                let r = variational_growth_ratio(&stepper, phi, &dir, sigma, theta, cfg.t_end, Some(&mut ns));
                if r.is_finite() {
                    worst = worst.max(r);
                }
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    per_path.sort_by(f64::total_cmp);
    Ok(GrowthSummary {
        median: crate::stats::quantile(&per_path, 0.5),
        q90: crate::stats::quantile(&per_path, 0.9),
        max: per_path.last().copied().unwrap_or(0.0),
        paths: per_path.len(),
    })
}

/// `sup_t t^a e^{-k² t} k^{θ-σ}` for `a = (θ−σ)/2`, which equals `(a/e)^a`
/// for every `k`: the linear-case value of the growth ratio.
pub fn linear_growth_constant(sigma: f64, theta: f64) -> f64 {
    let a = (theta - sigma) / 2.0;
    if a == 0.0 {
        1.0
    } else {
        (a / std::f64::consts::E).powf(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::apply_semigroup;

    fn stepper(n: usize, dynamics: Dynamics, h: f64) -> Stepper {
        Stepper::new(NoiseIntensity::power_law(1.75, n), dynamics, h)
            .unwrap()
            .with_max_courant(None)
    }

    #[test]
    fn linear_tangent_is_the_semigroup() {
        let st = stepper(4, Dynamics::Linear, 0.01);
        let h = SpectralField::from_trig(4, &[(1, 1.0, 0.0), (3, 0.0, 0.5)]);
        let mut s = VariationalState::new(SpectralField::from_trig(4, &[(2, 0.3, 0.0)]), h.clone());
        for _ in 0..50 {
            step_variational(&st, &mut s, 0.01, &[0.3; 8]);
        }
        let expected = apply_semigroup(&h, 0.5).unwrap();
        assert!(s.j.sub(&expected).norm(0.0) < 1e-14);
    }

    #[test]
    fn zero_base_state_gives_semigroup_tangent() {
        let st = stepper(4, Dynamics::Full, 0.01);
        let h = SpectralField::from_trig(4, &[(2, 0.0, 1.0)]);
        let mut s = VariationalState::new(SpectralField::zeros(4), h.clone());
        for _ in 0..30 {
            deterministic_variational_step(&st, &mut s);
        }
        assert!(s.u.is_zero());
        assert!(s.j.sub(&apply_semigroup(&h, 0.3).unwrap()).norm(0.0) < 1e-14);
    }

    #[test]
    fn tangent_matches_finite_differences() {
        for dynamics in [Dynamics::Full, Dynamics::Truncated { r: 0.2 }] {
            let st = stepper(6, dynamics, 0.005);
            let phi = SpectralField::from_trig(6, &[(1, 0.5, 0.8), (2, -0.3, 0.2)]);
            let h = SpectralField::from_trig(6, &[(1, 0.2, -0.1), (3, 0.4, 0.0)]);
            let mut ns = NoiseStream::for_stream(1.5, 4, 0, 6).unwrap();
            let noise: Vec<(f64, Vec<f64>)> = (0..200)
                .map(|_| {
                    let (d, x) = ns.next(0.005);
                    (d, x.to_vec())
                })
                .collect();
            let eps = 1e-5;
            let run = |u0: SpectralField| {
                let mut u = u0;
                for (d, x) in &noise {
                    st.step(&mut u, *d, x);
                }
                u
            };
            let fd = run(phi.add(&h.scaled(eps))).sub(&run(phi.sub(&h.scaled(eps)))).scaled(0.5 / eps);
            let mut s = VariationalState::new(phi.clone(), h.clone());
            for (d, x) in &noise {
                step_variational(&st, &mut s, *d, x);
            }
            let rel = s.j.sub(&fd).norm(0.0) / s.j.norm(0.0);
            assert!(rel < 1e-3, "{dynamics:?}: {rel}");
        }
    }

    #[test]
    fn tangent_is_linear_in_direction() {
        let st = stepper(5, Dynamics::Full, 0.01);
        let phi = SpectralField::from_trig(5, &[(1, 0.4, 0.1)]);
        let h1 = SpectralField::from_trig(5, &[(1, 1.0, 0.0)]);
        let h2 = SpectralField::from_trig(5, &[(4, 0.0, 1.0)]);
        let run = |h: SpectralField| {
            let mut s = VariationalState::new(phi.clone(), h);
            for _ in 0..40 {
                deterministic_variational_step(&st, &mut s);
            }
            s.j
        };
        let (a, b) = (0.3, -1.7);
        let lhs = run(h1.scaled(a).add(&h2.scaled(b)));
        let rhs = run(h1.clone()).scaled(a).add(&run(h2.clone()).scaled(b));
        assert!(lhs.sub(&rhs).norm(0.0) < 1e-13);
    }

    fn gradient_cfg(n: usize, t: f64, paths: usize) -> GradientConfig {
        let mut spde = SpdeConfig::new(1.5, NoiseIntensity::power_law(1.75, n), 0.01, t);
        spde.paths = paths;
        spde.max_courant = None;
        GradientConfig {
            spde,
            phi: SpectralField::from_trig(n, &[(1, 0.2, 0.1)]),
            direction: SpectralField::from_trig(n, &[(1, 1.0, 0.0)]),
            observable: Observable::Cos(1),
            eps: 1e-3,
            groups: 20,
        }
    }

    #[test]
    fn constant_observable_has_zero_gradient() {
        let mut cfg = gradient_cfg(2, 0.5, 4000);
        cfg.observable = Observable::Constant(0.7);
        let g = bismut_gradient(&cfg).unwrap();
        assert_eq!(g.fd, 0.0);
        assert!(g.bismut.abs() < 3.0 * g.bismut_se, "{g:?}");
    }

    #[test]
    fn linear_case_matches_closed_form() {
        let mut cfg = gradient_cfg(2, 0.5, 20_000);
        cfg.spde.dynamics = Dynamics::Linear;
        // Weak noise and φ = 0 keep the clamp inactive on almost every path.
        cfg.spde.q = NoiseIntensity::power_law(1.75, 2).scaled(0.02);
        cfg.phi = SpectralField::zeros(2);
        cfg.direction = SpectralField::zeros(2);
        cfg.direction.set_mode(1, 1.0, 0.0);
        let g = bismut_gradient(&cfg).unwrap();
        let exact = (-0.5f64).exp();
        assert!((g.fd - exact).abs() < 1e-3, "{g:?}");
        assert!((g.bismut - exact).abs() < 3.0 * g.bismut_se, "{g:?}");
    }

    #[test]
    fn singular_intensity_is_rejected() {
        let mut cfg = gradient_cfg(2, 0.5, 10);
        cfg.spde.q = NoiseIntensity::unconstrained(vec![1.0, 0.0]);
        assert!(bismut_gradient(&cfg).is_err());
    }

    #[test]
    fn growth_ratio_linear_oracle() {
        let st = stepper(8, Dynamics::Linear, 1e-4);
        let c = linear_growth_constant(1.0, 1.75);
        for k in [1usize, 3, 8] {
            let mut h = SpectralField::zeros(8);
            h.set_mode(k, 1.0, 0.0);
            let t_peak = 0.375 / (k * k) as f64;
            let r = variational_growth_ratio(&st, &SpectralField::zeros(8), &h, 1.0, 1.75, 2.0 * t_peak.max(0.01), None);
            assert!(r <= c * (1.0 + 1e-9) && r > 0.99 * c, "k={k}: {r} vs {c}");
        }
        assert_eq!(
            variational_growth_ratio(&st, &SpectralField::zeros(8), &SpectralField::zeros(8), 1.0, 1.75, 0.1, None),
            0.0
        );
    }
}
