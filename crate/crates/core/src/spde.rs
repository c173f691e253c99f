//! Time stepping of the stochastic Burgers equation in mild form,
//! `u ← e^{-hA}(u + h F(u)) + Q ΔL`, with `F = −B`, `F = −B_R` or `F = 0`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::noise_path::NoisePath;
use crate::nonlinearity::{cutoff, galerkin, Galerkin};
use crate::seed::stream_rng;
use crate::spectral::{eigenvalue, NoiseIntensity, SpectralField};
use crate::stats::{quantile, sorted, Accumulator};
use crate::subordinator::StableSubordinatorSampler;

/// Drift of the stepped equation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Dynamics {
    /// `F = −B`.
    #[default]
    Full,
    /// `F = −B_R`.
    Truncated { r: f64 },
    /// `F = 0`.
    Linear,
}

impl Dynamics {
    pub fn label(&self) -> String {
        match self {
            Dynamics::Full => "full".into(),
            Dynamics::Truncated { r } => format!("truncated(R={r})"),
            Dynamics::Linear => "linear".into(),
        }
    }
}

/// Deterministic part of one step plus the additive noise.
#[derive(Debug, Clone)]
pub struct Stepper {
    q: NoiseIntensity,
    dynamics: Dynamics,
    h: f64,
    decay: Vec<f64>,
    galerkin: Galerkin,
    /// When set, the drift update over one step is split into equal
    /// sub-steps so that `h_sub · n · sup|u| <= max_courant`.
    max_courant: Option<f64>,
}

/// Sub-step count above which a state is treated as numerically lost.
const MAX_SUBSTEPS: usize = 1 << 14;

impl Stepper {
    pub fn new(q: NoiseIntensity, dynamics: Dynamics, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(invalid(format!("step must be positive, got {h}")));
        }
        if let Dynamics::Truncated { r } = dynamics {
            if !(r > 0.0) {
                return Err(invalid(format!("truncation radius must be positive, got {r}")));
            }
        }
        let n = q.n_max();
        Ok(Self {
            decay: (1..=n).map(|k| (-eigenvalue(k) * h).exp()).collect(),
            galerkin: galerkin(n),
            q,
            dynamics,
            h,
            max_courant: Some(0.5),
        })
    }

    pub fn with_max_courant(mut self, c: Option<f64>) -> Self {
        self.max_courant = c;
        self
    }

    pub fn n_modes(&self) -> usize {
        self.q.n_max()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn intensity(&self) -> &NoiseIntensity {
        &self.q
    }

    pub fn dynamics(&self) -> Dynamics {
        self.dynamics
    }

    pub fn galerkin(&self) -> &Galerkin {
        &self.galerkin
    }

    /// `F(u)`.
    pub fn drift(&self, u: &SpectralField) -> SpectralField {
        match self.dynamics {
            Dynamics::Full => self.galerkin.burgers(u).scaled(-1.0),
            Dynamics::Truncated { r } => self.galerkin.truncated(u, r).scaled(-1.0),
            Dynamics::Linear => SpectralField::zeros(u.n_max()),
        }
    }

    /// Number of drift sub-steps used from state `u`.
    pub fn substeps(&self, u: &SpectralField) -> usize {
        let Some(c) = self.max_courant else { return 1 };
        let strength = match self.dynamics {
            Dynamics::Linear => return 1,
            Dynamics::Full => 1.0,
            Dynamics::Truncated { r } => cutoff(u.norm(1.0) / (5.0 * r)),
        };
        let sup: f64 = u.cos_coeffs().iter().chain(u.sin_coeffs()).map(|x| x.abs()).sum::<f64>()
            / std::f64::consts::PI.sqrt();
        let courant = strength * self.h * self.n_modes() as f64 * sup;
        if !courant.is_finite() {
            return MAX_SUBSTEPS + 1;
        }
        (courant / c).ceil().max(1.0) as usize
    }

    /// `u ← e^{-hA}(u + h F(u))`, split into sub-steps when the state is large.
    pub fn deterministic_step(&self, u: &mut SpectralField) -> usize {
        let m = self.substeps(u);
        if m == 1 {
            let f = self.drift(u);
            u.axpy(self.h, &f);
            self.apply_decay(u);
        } else if m <= MAX_SUBSTEPS {
            let hs = self.h / m as f64;
            let decay: Vec<f64> = (1..=self.n_modes()).map(|k| (-eigenvalue(k) * hs).exp()).collect();
            for _ in 0..m {
                let f = self.drift(u);
                u.axpy(hs, &f);
                u.scale_modes(|k| decay[k - 1]);
            }
        } else {
            u.scale_modes(|_| f64::NAN);
        }
        m
    }

    fn apply_decay(&self, u: &mut SpectralField) {
        u.scale_modes(|k| self.decay[k - 1]);
    }

    /// One full step with increment `√ds ξ`.
    pub fn step(&self, u: &mut SpectralField, ds: f64, xi: &[f64]) {
        self.deterministic_step(u);
        add_noise(u, &self.q, ds, xi);
    }
}

pub(crate) fn add_noise(u: &mut SpectralField, q: &NoiseIntensity, ds: f64, xi: &[f64]) {
    let root = ds.sqrt();
    if root == 0.0 {
        return;
    }
    let n = u.n_max();
    let a = u.cos_coeffs_mut();
    for k in 1..=n {
        a[k - 1] += q.beta_k(k) * root * xi[k - 1];
    }
    let b = u.sin_coeffs_mut();
    for k in 1..=n {
        b[k - 1] += q.beta_k(k) * root * xi[n + k - 1];
    }
}

/// Increments `(ΔS_j, ξ_j)` drawn on demand, in the same order as
/// [`crate::noise_path::generate_path`].
pub struct NoiseStream {
    sampler: StableSubordinatorSampler,
    width: usize,
    xi: Vec<f64>,
}

impl NoiseStream {
    pub fn new(alpha: f64, rng: ChaCha8Rng, n_modes: usize) -> Result<Self> {
        Ok(Self {
            sampler: StableSubordinatorSampler::with_rng(alpha, rng)?,
            width: 2 * n_modes,
            xi: vec![0.0; 2 * n_modes],
        })
    }

    pub fn for_stream(alpha: f64, base_seed: u64, index: u64, n_modes: usize) -> Result<Self> {
        Self::new(alpha, stream_rng(base_seed, index), n_modes)
    }

    pub fn next(&mut self, dt: f64) -> (f64, &[f64]) {
        let ds = self.sampler.sample_increment(dt).expect("positive step");
        let rng = self.sampler.rng_mut();
        for x in self.xi.iter_mut().take(self.width) {
            *x = rng.sample(StandardNormal);
        }
        (ds, &self.xi)
    }
}

/// Recorded trajectory with exit-time bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    /// First grid time with `‖u_t‖₁ >= 5R`; `None` if never reached.
    pub exit_time: Option<f64>,
    /// Time at which the state stopped being finite.
    pub blow_up: Option<f64>,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &SpectralField {
        self.states.last().expect("nonempty record")
    }

    pub fn is_censored(&self) -> bool {
        self.blow_up.is_some()
    }
}

/// Simulation parameters shared by ensemble runs.
#[derive(Debug, Clone)]
pub struct SpdeConfig {
    pub alpha: f64,
    pub q: NoiseIntensity,
    pub dynamics: Dynamics,
    pub h: f64,
    pub t_end: f64,
    pub seed: u64,
    pub paths: usize,
    /// Record every this many steps (the final state is always recorded).
    pub record_every: usize,
    /// Radius `R` whose exit time `‖u‖₁ >= 5R` is tracked.
    pub exit_radius: Option<f64>,
    pub max_courant: Option<f64>,
}

impl SpdeConfig {
    pub fn new(alpha: f64, q: NoiseIntensity, h: f64, t_end: f64) -> Self {
        Self {
            alpha,
            q,
            dynamics: Dynamics::Full,
            h,
            t_end,
            seed: 0,
            paths: 1,
            record_every: 1,
            exit_radius: None,
            max_courant: Some(0.5),
        }
    }

    pub fn steps(&self) -> usize {
        ((self.t_end / self.h) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn step_len(&self) -> f64 {
        self.t_end / self.steps() as f64
    }

    pub fn stepper(&self) -> Result<Stepper> {
        Ok(Stepper::new(self.q.clone(), self.dynamics, self.step_len())?.with_max_courant(self.max_courant))
    }
}

struct Recorder {
    every: usize,
    exit_level: Option<f64>,
    rec: TrajectoryRecord,
}

impl Recorder {
    fn new(u0: &SpectralField, every: usize, exit_radius: Option<f64>) -> Self {
        let exit_level = exit_radius.map(|r| 5.0 * r);
        let exit_time = match exit_level {
            Some(l) if u0.norm(1.0) >= l => Some(0.0),
            _ => None,
        };
        Self {
            every: every.max(1),
            exit_level,
            rec: TrajectoryRecord {
                times: vec![0.0],
                states: vec![u0.clone()],
                exit_time,
                blow_up: None,
            },
        }
    }

    /// Returns false once the state is no longer finite.
    fn observe(&mut self, j: usize, steps: usize, t: f64, u: &SpectralField) -> bool {
        if !u.is_finite() {
            self.rec.blow_up = Some(t);
            return false;
        }
        if self.rec.exit_time.is_none() {
            if let Some(l) = self.exit_level {
                if u.norm(1.0) >= l {
                    self.rec.exit_time = Some(t);
                }
            }
        }
        if j % self.every == 0 || j == steps {
            self.rec.times.push(t);
            self.rec.states.push(u.clone());
        }
        true
    }
}

/// Runs `φ` forward along a stored noise path.
pub fn simulate_path(
    phi: &SpectralField,
    path: &NoisePath,
    stepper: &Stepper,
    record_every: usize,
    exit_radius: Option<f64>,
) -> Result<TrajectoryRecord> {
    if path.n_modes() != phi.n_max() || stepper.n_modes() != phi.n_max() {
        return Err(Error::ModeMismatch {
            left: phi.n_max(),
            right: path.n_modes(),
        });
    }
    let mut u = phi.clone();
    let mut rec = Recorder::new(&u, record_every, exit_radius);
    for j in 0..path.steps() {
        if (path.step_len(j) - stepper.h()).abs() > 1e-9 * stepper.h() {
            return Err(invalid("noise path spacing differs from the stepper's step"));
        }
        stepper.step(&mut u, path.ds()[j], path.xi(j));
        if !rec.observe(j + 1, path.steps(), path.times()[j + 1], &u) {
            break;
        }
    }
    Ok(rec.rec)
}

/// Trajectory number `index` of the ensemble described by `cfg`, with
/// noise drawn on the fly.
pub fn simulate(phi: &SpectralField, cfg: &SpdeConfig, stepper: &Stepper, index: u64) -> Result<TrajectoryRecord> {
    let n = phi.n_max();
    if stepper.n_modes() != n {
        return Err(Error::ModeMismatch {
            left: n,
            right: stepper.n_modes(),
        });
    }
    let steps = cfg.steps();
    let h = cfg.step_len();
    let mut noise = NoiseStream::for_stream(cfg.alpha, cfg.seed, index, n)?;
    let mut u = phi.clone();
    let mut rec = Recorder::new(&u, cfg.record_every, cfg.exit_radius);
    for j in 0..steps {
        let (ds, xi) = noise.next(h);
        stepper.step(&mut u, ds, xi);
        if !rec.observe(j + 1, steps, h * (j + 1) as f64, &u) {
            break;
        }
    }
    Ok(rec.rec)
}

/// All trajectories of an ensemble, in index order. Blow-ups are kept and
/// flagged rather than dropped.
pub fn ensemble(phi: &SpectralField, cfg: &SpdeConfig) -> Result<Vec<TrajectoryRecord>> {
    let stepper = cfg.stepper()?;
    (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| simulate(phi, cfg, &stepper, i))
        .collect()
}

/// Bounded test functional, clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    Constant(f64),
    /// Coefficient of `π^{-1/2} cos(kx)`.
    Cos(usize),
    /// Coefficient of `π^{-1/2} sin(kx)`.
    Sin(usize),
    /// `‖u‖_γ / scale`.
    Norm { gamma: f64, scale: f64 },
}

impl Observable {
    pub fn eval(&self, u: &SpectralField) -> f64 {
        let raw = match *self {
            Observable::Constant(c) => c,
            Observable::Cos(k) => u.mode(k).0,
            Observable::Sin(k) => u.mode(k).1,
            Observable::Norm { gamma, scale } => u.norm(gamma) / scale,
        };
        raw.clamp(-1.0, 1.0)
    }

    pub fn label(&self) -> String {
        match *self {
            Observable::Constant(c) => format!("const({c})"),
            Observable::Cos(k) => format!("cos{k}"),
            Observable::Sin(k) => format!("sin{k}"),
            Observable::Norm { gamma, scale } => format!("norm{gamma}/{scale}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |t: &str| t.parse::<usize>().map_err(|_| invalid(format!("bad observable {s:?}")));
        if let Some(k) = s.strip_prefix("cos") {
            return Ok(Observable::Cos(num(k)?));
        }
        if let Some(k) = s.strip_prefix("sin") {
            return Ok(Observable::Sin(num(k)?));
        }
        if let Some(rest) = s.strip_prefix("norm") {
            let (g, sc) = rest.split_once('/').unwrap_or((rest, "1"));
            let gamma = g.parse().map_err(|_| invalid(format!("bad observable {s:?}")))?;
            let scale = sc.parse().map_err(|_| invalid(format!("bad observable {s:?}")))?;
            return Ok(Observable::Norm { gamma, scale });
        }
        if let Some(c) = s.strip_prefix("const") {
            let c = c.trim_matches(|ch| ch == '(' || ch == ')');
            return Ok(Observable::Constant(
                c.parse().map_err(|_| invalid(format!("bad observable {s:?}")))?,
            ));
        }
        Err(invalid(format!("unknown observable {s:?}")))
    }
}

/// `P_t Φ(φ)` by Monte Carlo.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupEstimate {
    pub observable: Observable,
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
    pub censored: usize,
}

pub fn estimate_semigroup(phi: &SpectralField, obs: Observable, cfg: &SpdeConfig) -> Result<SemigroupEstimate> {
    let stepper = cfg.stepper()?;
    let values: Vec<Option<f64>> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Option<f64>> {
            let r = simulate(phi, &SpdeConfig { record_every: usize::MAX, ..cfg.clone() }, &stepper, i)?;
            Ok((!r.is_censored()).then(|| obs.eval(r.last())))
        })
        .collect::<Result<_>>()?;
    let censored = values.iter().filter(|v| v.is_none()).count();
    let acc: Accumulator = values.into_iter().flatten().collect();
    Ok(SemigroupEstimate {
        observable: obs,
        t: cfg.t_end,
        value: acc.mean(),
        stderr: acc.stderr(),
        censored,
    })
}

/// Per-time aggregates of one observable across an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRow {
    pub t: f64,
    pub observable: String,
    pub mean: f64,
    pub stderr: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub censored: usize,
}

/// Aggregates recorded trajectories that share a recording grid.
pub fn ensemble_stats(records: &[TrajectoryRecord], observables: &[Observable]) -> Vec<EnsembleRow> {
    let Some(first) = records.first() else { return Vec::new() };
    let mut rows = Vec::new();
    for (i, &t) in first.times.iter().enumerate() {
        for obs in observables {
            let mut censored = 0;
            let vals: Vec<f64> = records
                .iter()
                .filter_map(|r| match r.states.get(i) {
                    Some(s) if r.times.get(i) == Some(&t) => Some(obs.eval(s)),
                    _ => {
                        censored += 1;
                        None
                    }
                })
                .collect();
            let acc: Accumulator = vals.iter().copied().collect();
            let s = sorted(&vals);
            rows.push(EnsembleRow {
                t,
                observable: obs.label(),
                mean: acc.mean(),
                stderr: acc.stderr(),
                q05: quantile(&s, 0.05),
                q50: quantile(&s, 0.5),
                q95: quantile(&s, 0.95),
                censored,
            });
        }
    }
    rows
}

/// Both sides of `P(τ_φ^R <= t) <= E sup_{s<=t} ‖Z_s‖₁ / R` by Monte Carlo,
/// returned as `(lhs, lhs_se, rhs, rhs_se)`. The trajectory and the
/// convolution are driven by the same noise.
pub fn exit_time_bound(phi: &SpectralField, r: f64, cfg: &SpdeConfig) -> Result<(f64, f64, f64, f64)> {
    let cfg = SpdeConfig {
        exit_radius: Some(r),
        record_every: usize::MAX,
        ..cfg.clone()
    };
    let stepper = cfg.stepper()?;
    let n = phi.n_max();
    let h = cfg.step_len();
    let pairs: Vec<(f64, f64)> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let mut noise = NoiseStream::for_stream(cfg.alpha, cfg.seed, i, n)?;
            let mut u = phi.clone();
            let mut z = SpectralField::zeros(n);
            let mut exited = u.norm(1.0) >= 5.0 * r;
            let mut sup_z: f64 = 0.0;
            for _ in 0..cfg.steps() {
                let (ds, xi) = noise.next(h);
                stepper.deterministic_step(&mut u);
                add_noise(&mut u, &cfg.q, ds, xi);
                z.scale_modes(|k| (-eigenvalue(k) * h).exp());
                add_noise(&mut z, &cfg.q, ds, xi);
                sup_z = sup_z.max(z.norm(1.0));
                if !u.is_finite() || u.norm(1.0) >= 5.0 * r {
                    exited = true;
                }
            }
            Ok((if exited { 1.0 } else { 0.0 }, sup_z / r))
        })
        .collect::<Result<_>>()?;
    let lhs: Accumulator = pairs.iter().map(|p| p.0).collect();
    let rhs: Accumulator = pairs.iter().map(|p| p.1).collect();
    Ok((lhs.mean(), lhs.stderr(), rhs.mean(), rhs.stderr()))
}

/// Difference of `P_tΦ` at two initial conditions with common noise,
/// as `(mean, stderr)`.
pub fn semigroup_difference(
    phi1: &SpectralField,
    phi2: &SpectralField,
    obs: Observable,
    cfg: &SpdeConfig,
) -> Result<(f64, f64)> {
    let stepper = cfg.stepper()?;
    let cfg1 = SpdeConfig {
        record_every: usize::MAX,
        ..cfg.clone()
    };
    let diffs: Vec<f64> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let a = simulate(phi1, &cfg1, &stepper, i)?;
            let b = simulate(phi2, &cfg1, &stepper, i)?;
            if a.is_censored() || b.is_censored() {
                return Ok(f64::NAN);
            }
            Ok(obs.eval(a.last()) - obs.eval(b.last()))
        })
        .collect::<Result<_>>()?;
    let acc: Accumulator = diffs.into_iter().filter(|d| d.is_finite()).collect();
    Ok((acc.mean(), acc.stderr()))
}

/// Draws an initial condition with `‖φ‖_γ = norm` and a random spectral shape.
pub fn random_initial<R: Rng + ?Sized>(rng: &mut R, n: usize, gamma: f64, norm: f64) -> SpectralField {
    let f = crate::nonlinearity::random_probe_field(rng, n);
    f.scaled(norm / f.norm(gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_path::{generate_path, uniform_grid};
    use crate::picard::{picard_solve, PicardOptions, Quadrature, TimeGrid};

    fn cfg(n: usize) -> SpdeConfig {
        SpdeConfig::new(1.5, NoiseIntensity::power_law(1.75, n), 1e-2, 1.0)
    }

    #[test]
    fn zero_everything_stays_zero() {
        let mut c = cfg(4);
        c.q = NoiseIntensity::unconstrained(vec![0.0; 4]);
        let st = c.stepper().unwrap();
        let r = simulate(&SpectralField::zeros(4), &c, &st, 0).unwrap();
        assert!(r.states.iter().all(|s| s.is_zero()));
        assert_eq!(r.exit_time, None);
    }

    #[test]
    fn streaming_matches_stored_path() {
        let c = cfg(4);
        let st = c.stepper().unwrap();
        let phi = SpectralField::from_trig(4, &[(1, 0.0, 0.3)]);
        let grid = uniform_grid(1.0, c.steps()).unwrap();
        let mut s = StableSubordinatorSampler::for_stream(1.5, c.seed, 3).unwrap();
        let path = generate_path(&mut s, 4, &grid).unwrap();
        let a = simulate_path(&phi, &path, &st, 1, None).unwrap();
        let b = simulate(&phi, &c, &st, 3).unwrap();
        assert_eq!(a.states.len(), b.states.len());
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!(x.sub(y).norm(0.0) <= 1e-13 * (1.0 + x.norm(0.0)));
        }
    }

    #[test]
    fn linear_dynamics_is_exact_per_mode() {
        let mut c = cfg(3);
        c.dynamics = Dynamics::Linear;
        let st = c.stepper().unwrap();
        let phi = SpectralField::from_trig(3, &[(1, 0.4, 0.0), (2, 0.0, -0.3)]);
        let grid = uniform_grid(1.0, c.steps()).unwrap();
        let path = crate::noise_path::path_for_stream(1.5, 1, 0, 3, &grid).unwrap();
        let r = simulate_path(&phi, &path, &st, 1, None).unwrap();
        let z = crate::noise_path::convolve(&path, &c.q);
        for (j, u) in r.states.iter().enumerate() {
            let expected = crate::spectral::apply_semigroup(&phi, grid[j]).unwrap().add(&z[j]);
            assert!(u.sub(&expected).norm(0.0) < 1e-12 * (1.0 + expected.norm(0.0)));
        }
    }

    #[test]
    fn silent_noise_matches_picard_euler() {
        let n = 8;
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let phi = SpectralField::from_trig(n, &[(1, 0.2, 0.3)]);
        let st = Stepper::new(NoiseIntensity::power_law(1.75, n), Dynamics::Full, grid.h()).unwrap();
        let path = NoisePath::silent(grid.times(), n).unwrap();
        let r = simulate_path(&phi, &path, &st, 1, None).unwrap();
        let z = vec![SpectralField::zeros(n); grid.steps + 1];
        let opts = PicardOptions {
            quadrature: Quadrature::ExponentialEuler,
            ..PicardOptions::default()
        };
        let w = picard_solve(&phi, &z, grid, &opts).unwrap();
        // Lawson-Euler with an explicit drift vs. the same weights solved
        // as a fixed point: both are first order, so they agree to O(h).
        let gap = r.last().sub(w.path.last()).norm(0.0);
        assert!(gap < 5e-3, "{gap}");
    }

    #[test]
    fn truncated_agrees_with_full_before_exit() {
        let mut c = cfg(6);
        c.exit_radius = Some(0.3);
        let phi = SpectralField::from_trig(6, &[(1, 0.0, 0.2)]);
        for i in 0..50 {
            let full = simulate(&phi, &c, &c.stepper().unwrap(), i).unwrap();
            let tc = SpdeConfig {
                dynamics: Dynamics::Truncated { r: 0.3 },
                ..c.clone()
            };
            let trunc = simulate(&phi, &tc, &tc.stepper().unwrap(), i).unwrap();
            let stop = full.exit_time.unwrap_or(f64::INFINITY);
            for (j, t) in full.times.iter().enumerate() {
                if *t < stop {
                    assert_eq!(full.states[j], trunc.states[j], "path {i} t {t}");
                }
            }
        }
    }

    #[test]
    fn exit_time_is_first_crossing() {
        let mut c = cfg(4);
        c.exit_radius = Some(0.1);
        let st = c.stepper().unwrap();
        let phi = SpectralField::zeros(4);
        for i in 0..20 {
            let r = simulate(&phi, &c, &st, i).unwrap();
            let first = r.times.iter().zip(&r.states).find(|(_, s)| s.norm(1.0) >= 0.5).map(|(t, _)| *t);
            assert_eq!(first, r.exit_time);
        }
    }

    #[test]
    fn constant_observable() {
        let mut c = cfg(4);
        c.paths = 20;
        let e = estimate_semigroup(&SpectralField::zeros(4), Observable::Constant(1.0), &c).unwrap();
        assert_eq!((e.value, e.stderr), (1.0, 0.0));
    }

    #[test]
    fn deterministic_heat_decay_observable() {
        let mut c = cfg(4);
        c.q = NoiseIntensity::unconstrained(vec![0.0; 4]);
        c.dynamics = Dynamics::Linear;
        c.paths = 3;
        let phi = SpectralField::from_trig(4, &[(1, 1.0 / std::f64::consts::PI.sqrt(), 0.0)]);
        let e = estimate_semigroup(&phi, Observable::Cos(1), &c).unwrap();
        assert!((e.value - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn mean_zero_is_structural() {
        // No k = 0 slot exists; the grid mean of every state vanishes.
        let c = cfg(5);
        let st = c.stepper().unwrap();
        let r = simulate(&SpectralField::from_trig(5, &[(2, 0.3, 0.1)]), &c, &st, 0).unwrap();
        for s in &r.states {
            let g = s.sample_grid(32);
            assert!(g.iter().sum::<f64>().abs() < 1e-10 * (1.0 + s.norm(0.0)));
        }
    }

    #[test]
    fn large_states_trigger_substeps() {
        let st = Stepper::new(NoiseIntensity::power_law(1.75, 8), Dynamics::Full, 1e-2).unwrap();
        let big = SpectralField::from_trig(8, &[(1, 0.0, 200.0)]);
        assert!(st.substeps(&big) > 1);
        let mut u = big.clone();
        st.deterministic_step(&mut u);
        assert!(u.is_finite() && u.norm(0.0) <= big.norm(0.0));
        let plain = st.clone().with_max_courant(None);
        assert_eq!(plain.substeps(&big), 1);
    }

    #[test]
    fn observables_parse_and_clamp() {
        assert_eq!(Observable::parse("cos2").unwrap(), Observable::Cos(2));
        assert_eq!(
            Observable::parse("norm0/5").unwrap(),
            Observable::Norm { gamma: 0.0, scale: 5.0 }
        );
        assert!(Observable::parse("bogus").is_err());
        let u = SpectralField::from_trig(2, &[(1, 10.0, 0.0)]);
        assert_eq!(Observable::Cos(1).eval(&u), 1.0);
    }

    #[test]
    fn ensemble_is_deterministic() {
        let mut c = cfg(4);
        c.paths = 8;
        c.record_every = 10;
        let phi = SpectralField::from_trig(4, &[(1, 0.0, 0.3)]);
        let a = ensemble(&phi, &c).unwrap();
        let b = ensemble(&phi, &c).unwrap();
        assert_eq!(a, b);
        let rows = ensemble_stats(&a, &[Observable::Cos(1)]);
        assert_eq!(rows.len(), a[0].times.len());
    }
}
