//! Monte Carlo diagnostics for long-time behaviour: Lyapunov drift,
//! synchronous coupling, empirical mixing of observable laws and the
//! invariant-measure profile.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::picard::EnergyConstants;
use crate::seed::{child_seed, derive_seed};
use crate::spde::{add_noise, random_initial, NoiseStream, Observable, SpdeConfig, Stepper};
use crate::spectral::{eigenvalue, SpectralField};
use crate::stats::{ks_critical, ks_two_sample, linear_fit, quantile, sorted, t_quantile_975, Accumulator};

/// Values of `observables` at the steps listed in `record` (step 0 is the
/// initial state), flattened as `[record][observable]`. `None` when the
/// path stops being finite.
fn observe_path(
    phi: &SpectralField,
    cfg: &SpdeConfig,
    stepper: &Stepper,
    base_seed: u64,
    index: u64,
    record: &[usize],
    observables: &[Observable],
) -> Result<Option<Vec<f64>>> {
    let n = phi.n_max();
    let h = cfg.step_len();
    let mut noise = NoiseStream::for_stream(cfg.alpha, base_seed, index, n)?;
    let mut u = phi.clone();
    let mut out = Vec::with_capacity(record.len() * observables.len());
    let mut next = 0;
    let last = record.last().copied().unwrap_or(0);
    for j in 0..=last {
        if j > 0 {
            let (ds, xi) = noise.next(h);
            stepper.step(&mut u, ds, xi);
            if !u.is_finite() {
                return Ok(None);
            }
        }
        while next < record.len() && record[next] == j {
            out.extend(observables.iter().map(|o| o.eval(&u)));
            next += 1;
        }
    }
    Ok(Some(out))
}

/// Evenly spaced recording steps `0, every, 2·every, …` up to `steps`
/// (always including `steps`).
fn record_steps(steps: usize, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let mut r: Vec<usize> = (0..=steps).step_by(every).collect();
    if r.last() != Some(&steps) {
        r.push(steps);
    }
    r
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

// ---------------------------------------------------------------------------
// Lyapunov drift

#[derive(Debug, Clone)]
pub struct LyapunovConfig {
    pub spde: SpdeConfig,
    /// `‖φ‖₀` values used to fit the drift constants.
    pub fit_norms: Vec<f64>,
    /// `‖φ‖₀` values on which the fitted inequality is checked.
    pub holdout_norms: Vec<f64>,
    pub record_every: usize,
    /// Seed for the random spectral shapes of the initial conditions.
    pub shape_seed: u64,
    /// Largest tolerated fraction of non-finite trajectories.
    pub max_censored: f64,
    /// Fraction of the horizon, counted from the end, averaged for `K_V`.
    pub plateau_fraction: f64,
}

impl LyapunovConfig {
    pub fn new(spde: SpdeConfig) -> Self {
        let fit_norms = log_spaced(1.0, 100.0, 20);
        // Geometric midpoints of the fitting grid, plus both ends.
        let mut holdout_norms: Vec<f64> = fit_norms.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
        holdout_norms.push(100.0);
        let record_every = ((0.25 / spde.h).round() as usize).max(1);
        Self {
            spde,
            fit_norms,
            holdout_norms,
            record_every,
            shape_seed: 11,
            max_censored: 0.05,
            plateau_fraction: 0.25,
        }
    }
}

/// `E V(u_t)` for `V = 1 + ‖·‖₀` along one initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftCurve {
    pub phi_norm: f64,
    pub holdout: bool,
    pub ev: Vec<f64>,
    pub ev_se: Vec<f64>,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub times: Vec<f64>,
    pub curves: Vec<DriftCurve>,
    pub c_v: f64,
    pub rate: f64,
    /// Half-width of the 95% interval for `rate`.
    pub rate_ci: f64,
    pub k_v: f64,
    pub fit_points: usize,
    /// Held-out `(φ, t)` points with `E V − 3se` above the fitted bound.
    pub holdout_violations: usize,
    pub holdout_points: usize,
    /// Largest `(E V − 3se) / bound` over held-out points.
    pub worst_holdout_ratio: f64,
    pub censored: usize,
    pub trajectories: usize,
    /// First time the largest-norm curve drops below `2 K_V`.
    pub crossing_time: Option<f64>,
    pub pass: bool,
}

impl LyapunovReport {
    pub fn bound(&self, t: f64, v_phi: f64) -> f64 {
        self.c_v * (-self.rate * t).exp() * v_phi + self.k_v
    }
}

fn drift_curve(phi: &SpectralField, cfg: &LyapunovConfig, stepper: &Stepper, seed: u64, holdout: bool) -> Result<DriftCurve> {
    let sc = &cfg.spde;
    let record = record_steps(sc.steps(), cfg.record_every);
    let n = phi.n_max();
    let h = sc.step_len();
    let rows: Vec<Option<Vec<f64>>> = (0..sc.paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Option<Vec<f64>>> {
            let mut noise = NoiseStream::for_stream(sc.alpha, seed, i, n)?;
            let mut u = phi.clone();
            let mut out = Vec::with_capacity(record.len());
            let mut next = 0;
            for j in 0..=sc.steps() {
                if j > 0 {
                    let (ds, xi) = noise.next(h);
                    stepper.step(&mut u, ds, xi);
                    if !u.is_finite() {
                        return Ok(None);
                    }
                }
                if next < record.len() && record[next] == j {
                    out.push(1.0 + u.norm(0.0));
                    next += 1;
                }
            }
            Ok(Some(out))
        })
        .collect::<Result<_>>()?;
    let censored = rows.iter().filter(|r| r.is_none()).count();
    let kept: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    let mut ev = Vec::with_capacity(record.len());
    let mut ev_se = Vec::with_capacity(record.len());
    for i in 0..record.len() {
        let acc: Accumulator = kept.iter().map(|r| r[i]).collect();
        ev.push(acc.mean());
        ev_se.push(acc.stderr());
    }
    Ok(DriftCurve {
        phi_norm: phi.norm(0.0),
        holdout,
        ev,
        ev_se,
        censored,
    })
}

/// Fits `E V(u_t) <= C_V e^{-rate·t} V(φ) + K_V` on the fitting norms and
/// checks it on the held-out norms.
pub fn lyapunov_drift(cfg: &LyapunovConfig) -> Result<LyapunovReport> {
    let sc = &cfg.spde;
    if cfg.fit_norms.is_empty() || cfg.holdout_norms.is_empty() {
        return Err(invalid("Lyapunov fit needs fitting and held-out initial conditions"));
    }
    let stepper = sc.stepper()?;
    let n = sc.q.n_max();
    let record = record_steps(sc.steps(), cfg.record_every);
    let h = sc.step_len();
    let times: Vec<f64> = record.iter().map(|&j| j as f64 * h).collect();
    let mut shape_rng = ChaCha8Rng::seed_from_u64(cfg.shape_seed);
    let mut curves = Vec::new();
    let all = cfg
        .fit_norms
        .iter()
        .map(|&r| (r, false))
        .chain(cfg.holdout_norms.iter().map(|&r| (r, true)));
    for (idx, (norm, holdout)) in all.enumerate() {
        let phi = random_initial(&mut shape_rng, n, 0.0, norm);
        curves.push(drift_curve(&phi, cfg, &stepper, derive_seed(sc.seed, idx as u64), holdout)?);
    }
    let censored: usize = curves.iter().map(|c| c.censored).sum();
    let trajectories = curves.len() * sc.paths;

    let fit: Vec<&DriftCurve> = curves.iter().filter(|c| !c.holdout).collect();
    let t_plateau = sc.t_end * (1.0 - cfg.plateau_fraction);
    let k_v = fit
        .iter()
        .map(|c| {
            let acc: Accumulator = times
                .iter()
                .zip(&c.ev)
                .filter(|(t, _)| **t >= t_plateau)
                .map(|(_, v)| *v)
                .collect();
            acc.mean()
        })
        .fold(1.0, f64::max);

    // Transient regime: points significantly above the plateau.
    let above = |e: f64, se: f64| e - k_v > 3.0 * se;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for c in &fit {
        let v = 1.0 + c.phi_norm;
        for ((t, e), se) in times.iter().zip(&c.ev).zip(&c.ev_se) {
            if above(*e, *se) {
                xs.push(*t);
                ys.push(((e - k_v) / v).ln());
            }
        }
    }
    let fit_points = xs.len();
    let (rate, rate_ci) = if fit_points >= 3 {
        let f = linear_fit(&xs, &ys);
        (-f.slope, t_quantile_975(fit_points - 2) * f.slope_stderr)
    } else {
        (f64::NAN, f64::NAN)
    };
    let c_v = if rate.is_finite() {
        // Envelope over the same transient points that fixed the rate.
        fit.iter()
            .flat_map(|c| {
                let v = 1.0 + c.phi_norm;
                times
                    .iter()
                    .zip(c.ev.iter().zip(&c.ev_se))
                    .filter(|(_, (e, se))| above(**e, **se))
                    .map(move |(t, (e, _))| (e - k_v) / (v * (-rate * t).exp()))
            })
            .fold(0.0, f64::max)
    } else {
        f64::NAN
    };
    let mut report = LyapunovReport {
        times: times.clone(),
        curves: Vec::new(),
        c_v,
        rate,
        rate_ci,
        k_v,
        fit_points,
        holdout_violations: 0,
        holdout_points: 0,
        worst_holdout_ratio: 0.0,
        censored,
        trajectories,
        crossing_time: None,
        pass: false,
    };
    for c in curves.iter().filter(|c| c.holdout) {
        let v = 1.0 + c.phi_norm;
        for ((t, e), se) in times.iter().zip(&c.ev).zip(&c.ev_se) {
            let b = report.bound(*t, v);
            let lhs = e - 3.0 * se;
            report.holdout_points += 1;
            if !(lhs <= b) {
                report.holdout_violations += 1;
            }
            report.worst_holdout_ratio = report.worst_holdout_ratio.max(lhs / b);
        }
    }
    if let Some(top) = curves
        .iter()
        .max_by(|a, b| a.phi_norm.total_cmp(&b.phi_norm))
    {
        report.crossing_time = times
            .iter()
            .zip(&top.ev)
            .find(|(_, e)| **e < 2.0 * k_v)
            .map(|(t, _)| *t);
    }
    let censored_ok = (censored as f64) <= cfg.max_censored * trajectories as f64;
    report.pass = rate > 0.0
        && rate - rate_ci > 0.0
        && report.holdout_violations == 0
        && censored_ok;
    report.curves = curves;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Synchronous coupling

#[derive(Debug, Clone)]
pub struct CouplingConfig {
    pub spde: SpdeConfig,
    /// Radius of the event `sup_{s<=1} ‖Z_s‖₁ <= R`.
    pub r: f64,
    pub check_times: Vec<f64>,
    /// Constant in `‖u_t(φ₁) − u_t(φ₂)‖₁ <= c t^{-1/2} ‖φ₁ − φ₂‖₀`.
    pub constant: f64,
    /// Required fraction of event paths on which the bound holds.
    pub required_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRow {
    pub t: f64,
    pub event_paths: usize,
    pub holds: usize,
    pub fraction: f64,
    /// Largest `√t ‖u_t(φ₁) − u_t(φ₂)‖₁ / ‖φ₁ − φ₂‖₀` on event paths.
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingReport {
    pub rows: Vec<CouplingRow>,
    pub paths: usize,
    pub event_paths: usize,
    pub censored: usize,
    pub pass: bool,
}

struct CoupledPath {
    in_event: bool,
    ratios: Vec<f64>,
}

/// Runs both initial conditions on identical noise and checks the H¹
/// smoothing bound at each check time on paths inside the event.
pub fn coupling_contraction(phi1: &SpectralField, phi2: &SpectralField, cfg: &CouplingConfig) -> Result<CouplingReport> {
    let sc = &cfg.spde;
    let n = phi1.n_max();
    if phi2.n_max() != n || sc.q.n_max() != n {
        return Err(invalid("coupled initial conditions and intensity must share the mode count"));
    }
    if cfg.check_times.iter().any(|&t| !(t > 0.0)) {
        return Err(invalid("coupling check times must be positive"));
    }
    let stepper = sc.stepper()?;
    let h = sc.h;
    let horizon = cfg.check_times.iter().copied().fold(1.0, f64::max);
    let steps = ((horizon / h) - 1e-9).ceil() as usize;
    let check_steps: Vec<usize> = cfg.check_times.iter().map(|t| (t / h).round().max(1.0) as usize).collect();
    let event_steps = (1.0 / h).round() as usize;
    let d0 = phi1.sub(phi2).norm(0.0);
    let decay: Vec<f64> = (1..=n).map(|k| (-eigenvalue(k) * h).exp()).collect();
    let paths: Vec<Option<CoupledPath>> = (0..sc.paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Option<CoupledPath>> {
            let mut noise = NoiseStream::for_stream(sc.alpha, sc.seed, i, n)?;
            let mut u1 = phi1.clone();
            let mut u2 = phi2.clone();
            let mut z = SpectralField::zeros(n);
            let mut sup_z: f64 = 0.0;
            let mut ratios = vec![f64::NAN; check_steps.len()];
            for j in 1..=steps {
                let (ds, xi) = noise.next(h);
                stepper.step(&mut u1, ds, xi);
                stepper.step(&mut u2, ds, xi);
                z.scale_modes(|k| decay[k - 1]);
                add_noise(&mut z, &sc.q, ds, xi);
                if j <= event_steps {
                    sup_z = sup_z.max(z.norm(1.0));
                }
                if !(u1.is_finite() && u2.is_finite()) {
                    return Ok(None);
                }
                for (c, &s) in check_steps.iter().enumerate() {
                    if s == j {
                        let t = j as f64 * h;
                        let diff = u1.sub(&u2).norm(1.0);
                        ratios[c] = if d0 == 0.0 {
                            if diff == 0.0 { 0.0 } else { f64::INFINITY }
                        } else {
                            diff * t.sqrt() / d0
                        };
                    }
                }
            }
            Ok(Some(CoupledPath {
                in_event: sup_z <= cfg.r,
                ratios,
            }))
        })
        .collect::<Result<_>>()?;
    let censored = paths.iter().filter(|p| p.is_none()).count();
    let event: Vec<&CoupledPath> = paths.iter().flatten().filter(|p| p.in_event).collect();
    let mut rows = Vec::new();
    for (c, &s) in check_steps.iter().enumerate() {
        let holds = event.iter().filter(|p| p.ratios[c] <= cfg.constant).count();
        rows.push(CouplingRow {
            t: s as f64 * h,
            event_paths: event.len(),
            holds,
            fraction: if event.is_empty() { f64::NAN } else { holds as f64 / event.len() as f64 },
            worst_ratio: event.iter().map(|p| p.ratios[c]).fold(0.0, f64::max),
        });
    }
    let pass = !event.is_empty() && rows.iter().all(|r| r.fraction >= cfg.required_fraction);
    Ok(CouplingReport {
        rows,
        paths: sc.paths,
        event_paths: event.len(),
        censored,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Mixing of observable laws

#[derive(Debug, Clone)]
pub struct MixingConfig {
    /// Ensemble description; `paths` is the size of each side.
    pub spde: SpdeConfig,
    pub observables: Vec<Observable>,
    pub record_every: usize,
    /// Level of the KS critical value used as the noise floor.
    pub level: f64,
    /// Points with distance above `floor_multiple × critical` enter the fit.
    pub floor_multiple: f64,
}

impl MixingConfig {
    pub fn new(spde: SpdeConfig) -> Self {
        let record_every = ((0.5 / spde.h).round() as usize).max(1);
        Self {
            spde,
            observables: vec![
                Observable::Cos(1),
                Observable::Sin(1),
                Observable::Cos(2),
                Observable::Sin(2),
                Observable::Norm { gamma: 0.0, scale: 10.0 },
            ],
            record_every,
            level: 0.01,
            floor_multiple: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingReport {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    /// `per_observable[t][o]` KS distance.
    pub per_observable: Vec<Vec<f64>>,
    /// Maximum over observables at each time.
    pub distances: Vec<f64>,
    pub critical: f64,
    pub gamma: f64,
    /// Half-width of the 95% interval for `gamma`.
    pub gamma_ci: f64,
    pub fit_points: usize,
    pub censored: usize,
    pub paths_per_side: usize,
    pub pass: bool,
}

fn observe_ensemble(
    phi: &SpectralField,
    cfg: &SpdeConfig,
    stepper: &Stepper,
    base_seed: u64,
    record: &[usize],
    observables: &[Observable],
) -> Result<(Vec<Vec<f64>>, usize)> {
    let rows: Vec<Option<Vec<f64>>> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| observe_path(phi, cfg, stepper, base_seed, i, record, observables))
        .collect::<Result<_>>()?;
    let censored = rows.iter().filter(|r| r.is_none()).count();
    Ok((rows.into_iter().flatten().collect(), censored))
}

fn column(rows: &[Vec<f64>], idx: usize) -> Vec<f64> {
    rows.iter().map(|r| r[idx]).collect()
}

/// KS distances between independent ensembles from `φ₁` and `φ₂` and an
/// exponential fit of their decay.
pub fn mixing_rate(phi1: &SpectralField, phi2: &SpectralField, cfg: &MixingConfig) -> Result<MixingReport> {
    let sc = &cfg.spde;
    if cfg.observables.is_empty() {
        return Err(invalid("mixing needs at least one observable"));
    }
    let stepper = sc.stepper()?;
    let record = record_steps(sc.steps(), cfg.record_every);
    let h = sc.step_len();
    let times: Vec<f64> = record.iter().map(|&j| j as f64 * h).collect();
    let (a, ca) = observe_ensemble(phi1, sc, &stepper, child_seed(sc.seed, "mixing-a"), &record, &cfg.observables)?;
    let (b, cb) = observe_ensemble(phi2, sc, &stepper, child_seed(sc.seed, "mixing-b"), &record, &cfg.observables)?;
    let m = cfg.observables.len();
    let mut per_observable = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        per_observable.push(
            (0..m)
                .map(|o| ks_two_sample(&column(&a, i * m + o), &column(&b, i * m + o)))
                .collect::<Vec<f64>>(),
        );
    }
    let distances: Vec<f64> = per_observable.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
    let critical = ks_critical(a.len().max(1), b.len().max(1), cfg.level);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (t, d) in times.iter().zip(&distances) {
        if *t > 0.0 && *d > cfg.floor_multiple * critical {
            xs.push(*t);
            ys.push(d.ln());
        }
    }
    let fit_points = xs.len();
    let (gamma, gamma_ci) = if fit_points >= 3 {
        let f = linear_fit(&xs, &ys);
        (-f.slope, t_quantile_975(fit_points - 2) * f.slope_stderr)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(MixingReport {
        labels: cfg.observables.iter().map(|o| o.label()).collect(),
        times,
        per_observable,
        distances,
        critical,
        gamma,
        gamma_ci,
        fit_points,
        censored: ca + cb,
        paths_per_side: sc.paths,
        pass: gamma > 0.0 && gamma - gamma_ci > 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullCalibration {
    pub reps: usize,
    pub exceedances: usize,
    pub fraction_below: f64,
    pub critical: f64,
    pub required_fraction: f64,
    pub pass: bool,
}

/// Repeated KS tests between independent ensembles from the same initial
/// condition at time `cfg.t_end`; each repetition uses fresh seeds.
pub fn null_calibration(
    phi: &SpectralField,
    obs: Observable,
    cfg: &SpdeConfig,
    reps: usize,
    level: f64,
    required_fraction: f64,
) -> Result<NullCalibration> {
    if reps == 0 {
        return Err(invalid("null calibration needs at least one repetition"));
    }
    let stepper = cfg.stepper()?;
    let steps = cfg.steps();
    let record = [steps];
    let critical = ks_critical(cfg.paths, cfg.paths, level);
    let mut exceedances = 0;
    for r in 0..reps as u64 {
        let (a, _) = observe_ensemble(phi, cfg, &stepper, derive_seed(cfg.seed, 2 * r), &record, &[obs])?;
        let (b, _) = observe_ensemble(phi, cfg, &stepper, derive_seed(cfg.seed, 2 * r + 1), &record, &[obs])?;
        if ks_two_sample(&column(&a, 0), &column(&b, 0)) > critical {
            exceedances += 1;
        }
    }
    let fraction_below = 1.0 - exceedances as f64 / reps as f64;
    Ok(NullCalibration {
        reps,
        exceedances,
        fraction_below,
        critical,
        required_fraction,
        pass: fraction_below >= required_fraction,
    })
}

// ---------------------------------------------------------------------------
// Small-noise event

/// `ε₀ = (1/(2C₁)) ∧ (1/√(2C₂+1))` and `t₀ = 2 log(R²/ε⁴)`.
pub fn small_set_parameters(c: EnergyConstants, r: f64, eps: f64) -> (f64, f64) {
    let eps0 = (1.0 / (2.0 * c.c1)).min(1.0 / (2.0 * c.c2 + 1.0).sqrt());
    let t0 = 2.0 * (r * r / eps.powi(4)).ln();
    (eps0, t0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallNoiseReport {
    pub horizon: f64,
    pub percentile: f64,
    /// Pilot quantile of `sup_{s<=horizon} ‖Z_s‖₁`.
    pub epsilon: f64,
    /// Frequency of `sup ‖Z_s‖₁ <= ε` on an independent ensemble.
    pub frequency: f64,
    pub frequency_se: f64,
    pub paths: usize,
}

fn sup_convolution(cfg: &SpdeConfig, seed: u64, index: u64, horizon: f64) -> Result<f64> {
    let n = cfg.q.n_max();
    let h = cfg.h;
    let steps = ((horizon / h) - 1e-9).ceil().max(1.0) as usize;
    let decay: Vec<f64> = (1..=n).map(|k| (-eigenvalue(k) * h).exp()).collect();
    let mut noise = NoiseStream::for_stream(cfg.alpha, seed, index, n)?;
    let mut z = SpectralField::zeros(n);
    let mut sup: f64 = 0.0;
    for _ in 0..steps {
        let (ds, xi) = noise.next(h);
        z.scale_modes(|k| decay[k - 1]);
        add_noise(&mut z, &cfg.q, ds, xi);
        sup = sup.max(z.norm(1.0));
    }
    Ok(sup)
}

/// Empirical probability that the convolution stays in a small H¹ ball
/// over `[0, horizon]`, with the radius set by a pilot run.
pub fn small_noise_frequency(cfg: &SpdeConfig, horizon: f64, pilot_paths: usize, percentile: f64) -> Result<SmallNoiseReport> {
    let pilot_seed = child_seed(cfg.seed, "small-noise-pilot");
    let main_seed = child_seed(cfg.seed, "small-noise");
    let pilot: Vec<f64> = (0..pilot_paths as u64)
        .into_par_iter()
        .map(|i| sup_convolution(cfg, pilot_seed, i, horizon))
        .collect::<Result<_>>()?;
    let epsilon = quantile(&sorted(&pilot), percentile);
    let hits: Accumulator = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| sup_convolution(cfg, main_seed, i, horizon).map(|s| if s <= epsilon { 1.0 } else { 0.0 }))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .collect();
    Ok(SmallNoiseReport {
        horizon,
        percentile,
        epsilon,
        frequency: hits.mean(),
        frequency_se: hits.stderr(),
        paths: cfg.paths,
    })
}

// ---------------------------------------------------------------------------
// Invariant measure

#[derive(Debug, Clone)]
pub struct InvariantConfig {
    /// Ensemble description; `t_end` is the ensemble time.
    pub spde: SpdeConfig,
    pub observable: Observable,
    /// Length of the single long trajectory and its discarded prefix.
    pub long_horizon: f64,
    pub burn_in: f64,
    pub batches: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantProfile {
    pub time_average: f64,
    pub time_average_se: f64,
    pub ensemble_mean: f64,
    pub ensemble_se: f64,
    /// `|time average − ensemble mean|` in combined standard errors.
    pub z_score: f64,
    /// Quantiles (5%, 50%, 95%) of the observable along the long run.
    pub long_run_quantiles: [f64; 3],
    /// KS distance between ensembles from the two initial conditions.
    pub ks: f64,
    pub ks_critical: f64,
    pub censored: usize,
    pub pass: bool,
}

/// Birkhoff average along one long path against ensemble averages from
/// two initial conditions.
pub fn invariant_measure_profile(phi1: &SpectralField, phi2: &SpectralField, cfg: &InvariantConfig) -> Result<InvariantProfile> {
    let sc = &cfg.spde;
    let stepper = sc.stepper()?;
    let n = phi1.n_max();
    let h = sc.h;
    let long_steps = (cfg.long_horizon / h).round() as usize;
    let burn = (cfg.burn_in / h).round() as usize;
    if burn >= long_steps || cfg.batches < 2 {
        return Err(invalid("long run must outlast the burn-in and use at least two batches"));
    }
    let mut noise = NoiseStream::for_stream(sc.alpha, child_seed(sc.seed, "long-run"), 0, n)?;
    let mut u = phi1.clone();
    let mut samples = Vec::with_capacity(long_steps - burn);
    let mut censored = 0;
    for j in 1..=long_steps {
        let (ds, xi) = noise.next(h);
        stepper.step(&mut u, ds, xi);
        if !u.is_finite() {
            censored += 1;
            break;
        }
        if j > burn {
            samples.push(cfg.observable.eval(&u));
        }
    }
    let block = samples.len() / cfg.batches;
    let batch_means: Accumulator = (0..cfg.batches)
        .map(|b| samples[b * block..(b + 1) * block].iter().sum::<f64>() / block.max(1) as f64)
        .collect();
    let long_run = sorted(&samples);

    let record = [sc.steps()];
    let obs = [cfg.observable];
    let (a, ca) = observe_ensemble(phi1, sc, &stepper, child_seed(sc.seed, "invariant-a"), &record, &obs)?;
    let (b, cb) = observe_ensemble(phi2, sc, &stepper, child_seed(sc.seed, "invariant-b"), &record, &obs)?;
    let a = column(&a, 0);
    let b = column(&b, 0);
    let ens: Accumulator = a.iter().copied().collect();
    let z_score = (batch_means.mean() - ens.mean()).abs() / (batch_means.stderr().powi(2) + ens.stderr().powi(2)).sqrt();
    let ks = ks_two_sample(&a, &b);
    let crit = ks_critical(a.len().max(1), b.len().max(1), cfg.level);
    Ok(InvariantProfile {
        time_average: batch_means.mean(),
        time_average_se: batch_means.stderr(),
        ensemble_mean: ens.mean(),
        ensemble_se: ens.stderr(),
        z_score,
        long_run_quantiles: [quantile(&long_run, 0.05), quantile(&long_run, 0.5), quantile(&long_run, 0.95)],
        ks,
        ks_critical: crit,
        censored: censored + ca + cb,
        pass: z_score <= 3.0 && ks <= crit,
    })
}
