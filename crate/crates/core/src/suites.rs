//! The verification suites behind the CLI subcommands. Each returns a
//! [`SuiteReport`]; nothing here touches the file system.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Profile, SimConfig, SuiteKind};
use crate::diagnostics::{
    coupling_contraction, invariant_measure_profile, lyapunov_drift, mixing_rate, null_calibration,
    small_noise_frequency, CouplingConfig, InvariantConfig, LyapunovConfig, MixingConfig,
};
use crate::error::{Error, Result};
use crate::noise_path::{
    convolution_oracle_study, convolve, path_for_stream, uniform_grid, verify_convolution_moments,
    ConvolutionMomentConfig, ConvolutionOracleConfig,
};
use crate::nonlinearity::{fit_trilinear_constant, galerkin, random_probe_field};
use crate::picard::{
    energy_ratio, energy_sample, fit_energy_constants, lipschitz_in_data, measure_contraction,
    random_ball_path, solve_global, EnergyConstants, LocalTime, PicardOptions, TimeGrid,
};
use crate::report::{Cell, Check, SuiteReport, Table};
use crate::seed::{child_seed, derive_seed, stream_rng};
use crate::sensitivity::{bismut_gradient, linear_growth_constant, variational_growth_bound, GradientConfig};
use crate::spde::{ensemble, ensemble_stats, random_initial, simulate, Dynamics, Observable, SpdeConfig};
use crate::spectral::{NoiseIntensity, SpectralField};
use crate::stats::{ks_critical, ks_two_sample, linear_fit};
use crate::subordinator::{laplace_transform_estimate, small_ball_probability, StableSubordinatorSampler};

/// Sobolev exponent used for the local existence time.
pub const SIGMA: f64 = 0.75;

/// Runs one suite after checking the suite-specific constraints.
pub fn run_suite(kind: SuiteKind, cfg: &SimConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    cfg.validate_for(kind)?;
    match kind {
        SuiteKind::Simulate => simulate_suite(cfg),
        SuiteKind::Ensemble => ensemble_suite(cfg),
        SuiteKind::Picard => picard_suite(cfg),
        SuiteKind::VerifySubordinator => verify_subordinator(cfg),
        SuiteKind::VerifyConvolution => verify_convolution(cfg),
        SuiteKind::VerifyPicard => verify_picard(cfg),
        SuiteKind::GradientCheck => gradient_check(cfg),
        SuiteKind::Ergodicity => ergodicity(cfg),
    }
}

fn mode_columns(header: &mut Vec<&'static str>) {
    header.extend(["a1", "b1", "a2", "b2", "a3", "b3", "a4", "b4"]);
}

fn push_modes(row: &mut Vec<Cell>, u: &SpectralField) {
    for k in 1..=4 {
        let (a, b) = u.mode(k);
        row.push(a.into());
        row.push(b.into());
    }
}

fn censor_check(censored: usize, total: usize, budget: f64) -> Check {
    let frac = if total == 0 { 0.0 } else { censored as f64 / total as f64 };
    Check::at_most("censored fraction", frac, budget, "non-finite trajectories over all trajectories")
}

// ---------------------------------------------------------------------------

fn simulate_suite(cfg: &SimConfig) -> Result<SuiteReport> {
    let sc = cfg.spde_config()?;
    let stepper = sc.stepper()?;
    let rec = simulate(&cfg.phi_field(), &sc, &stepper, 0)?;
    let mut header = vec!["t", "norm0", "norm1"];
    mode_columns(&mut header);
    let mut table = Table::new(&header);
    for (t, u) in rec.times.iter().zip(&rec.states) {
        let mut row: Vec<Cell> = vec![(*t).into(), u.norm(0.0).into(), u.norm(1.0).into()];
        push_modes(&mut row, u);
        table.push(row);
    }
    let mut r = SuiteReport::new("simulate");
    r.trajectories = 1;
    r.censored = usize::from(rec.is_censored());
    r.checks.push(Check::new(
        "trajectory finite",
        rec.blow_up.unwrap_or(f64::NAN),
        cfg.t_end,
        !rec.is_censored(),
        "time of first non-finite state (NaN if none)",
    ));
    r.tables.push(("trajectory".into(), table));
    Ok(r)
}

fn ensemble_suite(cfg: &SimConfig) -> Result<SuiteReport> {
    let sc = cfg.spde_config()?;
    let records = ensemble(&cfg.phi_field(), &sc)?;
    let censored = records.iter().filter(|r| r.is_censored()).count();
    let rows = ensemble_stats(&records, &cfg.observables);
    let mut table = Table::new(&["t", "observable", "mean", "stderr", "q05", "q50", "q95", "n_censored"]);
    for row in rows {
        table.push(vec![
            row.t.into(),
            row.observable.into(),
            row.mean.into(),
            row.stderr.into(),
            row.q05.into(),
            row.q50.into(),
            row.q95.into(),
            row.censored.into(),
        ]);
    }
    let mut r = SuiteReport::new("ensemble");
    r.trajectories = records.len();
    r.censored = censored;
    r.checks.push(censor_check(censored, records.len(), cfg.censor_budget));
    r.tables.push(("ensemble".into(), table));
    Ok(r)
}

fn picard_suite(cfg: &SimConfig) -> Result<SuiteReport> {
    let n = cfg.n_modes;
    let q = cfg.intensity()?;
    let steps = ((cfg.t_end / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
    let grid = TimeGrid::new(cfg.t_end, steps)?;
    let times = uniform_grid(cfg.t_end, steps)?;
    let path = path_for_stream(cfg.alpha, cfg.seed, 0, n, &times)?;
    let z = convolve(&path, &q);
    let opts = PicardOptions {
        quadrature: cfg.quadrature,
        ..PicardOptions::default()
    };
    let mut r = SuiteReport::new("picard");
    r.trajectories = 1;
    let w = match solve_global(&cfg.phi_field(), &z, grid, &opts) {
        Ok(w) => w,
        Err(Error::BlowUp { time, .. }) => {
            r.censored = 1;
            r.checks.push(Check::new("mild solution finite", time, cfg.t_end, false, "blow-up time"));
            return Ok(r);
        }
        Err(e) => return Err(e),
    };
    let mut header = vec!["t", "w_norm0", "w_norm1", "z_norm1", "u_norm0"];
    mode_columns(&mut header);
    let mut table = Table::new(&header);
    for ((t, wi), zi) in times.iter().zip(&w).zip(&z) {
        let u = wi.add(zi);
        let mut row: Vec<Cell> = vec![
            (*t).into(),
            wi.norm(0.0).into(),
            wi.norm(1.0).into(),
            zi.norm(1.0).into(),
            u.norm(0.0).into(),
        ];
        push_modes(&mut row, &u);
        table.push(row);
    }
    let finite = w.iter().all(|f| f.is_finite());
    r.censored = usize::from(!finite);
    r.checks.push(Check::new(
        "mild solution finite",
        w.last().map_or(f64::NAN, |f| f.norm(0.0)),
        f64::INFINITY,
        finite,
        "final ‖w‖₀ of the Picard fixed point chained over windows",
    ));
    r.tables.push(("solution".into(), table));
    Ok(r)
}

// ---------------------------------------------------------------------------

fn subordinator_row(table: &mut Table, test: &str, parameter: String, est: f64, se: f64, target: f64, pass: bool) {
    table.push(vec![test.into(), parameter.into(), est.into(), se.into(), target.into(), pass.into()]);
}

fn verify_subordinator(cfg: &SimConfig) -> Result<SuiteReport> {
    let p = cfg.profile;
    let seed = child_seed(cfg.seed, "subordinator");
    let mut table = Table::new(&["test", "parameter", "estimate", "stderr", "target", "pass"]);
    let mut r = SuiteReport::new("verify-subordinator");

    // Laplace transform of S_1 at every (α, η).
    let draws = p.pick(1_000_000, 10_000);
    let grid: Vec<(f64, f64)> = [1.2, 1.5, 1.8]
        .into_iter()
        .flat_map(|a| [0.5, 1.0, 2.0, 4.0].into_iter().map(move |e| (a, e)))
        .collect();
    let laplace: Vec<(f64, f64)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &(a, eta))| {
            let mut s = StableSubordinatorSampler::for_stream(a, seed, i as u64)?;
            laplace_transform_estimate(&mut s, eta, 1.0, draws)
        })
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for (&(a, eta), &(est, se)) in grid.iter().zip(&laplace) {
        let target = (-eta.powf(a / 2.0)).exp();
        let z = (est - target).abs() / se;
        worst = worst.max(z);
        subordinator_row(&mut table, "laplace", format!("alpha={a} eta={eta}"), est, se, target, z <= 3.0);
    }
    r.checks.push(Check::at_most(
        "laplace transform",
        worst,
        3.0,
        "largest |estimate − exp(−η^{α/2})| in standard errors",
    ));

    // E S_t^{-1} against t on a dyadic grid.
    let n_neg = p.pick(100_000, 5_000);
    let ts: Vec<f64> = (1..=6).rev().map(|e| 2f64.powi(-e)).collect();
    let moments: Vec<(f64, f64)> = ts
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut s = StableSubordinatorSampler::for_stream(cfg.alpha, seed ^ 0x4E47, i as u64)?;
            crate::subordinator::estimate_negative_moment(&mut s, 1.0, t, n_neg)
        })
        .collect::<Result<_>>()?;
    let fit = linear_fit(
        &ts.iter().map(|t| t.ln()).collect::<Vec<_>>(),
        &moments.iter().map(|m| m.0.ln()).collect::<Vec<_>>(),
    );
    let target_slope = -2.0 / cfg.alpha;
    for (t, (est, se)) in ts.iter().zip(&moments) {
        subordinator_row(&mut table, "negative_moment", format!("t={t}"), *est, *se, f64::NAN, est.is_finite());
    }
    let slope_ok = (fit.slope - target_slope).abs() <= 0.1;
    subordinator_row(
        &mut table,
        "negative_moment_slope",
        format!("alpha={}", cfg.alpha),
        fit.slope,
        fit.slope_stderr,
        target_slope,
        slope_ok,
    );
    r.checks.push(Check::new(
        "negative moment slope",
        fit.slope,
        target_slope,
        slope_ok,
        "log-log slope of E S_t^{-1}; tolerance 0.1",
    ));

    // Strict positivity.
    let n_pos = p.pick(10_000_000, 100_000);
    let chunks = 16;
    let minima: Vec<f64> = (0..chunks as u64)
        .into_par_iter()
        .map(|c| -> Result<f64> {
            let mut s = StableSubordinatorSampler::for_stream(cfg.alpha, seed ^ 0x505, c)?;
            let mut m = f64::INFINITY;
            for _ in 0..n_pos / chunks {
                m = m.min(s.sample_increment(1e-3)?);
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let min = minima.into_iter().fold(f64::INFINITY, f64::min);
    subordinator_row(&mut table, "positivity", "dt=0.001".into(), min, 0.0, 0.0, min > 0.0);
    r.checks.push(Check::new("increments positive", min, 0.0, min > 0.0, "smallest sampled increment"));

    // Small-ball frequency and its monotonicity in r.
    let n_ball = p.pick(1_000_000, 20_000);
    let mut s = StableSubordinatorSampler::for_stream(cfg.alpha, seed ^ 0xBA11, 0)?;
    let f1 = small_ball_probability(&mut s, 1.0, 1.0, n_ball)?;
    let curve = {
        let mut s = StableSubordinatorSampler::for_stream(cfg.alpha, seed ^ 0xBA11, 1)?;
        crate::subordinator::small_ball_curve(&mut s, &[0.5, 2.0], 1.0, n_ball)?
    };
    subordinator_row(&mut table, "small_ball", "r=1 t=1".into(), f1, (f1 * (1.0 - f1) / n_ball as f64).sqrt(), 0.0, f1 > 0.0);
    subordinator_row(&mut table, "small_ball", "r=0.5 t=1".into(), curve[0], f64::NAN, f64::NAN, curve[0] <= curve[1]);
    subordinator_row(&mut table, "small_ball", "r=2 t=1".into(), curve[1], f64::NAN, f64::NAN, curve[0] <= curve[1]);
    r.checks.push(Check::new("small-ball frequency positive", f1, 0.0, f1 > 0.0, "P(S_1 <= 1)"));

    // Additivity in law: S_0.3 + S'_0.7 against S_1.
    let n_add = p.pick(100_000, 5_000);
    let mut s1 = StableSubordinatorSampler::for_stream(cfg.alpha, seed ^ 0xADD, 0)?;
    let mut s2 = StableSubordinatorSampler::for_stream(cfg.alpha, seed ^ 0xADD, 1)?;
    let mut s3 = StableSubordinatorSampler::for_stream(cfg.alpha, seed ^ 0xADD, 2)?;
    let sums: Vec<f64> = (0..n_add)
        .map(|_| Ok(s1.sample_increment(0.3)? + s2.sample_increment(0.7)?))
        .collect::<Result<_>>()?;
    let whole: Vec<f64> = (0..n_add).map(|_| s3.sample_increment(1.0)).collect::<Result<_>>()?;
    let ks = ks_two_sample(&sums, &whole);
    let crit = ks_critical(n_add, n_add, 0.01);
    subordinator_row(&mut table, "additivity_ks", "0.3+0.7 vs 1".into(), ks, f64::NAN, crit, ks <= crit);
    r.checks.push(Check::at_most("additivity in law", ks, crit, "two-sample KS against the 1% critical value"));

    r.tables.push(("tests".into(), table));
    Ok(r)
}

// ---------------------------------------------------------------------------

/// Mode count of the convolution studies.
pub const CONVOLUTION_MODES: usize = 32;

fn verify_convolution(cfg: &SimConfig) -> Result<SuiteReport> {
    let p = cfg.profile;
    let mut r = SuiteReport::new("verify-convolution");
    let mut mc = ConvolutionMomentConfig::new(cfg.alpha, CONVOLUTION_MODES);
    mc.q = cfg.intensity_with_modes(CONVOLUTION_MODES)?;
    mc.paths = p.pick(10_000, 400);
    mc.seed = child_seed(cfg.seed, "convolution-moments");
    let rep = verify_convolution_moments(&mc)?;
    let mut table = Table::new(&["T", "estimate", "stderr", "fitted_slope", "target_slope", "pass"]);
    for row in &rep.rows {
        table.push(vec![
            row.t.into(),
            row.estimate.into(),
            row.stderr.into(),
            rep.fitted_slope.into(),
            rep.target_slope.into(),
            rep.pass.into(),
        ]);
    }
    r.checks.push(Check::new(
        "moment scaling slope",
        rep.fitted_slope,
        rep.target_slope,
        rep.pass,
        format!("small-T slope of E sup ‖Z‖_θ, θ = {}; tolerance {}", mc.theta, mc.tolerance),
    ));
    r.checks.push(Check::new(
        "small-ball event positive",
        rep.small_ball_frequency,
        0.0,
        rep.small_ball_frequency > 0.0,
        format!("P(sup ‖Z‖_θ <= {:.4e}) on an independent ensemble", rep.small_ball_radius),
    ));
    r.tables.push(("moments".into(), table));

    let mut oc = ConvolutionOracleConfig::new(cfg.alpha, CONVOLUTION_MODES);
    oc.q = cfg.intensity_with_modes(CONVOLUTION_MODES)?;
    oc.paths = p.pick(1000, 100);
    oc.seed = child_seed(cfg.seed, "convolution-oracle");
    let orc = convolution_oracle_study(&oc)?;
    let mut table = Table::new(&["h", "rel_error_median", "rel_error_mean", "bound", "fitted_order", "pass"]);
    let mut all_below = true;
    for row in &orc.rows {
        let bound = 5.0 * row.h / oc.horizon;
        let ok = row.rel_error <= bound;
        all_below &= ok;
        table.push(vec![
            row.h.into(),
            row.rel_error.into(),
            row.rel_error_mean.into(),
            bound.into(),
            orc.fitted_order.into(),
            ok.into(),
        ]);
    }
    r.checks.push(Check::new(
        "recursion vs integration by parts",
        orc.rows.iter().map(|row| row.rel_error / row.h).fold(0.0, f64::max),
        5.0 / oc.horizon,
        all_below,
        "largest median relative error divided by h",
    ));
    r.checks.push(Check::at_least(
        "recursion error order",
        orc.fitted_order,
        1.0,
        "log-log slope of the median relative error in h",
    ));
    r.tables.push(("oracle".into(), table));
    Ok(r)
}

// ---------------------------------------------------------------------------

/// Mode count of the mild-solution studies.
pub const PICARD_MODES: usize = 64;

/// Fitted trilinear constant and the resulting local time at radius `r`.
pub fn local_time(r: f64, trials: usize, seed: u64) -> Result<LocalTime> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_hat = fit_trilinear_constant((0.0, 0.0, SIGMA), PICARD_MODES, trials, &mut rng);
    LocalTime::new(r, c_hat, SIGMA)
}

/// Shift path of a noise convolution on `grid`, rescaled so that
/// `sup_t ‖Z_t‖₁ <= radius`.
fn bounded_shift(cfg: &SimConfig, q: &NoiseIntensity, grid: TimeGrid, seed: u64, index: u64, radius: f64) -> Result<Vec<SpectralField>> {
    let times = grid.times();
    let path = path_for_stream(cfg.alpha, seed, index, q.n_max(), &times)?;
    let z = convolve(&path, q);
    let sup = z.iter().map(|f| f.norm(1.0)).fold(0.0, f64::max);
    let scale = if sup > radius { radius / sup } else { 1.0 };
    Ok(z.into_iter().map(|f| f.scaled(scale)).collect())
}

fn verify_picard(cfg: &SimConfig) -> Result<SuiteReport> {
    let p = cfg.profile;
    let mut r = SuiteReport::new("verify-picard");
    let opts = PicardOptions {
        quadrature: cfg.quadrature,
        ..PicardOptions::default()
    };

    // Energy neutrality of the Galerkin nonlinearity.
    let fields = p.pick(1000, 50);
    let mut neutral = Table::new(&["n_modes", "fields", "max_relative_pairing"]);
    let mut worst_pairing: f64 = 0.0;
    for n in [8usize, 32, 64] {
        let g = galerkin(n);
        let mut rng = stream_rng(child_seed(cfg.seed, "neutrality"), n as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..fields {
            let u = random_probe_field(&mut rng, n).scaled(rng.random_range(0.1..100.0));
            worst = worst.max(g.burgers(&u).inner(&u, 0.0).abs() / u.norm(1.0).powi(3));
        }
        worst_pairing = worst_pairing.max(worst);
        neutral.push(vec![n.into(), fields.into(), worst.into()]);
    }
    r.checks.push(Check::new(
        "energy neutrality",
        worst_pairing,
        1e-12,
        worst_pairing < 1e-12,
        "max |⟨B(u,u),u⟩₀| / ‖u‖₁³",
    ));
    r.tables.push(("neutrality".into(), neutral));

    // Contraction of the Picard map at the local time.
    let radius = 0.5;
    let lt = local_time(radius, p.pick(10_000, 500), child_seed(cfg.seed, "trilinear"))?;
    let q64 = cfg.intensity_with_modes(PICARD_MODES)?;
    let pairs = p.pick(100, 10);
    let steps = 100;
    let grid = TimeGrid::new(lt.t, steps)?;
    let pair_seed = child_seed(cfg.seed, "contraction");
    let contraction: Vec<(f64, f64)> = (0..pairs as u64)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let mut rng = stream_rng(pair_seed, i);
            let norm = radius * rng.random_range(0.2..1.0);
            let phi = random_initial(&mut rng, PICARD_MODES, 1.0, norm);
            let z = bounded_shift(cfg, &q64, grid, pair_seed, i, radius)?;
            let w = random_ball_path(&mut rng, grid, PICARD_MODES, 2.0 * radius);
            let v = random_ball_path(&mut rng, grid, PICARD_MODES, 2.0 * radius);
            let factor = measure_contraction(&phi, &z, grid, &w, &v, opts.quadrature)?;
            let phi2 = phi.add(&random_initial(&mut rng, PICARD_MODES, 0.0, 0.1 * radius));
            let lip = lipschitz_in_data(&phi, &phi2, &z, grid, &opts)?;
            Ok((factor, lip))
        })
        .collect::<Result<_>>()?;
    let worst_factor = contraction.iter().map(|c| c.0).fold(0.0, f64::max);
    let worst_lip = contraction.iter().map(|c| c.1).fold(0.0, f64::max);
    let mut ct = Table::new(&["pair", "contraction_factor", "lipschitz_ratio"]);
    for (i, (f, l)) in contraction.iter().enumerate() {
        ct.push(vec![i.into(), (*f).into(), (*l).into()]);
    }
    r.checks.push(Check::at_most(
        "Picard contraction",
        worst_factor,
        0.55,
        format!("R = {radius}, T(R) = {:.4e}, fitted trilinear constant {:.4e}", lt.t, lt.c_hat),
    ));
    r.checks.push(Check::at_most(
        "Lipschitz in data",
        worst_lip,
        2.1,
        "max ‖w(φ₁) − w(φ₂)‖_{M_T} / ‖φ₁ − φ₂‖₀",
    ));
    r.tables.push(("contraction".into(), ct));

    // How the contraction factor grows when the horizon is stretched.
    let mut scan = Table::new(&["T", "max_contraction_factor"]);
    for mult in [1.0, 2.0, 4.0, 8.0, 16.0] {
        let t = lt.t * mult;
        let g = TimeGrid::new(t, (steps as f64 * mult) as usize)?;
        let worst = (0..pairs.min(20) as u64)
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let mut rng = stream_rng(pair_seed ^ 0x5CA9, i);
                let phi = random_initial(&mut rng, PICARD_MODES, 1.0, radius);
                let z = bounded_shift(cfg, &q64, g, pair_seed ^ 0x5CA9, i, radius)?;
                let w = random_ball_path(&mut rng, g, PICARD_MODES, 2.0 * radius);
                let v = random_ball_path(&mut rng, g, PICARD_MODES, 2.0 * radius);
                measure_contraction(&phi, &z, g, &w, &v, opts.quadrature)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        scan.push(vec![t.into(), worst.into()]);
    }
    r.tables.push(("horizon_scan".into(), scan));

    // Pointwise H¹ smoothing under synchronous coupling.
    let r_couple = 1.0;
    let lt1 = LocalTime::new(r_couple, lt.c_hat, SIGMA)?;
    let couple_modes = 32;
    let mut spde = SpdeConfig::new(cfg.alpha, cfg.intensity_with_modes(couple_modes)?, 1e-3, 1.0);
    spde.paths = p.pick(2000, 100);
    spde.seed = child_seed(cfg.seed, "coupling");
    spde.max_courant = cfg.max_courant;
    let ccfg = CouplingConfig {
        spde,
        r: r_couple,
        check_times: vec![0.1, lt1.t],
        constant: 2.1,
        required_fraction: 0.99,
    };
    let mut rng = stream_rng(child_seed(cfg.seed, "coupling-data"), 0);
    let phi1 = random_initial(&mut rng, couple_modes, 1.0, 0.5);
    let dir = random_initial(&mut rng, couple_modes, 0.0, 0.1);
    let rep = coupling_contraction(&phi1, &phi1.add(&dir), &ccfg)?;
    let mut cp = Table::new(&["t", "event_paths", "holds", "fraction", "worst_ratio"]);
    for row in &rep.rows {
        cp.push(vec![
            row.t.into(),
            row.event_paths.into(),
            row.holds.into(),
            row.fraction.into(),
            row.worst_ratio.into(),
        ]);
    }
    r.checks.push(Check::new(
        "coupled H1 smoothing",
        rep.rows.iter().map(|x| x.fraction).fold(1.0, f64::min),
        0.99,
        rep.pass,
        format!(
            "fraction of event paths with ‖u_t(φ₁) − u_t(φ₂)‖₁ <= 2.1 t^(-1/2) ‖φ₁ − φ₂‖₀; {} of {} paths in the event",
            rep.event_paths, rep.paths
        ),
    ));
    r.censored += rep.censored;
    r.trajectories += rep.paths;
    r.tables.push(("coupling".into(), cp));

    // Energy inequality with frozen constants.
    let es = energy_study(cfg, p, &opts)?;
    r.checks.push(Check::at_most(
        "energy inequality",
        es.worst,
        1.0,
        format!(
            "worst ‖w_t‖₀² / bound over validation paths; C1 = {:.4e}, C2 = {:.4e}; {} of {} energy paths censored",
            es.constants.c1, es.constants.c2, es.censored, es.trajectories
        ),
    ));
    r.checks.push(Check::at_most(
        "energy decay without shift",
        es.zero_shift,
        1.0 + 1e-9,
        "max ‖w_t‖₀² / (‖φ‖₀² e^{-t}) with Z = 0",
    ));
    r.censored += es.censored;
    r.trajectories += es.trajectories;
    r.checks.push(censor_check(r.censored, r.trajectories, cfg.censor_budget));
    r.tables.push(("energy".into(), es.table));
    Ok(r)
}

/// Mode count, step and horizon of the energy-inequality study.
pub const ENERGY_MODES: usize = 32;
const ENERGY_STEP: f64 = 1e-2;
const ENERGY_HORIZON: f64 = 4.0;

/// One energy trajectory, or `None` when the mild solution cannot be
/// continued at the grid step (the trajectory is then censored).
fn energy_trajectory(
    cfg: &SimConfig,
    q: &NoiseIntensity,
    seed: u64,
    i: u64,
    opts: &PicardOptions,
) -> Result<Option<(Vec<SpectralField>, Vec<SpectralField>)>> {
    let steps = (ENERGY_HORIZON / ENERGY_STEP).round() as usize;
    let grid = TimeGrid::new(ENERGY_HORIZON, steps)?;
    let mut rng = stream_rng(seed ^ 0xE4E7, i);
    let norm = (rng.random_range(0.5f64.ln()..10f64.ln())).exp();
    let phi = random_initial(&mut rng, ENERGY_MODES, 0.0, norm);
    let path = path_for_stream(cfg.alpha, seed, i, ENERGY_MODES, &grid.times())?;
    let z = convolve(&path, q);
    match solve_global(&phi, &z, grid, opts) {
        Ok(w) => Ok(Some((w, z))),
        Err(Error::HorizonTooLarge { .. } | Error::BlowUp { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs energy trajectories from index 0 upwards until `wanted` of them
/// complete. Returns the completed ones and the number censored.
fn completed_energy_paths(
    cfg: &SimConfig,
    q: &NoiseIntensity,
    seed: u64,
    wanted: usize,
    opts: &PicardOptions,
) -> Result<(Vec<(Vec<SpectralField>, Vec<SpectralField>)>, usize)> {
    let mut done = Vec::with_capacity(wanted);
    let mut censored = 0;
    let mut next = 0u64;
    while done.len() < wanted {
        let batch = (wanted - done.len()) as u64;
        let results: Vec<_> = (next..next + batch)
            .into_par_iter()
            .map(|i| energy_trajectory(cfg, q, seed, i, opts))
            .collect::<Result<_>>()?;
        next += batch;
        for r in results {
            match r {
                Some(x) => done.push(x),
                None => censored += 1,
            }
        }
        if censored > 10 * wanted {
            return Err(Error::InvalidParameter(
                "energy trajectories are censored almost surely at this step".into(),
            ));
        }
    }
    Ok((done, censored))
}

struct EnergyStudy {
    constants: EnergyConstants,
    table: Table,
    worst: f64,
    zero_shift: f64,
    censored: usize,
    trajectories: usize,
}

fn energy_study(cfg: &SimConfig, p: Profile, opts: &PicardOptions) -> Result<EnergyStudy> {
    let q = cfg.intensity_with_modes(ENERGY_MODES)?;
    let cal_seed = child_seed(cfg.seed, "energy-calibration");
    let val_seed = child_seed(cfg.seed, "energy-validation");
    let (cal, cal_censored) = completed_energy_paths(cfg, &q, cal_seed, p.pick(50, 5), opts)?;
    let samples: Vec<_> = cal
        .iter()
        .flat_map(|(w, z)| w.iter().zip(z).map(|(wi, zi)| energy_sample(wi, zi)))
        .collect();
    let constants = fit_energy_constants(&samples, 2.0)?;
    let (val, val_censored) = completed_energy_paths(cfg, &q, val_seed, p.pick(100, 10), opts)?;
    let ratios: Vec<f64> = val
        .par_iter()
        .map(|(w, z)| energy_ratio(w, z, ENERGY_STEP, constants))
        .collect();
    let mut table = Table::new(&["path", "worst_ratio"]);
    for (i, x) in ratios.iter().enumerate() {
        table.push(vec![i.into(), (*x).into()]);
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);

    // Z = 0: pure dissipation.
    let steps = (ENERGY_HORIZON / ENERGY_STEP).round() as usize;
    let grid = TimeGrid::new(ENERGY_HORIZON, steps)?;
    let zero = vec![SpectralField::zeros(ENERGY_MODES); steps + 1];
    let mut zero_shift: f64 = 0.0;
    let mut rng = stream_rng(child_seed(cfg.seed, "energy-zero"), 0);
    for _ in 0..p.pick(10, 2) {
        let norm = rng.random_range(0.5..10.0);
        let phi = random_initial(&mut rng, ENERGY_MODES, 0.0, norm);
        let w = solve_global(&phi, &zero, grid, opts)?;
        let e0 = phi.norm_sq(0.0);
        for (j, wj) in w.iter().enumerate() {
            zero_shift = zero_shift.max(wj.norm_sq(0.0) / (e0 * (-grid.time(j)).exp()));
        }
    }
    let censored = cal_censored + val_censored;
    Ok(EnergyStudy {
        constants,
        table,
        worst,
        zero_shift,
        censored,
        trajectories: cal.len() + val.len() + censored,
    })
}

// ---------------------------------------------------------------------------

/// Truncation radius, step and observable of the gradient battery.
pub const GRADIENT_RADIUS: f64 = 2.0;
pub const GRADIENT_STEP: f64 = 0.01;

/// Initial condition and direction of the gradient battery at `n` modes.
pub fn gradient_data(n: usize) -> (SpectralField, SpectralField) {
    let phi = SpectralField::from_trig(n, &[(1, 0.3, 0.2)]);
    let mut dir = SpectralField::zeros(n);
    dir.set_mode(1, 1.0, 0.0);
    (phi, dir)
}

fn gradient_config(cfg: &SimConfig, n: usize, t: f64, h: f64, paths: usize, seed: u64) -> Result<GradientConfig> {
    let mut spde = SpdeConfig::new(cfg.alpha, cfg.intensity_with_modes(n)?, h, t);
    spde.dynamics = Dynamics::Truncated { r: GRADIENT_RADIUS };
    spde.paths = paths;
    spde.seed = seed;
    spde.max_courant = None;
    let (phi, direction) = gradient_data(n);
    Ok(GradientConfig {
        spde,
        phi,
        direction,
        observable: Observable::Cos(1),
        eps: 1e-3,
        groups: 20,
    })
}

fn gradient_check(cfg: &SimConfig) -> Result<SuiteReport> {
    let p = cfg.profile;
    let mut r = SuiteReport::new("gradient-check");
    let paths = p.pick(100_000, 2_000);
    let mut table = Table::new(&["n_modes", "t", "direction", "bismut", "bismut_se", "fd", "fd_se", "pass"]);
    let mut worst_z: f64 = 0.0;
    for n in [2usize, 4] {
        for t in [0.25, 0.5, 1.0] {
            let seed = derive_seed(child_seed(cfg.seed, "gradient"), (n * 10) as u64 + (t * 4.0) as u64);
            let gc = gradient_config(cfg, n, t, GRADIENT_STEP, paths, seed)?;
            let est = bismut_gradient(&gc)?;
            let z = est.z_score();
            worst_z = worst_z.max(z);
            r.censored += est.censored;
            r.trajectories += est.paths;
            table.push(vec![
                n.into(),
                t.into(),
                "cos1".into(),
                est.bismut.into(),
                est.bismut_se.into(),
                est.fd.into(),
                est.fd_se.into(),
                (z <= 3.0).into(),
            ]);
        }
    }
    r.checks.push(Check::at_most(
        "Bismut vs finite difference",
        worst_z,
        3.0,
        "largest |median-of-means Bismut − central difference| in combined standard errors",
    ));
    r.tables.push(("battery".into(), table));

    // Step-size trend of the agreement.
    let mut trend = Table::new(&["h", "bismut", "bismut_se", "fd", "fd_se", "z_score"]);
    for h in [0.02, 0.01, 0.005] {
        let gc = gradient_config(cfg, 2, 0.5, h, p.pick(20_000, 1_000), child_seed(cfg.seed, "gradient-trend"))?;
        let est = bismut_gradient(&gc)?;
        trend.push(vec![
            h.into(),
            est.bismut.into(),
            est.bismut_se.into(),
            est.fd.into(),
            est.fd_se.into(),
            est.z_score().into(),
        ]);
    }
    r.tables.push(("step_trend".into(), trend));

    // Growth constant of the tangent flow across mode counts.
    let mut growth = Table::new(&["n_modes", "sigma", "theta", "paths", "median", "q90", "max", "linear_value"]);
    let mut q90 = Vec::new();
    for n in [2usize, 4, 8, 16] {
        let mut spde = SpdeConfig::new(cfg.alpha, cfg.intensity_with_modes(n)?, 1e-3, 1.0);
        spde.dynamics = Dynamics::Truncated { r: GRADIENT_RADIUS };
        spde.paths = p.pick(200, 20);
        spde.seed = child_seed(cfg.seed, "growth");
        spde.max_courant = None;
        let (phi, _) = gradient_data(n);
        let g = variational_growth_bound(&spde, &phi, 1.0, 1.75)?;
        q90.push(g.q90);
        growth.push(vec![
            n.into(),
            1.0.into(),
            1.75.into(),
            g.paths.into(),
            g.median.into(),
            g.q90.into(),
            g.max.into(),
            linear_growth_constant(1.0, 1.75).into(),
        ]);
    }
    let stab = q90[3] / q90[2];
    r.checks.push(Check::new(
        "tangent growth uniform in n",
        stab,
        1.25,
        (0.8..=1.25).contains(&stab),
        "ratio of the 90% path quantiles of the growth constant at 16 and 8 modes; accepted in [0.8, 1.25]",
    ));
    r.tables.push(("growth".into(), growth));
    Ok(r)
}

// ---------------------------------------------------------------------------

/// Shortest horizon of the mixing and invariant-measure studies; a longer
/// `t_end` in the configuration is honoured.
pub const ERGODICITY_HORIZON: f64 = 20.0;

fn ergodicity(cfg: &SimConfig) -> Result<SuiteReport> {
    let p = cfg.profile;
    let mut r = SuiteReport::new("ergodicity");
    let mut base = cfg.spde_config()?;
    base.t_end = base.t_end.max(ERGODICITY_HORIZON);

    // Lyapunov drift.
    let mut lspde = base.clone();
    lspde.t_end = 8.0;
    lspde.paths = p.pick(200, 20);
    lspde.seed = child_seed(cfg.seed, "lyapunov");
    let lcfg = LyapunovConfig::new(lspde);
    let lyap = lyapunov_drift(&lcfg)?;
    let mut lt = Table::new(&["phi_norm", "holdout", "t", "ev", "ev_se", "bound"]);
    for c in &lyap.curves {
        for ((t, e), se) in lyap.times.iter().zip(&c.ev).zip(&c.ev_se) {
            lt.push(vec![
                c.phi_norm.into(),
                c.holdout.into(),
                (*t).into(),
                (*e).into(),
                (*se).into(),
                lyap.bound(*t, 1.0 + c.phi_norm).into(),
            ]);
        }
    }
    r.checks.push(Check::new(
        "Lyapunov decay rate",
        lyap.rate,
        lyap.rate_ci,
        lyap.rate > 0.0 && lyap.rate - lyap.rate_ci > 0.0,
        format!("rate with 95% half-width; C_V = {:.4e}, K_V = {:.4e}", lyap.c_v, lyap.k_v),
    ));
    r.checks.push(Check::at_most(
        "Lyapunov held-out drift",
        lyap.holdout_violations as f64,
        0.0,
        format!(
            "held-out (φ, t) points with E V − 3se above the bound, of {}; worst ratio {:.4}",
            lyap.holdout_points, lyap.worst_holdout_ratio
        ),
    ));
    let mut lc = censor_check(lyap.censored, lyap.trajectories, lcfg.max_censored);
    lc.name = "Lyapunov censored fraction".into();
    r.checks.push(lc);
    r.censored += lyap.censored;
    r.trajectories += lyap.trajectories;
    r.tables.push(("lyapunov".into(), lt));

    // Mixing of observable laws from two initial conditions.
    let mut mspde = base.clone();
    mspde.seed = child_seed(cfg.seed, "mixing");
    mspde.paths = p.pick(mspde.paths, mspde.paths.min(200));
    let mut mcfg = MixingConfig::new(mspde);
    mcfg.observables = cfg.observables.clone();
    let mix = mixing_rate(&cfg.phi_field(), &cfg.phi2_field(), &mcfg)?;
    let mut header = vec!["t".to_string(), "distance".to_string()];
    header.extend(mix.labels.iter().map(|l| format!("ks_{l}")));
    let header_ref: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut mt = Table::new(&header_ref);
    for ((t, d), per) in mix.times.iter().zip(&mix.distances).zip(&mix.per_observable) {
        let mut row: Vec<Cell> = vec![(*t).into(), (*d).into()];
        row.extend(per.iter().map(|x| Cell::from(*x)));
        mt.push(row);
    }
    r.checks.push(Check::new(
        "mixing proxy rate",
        mix.gamma,
        mix.gamma_ci,
        mix.pass,
        format!(
            "decay rate of the max KS distance with 95% half-width, {} fitted points, critical value {:.4e}",
            mix.fit_points, mix.critical
        ),
    ));
    r.censored += mix.censored;
    r.trajectories += 2 * mix.paths_per_side;
    r.tables.push(("mixing".into(), mt));

    // Null calibration of the KS machinery.
    let mut nspde = SpdeConfig::new(cfg.alpha, cfg.intensity()?, 1e-2, 1.0);
    nspde.paths = p.pick(200, 100);
    nspde.seed = child_seed(cfg.seed, "null");
    nspde.dynamics = cfg.dynamics();
    nspde.max_courant = cfg.max_courant;
    let null = null_calibration(&cfg.phi_field(), Observable::Cos(1), &nspde, p.pick(500, 20), 0.01, 0.98)?;
    r.checks.push(Check::at_least(
        "KS null calibration",
        null.fraction_below,
        null.required_fraction,
        format!("{} of {} same-law repetitions above the 1% critical value", null.exceedances, null.reps),
    ));

    // Small-noise event.
    let mut sspde = SpdeConfig::new(cfg.alpha, cfg.intensity()?, base.h, 2.0);
    sspde.paths = p.pick(4000, 200);
    sspde.seed = child_seed(cfg.seed, "small-noise");
    let small = small_noise_frequency(&sspde, 2.0, sspde.paths, 0.05)?;
    let t0 = 2.0 * (1.0 / small.epsilon.powi(4)).ln();
    let mut st = Table::new(&["horizon", "percentile", "epsilon", "frequency", "frequency_se", "t0_at_unit_radius"]);
    st.push(vec![
        small.horizon.into(),
        small.percentile.into(),
        small.epsilon.into(),
        small.frequency.into(),
        small.frequency_se.into(),
        t0.into(),
    ]);
    r.checks.push(Check::new(
        "small-noise event positive",
        small.frequency,
        0.0,
        small.frequency > 0.0,
        "frequency of sup ‖Z‖₁ <= pilot 5% quantile on an independent ensemble",
    ));
    r.tables.push(("small_noise".into(), st));

    // Invariant measure.
    let mut ispde = base.clone();
    ispde.paths = p.pick(2000, 100);
    ispde.seed = child_seed(cfg.seed, "invariant");
    let icfg = InvariantConfig {
        spde: ispde,
        observable: Observable::Norm { gamma: 0.0, scale: 10.0 },
        long_horizon: p.pick(2000.0, 100.0),
        burn_in: 20.0,
        batches: 20,
        level: 0.01,
    };
    let inv = invariant_measure_profile(&cfg.phi_field(), &cfg.phi2_field(), &icfg)?;
    let mut it = Table::new(&[
        "time_average",
        "time_average_se",
        "ensemble_mean",
        "ensemble_se",
        "z_score",
        "q05",
        "q50",
        "q95",
        "ks",
        "ks_critical",
    ]);
    it.push(vec![
        inv.time_average.into(),
        inv.time_average_se.into(),
        inv.ensemble_mean.into(),
        inv.ensemble_se.into(),
        inv.z_score.into(),
        inv.long_run_quantiles[0].into(),
        inv.long_run_quantiles[1].into(),
        inv.long_run_quantiles[2].into(),
        inv.ks.into(),
        inv.ks_critical.into(),
    ]);
    r.checks.push(Check::at_most(
        "time vs ensemble average",
        inv.z_score,
        3.0,
        "|long-run time average − ensemble mean| in combined standard errors",
    ));
    r.checks.push(Check::at_most(
        "long-run laws agree",
        inv.ks,
        inv.ks_critical,
        "KS distance between ensembles from the two initial conditions",
    ));
    r.censored += inv.censored;
    r.tables.push(("invariant".into(), it));
    r.checks.push(censor_check(r.censored, r.trajectories, cfg.censor_budget));
    Ok(r)
}
