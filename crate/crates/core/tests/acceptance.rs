//! End-to-end acceptance run: the complete verification suite twice with the
//! same seed, then one PASS/FAIL line per criterion.
//!
//! Every threshold target is recomputed here from closed forms or from the
//! reference solutions in `common`, not read back from the library.
//!
//! `LEVY_BURGERS_ACCEPTANCE=quick` swaps in the reduced sample sizes for a
//! fast smoke run; the verdicts are only meaningful at the default (full).

mod common;

use std::process::ExitCode;
use std::time::Instant;

use levy_burgers::config::{Profile, SimConfig, SuiteKind};
use levy_burgers::nonlinearity::galerkin;
use levy_burgers::picard::{solve_global, PicardOptions, TimeGrid};
use levy_burgers::report::{Cell, SuiteReport, Table};
use levy_burgers::suites::run_suite;
use levy_burgers::SpectralField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{cole_hopf, stable_negative_moment};

const SUITES: [SuiteKind; 5] = [
    SuiteKind::VerifySubordinator,
    SuiteKind::VerifyConvolution,
    SuiteKind::VerifyPicard,
    SuiteKind::GradientCheck,
    SuiteKind::Ergodicity,
];

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn config(profile: Profile) -> SimConfig {
    SimConfig {
        alpha: 1.5,
        seed: 42,
        ensemble_size: 10_000,
        t_end: 20.0,
        profile,
        ..SimConfig::default()
    }
}

fn run_all(cfg: &SimConfig) -> Vec<(SuiteReport, f64)> {
    SUITES
        .iter()
        .map(|&k| {
            let start = Instant::now();
            let r = run_suite(k, cfg).unwrap_or_else(|e| panic!("{} failed to run: {e}", k.name()));
            let secs = start.elapsed().as_secs_f64();
            eprintln!("  {} finished in {secs:.1} s", k.name());
            (r, secs)
        })
        .collect()
}

fn report<'a>(runs: &'a [(SuiteReport, f64)], suite: &str) -> (&'a SuiteReport, f64) {
    let (r, t) = runs.iter().find(|(r, _)| r.suite == suite).expect("suite present");
    (r, *t)
}

fn table<'a>(r: &'a SuiteReport, name: &str) -> &'a Table {
    &r.tables.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("table {name}")).1
}

fn col(t: &Table, name: &str) -> usize {
    t.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("column {name}"))
}

fn num(c: &Cell) -> f64 {
    match c {
        Cell::Num(x) => *x,
        Cell::Int(i) => *i as f64,
        _ => f64::NAN,
    }
}

fn text(c: &Cell) -> String {
    match c {
        Cell::Text(s) => s.clone(),
        other => format!("{other:?}"),
    }
}

fn measured(r: &SuiteReport, check: &str) -> (f64, bool) {
    let c = r.check(check).unwrap_or_else(|| panic!("check {check}"));
    (c.measured, c.pass)
}

/// Least-squares slope of `y` on `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `u u'` evaluated by direct trigonometric sums on `m` points and
/// projected back by the trapezoid rule, which is exact for the degree of
/// the product when `m > 3n`.
fn direct_burgers(u: &SpectralField, m: usize) -> SpectralField {
    use std::f64::consts::PI;
    let n = u.n_max();
    let s = 1.0 / PI.sqrt();
    let mut out = SpectralField::zeros(n);
    let mut prod = vec![0.0; m];
    for (j, p) in prod.iter_mut().enumerate() {
        let x = 2.0 * PI * j as f64 / m as f64;
        let (mut val, mut der) = (0.0, 0.0);
        for k in 1..=n {
            let (a, b) = u.mode(k);
            let kf = k as f64;
            val += s * (a * (kf * x).cos() + b * (kf * x).sin());
            der += s * kf * (-a * (kf * x).sin() + b * (kf * x).cos());
        }
        *p = val * der;
    }
    for k in 1..=n {
        let kf = k as f64;
        let (mut a, mut b) = (0.0, 0.0);
        for (j, p) in prod.iter().enumerate() {
            let x = 2.0 * PI * j as f64 / m as f64;
            a += p * (kf * x).cos();
            b += p * (kf * x).sin();
        }
        let w = 2.0 * PI / m as f64 * s;
        out.set_mode(k, a * w, b * w);
    }
    out
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> SpectralField {
    let mut f = SpectralField::zeros(n);
    for k in 1..=n {
        f.set_mode(k, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    f
}

fn energy_neutrality(runs: &[(SuiteReport, f64)]) -> Outcome {
    let (r, secs) = report(runs, "verify-picard");
    let (worst, _) = measured(r, "energy neutrality");
    let t = table(r, "neutrality");
    let sizes: Vec<usize> = t.rows.iter().map(|row| num(&row[col(t, "n_modes")]) as usize).collect();
    let fields_ok = t.rows.iter().all(|row| num(&row[col(t, "fields")]) >= 1000.0);

    // The pairing only means something if the library computes u u'.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatch: f64 = 0.0;
    for &n in &[8usize, 32, 64] {
        let g = galerkin(n);
        for _ in 0..3 {
            let u = random_field(&mut rng, n);
            let lib = g.burgers(&u);
            let reference = direct_burgers(&u, 4 * n + 3);
            let scale = reference.norm(0.0).max(1e-300);
            let mut diff = lib.clone();
            diff.axpy(-1.0, &reference);
            mismatch = mismatch.max(diff.norm(0.0) / scale);
        }
    }
    Outcome {
        id: 1,
        name: "energy neutrality",
        pass: worst < 1e-12 && sizes == [8, 32, 64] && fields_ok && mismatch < 1e-10 && secs < 60.0,
        detail: format!(
            "max |<B(u,u),u>|/|u|_1^3 = {worst:.3e} (< 1e-12) at n in {sizes:?}; B vs direct sums rel {mismatch:.1e}"
        ),
    }
}

fn laplace(runs: &[(SuiteReport, f64)]) -> Outcome {
    let (r, secs) = report(runs, "verify-subordinator");
    let t = table(r, "tests");
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for row in &t.rows {
        if text(&row[col(t, "test")]) != "laplace" {
            continue;
        }
        let param = text(&row[col(t, "parameter")]);
        let mut it = param.split(' ').map(|kv| kv.split('=').nth(1).unwrap().parse::<f64>().unwrap());
        let (alpha, eta) = (it.next().unwrap(), it.next().unwrap());
        let target = (-eta.powf(alpha / 2.0)).exp();
        let z = (num(&row[col(t, "estimate")]) - target).abs() / num(&row[col(t, "stderr")]);
        worst = worst.max(z);
        count += 1;
    }
    Outcome {
        id: 2,
        name: "subordinator Laplace transform",
        pass: count == 12 && worst <= 3.0 && secs < 120.0,
        detail: format!("{count} (alpha, eta) pairs, worst |z| = {worst:.3} (<= 3)"),
    }
}

fn negative_moment(runs: &[(SuiteReport, f64)], alpha: f64) -> Outcome {
    let (r, secs) = report(runs, "verify-subordinator");
    let t = table(r, "tests");
    let (mut lt, mut lm) = (Vec::new(), Vec::new());
    let mut worst_z: f64 = 0.0;
    for row in &t.rows {
        if text(&row[col(t, "test")]) != "negative_moment" {
            continue;
        }
        let tv: f64 = text(&row[col(t, "parameter")]).trim_start_matches("t=").parse().unwrap();
        let est = num(&row[col(t, "estimate")]);
        let exact = tv.powf(-2.0 / alpha) * stable_negative_moment(alpha, 1.0);
        worst_z = worst_z.max((est - exact).abs() / num(&row[col(t, "stderr")]));
        lt.push(tv.ln());
        lm.push(est.ln());
    }
    let fitted = slope(&lt, &lm);
    let target = -2.0 / alpha;
    Outcome {
        id: 3,
        name: "negative-moment scaling",
        pass: lt.len() == 6 && (fitted - target).abs() <= 0.1 && worst_z <= 4.0 && secs < 120.0,
        detail: format!(
            "slope {fitted:.4} vs {target:.4} (+-0.1); worst |z| against the Mellin moment {worst_z:.2} (<= 4)"
        ),
    }
}

fn convolution_scaling(runs: &[(SuiteReport, f64)], alpha: f64) -> Outcome {
    let (r, secs) = report(runs, "verify-convolution");
    let t = table(r, "moments");
    let fitted = num(&t.rows[0][col(t, "fitted_slope")]);
    let target = 1.0 / alpha;
    Outcome {
        id: 4,
        name: "convolution moment scaling",
        pass: (fitted - target).abs() <= 0.15 && secs < 600.0,
        detail: format!("small-T slope {fitted:.4} vs 1/alpha = {target:.4} (+-0.15)"),
    }
}

fn convolution_oracle(runs: &[(SuiteReport, f64)]) -> Outcome {
    let (r, secs) = report(runs, "verify-convolution");
    let t = table(r, "oracle");
    let hs: Vec<f64> = t.rows.iter().map(|row| num(&row[col(t, "h")])).collect();
    let errs: Vec<f64> = t.rows.iter().map(|row| num(&row[col(t, "rel_error_median")])).collect();
    let h_ref = 1.0;
    let below = hs.iter().zip(&errs).all(|(h, e)| *e <= 5.0 * h / h_ref);
    let order = slope(
        &hs.iter().map(|h| h.ln()).collect::<Vec<_>>(),
        &errs.iter().map(|e| e.ln()).collect::<Vec<_>>(),
    );
    Outcome {
        id: 5,
        name: "convolution oracle",
        pass: hs == [1e-2, 5e-3, 2.5e-3] && below && order >= 1.0 && secs < 300.0,
        detail: format!(
            "median rel errors [{}] (<= 5h), order {order:.4} (>= 1)",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn contraction(runs: &[(SuiteReport, f64)]) -> (Outcome, Outcome) {
    let (r, secs) = report(runs, "verify-picard");
    let t = table(r, "contraction");
    let factors: Vec<f64> = t.rows.iter().map(|row| num(&row[col(t, "contraction_factor")])).collect();
    let lips: Vec<f64> = t.rows.iter().map(|row| num(&row[col(t, "lipschitz_ratio")])).collect();
    let worst = factors.iter().copied().fold(0.0, f64::max);
    let worst_lip = lips.iter().copied().fold(0.0, f64::max);
    let ct = table(r, "coupling");
    let fractions: Vec<f64> = ct.rows.iter().map(|row| num(&row[col(ct, "fraction")])).collect();
    let min_frac = fractions.iter().copied().fold(1.0, f64::min);
    (
        Outcome {
            id: 6,
            name: "Picard contraction",
            pass: factors.len() == 100 && worst <= 0.55 && secs < 300.0,
            detail: format!("max factor {worst:.4} (<= 0.55) over {} pairs", factors.len()),
        },
        Outcome {
            id: 7,
            name: "Lipschitz in data",
            pass: lips.len() == 100 && worst_lip <= 2.1 && min_frac >= 0.99 && secs < 600.0,
            detail: format!(
                "max M_T ratio {worst_lip:.4} (<= 2.1); pointwise H1 form holds on {min_frac:.4} of event paths (>= 0.99)"
            ),
        },
    )
}

fn cole_hopf_oracle() -> Outcome {
    let start = Instant::now();
    let n = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let zero = vec![SpectralField::zeros(n); grid.steps + 1];
    let mut worst: f64 = 0.0;
    for trial in 0..4 {
        let mut phi = SpectralField::zeros(n);
        for k in 1..=4 {
            phi.set_mode(k, rng.random_range(-1.0..1.0) / k as f64, rng.random_range(-1.0..1.0) / k as f64);
        }
        let target_norm = if trial == 0 { 1.0 } else { rng.random_range(0.2..1.0) };
        phi = phi.scaled(target_norm / phi.norm(0.0));
        let w = solve_global(&phi, &zero, grid, &PicardOptions::default()).expect("deterministic solve");
        for (j, wj) in w.iter().enumerate().step_by(50) {
            let exact = cole_hopf(&phi, grid.time(j), n);
            let mut d = wj.clone();
            d.axpy(-1.0, &exact);
            worst = worst.max(d.norm(0.0));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 8,
        name: "Cole-Hopf oracle",
        pass: worst < 1e-6 && secs < 60.0,
        detail: format!("sup_t |w - w_CH|_0 = {worst:.3e} (< 1e-6), 64 modes, |phi|_0 <= 1"),
    }
}

fn energy_inequality(runs: &[(SuiteReport, f64)]) -> Outcome {
    let (r, secs) = report(runs, "verify-picard");
    let t = table(r, "energy");
    let ratios: Vec<f64> = t.rows.iter().map(|row| num(&row[col(t, "worst_ratio")])).collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let (zero, _) = measured(r, "energy decay without shift");
    Outcome {
        id: 9,
        name: "energy inequality",
        pass: ratios.len() == 100 && worst <= 1.0 && zero <= 1.0 + 1e-9 && secs < 300.0,
        detail: format!("worst validation ratio {worst:.4} (<= 1) over {} paths; Z = 0 ratio {zero:.12}", ratios.len()),
    }
}

fn bismut(runs: &[(SuiteReport, f64)]) -> Outcome {
    let (r, secs) = report(runs, "gradient-check");
    let t = table(r, "battery");
    let mut worst: f64 = 0.0;
    for row in &t.rows {
        let b = num(&row[col(t, "bismut")]);
        let bs = num(&row[col(t, "bismut_se")]);
        let f = num(&row[col(t, "fd")]);
        let fs = num(&row[col(t, "fd_se")]);
        worst = worst.max((b - f).abs() / (bs * bs + fs * fs).sqrt());
    }
    Outcome {
        id: 10,
        name: "Bismut vs finite differences",
        pass: t.rows.len() == 6 && worst <= 3.0 && secs < 1200.0,
        detail: format!("worst combined z {worst:.3} (<= 3) over n in {{2,4}}, t in {{0.25,0.5,1}}"),
    }
}

fn lyapunov(runs: &[(SuiteReport, f64)]) -> Outcome {
    let (r, secs) = report(runs, "ergodicity");
    let rate = r.check("Lyapunov decay rate").unwrap();
    let (violations, _) = measured(r, "Lyapunov held-out drift");
    let (censored, censored_ok) = measured(r, "Lyapunov censored fraction");
    let t = table(r, "lyapunov");
    let mut held_out: Vec<f64> = t
        .rows
        .iter()
        .filter(|row| matches!(row[col(t, "holdout")], Cell::Bool(true)))
        .map(|row| num(&row[col(t, "phi_norm")]))
        .collect();
    held_out.dedup();
    let in_range = held_out.iter().all(|v| (1.0..=100.0).contains(v));
    Outcome {
        id: 11,
        name: "Lyapunov drift",
        pass: rate.measured > 0.0
            && rate.measured - rate.threshold > 0.0
            && violations == 0.0
            && held_out.len() == 20
            && in_range
            && censored_ok,
        detail: format!(
            "rate {:.4} +- {:.4}; {} held-out |phi|_0 in [1, 100], {violations} violations; censored {censored:.4}; {secs:.0} s for the suite",
            rate.measured,
            rate.threshold,
            held_out.len()
        ),
    }
}

fn mixing(runs: &[(SuiteReport, f64)]) -> Outcome {
    let (r, _) = report(runs, "ergodicity");
    let m = r.check("mixing proxy rate").unwrap();
    let (null, null_ok) = measured(r, "KS null calibration");
    let t = table(r, "mixing");
    let horizon = t.rows.iter().map(|row| num(&row[col(t, "t")])).fold(0.0, f64::max);
    Outcome {
        id: 12,
        name: "mixing proxy",
        pass: m.measured > 0.0 && m.measured - m.threshold > 0.0 && horizon >= 20.0 - 1e-9 && null_ok,
        detail: format!(
            "gamma {:.4} +- {:.4} up to t = {horizon}; null calibration {null:.3} below the 1% critical value (>= 0.98)",
            m.measured, m.threshold
        ),
    }
}

fn main() -> ExitCode {
    let profile = match std::env::var("LEVY_BURGERS_ACCEPTANCE").as_deref() {
        Ok("quick") => Profile::Quick,
        _ => Profile::Full,
    };
    let cfg = config(profile);
    eprintln!("acceptance run, {} profile", profile.name());
    let start = Instant::now();
    let first = run_all(&cfg);
    eprintln!("first pass: {:.0} s", start.elapsed().as_secs_f64());
    let second = run_all(&cfg);
    eprintln!("second pass done: {:.0} s total", start.elapsed().as_secs_f64());

    let (c6, c7) = contraction(&first);
    let identical: Vec<bool> = first
        .iter()
        .zip(&second)
        .map(|((a, _), (b, _))| a.digest() == b.digest() && a.rendered() == b.rendered())
        .collect();
    let outcomes = vec![
        energy_neutrality(&first),
        laplace(&first),
        negative_moment(&first, cfg.alpha),
        convolution_scaling(&first, cfg.alpha),
        convolution_oracle(&first),
        c6,
        c7,
        cole_hopf_oracle(),
        energy_inequality(&first),
        bismut(&first),
        lyapunov(&first),
        mixing(&first),
        Outcome {
            id: 13,
            name: "reproducibility",
            pass: identical.iter().all(|&b| b),
            detail: format!(
                "{} of {} suite reports byte-identical across two runs (seed {})",
                identical.iter().filter(|&&b| b).count(),
                identical.len(),
                cfg.seed
            ),
        },
    ];
    let mut failed = 0;
    for o in &outcomes {
        println!("{} criterion {:>2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
        failed += usize::from(!o.pass);
    }
    if profile == Profile::Quick {
        println!("note: quick profile; sample-size conditions are expected to fail");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
