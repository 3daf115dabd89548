//! Acceptance suite: one PASS/FAIL line per criterion, tolerances as pinned by the contract.
//! Runs without the test harness so that every line prints; exits nonzero on any failure.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use szego_core::cocycle::{lyapunov_exponent, rotation_number, spectrum_scan, UhVerdict};
use szego_core::dos::{dos_histogram, holder_modulus, rotation_dos_consistency, thouless_check, Estimator};
use szego_core::gordon::{gordon_defect, gordon_three_block, sc_region, DEFAULT_CF_DEPTH, THREE_BLOCK_BOUND};
use szego_core::kam::{
    kam_iterate, kam_step, nonresonant_trial, random_perturbation, random_unimodular, telescope, Branch, KamSchedule,
    StepParams, SuFunction,
};
use szego_core::measures::{alexandrov_solutions, calibrate_constants, jl_bound_check, measure_window_bound, subordinacy_classify, OrbitClass};
use szego_core::model::{beta_exponent, continued_fraction, from_partial_quotients, golden_mean, phase_grid, phase_samples};
use szego_core::{Frequency, Mat2, Result, VerblunskyModel, C64};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn golden() -> Frequency {
    Frequency::golden()
}

fn cosine(lambda: f64) -> VerblunskyModel {
    VerblunskyModel::cosine(lambda, golden(), 1.0).unwrap()
}

fn angles(n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
}

/// Long scans resolve gaps whose exponent is near 1e-2; a 1024-step prefix calls them non-UH.
const DETECTION_HORIZON: usize = 1 << 14;

/// `count` angles spread evenly over grid points confirmed non-UH together with their neighbours.
fn interior_sample(m: &VerblunskyModel, count: usize) -> Result<Vec<f64>> {
    let all = spectrum_scan(m, 512, DETECTION_HORIZON)?.confirmed_angles(3);
    Ok((0..count).map(|i| all[(i * all.len()) / count + all.len() / (2 * count)]).collect())
}

fn free_model() -> Result<Verdict> {
    let m = VerblunskyModel::constant(0.0, golden())?;
    let full = spectrum_scan(&m, 256, 1024)?.is_full_circle();
    let one = phase_samples(1, 1);
    let (mut le, mut off, mut rot) = (0.0f64, 0.0f64, 0.0f64);
    for zeta in angles(64) {
        le = le.max(lyapunov_exponent(&m, C64::from_polar(1.0, zeta), 1000, &one)?.gamma_renormalized.abs());
        off = off.max((lyapunov_exponent(&m, C64::from_polar(1.2, zeta), 1000, &one)?.gamma_szego - 1.2f64.ln()).abs());
        rot = rot.max((rotation_number(&m, zeta, 1000)?.rho - zeta / (4.0 * PI)).abs());
    }
    let dev = dos_histogram(&m, 256, 1, Estimator::Truncation)?.uniform_deviation();
    verdict(
        full && le <= 1e-6 && off <= 1e-6 && rot <= 1e-6 && dev <= 2.0 / 256.0,
        format!("full circle {full}, max LE {le:.1e}, off-circle error {off:.1e}, rotation error {rot:.1e}, CDF deviation {dev:.2e} (bound {:.2e})", 2.0 / 256.0),
    )
}

fn geronimus_arc() -> Result<Verdict> {
    let m = VerblunskyModel::constant(0.5, golden())?;
    let grid = 1000;
    let scan = spectrum_scan(&m, grid, 1024)?;
    let tol = (2.0 * PI / grid as f64).max(1e-3);
    let (s, e) = scan.arcs.first().map(|a| (a.start, a.end)).unwrap_or((f64::NAN, f64::NAN));
    let (ds, de) = ((s - PI / 3.0).abs(), (e - 5.0 * PI / 3.0).abs());
    let mut disagreements = 0;
    for (i, v) in scan.verdicts.iter().enumerate() {
        let zeta = 2.0 * PI * i as f64 / grid as f64;
        if (zeta - PI / 3.0).abs() < 1e-3 || (zeta - 5.0 * PI / 3.0).abs() < 1e-3 {
            continue;
        }
        let uh = (zeta / 2.0).cos().abs() > 0.75f64.sqrt();
        disagreements += usize::from((*v == UhVerdict::UniformlyHyperbolic) != uh);
    }
    verdict(
        scan.arcs.len() == 1 && ds <= tol && de <= tol && disagreements == 0,
        format!("{} arc(s), endpoint errors {ds:.2e} / {de:.2e} (tolerance {tol:.2e}), {disagreements} trace disagreements", scan.arcs.len()),
    )
}

fn thouless() -> Result<Verdict> {
    let m = cosine(0.3);
    let dos = dos_histogram(&m, 2000, 50, Estimator::Truncation)?;
    let phases = phase_samples(1, 50);
    let mut gap = 0.0f64;
    for zeta in [0.3, 1.4, 2.9, 4.4, 5.7] {
        let z = C64::from_polar(1.1, zeta);
        gap = gap.max(thouless_check(z, &dos, &lyapunov_exponent(&m, z, 10_000, &phases)?).gap);
    }
    verdict(gap <= 5e-3, format!("max |numeric - Thouless| = {gap:.2e} over 5 angles at |z| = 1.1 (bound 5e-3)"))
}

fn rotation_dos() -> Result<Verdict> {
    let m = cosine(0.3);
    let dos = dos_histogram(&m, 2000, 50, Estimator::Truncation)?;
    let curve = rotation_dos_consistency(&m, &dos, &angles(100), 20_000)?;
    verdict(curve.max_deviation <= 1e-2, format!("max |2 rho - k| = {:.2e} over 100 angles (bound 1e-2)", curve.max_deviation))
}

fn zero_exponent_and_growth() -> Result<Verdict> {
    let m = cosine(0.05);
    let scan = spectrum_scan(&m, 256, DETECTION_HORIZON)?;
    let phases = phase_samples(1, 16);
    let spectral = scan.confirmed_angles(0);
    let mut le = 0.0f64;
    for &zeta in &spectral {
        le = le.max(lyapunov_exponent(&m, C64::from_polar(1.0, zeta), 10_000, &phases)?.gamma_renormalized);
    }
    let sample = interior_sample(&m, 10)?;
    let eps = [1e-3, 1e-2, 1e-1];
    let mut ratio = [0.0f64; 3];
    let mut lbe_slack = f64::INFINITY;
    for &zeta in &sample {
        for (k, &e) in eps.iter().enumerate() {
            let r = lyapunov_exponent(&m, C64::from_polar(1.0 + e, zeta), 10_000, &phases)?;
            ratio[k] = ratio[k].max(r.gamma_renormalized / e.sqrt());
            lbe_slack = lbe_slack.min(r.gamma_szego - (1.0 + e).ln() + 1e-3);
        }
    }
    let c = ratio.iter().cloned().fold(0.0, f64::max);
    // One constant must serve every eps: the ratio may not grow as eps shrinks.
    let bounded = ratio[0] <= 2.0 * ratio[2] && c <= 1.0;
    verdict(
        le <= 5e-3 && bounded && lbe_slack >= 0.0,
        format!(
            "max LE on {} confirmed spectral angles {le:.2e} (bound 5e-3); gamma / sqrt(eps) at eps = 1e-3, 1e-2, 1e-1: {:.3}, {:.3}, {:.3}; lower-bound slack {lbe_slack:.2e}",
            spectral.len(),
            ratio[0],
            ratio[1],
            ratio[2]
        ),
    )
}

fn holder() -> Result<Verdict> {
    let m = cosine(0.05);
    let dos = dos_histogram(&m, 4000, 50, Estimator::Truncation)?;
    let zetas = interior_sample(&m, 10)?;
    let eps: Vec<f64> = (0..5).map(|i| 1e-2 * 10f64.powf(i as f64 / 4.0)).collect();
    let table = holder_modulus(&dos, &zetas, &eps);
    let slopes: Vec<f64> = table.slopes.iter().flat_map(|s| s.local_slopes.iter().cloned()).collect();
    let (lo, hi) = slopes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let complete = slopes.len() == zetas.len() * (eps.len() - 1);
    verdict(
        complete && lo >= 0.45 && hi <= 1.55,
        format!("{} local slopes in [{lo:.3}, {hi:.3}] (allowed [0.45, 1.55])", slopes.len()),
    )
}

/// Random su(1,1) perturbation on the frequency's torus with `||f||_r = eps`.
fn random_perturbation_on(rng: &mut ChaCha8Rng, omega: &Frequency, eps: f64) -> SuFunction {
    nonresonant_trial(rng, omega, eps, 0.5, 0.25).1
}

fn kam_contract() -> Result<Verdict> {
    let omega = golden();
    let (r, rp, eps) = (0.5, 0.25, 1e-6);
    let s = Mat2::diag(C64::from_polar(1.0, 0.7), C64::from_polar(1.0, -0.7));
    let id = kam_step(&s, &SuFunction::zero(1, r), &omega, r, rp, &StepParams::default())?;
    let identity_exact = id.s_plus == s && id.f_plus.is_zero() && id.b.factors.is_empty();

    let mut rng = ChaCha8Rng::seed_from_u64(20_260_101);
    let (mut res, mut fp, mut bid, mut failures) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for _ in 0..200 {
        let (s0, f0) = nonresonant_trial(&mut rng, &omega, eps, r, rp);
        let out = kam_step(&s0, &f0, &omega, r, rp, &StepParams::default())?;
        res = res.max(out.checks.residual);
        fp = fp.max(out.checks.f_plus_norm);
        bid = bid.max(out.checks.b_minus_id);
        let ok = out.branch == Branch::NonResonant && out.checks.residual <= 1e-12 && out.checks.f_plus_norm <= eps.powf(1.9) && out.checks.b_minus_id <= eps.sqrt();
        failures += usize::from(!ok);
    }

    // Exact resonances 2 rho = <n, omega> on one and two frequencies, random SU(1,1) frames.
    let two = Frequency::new(vec![golden_mean(), 2f64.sqrt() - 1.0])?;
    let cases: Vec<(Frequency, Vec<i64>)> =
        vec![(omega.clone(), vec![1]), (two.clone(), vec![1, -1]), (two.clone(), vec![-1, 2]), (two.clone(), vec![0, 1])];
    let (mut t_max, mut v_ratio, mut res_failures) = (0.0f64, 0.0f64, 0usize);
    let mut res_trials = 0;
    for (freq, n) in &cases {
        for _ in 0..10 {
            let theta = PI * freq.dot(n);
            let b = C64::from_polar(rng.random_range(0.0..0.4), rng.random_range(0.0..2.0 * PI));
            let a = C64::from_polar((1.0 + b.norm_sqr()).sqrt(), rng.random_range(0.0..2.0 * PI));
            let p = Mat2::new(a, b, b.conj(), a.conj());
            let s0 = p * Mat2::diag(C64::from_polar(1.0, theta), C64::from_polar(1.0, -theta)) * p.adjugate();
            let f0 = random_perturbation_on(&mut rng, freq, eps);
            let params = StepParams { grid: if freq.dim() == 1 { 512 } else { 32 }, ..StepParams::default() };
            let out = kam_step(&s0, &f0, freq, r, rp, &params)?;
            res_trials += 1;
            let deg = out.b.degree(freq.dim());
            let neg: Vec<i64> = n.iter().map(|v| -v).collect();
            let label_ok = matches!(&out.branch, Branch::Resonant { n_star } if *n_star == deg && (deg == *n || deg == neg));
            t_max = t_max.max(out.checks.t_plus / eps.powf(1.0 / 16.0));
            v_ratio = v_ratio.max(out.checks.v_plus / eps.powf(15.0 / 16.0));
            let ok = label_ok && out.checks.t_plus <= eps.powf(1.0 / 16.0) && out.checks.v_plus <= eps.powf(15.0 / 16.0);
            res_failures += usize::from(!ok);
        }
    }

    // Budgets on the lambda = 1e-4 smoke model; the calibrated gate refuses it, so it runs ungated.
    let smoke = VerblunskyModel::cosine(1e-4, golden(), 1.0)?;
    let mut budget_violations = 0;
    let mut gate_ratio = 0.0f64;
    let mut steps = 0;
    for zeta in [0.5, 1.0, 2.0, 3.0, 4.0, 5.5] {
        let rr = 0.02;
        let norm = szego_core::kam::model_split(&smoke, zeta, rr)?.1.weighted_norm(rr);
        let schedule = KamSchedule::new(norm * (1.0 + 1e-9), rr)?;
        let run = kam_iterate(&smoke, zeta, &schedule, 3, &StepParams { ungated: true, ..StepParams::default() })?;
        gate_ratio = gate_ratio.max(run.initial_norm / run.gate_bound);
        for st in &run.states {
            steps += 1;
            let c = &st.checks;
            let ok = c.norm_budget_holds && c.degree_budget_holds && c.b_times_c_holds != Some(false) && c.residual <= 1e-9 * c.b_sup * c.b_sup;
            budget_violations += usize::from(!ok);
        }
    }
    verdict(
        identity_exact && failures == 0 && res_failures == 0 && budget_violations == 0,
        format!(
            "identity exact {identity_exact}; non-resonant failures {failures}/200 (max residual {res:.1e}, f+ {fp:.1e} vs {:.1e}, B - id {bid:.1e}); \
             resonant failures {res_failures}/{res_trials} (max t+ / eps^(1/16) {t_max:.2e}, v+ / eps^(15/16) {v_ratio:.2e}); \
             smoke budgets {budget_violations} violations over {steps} steps (run ungated: norm is {gate_ratio:.0}x the gate)",
            eps.powf(1.9)
        ),
    )
}

fn telescoping() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut residual, mut violations) = (0.0f64, 0);
    for _ in 0..100 {
        let ms: Vec<Mat2> = (0..50).map(|_| random_unimodular(&mut rng)).collect();
        // Scale the perturbations so that the bound's exponent is of order one.
        let mut partial = Mat2::identity();
        let mut weight = 0.0;
        for m in &ms {
            partial = *m * partial;
            weight += partial.norm().powi(2);
        }
        let size = rng.random_range(0.1..2.0) / weight;
        let xis: Vec<Mat2> = (0..50).map(|_| random_perturbation(&mut rng, size)).collect();
        let rep = telescope(&ms, &xis)?;
        residual = residual.max(rep.identity_residual);
        violations += usize::from(rep.xi_norm > rep.bound_inclusive || rep.identity_residual > 1e-12);
    }
    verdict(violations == 0, format!("100 products of length 50: max identity residual {residual:.1e}, {violations} violations of the stated bound"))
}

fn jitomirskaya_last() -> Result<Verdict> {
    let models = [VerblunskyModel::constant(0.0, golden())?, VerblunskyModel::constant(0.5, golden())?, cosine(0.05)];
    let mut identity_err = 0.0f64;
    for m in &models {
        for zeta in interior_sample(m, 4)? {
            let alphas = m.alpha_orbit(&[0.1], 1, 1000);
            for t in [0.0, 1.0, 2.5] {
                let (vp, ps) = alexandrov_solutions(&alphas, C64::from_polar(1.0, zeta), C64::from_polar(1.0, t));
                for (a, b) in vp.iter().zip(&ps) {
                    identity_err = identity_err.max((a * b.conj() + b * a.conj() - 2.0).norm());
                }
            }
        }
    }
    let cal = calibrate_constants(2.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut violations, mut worst_a, mut worst_c) = (0, 0.0f64, 0.0f64);
    for m in &models {
        let pool = interior_sample(m, 32)?;
        for _ in 0..20 {
            let zeta = pool[rng.random_range(0..pool.len())];
            let eps = 10f64.powf(rng.random_range(-2.0..-1.0));
            let phi = C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
            let jl = jl_bound_check(m, &[0.0], zeta, eps, phi, cal.a)?;
            let w = measure_window_bound(m, &[0.0], zeta, eps)?;
            worst_a = worst_a.max(jl.a_needed);
            worst_c = worst_c.max(jl.c_needed).max(w.c_mu).max(w.c_lambda);
            violations += usize::from(!(jl.holds && jl.c_needed <= cal.c && w.c_mu <= cal.c && w.c_lambda <= cal.c));
        }
    }
    verdict(
        identity_err <= 1e-8 && violations == 0,
        format!(
            "identity error {identity_err:.1e} (bound 1e-8); calibrated A = {:.3}, C = {:.3}; worst needed A = {worst_a:.3}, C = {worst_c:.3}; {violations} violations over 60 draws",
            cal.a, cal.c
        ),
    )
}

fn gordon() -> Result<Verdict> {
    let beta = beta_exponent(golden_mean(), DEFAULT_CF_DEPTH)?;
    let q_golden = *continued_fraction(golden_mean(), 20)?.denominators().last().unwrap();
    let mut flat = 0.0f64;
    for m in [VerblunskyModel::constant(0.0, golden())?, VerblunskyModel::constant(0.5, golden())?] {
        for zeta in [0.4, 1.7, 3.1] {
            let (a, b) = gordon_defect(&m, zeta, q_golden, &phase_grid(1, 4))?;
            flat = flat.max(a).max(b);
        }
    }
    let liouville = Frequency::new(vec![from_partial_quotients(&[1, 1, 1, 1, 1, 1_000_000_000_000])])?;
    let (mut applicable, mut violations, mut worst) = (0, 0, f64::INFINITY);
    for (m, q) in [(VerblunskyModel::cosine(0.9, liouville.clone(), 1.0)?, 8u64), (VerblunskyModel::cosine(0.5, liouville, 1.0)?, 8), (cosine(0.3), q_golden)] {
        for zeta in angles(64) {
            for x in [0.0, 0.37, 0.71] {
                let tb = gordon_three_block(&m, &[x], zeta, q)?;
                if tb.defect_forward <= 1e-6 && tb.defect_backward <= 1e-6 {
                    applicable += 1;
                    worst = worst.min(tb.max);
                    violations += usize::from(tb.max < THREE_BLOCK_BOUND - 1e-9);
                }
            }
        }
    }
    let empty_free = sc_region(&VerblunskyModel::constant(0.0, golden())?, 64, DEFAULT_CF_DEPTH)?.arcs.is_empty();
    let empty_golden = sc_region(&cosine(0.9), 64, DEFAULT_CF_DEPTH)?.arcs.is_empty();
    verdict(
        beta <= 0.01 && flat <= 1e-12 && applicable > 0 && violations == 0 && empty_free && empty_golden,
        format!(
            "golden beta {beta:.2e}; phase-independent defect {flat:.1e}; three-block: {applicable} applicable points, min max-norm {worst:.4}, {violations} violations; region empty for free {empty_free}, golden {empty_golden}"
        ),
    )
}

fn boundedness() -> Result<Verdict> {
    let m = cosine(0.05);
    let mut counts = [0usize; 3];
    for zeta in interior_sample(&m, 50)? {
        let v = subordinacy_classify(&m, &[0.0], zeta, 10_000)?;
        counts[match v.verdict {
            OrbitClass::Bounded => 0,
            OrbitClass::Inconclusive => 1,
            OrbitClass::Growing => 2,
        }] += 1;
    }
    verdict(counts[2] == 0, format!("50 interior angles: {} bounded, {} inconclusive, {} growing", counts[0], counts[1], counts[2]))
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Result<Verdict>);
    let criteria: [Criterion; 11] = [
        (1, "free-model exactness", free_model),
        (2, "constant-model arc", geronimus_arc),
        (3, "Thouless formula", thouless),
        (4, "rotation number versus DOS", rotation_dos),
        (5, "zero exponent on the spectrum and growth", zero_exponent_and_growth),
        (6, "Holder sandwich", holder),
        (7, "KAM step contract", kam_contract),
        (8, "telescoping bound", telescoping),
        (9, "Jitomirskaya-Last suite", jitomirskaya_last),
        (10, "Gordon suite", gordon),
        (11, "boundedness on the spectrum", boundedness),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("criterion {id:>2} {} {name}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
