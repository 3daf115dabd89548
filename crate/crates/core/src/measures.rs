//! Spectral measures through their Carathéodory functions: Schur evaluation, the
//! Alexandrov family, Jitomirskaya-Last bounds, the full-line function from resolvent
//! entries, window-mass bounds and finite-horizon boundedness of transfer orbits.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmv::{assemble_window, green_entry, Boundary, CmvKind};
use crate::cocycle::log_norm_trajectory;
use crate::error::{Error, Result};
use crate::mat2::C64;
use crate::model::{phase_grid, VerblunskyModel};

/// Default number of Schur steps; the neglected tail weighs about `|z|^depth`.
pub const DEFAULT_SCHUR_DEPTH: usize = 1 << 14;

/// Unimodular boundary parameters sampled when a supremum over the Alexandrov family is needed.
pub const DEFAULT_PHI_SAMPLES: usize = 16;

/// Smallest admissible Möbius denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Phases per axis used for the sup norm `||A^s||_0` over the torus.
pub const SUP_PHASES_PER_AXIS: usize = 32;

/// Sup-norm cap and tail-slope limits of the boundedness classifier.
pub const BOUNDED_CAP: f64 = 1e3;
pub const BOUNDED_SLOPE: f64 = 0.05;
pub const GROWING_SLOPE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaratheodoryEval {
    pub z: C64,
    /// Half-line Carathéodory function `F(z)`.
    pub f: C64,
    /// `(phi, F^phi(z))` pairs of the Alexandrov family, when requested.
    pub f_alexandrov: Vec<(C64, C64)>,
    /// Full-line function `1 + 2 z (G(z;0,0) + G(z;1,1))`.
    pub phi_full: Option<C64>,
    /// Anti-Carathéodory function of the left half-line.
    pub m_minus: Option<C64>,
    pub depth: usize,
    pub full_line: Option<FullLineChecks>,
}

/// Quantities of the full-line resolvent inequality chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullLineChecks {
    pub green_sum: C64,
    pub f_minus: C64,
    /// `|(1 - F_+ M_-) / (F_+ - M_-)|`.
    pub mobius_bound: f64,
    /// `sup_phi |F_+^phi(z)|` over the sampled boundary parameters.
    pub alexandrov_sup: f64,
    pub green_bound_holds: bool,
    pub majorization_holds: bool,
    pub window_size: usize,
}

/// `F(z) = (1 + z f(z)) / (1 - z f(z))`, with the Schur function `f` from the backward
/// Schur recursion `f_n = (a_n + z f_{n+1}) / (1 + conj(a_n) z f_{n+1})` and tail `f = 0`.
pub fn caratheodory_from_schur(coefs: &[C64], z: C64) -> C64 {
    let one = C64::new(1.0, 0.0);
    let mut f = C64::new(0.0, 0.0);
    for &a in coefs.iter().rev() {
        let w = z * f;
        f = (a + w) / (one + a.conj() * w);
    }
    (one + z * f) / (one - z * f)
}

/// Half-line Carathéodory function at phase `x` from `alpha_0 .. alpha_{depth-1}`.
pub fn schur_caratheodory(model: &VerblunskyModel, x: &[f64], z: C64, depth: usize) -> Result<CaratheodoryEval> {
    if !(z.norm() < 1.0) {
        return Err(Error::Domain(format!("Carathéodory functions are evaluated inside the disk, |z| = {}", z.norm())));
    }
    if depth == 0 {
        return Err(Error::Domain("Schur depth must be at least 1".into()));
    }
    let f = caratheodory_from_schur(&model.alpha_orbit(x, 0, depth), z);
    Ok(CaratheodoryEval { z, f, f_alexandrov: Vec::new(), phi_full: None, m_minus: None, depth, full_line: None })
}

/// `F^phi = ((1 - phi) + (1 + phi) F) / ((1 + phi) + (1 - phi) F)`.
pub fn alexandrov_transform(f: C64, phi: C64) -> Result<C64> {
    let one = C64::new(1.0, 0.0);
    let den = (one + phi) + (one - phi) * f;
    if den.norm() < DENOMINATOR_FLOOR {
        return Err(Error::DenominatorCollapse(den.norm()));
    }
    Ok(((one - phi) + (one + phi) * f) / den)
}

/// `count` equally spaced points of the unit circle starting at 1.
pub fn unit_phis(count: usize) -> Vec<C64> {
    (0..count).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / count as f64)).collect()
}

/// Alexandrov solutions `(varphi^phi_n, psi^phi_n)` at `z` for `n = 0 ..= alphas.len()`,
/// from initial vectors `(1, conj phi)` and `(1, -conj phi)`; step `n` uses `alphas[n - 1]`.
pub fn alexandrov_solutions(alphas: &[C64], z: C64, phi: C64) -> (Vec<C64>, Vec<C64>) {
    let mut u = [C64::new(1.0, 0.0), phi.conj()];
    let mut v = [C64::new(1.0, 0.0), -phi.conj()];
    let mut vp = vec![u[0]];
    let mut ps = vec![v[0]];
    for &a in alphas {
        let r = 1.0 / (1.0 - a.norm_sqr()).sqrt();
        u = [(z * u[0] - a.conj() * u[1]) * r, (u[1] - a * z * u[0]) * r];
        v = [(z * v[0] - a.conj() * v[1]) * r, (v[1] - a * z * v[0]) * r];
        vp.push(u[0]);
        ps.push(v[0]);
    }
    (vp, ps)
}

/// `||a||_l^2 = sum_{j <= [l]} |a_j|^2 + (l - [l]) |a_{[l]+1}|^2`.
pub fn fractional_norm(seq: &[C64], l: f64) -> f64 {
    let whole = l.floor() as usize;
    let frac = l - l.floor();
    let mut s: f64 = seq[..=whole.min(seq.len() - 1)].iter().map(|a| a.norm_sqr()).sum();
    if frac > 0.0 {
        if let Some(a) = seq.get(whole + 1) {
            s += frac * a.norm_sqr();
        }
    }
    s.sqrt()
}

/// Unique `l` with `(1 - r) ||varphi||_l ||psi||_l = sqrt 2`, by bisection.
pub fn solve_jl_length(varphi: &[C64], psi: &[C64], r: f64) -> Result<f64> {
    let target = SQRT_2 / (1.0 - r);
    let g = |l: f64| fractional_norm(varphi, l) * fractional_norm(psi, l) - target;
    let hi_max = (varphi.len().min(psi.len()) - 2) as f64;
    let (mut lo, mut hi) = (0.0, hi_max);
    if g(lo) > 0.0 || g(hi) < 0.0 {
        return Err(Error::Bracket(format!("norm product does not cross {target} on [0, {hi_max}]")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Transfer horizon `floor(sqrt 2 / eps) + 2`, covering every index used at `l(eps)`.
pub fn jl_horizon(epsilon: f64) -> usize {
    (SQRT_2 / epsilon).floor() as usize + 2
}

/// `sup_{x, 0 <= s <= horizon} ||A^s(x)||^2` over a phase grid.
pub fn sup_transfer_sq(model: &VerblunskyModel, zeta: f64, horizon: usize) -> Result<f64> {
    let z = C64::from_polar(1.0, zeta);
    let phases = if model.is_phase_independent() { vec![vec![0.0; model.dim()]] } else { phase_grid(model.dim(), SUP_PHASES_PER_AXIS) };
    let sups: Vec<f64> = phases
        .par_iter()
        .map(|x| Ok(log_norm_trajectory(&model.alpha_orbit(x, 1, horizon), z)?.into_iter().fold(0.0f64, f64::max)))
        .collect::<Result<_>>()?;
    Ok((2.0 * sups.into_iter().fold(0.0f64, f64::max)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JlBoundReport {
    pub zeta: f64,
    pub epsilon: f64,
    pub phi: C64,
    pub l_of_r: f64,
    pub phi_norm: f64,
    pub psi_norm: f64,
    /// `|F^phi((1 - eps) e^{i zeta})|`.
    pub f_abs: f64,
    /// Smallest `A` with `A^{-1} q <= |F^phi| <= A q`, `q = psi_norm / phi_norm`.
    pub a_needed: f64,
    /// `sup_{0 <= s <= sqrt 2 / eps + 2} ||A^s||_0^2`.
    pub sup_transfer: f64,
    /// Smallest `C` with `|F^phi| <= C sup_transfer`.
    pub c_needed: f64,
    pub universal_a: f64,
    /// `(1 - r) ||varphi||_l ||psi||_l - sqrt 2` at the returned `l`.
    pub length_residual: f64,
    pub holds: bool,
}

/// Evaluates both sides of the Jitomirskaya-Last bound at `r = 1 - eps` against the given `A`.
pub fn jl_bound_check(model: &VerblunskyModel, x: &[f64], zeta: f64, epsilon: f64, phi: C64, universal_a: f64) -> Result<JlBoundReport> {
    jl_bound_check_with_depth(model, x, zeta, epsilon, phi, universal_a, DEFAULT_SCHUR_DEPTH)
}

pub fn jl_bound_check_with_depth(
    model: &VerblunskyModel,
    x: &[f64],
    zeta: f64,
    epsilon: f64,
    phi: C64,
    universal_a: f64,
    depth: usize,
) -> Result<JlBoundReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let r = 1.0 - epsilon;
    let horizon = jl_horizon(epsilon);
    let alphas = model.alpha_orbit(x, 0, horizon + 2);
    let (vp, ps) = alexandrov_solutions(&alphas, C64::from_polar(1.0, zeta), phi);
    let l = solve_jl_length(&vp, &ps, r)?;
    let phi_norm = fractional_norm(&vp, l);
    let psi_norm = fractional_norm(&ps, l);
    let f = schur_caratheodory(model, x, C64::from_polar(r, zeta), depth)?.f;
    let f_abs = alexandrov_transform(f, phi)?.norm();
    let q = psi_norm / phi_norm;
    let a_needed = (f_abs / q).max(q / f_abs);
    let sup_transfer = sup_transfer_sq(model, zeta, horizon)?;
    Ok(JlBoundReport {
        zeta,
        epsilon,
        phi,
        l_of_r: l,
        phi_norm,
        psi_norm,
        f_abs,
        a_needed,
        sup_transfer,
        c_needed: f_abs / sup_transfer,
        universal_a,
        length_residual: (1.0 - r) * phi_norm * psi_norm - SQRT_2,
        holds: a_needed <= universal_a,
    })
}

/// Full-line function `Phi(z) = 1 + 2 z (G(z;0,0) + G(z;1,1))` from an extended window on
/// sites `-K .. K` (K even, `2K >= size`) decoupled by `beta = 1` at both ends, together with
/// the resolvent bound through `M_-` and its majorization by the Alexandrov family.
///
/// `F_-` uses the left half-line coefficients `-conj(alpha_{-k-2})`, `k >= 0`.
pub fn full_line_caratheodory(model: &VerblunskyModel, x: &[f64], z: C64, size: usize) -> Result<CaratheodoryEval> {
    full_line_with_depth(model, x, z, size, DEFAULT_SCHUR_DEPTH)
}

pub fn full_line_with_depth(model: &VerblunskyModel, x: &[f64], z: C64, size: usize, depth: usize) -> Result<CaratheodoryEval> {
    if !(z.norm() < 1.0) {
        return Err(Error::Domain(format!("Carathéodory functions are evaluated inside the disk, |z| = {}", z.norm())));
    }
    let half = size.div_ceil(4) * 2;
    let window = assemble_window(model, x, -(half as i64), 2 * half, CmvKind::Extended, Boundary::decoupled_one())?;
    let green_sum = green_entry(&window, z, 0, 0)? + green_entry(&window, z, 1, 1)?;
    let phi_full = C64::new(1.0, 0.0) + 2.0 * z * green_sum;

    let mut eval = schur_caratheodory(model, x, z, depth)?;
    let f_plus = eval.f;
    let left: Vec<C64> = (0..depth as i64).map(|k| -model.sample_alpha(x, -k - 2).conj()).collect();
    let f_minus = caratheodory_from_schur(&left, z);
    let m_minus = anti_caratheodory(f_minus, model.sample_alpha(x, 0));
    let mobius_bound = ((C64::new(1.0, 0.0) - f_plus * m_minus) / (f_plus - m_minus)).norm();
    let mut alexandrov_sup = 0.0f64;
    for phi in unit_phis(DEFAULT_PHI_SAMPLES) {
        if let Ok(v) = alexandrov_transform(f_plus, phi) {
            alexandrov_sup = alexandrov_sup.max(v.norm());
            eval.f_alexandrov.push((phi, v));
        }
    }
    // The sampled supremum undershoots the true one by the Möbius modulus of continuity.
    let slack = 1e-8 + alexandrov_sup * (PI / DEFAULT_PHI_SAMPLES as f64).powi(2);
    eval.phi_full = Some(phi_full);
    eval.m_minus = Some(m_minus);
    eval.full_line = Some(FullLineChecks {
        green_sum,
        f_minus,
        mobius_bound,
        alexandrov_sup,
        green_bound_holds: green_sum.norm() <= mobius_bound + 1e-8,
        majorization_holds: mobius_bound <= alexandrov_sup + slack,
        window_size: 2 * half,
    });
    Ok(eval)
}

/// `M_- = (Re(1 - conj a0) - i Im(1 + conj a0) F_-) / (i Im(1 - conj a0) - Re(1 + conj a0) F_-)`.
pub fn anti_caratheodory(f_minus: C64, alpha0: C64) -> C64 {
    let a = alpha0.conj();
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let num = C64::new((one - a).re, 0.0) - i * (one + a).im * f_minus;
    let den = i * (one - a).im - C64::new((one + a).re, 0.0) * f_minus;
    num / den
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowBoundReport {
    pub zeta: f64,
    pub epsilon: f64,
    /// Estimate of `mu_x(zeta - eps, zeta + eps)`.
    pub mu_mass: f64,
    /// Estimate of `Lambda_x(zeta - eps, zeta + eps)`; `Lambda` has total mass 2.
    pub lambda_mass: f64,
    pub sup_transfer: f64,
    /// Smallest `C` with `mass <= C eps sup_transfer`, per measure.
    pub c_mu: f64,
    pub c_lambda: f64,
}

/// Poisson smoothing radius used for window masses: `1 - eps / 16`.
fn smoothing(epsilon: f64) -> f64 {
    epsilon / 16.0
}

/// Window masses by integrating boundary values `Re F((1 - eps') e^{i theta}) / 2 pi` over the
/// window (and `Re(Phi + 1)` for the full line, the Carathéodory function of `Lambda`),
/// with `eps' = eps / 16`.
pub fn measure_window_bound(model: &VerblunskyModel, x: &[f64], zeta: f64, epsilon: f64) -> Result<WindowBoundReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let eps_s = smoothing(epsilon);
    let r = 1.0 - eps_s;
    let depth = ((40.0 / eps_s).ceil() as usize).max(1024);
    let size = ((20.0 / eps_s).ceil() as usize).max(64);
    let points = 256usize;
    let h = 2.0 * epsilon / points as f64;
    let coefs = model.alpha_orbit(x, 0, depth);
    let half = size.div_ceil(4) * 2;
    let window = assemble_window(model, x, -(half as i64), 2 * half, CmvKind::Extended, Boundary::decoupled_one())?;
    let vals: Vec<(f64, f64)> = (0..points)
        .into_par_iter()
        .map(|k| {
            let theta = zeta - epsilon + (k as f64 + 0.5) * h;
            let z = C64::from_polar(r, theta);
            let f = caratheodory_from_schur(&coefs, z);
            let g = green_entry(&window, z, 0, 0)? + green_entry(&window, z, 1, 1)?;
            let full = C64::new(2.0, 0.0) + 2.0 * z * g;
            Ok((f.re, full.re))
        })
        .collect::<Result<_>>()?;
    let mu_mass = vals.iter().map(|v| v.0).sum::<f64>() * h / (2.0 * PI);
    let lambda_mass = vals.iter().map(|v| v.1).sum::<f64>() * h / (2.0 * PI);
    let sup_transfer = sup_transfer_sq(model, zeta, jl_horizon(epsilon))?;
    let scale = epsilon * sup_transfer;
    Ok(WindowBoundReport { zeta, epsilon, mu_mass, lambda_mass, sup_transfer, c_mu: mu_mass / scale, c_lambda: lambda_mass / scale })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Universal constant of the two-sided Jitomirskaya-Last bound.
    pub a: f64,
    /// Universal constant of the window-mass bounds.
    pub c: f64,
    /// Safety factor applied to the measured maxima.
    pub margin: f64,
}

/// Calibrates `A` and `C` on the free model and the constant `lambda = 0.5` model over a
/// fixed grid of angles, windows and boundary parameters, then multiplies by `margin`.
pub fn calibrate_constants(margin: f64) -> Result<Calibration> {
    let omega = crate::model::Frequency::golden();
    let models = [VerblunskyModel::constant(0.0, omega.clone())?, VerblunskyModel::constant(0.5, omega)?];
    let mut a: f64 = 1.0;
    let mut c: f64 = 0.0;
    for m in &models {
        for k in 0..8 {
            let zeta = 2.0 * PI * (k as f64 + 0.5) / 8.0;
            for eps in [0.1, 0.03, 0.01] {
                for phi in unit_phis(4) {
                    a = a.max(jl_bound_check(m, &[0.0], zeta, eps, phi, f64::INFINITY)?.a_needed);
                }
                let w = measure_window_bound(m, &[0.0], zeta, eps)?;
                c = c.max(w.c_mu).max(w.c_lambda);
            }
        }
    }
    Ok(Calibration { a: a * margin, c: c * margin, margin })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrbitClass {
    Bounded,
    Growing,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitVerdict {
    pub zeta: f64,
    pub horizon: usize,
    /// `sup_{x, s <= horizon} ||A^s(x)||`.
    pub sup_norm: f64,
    /// Regression slope of `ln sup_{t <= s}` against `ln s` over the last decade of `s`.
    pub tail_slope: f64,
    pub verdict: OrbitClass,
}

/// Finite-horizon evidence for membership in the set of bounded transfer orbits.
///
/// Bounded when the sup stays below [`BOUNDED_CAP`] with tail slope at most
/// [`BOUNDED_SLOPE`]; growing when the slope is at least [`GROWING_SLOPE`].
pub fn subordinacy_classify(model: &VerblunskyModel, x: &[f64], zeta: f64, horizon: usize) -> Result<OrbitVerdict> {
    if horizon < 1000 {
        return Err(Error::Domain(format!("boundedness classification needs a horizon of at least 1000, got {horizon}")));
    }
    let z = C64::from_polar(1.0, zeta);
    let phases: Vec<Vec<f64>> = if model.is_phase_independent() {
        vec![x.to_vec()]
    } else {
        phase_grid(model.dim(), 8).into_iter().map(|p| p.iter().zip(x).map(|(a, b)| (a + b).rem_euclid(1.0)).collect()).collect()
    };
    let logs: Vec<Vec<f64>> = phases
        .par_iter()
        .map(|p| log_norm_trajectory(&model.alpha_orbit(p, 1, horizon), z))
        .collect::<Result<_>>()?;
    // Running sup over phases and times.
    let mut running = vec![0.0f64; horizon + 1];
    let mut best = 0.0f64;
    for s in 0..=horizon {
        for l in &logs {
            best = best.max(l[s]);
        }
        running[s] = best;
    }
    let samples: Vec<(f64, f64)> = (0..=20)
        .map(|k| {
            let s = ((horizon as f64) * 10f64.powf(-1.0 + k as f64 / 20.0)).round().max(1.0) as usize;
            ((s as f64).ln(), running[s.min(horizon)])
        })
        .collect();
    let n = samples.len() as f64;
    let mx = samples.iter().map(|p| p.0).sum::<f64>() / n;
    let my = samples.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = samples.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / samples.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let sup_norm = running[horizon].exp();
    let verdict = if sup_norm < BOUNDED_CAP && slope <= BOUNDED_SLOPE {
        OrbitClass::Bounded
    } else if slope >= GROWING_SLOPE {
        OrbitClass::Growing
    } else {
        OrbitClass::Inconclusive
    };
    Ok(OrbitVerdict { zeta, horizon, sup_norm, tail_slope: slope, verdict })
}
