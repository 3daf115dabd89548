//! Szegő cocycle kernel: one-step maps, transfer products, Lyapunov exponents,
//! fibered rotation numbers and uniform-hyperbolicity detection.
//!
//! Conventions: `A(x) = S(alpha(x), z)`, `A^n(x) = S(alpha_n) ... S(alpha_1)`
//! with `alpha_n = alpha(x + (n - 1) omega)`, and `z^(1/2) = sqrt|z| e^(i zeta / 2)`
//! with `zeta = arg z` taken in `[0, 2 pi)`. Rotation numbers are therefore
//! canonical only modulo 1/2 across branch conventions.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat2::{Mat2, C64};
use crate::model::{phase_grid, VerblunskyModel, DEFAULT_PHASES_PER_AXIS};

/// Products are rescaled to unit norm after this many factors.
pub const RENORM_EVERY: usize = 32;

/// Default ceiling of the horizon escalation in [`uh_test_escalating`].
pub const UH_HORIZON_CAP: usize = 1 << 14;

/// Entry size beyond which products switch to the scaled representation.
/// Far below 1e280, so squared norms of the unscaled matrix stay finite.
pub const OVERFLOW_GUARD: f64 = 1e100;

/// `sqrt|z| e^(i zeta / 2)`, `zeta = arg z in [0, 2 pi)`.
pub fn sqrt_branch(z: C64) -> C64 {
    let zeta = z.arg().rem_euclid(2.0 * PI);
    C64::from_polar(z.norm().sqrt(), zeta / 2.0)
}

/// One Szegő step. Plain: `rho^{-1} [[z, -conj a], [-a z, 1]]` with determinant `z`.
/// Renormalized: the plain step divided by `z^(1/2)`, determinant 1.
pub fn szego_step(alpha: C64, z: C64, renormalized: bool) -> Result<Mat2> {
    let a2 = alpha.norm_sqr();
    if !(a2 < 1.0) {
        return Err(Error::Domain(format!("Szegő step needs |alpha| < 1, got {}", a2.sqrt())));
    }
    if z == C64::new(0.0, 0.0) {
        return Err(Error::Domain("Szegő step needs z != 0".into()));
    }
    let scale = if renormalized { (sqrt_branch(z) * (1.0 - a2).sqrt()).inv() } else { C64::new(1.0 / (1.0 - a2).sqrt(), 0.0) };
    Ok(Mat2::new(z * scale, -alpha.conj() * scale, -alpha * z * scale, scale))
}

/// Renormalized step without validation, for inner loops over checked coefficients.
#[inline]
fn step_unchecked(alpha: C64, z: C64, inv_sqrt_z: C64) -> Mat2 {
    let s = inv_sqrt_z / (1.0 - alpha.norm_sqr()).sqrt();
    Mat2::new(z * s, -alpha.conj() * s, -alpha * z * s, s)
}

/// Inverse of the renormalized step: its adjugate, since the determinant is 1.
#[inline]
fn step_inverse_unchecked(alpha: C64, z: C64, inv_sqrt_z: C64) -> Mat2 {
    step_unchecked(alpha, z, inv_sqrt_z).adjugate()
}

/// `exp(log_scale) * matrix`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub matrix: Mat2,
    pub log_scale: f64,
}

impl Transfer {
    pub fn identity() -> Self {
        Self { matrix: Mat2::identity(), log_scale: 0.0 }
    }

    pub fn log_norm(&self) -> f64 {
        self.log_scale + self.matrix.norm().ln()
    }

    /// The plain matrix, when it is representable.
    pub fn to_mat2(&self) -> Option<Mat2> {
        if self.log_scale == 0.0 {
            return Some(self.matrix);
        }
        let f = self.log_scale.exp();
        f.is_finite().then(|| self.matrix.scale_re(f))
    }

    /// Left-multiplies by `step` and keeps the representation finite and unimodular.
    ///
    /// The determinant is only corrected when its drift exceeds both `1e-10` and the
    /// rounding floor `eps * |M|_F^2` of evaluating it; below that floor the computed
    /// determinant carries no information.
    #[inline]
    fn push(&mut self, step: &Mat2, count: usize) {
        self.matrix = *step * self.matrix;
        if self.matrix.max_abs() > OVERFLOW_GUARD {
            let n = self.matrix.norm();
            self.matrix = self.matrix.scale_re(1.0 / n);
            self.log_scale += n.ln();
        } else if self.log_scale == 0.0 && count % RENORM_EVERY == 0 {
            let d = self.matrix.det();
            let drift = (d - 1.0).norm();
            if drift > 1e-10 && drift > 64.0 * f64::EPSILON * self.matrix.frobenius_sq() {
                self.matrix = self.matrix.scale(d.sqrt().inv());
            }
        }
    }
}

/// `S(a_{k-1}) ... S(a_0)` for the given coefficient list.
pub fn transfer_from_alphas(alphas: &[C64], z: C64) -> Result<Transfer> {
    check_alphas(alphas, z)?;
    let inv_sqrt_z = sqrt_branch(z).inv();
    let mut t = Transfer::identity();
    for (i, &a) in alphas.iter().enumerate() {
        t.push(&step_unchecked(a, z, inv_sqrt_z), i + 1);
    }
    Ok(t)
}

fn check_alphas(alphas: &[C64], z: C64) -> Result<()> {
    if z == C64::new(0.0, 0.0) {
        return Err(Error::Domain("transfer products need z != 0".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(a.norm_sqr() < 1.0)) {
        return Err(Error::Domain(format!("coefficient {a} is not inside the unit disk")));
    }
    Ok(())
}

/// `A^n(x)` for any integer `n`; negative `n` gives `A^n(x - n omega)^{-1}`
/// `= S(alpha_{n+1})^{-1} ... S(alpha_0)^{-1}`.
pub fn transfer_product(model: &VerblunskyModel, x: &[f64], z: C64, n: i64) -> Result<Transfer> {
    if n >= 0 {
        return transfer_from_alphas(&model.alpha_orbit(x, 1, n as usize), z);
    }
    let len = (-n) as usize;
    // alpha_0, alpha_{-1}, ..., alpha_{n+1}: applied right to left starting from alpha_0.
    let mut alphas = model.alpha_orbit(x, n + 1, len);
    alphas.reverse();
    check_alphas(&alphas, z)?;
    let inv_sqrt_z = sqrt_branch(z).inv();
    let mut t = Transfer::identity();
    for (i, &a) in alphas.iter().enumerate() {
        t.push(&step_inverse_unchecked(a, z, inv_sqrt_z), i + 1);
    }
    Ok(t)
}

/// `ln ||S(a_{k-1}) ... S(a_0)||` with rescaling every [`RENORM_EVERY`] factors.
pub fn log_norm_of_product(alphas: &[C64], z: C64, inv_sqrt_z: C64) -> f64 {
    let mut m = Mat2::identity();
    let mut acc = 0.0;
    for (i, &a) in alphas.iter().enumerate() {
        m = step_unchecked(a, z, inv_sqrt_z) * m;
        if (i + 1) % RENORM_EVERY == 0 {
            let n = m.norm();
            acc += n.ln();
            m = m.scale_re(1.0 / n);
        }
    }
    acc + m.norm().ln()
}

/// `ln ||A^s||` for `s = 0 ..= alphas.len()`, where `A^s = S(a_{s-1}) ... S(a_0)`.
pub fn log_norm_trajectory(alphas: &[C64], z: C64) -> Result<Vec<f64>> {
    check_alphas(alphas, z)?;
    let inv_sqrt_z = sqrt_branch(z).inv();
    let mut out = Vec::with_capacity(alphas.len() + 1);
    out.push(0.0);
    let mut t = Transfer::identity();
    for (i, &a) in alphas.iter().enumerate() {
        t.push(&step_unchecked(a, z, inv_sqrt_z), i + 1);
        out.push(t.log_norm());
    }
    Ok(out)
}

/// Coefficient orbits `alpha_1 .. alpha_len` for a list of phases, cached when small enough.
pub struct Orbits<'a> {
    model: &'a VerblunskyModel,
    pub phases: Vec<Vec<f64>>,
    pub len: usize,
    cache: Option<Vec<Vec<C64>>>,
}

/// Cached orbit entries above this count are recomputed on demand instead.
const ORBIT_CACHE_LIMIT: usize = 1 << 23;

impl<'a> Orbits<'a> {
    /// Phase-independent models collapse to the first phase.
    pub fn new(model: &'a VerblunskyModel, phases: &[Vec<f64>], len: usize) -> Self {
        let phases: Vec<Vec<f64>> =
            if model.is_phase_independent() { phases.iter().take(1).cloned().collect() } else { phases.to_vec() };
        let cache = (phases.len() * len <= ORBIT_CACHE_LIMIT)
            .then(|| phases.par_iter().map(|x| model.alpha_orbit(x, 1, len)).collect());
        Self { model, phases, len, cache }
    }

    pub fn with<R>(&self, i: usize, f: impl FnOnce(&[C64]) -> R) -> R {
        match &self.cache {
            Some(c) => f(&c[i]),
            None => f(&self.model.alpha_orbit(&self.phases[i], 1, self.len)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    /// Exponent of the renormalized (determinant one) cocycle.
    pub gamma_renormalized: f64,
    /// Exponent of the plain Szegő cocycle: `gamma_renormalized + ln|z| / 2`.
    pub gamma_szego: f64,
    pub iterations: usize,
    pub phase_samples: usize,
    /// Standard error of the phase average.
    pub stderr: f64,
}

/// Phase average of `(1/n) ln ||A^n(x)||`, with a fixed-order reduction so
/// results do not depend on the thread count.
pub fn lyapunov_exponent(model: &VerblunskyModel, z: C64, n_iter: usize, phases: &[Vec<f64>]) -> Result<LyapunovResult> {
    if n_iter == 0 || phases.is_empty() {
        return Err(Error::Domain("Lyapunov exponent needs n_iter >= 1 and a nonempty phase grid".into()));
    }
    let orbits = Orbits::new(model, phases, n_iter);
    lyapunov_on_orbits(&orbits, z)
}

pub fn lyapunov_on_orbits(orbits: &Orbits, z: C64) -> Result<LyapunovResult> {
    if z == C64::new(0.0, 0.0) {
        return Err(Error::Domain("Lyapunov exponent needs z != 0".into()));
    }
    let inv_sqrt_z = sqrt_branch(z).inv();
    let n = orbits.len;
    let per_phase: Vec<f64> = (0..orbits.phases.len())
        .into_par_iter()
        .map(|i| orbits.with(i, |a| log_norm_of_product(a, z, inv_sqrt_z)) / n as f64)
        .collect();
    let p = per_phase.len() as f64;
    let mean = per_phase.iter().sum::<f64>() / p;
    let var = if per_phase.len() > 1 {
        per_phase.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (p - 1.0)
    } else {
        0.0
    };
    Ok(LyapunovResult {
        gamma_renormalized: mean,
        gamma_szego: mean + 0.5 * z.norm().ln(),
        iterations: n,
        phase_samples: orbits.phases.len(),
        stderr: (var / p).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationResult {
    /// Fibered rotation number modulo 1.
    pub rho: f64,
    /// Unreduced mean increment over one turn, useful for continuity checks.
    pub rho_lift: f64,
    pub winding_samples: usize,
}

/// Real form of `[[a, b], [conj b, conj a]]` under the fixed isomorphism onto
/// SL(2, R), oriented so that the free step turns vectors counterclockwise by `zeta / 2`.
#[inline]
pub fn real_form(a: C64, b: C64) -> [[f64; 2]; 2] {
    [[a.re + b.re, b.im - a.im], [a.im + b.im, a.re - b.re]]
}

/// Lifted angle increment of a real unimodular matrix acting on the unit vector at angle `theta`.
///
/// The rotation factor of the QR decomposition takes the branch nearest `center`;
/// the triangular factor moves directions by less than `pi`, so its principal value is exact.
#[inline]
fn lifted_increment(r: &[[f64; 2]; 2], theta: f64, center: f64) -> (f64, f64) {
    let phi0 = r[1][0].atan2(r[0][0]);
    let phi = phi0 + 2.0 * PI * ((center - phi0) / (2.0 * PI)).round();
    // Upper-triangular factor U = Q(-phi) R.
    let (s, c) = phi0.sin_cos();
    let u11 = c * r[0][0] + s * r[1][0];
    let u12 = c * r[0][1] + s * r[1][1];
    let u22 = -s * r[0][1] + c * r[1][1];
    let (vs, vc) = theta.sin_cos();
    let w0 = u11 * vc + u12 * vs;
    let w1 = u22 * vs;
    let mut delta = w1.atan2(w0) - theta;
    delta -= 2.0 * PI * (delta / (2.0 * PI)).round();
    let new_theta = theta + delta + phi;
    (delta + phi, new_theta)
}

/// Fibered rotation number at `z = e^{i zeta}` from the orbit of the phase `x = 0`.
pub fn rotation_number(model: &VerblunskyModel, zeta: f64, n_iter: usize) -> Result<RotationResult> {
    let x = vec![0.0; model.dim()];
    rotation_number_at(model, &x, zeta, n_iter)
}

pub fn rotation_number_at(model: &VerblunskyModel, x: &[f64], zeta: f64, n_iter: usize) -> Result<RotationResult> {
    if n_iter == 0 {
        return Err(Error::Domain("rotation number needs n_iter >= 1".into()));
    }
    let alphas = model.alpha_orbit(x, 1, n_iter);
    Ok(rotation_from_alphas(&alphas, zeta))
}

pub fn rotation_from_alphas(alphas: &[C64], zeta: f64) -> RotationResult {
    let w = C64::from_polar(1.0, zeta.rem_euclid(2.0 * PI) / 2.0);
    let center = zeta.rem_euclid(2.0 * PI) / 2.0;
    let mut theta = 0.0f64;
    let mut total = 0.0;
    for &a in alphas {
        let inv_rho = 1.0 / (1.0 - a.norm_sqr()).sqrt();
        let r = real_form(w * inv_rho, -a.conj() * w.conj() * inv_rho);
        let (inc, next) = lifted_increment(&r, theta, center);
        total += inc;
        theta = next.rem_euclid(2.0 * PI);
    }
    let lift = total / (2.0 * PI * alphas.len() as f64);
    RotationResult { rho: lift.rem_euclid(1.0), rho_lift: lift, winding_samples: alphas.len() }
}

/// Free-model value `zeta / (4 pi)`, used by tests and consistency checks.
pub fn free_rotation_number(zeta: f64) -> f64 {
    zeta.rem_euclid(2.0 * PI) / (4.0 * PI)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UhVerdict {
    UniformlyHyperbolic,
    NotUh,
    Undecided,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UhReport {
    pub verdict: UhVerdict,
    pub horizon: usize,
    /// `min_x (1/N) ln ||A^N(x)||`.
    pub min_growth: f64,
    pub threshold: f64,
    /// Smallest `|<u_i, u_{i+1}>|` between most-expanded directions of adjacent phases.
    pub coherence: f64,
}

/// `10 ln N / N`.
pub fn default_threshold(horizon: usize) -> f64 {
    10.0 * (horizon as f64).ln() / horizon as f64
}

/// Default phase grid with `64^min(d, 2)` points.
pub fn default_phases(model: &VerblunskyModel) -> Vec<Vec<f64>> {
    phase_grid(model.dim(), DEFAULT_PHASES_PER_AXIS)
}

/// Finite-horizon uniform-hyperbolicity test; a UH verdict means no counterexample
/// was found at this horizon, not a proof.
///
/// NotUh when some phase grows subexponentially; UniformlyHyperbolic when every phase
/// grows at rate at least twice `threshold` and the most-expanded directions of adjacent
/// phases stay aligned (`|<u_i, u_{i+1}>| >= 1/2`); Undecided otherwise.
pub fn uh_test(model: &VerblunskyModel, z: C64, horizon: usize, phases: &[Vec<f64>], threshold: Option<f64>) -> Result<UhReport> {
    let orbits = Orbits::new(model, phases, horizon.max(1));
    uh_on_orbits(&orbits, z, threshold)
}

pub fn uh_on_orbits(orbits: &Orbits, z: C64, threshold: Option<f64>) -> Result<UhReport> {
    uh_prefix(orbits, z, orbits.len, threshold)
}

/// Per-phase growth record of one UH evaluation.
struct PhaseGrowth {
    log_norm: f64,
    half_log_norm: f64,
    direction: [C64; 2],
}

impl PhaseGrowth {
    /// Growth that does not look exponential: either `||A^N|| <= N` or the second half of the
    /// orbit adds less than 40% of the total log-norm (exponential growth adds about half).
    fn subexponential(&self, horizon: usize, threshold: f64) -> bool {
        let total = self.log_norm;
        total <= threshold * horizon as f64
            && (total <= (horizon as f64).ln() || total - self.half_log_norm < 0.4 * total)
    }
}

/// UH test on the first `horizon` steps of the orbits.
///
/// NotUh when some phase grows subexponentially (see [`PhaseGrowth::subexponential`]);
/// UniformlyHyperbolic when every phase grows at rate at least twice the threshold and the
/// most-expanded directions of adjacent phases stay aligned; Undecided otherwise.
fn uh_prefix(orbits: &Orbits, z: C64, horizon: usize, threshold: Option<f64>) -> Result<UhReport> {
    if z == C64::new(0.0, 0.0) {
        return Err(Error::Domain("UH test needs z != 0".into()));
    }
    let horizon = horizon.clamp(2, orbits.len.max(2));
    let threshold = threshold.unwrap_or_else(|| default_threshold(horizon));
    let inv_sqrt_z = sqrt_branch(z).inv();
    let results: Vec<PhaseGrowth> = (0..orbits.phases.len())
        .into_par_iter()
        .map(|i| {
            orbits.with(i, |a| {
                let mut m = Mat2::identity();
                let mut acc = 0.0;
                let mut half = 0.0;
                for (k, &al) in a[..horizon].iter().enumerate() {
                    m = step_unchecked(al, z, inv_sqrt_z) * m;
                    if (k + 1) % RENORM_EVERY == 0 {
                        let n = m.norm();
                        acc += n.ln();
                        m = m.scale_re(1.0 / n);
                    }
                    if k + 1 == horizon / 2 {
                        half = acc + m.norm().ln();
                    }
                }
                PhaseGrowth { log_norm: acc + m.norm().ln(), half_log_norm: half, direction: m.top_right_singular_vector() }
            })
        })
        .collect();
    let min_growth = results.iter().fold(f64::INFINITY, |m, r| m.min(r.log_norm)) / horizon as f64;
    let mut coherence = 1.0f64;
    for w in results.windows(2) {
        let (u, v) = (w[0].direction, w[1].direction);
        coherence = coherence.min((u[0].conj() * v[0] + u[1].conj() * v[1]).norm());
    }
    let verdict = if results.iter().any(|r| r.subexponential(horizon, threshold)) {
        UhVerdict::NotUh
    } else if min_growth >= 2.0 * threshold && coherence >= 0.5 {
        UhVerdict::UniformlyHyperbolic
    } else {
        UhVerdict::Undecided
    };
    Ok(UhReport { verdict, horizon, min_growth, threshold, coherence })
}

/// Repeats [`uh_test`] with doubled horizons while the verdict is Undecided, up to `cap`.
pub fn uh_test_escalating(model: &VerblunskyModel, z: C64, start: usize, cap: usize, phases: &[Vec<f64>]) -> Result<UhReport> {
    let full = Orbits::new(model, phases, cap.max(start));
    escalate(&full, z, start)
}

fn escalate(full: &Orbits, z: C64, start: usize) -> Result<UhReport> {
    let cap = full.len;
    let mut horizon = start.clamp(2, cap.max(2));
    loop {
        let report = uh_prefix(full, z, horizon, None)?;
        if report.verdict != UhVerdict::Undecided || horizon >= cap {
            return Ok(report);
        }
        horizon = (horizon * 2).min(cap);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumArcs {
    pub arcs: Vec<Arc>,
    pub grid_resolution: f64,
    /// Verdict at each grid angle `2 pi i / grid`.
    pub verdicts: Vec<UhVerdict>,
}

impl SpectrumArcs {
    pub fn contains(&self, zeta: f64) -> bool {
        let z = zeta.rem_euclid(2.0 * PI);
        self.arcs.iter().any(|a| a.start <= z && z <= a.end)
    }

    pub fn is_full_circle(&self) -> bool {
        self.arcs.len() == 1 && self.arcs[0].start == 0.0 && self.arcs[0].end == 2.0 * PI
    }

    /// Grid angles classified into the spectrum.
    pub fn spectral_angles(&self) -> Vec<f64> {
        let g = self.verdicts.len();
        (0..g).filter(|&i| self.verdicts[i] != UhVerdict::UniformlyHyperbolic).map(|i| 2.0 * PI * i as f64 / g as f64).collect()
    }

    /// Grid angles whose verdict and the `margin` verdicts on each side are all NotUh.
    /// Unlike [`Self::interior_angles`], Undecided points are never counted as spectrum.
    pub fn confirmed_angles(&self, margin: usize) -> Vec<f64> {
        let g = self.verdicts.len();
        let step = 2.0 * PI / g as f64;
        (0..g)
            .filter(|&i| (0..=2 * margin).all(|k| self.verdicts[(i + g + k - margin) % g] == UhVerdict::NotUh))
            .map(|i| i as f64 * step)
            .collect()
    }

    /// Runs of at least `min_len` spectral grid points; the inner `margin` points at each end are dropped.
    pub fn interior_angles(&self, margin: usize) -> Vec<f64> {
        let g = self.verdicts.len();
        let step = 2.0 * PI / g as f64;
        self.arcs
            .iter()
            .flat_map(|a| {
                let i0 = (a.start / step).round() as usize + margin;
                let i1 = ((a.end / step).round() as usize).saturating_sub(margin);
                (i0..=i1.min(g - 1)).filter(move |_| i1 >= i0).map(move |i| i as f64 * step)
            })
            .collect()
    }
}

/// Classifies `grid` equally spaced angles and merges runs of non-UH points into arcs.
/// Undecided points count as spectrum. The full circle is reported as `[0, 2 pi)`.
pub fn spectrum_scan(model: &VerblunskyModel, grid: usize, horizon: usize) -> Result<SpectrumArcs> {
    spectrum_scan_with(model, grid, horizon, UH_HORIZON_CAP, &default_phases(model))
}

pub fn spectrum_scan_with(
    model: &VerblunskyModel,
    grid: usize,
    horizon: usize,
    cap: usize,
    phases: &[Vec<f64>],
) -> Result<SpectrumArcs> {
    if grid < 16 {
        return Err(Error::Domain(format!("spectrum scan needs at least 16 grid points, got {grid}")));
    }
    let cap = cap.max(horizon);
    let full = Orbits::new(model, phases, cap);
    let verdicts: Vec<UhVerdict> = (0..grid)
        .map(|i| Ok(escalate(&full, C64::from_polar(1.0, 2.0 * PI * i as f64 / grid as f64), horizon)?.verdict))
        .collect::<Result<_>>()?;
    Ok(arcs_from_verdicts(verdicts))
}

pub fn arcs_from_verdicts(verdicts: Vec<UhVerdict>) -> SpectrumArcs {
    let g = verdicts.len();
    let step = 2.0 * PI / g as f64;
    let mut arcs = Vec::new();
    if verdicts.iter().all(|v| *v != UhVerdict::UniformlyHyperbolic) {
        arcs.push(Arc { start: 0.0, end: 2.0 * PI });
    } else {
        let mut i = 0;
        while i < g {
            if verdicts[i] == UhVerdict::UniformlyHyperbolic {
                i += 1;
                continue;
            }
            let s = i;
            while i < g && verdicts[i] != UhVerdict::UniformlyHyperbolic {
                i += 1;
            }
            arcs.push(Arc { start: s as f64 * step, end: (i - 1) as f64 * step });
        }
    }
    SpectrumArcs { arcs, grid_resolution: step, verdicts }
}

/// Orthonormal Szegő pairs `(phi_n, phi*_n)` for `n = 0 ..= alphas.len()`,
/// where the step to degree `n` uses `alphas[n - 1]`.
pub fn szego_orthonormal(alphas: &[C64], z: C64) -> Vec<[C64; 2]> {
    let mut out = Vec::with_capacity(alphas.len() + 1);
    let mut v = [C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
    out.push(v);
    for &a in alphas {
        let r = (1.0 - a.norm_sqr()).sqrt();
        v = [(z * v[0] - a.conj() * v[1]) / r, (v[1] - a * z * v[0]) / r];
        out.push(v);
    }
    out
}

/// Gesztesy-Zinchenko pairs `(s_n, t_n)`, `n = 0 ..= alphas.len()`, from `(1, 1)`.
///
/// The step to index `n` uses `alphas[n - 1]`, with the even-parity matrix
/// `rho^{-1} [[-a, 1/z], [z, -conj a]]` when `n - 1` is even and the odd-parity
/// matrix `rho^{-1} [[-conj a, 1], [1, -a]]` otherwise.
pub fn gz_iterates(alphas: &[C64], z: C64) -> Vec<[C64; 2]> {
    let mut out = Vec::with_capacity(alphas.len() + 1);
    let mut v = [C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
    out.push(v);
    for (m, &a) in alphas.iter().enumerate() {
        let r = (1.0 - a.norm_sqr()).sqrt();
        v = if m % 2 == 0 {
            [(-a * v[0] + v[1] / z) / r, (z * v[0] - a.conj() * v[1]) / r]
        } else {
            [(-a.conj() * v[0] + v[1]) / r, (v[0] - a * v[1]) / r]
        };
        out.push(v);
    }
    out
}
