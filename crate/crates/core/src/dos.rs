//! Density of states: empirical CDFs from finite truncations or from zeros of the
//! monic orthogonal polynomials, the Thouless formula, Hölder window diagnostics and
//! the rotation-number cross-check `2 rho = k`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmv::{assemble_cmv, dense_eigenvalues, paraorthogonal_counts, Boundary, CmvKind, DENSE_LIMIT};
use crate::cocycle::{rotation_number, LyapunovResult};
use crate::error::{Error, Result};
use crate::mat2::C64;
use crate::model::{circle_dist, phase_samples, VerblunskyModel};

/// Default number of CDF cells on `[0, 2 pi]`.
pub const DEFAULT_DOS_GRID: usize = 4096;

/// Smallest admissible Hölder window, in units of `1 / N`.
pub const RESOLUTION_FACTOR: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    /// Eigenvalues of standard truncations decoupled by `beta = 1`.
    Truncation,
    /// Zeros of the monic polynomial of degree N, projected radially to the circle.
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub estimator: Estimator,
    pub degree: usize,
    pub phases: usize,
}

/// Empirical CDF `k(0, zeta)` sampled at `grid_angles`, which run from 0 to `2 pi` inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DosTable {
    pub grid_angles: Vec<f64>,
    pub cdf: Vec<f64>,
    pub rho_inf: f64,
    pub provenance: Provenance,
}

impl DosTable {
    /// Linear interpolation of the CDF; `zeta` is reduced to `[0, 2 pi]` first.
    pub fn cdf_at(&self, zeta: f64) -> f64 {
        let t = if (0.0..=2.0 * PI).contains(&zeta) { zeta } else { zeta.rem_euclid(2.0 * PI) };
        let g = self.grid_angles.len() - 1;
        let pos = t / (2.0 * PI) * g as f64;
        let i = (pos.floor() as usize).min(g - 1);
        let w = pos - i as f64;
        self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w
    }

    /// Mass of the arc `(zeta - eps, zeta + eps)`, wrapping around the circle.
    pub fn window_mass(&self, zeta: f64, eps: f64) -> f64 {
        if eps >= PI {
            return 1.0;
        }
        let a = (zeta - eps).rem_euclid(2.0 * PI);
        let b = (zeta + eps).rem_euclid(2.0 * PI);
        let m = if a <= b { self.cdf_at(b) - self.cdf_at(a) } else { 1.0 - self.cdf_at(a) + self.cdf_at(b) };
        m.max(0.0)
    }

    /// Sup distance to the uniform CDF `zeta / 2 pi` over the grid.
    pub fn uniform_deviation(&self) -> f64 {
        self.grid_angles.iter().zip(&self.cdf).fold(0.0, |m, (t, c)| m.max((c - t / (2.0 * PI)).abs()))
    }

    /// Kolmogorov-Smirnov distance to another table, evaluated on this table's grid.
    pub fn ks_distance(&self, other: &DosTable) -> f64 {
        self.grid_angles.iter().zip(&self.cdf).fold(0.0, |m, (&t, c)| m.max((c - other.cdf_at(t)).abs()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("DOS tables serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Domain(format!("malformed DOS table: {e}")))
    }
}

/// `rho_inf = exp(int ln(1 - |alpha|^2) / 2) = sqrt(1 - lambda^2)` for the constant-modulus family.
pub fn rho_infinity(model: &VerblunskyModel) -> f64 {
    model.rho()
}

/// Pooled empirical CDF over `phases` equally spaced (d = 1) or Kronecker phases,
/// on a grid of [`DEFAULT_DOS_GRID`] cells.
pub fn dos_histogram(model: &VerblunskyModel, degree: usize, phases: usize, estimator: Estimator) -> Result<DosTable> {
    dos_histogram_on_grid(model, degree, phases, estimator, DEFAULT_DOS_GRID)
}

pub fn dos_histogram_on_grid(
    model: &VerblunskyModel,
    degree: usize,
    phases: usize,
    estimator: Estimator,
    grid: usize,
) -> Result<DosTable> {
    if degree < 16 {
        return Err(Error::Domain(format!("DOS estimation needs N >= 16, got {degree}")));
    }
    if phases == 0 || grid < 2 {
        return Err(Error::Domain("DOS estimation needs at least one phase and two grid cells".into()));
    }
    if estimator == Estimator::Zeros && model.lambda == 0.0 {
        return Err(Error::DegenerateZeros);
    }
    let xs = if model.is_phase_independent() { phase_samples(model.dim(), 1) } else { phase_samples(model.dim(), phases) };
    let angles: Vec<f64> = (0..=grid).map(|i| 2.0 * PI * i as f64 / grid as f64).collect();
    let counts: Vec<Vec<usize>> = xs
        .par_iter()
        .map(|x| -> Result<Vec<usize>> {
            match estimator {
                Estimator::Truncation => {
                    // Sites 0 .. N-2 keep their coefficients; site N-1 carries beta = 1.
                    let alphas = model.alpha_orbit(x, 0, degree - 1);
                    Ok(paraorthogonal_counts(&alphas, C64::new(1.0, 0.0), &angles))
                }
                Estimator::Zeros => {
                    let mut z = zero_angles(&model.alpha_orbit(x, 0, degree), model, x)?;
                    z.sort_by(|a, b| a.total_cmp(b));
                    Ok(angles.iter().map(|&t| z.partition_point(|&a| a < t)).collect())
                }
            }
        })
        .collect::<Result<_>>()?;
    let total = (degree * xs.len()) as f64;
    let mut cdf: Vec<f64> = (0..=grid).map(|i| counts.iter().map(|c| c[i]).sum::<usize>() as f64 / total).collect();
    cdf[0] = 0.0;
    cdf[grid] = 1.0;
    for i in 1..=grid {
        cdf[i] = cdf[i].max(cdf[i - 1]).min(1.0);
    }
    Ok(DosTable {
        grid_angles: angles,
        cdf,
        rho_inf: rho_infinity(model),
        provenance: Provenance { estimator, degree, phases: xs.len() },
    })
}

/// Angles of the zeros of the monic polynomial built from `alphas`.
fn zero_angles(alphas: &[C64], model: &VerblunskyModel, x: &[f64]) -> Result<Vec<f64>> {
    let zeros = if alphas.len() <= DENSE_LIMIT {
        let m = assemble_cmv(model, x, alphas.len(), CmvKind::Standard, Boundary::None)?;
        dense_eigenvalues(&m.to_dense())?
    } else {
        opuc_zeros(alphas)?
    };
    Ok(zeros.iter().map(|z| z.arg().rem_euclid(2.0 * PI)).collect())
}

/// `Phi_N(z) / Phi_N'(z)` by the Szegő recursion with its derivative, rescaled so no
/// intermediate overflows; `alphas = alpha_0 .. alpha_{N-1}`.
fn newton_ratio(alphas: &[C64], z: C64) -> C64 {
    let one = C64::new(1.0, 0.0);
    let (mut p, mut ps, mut dp, mut dps) = (one, one, C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    for (k, &a) in alphas.iter().enumerate() {
        let zp = z * p;
        let np = zp - a.conj() * ps;
        let nps = ps - a * zp;
        let ndp = p + z * dp - a.conj() * dps;
        let ndps = dps - a * (p + z * dp);
        p = np;
        ps = nps;
        dp = ndp;
        dps = ndps;
        if k % 16 == 15 {
            let s = p.norm().max(ps.norm()).max(dp.norm()).max(dps.norm());
            if s > 1e50 || s < 1e-50 {
                let inv = 1.0 / s;
                p *= inv;
                ps *= inv;
                dp *= inv;
                dps *= inv;
            }
        }
    }
    p / dp
}

/// Zeros of `Phi_N` by Aberth-Ehrlich iteration with Gauss-Seidel updates.
pub fn opuc_zeros(alphas: &[C64]) -> Result<Vec<C64>> {
    let n = alphas.len();
    if alphas.iter().all(|a| *a == C64::new(0.0, 0.0)) {
        return Err(Error::DegenerateZeros);
    }
    let mut z: Vec<C64> = (0..n).map(|k| C64::from_polar(0.9, 2.0 * PI * (k as f64 + 0.25) / n as f64)).collect();
    let mut done = vec![false; n];
    for _ in 0..1000 {
        let mut all = true;
        for k in 0..n {
            if done[k] {
                continue;
            }
            let ratio = newton_ratio(alphas, z[k]);
            let mut s = C64::new(0.0, 0.0);
            for (j, &zj) in z.iter().enumerate() {
                if j != k {
                    s += (z[k] - zj).inv();
                }
            }
            let w = ratio / (C64::new(1.0, 0.0) - ratio * s);
            z[k] -= w;
            if w.norm() <= 1e-14 * z[k].norm().max(1e-3) {
                done[k] = true;
            } else {
                all = false;
            }
        }
        if all {
            return Ok(z);
        }
    }
    Err(Error::NoConvergence(n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThoulessReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Compares `gamma_szego(z)` with `-ln rho_inf + int ln|1 - z e^{-i theta}| dk(theta)`.
///
/// The integral is a midpoint Riemann-Stieltjes sum over the CDF cells. On the circle the
/// cells whose midpoint lies within `4 / N` of `arg z` are skipped.
pub fn thouless_check(z: C64, dos: &DosTable, lyap: &LyapunovResult) -> ThoulessReport {
    let on_circle = (z.norm() - 1.0).abs() < 1e-12;
    let collar = RESOLUTION_FACTOR / dos.provenance.degree as f64;
    let zeta = z.arg().rem_euclid(2.0 * PI);
    let mut integral = 0.0;
    for i in 0..dos.cdf.len() - 1 {
        let mass = dos.cdf[i + 1] - dos.cdf[i];
        if mass == 0.0 {
            continue;
        }
        let mid = 0.5 * (dos.grid_angles[i] + dos.grid_angles[i + 1]);
        if on_circle && circle_dist((mid - zeta) / (2.0 * PI)) * 2.0 * PI < collar {
            continue;
        }
        integral += mass * (C64::new(1.0, 0.0) - z * C64::from_polar(1.0, -mid)).norm().ln();
    }
    let rhs = -dos.rho_inf.ln() + integral;
    ThoulessReport { lhs: lyap.gamma_szego, rhs, gap: (lyap.gamma_szego - rhs).abs() }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderRow {
    pub zeta: f64,
    pub epsilon: f64,
    pub mass: f64,
    /// Window narrower than `4 / N`; excluded from slope fits.
    pub below_resolution: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderSlope {
    pub zeta: f64,
    /// Least-squares slope of `ln mass` against `ln eps`; `None` when fewer than two
    /// resolved windows carry mass, as in a spectral gap.
    pub slope: Option<f64>,
    /// Slopes between consecutive resolved windows.
    pub local_slopes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderTable {
    pub rows: Vec<HolderRow>,
    pub slopes: Vec<HolderSlope>,
}

impl HolderTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("zeta_rad,epsilon_rad,mass,below_resolution\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.zeta, r.epsilon, r.mass, r.below_resolution));
        }
        s
    }
}

/// Window masses `k(zeta - eps, zeta + eps)` and their log-log slopes per `zeta`.
pub fn holder_modulus(dos: &DosTable, zetas: &[f64], epsilons: &[f64]) -> HolderTable {
    let resolution = RESOLUTION_FACTOR / dos.provenance.degree as f64;
    let mut eps: Vec<f64> = epsilons.to_vec();
    eps.sort_by(|a, b| a.total_cmp(b));
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    // Masses below one eigenvalue per phase are empty windows.
    let floor = 0.5 / (dos.provenance.degree * dos.provenance.phases) as f64;
    for &zeta in zetas {
        let mut pts = Vec::new();
        for &e in &eps {
            let mass = dos.window_mass(zeta, e);
            let below = e < resolution;
            rows.push(HolderRow { zeta, epsilon: e, mass, below_resolution: below });
            if !below && mass > floor {
                pts.push((e.ln(), mass.ln()));
            }
        }
        let local_slopes: Vec<f64> = pts.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
        let slope = (pts.len() >= 2 && pts.len() == eps.iter().filter(|&&e| e >= resolution).count()).then(|| {
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            sxy / sxx
        });
        slopes.push(HolderSlope { zeta, slope, local_slopes });
    }
    HolderTable { rows, slopes }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationDosCurve {
    /// `(zeta, 2 rho(zeta), k(0, zeta))` per grid point.
    pub points: Vec<(f64, f64, f64)>,
    pub max_deviation: f64,
}

/// Evaluates `|2 rho(zeta) - k(0, zeta)|` modulo 1 on `zetas`.
pub fn rotation_dos_consistency(model: &VerblunskyModel, dos: &DosTable, zetas: &[f64], n_iter: usize) -> Result<RotationDosCurve> {
    let points: Vec<(f64, f64, f64)> = zetas
        .par_iter()
        .map(|&zeta| Ok((zeta, (2.0 * rotation_number(model, zeta, n_iter)?.rho).rem_euclid(1.0), dos.cdf_at(zeta))))
        .collect::<Result<_>>()?;
    let max_deviation = points.iter().fold(0.0f64, |m, p| m.max(circle_dist(p.1 - p.2)));
    Ok(RotationDosCurve { points, max_deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::lyapunov_exponent;
    use crate::model::Frequency;
    use proptest::prelude::*;

    fn constant(lambda: f64) -> VerblunskyModel {
        VerblunskyModel::constant(lambda, Frequency::golden()).unwrap()
    }

    fn cos_model(lambda: f64) -> VerblunskyModel {
        VerblunskyModel::cosine(lambda, Frequency::golden(), 0.5).unwrap()
    }

    #[test]
    fn free_cdf_is_uniform() {
        let t = dos_histogram(&constant(0.0), 256, 1, Estimator::Truncation).unwrap();
        assert!(t.uniform_deviation() <= 2.0 / 256.0, "{}", t.uniform_deviation());
        assert_eq!(t.rho_inf, 1.0);
    }

    #[test]
    fn geronimus_cdf_is_flat_outside_arc() {
        let t = dos_histogram(&constant(0.5), 2000, 1, Estimator::Truncation).unwrap();
        let outside = t.cdf_at(PI / 3.0) + (1.0 - t.cdf_at(5.0 * PI / 3.0));
        assert!(outside <= 0.02, "{outside}");
        assert!((t.rho_inf - 0.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zeros_refused_at_zero_coupling() {
        assert_eq!(dos_histogram(&constant(0.0), 64, 1, Estimator::Zeros), Err(Error::DegenerateZeros));
    }

    #[test]
    fn too_small_degree_refused() {
        assert!(dos_histogram(&constant(0.5), 8, 1, Estimator::Truncation).is_err());
    }

    #[test]
    fn counts_match_dense_spectrum() {
        // Oracle: dense eigenvalues of the decoupled truncation.
        let m = cos_model(0.4);
        let x = [0.0];
        let n = 64;
        let tr = assemble_cmv(&m, &x, n, CmvKind::Standard, Boundary::decoupled_one()).unwrap();
        let eig = crate::cmv::truncation_spectrum(&tr).unwrap();
        let t = dos_histogram_on_grid(&m, n, 1, Estimator::Truncation, 512).unwrap();
        for (i, &theta) in t.grid_angles.iter().enumerate().skip(1).take(510) {
            let below = eig.iter().filter(|&&e| e < theta).count() as f64 / n as f64;
            assert!((below - t.cdf[i]).abs() < 1e-12, "theta {theta}");
        }
    }

    #[test]
    fn aberth_matches_dense_cut_matrix() {
        let m = cos_model(0.3);
        let x = [0.2];
        let alphas = m.alpha_orbit(&x, 0, 120);
        let mut z = opuc_zeros(&alphas).unwrap();
        let cut = assemble_cmv(&m, &x, 120, CmvKind::Standard, Boundary::None).unwrap();
        let dense = dense_eigenvalues(&cut.to_dense()).unwrap();
        for d in &dense {
            let (i, dist) = z.iter().enumerate().map(|(i, w)| (i, (w - d).norm())).fold((0, f64::MAX), |a, b| if b.1 < a.1 { b } else { a });
            assert!(dist < 1e-7, "{d} unmatched, {dist}");
            z.swap_remove(i);
        }
    }

    #[test]
    fn zeros_lie_in_the_disk_and_solve_the_polynomial() {
        let alphas = cos_model(0.3).alpha_orbit(&[0.0], 0, 700);
        let z = opuc_zeros(&alphas).unwrap();
        assert_eq!(z.len(), 700);
        assert!(z.iter().all(|w| w.norm() < 1.0 + 1e-12));
    }

    #[test]
    fn free_thouless_examples() {
        let t = dos_histogram(&constant(0.0), 256, 1, Estimator::Truncation).unwrap();
        for (r, expect) in [(1.2f64, 1.2f64.ln()), (0.5, 0.0)] {
            let z = C64::from_polar(r, 0.7);
            let l = lyapunov_exponent(&constant(0.0), z, 1000, &[vec![0.0]]).unwrap();
            let rep = thouless_check(z, &t, &l);
            assert!((rep.lhs - expect).abs() < 1e-10);
            assert!(rep.gap <= 1e-3, "{rep:?}");
        }
    }

    #[test]
    fn free_holder_mass() {
        let t = dos_histogram(&constant(0.0), 1024, 1, Estimator::Truncation).unwrap();
        let h = holder_modulus(&t, &[1.0, 4.0], &[0.01, 0.02, 0.05]);
        for r in &h.rows {
            assert!((r.mass - r.epsilon / PI).abs() <= 2.0 / 1024.0, "{r:?}");
        }
        for s in &h.slopes {
            assert!((s.slope.unwrap() - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn gap_slope_not_applicable() {
        let t = dos_histogram(&constant(0.5), 1000, 1, Estimator::Truncation).unwrap();
        let h = holder_modulus(&t, &[0.3], &[0.01, 0.02, 0.05]);
        assert!(h.slopes[0].slope.is_none());
        assert!(h.rows.iter().all(|r| r.mass < 2e-3));
    }

    #[test]
    fn fine_windows_are_flagged() {
        let t = dos_histogram(&constant(0.0), 64, 1, Estimator::Truncation).unwrap();
        let h = holder_modulus(&t, &[1.0], &[0.01, 0.1, 0.2]);
        assert!(h.rows[0].below_resolution && !h.rows[1].below_resolution);
    }

    #[test]
    fn free_rotation_matches_uniform_cdf() {
        let n = 256;
        let t = dos_histogram(&constant(0.0), n, 1, Estimator::Truncation).unwrap();
        let zetas: Vec<f64> = (0..50).map(|i| 2.0 * PI * i as f64 / 50.0).collect();
        let c = rotation_dos_consistency(&constant(0.0), &t, &zetas, 1000).unwrap();
        assert!(c.max_deviation <= 2.0 / n as f64);
    }

    #[test]
    fn geronimus_gap_locks_rotation() {
        let n = 1000;
        let m = constant(0.5);
        let t = dos_histogram(&m, n, 1, Estimator::Truncation).unwrap();
        let zetas: Vec<f64> = (1..10).map(|i| i as f64 * 0.1).collect();
        let c = rotation_dos_consistency(&m, &t, &zetas, 5000).unwrap();
        assert!(c.max_deviation <= 2.0 / n as f64, "{c:?}");
    }

    #[test]
    fn json_round_trip() {
        let t = dos_histogram_on_grid(&cos_model(0.2), 32, 2, Estimator::Truncation, 64).unwrap();
        assert_eq!(DosTable::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn estimators_agree_at_moderate_size() {
        let m = cos_model(0.3);
        let a = dos_histogram_on_grid(&m, 300, 4, Estimator::Truncation, 1024).unwrap();
        let b = dos_histogram_on_grid(&m, 300, 4, Estimator::Zeros, 1024).unwrap();
        assert!(a.ks_distance(&b) < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn cdf_is_a_distribution(lambda in 0.0f64..0.9, n in 16usize..200, p in 1usize..4) {
            let t = dos_histogram_on_grid(&cos_model(lambda), n, p, Estimator::Truncation, 256).unwrap();
            prop_assert_eq!(t.cdf[0], 0.0);
            prop_assert_eq!(*t.cdf.last().unwrap(), 1.0);
            prop_assert!(t.cdf.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((t.rho_inf - (1.0 - lambda * lambda).sqrt()).abs() < 1e-12);
        }

        #[test]
        fn window_mass_is_bounded(zeta in 0.0f64..6.28, eps in 0.0f64..4.0) {
            let t = dos_histogram_on_grid(&cos_model(0.3), 64, 2, Estimator::Truncation, 256).unwrap();
            let m = t.window_mass(zeta, eps);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&m));
        }
    }

}
