//! Finite CMV truncations built from the two block-diagonal Theta factors.
//!
//! Row `i` of a truncation is site `first_index + i`. Theta block `j` couples
//! sites `j, j + 1`; the left factor holds the even blocks, the right factor
//! the odd ones. A block whose second site falls outside the window keeps only
//! its `conj(alpha_j)` corner, which is unimodular exactly when the boundary
//! coefficient is.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat2::C64;
use crate::model::VerblunskyModel;

/// Largest size handled by the dense eigenvalue routine.
pub const DENSE_LIMIT: usize = 512;

/// Eigenvalue moduli must sit within this collar of the circle before projection.
pub const UNITARY_COLLAR: f64 = 1e-8;

/// Residual bound for [`green_entry`].
pub const GREEN_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmvKind {
    /// Half-line matrix on sites `0, 1, ...`; the right factor starts with a 1.
    Standard,
    /// Window of the two-sided matrix; site `first_index` feels Theta block `first_index - 1`.
    Extended,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    /// Plain corner of the infinite matrix.
    None,
    /// Coefficients at the cut replaced by the unimodular `beta`, which makes the truncation unitary.
    Decoupled { beta: C64 },
}

impl Boundary {
    pub fn decoupled_one() -> Self {
        Boundary::Decoupled { beta: C64::new(1.0, 0.0) }
    }
}

/// `[[conj a, rho], [rho, -a]]`, unitary whenever `|a| <= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaBlock {
    pub alpha: C64,
    pub rho: f64,
}

impl ThetaBlock {
    pub fn new(alpha: C64) -> Self {
        Self { alpha, rho: (1.0 - alpha.norm_sqr()).max(0.0).sqrt() }
    }

    #[inline]
    pub fn entry(&self, r: usize, c: usize) -> C64 {
        match (r, c) {
            (0, 0) => self.alpha.conj(),
            (1, 1) => -self.alpha,
            _ => C64::new(self.rho, 0.0),
        }
    }

    pub fn to_array(&self) -> [[C64; 2]; 2] {
        [[self.entry(0, 0), self.entry(0, 1)], [self.entry(1, 0), self.entry(1, 1)]]
    }
}

/// Pentadiagonal storage: `rows[i][2 + j - i]` holds entry `(i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandedMatrix {
    pub n: usize,
    pub rows: Vec<[C64; 5]>,
}

impl BandedMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, rows: vec![[C64::new(0.0, 0.0); 5]; n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        if i.abs_diff(j) > 2 || i >= self.n || j >= self.n {
            return C64::new(0.0, 0.0);
        }
        self.rows[i][2 + j - i]
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in i.saturating_sub(2)..(i + 3).min(self.n) {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }

    /// `max |(A* A - I)_{ij}|`, computed on the band of width 4.
    pub fn unitarity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i.saturating_sub(4)..(i + 5).min(self.n) {
                let lo = i.max(j).saturating_sub(2);
                let hi = (i.min(j) + 3).min(self.n);
                let mut s = C64::new(0.0, 0.0);
                for k in lo..hi {
                    s += self.get(k, i).conj() * self.get(k, j);
                }
                if i == j {
                    s -= 1.0;
                }
                worst = worst.max(s.norm());
            }
        }
        worst
    }

    /// `A v`.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|i| {
                let mut s = C64::new(0.0, 0.0);
                for j in i.saturating_sub(2)..(i + 3).min(self.n) {
                    s += self.get(i, j) * v[j];
                }
                s
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmvTruncation {
    pub kind: CmvKind,
    pub size: usize,
    pub boundary: Boundary,
    pub base_phase: Vec<f64>,
    /// Site of row 0.
    pub first_index: i64,
    /// Coefficients of Theta blocks `first_index - 1 ..= first_index + size - 1`, after the boundary substitution.
    pub alphas: Vec<C64>,
    pub entries: BandedMatrix,
}

impl CmvTruncation {
    /// Coefficient of Theta block at site `j`, for `first_index - 1 <= j < first_index + size`.
    pub fn alpha(&self, site: i64) -> C64 {
        self.alphas[(site - self.first_index + 1) as usize]
    }

    pub fn is_decoupled(&self) -> bool {
        matches!(self.boundary, Boundary::Decoupled { .. })
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        self.entries.to_dense()
    }

    /// CSV triplets `row,col,re,im` of the nonzero entries.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,re,im\n");
        for i in 0..self.size {
            for j in i.saturating_sub(2)..(i + 3).min(self.size) {
                let v = self.entries.get(i, j);
                if v != C64::new(0.0, 0.0) {
                    s.push_str(&format!("{i},{j},{},{}\n", v.re, v.im));
                }
            }
        }
        s
    }
}

/// Truncation on sites `0 .. size` at phase `x`.
pub fn assemble_cmv(
    model: &VerblunskyModel,
    x: &[f64],
    size: usize,
    kind: CmvKind,
    boundary: Boundary,
) -> Result<CmvTruncation> {
    assemble_window(model, x, 0, size, kind, boundary)
}

/// Truncation on sites `first_index .. first_index + size`; `first_index` must be even,
/// and zero for the standard kind.
pub fn assemble_window(
    model: &VerblunskyModel,
    x: &[f64],
    first_index: i64,
    size: usize,
    kind: CmvKind,
    boundary: Boundary,
) -> Result<CmvTruncation> {
    if size < 2 {
        return Err(Error::Domain(format!("truncation size must be at least 2, got {size}")));
    }
    if first_index.rem_euclid(2) != 0 {
        return Err(Error::Domain("window must start at an even site to keep the Theta pairing".into()));
    }
    if kind == CmvKind::Standard && first_index != 0 {
        return Err(Error::Domain("standard truncations start at site 0".into()));
    }
    let mut alphas: Vec<C64> = (0..=size as i64).map(|j| model.sample_alpha(x, first_index - 1 + j)).collect();
    if let Boundary::Decoupled { beta } = boundary {
        if (beta.norm() - 1.0).abs() > 1e-14 {
            return Err(Error::Domain(format!("decoupling coefficient must be unimodular, |beta| = {}", beta.norm())));
        }
        alphas[size] = beta;
        if kind == CmvKind::Extended {
            alphas[0] = beta;
        }
    }
    let entries = banded_from_alphas(&alphas, first_index, size, kind);
    Ok(CmvTruncation { kind, size, boundary, base_phase: x.to_vec(), first_index, alphas, entries })
}

/// Multiplies the two truncated block-diagonal factors into banded form.
/// `alphas[j]` is the coefficient of the Theta block at site `first_index - 1 + j`.
pub fn banded_from_alphas(alphas: &[C64], first_index: i64, size: usize, kind: CmvKind) -> BandedMatrix {
    let theta = |row: usize| ThetaBlock::new(alphas[row + 1]);
    // Entry (r, c) of a factor whose blocks start at rows with the given parity.
    let factor = |even_blocks: bool, r: usize, c: usize| -> C64 {
        let site_r = first_index + r as i64;
        let starts_here = site_r.rem_euclid(2) == if even_blocks { 0 } else { 1 };
        let start = if starts_here { r as i64 } else { r as i64 - 1 };
        if c as i64 != start && c as i64 != start + 1 {
            return C64::new(0.0, 0.0);
        }
        if start < 0 {
            // Lower corner of the block belonging to the site just left of the window.
            return match kind {
                CmvKind::Standard => C64::new(1.0, 0.0),
                CmvKind::Extended => -alphas[0],
            };
        }
        let start = start as usize;
        if start + 1 >= size && (r != start || c != start) {
            return C64::new(0.0, 0.0);
        }
        theta(start).entry(r - start, c - start)
    };
    let mut out = BandedMatrix::zeros(size);
    for i in 0..size {
        for j in i.saturating_sub(2)..(i + 3).min(size) {
            let mut s = C64::new(0.0, 0.0);
            for k in i.saturating_sub(1)..(i + 2).min(size) {
                let l = factor(true, i, k);
                if l != C64::new(0.0, 0.0) {
                    s += l * factor(false, k, j);
                }
            }
            out.rows[i][2 + j - i] = s;
        }
    }
    out
}

/// Eigenvalue angles in `[0, 2 pi)`, sorted.
///
/// Dense complex Schur up to [`DENSE_LIMIT`]; above it, standard decoupled
/// truncations go through [`paraorthogonal_roots`].
pub fn truncation_spectrum(m: &CmvTruncation) -> Result<Vec<f64>> {
    if !m.is_decoupled() {
        return Err(Error::NotUnitary { modulus: f64::NAN });
    }
    if m.size <= DENSE_LIMIT {
        let eig = dense_eigenvalues(&m.to_dense())?;
        let mut angles = Vec::with_capacity(eig.len());
        for e in eig {
            let modulus = e.norm();
            if (modulus - 1.0).abs() > UNITARY_COLLAR {
                return Err(Error::NotUnitary { modulus });
            }
            angles.push(e.arg().rem_euclid(2.0 * PI));
        }
        angles.sort_by(|a, b| a.total_cmp(b));
        return Ok(angles);
    }
    match (m.kind, m.boundary) {
        (CmvKind::Standard, Boundary::Decoupled { beta }) => Ok(paraorthogonal_roots(&m.alphas[1..m.size], beta)),
        _ => Err(Error::Domain(format!(
            "extended truncations above size {DENSE_LIMIT} are not supported; use the standard kind"
        ))),
    }
}

/// Eigenvalues of a dense complex matrix from its complex Schur form.
pub fn dense_eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    let n = m.nrows();
    let schur = m.clone().try_schur(f64::EPSILON, 200 * n.max(1)).ok_or(Error::NoConvergence(n))?;
    let t = schur.unpack().1;
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Smallest number of consecutive argument increments, each bounded by `arcsin(max |alpha|)`,
/// whose product still has argument inside `(-pi, pi)`.
fn chunk_len(alphas: &[C64]) -> usize {
    let amax = alphas.iter().fold(0.0f64, |m, a| m.max(a.norm()));
    if amax <= 0.0 {
        return 64;
    }
    let per = amax.min(1.0).asin();
    (((PI * 0.95) / per).floor() as usize).clamp(1, 64)
}

/// Continuous phase `Psi(theta)` of the Blaschke product `z Phi_{n-1}(z) / Phi*_{n-1}(z)`
/// built from `alphas = alpha_0 .. alpha_{n-2}`, evaluated at every angle in `thetas`.
///
/// `Psi` increases strictly by `2 pi n` over one turn, and the paraorthogonal
/// polynomial with boundary `beta` vanishes exactly where `Psi = arg conj(beta) mod 2 pi`.
pub fn paraorthogonal_phase(alphas: &[C64], thetas: &[f64]) -> Vec<f64> {
    let n = alphas.len() + 1;
    let chunk = chunk_len(alphas);
    thetas
        .iter()
        .map(|&theta| {
            let z = C64::from_polar(1.0, theta);
            // b = Phi_k / Phi*_k, unimodular on the circle.
            let mut b = C64::new(1.0, 0.0);
            let mut arg_sum = 0.0;
            let mut prod = C64::new(1.0, 0.0);
            for (k, &a) in alphas.iter().enumerate() {
                let u = z * b;
                let d = C64::new(1.0, 0.0) - a * u;
                b = (u - a.conj()) / d;
                prod *= d;
                if (k + 1) % chunk == 0 {
                    arg_sum += prod.arg();
                    prod = C64::new(1.0, 0.0);
                }
            }
            arg_sum += prod.arg();
            n as f64 * theta - 2.0 * arg_sum
        })
        .collect()
}

/// Number of eigenvalue angles strictly below each `theta` (ascending, within `[0, 2 pi]`)
/// for the standard truncation of size `alphas.len() + 1` decoupled by `beta`.
pub fn paraorthogonal_counts(alphas: &[C64], beta: C64, thetas: &[f64]) -> Vec<usize> {
    let target = beta.conj().arg();
    let psi0 = paraorthogonal_phase(alphas, &[0.0])[0];
    let below = |psi: f64| ((psi - target) / (2.0 * PI)).ceil();
    let base = below(psi0);
    let psis = paraorthogonal_phase(alphas, thetas);
    let n = alphas.len() + 1;
    psis.iter()
        .zip(thetas)
        .map(|(&psi, &t)| if t <= 0.0 { 0 } else { ((below(psi) - base).max(0.0) as usize).min(n) })
        .collect()
}

/// Roots of the paraorthogonal polynomial as angles in `[0, 2 pi)`, sorted.
///
/// Brackets each root on a grid of `4 n` angles, then refines with the Illinois
/// variant of regula falsi on the monotone phase.
pub fn paraorthogonal_roots(alphas: &[C64], beta: C64) -> Vec<f64> {
    let n = alphas.len() + 1;
    let target = beta.conj().arg();
    let g = 4 * n;
    let grid: Vec<f64> = (0..=g).map(|i| 2.0 * PI * i as f64 / g as f64).collect();
    let psi = paraorthogonal_phase(alphas, &grid);
    let psi_at = |t: f64| paraorthogonal_phase(alphas, &[t])[0];
    let mut roots = Vec::with_capacity(n);
    let first_m = ((psi[0] - target) / (2.0 * PI)).ceil() as i64;
    for m in first_m..first_m + n as i64 {
        let level = target + 2.0 * PI * m as f64;
        // First grid index with psi >= level.
        let hi = psi.partition_point(|&p| p < level).min(g);
        if hi == 0 {
            roots.push(0.0);
            continue;
        }
        let (mut a, mut b) = (grid[hi - 1], grid[hi]);
        let (mut fa, mut fb) = (psi[hi - 1] - level, psi[hi] - level);
        let mut side = 0i32;
        let mut t = b;
        for _ in 0..100 {
            if fb == fa {
                break;
            }
            t = (a * fb - b * fa) / (fb - fa);
            let ft = psi_at(t) - level;
            if ft == 0.0 || (b - a).abs() < 1e-15 {
                break;
            }
            if ft * fb > 0.0 {
                b = t;
                fb = ft;
                if side == 1 {
                    fa /= 2.0;
                }
                side = 1;
            } else {
                a = t;
                fa = ft;
                if side == -1 {
                    fb /= 2.0;
                }
                side = -1;
            }
            if (b - a).abs() < 1e-14 {
                break;
            }
        }
        roots.push(t.rem_euclid(2.0 * PI));
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    roots
}

/// `<delta_k, (M - z)^{-1} delta_l>` for site indices `k`, `l`.
///
/// Banded Gaussian elimination with partial pivoting; the residual of the
/// solve is checked against [`GREEN_RESIDUAL_TOL`].
pub fn green_entry(m: &CmvTruncation, z: C64, k: i64, l: i64) -> Result<C64> {
    let col = resolvent_column(m, z, l)?;
    let row = (k - m.first_index) as usize;
    col.get(row).copied().ok_or_else(|| Error::Domain(format!("site {k} outside the truncation window")))
}

/// Full column `(M - z)^{-1} delta_l`, residual-checked.
pub fn resolvent_column(m: &CmvTruncation, z: C64, l: i64) -> Result<Vec<C64>> {
    let n = m.size;
    let li = l - m.first_index;
    if li < 0 || li as usize >= n {
        return Err(Error::Domain(format!("site {l} outside the truncation window")));
    }
    let mut rhs = vec![C64::new(0.0, 0.0); n];
    rhs[li as usize] = C64::new(1.0, 0.0);
    let g = banded_solve(&m.entries, z, &rhs)?;
    let mut r = m.entries.apply(&g);
    for i in 0..n {
        r[i] -= z * g[i] + rhs[i];
    }
    let residual = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if !(residual <= GREEN_RESIDUAL_TOL) {
        return Err(Error::SingularSystem { residual, tolerance: GREEN_RESIDUAL_TOL });
    }
    Ok(g)
}

/// Solves `(A - z I) x = b` for pentadiagonal `A`. Row swaps widen the upper band to 4.
pub fn banded_solve(a: &BandedMatrix, z: C64, b: &[C64]) -> Result<Vec<C64>> {
    const W: usize = 7; // columns i-2 ..= i+4
    let n = a.n;
    let mut rows: Vec<[C64; W]> = vec![[C64::new(0.0, 0.0); W]; n];
    // rows[i][c] holds column i - 2 + c.
    for i in 0..n {
        for j in i.saturating_sub(2)..(i + 3).min(n) {
            let mut v = a.get(i, j);
            if i == j {
                v -= z;
            }
            rows[i][2 + j - i] = v;
        }
    }
    let mut rhs = b.to_vec();
    let at = |rows: &Vec<[C64; W]>, i: usize, j: usize| -> C64 {
        if j + 2 < i || j > i + 4 {
            C64::new(0.0, 0.0)
        } else {
            rows[i][j + 2 - i]
        }
    };
    let scale = rows.iter().flat_map(|r| r.iter()).fold(0.0f64, |m, v| m.max(v.norm()));
    for col in 0..n {
        let last = (col + 2).min(n - 1);
        let mut piv = col;
        let mut best = at(&rows, col, col).norm();
        for r in col + 1..=last {
            let v = at(&rows, r, col).norm();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= f64::EPSILON * scale * 1e-3 {
            return Err(Error::SingularSystem { residual: f64::INFINITY, tolerance: GREEN_RESIDUAL_TOL });
        }
        if piv != col {
            // Swap the live parts of the two rows, columns col ..= col + 4.
            let mut tmp_p = [C64::new(0.0, 0.0); 5];
            let mut tmp_c = [C64::new(0.0, 0.0); 5];
            for (t, j) in (col..(col + 5).min(n)).enumerate() {
                tmp_p[t] = at(&rows, piv, j);
                tmp_c[t] = at(&rows, col, j);
            }
            for (t, j) in (col..(col + 5).min(n)).enumerate() {
                set(&mut rows, col, j, tmp_p[t]);
                set(&mut rows, piv, j, tmp_c[t]);
            }
            rhs.swap(piv, col);
        }
        let p = at(&rows, col, col);
        for r in col + 1..=last {
            let f = at(&rows, r, col) / p;
            if f == C64::new(0.0, 0.0) {
                continue;
            }
            for j in col..(col + 5).min(n) {
                let v = at(&rows, r, j) - f * at(&rows, col, j);
                set(&mut rows, r, j, v);
            }
            let rc = rhs[col];
            rhs[r] -= f * rc;
        }
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..(i + 5).min(n) {
            s -= at(&rows, i, j) * x[j];
        }
        x[i] = s / at(&rows, i, i);
    }
    Ok(x)
}

#[inline]
fn set(rows: &mut [[C64; 7]], i: usize, j: usize, v: C64) {
    debug_assert!(j + 2 >= i && j <= i + 4);
    rows[i][j + 2 - i] = v;
}
