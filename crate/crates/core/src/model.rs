//! Quasi-periodic Verblunsky sampling model.
//!
//! `alpha_n(x) = lambda * exp(2 pi i h(x + (n - 1) omega))` with `h` a real
//! trigonometric polynomial on the d-torus. Multi-index size is the l1 norm.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat2::C64;

/// Convergent denominators at or above this value exhaust double precision.
pub const CF_DENOMINATOR_CAP: u64 = 10_000_000;

/// A rational expansion stops once `|omega - p/q|` falls below this.
pub const CF_TERMINATION_TOL: f64 = 1e-15;

/// Fraction of the available ratio terms, taken from the deep end, that the
/// Liouville exponent estimate maximizes over.
pub const BETA_TAIL_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    omega: Vec<f64>,
}

impl Frequency {
    /// Every component must lie in `[0, 1)`.
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidModel("frequency needs at least one component".into()));
        }
        if let Some(w) = omega.iter().find(|w| !(0.0..1.0).contains(*w)) {
            return Err(Error::InvalidModel(format!("frequency component {w} outside [0, 1)")));
        }
        Ok(Self { omega })
    }

    pub fn golden() -> Self {
        Self { omega: vec![golden_mean()] }
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.omega
    }

    /// `<n, omega>` as a plain real number.
    pub fn dot(&self, n: &[i64]) -> f64 {
        n.iter().zip(&self.omega).map(|(&k, &w)| k as f64 * w).sum()
    }
}

/// `(sqrt 5 - 1) / 2`.
pub fn golden_mean() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

/// Distance to the nearest integer.
pub fn circle_dist(t: f64) -> f64 {
    let f = t - t.round();
    f.abs()
}

pub fn l1(n: &[i64]) -> i64 {
    n.iter().map(|k| k.abs()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiophantineParams {
    pub kappa: f64,
    pub tau: f64,
}

impl DiophantineParams {
    pub fn new(kappa: f64, tau: f64) -> Result<Self> {
        if !(kappa > 0.0 && tau > 0.0) {
            return Err(Error::Domain(format!("Diophantine parameters need kappa, tau > 0, got {kappa}, {tau}")));
        }
        Ok(Self { kappa, tau })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub k: Vec<i64>,
    pub c: C64,
}

/// Finite Fourier sum `sum_k c_k exp(2 pi i <k, x>)`; terms sorted by index, no duplicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    dim: usize,
    terms: Vec<FourierTerm>,
    pub radius: f64,
}

impl TrigPolynomial {
    pub fn zero(dim: usize, radius: f64) -> Self {
        Self { dim, terms: Vec::new(), radius }
    }

    /// Later duplicates of an index overwrite earlier ones; zero amplitudes are dropped.
    pub fn new(dim: usize, terms: Vec<FourierTerm>, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidModel(format!("analyticity radius must be positive, got {radius}")));
        }
        let mut p = Self::zero(dim, radius);
        for t in terms {
            p.set(t.k, t.c)?;
        }
        Ok(p)
    }

    /// `amplitude * cos(2 pi x_1)` in dimension `dim`.
    pub fn cosine(dim: usize, amplitude: f64, radius: f64) -> Self {
        let mut k = vec![0i64; dim];
        k[0] = 1;
        let mut km = k.clone();
        km[0] = -1;
        let half = C64::new(amplitude / 2.0, 0.0);
        let mut terms = vec![FourierTerm { k: km, c: half }, FourierTerm { k, c: half }];
        terms.sort_by(|a, b| a.k.cmp(&b.k));
        Self { dim, terms, radius }
    }

    pub fn set(&mut self, k: Vec<i64>, c: C64) -> Result<()> {
        if k.len() != self.dim {
            return Err(Error::InvalidModel(format!(
                "Fourier index {k:?} has {} components, expected {}",
                k.len(),
                self.dim
            )));
        }
        if !(c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite Fourier amplitude at {k:?}")));
        }
        match self.terms.binary_search_by(|t| t.k.cmp(&k)) {
            Ok(i) if c == C64::new(0.0, 0.0) => {
                self.terms.remove(i);
            }
            Ok(i) => self.terms[i].c = c,
            Err(_) if c == C64::new(0.0, 0.0) => {}
            Err(i) => self.terms.insert(i, FourierTerm { k, c }),
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[FourierTerm] {
        &self.terms
    }

    pub fn coefficient(&self, k: &[i64]) -> C64 {
        self.terms
            .binary_search_by(|t| t.k.as_slice().cmp(k))
            .map(|i| self.terms[i].c)
            .unwrap_or_default()
    }

    /// Whether `c(-k) = conj c(k)` holds to `tol` for every stored index.
    pub fn is_conjugate_symmetric(&self, tol: f64) -> bool {
        self.terms.iter().all(|t| {
            let neg: Vec<i64> = t.k.iter().map(|v| -v).collect();
            (self.coefficient(&neg) - t.c.conj()).norm() <= tol
        })
    }

    /// `sum_k |c_k| exp(2 pi |k| r)`.
    pub fn weighted_norm(&self, r: f64) -> f64 {
        self.terms.iter().map(|t| t.c.norm() * (2.0 * PI * l1(&t.k) as f64 * r).exp()).sum()
    }

    /// Real part of the Fourier sum, so one-sided data still defines a real function.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let phase: f64 = t.k.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
                let (s, c) = (2.0 * PI * phase).sin_cos();
                t.c.re * c - t.c.im * s
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerblunskyModel {
    pub lambda: f64,
    pub h: TrigPolynomial,
    pub omega: Frequency,
}

impl VerblunskyModel {
    pub fn new(lambda: f64, h: TrigPolynomial, omega: Frequency) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidModel(format!(
                "lambda = {lambda} violates 0 <= lambda < 1 (Verblunsky coefficients need |alpha| < 1)"
            )));
        }
        if h.dim() != omega.dim() {
            return Err(Error::InvalidModel(format!(
                "h lives on a {}-torus but omega has {} components",
                h.dim(),
                omega.dim()
            )));
        }
        Ok(Self { lambda, h, omega })
    }

    /// `h = 0`: every coefficient equals `lambda`.
    pub fn constant(lambda: f64, omega: Frequency) -> Result<Self> {
        let d = omega.dim();
        Self::new(lambda, TrigPolynomial::zero(d, 1.0), omega)
    }

    /// `h = cos 2 pi x_1`.
    pub fn cosine(lambda: f64, omega: Frequency, radius: f64) -> Result<Self> {
        let d = omega.dim();
        Self::new(lambda, TrigPolynomial::cosine(d, 1.0, radius), omega)
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }

    /// `sqrt(1 - lambda^2)`, the same at every site.
    pub fn rho(&self) -> f64 {
        (1.0 - self.lambda * self.lambda).sqrt()
    }

    /// `alpha(x) = lambda exp(2 pi i h(x))`.
    pub fn alpha_at(&self, y: &[f64]) -> C64 {
        if self.lambda == 0.0 {
            return C64::new(0.0, 0.0);
        }
        C64::from_polar(self.lambda, 2.0 * PI * self.h.eval(y))
    }

    /// Torus point `x + shift * omega` reduced to `[0, 1)^d`.
    pub fn shifted(&self, x: &[f64], shift: i64) -> Vec<f64> {
        x.iter()
            .zip(self.omega.components())
            .map(|(&xi, &w)| (xi + (shift as f64) * w).rem_euclid(1.0))
            .collect()
    }

    /// `alpha_n(x) = alpha(x + (n - 1) omega)`.
    pub fn sample_alpha(&self, x: &[f64], n: i64) -> C64 {
        self.alpha_at(&self.shifted(x, n - 1))
    }

    /// `alpha_start, ..., alpha_{start + len - 1}` at phase `x`.
    pub fn alpha_orbit(&self, x: &[f64], start: i64, len: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); len];
        self.fill_alpha_orbit(x, start, &mut out);
        out
    }

    /// Allocation-free form of [`Self::alpha_orbit`]; every point is reduced from `x` directly,
    /// so no rounding accumulates along the orbit.
    pub fn fill_alpha_orbit(&self, x: &[f64], start: i64, out: &mut [C64]) {
        if self.lambda == 0.0 || self.h.terms().is_empty() {
            out.fill(C64::new(self.lambda, 0.0));
            return;
        }
        let mut y = x.to_vec();
        for (j, slot) in out.iter_mut().enumerate() {
            let shift = (start - 1 + j as i64) as f64;
            for ((yi, &xi), &w) in y.iter_mut().zip(x).zip(self.omega.components()) {
                *yi = (xi + shift * w).rem_euclid(1.0);
            }
            *slot = self.alpha_at(&y);
        }
    }

    /// Whether the coefficients do not depend on the phase at all.
    pub fn is_phase_independent(&self) -> bool {
        self.lambda == 0.0 || self.h.terms().is_empty()
    }

    /// Reads a model file: `lambda`, `omega`, `radius` and `h.<k> = re, im` lines.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_entries(&parse_entries(text)?)
    }

    /// Builds a model from already split entries; any key outside the model vocabulary is an error.
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut lambda = None;
        let mut omega: Option<Vec<f64>> = None;
        let mut radius = None;
        let mut coeffs: Vec<(usize, Vec<i64>, C64)> = Vec::new();
        for e in entries {
            let bad = |message: String| Error::Parse { line: e.line, message };
            match e.key.as_str() {
                "lambda" => lambda = Some(parse_f64(&e.value).map_err(bad)?),
                "radius" => radius = Some(parse_f64(&e.value).map_err(bad)?),
                "omega" => {
                    let v: std::result::Result<Vec<f64>, String> = e.value.split(',').map(parse_f64).collect();
                    omega = Some(v.map_err(bad)?);
                }
                key if key.starts_with("h.") => {
                    let k: std::result::Result<Vec<i64>, _> =
                        key[2..].split(',').map(|s| s.trim().parse::<i64>()).collect();
                    let k = k.map_err(|_| bad(format!("malformed Fourier index in key `{key}`")))?;
                    let parts: Vec<&str> = e.value.split(',').collect();
                    if parts.len() != 2 {
                        return Err(bad(format!("`{key}` needs `re, im`, got `{}`", e.value)));
                    }
                    let re = parse_f64(parts[0]).map_err(bad)?;
                    let im = parse_f64(parts[1]).map_err(bad)?;
                    coeffs.push((e.line, k, C64::new(re, im)));
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let lambda = lambda.ok_or_else(|| Error::InvalidModel("missing key `lambda`".into()))?;
        let omega = Frequency::new(omega.ok_or_else(|| Error::InvalidModel("missing key `omega`".into()))?)?;
        let mut h = TrigPolynomial::new(omega.dim(), Vec::new(), radius.unwrap_or(1.0))?;
        for (line, k, c) in coeffs {
            h.set(k, c).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        }
        Self::new(lambda, h, omega)
    }

    /// Canonical text form: one `key = value` line per datum, lines sorted.
    /// Numbers use the shortest representation that parses back to the same bits.
    pub fn to_canonical_text(&self) -> String {
        let mut lines = self.canonical_lines();
        lines.sort();
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    /// Unsorted canonical lines, for callers that merge in further keys before sorting.
    pub fn canonical_lines(&self) -> Vec<String> {
        let omega: Vec<String> = self.omega.components().iter().map(|w| w.to_string()).collect();
        let mut lines = vec![
            format!("lambda = {}", self.lambda),
            format!("omega = {}", omega.join(", ")),
            format!("radius = {}", self.h.radius),
        ];
        for t in self.h.terms() {
            let k: Vec<String> = t.k.iter().map(|v| v.to_string()).collect();
            lines.push(format!("h.{} = {}, {}", k.join(","), t.c.re, t.c.im));
        }
        lines
    }
}

/// One `key = value` line of a plain-text configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits `key = value` lines; `#` starts a comment, blank lines are skipped, keys must be unique.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Parse { line, message: format!("expected `key = value`, got `{content}`") })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse { line, message: "empty key".into() });
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::Parse { line, message: format!("duplicate key `{key}` (first on line {})", prev.line) });
        }
        out.push(Entry { line, key, value: value.trim().to_string() });
    }
    Ok(out)
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("`{t}` is not a finite number"))
}

/// Phase grid on the d-torus: a `per_axis`-point lattice for d <= 2, and
/// `per_axis^2` Kronecker points for d > 2.
pub fn phase_grid(dim: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let p = per_axis.max(1);
    match dim {
        1 => (0..p).map(|i| vec![i as f64 / p as f64]).collect(),
        2 => (0..p * p).map(|i| vec![(i / p) as f64 / p as f64, (i % p) as f64 / p as f64]).collect(),
        _ => kronecker_points(dim, p * p),
    }
}

/// Exactly `count` phases: equally spaced for d = 1, Kronecker points otherwise.
pub fn phase_samples(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let count = count.max(1);
    match dim {
        1 => (0..count).map(|i| vec![i as f64 / count as f64]).collect(),
        _ => kronecker_points(dim, count),
    }
}

/// Additive recurrence with the generalized golden ratio, the root of `x^(d+1) = x + 1`.
fn kronecker_points(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut g = 2.0f64;
    for _ in 0..64 {
        g = (1.0 + g).powf(1.0 / (dim as f64 + 1.0));
    }
    let steps: Vec<f64> = (1..=dim).map(|j| g.powi(-(j as i32)).fract()).collect();
    (0..count).map(|i| steps.iter().map(|s| (0.5 + i as f64 * s).fract()).collect()).collect()
}

/// Default phase count per axis, giving `64^min(d, 2)` points.
pub const DEFAULT_PHASES_PER_AXIS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuedFraction {
    /// Partial quotients `a_1, a_2, ...` (the integer part is dropped).
    pub partial_quotients: Vec<u64>,
    /// Convergents `(p_n, q_n)` for `n = 1, 2, ...`.
    pub convergents: Vec<(u64, u64)>,
    /// Index of the final convergent when the expansion of a rational ends.
    pub terminated_at: Option<usize>,
    /// Whether the expansion stopped because `q_n` reached [`CF_DENOMINATOR_CAP`].
    pub precision_capped: bool,
}

impl ContinuedFraction {
    pub fn denominators(&self) -> Vec<u64> {
        self.convergents.iter().map(|c| c.1).collect()
    }
}

/// Continued-fraction convergents of `omega in (0, 1)` up to `depth` terms.
///
/// Runs the Euclidean algorithm exactly on the binary rational that the
/// double represents, so no rounding enters the partial quotients.
pub fn continued_fraction(omega: f64, depth: usize) -> Result<ContinuedFraction> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::Domain(format!("continued fraction needs omega in (0, 1), got {omega}")));
    }
    if depth == 0 {
        return Err(Error::Domain("continued fraction depth must be at least 1".into()));
    }
    // omega = num / 2^shift exactly; shift <= 127 keeps everything in u128.
    let bits = omega.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let (mant, e2) = if exp == 0 { (bits & ((1 << 52) - 1), -1074) } else { ((bits & ((1 << 52) - 1)) | (1 << 52), exp - 1075) };
    let shift = -e2;
    if shift > 127 {
        return Err(Error::Domain(format!("omega = {omega:e} is too small for an exact expansion")));
    }
    let (mut num, mut den) = (mant as u128, 1u128 << shift);
    // Euclid on den / num: omega = 1 / (a_1 + ...).
    let (mut p_prev, mut q_prev, mut p, mut q) = (1u128, 0u128, 0u128, 1u128);
    let mut out = ContinuedFraction {
        partial_quotients: Vec::new(),
        convergents: Vec::new(),
        terminated_at: None,
        precision_capped: false,
    };
    while out.convergents.len() < depth && num != 0 {
        let a = den / num;
        let rem = den % num;
        den = num;
        num = rem;
        let (pn, qn) = (a * p + p_prev, a * q + q_prev);
        p_prev = p;
        q_prev = q;
        p = pn;
        q = qn;
        out.partial_quotients.push(a as u64);
        out.convergents.push((p as u64, q as u64));
        if num == 0 || (omega - p as f64 / q as f64).abs() <= CF_TERMINATION_TOL {
            out.terminated_at = Some(out.convergents.len());
            break;
        }
        if q >= CF_DENOMINATOR_CAP as u128 {
            out.precision_capped = true;
            break;
        }
    }
    Ok(out)
}

/// Finite-depth estimate of `limsup ln(q_{n+1}) / q_n`.
///
/// Maximizes over the deepest [`BETA_TAIL_FRACTION`] of the available ratio
/// terms: the early terms `ln(q_2)/q_1` are O(1) for every frequency and say
/// nothing about the limsup.
pub fn beta_exponent(omega: f64, depth: usize) -> Result<f64> {
    let cf = continued_fraction(omega, depth)?;
    Ok(beta_from_denominators(&cf.denominators()))
}

pub fn beta_from_denominators(q: &[u64]) -> f64 {
    let ratios: Vec<f64> = q.windows(2).map(|w| (w[1] as f64).ln() / w[0] as f64).collect();
    if ratios.is_empty() {
        return 0.0;
    }
    let tail = ((ratios.len() as f64) * BETA_TAIL_FRACTION).ceil().max(1.0) as usize;
    ratios[ratios.len() - tail..].iter().fold(0.0f64, |m, &r| m.max(r))
}

/// Value of the finite continued fraction `[0; a_1, ..., a_n]`.
pub fn from_partial_quotients(a: &[u64]) -> f64 {
    let (mut p_prev, mut q_prev, mut p, mut q) = (1u128, 0u128, 0u128, 1u128);
    for &ai in a {
        let ai = ai as u128;
        let (pn, qn) = (ai * p + p_prev, ai * q + q_prev);
        p_prev = p;
        q_prev = q;
        p = pn;
        q = qn;
    }
    p as f64 / q as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DiophantineVerdict {
    Pass,
    Fail { witness: Vec<i64>, distance: f64 },
}

/// Brute-force check of `||<n, omega>|| >= kappa / |n|^tau` for `0 < |n| <= cutoff`.
///
/// Indices are visited in increasing l1 norm, so the witness is one of smallest size.
pub fn diophantine_check(omega: &Frequency, params: DiophantineParams, cutoff: usize) -> DiophantineVerdict {
    for norm in 1..=cutoff as i64 {
        let mut found = None;
        for_each_index_of_norm(omega.dim(), norm, &mut |n| {
            if found.is_some() {
                return;
            }
            let dist = circle_dist(omega.dot(n));
            if dist < params.kappa / (norm as f64).powf(params.tau) {
                found = Some((n.to_vec(), dist));
            }
        });
        if let Some((witness, distance)) = found {
            return DiophantineVerdict::Fail { witness, distance };
        }
    }
    DiophantineVerdict::Pass
}

/// Visits every `n in Z^dim` with `|n|_1 = norm` in a fixed order.
pub fn for_each_index_of_norm(dim: usize, norm: i64, f: &mut dyn FnMut(&[i64])) {
    fn rec(buf: &mut Vec<i64>, pos: usize, left: i64, f: &mut dyn FnMut(&[i64])) {
        if pos + 1 == buf.len() {
            if left == 0 {
                buf[pos] = 0;
                f(buf);
            } else {
                for s in [left, -left] {
                    buf[pos] = s;
                    f(buf);
                }
            }
            return;
        }
        for v in 0..=left {
            if v == 0 {
                buf[pos] = 0;
                rec(buf, pos + 1, left, f);
            } else {
                for s in [v, -v] {
                    buf[pos] = s;
                    rec(buf, pos + 1, left - v, f);
                }
            }
        }
    }
    let mut buf = vec![0i64; dim];
    rec(&mut buf, 0, norm, f);
}

/// All `n` with `0 < |n|_1 <= max_norm`, in increasing norm.
pub fn nonzero_indices(dim: usize, max_norm: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for norm in 1..=max_norm {
        for_each_index_of_norm(dim, norm, &mut |n| out.push(n.to_vec()));
    }
    out
}
