//! Gordon-type exclusion of eigenvalues for one-frequency models: near-periodicity defects
//! of the transfer matrices at continued-fraction denominators, the three-block lower bound
//! on solutions, and the region where the Liouville exponent beats the Lyapunov exponent.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{lyapunov_exponent, spectrum_scan_with, transfer_product, Arc, Transfer};
use crate::error::{Error, Result};
use crate::mat2::C64;
use crate::model::{beta_exponent, phase_grid, phase_samples, VerblunskyModel};

/// Largest defect for which the three-block bound is asserted.
pub const DEFECT_GATE: f64 = 1e-3;

/// The lemma's lower bound `1 / (2 sqrt 2)` for the initial vector `(1, 1)`.
pub const THREE_BLOCK_BOUND: f64 = 0.353_553_390_593_273_8;

/// Distance kept from `gamma = 0` and `gamma = beta` when reporting the region.
pub const DEFAULT_REGION_MARGIN: f64 = 0.05;

/// Horizon and phase count of the pointwise Lyapunov estimate.
pub const GAMMA_ITERATIONS: usize = 4096;
pub const GAMMA_PHASES: usize = 16;

/// Continued-fraction depth of the Liouville estimate.
pub const DEFAULT_CF_DEPTH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GordonReport {
    pub zeta: f64,
    pub qn: u64,
    /// `sup_x ||A^q(x + q omega) - A^q(x)||` over the phase grid.
    pub defect_forward: f64,
    /// `sup_x ||A^{-q}(x + q omega) - A^{-q}(x)||` over the phase grid.
    pub defect_backward: f64,
    pub three_block_max: f64,
    pub beta_estimate: f64,
    pub gamma_estimate: f64,
}

impl GordonReport {
    pub const CSV_HEADER: &'static str = "zeta,qn,defect_forward,defect_backward,three_block_max,beta_estimate,gamma_estimate";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{},{},{}",
            self.zeta,
            self.qn,
            self.defect_forward,
            self.defect_backward,
            self.three_block_max,
            self.beta_estimate,
            self.gamma_estimate
        )
    }
}

fn require_one_frequency(model: &VerblunskyModel) -> Result<()> {
    if model.dim() != 1 {
        return Err(Error::Domain(format!("Gordon machinery is one-frequency only, the model has {} frequencies", model.dim())));
    }
    Ok(())
}

/// `||a - b||` for two scaled transfers; infinite when the difference is not representable.
pub fn transfer_distance(a: &Transfer, b: &Transfer) -> f64 {
    let s = a.log_scale.max(b.log_scale);
    let d = a.matrix.scale_re((a.log_scale - s).exp()) - b.matrix.scale_re((b.log_scale - s).exp());
    d.norm() * s.exp()
}

/// `||T v||` for a scaled transfer.
pub fn transfer_apply_norm(t: &Transfer, v: [C64; 2]) -> f64 {
    let w = t.matrix.apply(v);
    (w[0].norm_sqr() + w[1].norm_sqr()).sqrt() * t.log_scale.exp()
}

/// Forward and backward defects `||A^{+-q}(x + q omega) - A^{+-q}(x)||` at one phase.
pub fn local_defects(model: &VerblunskyModel, x: &[f64], z: C64, q: u64) -> Result<(f64, f64)> {
    let xs = model.shifted(x, q as i64);
    let n = q as i64;
    let fwd = transfer_distance(&transfer_product(model, &xs, z, n)?, &transfer_product(model, x, z, n)?);
    let bwd = transfer_distance(&transfer_product(model, &xs, z, -n)?, &transfer_product(model, x, z, -n)?);
    Ok((fwd, bwd))
}

/// Sup over the phase grid of the forward and backward defects at `e^{i zeta}`.
/// `q` is meant to be a continued-fraction denominator of the frequency.
pub fn gordon_defect(model: &VerblunskyModel, zeta: f64, q: u64, phases: &[Vec<f64>]) -> Result<(f64, f64)> {
    require_one_frequency(model)?;
    let z = C64::from_polar(1.0, zeta);
    let pairs: Vec<(f64, f64)> = phases.par_iter().map(|x| local_defects(model, x, z, q)).collect::<Result<_>>()?;
    Ok(pairs.into_iter().fold((0.0f64, 0.0f64), |(f, b), (pf, pb)| (f.max(pf), b.max(pb))))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeBlock {
    pub forward: f64,
    pub backward: f64,
    pub double: f64,
    pub max: f64,
    /// Defects at this phase, which gate the lemma.
    pub defect_forward: f64,
    pub defect_backward: f64,
    pub hypotheses_met: bool,
    /// `max >= THREE_BLOCK_BOUND - 1e-9`; only meaningful when the hypotheses hold.
    pub bound_holds: bool,
}

/// `||A^q v||`, `||A^{-q} v||`, `||A^{2q} v||` at phase `x` with the initial vector `v = (1, 1)`.
pub fn gordon_three_block(model: &VerblunskyModel, x: &[f64], zeta: f64, q: u64) -> Result<ThreeBlock> {
    require_one_frequency(model)?;
    if q == 0 {
        return Err(Error::Domain("Gordon blocks need q >= 1".into()));
    }
    let z = C64::from_polar(1.0, zeta);
    let v = [C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
    let n = q as i64;
    let forward = transfer_apply_norm(&transfer_product(model, x, z, n)?, v);
    let backward = transfer_apply_norm(&transfer_product(model, x, z, -n)?, v);
    let double = transfer_apply_norm(&transfer_product(model, x, z, 2 * n)?, v);
    let (df, db) = local_defects(model, x, z, q)?;
    let max = forward.max(backward).max(double);
    Ok(ThreeBlock {
        forward,
        backward,
        double,
        max,
        defect_forward: df,
        defect_backward: db,
        hypotheses_met: df < DEFECT_GATE && db < DEFECT_GATE,
        bound_holds: max >= THREE_BLOCK_BOUND - 1e-9,
    })
}

/// Pointwise Lyapunov estimate used for the region test.
pub fn gamma_estimate(model: &VerblunskyModel, zeta: f64) -> Result<f64> {
    let phases = phase_samples(model.dim(), GAMMA_PHASES);
    Ok(lyapunov_exponent(model, C64::from_polar(1.0, zeta), GAMMA_ITERATIONS, &phases)?.gamma_renormalized)
}

/// Full report at one angle: grid defects, three-block norms at `x`, and both exponents.
pub fn gordon_report(model: &VerblunskyModel, x: &[f64], zeta: f64, q: u64, phases: &[Vec<f64>]) -> Result<GordonReport> {
    let (defect_forward, defect_backward) = gordon_defect(model, zeta, q, phases)?;
    let block = gordon_three_block(model, x, zeta, q)?;
    Ok(GordonReport {
        zeta,
        qn: q,
        defect_forward,
        defect_backward,
        three_block_max: block.max,
        beta_estimate: beta_exponent(model.omega.components()[0], DEFAULT_CF_DEPTH)?,
        gamma_estimate: gamma_estimate(model, zeta)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub zeta: f64,
    pub in_spectrum: bool,
    /// Absent off the spectrum and when the region is empty for every `gamma`.
    pub gamma: Option<f64>,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScRegion {
    pub beta_estimate: f64,
    pub margin: f64,
    pub arcs: Vec<Arc>,
    pub rows: Vec<RegionRow>,
}

/// Grid angles of the spectrum with `margin < gamma < beta - margin`, merged into arcs.
pub fn sc_region(model: &VerblunskyModel, grid: usize, cf_depth: usize) -> Result<ScRegion> {
    sc_region_with_margin(model, grid, cf_depth, DEFAULT_REGION_MARGIN)
}

pub fn sc_region_with_margin(model: &VerblunskyModel, grid: usize, cf_depth: usize, margin: f64) -> Result<ScRegion> {
    require_one_frequency(model)?;
    let beta = beta_exponent(model.omega.components()[0], cf_depth)?;
    let scan = spectrum_scan_with(model, grid, 256, 1 << 12, &phase_grid(1, 32))?;
    // With beta <= 2 margin no gamma fits, so the exponents are not estimated at all.
    let feasible = beta - margin > margin;
    let rows: Vec<RegionRow> = (0..grid)
        .into_par_iter()
        .map(|i| {
            let zeta = 2.0 * PI * i as f64 / grid as f64;
            let in_spectrum = scan.contains(zeta);
            let gamma = if in_spectrum && feasible { Some(gamma_estimate(model, zeta)?) } else { None };
            let selected = gamma.is_some_and(|g| g > margin && g < beta - margin);
            Ok(RegionRow { zeta, in_spectrum, gamma, selected })
        })
        .collect::<Result<_>>()?;
    let step = 2.0 * PI / grid as f64;
    let mut arcs = Vec::new();
    let mut i = 0;
    while i < grid {
        if !rows[i].selected {
            i += 1;
            continue;
        }
        let s = i;
        while i < grid && rows[i].selected {
            i += 1;
        }
        arcs.push(Arc { start: s as f64 * step, end: (i - 1) as f64 * step });
    }
    Ok(ScRegion { beta_estimate: beta, margin, arcs, rows })
}
