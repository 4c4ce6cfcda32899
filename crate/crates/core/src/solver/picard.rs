use alloc::vec::Vec;

use super::{step_with, tabulate, BsdeSolution, DriverTables, GBsdeParams, Iterate};
use crate::calculus::{time_weights, weighted_integral, MAX_BETA_T};
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::scenario::{Field, Lattice, Layout};

/// Candidate weights for the empirical `β₀`.
pub const BETA_SEARCH_GRID: [f64; 9] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0];

#[derive(Clone, Debug, PartialEq)]
pub struct PicardSettings {
    /// Norm weight; searched over [`BETA_SEARCH_GRID`] when `None`.
    pub beta: Option<f64>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub tol: f64,
    /// Largest number of applications of `Φ`.
    pub max_iter: usize,
    /// Starting point; `(0, 0, 0)` when `None`.
    pub init: Option<Iterate>,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self {
            beta: None,
            mu: None,
            nu: None,
            tol: 1e-8,
            max_iter: 100,
            init: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardReport {
    /// Applications of `Φ`.
    pub iterations: usize,
    /// `‖u_{m+1} − u_m‖_β / ‖1‖_β`, the weighted root-mean-square distance.
    pub distances: Vec<f64>,
    /// Ratios of successive distances.
    pub factors: Vec<f64>,
    /// Largest ratio, if at least two distances are nonzero.
    pub contraction_factor: Option<f64>,
    /// `5C/σ̲²_min (1/μ² + 1/ν²)`.
    pub theoretical_factor: f64,
    /// First `m` with `‖u_{m+1} − u_m‖ < tol`.
    pub converged_at: usize,
    pub beta: f64,
    pub beta_searched: bool,
    /// No grid value satisfied the one-step estimate; the smallest was used.
    pub beta_search_failed: bool,
    pub mu: f64,
    pub nu: f64,
}

fn default_weight(params: &GBsdeParams<'_>, lattice: &Lattice) -> f64 {
    let vol = lattice.volatility();
    let c = if params.lipschitz > 0.0 { params.lipschitz } else { 1.0 };
    sqrt(20.0 * c * vol.upper_max().max(1.0) / vol.lower_min())
}

/// `‖a‖²` summed over the three parts of an iterate difference.
fn diff_norm_sq(
    lattice: &Lattice,
    layout: &Layout,
    a: (&Field, &Field, &Field),
    b: (&Field, &Field, &Field),
    w: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in [(a.0, b.0), (a.1, b.1), (a.2, b.2)] {
        total += weighted_integral(lattice, layout, &x.sub(y)?, w, 0)?;
    }
    Ok(total)
}

/// Time weights `e^{βs}` normalised to unit total mass.
pub(crate) fn rms_weights(lattice: &Lattice, beta: f64) -> Result<Vec<f64>> {
    let mut w = time_weights(lattice.time(), beta)?;
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

fn parts(s: &BsdeSolution) -> (&Field, &Field, &Field) {
    (&s.y, &s.z, &s.eta)
}

fn iter_parts(s: &Iterate) -> (&Field, &Field, &Field) {
    (&s.y, &s.z, &s.eta)
}

/// Smallest `β` on the grid with
/// `‖u₂ − u₁‖² ≤ 5/σ̲²_min [‖f(u₁) − f(u₀)‖²/μ² + σ̄²_max ‖g(u₁) − g(u₀)‖²/ν²]`.
fn search_beta(
    lattice: &Lattice,
    layout: &Layout,
    u1: &BsdeSolution,
    u2: &BsdeSolution,
    t0: &DriverTables,
    t1: &DriverTables,
    mu: f64,
    nu: f64,
) -> Result<Option<f64>> {
    let vol = lattice.volatility();
    let df = t1.f.sub(&t0.f)?;
    let dg = t1.g.sub(&t0.g)?;
    for &beta in &BETA_SEARCH_GRID {
        if beta * lattice.time().horizon() > MAX_BETA_T {
            break;
        }
        let w = time_weights(lattice.time(), beta)?;
        let lhs = diff_norm_sq(lattice, layout, parts(u2), parts(u1), &w)?;
        let rhs = 5.0 / vol.lower_min()
            * (weighted_integral(lattice, layout, &df, &w, 0)? / (mu * mu)
                + vol.upper_max() * weighted_integral(lattice, layout, &dg, &w, 0)? / (nu * nu));
        if lhs <= rhs * (1.0 + 1e-12) {
            return Ok(Some(beta));
        }
    }
    Ok(None)
}

/// Picard iteration of `Φ` until successive iterates are within `tol` in
/// the `β`-weighted norm.
pub fn solve_gbsde(
    params: &GBsdeParams<'_>,
    lattice: &Lattice,
    settings: &PicardSettings,
) -> Result<(BsdeSolution, PicardReport)> {
    params.check_lattice(lattice)?;
    if !(settings.tol > 0.0 && settings.tol.is_finite()) {
        return Err(Error::input("tolerance must be positive"));
    }
    if settings.max_iter == 0 {
        return Err(Error::input("max_iter must be positive"));
    }
    let vol = lattice.volatility();
    let mu = settings.mu.unwrap_or_else(|| default_weight(params, lattice));
    let nu = settings.nu.unwrap_or_else(|| default_weight(params, lattice));
    if !(mu > 0.0 && nu > 0.0 && mu.is_finite() && nu.is_finite()) {
        return Err(Error::input("μ and ν must be positive"));
    }
    let theoretical = 5.0 * params.lipschitz / vol.lower_min() * (1.0 / (mu * mu) + 1.0 / (nu * nu));
    if theoretical >= 1.0 {
        return Err(Error::input(alloc::format!(
            "contraction condition fails: 5C/σ̲²(1/μ² + 1/ν²) = {theoretical} ≥ 1"
        )));
    }
    let layout = lattice.layout_for(params.xi)?;
    let n = params.components();
    let mut prev = match &settings.init {
        Some(it) => {
            it.check_shape(&layout, n)?;
            it.clone()
        }
        None => Iterate::zeros(&layout, n)?,
    };
    let step = |it: (&Field, &Field, &Field)| -> Result<(BsdeSolution, DriverTables)> {
        let tab = tabulate(params, lattice, &layout, it.0, it.1, it.2)?;
        Ok((step_with(lattice, params.xi, Some(&tab))?, tab))
    };
    let (mut cur, prev_tab) = step(iter_parts(&prev))?;
    let mut iterations = 1;
    let mut pending = None;
    let (beta, searched, failed) = match settings.beta {
        Some(b) => (b, false, false),
        None => {
            let (next, cur_tab) = step(parts(&cur))?;
            iterations += 1;
            let found = search_beta(lattice, &layout, &cur, &next, &prev_tab, &cur_tab, mu, nu)?;
            pending = Some(next);
            match found {
                Some(b) => (b, true, false),
                None => (BETA_SEARCH_GRID[0], true, true),
            }
        }
    };
    drop(prev_tab);
    let w = rms_weights(lattice, beta)?;
    let mut distances = Vec::new();
    loop {
        let dist = sqrt(diff_norm_sq(lattice, &layout, parts(&cur), iter_parts(&prev), &w)?);
        if !dist.is_finite() {
            return Err(Error::NonFinite {
                what: "Picard distance",
                step: distances.len(),
                node: 0,
            });
        }
        distances.push(dist);
        if dist < settings.tol {
            break;
        }
        if iterations >= settings.max_iter {
            return Err(Error::Convergence {
                iterations,
                distances,
            });
        }
        let next = match pending.take() {
            Some(s) => s,
            None => {
                iterations += 1;
                step(parts(&cur))?.0
            }
        };
        prev = cur.to_iterate();
        cur = next;
    }
    let factors: Vec<f64> = distances
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    let contraction_factor = if factors.is_empty() {
        None
    } else {
        Some(factors.iter().copied().fold(0.0, f64::max))
    };
    let report = PicardReport {
        iterations,
        converged_at: distances.len() - 1,
        distances,
        factors,
        contraction_factor,
        theoretical_factor: theoretical,
        beta,
        beta_searched: searched,
        beta_search_failed: failed,
        mu,
        nu,
    };
    Ok((cur, report))
}
