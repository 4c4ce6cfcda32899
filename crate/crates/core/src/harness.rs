//! Numerical checks of the a-priori estimates for pairs of G-BSDEs, the
//! pathwise supremum bound, the representation bound and the Cauchy bound
//! for sequences of terminal values. Every norm is a lattice sublinear
//! expectation, so both sides of each inequality are deterministic.

use alloc::vec;
use alloc::vec::Vec;

use crate::calculus::{time_weights, weighted_integral, MAX_BETA_T};
use crate::error::{Error, Result};
use crate::math::{ceil, exp, sqrt};
use crate::par;
use crate::rng::path_rng;
use crate::scenario::{
    expectation_of_layer, expected_path_integral, step_values, walk_path, ConstantControl, Field,
    Lattice, LatticeControl, Layout, McEstimate, RandomCornerControl, TerminalFunctional,
};
use crate::solver::{
    represent_martingale, solve_gbsde, BsdeSolution, GBsdeParams, PicardReport, PicardSettings,
};

/// Default `β` grid `{1, 2, 4, …, 1024}`.
pub const DEFAULT_BETA_GRID: [f64; 11] = [
    1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0,
];

/// Levels of the running-maximum grid in [`sup_estimate_check`].
pub const SUP_LEVELS: usize = 512;

const SUP_MC_CONTROLS: u64 = 32;
const SUP_MC_PATHS: usize = 4_000;
const REL_SLACK: f64 = 1e-9;

fn holds(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + REL_SLACK)
}

fn beta_fits(lattice: &Lattice, beta: f64) -> bool {
    beta * lattice.time().horizon() <= MAX_BETA_T
}

fn check_betas(betas: &[f64]) -> Result<()> {
    if betas.is_empty() || betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(Error::input("β grid must be nonempty, finite and nonnegative"));
    }
    Ok(())
}

/// `E[|X_N|²]` for a field given on the terminal layer.
fn terminal_second_moment(lattice: &Lattice, layout: &Layout, x: &Field) -> Result<f64> {
    let n = lattice.steps();
    let sq: Vec<f64> = (0..layout.layer_len(n)).map(|node| x.norm_sq(n, node)).collect();
    expectation_of_layer(lattice, layout, n, &sq)
}

/// Two solved G-BSDEs on one lattice with the driver values at each
/// solution.
pub struct SolvedPair {
    pub first: BsdeSolution,
    pub second: BsdeSolution,
    pub reports: [PicardReport; 2],
    delta_f: Field,
    delta_g: Field,
}

impl SolvedPair {
    pub fn solve(
        params1: &GBsdeParams<'_>,
        params2: &GBsdeParams<'_>,
        lattice: &Lattice,
        settings: &PicardSettings,
    ) -> Result<Self> {
        let (first, r1) = solve_gbsde(params1, lattice, settings)?;
        let (second, r2) = solve_gbsde(params2, lattice, settings)?;
        if first.layout != second.layout || first.components() != second.components() {
            return Err(Error::input("both parameter sets must share components and monitoring time"));
        }
        let t1 = crate::solver::tabulate(params1, lattice, &first.layout, &first.y, &first.z, &first.eta)?;
        let t2 = crate::solver::tabulate(params2, lattice, &second.layout, &second.y, &second.z, &second.eta)?;
        Ok(Self {
            delta_f: t1.f.sub(&t2.f)?,
            delta_g: t1.g.sub(&t2.g)?,
            first,
            second,
            reports: [r1, r2],
        })
    }

    fn layout(&self) -> &Layout {
        &self.first.layout
    }
}

/// Both sides of the three estimates at one `β`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AprioriRow {
    pub beta: f64,
    pub delta_y: f64,
    pub delta_z: f64,
    pub delta_eta: f64,
    /// `e^{βT} E|δY_T|²`.
    pub terminal: f64,
    /// `‖δf‖² / μ²`.
    pub f_term: f64,
    /// `σ̄²_max ‖δg‖² / ν²`.
    pub g_term: f64,
    pub bracket: f64,
    /// Ratio `C(β)` built from `δY`, `δη`; `None` when `‖δY‖ = 0`.
    pub c_beta: Option<f64>,
    /// Verdicts for `δY`, `δZ`, `δη` under the printed constants.
    pub printed: [bool; 3],
    /// Verdicts under `5/σ̲²_min` for all three.
    pub conservative: [bool; 3],
}

impl AprioriRow {
    pub fn printed_pass(&self) -> bool {
        self.printed.iter().all(|&b| b)
    }

    pub fn conservative_pass(&self) -> bool {
        self.conservative.iter().all(|&b| b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AprioriReport {
    pub rows: Vec<AprioriRow>,
    /// Grid values with `βT > 700`.
    pub skipped: Vec<f64>,
    /// `1/σ̲_min`, `3/σ̲_min`, `1/σ̲²_min`.
    pub printed_constants: [f64; 3],
    /// `5/σ̲²_min`.
    pub conservative_constant: f64,
    /// Smallest scanned `β` passing under the conservative constants.
    pub beta0: Option<f64>,
    /// Every scanned `β ≥ β₀` passes as well.
    pub monotone_from_beta0: bool,
    /// Smallest scanned `β` passing under the printed constants.
    pub printed_beta0: Option<f64>,
    /// `δY` vanishes while `δη` does not.
    pub hypothesis_ii_violated: bool,
    pub mu: f64,
    pub nu: f64,
}

/// Evaluates both sides of the three estimates on every `β` of the grid.
pub fn apriori_from(pair: &SolvedPair, lattice: &Lattice, betas: &[f64], mu: f64, nu: f64) -> Result<AprioriReport> {
    check_betas(betas)?;
    if !(mu > 0.0 && nu > 0.0) {
        return Err(Error::input("μ and ν must be positive"));
    }
    let layout = pair.layout();
    let vol = lattice.volatility();
    let s2 = vol.lower_min();
    let printed_constants = [1.0 / sqrt(s2), 3.0 / sqrt(s2), 1.0 / s2];
    let conservative_constant = 5.0 / s2;
    let (a, b) = (&pair.first, &pair.second);
    let dy = a.y.sub(&b.y)?;
    let dz = a.z.sub(&b.z)?;
    let deta = a.eta.sub(&b.eta)?;
    let terminal = terminal_second_moment(lattice, layout, &dy)?;
    let n = a.components();
    let d = lattice.dim();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut hyp = false;
    for &beta in betas {
        if !beta_fits(lattice, beta) {
            skipped.push(beta);
            continue;
        }
        let w = time_weights(lattice.time(), beta)?;
        let ny = weighted_integral(lattice, layout, &dy, &w, 0)?;
        let nz = weighted_integral(lattice, layout, &dz, &w, 0)?;
        let ne = weighted_integral(lattice, layout, &deta, &w, 0)?;
        let nf = weighted_integral(lattice, layout, &pair.delta_f, &w, 0)?;
        let ng = weighted_integral(lattice, layout, &pair.delta_g, &w, 0)?;
        let term = exp(beta * lattice.time().horizon()) * terminal;
        let f_term = nf / (mu * mu);
        let g_term = vol.upper_max() * ng / (nu * nu);
        let bracket = term + f_term + g_term;
        let c_beta = if ny > 0.0 {
            // 2w δY·δG − w δY·(δη:σ²) as a σ-affine running cost
            let cost = |k: usize, node: usize, _c: usize, slope: &mut [f64]| {
                if k >= lattice.steps() {
                    return 0.0;
                }
                let y = dy.get(k, node);
                let (e1, e2) = (a.eta.get(k, node), b.eta.get(k, node));
                let de = deta.get(k, node);
                let mut acc = 0.0;
                slope.fill(0.0);
                for i in 0..n {
                    let dg = vol.g_of_diag(&e1[i * d..(i + 1) * d]) - vol.g_of_diag(&e2[i * d..(i + 1) * d]);
                    acc += 2.0 * w[k] * y[i] * dg;
                    for j in 0..d {
                        slope[j] -= w[k] * y[i] * de[i * d + j];
                    }
                }
                acc
            };
            let num = expected_path_integral(lattice, layout, &cost)?;
            Some((num + s2 * ne) / ny)
        } else {
            None
        };
        if ny <= 1e-24 && ne > 1e-16 {
            hyp = true;
        }
        let lhs = [ny, nz, ne];
        let mut printed = [false; 3];
        let mut conservative = [false; 3];
        for i in 0..3 {
            printed[i] = holds(lhs[i], printed_constants[i] * bracket);
            conservative[i] = holds(lhs[i], conservative_constant * bracket);
        }
        rows.push(AprioriRow {
            beta,
            delta_y: ny,
            delta_z: nz,
            delta_eta: ne,
            terminal: term,
            f_term,
            g_term,
            bracket,
            c_beta,
            printed,
            conservative,
        });
    }
    let beta0 = rows.iter().find(|r| r.conservative_pass()).map(|r| r.beta);
    let monotone_from_beta0 = beta0.is_some_and(|b0| rows.iter().filter(|r| r.beta >= b0).all(AprioriRow::conservative_pass));
    let printed_beta0 = rows.iter().find(|r| r.printed_pass()).map(|r| r.beta);
    Ok(AprioriReport {
        rows,
        skipped,
        printed_constants,
        conservative_constant,
        beta0,
        monotone_from_beta0,
        printed_beta0,
        hypothesis_ii_violated: hyp,
        mu,
        nu,
    })
}

/// Solves both G-BSDEs and runs [`apriori_from`].
pub fn apriori_check(
    params1: &GBsdeParams<'_>,
    params2: &GBsdeParams<'_>,
    lattice: &Lattice,
    betas: &[f64],
    mu: f64,
    nu: f64,
    settings: &PicardSettings,
) -> Result<AprioriReport> {
    let pair = SolvedPair::solve(params1, params2, lattice, settings)?;
    apriori_from(&pair, lattice, betas, mu, nu)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupEstimateReport {
    pub beta: f64,
    /// Upper estimate of `E[sup_t e^{βt}|δY_t|²]`.
    pub lhs: f64,
    /// `3 [e^{βT}E|δY_T|² + ‖δf‖²/μ² + σ̄²_max‖δg‖²/ν²]`.
    pub rhs: f64,
    pub holds: bool,
    /// Monte Carlo estimate (mean plus three standard errors) rather than
    /// a lattice upper bound.
    pub approximate: bool,
}

/// `sup_P E_P[max_k X_k]` for `X_k = e^{βt_k}|δY_k|²`, by backward induction
/// over the running maximum rounded up to [`SUP_LEVELS`] levels.
fn running_max_dp(lattice: &Lattice, layout: &Layout, x: &[Vec<f64>]) -> Result<f64> {
    let top = x.iter().flatten().fold(0.0_f64, |m, v| m.max(*v));
    if top == 0.0 {
        return Ok(0.0);
    }
    let levels = SUP_LEVELS + 1;
    let lev = |v: f64| (ceil(v / top * SUP_LEVELS as f64) as usize).min(SUP_LEVELS);
    let value = |l: usize| top * l as f64 / SUP_LEVELS as f64;
    let steps = lattice.steps();
    let mut layer = vec![0.0; layout.layer_len(steps) * levels];
    par::for_each_chunk(&mut layer, levels, |node, out| {
        let own = lev(x[steps][node]);
        for (l, o) in out.iter_mut().enumerate() {
            *o = value(l.max(own));
        }
    });
    for k in (0..steps).rev() {
        let w = step_values(lattice, layout, k, &layer, levels)?;
        let mut next = vec![0.0; layout.layer_len(k) * levels];
        par::for_each_chunk(&mut next, levels, |node, out| {
            let own = lev(x[k][node]);
            for (l, o) in out.iter_mut().enumerate() {
                *o = w[node * levels + l.max(own)];
            }
        });
        layer = next;
    }
    Ok(layer[layout.origin() * levels])
}

fn running_max_mc(lattice: &Lattice, layout: &Layout, x: &[Vec<f64>], seed: u64) -> Result<f64> {
    let vol = lattice.volatility();
    let hi = ConstantControl(vol.upper().to_vec());
    let lo = ConstantControl(vol.lower().to_vec());
    let corners: Vec<RandomCornerControl> = (0..SUP_MC_CONTROLS)
        .map(|r| RandomCornerControl::new(lattice, seed.wrapping_add(r)))
        .collect();
    let mut controls: Vec<&dyn LatticeControl> = vec![&hi, &lo];
    controls.extend(corners.iter().map(|c| c as &dyn LatticeControl));
    let mut best = 0.0_f64;
    for (ci, ctl) in controls.into_iter().enumerate() {
        let samples = par::map(SUP_MC_PATHS, |i| -> Result<f64> {
            let mut r = path_rng(seed, (ci * SUP_MC_PATHS + i) as u64);
            let mut m = x[0][layout.origin()];
            walk_path(lattice, layout, ctl, &mut r, |s| m = m.max(x[s.k + 1][s.child]))?;
            Ok(m)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let e = McEstimate::from_samples(samples.iter().copied());
        best = best.max(e.mean + 3.0 * e.std_error);
    }
    Ok(best)
}

/// Compares `E[sup_t e^{βt}|δY_t|²]` with three times the bracket of the
/// a-priori estimate. One-dimensional Markov lattices use an exact
/// running-maximum induction; other layouts fall back to Monte Carlo.
pub fn sup_estimate_from(pair: &SolvedPair, lattice: &Lattice, beta: f64, mu: f64, nu: f64, seed: u64) -> Result<SupEstimateReport> {
    if !beta_fits(lattice, beta) {
        return Err(Error::Overflow(beta * lattice.time().horizon()));
    }
    let row = apriori_from(pair, lattice, &[beta], mu, nu)?.rows[0];
    let layout = pair.layout();
    let dy = pair.first.y.sub(&pair.second.y)?;
    let x: Vec<Vec<f64>> = (0..=lattice.steps())
        .map(|k| {
            let e = exp(beta * lattice.time().time(k));
            (0..layout.layer_len(k)).map(|node| e * dy.norm_sq(k, node)).collect()
        })
        .collect();
    let exact = lattice.dim() == 1 && layout.monitor_step().is_none();
    let lhs = if exact {
        running_max_dp(lattice, layout, &x)?
    } else {
        running_max_mc(lattice, layout, &x, seed)?
    };
    let rhs = 3.0 * row.bracket;
    Ok(SupEstimateReport {
        beta,
        lhs,
        rhs,
        holds: holds(lhs, rhs),
        approximate: !exact,
    })
}

pub fn sup_estimate_check(
    params1: &GBsdeParams<'_>,
    params2: &GBsdeParams<'_>,
    lattice: &Lattice,
    beta: f64,
    mu: f64,
    nu: f64,
    settings: &PicardSettings,
) -> Result<SupEstimateReport> {
    let pair = SolvedPair::solve(params1, params2, lattice, settings)?;
    sup_estimate_from(&pair, lattice, beta, mu, nu, 0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundRow {
    pub beta: f64,
    pub m: f64,
    pub z: f64,
    pub eta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationBoundReport {
    /// `E[|ξ|²]`.
    pub second_moment: f64,
    pub rows: Vec<BoundRow>,
    pub skipped: Vec<f64>,
    /// Smallest scanned `β` that passes.
    pub beta0: Option<f64>,
}

impl RepresentationBoundReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

fn norm_triple(lattice: &Lattice, layout: &Layout, y: &Field, z: &Field, eta: &Field, w: &[f64]) -> Result<[f64; 3]> {
    Ok([
        weighted_integral(lattice, layout, y, w, 0)?,
        weighted_integral(lattice, layout, z, w, 0)?,
        weighted_integral(lattice, layout, eta, w, 0)?,
    ])
}

/// `‖M‖² + ‖Z‖² + ‖η‖² ≤ 5/σ̲²_min e^{βT} E[|ξ|²]` on every `β` of the grid.
pub fn representation_bound_check(xi: &dyn TerminalFunctional, lattice: &Lattice, betas: &[f64]) -> Result<RepresentationBoundReport> {
    check_betas(betas)?;
    let s = represent_martingale(xi, lattice)?;
    let second_moment = terminal_second_moment(lattice, &s.layout, &s.y)?;
    let c = 5.0 / lattice.volatility().lower_min();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &beta in betas {
        if !beta_fits(lattice, beta) {
            skipped.push(beta);
            continue;
        }
        let w = time_weights(lattice.time(), beta)?;
        let [m, z, eta] = norm_triple(lattice, &s.layout, &s.y, &s.z, &s.eta, &w)?;
        let lhs = m + z + eta;
        let rhs = c * exp(beta * lattice.time().horizon()) * second_moment;
        rows.push(BoundRow {
            beta,
            m,
            z,
            eta,
            lhs,
            rhs,
            holds: holds(lhs, rhs),
        });
    }
    let beta0 = rows.iter().find(|r| r.holds).map(|r| r.beta);
    Ok(RepresentationBoundReport {
        second_moment,
        rows,
        skipped,
        beta0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CauchyRow {
    pub m: usize,
    pub n: usize,
    /// `‖ΔM‖² + ‖ΔZ‖² + ‖Δη‖²` with weight `e^{βs}`.
    pub lhs_weighted: f64,
    /// Same without weight.
    pub lhs: f64,
    /// `E[|ξᵐ − ξⁿ|²]`.
    pub terminal_gap: f64,
    /// `e^{βT} 5/σ̲²_min E[|ξᵐ − ξⁿ|²]`.
    pub rhs: f64,
    pub holds_weighted: bool,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CauchyReport {
    pub beta: f64,
    pub pairs: Vec<CauchyRow>,
}

impl CauchyReport {
    pub fn all_hold(&self) -> bool {
        self.pairs.iter().all(|r| r.holds && r.holds_weighted)
    }
}

/// Representation distances for every pair of a terminal sequence against
/// the bound with a common `β`.
pub fn cauchy_sequence_check(seq: &[&dyn TerminalFunctional], lattice: &Lattice, beta: f64) -> Result<CauchyReport> {
    if seq.len() < 2 {
        return Err(Error::input("Cauchy check needs at least two terminal values"));
    }
    if !(beta >= 0.0) || !beta_fits(lattice, beta) {
        return Err(Error::Overflow(beta * lattice.time().horizon()));
    }
    let sols = seq
        .iter()
        .map(|xi| represent_martingale(*xi, lattice))
        .collect::<Result<Vec<_>>>()?;
    let layout = &sols[0].layout;
    if sols.iter().any(|s| s.layout != *layout || s.components() != sols[0].components()) {
        return Err(Error::input("sequence members must share components and monitoring time"));
    }
    let w = time_weights(lattice.time(), beta)?;
    let w0 = time_weights(lattice.time(), 0.0)?;
    let c = 5.0 / lattice.volatility().lower_min() * exp(beta * lattice.time().horizon());
    let mut pairs = Vec::new();
    for m in 0..sols.len() {
        for n in m + 1..sols.len() {
            let (a, b) = (&sols[m], &sols[n]);
            let (dy, dz, de) = (a.y.sub(&b.y)?, a.z.sub(&b.z)?, a.eta.sub(&b.eta)?);
            let lw: f64 = norm_triple(lattice, layout, &dy, &dz, &de, &w)?.iter().sum();
            let l0: f64 = norm_triple(lattice, layout, &dy, &dz, &de, &w0)?.iter().sum();
            let gap = terminal_second_moment(lattice, layout, &dy)?;
            let rhs = c * gap;
            pairs.push(CauchyRow {
                m,
                n,
                lhs_weighted: lw,
                lhs: l0,
                terminal_gap: gap,
                rhs,
                holds_weighted: holds(lw, rhs),
                holds: holds(l0, rhs),
            });
        }
    }
    Ok(CauchyReport { beta, pairs })
}
