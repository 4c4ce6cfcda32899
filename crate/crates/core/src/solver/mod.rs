//! Martingale representation of conditional G-expectations and G-BSDEs
//!
//! `Y_t = ξ + ∫f ds + ∫g : d⟨B⟩ − ∫Z dB − (K_T − K_t)`,
//! `K_t = ∫G(η) ds − ½∫η : d⟨B⟩`,
//!
//! solved on the state lattice by Picard iteration. `(Z, η)` at a node are
//! read off the one-step children of `Y`: first and second differences
//! along every axis, so that the backward recursion and the pathwise
//! identity above agree exactly on lattice paths.

mod check;
mod driver;
mod picard;

pub use check::{
    classical_oracle, k_martingale_check, residual_check, KMartingaleReport, ResidualReport,
    ORACLE_MAX_ITER,
};
pub use driver::{Driver, DriverSpec, FnDriver};
pub use picard::{solve_gbsde, PicardReport, PicardSettings, BETA_SEARCH_GRID};

use alloc::vec;

use crate::error::{Error, Result};
use crate::gtensor::VolatilityBox;
use crate::par;
use crate::scenario::{
    conditional_expectation_field, Field, Lattice, Layout, RunningCost, TerminalFunctional,
    MAX_LATTICE_DIM,
};

/// `(ξ, f, g)` with a common Lipschitz constant `C`.
#[derive(Clone, Copy)]
pub struct GBsdeParams<'a> {
    pub xi: &'a dyn TerminalFunctional,
    pub f: &'a dyn Driver,
    pub g: &'a dyn Driver,
    pub lipschitz: f64,
    dim: usize,
}

impl<'a> GBsdeParams<'a> {
    /// Takes `C` as the larger declared constant of `f` and `g` and
    /// spot-checks both against it on random probes.
    pub fn new(xi: &'a dyn TerminalFunctional, f: &'a dyn Driver, g: &'a dyn Driver, dim: usize) -> Result<Self> {
        let n = xi.components();
        let c = f.lipschitz(n, dim, n).max(g.lipschitz(n, dim, n * dim));
        Self::with_lipschitz(xi, f, g, dim, c)
    }

    pub fn with_lipschitz(
        xi: &'a dyn TerminalFunctional,
        f: &'a dyn Driver,
        g: &'a dyn Driver,
        dim: usize,
        lipschitz: f64,
    ) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::input("Lipschitz constant must be finite and nonnegative"));
        }
        if dim == 0 || dim > MAX_LATTICE_DIM {
            return Err(Error::Capacity {
                what: "driver dimension",
                value: dim,
                cap: MAX_LATTICE_DIM,
            });
        }
        let n = xi.components();
        driver::spot_check(f, lipschitz, n, dim, n, 10.0)?;
        driver::spot_check(g, lipschitz, n, dim, n * dim, 10.0)?;
        Ok(Self {
            xi,
            f,
            g,
            lipschitz,
            dim,
        })
    }

    pub fn components(&self) -> usize {
        self.xi.components()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_lattice(&self, lattice: &Lattice) -> Result<()> {
        if lattice.dim() != self.dim {
            return Err(Error::Dimension {
                what: "driver dimension",
                expected: lattice.dim(),
                found: self.dim,
            });
        }
        Ok(())
    }
}

/// Input `(y, z, ζ)` of one Picard step.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    /// Layers `0..=N`, width `n`.
    pub y: Field,
    /// Layers `0..N`, width `d·n`, `z[j * n + i]`.
    pub z: Field,
    /// Layers `0..N`, width `n·d`, `η[i * d + j]`.
    pub eta: Field,
}

impl Iterate {
    pub fn zeros(layout: &Layout, n: usize) -> Result<Self> {
        let d = layout.dim();
        let steps = layout.steps();
        Ok(Self {
            y: Field::zeros(layout, n, steps + 1)?,
            z: Field::zeros(layout, d * n, steps)?,
            eta: Field::zeros(layout, n * d, steps)?,
        })
    }

    fn check_shape(&self, layout: &Layout, n: usize) -> Result<()> {
        let d = layout.dim();
        let steps = layout.steps();
        let ok = self.y.width() == n
            && self.y.layers() == steps + 1
            && self.z.width() == d * n
            && self.z.layers() == steps
            && self.eta.width() == n * d
            && self.eta.layers() == steps
            && (0..steps).all(|k| self.z.layer(k).len() == layout.layer_len(k) * d * n);
        if ok {
            Ok(())
        } else {
            Err(Error::input("initial iterate does not match the lattice layout"))
        }
    }
}

/// `(Y, Z, η)` with the `K` increments and the maximising scenario per node.
#[derive(Clone, Debug, PartialEq)]
pub struct BsdeSolution {
    pub layout: Layout,
    /// `Y`, which is `M = E_t[ξ]` for a representation run.
    pub y: Field,
    pub z: Field,
    pub eta: Field,
    /// `(G(η) − ½η : σ*²)Δt` at the maximising `σ*`.
    pub k_increments: Field,
    pub policy: Field<u32>,
    /// Nodes whose stencil was clamped at the span boundary.
    pub clamped_nodes: usize,
}

impl BsdeSolution {
    pub fn components(&self) -> usize {
        self.y.width()
    }

    pub fn y0(&self) -> &[f64] {
        self.y.get(0, self.layout.origin())
    }

    pub fn to_iterate(&self) -> Iterate {
        Iterate {
            y: self.y.clone(),
            z: self.z.clone(),
            eta: self.eta.clone(),
        }
    }

    pub fn min_k_increment(&self) -> f64 {
        (0..self.k_increments.layers())
            .flat_map(|k| self.k_increments.layer(k).iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// `f` and `g` tabulated on layers `0..N` at an iterate.
pub(crate) struct DriverTables {
    pub(crate) f: Field,
    pub(crate) g: Field,
}

pub(crate) fn tabulate(
    params: &GBsdeParams<'_>,
    lattice: &Lattice,
    layout: &Layout,
    y: &Field,
    z: &Field,
    eta: &Field,
) -> Result<DriverTables> {
    let n = params.components();
    let d = lattice.dim();
    let steps = lattice.steps();
    let mut f = Field::zeros(layout, n, steps)?;
    let mut g = Field::zeros(layout, n * d, steps)?;
    for k in 0..steps {
        let t = lattice.time().time(k);
        let args = |node: usize| (y.get(k, node), z.get(k, node), eta.get(k, node));
        par::for_each_chunk(f.layer_mut(k), n, |node, out| {
            let (a, b, c) = args(node);
            params.f.eval(t, a, b, c, out);
        });
        par::for_each_chunk(g.layer_mut(k), n * d, |node, out| {
            let (a, b, c) = args(node);
            params.g.eval(t, a, b, c, out);
        });
        for (table, width) in [(&f, n), (&g, n * d)] {
            if let Some(i) = table.layer(k).iter().position(|v| !v.is_finite()) {
                let (a, b, c) = args(i / width);
                return Err(Error::Driver {
                    t,
                    y: a.to_vec(),
                    z: b.to_vec(),
                    eta: c.to_vec(),
                });
            }
        }
    }
    Ok(DriverTables { f, g })
}

/// Reads `(Z, η, K)` at every node of layers `0..N` from the children of
/// `Y`, adding `2g` to the second differences.
pub(crate) fn extract(
    lattice: &Lattice,
    layout: &Layout,
    y: &Field,
    policy: &Field<u32>,
    g: Option<&Field>,
) -> Result<(Field, Field, Field, usize)> {
    let n = y.width();
    let d = lattice.dim();
    let steps = lattice.steps();
    let dt = lattice.dt();
    let vol: &VolatilityBox = lattice.volatility();
    let mut z = Field::zeros(layout, d * n, steps)?;
    let mut eta = Field::zeros(layout, n * d, steps)?;
    let mut kinc = Field::zeros(layout, n, steps)?;
    let mut clamped = 0;
    let mut w = [0.0; MAX_LATTICE_DIM];
    for (j, wj) in w.iter_mut().enumerate().take(d) {
        *wj = lattice.width(j);
    }
    let stride = d * n + n * d + n;
    for k in 0..steps {
        let len = layout.layer_len(k);
        let next = y.layer(k + 1);
        let mut buf = vec![0.0; len * stride];
        par::for_each_chunk(&mut buf, stride, |node, out| {
            let ch = layout.children(k, node);
            let (zs, rest) = out.split_at_mut(d * n);
            let (es, ks) = rest.split_at_mut(n * d);
            for c in 0..n {
                let y0 = next[ch.stay * n + c];
                for j in 0..d {
                    let (yp, ym) = (next[ch.up[j] * n + c], next[ch.down[j] * n + c]);
                    zs[j * n + c] = (yp - ym) / (2.0 * w[j]);
                    let gj = g.map_or(0.0, |g| g.get(k, node)[c * d + j]);
                    es[c * d + j] = (yp + ym - 2.0 * y0) / (w[j] * w[j]) + 2.0 * gj;
                }
                let e = &es[c * d..(c + 1) * d];
                let s = lattice.scenario(policy.get(k, node)[c]);
                let quad: f64 = e.iter().zip(s).map(|(a, b)| a * b).sum();
                ks[c] = (vol.g_of_diag(e) - 0.5 * quad) * dt;
            }
        });
        for node in 0..len {
            let src = &buf[node * stride..(node + 1) * stride];
            z.get_mut(k, node).copy_from_slice(&src[..d * n]);
            eta.get_mut(k, node).copy_from_slice(&src[d * n..d * n + n * d]);
            kinc.get_mut(k, node).copy_from_slice(&src[d * n + n * d..]);
            if layout.children(k, node).clamped {
                clamped += 1;
            }
        }
    }
    Ok((z, eta, kinc, clamped))
}

/// `Φ` applied to tabulated drivers, or the plain representation when
/// `tables` is `None`.
pub(crate) fn step_with(
    lattice: &Lattice,
    xi: &dyn TerminalFunctional,
    tables: Option<&DriverTables>,
) -> Result<BsdeSolution> {
    let d = lattice.dim();
    let dt = lattice.dt();
    let cost = tables.map(|t| {
        move |k: usize, node: usize, c: usize, slope: &mut [f64]| {
            let g = &t.g.get(k, node)[c * d..(c + 1) * d];
            for (s, gj) in slope.iter_mut().zip(g) {
                *s = gj * dt;
            }
            t.f.get(k, node)[c] * dt
        }
    });
    let field = conditional_expectation_field(lattice, xi, cost.as_ref().map(|c| c as &dyn RunningCost))?;
    let (z, eta, k_increments, clamped_nodes) =
        extract(lattice, &field.layout, &field.values, &field.policy, tables.map(|t| &t.g))?;
    Ok(BsdeSolution {
        layout: field.layout,
        y: field.values,
        z,
        eta,
        k_increments,
        policy: field.policy,
        clamped_nodes,
    })
}

/// `M = E_t[ξ]` with its `(Z, η, K)`.
pub fn represent_martingale(xi: &dyn TerminalFunctional, lattice: &Lattice) -> Result<BsdeSolution> {
    step_with(lattice, xi, None)
}

/// `Φ(y, z, ζ)`: the conditional G-expectation of
/// `ξ + Σ [f Δt + g : Δ⟨B⟩]` with drivers frozen at the input iterate.
pub fn picard_step(input: &Iterate, params: &GBsdeParams<'_>, lattice: &Lattice) -> Result<BsdeSolution> {
    params.check_lattice(lattice)?;
    let layout = lattice.layout_for(params.xi)?;
    input.check_shape(&layout, params.components())?;
    let tables = tabulate(params, lattice, &layout, &input.y, &input.z, &input.eta)?;
    step_with(lattice, params.xi, Some(&tables))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtensor::VolatilityBox;
    use crate::scenario::{build_lattice, Payoff, PayoffKind, SpaceGrid, TimeGrid};

    pub(crate) fn lattice(lo: f64, hi: f64, steps: usize, points: usize) -> Lattice {
        let vol = VolatilityBox::uniform(1, lo, hi, 5).unwrap();
        let space = SpaceGrid::for_box(points, 6.0, &vol, 1.0).unwrap();
        build_lattice(TimeGrid::new(1.0, steps).unwrap(), space, vol).unwrap()
    }

    fn central<'a>(lat: &'a Lattice, lay: &Layout, k: usize) -> impl Iterator<Item = (usize, f64)> + 'a {
        let half = lat.space().half_width();
        let lay = lay.clone();
        (0..lay.layer_len(k)).filter_map(move |node| {
            let mut x = [0.0];
            lay.coords(lat.space(), node, &mut x);
            (x[0].abs() <= 0.5 * half).then_some((node, x[0]))
        })
    }

    #[test]
    fn constant_terminal_has_trivial_representation() {
        let lat = lattice(1.0, 4.0, 20, 121);
        let s = represent_martingale(&Payoff::constant(2.5).unwrap(), &lat).unwrap();
        for k in 0..20 {
            assert!(s.y.layer(k).iter().all(|&v| v == 2.5));
            assert!(s.z.layer(k).iter().all(|&v| v == 0.0));
            assert!(s.eta.layer(k).iter().all(|&v| v == 0.0));
            assert!(s.k_increments.layer(k).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_terminal_has_unit_z() {
        let lat = lattice(1.0, 4.0, 40, 201);
        let s = represent_martingale(&Payoff::of(PayoffKind::Linear).unwrap(), &lat).unwrap();
        for k in [0, 17, 39] {
            // the clamped span boundary leaks about 1e-3 into the central half
            for (node, x) in central(&lat, &s.layout, k) {
                assert!((s.y.get(k, node)[0] - x).abs() < 5e-3);
                assert!((s.z.get(k, node)[0] - 1.0).abs() < 5e-3);
                assert!(s.eta.get(k, node)[0].abs() < 1e-2);
                assert!(s.k_increments.get(k, node)[0].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadratic_terminals_match_closed_forms() {
        let lat = lattice(1.0, 4.0, 100, 401);
        for (kind, sig, sign) in [(PayoffKind::Quadratic, 4.0, 1.0), (PayoffKind::NegQuadratic, 1.0, -1.0)] {
            let s = represent_martingale(&Payoff::of(kind).unwrap(), &lat).unwrap();
            for k in [0, 50, 99] {
                let tau = 1.0 - lat.time().time(k);
                for (node, x) in central(&lat, &s.layout, k) {
                    assert!((s.y.get(k, node)[0] - sign * (x * x + sig * tau)).abs() < 0.05);
                    // Z and η see Y one step later
                    assert!((s.z.get(k, node)[0] - sign * 2.0 * x).abs() < 0.05);
                    assert!((s.eta.get(k, node)[0] - sign * 2.0).abs() < 0.1);
                    assert!(s.k_increments.get(k, node)[0].abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn k_increments_are_nonnegative() {
        let lat = lattice(1.0, 4.0, 60, 241);
        for kind in [
            PayoffKind::Abs,
            PayoffKind::Butterfly { lower: -1.0, upper: 1.0 },
            PayoffKind::Call { strike: 0.3 },
        ] {
            let s = represent_martingale(&Payoff::of(kind).unwrap(), &lat).unwrap();
            assert!(s.min_k_increment() >= -1e-10, "{kind:?}");
            assert!(s.clamped_nodes > 0);
        }
    }

    #[test]
    fn zero_drivers_reduce_to_representation() {
        let lat = lattice(1.0, 4.0, 30, 161);
        let xi = Payoff::of(PayoffKind::Abs).unwrap();
        let zero = DriverSpec::Zero;
        let p = GBsdeParams::new(&xi, &zero, &zero, 1).unwrap();
        let it = Iterate::zeros(&lat.markov_layout(), 1).unwrap();
        let a = picard_step(&it, &p, &lat).unwrap();
        let b = represent_martingale(&xi, &lat).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn qv_constant_driver_follows_upper_variance() {
        // ξ = 0, g ≡ γ: Y_t = γσ̄²(T − t)
        let lat = lattice(1.0, 4.0, 40, 201);
        let xi = Payoff::constant(0.0).unwrap();
        let g = DriverSpec::QvConstant { gamma: 0.3 };
        let p = GBsdeParams::new(&xi, &DriverSpec::Zero, &g, 1).unwrap();
        let it = Iterate::zeros(&lat.markov_layout(), 1).unwrap();
        let s = picard_step(&it, &p, &lat).unwrap();
        for k in [0, 20] {
            let want = 0.3 * 4.0 * (1.0 - lat.time().time(k));
            assert!(s.y.layer(k).iter().all(|v| (v - want).abs() < 1e-12));
        }
        // η = 2γ, so K vanishes
        assert!(s.eta.layer(0).iter().all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn driver_nan_carries_context() {
        let lat = lattice(1.0, 4.0, 10, 81);
        let xi = Payoff::of(PayoffKind::Linear).unwrap();
        let bad = FnDriver::new(0.0, |t: f64, _y: &[f64], _z: &[f64], _e: &[f64], o: &mut [f64]| {
            o[0] = if t > 0.5 { f64::NAN } else { 0.0 };
        });
        let p = GBsdeParams::with_lipschitz(&xi, &bad, &DriverSpec::Zero, 1, 0.0);
        // the spot check already sees the NaN
        assert!(matches!(p, Err(Error::Driver { .. })));
        let ok = FnDriver::new(0.0, |_t: f64, _y: &[f64], _z: &[f64], _e: &[f64], o: &mut [f64]| o.fill(0.0));
        let mut p = GBsdeParams::with_lipschitz(&xi, &ok, &DriverSpec::Zero, 1, 0.0).unwrap();
        p.f = &bad;
        let it = Iterate::zeros(&lat.markov_layout(), 1).unwrap();
        match picard_step(&it, &p, &lat) {
            Err(Error::Driver { t, y, .. }) => {
                assert!(t > 0.5);
                assert_eq!(y, vec![0.0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_iterate_is_rejected() {
        let lat = lattice(1.0, 4.0, 10, 81);
        let other = lattice(1.0, 4.0, 8, 81);
        let xi = Payoff::of(PayoffKind::Linear).unwrap();
        let p = GBsdeParams::new(&xi, &DriverSpec::Zero, &DriverSpec::Zero, 1).unwrap();
        let it = Iterate::zeros(&other.markov_layout(), 1).unwrap();
        assert!(picard_step(&it, &p, &lat).is_err());
    }
}
