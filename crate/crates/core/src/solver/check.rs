use alloc::vec;
use alloc::vec::Vec;

use super::{extract, tabulate, BsdeSolution, DriverTables, GBsdeParams};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::path_rng;
use crate::scenario::{
    terminal_layer, walk_path, Field, Lattice, LatticeControl, Layout, McEstimate,
    RandomCornerControl, Step, MAX_LATTICE_DIM,
};

/// Off-policy corner controls replayed by [`residual_check`].
const OFF_POLICY_CONTROLS: u64 = 4;

/// Largest number of local fixed-point sweeps per node in
/// [`classical_oracle`].
pub const ORACLE_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualReport {
    /// Largest `|Y_t − RHS_t|` along paths under the maximising scenario.
    pub on_policy_max: f64,
    /// Same along paths under random corner controls.
    pub off_policy_max: f64,
    /// Smallest `(G(η) − ½η : σ²)Δt` at the `σ²` actually used.
    pub min_compensated_k: f64,
    pub paths_per_control: usize,
    pub controls: usize,
}

struct PolicyOf<'a> {
    lattice: &'a Lattice,
    policy: &'a Field<u32>,
    component: usize,
}

impl LatticeControl for PolicyOf<'_> {
    fn sigma2(&self, k: usize, node: usize, out: &mut [f64]) {
        out.copy_from_slice(self.lattice.scenario(self.policy.get(k, node)[self.component]));
    }
}

struct Replay<'a> {
    lattice: &'a Lattice,
    layout: &'a Layout,
    sol: &'a BsdeSolution,
    tables: Option<&'a DriverTables>,
    component: usize,
}

impl Replay<'_> {
    fn g_of(&self, k: usize, node: usize) -> f64 {
        let d = self.lattice.dim();
        let c = self.component;
        self.lattice
            .volatility()
            .g_of_diag(&self.sol.eta.get(k, node)[c * d..(c + 1) * d])
    }

    /// `G(η)Δt − ½η : Δ⟨B⟩` and the compensated increment at the control.
    fn k_step(&self, s: &Step) -> (f64, f64) {
        let d = self.lattice.dim();
        let c = self.component;
        let eta = &self.sol.eta.get(s.k, s.node)[c * d..(c + 1) * d];
        let gdt = self.g_of(s.k, s.node) * self.lattice.dt();
        let path: f64 = (0..d).map(|j| eta[j] * s.dqv[j]).sum();
        let comp: f64 = (0..d).map(|j| eta[j] * s.sigma2[j]).sum();
        (gdt - 0.5 * path, gdt - 0.5 * comp * self.lattice.dt())
    }

    /// Full increment of the right-hand side over one step.
    fn increment(&self, s: &Step) -> f64 {
        let d = self.lattice.dim();
        let n = self.sol.components();
        let c = self.component;
        let dt = self.lattice.dt();
        let z = self.sol.z.get(s.k, s.node);
        let mut inc = self.k_step(s).0;
        for j in 0..d {
            inc -= z[j * n + c] * s.db[j];
        }
        if let Some(t) = self.tables {
            inc += t.f.get(s.k, s.node)[c] * dt;
            let g = &t.g.get(s.k, s.node)[c * d..(c + 1) * d];
            inc += (0..d).map(|j| g[j] * s.dqv[j]).sum::<f64>();
        }
        inc
    }

    /// Largest residual along one path and the smallest compensated `K`.
    fn path(&self, control: &dyn LatticeControl, seed: u64, stream: u64) -> Result<(f64, f64)> {
        let mut r = path_rng(seed, stream);
        let mut steps = Vec::with_capacity(self.lattice.steps());
        let last = walk_path(self.lattice, self.layout, control, &mut r, |s| steps.push(*s))?;
        let c = self.component;
        let n = self.sol.components();
        let steps_n = self.lattice.steps();
        let mut rhs = self.sol.y.get(steps_n, last)[c];
        let mut worst = 0.0_f64;
        let mut min_k = f64::INFINITY;
        for s in steps.iter().rev() {
            rhs += self.increment(s);
            min_k = min_k.min(self.k_step(s).1);
            worst = worst.max((self.sol.y.layer(s.k)[s.node * n + c] - rhs).abs());
        }
        Ok((worst, min_k))
    }
}

/// Replays lattice paths and measures
/// `|Y_t − [ξ + Σ(fΔt + g : Δ⟨B⟩ − Z ΔB + G(η)Δt − ½η : Δ⟨B⟩)]|`
/// with the drivers evaluated at the solution itself.
pub fn residual_check(
    solution: &BsdeSolution,
    params: Option<&GBsdeParams<'_>>,
    lattice: &Lattice,
    paths: usize,
    seed: u64,
) -> Result<ResidualReport> {
    let layout = &solution.layout;
    let tables = match params {
        Some(p) => {
            p.check_lattice(lattice)?;
            Some(tabulate(p, lattice, layout, &solution.y, &solution.z, &solution.eta)?)
        }
        None => None,
    };
    let n = solution.components();
    let mut on = 0.0_f64;
    let mut off = 0.0_f64;
    let mut min_k = f64::INFINITY;
    for c in 0..n {
        let replay = Replay {
            lattice,
            layout,
            sol: solution,
            tables: tables.as_ref(),
            component: c,
        };
        let policy = PolicyOf {
            lattice,
            policy: &solution.policy,
            component: c,
        };
        let mut controls: Vec<(&dyn LatticeControl, bool)> = vec![(&policy, true)];
        let corners: Vec<RandomCornerControl> = (0..OFF_POLICY_CONTROLS)
            .map(|r| RandomCornerControl::new(lattice, seed.wrapping_add(r + 1)))
            .collect();
        controls.extend(corners.iter().map(|x| (x as &dyn LatticeControl, false)));
        for (ci, (ctl, on_policy)) in controls.into_iter().enumerate() {
            let base = ((c * 64 + ci) * paths) as u64;
            let res = par::map(paths, |i| replay.path(ctl, seed, base + i as u64))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            for (r, k) in res {
                if on_policy {
                    on = on.max(r);
                } else {
                    off = off.max(r);
                }
                min_k = min_k.min(k);
            }
        }
    }
    Ok(ResidualReport {
        on_policy_max: on,
        off_policy_max: off,
        min_compensated_k: min_k,
        paths_per_control: paths,
        controls: 1 + OFF_POLICY_CONTROLS as usize,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMartingaleReport {
    pub component: usize,
    /// `E_P[−K_T]` per control; entry 0 is the maximising scenario.
    pub per_control: Vec<McEstimate>,
    /// Control with the largest mean.
    pub worst_control: usize,
    pub worst: McEstimate,
}

impl KMartingaleReport {
    /// The worst mean lies within `3` standard errors of zero.
    pub fn within_three_se(&self) -> bool {
        self.worst.mean.abs() <= 3.0 * self.worst.std_error + 1e-12
    }
}

/// Monte Carlo estimate of `sup_P E_P[−K_T]` over the maximising scenario
/// and `controls − 1` random corner controls.
pub fn k_martingale_check(
    solution: &BsdeSolution,
    lattice: &Lattice,
    controls: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<KMartingaleReport>> {
    if controls == 0 || paths == 0 {
        return Err(Error::input("need at least one control and one path"));
    }
    let layout = &solution.layout;
    let n = solution.components();
    let mut out = Vec::with_capacity(n);
    for c in 0..n {
        let replay = Replay {
            lattice,
            layout,
            sol: solution,
            tables: None,
            component: c,
        };
        let policy = PolicyOf {
            lattice,
            policy: &solution.policy,
            component: c,
        };
        let corners: Vec<RandomCornerControl> = (1..controls as u64)
            .map(|r| RandomCornerControl::new(lattice, seed.wrapping_add(r)))
            .collect();
        let mut ctls: Vec<&dyn LatticeControl> = vec![&policy];
        ctls.extend(corners.iter().map(|x| x as &dyn LatticeControl));
        let mut per_control = Vec::with_capacity(controls);
        for (ci, ctl) in ctls.into_iter().enumerate() {
            let base = ((c * controls + ci) * paths) as u64;
            let samples = par::map(paths, |i| -> Result<f64> {
                let mut r = path_rng(seed, base + i as u64);
                let mut k = 0.0;
                walk_path(lattice, layout, ctl, &mut r, |s| k += replay.k_step(s).0)?;
                Ok(-k)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            per_control.push(McEstimate::from_samples(samples.iter().copied()));
        }
        let (worst_control, worst) = per_control
            .iter()
            .enumerate()
            .fold((0, per_control[0]), |acc, (i, e)| if e.mean > acc.1.mean { (i, *e) } else { acc });
        out.push(KMartingaleReport {
            component: c,
            per_control,
            worst_control,
            worst,
        });
    }
    Ok(out)
}

/// Classical BSDE solver for a degenerate box: at every node the implicit
/// pair `η = D + 2g(t, Y, Z, η)`, `Y = E[Y_{k+1}] + fΔt + g : σ²Δt` is
/// solved by fixed-point sweeps, with `Z` and `D` read off the children.
pub fn classical_oracle(params: &GBsdeParams<'_>, lattice: &Lattice) -> Result<BsdeSolution> {
    params.check_lattice(lattice)?;
    let vol = lattice.volatility();
    if !vol.is_degenerate() {
        return Err(Error::Misuse("classical oracle needs a degenerate volatility box".into()));
    }
    let layout = lattice.layout_for(params.xi)?;
    let n = params.components();
    let d = lattice.dim();
    let steps = lattice.steps();
    let dt = lattice.dt();
    let sig = vol.lower();
    let mut y = Field::zeros(&layout, n, steps + 1)?;
    y.layer_mut(steps)
        .copy_from_slice(&terminal_layer(lattice, &layout, params.xi)?);
    let mut w = [0.0; MAX_LATTICE_DIM];
    for (j, wj) in w.iter_mut().enumerate().take(d) {
        *wj = lattice.width(j);
    }
    let mut z = Field::zeros(&layout, d * n, steps)?;
    let mut eta = Field::zeros(&layout, n * d, steps)?;
    for k in (0..steps).rev() {
        let t = lattice.time().time(k);
        let stride = n + d * n + n * d;
        let mut buf = vec![0.0; layout.layer_len(k) * stride];
        {
            let next = y.layer(k + 1);
            let results = par::map(layout.layer_len(k), |node| -> Result<Vec<f64>> {
                let ch = layout.children(k, node);
                let mut zs = vec![0.0; d * n];
                let mut dd = vec![0.0; n * d];
                let mut ey = vec![0.0; n];
                for c in 0..n {
                    let y0 = next[ch.stay * n + c];
                    ey[c] = y0;
                    for j in 0..d {
                        let (yp, ym) = (next[ch.up[j] * n + c], next[ch.down[j] * n + c]);
                        zs[j * n + c] = (yp - ym) / (2.0 * w[j]);
                        dd[c * d + j] = (yp + ym - 2.0 * y0) / (w[j] * w[j]);
                        ey[c] += 0.5 * sig[j] * dt * dd[c * d + j];
                    }
                }
                let mut yv = ey.clone();
                let mut ev = dd.clone();
                let mut fo = vec![0.0; n];
                let mut go = vec![0.0; n * d];
                let mut converged = false;
                for _ in 0..ORACLE_MAX_ITER {
                    params.f.eval(t, &yv, &zs, &ev, &mut fo);
                    params.g.eval(t, &yv, &zs, &ev, &mut go);
                    if fo.iter().chain(&go).any(|v| !v.is_finite()) {
                        return Err(Error::Driver {
                            t,
                            y: yv,
                            z: zs,
                            eta: ev,
                        });
                    }
                    let mut change = 0.0_f64;
                    let mut scale = 1.0_f64;
                    for c in 0..n {
                        let mut ny = ey[c] + fo[c] * dt;
                        for j in 0..d {
                            ny += go[c * d + j] * sig[j] * dt;
                            let ne = dd[c * d + j] + 2.0 * go[c * d + j];
                            change = change.max((ne - ev[c * d + j]).abs());
                            scale = scale.max(ne.abs());
                            ev[c * d + j] = ne;
                        }
                        change = change.max((ny - yv[c]).abs());
                        scale = scale.max(ny.abs());
                        yv[c] = ny;
                    }
                    if change <= 1e-15 * scale {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(Error::Convergence {
                        iterations: ORACLE_MAX_ITER,
                        distances: Vec::new(),
                    });
                }
                yv.extend(zs);
                yv.extend(ev);
                Ok(yv)
            });
            for (node, r) in results.into_iter().enumerate() {
                buf[node * stride..(node + 1) * stride].copy_from_slice(&r?);
            }
        }
        for node in 0..layout.layer_len(k) {
            let src = &buf[node * stride..(node + 1) * stride];
            y.get_mut(k, node).copy_from_slice(&src[..n]);
            z.get_mut(k, node).copy_from_slice(&src[n..n + d * n]);
            eta.get_mut(k, node).copy_from_slice(&src[n + d * n..]);
        }
    }
    let policy = Field::<u32>::zeros(&layout, n, steps)?;
    let (_, _, k_increments, clamped_nodes) = extract(lattice, &layout, &y, &policy, None)?;
    let mut kinc = k_increments;
    // K vanishes identically on a degenerate box
    for k in 0..steps {
        for node in 0..layout.layer_len(k) {
            let e = eta.get(k, node).to_vec();
            let out = kinc.get_mut(k, node);
            for c in 0..n {
                let ec = &e[c * d..(c + 1) * d];
                let quad: f64 = ec.iter().zip(sig).map(|(a, b)| a * b).sum();
                out[c] = (vol.g_of_diag(ec) - 0.5 * quad) * dt;
            }
        }
    }
    Ok(BsdeSolution {
        layout,
        y,
        z,
        eta,
        k_increments: kinc,
        policy,
        clamped_nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::lattice;
    use super::super::{represent_martingale, solve_gbsde, DriverSpec, PicardSettings};
    use super::*;
    use crate::gtensor::VolatilityBox;
    use crate::scenario::{build_lattice, Payoff, PayoffKind, SpaceGrid, TimeGrid};

    fn degenerate(s2: f64, steps: usize, points: usize) -> Lattice {
        let vol = VolatilityBox::degenerate(vec![s2]).unwrap();
        let space = SpaceGrid::for_box(points, 6.0, &vol, 1.0).unwrap();
        build_lattice(TimeGrid::new(1.0, steps).unwrap(), space, vol).unwrap()
    }

    #[test]
    fn residual_is_round_off_for_representations() {
        let lat = lattice(1.0, 4.0, 50, 241);
        for kind in [PayoffKind::Linear, PayoffKind::Quadratic, PayoffKind::Abs] {
            let s = represent_martingale(&Payoff::of(kind).unwrap(), &lat).unwrap();
            let r = residual_check(&s, None, &lat, 200, 7).unwrap();
            assert!(r.on_policy_max <= 1e-8, "{kind:?}: {r:?}");
            assert!(r.off_policy_max <= 1e-8, "{kind:?}: {r:?}");
            assert!(r.min_compensated_k >= -1e-10);
        }
        let c = represent_martingale(&Payoff::constant(1.0).unwrap(), &lat).unwrap();
        let r = residual_check(&c, None, &lat, 50, 7).unwrap();
        assert_eq!((r.on_policy_max, r.off_policy_max), (0.0, 0.0));
    }

    #[test]
    fn residual_of_picard_solution_tracks_tolerance() {
        let lat = lattice(1.0, 4.0, 50, 241);
        let xi = Payoff::of(PayoffKind::Quadratic).unwrap();
        let f = DriverSpec::LinearInY { r: -0.5 };
        let g = DriverSpec::QvConstant { gamma: 0.1 };
        let p = GBsdeParams::new(&xi, &f, &g, 1).unwrap();
        let settings = PicardSettings {
            tol: 1e-11,
            ..PicardSettings::default()
        };
        let (s, _) = solve_gbsde(&p, &lat, &settings).unwrap();
        let r = residual_check(&s, Some(&p), &lat, 200, 3).unwrap();
        assert!(r.on_policy_max < 1e-8, "{r:?}");
    }

    #[test]
    fn k_is_a_martingale_under_worst_case() {
        let lat = lattice(1.0, 4.0, 50, 241);
        let s = represent_martingale(&Payoff::of(PayoffKind::Abs).unwrap(), &lat).unwrap();
        let rep = k_martingale_check(&s, &lat, 16, 2_000, 5).unwrap();
        assert!(rep[0].within_three_se(), "{:?}", rep[0].worst);
        // off-policy controls drift K upwards
        assert!(rep[0].per_control[1..].iter().all(|e| e.mean <= 3.0 * e.std_error));
    }

    #[test]
    fn oracle_reproduces_heat_equation() {
        // ξ = B_T², σ² = 1: Y_t = B_t² + (T − t)
        let lat = degenerate(1.0, 50, 241);
        let xi = Payoff::of(PayoffKind::Quadratic).unwrap();
        let p = GBsdeParams::new(&xi, &DriverSpec::Zero, &DriverSpec::Zero, 1).unwrap();
        let s = classical_oracle(&p, &lat).unwrap();
        let mut x = [0.0];
        let node = s.layout.origin() + 3;
        s.layout.coords(lat.space(), node, &mut x);
        assert!((s.y.get(10, node)[0] - (x[0] * x[0] + 0.8)).abs() < 1e-9);
        assert!(s.min_k_increment().abs() < 1e-15);

        let one = Payoff::constant(0.0).unwrap();
        let f = DriverSpec::Constant { c: 1.0 };
        let p = GBsdeParams::new(&one, &f, &DriverSpec::Zero, 1).unwrap();
        let s = classical_oracle(&p, &lat).unwrap();
        assert!((s.y0()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_proper_box() {
        let lat = lattice(1.0, 4.0, 10, 81);
        let xi = Payoff::of(PayoffKind::Quadratic).unwrap();
        let p = GBsdeParams::new(&xi, &DriverSpec::Zero, &DriverSpec::Zero, 1).unwrap();
        assert!(matches!(classical_oracle(&p, &lat), Err(Error::Misuse(_))));
    }

    #[test]
    fn degenerate_box_solver_matches_oracle() {
        let lat = degenerate(2.0, 60, 241);
        let xi = Payoff::of(PayoffKind::Butterfly { lower: -1.0, upper: 1.0 }).unwrap();
        let f = DriverSpec::ClampedAffine {
            c0: 0.1,
            cy: -0.3,
            cz: 0.2,
            ceta: 0.0,
            lo: -1.0,
            hi: 1.0,
        };
        let g = DriverSpec::LinearInY { r: 0.2 };
        let p = GBsdeParams::new(&xi, &f, &g, 1).unwrap();
        let settings = PicardSettings {
            tol: 1e-12,
            ..PicardSettings::default()
        };
        let (s, _) = solve_gbsde(&p, &lat, &settings).unwrap();
        let o = classical_oracle(&p, &lat).unwrap();
        assert!(s.y.sub(&o.y).unwrap().max_abs() <= 1e-8);
    }
}
