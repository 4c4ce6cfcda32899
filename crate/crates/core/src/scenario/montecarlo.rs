use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Lattice, Layout, ScenarioField, TerminalFunctional, MAX_LATTICE_DIM};
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::{par, rng};

/// Volatility selection `(k, node) ↦ σ²` for the lattice chain.
pub trait LatticeControl: Sync {
    fn sigma2(&self, k: usize, node: usize, out: &mut [f64]);
}

impl<F> LatticeControl for F
where
    F: Fn(usize, usize, &mut [f64]) + Sync,
{
    fn sigma2(&self, k: usize, node: usize, out: &mut [f64]) {
        self(k, node, out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantControl(pub Vec<f64>);

impl LatticeControl for ConstantControl {
    fn sigma2(&self, _k: usize, _node: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Replays the maximising scenario of one component of a field.
pub struct PolicyControl<'a> {
    pub lattice: &'a Lattice,
    pub field: &'a ScenarioField,
    pub component: usize,
}

impl LatticeControl for PolicyControl<'_> {
    fn sigma2(&self, k: usize, node: usize, out: &mut [f64]) {
        let idx = self.field.policy.get(k, node)[self.component];
        out.copy_from_slice(self.lattice.scenario(idx));
    }
}

/// Node-wise corner control drawn from a hash of `(seed, k, node, axis)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomCornerControl {
    seed: u64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl RandomCornerControl {
    pub fn new(lattice: &Lattice, seed: u64) -> Self {
        Self {
            seed,
            lower: lattice.volatility().lower().to_vec(),
            upper: lattice.volatility().upper().to_vec(),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl LatticeControl for RandomCornerControl {
    fn sigma2(&self, k: usize, node: usize, out: &mut [f64]) {
        let h = splitmix(splitmix(self.seed ^ (k as u64).rotate_left(40)) ^ node as u64);
        for (j, o) in out.iter_mut().enumerate() {
            *o = if (h >> j) & 1 == 1 {
                self.upper[j]
            } else {
                self.lower[j]
            };
        }
    }
}

/// One transition of a lattice path. Increments are the nominal stencil
/// moves, also when the target node was clamped at the span boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub k: usize,
    pub node: usize,
    pub child: usize,
    pub sigma2: [f64; MAX_LATTICE_DIM],
    pub db: [f64; MAX_LATTICE_DIM],
    pub dqv: [f64; MAX_LATTICE_DIM],
    pub clamped: bool,
}

/// Samples one path of the chain under `control`, calling `visit` on every
/// transition, and returns the terminal node.
pub fn walk_path<R: Rng>(
    lattice: &Lattice,
    layout: &Layout,
    control: &dyn LatticeControl,
    rng: &mut R,
    mut visit: impl FnMut(&Step),
) -> Result<usize> {
    let d = lattice.dim();
    let vol = lattice.volatility();
    let mut node = layout.origin();
    for k in 0..lattice.steps() {
        let mut s2 = [0.0; MAX_LATTICE_DIM];
        control.sigma2(k, node, &mut s2[..d]);
        if !vol.contains(&s2[..d], 1e-12) {
            return Err(Error::ControlOutsideBox {
                step: k,
                sigma2: s2[..d].to_vec(),
            });
        }
        let ch = layout.children(k, node);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut step = Step {
            k,
            node,
            child: ch.stay,
            sigma2: s2,
            db: [0.0; MAX_LATTICE_DIM],
            dqv: [0.0; MAX_LATTICE_DIM],
            clamped: false,
        };
        'axes: for j in 0..d {
            let p = lattice.move_probability(j, s2[j]);
            let w = lattice.width(j);
            for (sign, target) in [(1.0, ch.up[j]), (-1.0, ch.down[j])] {
                acc += p;
                if u < acc {
                    step.child = target;
                    step.db[j] = sign * w;
                    step.dqv[j] = w * w;
                    step.clamped = ch.clamped;
                    break 'axes;
                }
            }
        }
        visit(&step);
        node = step.child;
    }
    Ok(node)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
}

impl McEstimate {
    pub(crate) fn from_samples(samples: impl Iterator<Item = f64> + Clone) -> Self {
        let n = samples.clone().count();
        let mean = samples.clone().sum::<f64>() / n as f64;
        let var = samples.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n.max(2) - 1) as f64;
        McEstimate {
            mean,
            std_error: sqrt(var / n as f64),
            paths: n,
        }
    }
}

/// `E_P[ξ]` under the lattice chain driven by `control`, one estimate per
/// component. Path `i` uses stream `i` of `seed`.
pub fn control_monte_carlo(
    lattice: &Lattice,
    xi: &dyn TerminalFunctional,
    control: &dyn LatticeControl,
    paths: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    if paths == 0 {
        return Err(Error::input("Monte Carlo needs at least one path"));
    }
    let layout = lattice.layout_for(xi)?;
    let n = xi.components();
    let d = lattice.dim();
    let space = lattice.space();
    let samples = par::map(paths, |i| -> Result<Vec<f64>> {
        let mut r = rng::path_rng(seed, i as u64);
        let last = walk_path(lattice, &layout, control, &mut r, |_| {})?;
        let mut x = [0.0; MAX_LATTICE_DIM];
        let mut m = [0.0; MAX_LATTICE_DIM];
        layout.coords(space, last, &mut x[..d]);
        let mon = layout.monitored_coords(space, last, &mut m[..d]);
        let mut out = vec![0.0; n];
        xi.evaluate(mon.then_some(&m[..d]), &x[..d], &mut out);
        Ok(out)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((0..n)
        .map(|c| McEstimate::from_samples(samples.iter().map(move |s| s[c])))
        .collect())
}
