use alloc::vec;
use alloc::vec::Vec;

use super::{Field, Lattice, Layout, ScenarioField, TerminalFunctional, MAX_COMPONENTS, MAX_LATTICE_DIM};
use crate::error::{Error, Result};
use crate::par;

/// Per-step addend of the backward induction, affine in the volatility
/// choice: the amount added over `[t_k, t_{k+1})` at `node` for `component`
/// is `a + Σ_j b_j σ²_j`, where `a` is returned and `b` written to `slope`.
pub trait RunningCost: Sync {
    fn step(&self, k: usize, node: usize, component: usize, slope: &mut [f64]) -> f64;
}

impl<F> RunningCost for F
where
    F: Fn(usize, usize, usize, &mut [f64]) -> f64 + Sync,
{
    fn step(&self, k: usize, node: usize, component: usize, slope: &mut [f64]) -> f64 {
        self(k, node, component, slope)
    }
}

/// One-step maximisation over the box.
pub(crate) struct Stencil {
    d: usize,
    half_dt: f64,
    inv_w2: [f64; MAX_LATTICE_DIM],
    lo: [f64; MAX_LATTICE_DIM],
    hi: [f64; MAX_LATTICE_DIM],
}

impl Stencil {
    pub(crate) fn new(lattice: &Lattice) -> Self {
        let d = lattice.dim();
        let mut s = Stencil {
            d,
            half_dt: 0.5 * lattice.dt(),
            inv_w2: [0.0; MAX_LATTICE_DIM],
            lo: [0.0; MAX_LATTICE_DIM],
            hi: [0.0; MAX_LATTICE_DIM],
        };
        for j in 0..d {
            let w = lattice.width(j);
            s.inv_w2[j] = 1.0 / (w * w);
            s.lo[j] = lattice.volatility().lower()[j];
            s.hi[j] = lattice.volatility().upper()[j];
        }
        s
    }

    /// `max_σ [E_σ V + Σ_j slope_j σ²_j]` given the stay value and the
    /// second differences `q_j = (V(x + w_j) + V(x − w_j) − 2V(x)) / w_j²`.
    /// Zero coefficients choose the lower bound.
    #[inline]
    pub(crate) fn sup(&self, v0: f64, q: &[f64], slope: &[f64]) -> (f64, [bool; MAX_LATTICE_DIM]) {
        let mut acc = v0;
        let mut upper = [false; MAX_LATTICE_DIM];
        for j in 0..self.d {
            let coef = self.half_dt * q[j] + slope[j];
            if coef > 0.0 {
                acc += coef * self.hi[j];
                upper[j] = true;
            } else {
                acc += coef * self.lo[j];
            }
        }
        (acc, upper)
    }

    #[inline]
    pub(crate) fn second_difference(&self, j: usize, v0: f64, vp: f64, vm: f64) -> f64 {
        (vp + vm - 2.0 * v0) * self.inv_w2[j]
    }
}

fn step_layer(
    lattice: &Lattice,
    layout: &Layout,
    k: usize,
    next: &[f64],
    width: usize,
    cost: Option<&dyn RunningCost>,
    out: &mut [f64],
    policy: &mut [u32],
) {
    let st = Stencil::new(lattice);
    let d = lattice.dim();
    par::for_each_chunk2(out, policy, width, |node, vals, pols| {
        let ch = layout.children(k, node);
        for c in 0..width {
            let v0 = next[ch.stay * width + c];
            let mut q = [0.0; MAX_LATTICE_DIM];
            for (j, qj) in q.iter_mut().enumerate().take(d) {
                *qj = st.second_difference(
                    j,
                    v0,
                    next[ch.up[j] * width + c],
                    next[ch.down[j] * width + c],
                );
            }
            let mut slope = [0.0; MAX_LATTICE_DIM];
            let a = cost.map_or(0.0, |f| f.step(k, node, c, &mut slope[..d]));
            let (v, upper) = st.sup(v0 + a, &q[..d], &slope[..d]);
            vals[c] = v;
            pols[c] = lattice.corner_index(upper[..d].iter().copied());
        }
    });
}

fn check_finite(values: &[f64], width: usize, k: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite {
            what: "conditional expectation",
            step: k,
            node: i / width.max(1),
        }),
    }
}

fn check_components(n: usize) -> Result<()> {
    if n == 0 || n > MAX_COMPONENTS {
        return Err(Error::Capacity {
            what: "payoff components",
            value: n,
            cap: MAX_COMPONENTS,
        });
    }
    Ok(())
}

/// `ξ` evaluated on every node of the terminal layer.
pub(crate) fn terminal_layer(
    lattice: &Lattice,
    layout: &Layout,
    xi: &dyn TerminalFunctional,
) -> Result<Vec<f64>> {
    let n = xi.components();
    check_components(n)?;
    let steps = lattice.steps();
    let mut out = vec![0.0; layout.layer_len(steps) * n];
    let space = lattice.space();
    par::for_each_chunk(&mut out, n, |node, vals| {
        let mut x = [0.0; MAX_LATTICE_DIM];
        let mut m = [0.0; MAX_LATTICE_DIM];
        let d = layout.dim();
        layout.coords(space, node, &mut x[..d]);
        let mon = layout.monitored_coords(space, node, &mut m[..d]);
        xi.evaluate(mon.then_some(&m[..d]), &x[..d], vals);
    });
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("terminal payoff evaluated to a non-finite value"));
    }
    Ok(out)
}

/// Backward induction from `layer` (at step `from`) down to step 0,
/// returning layer 0.
pub(crate) fn backward_values(
    lattice: &Lattice,
    layout: &Layout,
    mut layer: Vec<f64>,
    from: usize,
    width: usize,
    cost: Option<&dyn RunningCost>,
) -> Result<Vec<f64>> {
    let mut scratch_policy = Vec::new();
    for k in (0..from).rev() {
        let len = layout.layer_len(k) * width;
        let mut out = vec![0.0; len];
        scratch_policy.resize(len, 0u32);
        step_layer(lattice, layout, k, &layer, width, cost, &mut out, &mut scratch_policy);
        check_finite(&out, width, k)?;
        layer = out;
    }
    Ok(layer)
}

/// One backward step without running cost: `max_σ E_σ[next]` on layer `k`,
/// every component maximised separately.
pub(crate) fn step_values(lattice: &Lattice, layout: &Layout, k: usize, next: &[f64], width: usize) -> Result<Vec<f64>> {
    let len = layout.layer_len(k) * width;
    let mut out = vec![0.0; len];
    let mut policy = vec![0u32; len];
    step_layer(lattice, layout, k, next, width, None, &mut out, &mut policy);
    check_finite(&out, width, k)?;
    Ok(out)
}

/// Full field `V[k][x] = max_σ (E_σ V[k+1])(x) + cost`, with `V[N] = ξ`
/// and the maximising scenario stored per node and component.
pub fn conditional_expectation_field(
    lattice: &Lattice,
    xi: &dyn TerminalFunctional,
    cost: Option<&dyn RunningCost>,
) -> Result<ScenarioField> {
    let layout = lattice.layout_for(xi)?;
    let n = xi.components();
    let steps = lattice.steps();
    let terminal = terminal_layer(lattice, &layout, xi)?;
    let mut values = Field::zeros(&layout, n, steps + 1)?;
    let mut policy = Field::<u32>::zeros(&layout, n, steps)?;
    values.layer_mut(steps).copy_from_slice(&terminal);
    for k in (0..steps).rev() {
        let (out, next) = values.pair_mut(k);
        step_layer(lattice, &layout, k, next, n, cost, out, policy.layer_mut(k));
        check_finite(values.layer(k), n, k)?;
    }
    Ok(ScenarioField {
        layout,
        values,
        policy,
    })
}

/// `E[ξ]`, component-wise.
pub fn sublinear_expectation(lattice: &Lattice, xi: &dyn TerminalFunctional) -> Result<Vec<f64>> {
    let layout = lattice.layout_for(xi)?;
    let n = xi.components();
    let terminal = terminal_layer(lattice, &layout, xi)?;
    let root = backward_values(lattice, &layout, terminal, lattice.steps(), n, None)?;
    let o = layout.origin();
    Ok(root[o * n..(o + 1) * n].to_vec())
}

/// `−E[−ξ]`, component-wise.
pub fn lower_expectation(lattice: &Lattice, xi: &dyn TerminalFunctional) -> Result<Vec<f64>> {
    let layout = lattice.layout_for(xi)?;
    let n = xi.components();
    let mut terminal = terminal_layer(lattice, &layout, xi)?;
    terminal.iter_mut().for_each(|v| *v = -*v);
    let root = backward_values(lattice, &layout, terminal, lattice.steps(), n, None)?;
    let o = layout.origin();
    Ok(root[o * n..(o + 1) * n].iter().map(|v| -v).collect())
}

/// `E[X]` for `X` a function of the state at step `k`, given node-wise on
/// layer `k`.
pub fn expectation_of_layer(lattice: &Lattice, layout: &Layout, k: usize, values: &[f64]) -> Result<f64> {
    if values.len() != layout.layer_len(k) {
        return Err(Error::Dimension {
            what: "layer values",
            expected: layout.layer_len(k),
            found: values.len(),
        });
    }
    let root = backward_values(lattice, layout, values.to_vec(), k, 1, None)?;
    Ok(root[layout.origin()])
}

/// `E[Σ_k cost_k]` over the whole grid for a scalar per-step cost.
pub fn expected_path_integral(lattice: &Lattice, layout: &Layout, cost: &dyn RunningCost) -> Result<f64> {
    let steps = lattice.steps();
    let terminal = vec![0.0; layout.layer_len(steps)];
    let root = backward_values(lattice, layout, terminal, steps, 1, Some(cost))?;
    Ok(root[layout.origin()])
}

/// `c(A) = sup_P P(A)` for an event of the terminal state.
pub fn capacity_estimate<F>(lattice: &Lattice, event: F) -> Result<f64>
where
    F: Fn(&[f64]) -> bool + Sync,
{
    let ind = super::FnTerminal::new(1, f64::INFINITY, |x: &[f64], out: &mut [f64]| {
        out[0] = if event(x) { 1.0 } else { 0.0 };
    });
    Ok(sublinear_expectation(lattice, &ind)?[0].clamp(0.0, 1.0))
}
