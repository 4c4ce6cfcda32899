//! Discrete-time sublinear-expectation engine.
//!
//! A [`Lattice`] couples a [`TimeGrid`], a [`SpaceGrid`] and a
//! [`VolatilityBox`]. From every node the chain either stays put or moves by
//! `±w_j` along one axis `j`, where the width `w_j` is a whole number of
//! grid spacings with `w_j ≥ √d · σ̄_j √Δt`. Under a volatility choice `σ²`
//! each axis move has probability `σ²_j Δt / (2 w_j²)`. The increment then has
//! mean zero and covariance `σ² Δt` exactly, every child is a grid node, and
//! the one-step expectation
//!
//! `E_σ[V](x) = V(x) + Σ_j σ²_j Δt / 2 · (V(x + w_j) + V(x − w_j) − 2V(x)) / w_j²`
//!
//! is affine in `σ²`, so the maximum over the scenario grid sits at a corner.
//! Children beyond the span are clamped to the boundary node.

mod engine;
mod field;
mod montecarlo;
mod payoff;

pub use engine::{
    capacity_estimate, conditional_expectation_field, expectation_of_layer,
    expected_path_integral, lower_expectation, sublinear_expectation, RunningCost,
};
pub(crate) use engine::{step_values, terminal_layer};
pub use field::{Field, ScenarioField};
pub use montecarlo::{
    control_monte_carlo, walk_path, ConstantControl, LatticeControl, McEstimate, PolicyControl,
    RandomCornerControl, Step,
};
pub use payoff::{FnTerminal, Payoff, PayoffKind, PayoffVector, TerminalFunctional};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gtensor::{ScenarioGrid, VolatilityBox};
use crate::math::{ceil, round, sqrt};

/// Largest lattice dimension.
pub const MAX_LATTICE_DIM: usize = 2;
/// Largest number of components `n` of a vector payoff.
pub const MAX_COMPONENTS: usize = 2;
/// Largest number of time steps.
pub const MAX_STEPS: usize = 400;
/// Largest number of space points per axis.
pub const MAX_POINTS: usize = 1025;
/// Largest number of nodes in a single layer.
pub const MAX_LAYER_NODES: usize = 1 << 22;
/// Largest number of (layer, node) pairs held by a stored field.
pub const MAX_FIELD_NODES: usize = 1 << 23;
/// Smallest admissible span factor.
pub const MIN_SPAN_FACTOR: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::input("horizon T must be positive and finite"));
        }
        if steps == 0 {
            return Err(Error::input("time grid needs at least one step"));
        }
        if steps > MAX_STEPS {
            return Err(Error::Capacity {
                what: "time steps",
                value: steps,
                cap: MAX_STEPS,
            });
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_k = kT/N`, with `t_N = T` exactly.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    /// Index of the grid time equal to `t`, if any.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return None;
        }
        let k = round(t / self.dt()) as usize;
        ((self.time(k) - t).abs() <= 1e-9 * self.horizon).then_some(k)
    }
}

/// Uniform grid of B-values on `[−L, L]` shared by every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceGrid {
    points: usize,
    half_width: f64,
}

impl SpaceGrid {
    pub fn new(points: usize, half_width: f64) -> Result<Self> {
        if points < 3 || points % 2 == 0 {
            return Err(Error::input("space grid needs an odd number (≥ 3) of points"));
        }
        if points > MAX_POINTS {
            return Err(Error::Capacity {
                what: "space points per axis",
                value: points,
                cap: MAX_POINTS,
            });
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::input("space grid half-width must be positive"));
        }
        Ok(Self { points, half_width })
    }

    /// Span `c_span · σ̄_max · √T` around zero.
    pub fn for_box(points: usize, span_factor: f64, vol: &VolatilityBox, horizon: f64) -> Result<Self> {
        if !(span_factor >= MIN_SPAN_FACTOR) || !span_factor.is_finite() {
            return Err(Error::input("span factor must be at least 6"));
        }
        Self::new(points, span_factor * sqrt(vol.upper_max()) * sqrt(horizon))
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    pub fn center(&self) -> usize {
        self.points / 2
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.center() as f64) * self.spacing()
    }
}

/// Time grid, space grid, volatility box and the star stencil built on them.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    time: TimeGrid,
    space: SpaceGrid,
    vol: VolatilityBox,
    widths: Vec<usize>,
    scenarios: ScenarioGrid,
    scenario_strides: Vec<usize>,
    axis_last: Vec<usize>,
}

pub fn build_lattice(time: TimeGrid, space: SpaceGrid, vol: VolatilityBox) -> Result<Lattice> {
    let d = vol.dim();
    if d > MAX_LATTICE_DIM {
        return Err(Error::Capacity {
            what: "lattice dimension",
            value: d,
            cap: MAX_LATTICE_DIM,
        });
    }
    let h = space.spacing();
    let sdt = sqrt(time.dt());
    let min_step = vol
        .lower()
        .iter()
        .map(|&s| sqrt(s) * sdt)
        .fold(f64::INFINITY, f64::min);
    if h > min_step {
        return Err(Error::Resolution {
            spacing: h,
            min_step,
        });
    }
    let rd = sqrt(d as f64);
    let widths = vol
        .upper()
        .iter()
        .map(|&s| (ceil(rd * sqrt(s) * sdt / h * (1.0 - 1e-12)) as usize).max(1))
        .collect();
    let nodes = space.points.pow(d as u32);
    if nodes > MAX_LAYER_NODES {
        return Err(Error::Capacity {
            what: "nodes per layer",
            value: nodes,
            cap: MAX_LAYER_NODES,
        });
    }
    let axis_len: Vec<usize> = (0..d).map(|j| vol.axis_grid(j).len()).collect();
    let mut scenario_strides = vec![1; d];
    for j in (0..d.saturating_sub(1)).rev() {
        scenario_strides[j] = scenario_strides[j + 1] * axis_len[j + 1];
    }
    Ok(Lattice {
        time,
        space,
        scenarios: vol.scenario_grid(),
        vol,
        widths,
        scenario_strides,
        axis_last: axis_len.iter().map(|l| l - 1).collect(),
    })
}

impl Lattice {
    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn volatility(&self) -> &VolatilityBox {
        &self.vol
    }

    pub fn dim(&self) -> usize {
        self.vol.dim()
    }

    pub fn steps(&self) -> usize {
        self.time.steps()
    }

    pub fn dt(&self) -> f64 {
        self.time.dt()
    }

    /// Stencil width along `axis` in grid spacings.
    pub fn width_steps(&self, axis: usize) -> usize {
        self.widths[axis]
    }

    /// Stencil width `w_j` along `axis`.
    pub fn width(&self, axis: usize) -> f64 {
        self.widths[axis] as f64 * self.space.spacing()
    }

    /// Probability of each of the two moves along `axis` under `σ²_j`.
    pub fn move_probability(&self, axis: usize, sigma2: f64) -> f64 {
        let w = self.width(axis);
        sigma2 * self.dt() / (2.0 * w * w)
    }

    pub fn scenarios(&self) -> &ScenarioGrid {
        &self.scenarios
    }

    pub fn scenario(&self, index: u32) -> &[f64] {
        self.scenarios.get(index as usize)
    }

    /// Scenario-grid index of the corner with `upper[j]` selecting `σ̄²_j`.
    pub fn corner_index(&self, upper: impl Iterator<Item = bool>) -> u32 {
        upper
            .enumerate()
            .map(|(j, u)| if u { self.axis_last[j] * self.scenario_strides[j] } else { 0 })
            .sum::<usize>() as u32
    }

    /// Radius of the space grid in the Euclidean norm.
    pub fn radius(&self) -> f64 {
        self.space.half_width() * sqrt(self.dim() as f64)
    }

    /// Node layout for a functional monitored at `monitor` (besides `T`).
    pub fn layout(&self, monitor: Option<f64>) -> Result<Layout> {
        let monitor = match monitor {
            None => None,
            Some(t) => Some(self.time.step_of(t).ok_or_else(|| {
                Error::input("monitoring time must be a node of the time grid")
            })?),
        };
        let base = self.space.points.pow(self.dim() as u32);
        let augmented = monitor.is_some_and(|k| k > 0 && k < self.steps());
        let widest = if augmented { base * base } else { base };
        if widest > MAX_LAYER_NODES {
            return Err(Error::Capacity {
                what: "nodes per layer",
                value: widest,
                cap: MAX_LAYER_NODES,
            });
        }
        let d = self.dim();
        let mut strides = vec![1; d];
        for j in (0..d.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * self.space.points;
        }
        Ok(Layout {
            dim: d,
            points: self.space.points,
            steps: self.steps(),
            base,
            monitor,
            widths: self.widths.clone(),
            strides,
        })
    }

    pub fn markov_layout(&self) -> Layout {
        self.layout(None).expect("Markov layout fits by construction")
    }

    pub fn layout_for(&self, xi: &dyn TerminalFunctional) -> Result<Layout> {
        self.layout(xi.monitor_time())
    }
}

/// Node indexing of every time layer.
///
/// Without a monitoring time a node is a multi-index into the space grid
/// (axis 0 most significant). From the monitoring step on, a node also
/// carries the frozen state `B_{t₁}`: `node = frozen * base + current`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    dim: usize,
    points: usize,
    steps: usize,
    base: usize,
    monitor: Option<usize>,
    widths: Vec<usize>,
    strides: Vec<usize>,
}

/// The `1 + 2d` children of a node in the next layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Children {
    pub stay: usize,
    pub up: [usize; MAX_LATTICE_DIM],
    pub down: [usize; MAX_LATTICE_DIM],
    /// Some move left the span and was clamped.
    pub clamped: bool,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn monitor_step(&self) -> Option<usize> {
        self.monitor
    }

    fn augmented(&self, k: usize) -> bool {
        self.monitor
            .is_some_and(|m| m > 0 && m < self.steps && k >= m)
    }

    pub fn layer_len(&self, k: usize) -> usize {
        if self.augmented(k) {
            self.base * self.base
        } else {
            self.base
        }
    }

    /// Number of (layer, node) pairs over layers `0..layers`.
    pub fn total_nodes(&self, layers: usize) -> usize {
        (0..layers).map(|k| self.layer_len(k)).sum()
    }

    pub fn origin(&self) -> usize {
        let c = self.points / 2;
        self.strides.iter().map(|s| c * s).sum()
    }

    #[inline]
    fn current(&self, node: usize) -> usize {
        node % self.base
    }

    #[inline]
    fn axis_index(&self, cur: usize, axis: usize) -> usize {
        (cur / self.strides[axis]) % self.points
    }

    /// Grid indices of the current state of `node`.
    pub fn indices(&self, node: usize, out: &mut [usize]) {
        let cur = self.current(node);
        for (j, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = self.axis_index(cur, j);
        }
    }

    /// Current coordinates of `node`.
    pub fn coords(&self, space: &SpaceGrid, node: usize, out: &mut [f64]) {
        let cur = self.current(node);
        for (j, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = space.coord(self.axis_index(cur, j));
        }
    }

    /// Coordinates of the monitored state of a terminal-layer `node`, if the
    /// layout carries a monitoring time.
    pub fn monitored_coords(&self, space: &SpaceGrid, node: usize, out: &mut [f64]) -> bool {
        match self.monitor {
            None => false,
            Some(0) => {
                out[..self.dim].fill(0.0);
                true
            }
            Some(m) if m == self.steps => {
                self.coords(space, node, out);
                true
            }
            Some(_) => {
                let frozen = node / self.base;
                for (j, o) in out.iter_mut().enumerate().take(self.dim) {
                    *o = space.coord(self.axis_index(frozen, j));
                }
                true
            }
        }
    }

    /// True if some axis index of `node` is within one stencil width of
    /// the span boundary.
    pub fn near_boundary(&self, node: usize) -> bool {
        let cur = self.current(node);
        (0..self.dim).any(|j| {
            let i = self.axis_index(cur, j);
            i < self.widths[j] || i + self.widths[j] >= self.points
        })
    }

    fn lift(&self, k: usize, node: usize, cur_next: usize) -> usize {
        if self.augmented(k + 1) {
            if self.augmented(k) {
                (node / self.base) * self.base + cur_next
            } else {
                cur_next * self.base + cur_next
            }
        } else {
            cur_next
        }
    }

    /// Children in layer `k + 1` of `node` in layer `k`.
    pub fn children(&self, k: usize, node: usize) -> Children {
        let cur = self.current(node);
        let mut ch = Children {
            stay: self.lift(k, node, cur),
            up: [0; MAX_LATTICE_DIM],
            down: [0; MAX_LATTICE_DIM],
            clamped: false,
        };
        for j in 0..self.dim {
            let i = self.axis_index(cur, j);
            let m = self.widths[j];
            let s = self.strides[j];
            let up = (i + m).min(self.points - 1);
            let down = i.saturating_sub(m);
            ch.clamped |= up - i != m || i - down != m;
            ch.up[j] = self.lift(k, node, cur - i * s + up * s);
            ch.down[j] = self.lift(k, node, cur - i * s + down * s);
        }
        ch
    }
}
