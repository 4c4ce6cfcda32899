//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gcalc_core::gtensor::{VolatilityBox, DEFAULT_GRID_POINTS};
use gcalc_core::harness::DEFAULT_BETA_GRID;
use gcalc_core::scenario::{build_lattice, Lattice, Payoff, PayoffKind, PayoffVector, SpaceGrid, TimeGrid};
use gcalc_core::solver::DriverSpec;

use crate::RunError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Expect,
    Represent,
    Solve,
    VerifyEstimates,
    RatioDecay,
    Capacity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Expect => "expect",
            Command::Represent => "represent",
            Command::Solve => "solve",
            Command::VerifyEstimates => "verify-estimates",
            Command::RatioDecay => "ratio-decay",
            Command::Capacity => "capacity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub d: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    #[serde(default = "default_span")]
    pub span_factor: f64,
    pub points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PayoffConfig {
    Constant { c: f64 },
    Linear {
        #[serde(default)]
        shift: f64,
    },
    Quadratic {
        #[serde(default)]
        shift: f64,
    },
    NegQuadratic {
        #[serde(default)]
        shift: f64,
    },
    Abs {
        #[serde(default)]
        shift: f64,
    },
    Call {
        strike: f64,
        #[serde(default)]
        shift: f64,
    },
    Butterfly {
        a: f64,
        b: f64,
        #[serde(default)]
        shift: f64,
    },
    CappedQuadratic {
        cap: f64,
        #[serde(default)]
        shift: f64,
    },
    ForwardQuadratic {
        monitor_time: f64,
        #[serde(default)]
        shift: f64,
    },
}

impl PayoffConfig {
    pub fn build(&self) -> gcalc_core::Result<Payoff> {
        let (kind, shift) = match *self {
            PayoffConfig::Constant { c } => (PayoffKind::Constant, c),
            PayoffConfig::Linear { shift } => (PayoffKind::Linear, shift),
            PayoffConfig::Quadratic { shift } => (PayoffKind::Quadratic, shift),
            PayoffConfig::NegQuadratic { shift } => (PayoffKind::NegQuadratic, shift),
            PayoffConfig::Abs { shift } => (PayoffKind::Abs, shift),
            PayoffConfig::Call { strike, shift } => (PayoffKind::Call { strike }, shift),
            PayoffConfig::Butterfly { a, b, shift } => (PayoffKind::Butterfly { lower: a, upper: b }, shift),
            PayoffConfig::CappedQuadratic { cap, shift } => (PayoffKind::CappedQuadratic { cap }, shift),
            PayoffConfig::ForwardQuadratic { monitor_time, shift } => {
                (PayoffKind::ForwardQuadratic { monitor_time }, shift)
            }
        };
        Payoff::new(kind, shift)
    }
}

/// One payoff or a list of component payoffs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayoffList {
    One(PayoffConfig),
    Many(Vec<PayoffConfig>),
}

impl PayoffList {
    pub fn parts(&self) -> Vec<PayoffConfig> {
        match self {
            PayoffList::One(p) => vec![*p],
            PayoffList::Many(v) => v.clone(),
        }
    }

    pub fn build(&self) -> gcalc_core::Result<PayoffVector> {
        PayoffVector::new(self.parts().iter().map(PayoffConfig::build).collect::<gcalc_core::Result<_>>()?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverConfig {
    #[default]
    Zero,
    Constant { c: f64 },
    LinearInY { r: f64 },
    LinearInZ { a: Vec<f64> },
    QvConstant { gamma: f64 },
    ClampedCustomAffine {
        #[serde(default)]
        c0: f64,
        #[serde(default)]
        cy: f64,
        #[serde(default)]
        cz: f64,
        #[serde(default)]
        ceta: f64,
        lo: f64,
        hi: f64,
    },
}

impl DriverConfig {
    pub fn build(&self) -> gcalc_core::Result<DriverSpec> {
        let spec = match self {
            DriverConfig::Zero => DriverSpec::Zero,
            DriverConfig::Constant { c } => DriverSpec::Constant { c: *c },
            DriverConfig::LinearInY { r } => DriverSpec::LinearInY { r: *r },
            DriverConfig::LinearInZ { a } => DriverSpec::LinearInZ { a: a.clone() },
            DriverConfig::QvConstant { gamma } => DriverSpec::QvConstant { gamma: *gamma },
            DriverConfig::ClampedCustomAffine {
                c0,
                cy,
                cz,
                ceta,
                lo,
                hi,
            } => DriverSpec::ClampedAffine {
                c0: *c0,
                cy: *cy,
                cz: *cz,
                ceta: *ceta,
                lo: *lo,
                hi: *hi,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Monte Carlo effort of the pathwise checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_controls")]
    pub controls: usize,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            paths: default_paths(),
            controls: default_controls(),
        }
    }
}

/// Second parameter set of `verify-estimates`; absent fields copy the first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondConfig {
    pub payoff: Option<PayoffList>,
    #[serde(default)]
    pub terminal_shift: f64,
    pub f: Option<DriverConfig>,
    pub g: Option<DriverConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatesConfig {
    #[serde(default)]
    pub second: SecondConfig,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    /// `β` of the supremum estimate; defaults to the smallest passing `β`.
    pub sup_beta: Option<f64>,
    /// Caps of the truncated quadratic sequence.
    #[serde(default = "default_caps")]
    pub cauchy_caps: Vec<f64>,
    #[serde(default = "default_cauchy_beta")]
    pub cauchy_beta: f64,
    /// Weights of `‖δf‖²` and `‖δg‖²` in the bracket.
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "one")]
    pub nu: f64,
}

impl Default for EstimatesConfig {
    fn default() -> Self {
        Self {
            second: SecondConfig::default(),
            betas: default_betas(),
            sup_beta: None,
            cauchy_caps: default_caps(),
            cauchy_beta: default_cauchy_beta(),
            mu: 1.0,
            nu: 1.0,
        }
    }
}

/// `c0 + c1 Σ x_j` on one piece of a step process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    pub c0: f64,
    #[serde(default)]
    pub c1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub breaks: Vec<usize>,
    pub pieces: Vec<PieceConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioConfig {
    /// Drawn from the seed when absent.
    pub theta: Option<StepConfig>,
    pub zeta: Option<StepConfig>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self {
            theta: None,
            zeta: None,
            n_max: default_n_max(),
            betas: default_betas(),
        }
    }
}

/// Event on `s = Σ x_j` or on `max_j |x_j|` at the terminal time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventConfig {
    Above { level: f64 },
    Below { level: f64 },
    Inside { radius: f64 },
    Outside { radius: f64 },
}

impl EventConfig {
    pub fn holds(&self, x: &[f64]) -> bool {
        let s: f64 = x.iter().sum();
        let m = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        match *self {
            EventConfig::Above { level } => s > level,
            EventConfig::Below { level } => s < level,
            EventConfig::Inside { radius } => m <= radius,
            EventConfig::Outside { radius } => m > radius,
        }
    }
}

impl Default for EventConfig {
    fn default() -> Self {
        EventConfig::Above { level: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityConfig {
    #[serde(default)]
    pub event: EventConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the command line when present.
    pub command: Option<Command>,
    #[serde(rename = "box")]
    pub vol: BoxConfig,
    pub time: TimeConfig,
    pub space: SpaceConfig,
    #[serde(default = "default_payoff")]
    pub payoff: PayoffList,
    #[serde(default)]
    pub f: DriverConfig,
    #[serde(default)]
    pub g: DriverConfig,
    pub beta: Option<f64>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub estimates: EstimatesConfig,
    #[serde(default)]
    pub ratio: RatioConfig,
    #[serde(default)]
    pub capacity: CapacityConfig,
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

fn default_span() -> f64 {
    6.0
}

fn default_payoff() -> PayoffList {
    PayoffList::One(PayoffConfig::Quadratic { shift: 0.0 })
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    100
}

fn default_paths() -> usize {
    256
}

fn default_controls() -> usize {
    8
}

fn default_betas() -> Vec<f64> {
    DEFAULT_BETA_GRID.to_vec()
}

fn default_caps() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0]
}

fn default_cauchy_beta() -> f64 {
    1.0
}

fn one() -> f64 {
    1.0
}

fn default_n_max() -> usize {
    20
}

fn field<T>(name: &str, r: gcalc_core::Result<T>) -> Result<T, RunError> {
    r.map_err(|e| RunError::Config(format!("{name}: {e}")))
}

fn require(ok: bool, name: &str, msg: &str) -> Result<(), RunError> {
    if ok {
        Ok(())
    } else {
        Err(RunError::Config(format!("{name}: {msg}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn lattice(&self) -> Result<Lattice, RunError> {
        let b = &self.vol;
        require(b.lower.len() == b.d, "box.lower", "length must equal box.d")?;
        require(b.upper.len() == b.d, "box.upper", "length must equal box.d")?;
        let vol = field("box", VolatilityBox::new(b.lower.clone(), b.upper.clone(), b.grid_points))?;
        let time = field("time", TimeGrid::new(self.time.horizon, self.time.steps))?;
        let space = field(
            "space",
            SpaceGrid::for_box(self.space.points, self.space.span_factor, &vol, self.time.horizon),
        )?;
        field("space", build_lattice(time, space, vol))
    }

    /// Checks every field the named command reads.
    pub fn validate(&self, command: Command) -> Result<(), RunError> {
        if let Some(c) = self.command {
            require(c == command, "command", &format!("config names `{}`", c.name()))?;
        }
        self.lattice()?;
        field("payoff", self.payoff.build())?;
        field("f", self.f.build())?;
        field("g", self.g.build())?;
        for (name, v) in [("beta", self.beta), ("mu", self.mu), ("nu", self.nu)] {
            if let Some(v) = v {
                require(v.is_finite() && v > 0.0, name, "must be positive and finite")?;
            }
        }
        require(self.tol.is_finite() && self.tol > 0.0, "tol", "must be positive and finite")?;
        require(self.max_iter > 0, "max_iter", "must be positive")?;
        require(self.checks.paths > 0, "checks.paths", "must be positive")?;
        require(self.checks.controls > 0, "checks.controls", "must be positive")?;
        match command {
            Command::VerifyEstimates => {
                let e = &self.estimates;
                if let Some(p) = &e.second.payoff {
                    field("estimates.second.payoff", p.build())?;
                }
                require(e.second.terminal_shift.is_finite(), "estimates.second.terminal_shift", "must be finite")?;
                if let Some(f) = &e.second.f {
                    field("estimates.second.f", f.build())?;
                }
                if let Some(g) = &e.second.g {
                    field("estimates.second.g", g.build())?;
                }
                require(
                    !e.betas.is_empty() && e.betas.iter().all(|b| b.is_finite() && *b > 0.0),
                    "estimates.betas",
                    "must be a nonempty list of positive numbers",
                )?;
                if let Some(b) = e.sup_beta {
                    require(b.is_finite() && b > 0.0, "estimates.sup_beta", "must be positive")?;
                }
                require(
                    e.cauchy_caps.len() >= 2 && e.cauchy_caps.iter().all(|c| c.is_finite() && *c >= 0.0),
                    "estimates.cauchy_caps",
                    "needs at least two nonnegative caps",
                )?;
                for (name, v) in [("estimates.mu", e.mu), ("estimates.nu", e.nu)] {
                    require(v.is_finite() && v > 0.0, name, "must be positive and finite")?;
                }
                require(
                    e.cauchy_beta.is_finite() && e.cauchy_beta >= 0.0,
                    "estimates.cauchy_beta",
                    "must be nonnegative",
                )?;
            }
            Command::RatioDecay => {
                let r = &self.ratio;
                require(r.theta.is_some() == r.zeta.is_some(), "ratio", "give both theta and zeta or neither")?;
                for (name, s) in [("ratio.theta", &r.theta), ("ratio.zeta", &r.zeta)] {
                    if let Some(s) = s {
                        require(
                            !s.breaks.is_empty() && s.breaks.len() == s.pieces.len(),
                            name,
                            "needs one piece per break",
                        )?;
                        require(s.breaks.windows(2).all(|w| w[0] < w[1]), name, "breaks must increase")?;
                        require(*s.breaks.last().unwrap() < self.time.steps, name, "breaks must precede the final step")?;
                        require(
                            s.pieces.iter().all(|p| p.c0.is_finite() && p.c1.is_finite()),
                            name,
                            "coefficients must be finite",
                        )?;
                    }
                }
                require(r.n_max > 0, "ratio.n_max", "must be positive")?;
                require(
                    r.betas.iter().all(|b| b.is_finite() && *b > 0.0),
                    "ratio.betas",
                    "must be positive",
                )?;
            }
            Command::Capacity => {
                let ok = match self.capacity.event {
                    EventConfig::Above { level } | EventConfig::Below { level } => level.is_finite(),
                    EventConfig::Inside { radius } | EventConfig::Outside { radius } => radius.is_finite(),
                };
                require(ok, "capacity.event", "threshold must be finite")?;
            }
            _ => {}
        }
        Ok(())
    }
}
