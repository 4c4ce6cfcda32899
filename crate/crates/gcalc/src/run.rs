use std::path::PathBuf;

use rand::Rng;
use serde_json::{json, Value};

use gcalc_core::calculus::{ratio_decay_report, StepProcess};
use gcalc_core::harness::{
    apriori_from, cauchy_sequence_check, representation_bound_check, sup_estimate_from, AprioriReport,
    SolvedPair,
};
use gcalc_core::rng::path_rng;
use gcalc_core::scenario::{
    capacity_estimate, conditional_expectation_field, control_monte_carlo, lower_expectation, ConstantControl,
    FnTerminal, Lattice, LatticeControl, Payoff, PayoffKind, RandomCornerControl, TerminalFunctional,
};
use gcalc_core::solver::{
    k_martingale_check, represent_martingale, residual_check, solve_gbsde, GBsdeParams, PicardReport,
    PicardSettings, ResidualReport,
};

use crate::config::{Command, ExperimentConfig, PieceConfig, StepConfig};
use crate::report::{emit, field_table, solution_table, Cell, Table, SCHEMA_VERSION};
use crate::{RunError, EXIT_CHECK_FAILED, EXIT_OK};

/// Output directory when neither the command line nor the config names one.
pub const DEFAULT_OUT: &str = "gcalc-out";

#[derive(Clone, Debug)]
pub struct Request {
    pub command: Command,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub dir: PathBuf,
    /// `None` for commands without a verification verdict.
    pub passed: Option<bool>,
    pub summary: Value,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed == Some(false) {
            EXIT_CHECK_FAILED
        } else {
            EXIT_OK
        }
    }
}

struct Produced {
    outputs: Value,
    tables: Vec<Table>,
    passed: Option<bool>,
}

fn threads() -> Result<Option<usize>, RunError> {
    match std::env::var("GCALC_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(RunError::Config(format!("GCALC_THREADS: expected a positive integer, found `{v}`"))),
        },
    }
}

/// Runs one experiment and reports the exit code, printing errors to
/// standard error.
pub fn run_experiment(req: &Request) -> i32 {
    match execute(req) {
        Ok(o) => {
            if o.passed == Some(false) {
                eprintln!("gcalc: {} checks failed; see {}", req.command.name(), o.dir.join("summary.json").display());
            }
            o.exit_code()
        }
        Err(e) => {
            eprintln!("gcalc: {e}");
            e.exit_code()
        }
    }
}

/// Parses and validates the config, runs the command and writes the
/// reports. Nothing is written unless the run completes.
pub fn execute(req: &Request) -> Result<Outcome, RunError> {
    let mut cfg = ExperimentConfig::load(&req.config)?;
    cfg.validate(req.command)?;
    let threads = threads()?;
    if let Some(s) = req.seed {
        cfg.seed = s;
    }
    let dir = req
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let lattice = cfg.lattice()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| RunError::Internal(e.to_string()))?;
    let produced = pool.install(|| match req.command {
        Command::Expect => expect(&cfg, &lattice),
        Command::Represent => represent(&cfg, &lattice),
        Command::Solve => solve(&cfg, &lattice),
        Command::VerifyEstimates => verify_estimates(&cfg, &lattice),
        Command::RatioDecay => ratio_decay(&cfg, &lattice),
        Command::Capacity => capacity(&cfg, &lattice),
    })?;
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": req.command.name(),
        "versions": {
            "gcalc": env!("CARGO_PKG_VERSION"),
            "gcalc_core": gcalc_core::VERSION,
        },
        "seed": cfg.seed,
        "config": serde_json::to_value(&cfg).map_err(|e| RunError::Internal(e.to_string()))?,
        "outputs": produced.outputs,
        "passed": produced.passed,
        "files": produced.tables.iter().map(|t| t.file.clone()).collect::<Vec<_>>(),
    });
    emit(&dir, &produced.tables, &summary)?;
    Ok(Outcome {
        dir,
        passed: produced.passed,
        summary,
    })
}

fn params<'a>(
    xi: &'a dyn TerminalFunctional,
    f: &'a gcalc_core::solver::DriverSpec,
    g: &'a gcalc_core::solver::DriverSpec,
    lattice: &Lattice,
    name: &str,
) -> Result<GBsdeParams<'a>, RunError> {
    GBsdeParams::new(xi, f, g, lattice.dim()).map_err(|e| RunError::Config(format!("{name}: {e}")))
}

fn settings(cfg: &ExperimentConfig) -> PicardSettings {
    PicardSettings {
        beta: cfg.beta,
        mu: cfg.mu,
        nu: cfg.nu,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        init: None,
    }
}

fn residual_json(r: &ResidualReport) -> Value {
    json!({
        "on_policy_max": r.on_policy_max,
        "off_policy_max": r.off_policy_max,
        "min_compensated_k": r.min_compensated_k,
        "paths_per_control": r.paths_per_control,
        "controls": r.controls,
    })
}

fn picard_json(r: &PicardReport) -> Value {
    json!({
        "iterations": r.iterations,
        "converged_at": r.converged_at,
        "distances": r.distances,
        "factors": r.factors,
        "contraction_factor": r.contraction_factor,
        "theoretical_factor": r.theoretical_factor,
        "beta": r.beta,
        "beta_searched": r.beta_searched,
        "beta_search_failed": r.beta_search_failed,
        "mu": r.mu,
        "nu": r.nu,
    })
}

fn expect(cfg: &ExperimentConfig, lattice: &Lattice) -> Result<Produced, RunError> {
    let xi = cfg.payoff.build().map_err(|e| RunError::Config(format!("payoff: {e}")))?;
    let field = conditional_expectation_field(lattice, &xi, None)?;
    let lower = lower_expectation(lattice, &xi)?;
    Ok(Produced {
        outputs: json!({
            "expectation": field.root(),
            "lower_expectation": lower,
        }),
        tables: vec![field_table("expect.csv", lattice, &field.layout, &field.values)],
        passed: None,
    })
}

fn represent(cfg: &ExperimentConfig, lattice: &Lattice) -> Result<Produced, RunError> {
    let xi = cfg.payoff.build().map_err(|e| RunError::Config(format!("payoff: {e}")))?;
    let sol = represent_martingale(&xi, lattice)?;
    let residual = residual_check(&sol, None, lattice, cfg.checks.paths, cfg.seed)?;
    let km = k_martingale_check(&sol, lattice, cfg.checks.controls, cfg.checks.paths, cfg.seed)?;
    let km_json: Vec<Value> = km
        .iter()
        .map(|r| {
            json!({
                "component": r.component,
                "worst_control": r.worst_control,
                "worst_mean": r.worst.mean,
                "worst_std_error": r.worst.std_error,
                "within_three_se": r.within_three_se(),
            })
        })
        .collect();
    Ok(Produced {
        outputs: json!({
            "y0": sol.y0(),
            "min_k_increment": sol.min_k_increment(),
            "clamped_nodes": sol.clamped_nodes,
            "residual": residual_json(&residual),
            "k_martingale": km_json,
        }),
        tables: vec![solution_table("solution.csv", lattice, &sol)],
        passed: None,
    })
}

fn solve(cfg: &ExperimentConfig, lattice: &Lattice) -> Result<Produced, RunError> {
    let xi = cfg.payoff.build().map_err(|e| RunError::Config(format!("payoff: {e}")))?;
    let (f, g) = (cfg.f.build()?, cfg.g.build()?);
    let p = params(&xi, &f, &g, lattice, "f/g")?;
    let (sol, rep) = solve_gbsde(&p, lattice, &settings(cfg))?;
    let residual = residual_check(&sol, Some(&p), lattice, cfg.checks.paths, cfg.seed)?;
    let mut picard = Table::new("picard.csv", &["iteration", "distance", "factor"]);
    for (m, d) in rep.distances.iter().enumerate() {
        let factor = if m == 0 { None } else { rep.factors.get(m - 1).copied() };
        picard.push(vec![Cell::from(m + 1), Cell::from(*d), Cell::from(factor)]);
    }
    Ok(Produced {
        outputs: json!({
            "y0": sol.y0(),
            "min_k_increment": sol.min_k_increment(),
            "clamped_nodes": sol.clamped_nodes,
            "lipschitz": p.lipschitz,
            "picard": picard_json(&rep),
            "residual": residual_json(&residual),
        }),
        tables: vec![solution_table("solution.csv", lattice, &sol), picard],
        passed: None,
    })
}

fn apriori_table(rep: &AprioriReport) -> Table {
    let mut t = Table::new(
        "estimates.csv",
        &[
            "beta",
            "delta_y",
            "delta_z",
            "delta_eta",
            "terminal",
            "f_term",
            "g_term",
            "bracket",
            "c_beta",
            "printed_y",
            "printed_z",
            "printed_eta",
            "conservative_y",
            "conservative_z",
            "conservative_eta",
        ],
    );
    for r in &rep.rows {
        let mut row: Vec<Cell> = [r.beta, r.delta_y, r.delta_z, r.delta_eta, r.terminal, r.f_term, r.g_term, r.bracket]
            .into_iter()
            .map(Cell::from)
            .collect();
        row.push(Cell::from(r.c_beta));
        row.extend(r.printed.iter().chain(&r.conservative).map(|b| Cell::from(*b)));
        t.push(row);
    }
    t
}

fn cfg_err(name: &'static str) -> impl Fn(gcalc_core::Error) -> RunError {
    move |err| RunError::Config(format!("{name}: {err}"))
}

fn verify_estimates(cfg: &ExperimentConfig, lattice: &Lattice) -> Result<Produced, RunError> {
    let e = &cfg.estimates;
    let xi1 = cfg.payoff.build().map_err(cfg_err("payoff"))?;
    let xi2 = e
        .second
        .payoff
        .as_ref()
        .unwrap_or(&cfg.payoff)
        .build()
        .and_then(|p| p.shifted(e.second.terminal_shift))
        .map_err(cfg_err("estimates.second.payoff"))?;
    let (f1, g1) = (cfg.f.build()?, cfg.g.build()?);
    let f2 = e.second.f.as_ref().unwrap_or(&cfg.f).build()?;
    let g2 = e.second.g.as_ref().unwrap_or(&cfg.g).build()?;
    let p1 = params(&xi1, &f1, &g1, lattice, "f/g")?;
    let p2 = params(&xi2, &f2, &g2, lattice, "estimates.second")?;
    let pair = SolvedPair::solve(&p1, &p2, lattice, &settings(cfg))?;
    let apriori = apriori_from(&pair, lattice, &e.betas, e.mu, e.nu)?;
    let sup_beta = e
        .sup_beta
        .or(apriori.beta0)
        .unwrap_or_else(|| apriori.rows.first().map_or(1.0, |r| r.beta));
    let sup = sup_estimate_from(&pair, lattice, sup_beta, e.mu, e.nu, cfg.seed)?;
    let bound = representation_bound_check(&xi1, lattice, &e.betas)?;
    let seq: Vec<Payoff> = e
        .cauchy_caps
        .iter()
        .map(|&cap| Payoff::new(PayoffKind::CappedQuadratic { cap }, 0.0))
        .collect::<gcalc_core::Result<_>>()
        .map_err(cfg_err("estimates.cauchy_caps"))?;
    let refs: Vec<&dyn TerminalFunctional> = seq.iter().map(|p| p as &dyn TerminalFunctional).collect();
    let cauchy = cauchy_sequence_check(&refs, lattice, e.cauchy_beta)?;

    let mut bound_t = Table::new("representation_bound.csv", &["beta", "m", "z", "eta", "lhs", "rhs", "holds"]);
    for r in &bound.rows {
        bound_t.push(vec![
            r.beta.into(),
            r.m.into(),
            r.z.into(),
            r.eta.into(),
            r.lhs.into(),
            r.rhs.into(),
            r.holds.into(),
        ]);
    }
    let mut cauchy_t = Table::new(
        "cauchy.csv",
        &["m", "n", "lhs_weighted", "lhs", "terminal_gap", "rhs", "holds_weighted", "holds"],
    );
    for r in &cauchy.pairs {
        cauchy_t.push(vec![
            r.m.into(),
            r.n.into(),
            r.lhs_weighted.into(),
            r.lhs.into(),
            r.terminal_gap.into(),
            r.rhs.into(),
            r.holds_weighted.into(),
            r.holds.into(),
        ]);
    }
    let printed_failures: Vec<f64> = apriori.rows.iter().filter(|r| !r.printed_pass()).map(|r| r.beta).collect();
    let passed = apriori.beta0.is_some() && sup.holds && bound.beta0.is_some() && cauchy.all_hold();
    Ok(Produced {
        outputs: json!({
            "apriori": {
                "beta0": apriori.beta0,
                "monotone_from_beta0": apriori.monotone_from_beta0,
                "printed_beta0": apriori.printed_beta0,
                "printed_failures_at_beta": printed_failures,
                "printed_constants": apriori.printed_constants,
                "conservative_constant": apriori.conservative_constant,
                "skipped_beta": apriori.skipped,
                "hypothesis_ii_violated": apriori.hypothesis_ii_violated,
                "mu": apriori.mu,
                "nu": apriori.nu,
            },
            "picard": [picard_json(&pair.reports[0]), picard_json(&pair.reports[1])],
            "sup_estimate": {
                "beta": sup.beta,
                "lhs": sup.lhs,
                "rhs": sup.rhs,
                "holds": sup.holds,
                "approximate": sup.approximate,
            },
            "representation_bound": {
                "second_moment": bound.second_moment,
                "beta0": bound.beta0,
                "all_hold": bound.all_hold(),
                "skipped_beta": bound.skipped,
            },
            "cauchy": {
                "beta": cauchy.beta,
                "caps": e.cauchy_caps,
                "all_hold": cauchy.all_hold(),
            },
        }),
        tables: vec![apriori_table(&apriori), bound_t, cauchy_t],
        passed: Some(passed),
    })
}

fn step_process(s: &StepConfig) -> gcalc_core::Result<StepProcess> {
    let pieces = s
        .pieces
        .iter()
        .map(|&PieceConfig { c0, c1 }| {
            Box::new(move |x: &[f64]| c0 + c1 * x.iter().sum::<f64>()) as Box<dyn Fn(&[f64]) -> f64 + Sync>
        })
        .collect();
    StepProcess::new(s.breaks.clone(), pieces)
}

/// Two-step processes with breaks at `0` and `N/2`; `ζ` stays bounded away
/// from zero near the origin.
fn random_steps(steps: usize, seed: u64) -> (StepConfig, StepConfig) {
    let mut rng = path_rng(seed, 0);
    let breaks = if steps > 1 { vec![0, steps / 2] } else { vec![0] };
    let mut draw = |lo0: f64, hi0: f64, c1: f64| {
        let pieces = breaks
            .iter()
            .map(|_| PieceConfig {
                c0: rng.random_range(lo0..hi0),
                c1: rng.random_range(-c1..c1),
            })
            .collect();
        StepConfig {
            breaks: breaks.clone(),
            pieces,
        }
    };
    let theta = draw(-1.0, 1.0, 1.0);
    let zeta = draw(0.5, 1.5, 0.25);
    (theta, zeta)
}

fn ratio_decay(cfg: &ExperimentConfig, lattice: &Lattice) -> Result<Produced, RunError> {
    let r = &cfg.ratio;
    let (theta_cfg, zeta_cfg) = match (&r.theta, &r.zeta) {
        (Some(t), Some(z)) => (t.clone(), z.clone()),
        _ => random_steps(lattice.steps(), cfg.seed),
    };
    let theta = step_process(&theta_cfg).map_err(|e| RunError::Config(format!("ratio.theta: {e}")))?;
    let zeta = step_process(&zeta_cfg).map_err(|e| RunError::Config(format!("ratio.zeta: {e}")))?;
    let rep = ratio_decay_report(lattice, &theta, &zeta, &r.betas, r.n_max, None)?;
    let mut ratio_t = Table::new("ratio.csv", &["beta", "numerator", "denominator", "ratio"]);
    for row in &rep.rows {
        ratio_t.push(vec![row.beta.into(), row.numerator.into(), row.denominator.into(), row.ratio.into()]);
    }
    let mut decay_t = Table::new(
        "decay.csv",
        &["n", "c_n", "d_n", "beta_n", "b_n", "t_n", "l_n", "m_n", "bound_holds"],
    );
    for d in &rep.decay {
        decay_t.push(vec![
            d.n.into(),
            d.c_n.into(),
            d.d_n.into(),
            d.beta_n.into(),
            d.b_n.into(),
            d.t_n.into(),
            d.l_n.into(),
            d.m_n.into(),
            d.bound_holds.into(),
        ]);
    }
    let last = rep.decay.last();
    Ok(Produced {
        outputs: json!({
            "theta": serde_json::to_value(&theta_cfg).map_err(|e| RunError::Internal(e.to_string()))?,
            "zeta": serde_json::to_value(&zeta_cfg).map_err(|e| RunError::Internal(e.to_string()))?,
            "all_bounds_hold": rep.all_bounds_hold(),
            "final_beta": last.map(|d| d.beta_n),
            "final_ratio": last.map(|d| d.b_n),
        }),
        tables: vec![ratio_t, decay_t],
        passed: Some(rep.all_bounds_hold()),
    })
}

fn capacity(cfg: &ExperimentConfig, lattice: &Lattice) -> Result<Produced, RunError> {
    let ev = cfg.capacity.event;
    let upper = capacity_estimate(lattice, |x| ev.holds(x))?;
    let lower = 1.0 - capacity_estimate(lattice, |x| !ev.holds(x))?;
    let ind = FnTerminal::new(1, f64::INFINITY, |x: &[f64], out: &mut [f64]| {
        out[0] = if ev.holds(x) { 1.0 } else { 0.0 };
    });
    let vol = lattice.volatility();
    let mut controls: Vec<(String, Box<dyn LatticeControl>)> = vec![
        ("upper".to_string(), Box::new(ConstantControl(vol.upper().to_vec()))),
        ("lower".to_string(), Box::new(ConstantControl(vol.lower().to_vec()))),
    ];
    for r in 0..cfg.checks.controls as u64 {
        controls.push((
            format!("random-corner-{r}"),
            Box::new(RandomCornerControl::new(lattice, cfg.seed.wrapping_add(r))),
        ));
    }
    let mut t = Table::new("capacity.csv", &["control", "mean", "std_error"]);
    let mut consistent = true;
    let mut mc_max: f64 = 0.0;
    for (name, ctl) in &controls {
        let est = control_monte_carlo(lattice, &ind, ctl.as_ref(), cfg.checks.paths, cfg.seed)?[0];
        consistent &= est.mean - 3.0 * est.std_error <= upper + 1e-12;
        consistent &= est.mean + 3.0 * est.std_error >= lower - 1e-12;
        mc_max = mc_max.max(est.mean);
        t.push(vec![Cell::Text(name.clone()), est.mean.into(), est.std_error.into()]);
    }
    Ok(Produced {
        outputs: json!({
            "capacity": upper,
            "lower_capacity": lower,
            "monte_carlo_max": mc_max,
            "monte_carlo_consistent": consistent,
        }),
        tables: vec![t],
        passed: Some(consistent),
    })
}
