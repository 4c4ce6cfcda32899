//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gcalc_core::calculus::{
    lemma31_bounds, ratio_decay_report, simulate_path, time_weights, weighted_integral, StepProcess,
};
use gcalc_core::gtensor::{g_diag, g_sym_bruteforce, DiagTensor, Matrix, VolatilityBox};
use gcalc_core::harness::{apriori_check, cauchy_sequence_check, representation_bound_check, DEFAULT_BETA_GRID};
use gcalc_core::scenario::{
    build_lattice, lower_expectation, sublinear_expectation, Lattice, Payoff, PayoffKind, SpaceGrid,
    TerminalFunctional, TimeGrid,
};
use gcalc_core::solver::{
    classical_oracle, k_martingale_check, represent_martingale, residual_check, solve_gbsde, BsdeSolution,
    DriverSpec, GBsdeParams, PicardSettings,
};

type Outcome = Result<String, String>;

fn lattice(lo: f64, hi: f64, steps: usize, points: usize) -> Lattice {
    let vol = VolatilityBox::uniform(1, lo, hi, 5).unwrap();
    let space = SpaceGrid::for_box(points, 6.0, &vol, 1.0).unwrap();
    build_lattice(TimeGrid::new(1.0, steps).unwrap(), space, vol).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

/// `½ max over corners of Σ η_j σ²_j`, enumerating all `2^d` corners.
fn corner_enumeration(diag: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let d = diag.len();
    (0..1usize << d)
        .map(|mask| {
            0.5 * (0..d)
                .map(|j| diag[j] * if mask >> j & 1 == 1 { hi[j] } else { lo[j] })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_grid: f64 = 0.0;
    let mut worst_corner: f64 = 0.0;
    for draw in 0..1000 {
        let d = 1 + draw % 4;
        let n = 1 + draw % 3;
        // 10⁴ grid points in total
        let per_axis = [10_000, 100, 22, 10][d - 1];
        let lo: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..3.0)).collect();
        let vol = VolatilityBox::new(lo.clone(), hi.clone(), per_axis).map_err(err)?;
        let entries: Vec<f64> = (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let eta = DiagTensor::new(n, d, entries.clone()).map_err(err)?;
        let g = g_diag(&eta, &vol).map_err(err)?;
        let spacing = lo.iter().zip(&hi).map(|(l, h)| (h - l) / (per_axis - 1) as f64).fold(0.0, f64::max);
        for i in 0..n {
            let block = &entries[i * d..(i + 1) * d];
            let brute = g_sym_bruteforce(&Matrix::from_diag(block), &vol).map_err(err)?;
            let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            let gap = (g[i] - brute).abs();
            ensure(gap <= 0.5 * norm * spacing + 1e-12, || format!("grid gap {gap} at draw {draw}"))?;
            worst_grid = worst_grid.max(gap);
            let corner = (g[i] - corner_enumeration(block, &lo, &hi)).abs();
            ensure(corner <= 1e-12, || format!("corner gap {corner} at draw {draw}"))?;
            worst_corner = worst_corner.max(corner);
        }
    }
    Ok(format!("1000 draws, max grid gap {worst_grid:.1e}, max corner gap {worst_corner:.1e}"))
}

fn criterion_2() -> Outcome {
    let lat = lattice(1.0, 4.0, 200, 401);
    let q = Payoff::of(PayoffKind::Quadratic).map_err(err)?;
    let upper = sublinear_expectation(&lat, &q).map_err(err)?[0];
    let lower = lower_expectation(&lat, &q).map_err(err)?[0];
    ensure((upper - 4.0).abs() <= 0.05 && (lower - 1.0).abs() <= 0.05, || {
        format!("E[B_T²] = {upper}, −E[−B_T²] = {lower}")
    })?;
    Ok(format!("E[B_T²] = {upper:.6}, −E[−B_T²] = {lower:.6}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let time = TimeGrid::new(1.0, 20).map_err(err)?;
    let mut violations = 0;
    let mut draws = 0;
    for d in 1..=2 {
        for n in 1..=2 {
            for _ in 0..250 {
                let lo: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..2.0)).collect();
                let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..3.0)).collect();
                let vol = VolatilityBox::new(lo.clone(), hi.clone(), 5).map_err(err)?;
                let eta: Vec<DiagTensor> = (0..time.steps())
                    .map(|_| DiagTensor::new(n, d, (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect()))
                    .collect::<Result<_, _>>()
                    .map_err(err)?;
                let controls: Vec<Vec<f64>> = (0..time.steps())
                    .map(|_| lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..=*h)).collect())
                    .collect();
                let control = |k: usize, _b: &[f64], out: &mut [f64]| out.copy_from_slice(&controls[k]);
                let path = simulate_path(&time, &vol, &control, rng.random(), 0).map_err(err)?;
                let t = rng.random_range(0..time.steps());
                let s = rng.random_range(t + 1..=time.steps());
                let rep = lemma31_bounds(&eta, &path, &vol, t, s).map_err(err)?;
                if !(rep.abs_holds() && rep.sandwich_holds()) {
                    violations += 1;
                }
                draws += 1;
            }
        }
    }
    ensure(violations == 0, || format!("{violations} violations in {draws} draws"))?;
    Ok(format!("{draws} draws over d, n ∈ {{1, 2}}, 0 violations"))
}

fn criterion_4() -> Outcome {
    let lat = lattice(1.0, 4.0, 40, 241);
    let mut worst_final: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let breaks = vec![0, 20];
        let mut piece = |lo: f64, hi: f64, slope: f64| {
            let (c0, c1) = (rng.random_range(lo..hi), rng.random_range(-slope..slope));
            Box::new(move |x: &[f64]| c0 + c1 * x[0]) as Box<dyn Fn(&[f64]) -> f64 + Sync>
        };
        let theta = StepProcess::new(breaks.clone(), vec![piece(-1.0, 1.0, 1.0), piece(-1.0, 1.0, 1.0)]).map_err(err)?;
        let zeta = StepProcess::new(breaks, vec![piece(0.5, 1.5, 0.25), piece(0.5, 1.5, 0.25)]).map_err(err)?;
        let rep = ratio_decay_report(&lat, &theta, &zeta, &DEFAULT_BETA_GRID[..8], 20, None).map_err(err)?;
        for row in &rep.decay {
            ensure(row.d_n > 0.0, || format!("seed {seed}: D_{} = {}", row.n, row.d_n))?;
            ensure(row.b_n <= 1.0 / row.n as f64, || format!("seed {seed}: B_{} = {}", row.n, row.b_n))?;
        }
        let last = rep.decay[19].b_n;
        ensure(last <= 0.05, || format!("seed {seed}: ratio at β(20) = {last}"))?;
        worst_final = worst_final.max(last);
    }
    Ok(format!("10 random pairs, B_n ≤ 1/n for n ≤ 20, worst ratio at β(20) = {worst_final:.4}"))
}

fn criterion_5() -> Outcome {
    let payoffs = [
        ("constant", PayoffKind::Constant),
        ("linear", PayoffKind::Linear),
        ("quadratic", PayoffKind::Quadratic),
        ("neg-quadratic", PayoffKind::NegQuadratic),
        ("abs", PayoffKind::Abs),
        ("butterfly", PayoffKind::Butterfly { lower: -1.0, upper: 1.0 }),
    ];
    let coarse = lattice(1.0, 4.0, 100, 401);
    let fine = lattice(1.0, 4.0, 200, 801);
    let mut notes = Vec::new();
    for (name, kind) in payoffs {
        let xi = Payoff::new(kind, if name == "constant" { 1.5 } else { 0.0 }).map_err(err)?;
        let s_c = represent_martingale(&xi, &coarse).map_err(err)?;
        let s_f = represent_martingale(&xi, &fine).map_err(err)?;
        let min_k = s_f.min_k_increment();
        ensure(min_k >= -1e-6, || format!("{name}: K increment {min_k}"))?;
        let r_c = residual_check(&s_c, None, &coarse, 256, 5).map_err(err)?.on_policy_max;
        let r_f = residual_check(&s_f, None, &fine, 256, 5).map_err(err)?.on_policy_max;
        ensure(r_c <= 5e-3 && r_f <= 5e-3, || format!("{name}: residuals {r_c}, {r_f}"))?;
        ensure(r_f <= (r_c / 2.0).max(1e-10), || format!("{name}: residual {r_c} → {r_f} does not halve"))?;
        let km = k_martingale_check(&s_f, &fine, 64, 512, 9).map_err(err)?;
        ensure(km.iter().all(|r| r.within_three_se()), || format!("{name}: {km:?}"))?;
        notes.push(format!("{name} r={r_f:.0e}"));
    }
    Ok(notes.join(", "))
}

fn central_errors(sol: &BsdeSolution, lat: &Lattice, sign: f64, var: f64) -> (f64, f64, f64) {
    let layout = &sol.layout;
    let half = lat.space().half_width() / 2.0;
    let (mut ey, mut ez, mut ee): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..=lat.steps() {
        let t = lat.time().time(k);
        for node in 0..layout.layer_len(k) {
            let mut x = [0.0];
            layout.coords(lat.space(), node, &mut x);
            if x[0].abs() > half {
                continue;
            }
            let y = sol.y.get(k, node)[0];
            ey = ey.max((y - sign * (x[0] * x[0] + var * (1.0 - t))).abs());
            if k < lat.steps() {
                ez = ez.max((sol.z.get(k, node)[0] - sign * 2.0 * x[0]).abs());
                ee = ee.max((sol.eta.get(k, node)[0] - sign * 2.0).abs());
            }
        }
    }
    (ey, ez, ee)
}

fn criterion_6() -> Outcome {
    let lat = lattice(1.0, 4.0, 200, 401);
    let mut notes = Vec::new();
    for (kind, sign, var) in [(PayoffKind::Quadratic, 1.0, 4.0), (PayoffKind::NegQuadratic, -1.0, 1.0)] {
        let sol = represent_martingale(&Payoff::of(kind).map_err(err)?, &lat).map_err(err)?;
        let (ey, ez, ee) = central_errors(&sol, &lat, sign, var);
        ensure(ey <= 0.05 && ez <= 0.05 && ee <= 0.1, || format!("{kind:?}: M {ey}, Z {ez}, η {ee}"))?;
        notes.push(format!("{kind:?}: M {ey:.1e}, Z {ez:.1e}, η {ee:.1e}"));
    }
    Ok(notes.join("; "))
}

fn rms_gap(lat: &Lattice, a: &BsdeSolution, b: &BsdeSolution, beta: f64) -> Result<f64, String> {
    let w = time_weights(lat.time(), beta).map_err(err)?;
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / total).collect();
    let mut s = 0.0;
    for (x, y) in [(&a.y, &b.y), (&a.z, &b.z), (&a.eta, &b.eta)] {
        s += weighted_integral(lat, &a.layout, &x.sub(y).map_err(err)?, &w, 0).map_err(err)?;
    }
    Ok(s.sqrt())
}

fn criterion_7() -> Outcome {
    let lat = lattice(1.0, 4.0, 100, 401);
    let xi = Payoff::of(PayoffKind::Quadratic).map_err(err)?;
    let f = DriverSpec::LinearInY { r: -0.5 };
    let zero = DriverSpec::Zero;
    let p = GBsdeParams::new(&xi, &f, &zero, 1).map_err(err)?;
    let settings = PicardSettings::default();
    let (s1, rep) = solve_gbsde(&p, &lat, &settings).map_err(err)?;
    let m = rep.contraction_factor.ok_or("no contraction factor")?;
    ensure(m < 1.0, || format!("contraction factor {m}"))?;
    ensure(rep.factors.len() >= 5 && rep.factors.iter().all(|&q| q < 1.0), || {
        format!("factors {:?}", rep.factors)
    })?;
    // second start: the representation of a shifted terminal value
    let start = represent_martingale(&Payoff::new(PayoffKind::Abs, 10.0).map_err(err)?, &lat).map_err(err)?;
    let (s2, _) = solve_gbsde(
        &p,
        &lat,
        &PicardSettings {
            init: Some(start.to_iterate()),
            beta: Some(rep.beta),
            ..settings.clone()
        },
    )
    .map_err(err)?;
    let gap = rms_gap(&lat, &s1, &s2, rep.beta)?;
    ensure(gap <= 2.0 * settings.tol, || format!("fixed points differ by {gap}"))?;

    let deg = VolatilityBox::degenerate(vec![2.0]).map_err(err)?;
    let space = SpaceGrid::for_box(401, 6.0, &deg, 1.0).map_err(err)?;
    let dlat = build_lattice(TimeGrid::new(1.0, 100).map_err(err)?, space, deg).map_err(err)?;
    let (sd, _) = solve_gbsde(&p, &dlat, &PicardSettings { tol: 1e-13, ..PicardSettings::default() }).map_err(err)?;
    let oracle = classical_oracle(&p, &dlat).map_err(err)?;
    let dev = sd.y.sub(&oracle.y).map_err(err)?.max_abs();
    ensure(dev <= 1e-8, || format!("degenerate box deviates from the classical oracle by {dev}"))?;
    Ok(format!(
        "factor {m:.3} over {} iterations, init gap {gap:.1e}, oracle gap {dev:.1e}",
        rep.factors.len()
    ))
}

fn criterion_8() -> Outcome {
    let lat = lattice(1.0, 4.0, 100, 401);
    let settings = PicardSettings::default();
    let xi = Payoff::of(PayoffKind::Quadratic).map_err(err)?;
    let xi_shift = xi.shifted(0.1).map_err(err)?;
    let f = DriverSpec::LinearInY { r: -0.5 };
    let f_shift = DriverSpec::ClampedAffine {
        c0: 0.1,
        cy: -0.5,
        cz: 0.0,
        ceta: 0.0,
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
    let zero = DriverSpec::Zero;
    let base = GBsdeParams::new(&xi, &f, &zero, 1).map_err(err)?;
    let cases = [
        ("terminal", GBsdeParams::new(&xi_shift, &f, &zero, 1).map_err(err)?),
        ("driver", GBsdeParams::new(&xi, &f_shift, &zero, 1).map_err(err)?),
    ];
    let mut notes = Vec::new();
    for (name, other) in &cases {
        let rep = apriori_check(&base, other, &lat, &DEFAULT_BETA_GRID, 1.0, 1.0, &settings).map_err(err)?;
        let b0 = rep.beta0.ok_or_else(|| format!("{name}: no β ≤ 1024 passes"))?;
        let printed: Vec<f64> = rep.rows.iter().filter(|r| !r.printed_pass()).map(|r| r.beta).collect();
        if !printed.is_empty() {
            println!("  note: {name} perturbation fails the printed constants at β = {printed:?}");
        }
        notes.push(format!("{name} β₀ = {b0}"));
    }
    for kind in [PayoffKind::Linear, PayoffKind::Quadratic] {
        let rep = representation_bound_check(&Payoff::of(kind).map_err(err)?, &lat, &DEFAULT_BETA_GRID).map_err(err)?;
        ensure(rep.all_hold(), || format!("{kind:?}: representation bound {:?}", rep.rows))?;
    }
    let caps: Vec<Payoff> = [1.0, 2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|&cap| Payoff::new(PayoffKind::CappedQuadratic { cap }, 0.0))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let refs: Vec<&dyn TerminalFunctional> = caps.iter().map(|p| p as &dyn TerminalFunctional).collect();
    let cauchy = cauchy_sequence_check(&refs, &lat, 1.0).map_err(err)?;
    ensure(cauchy.all_hold(), || format!("Cauchy bound {:?}", cauchy.pairs))?;
    notes.push(format!("bound for B_T, B_T²; Cauchy over {} pairs", cauchy.pairs.len()));
    Ok(notes.join(", "))
}

fn run_cli(cmd: &str, config: &Path, out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_gcalc"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--seed", "42"])
        .output()
        .map_err(err)?;
    ensure(o.status.success(), || format!("{cmd}: {}", String::from_utf8_lossy(&o.stderr)))
}

fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut v = Vec::new();
    for e in fs::read_dir(dir).map_err(err)? {
        let e = e.map_err(err)?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.ends_with(".csv") {
            v.push((name, fs::read(e.path()).map_err(err)?));
        }
    }
    v.sort();
    Ok(v)
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::TempDir::new().map_err(err)?;
    let config = serde_json::json!({
        "box": {"d": 1, "lower": [1], "upper": [4]},
        "time": {"horizon": 1, "steps": 40},
        "space": {"points": 241},
        "payoff": {"kind": "quadratic"},
        "f": {"kind": "linear-in-y", "r": -0.5},
        "estimates": {"second": {"f": {"kind": "constant", "c": 0.1}}}
    });
    let path = tmp.path().join("config.json");
    fs::write(&path, config.to_string()).map_err(err)?;
    let commands = ["expect", "represent", "solve", "verify-estimates", "ratio-decay", "capacity"];
    let mut tables = 0;
    for cmd in commands {
        let (a, b) = (tmp.path().join(format!("{cmd}-1")), tmp.path().join(format!("{cmd}-2")));
        run_cli(cmd, &path, &a)?;
        run_cli(cmd, &path, &b)?;
        let (fa, fb) = (csv_files(&a)?, csv_files(&b)?);
        ensure(!fa.is_empty(), || format!("{cmd}: no CSV output"))?;
        ensure(fa == fb, || format!("{cmd}: CSV differs between runs"))?;
        tables += fa.len();
    }
    Ok(format!("6 commands, {tables} CSV tables byte-identical"))
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 9] = [
        (1, "G-function exactness", Duration::from_secs(5), criterion_1),
        (2, "sublinear expectation anchors", Duration::from_secs(10), criterion_2),
        (3, "quadratic-variation integral bounds", Duration::from_secs(30), criterion_3),
        (4, "ratio decay", Duration::from_secs(10), criterion_4),
        (5, "representation invariants", Duration::from_secs(120), criterion_5),
        (6, "closed-form reproduction", Duration::from_secs(60), criterion_6),
        (7, "Picard contraction", Duration::from_secs(120), criterion_7),
        (8, "estimate verification", Duration::from_secs(180), criterion_8),
        (9, "CLI determinism", Duration::from_secs(600), criterion_9),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let result = result.and_then(|m| {
            if elapsed <= budget {
                Ok(m)
            } else {
                Err(format!("{m}; took {elapsed:.1?} > {budget:?}"))
            }
        });
        match result {
            Ok(m) => println!("PASS criterion {id} ({name}) in {elapsed:.2?}: {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) in {elapsed:.2?}: {m}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
