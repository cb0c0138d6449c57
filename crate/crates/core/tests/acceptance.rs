//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dphi::baseline::{dare_solve, riccati_residual};
use dphi::dphi::{dphi_minimizing, dphi_randomizing, DPhiConfig, DPhiResult, DStepMode};
use dphi::dstep::{dstep_iterative_min, dstep_min_l1, dstep_min_linf, dstep_min_nu_consensus, dstep_min_nu_lp, dstep_randomize};
use dphi::harness::{cmd_sweep, cmd_verify, ControllerDocument, ExperimentConfig, Level, VerifyOptions, VerifyReport};
use dphi::model::{ClosedLoop, Mask, Plant};
use dphi::norms::{induced_norm, scaled_norm, DiagonalScaling, NormKind};
use dphi::phistep::{AdmmConfig, PhiStepper};
use dphi::sls::{achievability_residual, closed_loop_rollout};
use dphi::subsolver::{solve, ConvexSubproblem, Settings, SolveStatus};

use common::*;

const SEEDS: u64 = 5;

struct Run {
    seed: u64,
    plant: Plant,
    cfg: DPhiConfig,
    result: DPhiResult,
    seconds: f64,
    report: VerifyReport,
}

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn off_support(cl: &ClosedLoop, sx: &Mask, su: &Mask) -> usize {
    let count = |taps: &[DMatrix<f64>], mask: &Mask| -> usize {
        taps.iter()
            .map(|t| {
                (0..t.nrows())
                    .flat_map(|i| (0..t.ncols()).map(move |j| (i, j)))
                    .filter(|&(i, j)| !mask.get(i, j) && t[(i, j)] != 0.0)
                    .count()
            })
            .sum()
    };
    count(cl.phi_x().taps(), sx) + count(cl.phi_u().taps(), su)
}

fn unconstrained(plant: &Plant) -> dphi::phistep::PhiSolution {
    PhiStepper::new(ring_problem(plant, NormKind::NuMaxElt))
        .unwrap()
        .step(&DiagonalScaling::identity(plant.n()), f64::INFINITY)
        .unwrap()
        .solution
        .unwrap()
}

fn runs() -> Vec<Run> {
    let mut out = Vec::new();
    for seed in 0..SEEDS {
        let plant = ring(seed);
        for mode in [DStepMode::Minimize, DStepMode::Randomize] {
            let cfg = ring_config(&plant, NormKind::NuMaxElt, mode, seed);
            let start = Instant::now();
            let result = match mode {
                DStepMode::Randomize => dphi_randomizing(&plant, &cfg),
                _ => dphi_minimizing(&plant, &cfg),
            }
            .unwrap();
            let seconds = start.elapsed().as_secs_f64();
            let doc = ControllerDocument::new(&result, &cfg, 2);
            let report = cmd_verify(&doc, &plant, &VerifyOptions::default()).unwrap();
            out.push(Run {
                seed,
                plant: plant.clone(),
                cfg,
                result,
                seconds,
                report,
            });
        }
    }
    out
}

fn achievability(runs: &[Run]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut stray = 0;
    for r in runs {
        let cl = &r.result.closed_loop;
        worst = worst.max(achievability_residual(&r.plant, cl).unwrap());
        stray += off_support(cl, r.cfg.support.state_mask(), r.cfg.support.input_mask());
    }
    // One constrained Phi step per kind, just inside the unconstrained level.
    let plant = ring(0);
    let free = unconstrained(&plant);
    let mut slowest: f64 = 0.0;
    for kind in [NormKind::NuMaxElt, NormKind::L1RowMax, NormKind::LinfColMax] {
        let stepper = PhiStepper::new(ring_problem(&plant, kind)).unwrap();
        let level = 0.98 * induced_norm(&free.magnitude, kind);
        let start = Instant::now();
        let sol = stepper
            .step_with(&DiagonalScaling::identity(10), level, &AdmmConfig::default())
            .unwrap()
            .solution
            .unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        worst = worst.max(achievability_residual(&plant, &sol.closed_loop).unwrap());
        stray += off_support(&sol.closed_loop, stepper.problem().support.state_mask(), stepper.problem().support.input_mask());
    }
    let per_step = runs
        .iter()
        .map(|r| r.seconds / r.result.trace.phi_steps() as f64)
        .fold(0.0, f64::max);
    check(
        worst <= 1e-6 && stray == 0 && slowest <= 60.0 && per_step <= 60.0,
        format!(
            "max residual {worst:.2e}, {stray} off-support nonzeros, slowest single Phi step {slowest:.2} s, \
             slowest mean Phi step in a full run {per_step:.2} s"
        ),
    )
}

fn realization(runs: &[Run]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut loops: Vec<(Plant, ClosedLoop)> = (0..10)
        .map(|s| {
            let plant = ring(100 + s);
            let cl = unconstrained(&plant).closed_loop;
            (plant, cl)
        })
        .collect();
    loops.extend(runs.iter().map(|r| (r.plant.clone(), r.result.closed_loop.clone())));
    for (plant, cl) in &loops {
        let t = cl.horizon();
        for j in 0..plant.n() {
            let mut w = vec![DVector::zeros(plant.n())];
            w[0][j] = 1.0;
            let traj = closed_loop_rollout(plant, cl, &w, t + 1).unwrap();
            for p in 1..=t {
                worst = worst.max((&traj.x[p] - cl.phi_x().tap(p).column(j)).amax());
                worst = worst.max((&traj.u[p] - cl.phi_u().tap(p).column(j)).amax());
            }
        }
    }
    check(worst <= 1e-6, format!("max impulse-response mismatch {worst:.2e} over {} loops", loops.len()))
}

fn nu_lp_vs_karp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = ring_pattern_matrix(10, &mut rng);
        worst = worst.max((dstep_min_nu_lp(&m).unwrap().eta - karp_max_cycle_mean(&m).unwrap()).abs());
    }
    check(worst <= 1e-8, format!("max |eta - Karp| {worst:.2e} on 50 matrices"))
}

fn perron() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = irreducible_matrix(10, &mut rng);
        let (lo, hi) = perron_bracket(&m);
        let rho = 0.5 * (lo + hi);
        let l1 = scaled_norm(&m, &dstep_min_l1(&m).unwrap(), NormKind::L1RowMax).unwrap();
        let linf = scaled_norm(&m, &dstep_min_linf(&m).unwrap(), NormKind::LinfColMax).unwrap();
        worst = worst.max((l1 - rho).abs() / rho).max((linf - rho).abs() / rho);
    }
    check(worst <= 1e-6, format!("max relative gap to rho(M) {worst:.2e} on 50 matrices"))
}

fn consensus(runs: &[Run]) -> Outcome {
    let mut cases: Vec<(DMatrix<f64>, u64)> = runs.iter().map(|r| (r.result.magnitude.clone(), r.seed)).collect();
    cases.extend((0..SEEDS).map(|s| (unconstrained(&ring(s)).magnitude, s)));
    let mut worst: f64 = 0.0;
    let mut most = 0;
    let cfg = AdmmConfig::default();
    for (m, seed) in &cases {
        let support = ring_config(&ring(*seed), NormKind::NuMaxElt, DStepMode::Minimize, 0).support;
        let lp = dstep_min_nu_lp(m).unwrap();
        match dstep_min_nu_consensus(m, &support, &cfg, *seed, None) {
            Ok(c) => {
                worst = worst.max((c.eta - lp.eta).abs());
                most = most.max(c.iterations);
            }
            Err(e) => return Err(format!("seed {seed}: {e}")),
        }
    }
    check(
        worst <= 1e-3 && most <= 5000,
        format!("max |eta - LP| {worst:.2e}, at most {most} iterations, {} magnitude matrices", cases.len()),
    )
}

fn randomizing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violation: f64 = 0.0;
    let mut wrong_feasible = 0;
    let mut missed = 0;
    let mut landing: f64 = 0.0;
    let step = 0.05;
    for t in 0..50 {
        let m = irreducible_matrix(10, &mut rng);
        let (lo, hi) = perron_bracket(&m);
        let cycle = karp_max_cycle_mean(&m).unwrap().exp();
        for (kind, opt_lo, opt_hi) in [
            (NormKind::L1RowMax, lo, hi),
            (NormKind::LinfColMax, lo, hi),
            (NormKind::NuMaxElt, cycle, cycle),
        ] {
            for factor in [0.5, 0.9, 0.999, 1.001, 1.1, 2.0] {
                let beta = if factor < 1.0 { opt_lo * factor } else { opt_hi * factor };
                match dstep_randomize(&m, beta, kind, t).unwrap() {
                    Some(d) => {
                        if factor < 1.0 {
                            wrong_feasible += 1;
                        }
                        violation = violation.max(scaled_norm(&m, &d, kind).unwrap() / beta - 1.0);
                    }
                    None if factor > 1.0 => missed += 1,
                    None => {}
                }
            }
            let d = dstep_iterative_min(&m, kind, step, t).unwrap();
            landing = landing.max(scaled_norm(&m, &d, kind).unwrap() - opt_hi);
        }
    }
    check(
        violation <= 1e-9 && wrong_feasible == 0 && missed == 0 && landing <= step,
        format!(
            "max relative level violation {violation:.2e}, {wrong_feasible} scalings below the optimum, \
             {missed} misses above it, iterative minimum at most {landing:.3} above the optimum (step {step})"
        ),
    )
}

fn dphi_behavior(runs: &[Run]) -> Outcome {
    let mut problems = Vec::new();
    for r in runs {
        let levels = r.result.trace.levels();
        if levels.windows(2).any(|w| w[1] > w[0]) {
            problems.push(format!("seed {} {:?}: level increased", r.seed, r.cfg.mode));
        }
        let bound = ((levels[0] - r.cfg.beta_max) / r.cfg.beta_step).ceil() as usize + 1;
        if r.result.trace.phi_steps() > bound {
            problems.push(format!("seed {} {:?}: {} Phi steps > {bound}", r.seed, r.cfg.mode, r.result.trace.phi_steps()));
        }
        if !r.report.passed() {
            problems.push(format!("seed {} {:?}: verify failed\n{}", r.seed, r.cfg.mode, r.report));
        }
    }
    let mut spread: f64 = 0.0;
    for pair in runs.chunks(2) {
        // Same LQR denominator, so the margin ratio is the level ratio.
        let (a, b) = (pair[0].result.beta, pair[1].result.beta);
        spread = spread.max((a - b).abs() / a.min(b));
    }
    if spread > 0.1 {
        problems.push(format!("normalized margins differ by {:.1}%", 100.0 * spread));
    }
    let levels: Vec<String> = runs.chunks(2).map(|p| format!("{:.3}/{:.3}", p[0].result.beta, p[1].result.beta)).collect();
    check(
        problems.is_empty(),
        format!(
            "final beta alg1/alg2 per seed [{}], max margin gap {:.1}%{}",
            levels.join(", "),
            100.0 * spread,
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn tradeoff(runs: &[Run]) -> Outcome {
    let first = &runs[0];
    let start = first.result.trace.levels()[0];
    let end = first.result.beta;
    let targets = vec![
        Level(f64::INFINITY),
        Level(end + (start - end) * 2.0 / 3.0),
        Level(end + (start - end) / 3.0),
        Level(end),
        Level(1e-3),
    ];
    let cfg = ExperimentConfig {
        beta_max: targets,
        seed: first.seed,
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let lines = cmd_sweep(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let monotone = lines.windows(2).all(|w| w[1].margin_norm >= w[0].margin_norm);
    let above = lines.iter().all(|l| l.cost_norm >= 1.0);
    let pairs: Vec<String> = lines.iter().map(|l| format!("({:.3}, {:.3})", l.margin_norm, l.cost_norm)).collect();
    check(monotone && above, format!("(margin_norm, cost_norm) by decreasing beta_max: {}", pairs.join(" ")))
}

fn subsolver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut mismatched = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let mi = rng.random_range(1..=8);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = &g * g.transpose() + DMatrix::identity(n, n) * 0.1;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let ain = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
        let bin = DVector::from_fn(mi, |_, _| rng.random_range(-0.5..1.0));
        let (aeq, beq) = (DMatrix::zeros(0, n), DVector::zeros(0));
        let oracle = active_set_optimum(&p, &q, &aeq, &beq, &ain, &bin);
        let report = solve(
            &ConvexSubproblem::new(n).with_objective(p, q).with_inequalities(ain, bin),
            &Settings::default(),
        )
        .unwrap();
        match (oracle, report.status) {
            (Some(v), SolveStatus::Optimal) => worst = worst.max((report.objective - v).abs() / (1.0 + v.abs())),
            (None, SolveStatus::Infeasible) => {}
            _ => mismatched += 1,
        }
    }
    check(
        worst <= 1e-6 && mismatched == 0,
        format!("max relative objective gap {worst:.2e}, {mismatched} status mismatches on 100 instances"),
    )
}

fn lqr(runs: &[Run]) -> Outcome {
    let s = |v: f64| DMatrix::from_element(1, 1, v);
    let scalar = dare_solve(&s(2.0), &s(1.0), &s(1.0), &s(50.0)).map_err(|e| e.to_string())?;
    let root = (151.0 + 23001f64.sqrt()) / 2.0;
    let scalar_gap = (scalar.p[(0, 0)] - root).abs() / root;
    let mut residual: f64 = 0.0;
    let mut below = 0;
    let mut tightest = f64::INFINITY;
    for r in runs {
        let (qx, qu) = (&r.cfg.weights.qx, &r.cfg.weights.qu);
        let sol = dare_solve(r.plant.a(), r.plant.b(), qx, qu).map_err(|e| e.to_string())?;
        residual = residual.max(riccati_residual(r.plant.a(), r.plant.b(), qx, qu, &sol.p).unwrap());
        for rec in r.result.trace.records.iter().filter(|rec| rec.cost.is_finite()) {
            tightest = tightest.min(rec.cost / sol.cost());
            if rec.cost < sol.cost() {
                below += 1;
            }
        }
    }
    check(
        scalar_gap <= 1e-9 && residual <= 1e-9 && below == 0,
        format!(
            "scalar root relative gap {scalar_gap:.2e}, max Riccati residual {residual:.2e}, \
             lowest synthesized cost / LQR cost {tightest:.4}"
        ),
    )
}

fn rollout(runs: &[Run]) -> Outcome {
    let mut bounded = 0;
    let mut total = 0;
    for r in runs {
        total += 1;
        if r.report.check("rollout").is_some_and(|c| c.passed) {
            bounded += 1;
        }
    }
    check(
        bounded == total,
        format!(
            "{bounded}/{total} controllers bounded under 100 sampled perturbations at 0.9 of the margin, \
             1000 steps (statistical smoke test, not a certificate)"
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let started = Instant::now();
    let runs = catch_unwind(runs).ok();
    let need = |f: fn(&[Run]) -> Outcome| -> Outcome {
        match &runs {
            Some(r) => guarded(|| f(r)),
            None => Err("ring runs failed".into()),
        }
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("achievability", need(achievability)),
        ("realization", need(realization)),
        ("nu-dstep-optimality", guarded(nu_lp_vs_karp)),
        ("l1-linf-dstep-optimality", guarded(perron)),
        ("consensus-equivalence", need(consensus)),
        ("randomizing-step", guarded(randomizing)),
        ("dphi-behavior", need(dphi_behavior)),
        ("tradeoff-shape", need(tradeoff)),
        ("subsolver-oracle", guarded(subsolver)),
        ("lqr-baseline", need(lqr)),
        ("uncertain-rollout", need(rollout)),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria met in {:.0} s", results.len() - failed, results.len(), started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
