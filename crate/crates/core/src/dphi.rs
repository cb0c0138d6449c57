//! The two outer D-Phi iterations and the cost/margin tradeoff sweep.
//!
//! Both loops tighten the level by `beta_step` each round and stop when the
//! level reaches `beta_max` or no progress can be made. The minimizing loop
//! re-optimizes the scaling after every Phi step; the randomizing loop only
//! looks for some scaling at the current level, and on an infeasible Phi step
//! tries a fresh scaling before giving up.

use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dstep;
use crate::model::{ClosedLoop, Plant, Support};
use crate::norms::{scaled_norm, DiagonalScaling, NormKind, Regulation};
use crate::phistep::{AdmmConfig, PerfWeights, PhiProblem, PhiSolution, PhiStepper};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DStepMode {
    Minimize,
    IterativelyMinimize,
    Randomize,
}

impl DStepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DStepMode::Minimize => "minimize",
            DStepMode::IterativelyMinimize => "iteratively-minimize",
            DStepMode::Randomize => "randomize",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// Minimizing (or iteratively minimizing) D step.
    #[serde(rename = "alg1")]
    Minimizing,
    /// Randomizing D step.
    #[serde(rename = "alg2")]
    Randomizing,
}

#[derive(Clone, Debug)]
pub struct DPhiConfig {
    pub beta_step: f64,
    /// Target level; `f64::INFINITY` accepts the first iterate.
    pub beta_max: f64,
    pub stab: NormKind,
    pub perf: NormKind,
    pub weights: PerfWeights,
    pub regulation: Regulation,
    pub support: Support,
    pub horizon: usize,
    pub mode: DStepMode,
    /// Use the consensus form of the nu minimizing step.
    pub consensus: bool,
    pub seed: u64,
    pub admm: AdmmConfig,
}

impl DPhiConfig {
    pub fn validate(&self, algorithm: Algorithm) -> Result<()> {
        if !(self.beta_step > 0.0 && self.beta_step.is_finite()) {
            return Err(Error::Config("beta_step must be positive and finite".into()));
        }
        if !(self.beta_max > 0.0) {
            return Err(Error::Config("beta_max must be positive".into()));
        }
        if !self.stab.is_stability_kind() {
            return Err(Error::Config(format!("{} is not a stability kind", self.stab)));
        }
        if self.horizon < 2 {
            return Err(Error::Config("horizon must be at least 2".into()));
        }
        match (algorithm, self.mode) {
            (Algorithm::Minimizing, DStepMode::Randomize) => {
                return Err(Error::Config("alg1 takes a minimize or iteratively-minimize D step".into()))
            }
            (Algorithm::Randomizing, DStepMode::Minimize | DStepMode::IterativelyMinimize) => {
                return Err(Error::Config("alg2 takes a randomize D step".into()))
            }
            _ => {}
        }
        if self.consensus && self.mode == DStepMode::Minimize && self.stab != NormKind::NuMaxElt {
            return Err(Error::Config(format!(
                "the minimizing {} D step has no distributed form; use iteratively-minimize or turn consensus off",
                self.stab
            )));
        }
        self.admm.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn problem(&self, plant: &Plant) -> PhiProblem {
        PhiProblem {
            plant: plant.clone(),
            support: self.support.clone(),
            horizon: self.horizon,
            weights: self.weights.clone(),
            perf: self.perf,
            regulation: self.regulation.clone(),
            stab: self.stab,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    PhiStep,
    DStep,
    ReSolve,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::PhiStep => "phi-step",
            Phase::DStep => "d-step",
            Phase::ReSolve => "re-solve",
        })
    }
}

#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub k: usize,
    pub phase: Phase,
    /// Level used by a Phi step, or the level reached by a D step.
    pub beta: f64,
    /// Nominal cost of the current closed loop; NaN when there is none.
    pub cost: f64,
    pub feasible: bool,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, Default)]
pub struct IterationTrace {
    pub records: Vec<TraceRecord>,
}

impl IterationTrace {
    pub fn phi_steps(&self) -> usize {
        self.records.iter().filter(|r| r.phase == Phase::PhiStep).count()
    }

    /// `k,phase,beta,cost,feasible,elapsed_ms`. With `timing` off the elapsed
    /// column is written as 0 so runs compare byte for byte.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("k,phase,beta,cost,feasible,elapsed_ms\n");
        for r in &self.records {
            let elapsed = if timing { r.elapsed_ms } else { 0.0 };
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                r.k, r.phase, r.beta, r.cost, r.feasible, elapsed
            ));
        }
        out
    }

    /// `beta^k` per iteration: the level of the last feasible record of each `k`.
    pub fn levels(&self) -> Vec<f64> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for r in self.records.iter().filter(|r| r.feasible && r.beta.is_finite()) {
            match out.last_mut() {
                Some(last) if last.0 == r.k => last.1 = r.beta,
                _ => out.push((r.k, r.beta)),
            }
        }
        out.into_iter().map(|(_, b)| b).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    /// `beta <= beta_max`.
    TargetMet,
    /// No further progress at the next level.
    Stalled,
    /// A solver failed; the result holds the last consistent iterate.
    Aborted(String),
}

#[derive(Clone, Debug)]
pub struct DPhiResult {
    pub closed_loop: ClosedLoop,
    pub magnitude: DMatrix<f64>,
    pub scaling: DiagonalScaling,
    /// Certified level: `||D M D^{-1}|| <= beta` for the returned pair.
    pub beta: f64,
    pub cost: f64,
    /// Index `k` of the returned iterate.
    pub iterations: usize,
    pub termination: Termination,
    pub trace: IterationTrace,
}

struct Iterate {
    solution: PhiSolution,
    scaling: DiagonalScaling,
    beta: f64,
    k: usize,
}

struct Run {
    start: Instant,
    trace: IterationTrace,
}

impl Run {
    fn new() -> Self {
        Run {
            start: Instant::now(),
            trace: IterationTrace::default(),
        }
    }

    fn record(&mut self, k: usize, phase: Phase, beta: f64, cost: Option<f64>, feasible: bool) {
        self.trace.records.push(TraceRecord {
            k,
            phase,
            beta,
            cost: cost.unwrap_or(f64::NAN),
            feasible,
            elapsed_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
    }

    fn finish(self, it: Iterate, termination: Termination) -> DPhiResult {
        DPhiResult {
            cost: it.solution.cost,
            closed_loop: it.solution.closed_loop,
            magnitude: it.solution.magnitude,
            scaling: it.scaling.with_beta(it.beta),
            beta: it.beta,
            iterations: it.k,
            termination,
            trace: self.trace,
        }
    }
}

/// D-Phi iteration with a minimizing (or iteratively minimizing) D step.
pub fn dphi_minimizing(plant: &Plant, cfg: &DPhiConfig) -> Result<DPhiResult> {
    cfg.validate(Algorithm::Minimizing)?;
    let stepper = PhiStepper::new(cfg.problem(plant))?;
    run_minimizing(&stepper, cfg)
}

/// D-Phi iteration with a randomizing D step, starting from `D = I`.
pub fn dphi_randomizing(plant: &Plant, cfg: &DPhiConfig) -> Result<DPhiResult> {
    cfg.validate(Algorithm::Randomizing)?;
    let stepper = PhiStepper::new(cfg.problem(plant))?;
    run_randomizing(&stepper, cfg)
}

pub fn dphi_run(plant: &Plant, cfg: &DPhiConfig, algorithm: Algorithm) -> Result<DPhiResult> {
    match algorithm {
        Algorithm::Minimizing => dphi_minimizing(plant, cfg),
        Algorithm::Randomizing => dphi_randomizing(plant, cfg),
    }
}

fn run_with(stepper: &PhiStepper, cfg: &DPhiConfig, algorithm: Algorithm) -> Result<DPhiResult> {
    match algorithm {
        Algorithm::Minimizing => run_minimizing(stepper, cfg),
        Algorithm::Randomizing => run_randomizing(stepper, cfg),
    }
}

/// Phi step at `(scaling, beta)`; `Ok(None)` when infeasible.
///
/// A constrained step whose splitting method runs out of iterations produced
/// nothing certifiable at this level and counts as infeasible.
fn phi(stepper: &PhiStepper, cfg: &DPhiConfig, scaling: &DiagonalScaling, beta: f64) -> Result<Option<PhiSolution>> {
    match stepper.step_with(scaling, beta, &cfg.admm) {
        Ok(outcome) => Ok(outcome.solution),
        Err(Error::Convergence(_)) if beta.is_finite() => Ok(None),
        Err(e) => Err(e),
    }
}

fn first_iterate(stepper: &PhiStepper, cfg: &DPhiConfig, run: &mut Run) -> Result<PhiSolution> {
    let id = DiagonalScaling::identity(stepper.problem().plant.n());
    let first = phi(stepper, cfg, &id, f64::INFINITY)?;
    run.record(1, Phase::PhiStep, f64::INFINITY, first.as_ref().map(|s| s.cost), first.is_some());
    first.ok_or_else(|| Error::Convergence("the unconstrained Phi step is infeasible".into()))
}

/// Minimizing D step on `m`, never worse than `fallback` (the scaling that
/// certified the Phi step).
fn minimizing_dstep(
    m: &DMatrix<f64>,
    cfg: &DPhiConfig,
    fallback: Option<&DiagonalScaling>,
    k: usize,
) -> Result<(DiagonalScaling, f64)> {
    let seed = cfg.seed.wrapping_add(k as u64);
    let scaling = match (cfg.mode, cfg.stab, cfg.consensus) {
        (DStepMode::Minimize, NormKind::NuMaxElt, true) => {
            dstep::dstep_min_nu_consensus(m, &cfg.support, &cfg.admm, seed, None)?.scaling
        }
        (DStepMode::Minimize, kind, _) => dstep::dstep_minimize(m, kind)?,
        (DStepMode::IterativelyMinimize, kind, _) => dstep::dstep_iterative_min(m, kind, cfg.beta_step, seed)?,
        (DStepMode::Randomize, ..) => unreachable!("validated"),
    };
    let beta = scaled_norm(m, &scaling, cfg.stab)?;
    if let Some(old) = fallback {
        let old_beta = scaled_norm(m, old, cfg.stab)?;
        if old_beta < beta {
            return Ok((old.clone(), old_beta));
        }
    }
    Ok((scaling, beta))
}

fn run_minimizing(stepper: &PhiStepper, cfg: &DPhiConfig) -> Result<DPhiResult> {
    let mut run = Run::new();
    let first = first_iterate(stepper, cfg, &mut run)?;
    let (scaling, beta) = minimizing_dstep(&first.magnitude, cfg, None, 1)?;
    run.record(1, Phase::DStep, beta, Some(first.cost), true);
    let mut cur = Iterate {
        solution: first,
        scaling,
        beta,
        k: 1,
    };
    loop {
        if cur.beta <= cfg.beta_max {
            return Ok(run.finish(cur, Termination::TargetMet));
        }
        let k = cur.k + 1;
        let level = cur.beta - cfg.beta_step;
        if level <= 0.0 {
            return Ok(run.finish(cur, Termination::Stalled));
        }
        let sol = match phi(stepper, cfg, &cur.scaling, level) {
            Ok(s) => s,
            Err(e) => return Ok(run.finish(cur, Termination::Aborted(format!("Phi step {k}: {e}")))),
        };
        run.record(k, Phase::PhiStep, level, sol.as_ref().map(|s| s.cost), sol.is_some());
        let Some(sol) = sol else {
            return Ok(run.finish(cur, Termination::Stalled));
        };
        let (scaling, beta) = match minimizing_dstep(&sol.magnitude, cfg, Some(&cur.scaling), k) {
            Ok(v) => v,
            Err(e) => return Ok(run.finish(cur, Termination::Aborted(format!("D step {k}: {e}")))),
        };
        run.record(k, Phase::DStep, beta, Some(sol.cost), true);
        cur = Iterate {
            solution: sol,
            scaling,
            beta,
            k,
        };
    }
}

fn run_randomizing(stepper: &PhiStepper, cfg: &DPhiConfig) -> Result<DPhiResult> {
    let mut run = Run::new();
    let first = first_iterate(stepper, cfg, &mut run)?;
    let id = DiagonalScaling::identity(first.magnitude.nrows());
    let beta = scaled_norm(&first.magnitude, &id, cfg.stab)?;
    let mut cur = Iterate {
        solution: first,
        scaling: id,
        beta,
        k: 1,
    };
    loop {
        if cur.beta <= cfg.beta_max {
            return Ok(run.finish(cur, Termination::TargetMet));
        }
        // Some scaling at the current level for the current closed loop.
        let seed = cfg.seed.wrapping_add(cur.k as u64);
        match dstep::dstep_randomize(&cur.solution.magnitude, cur.beta, cfg.stab, seed) {
            Ok(Some(d)) => cur.scaling = d,
            // The current scaling already certifies the level.
            Ok(None) => {}
            Err(e) => {
                let k = cur.k;
                return Ok(run.finish(cur, Termination::Aborted(format!("D step {k}: {e}"))));
            }
        }
        run.record(cur.k, Phase::DStep, cur.beta, Some(cur.solution.cost), true);

        let k = cur.k + 1;
        let level = cur.beta - cfg.beta_step;
        if level <= 0.0 {
            return Ok(run.finish(cur, Termination::Stalled));
        }
        let sol = match phi(stepper, cfg, &cur.scaling, level) {
            Ok(s) => s,
            Err(e) => return Ok(run.finish(cur, Termination::Aborted(format!("Phi step {k}: {e}")))),
        };
        run.record(k, Phase::PhiStep, level, sol.as_ref().map(|s| s.cost), sol.is_some());
        let sol = match sol {
            Some(s) => s,
            None => {
                // A scaling that brings the last closed loop to the new level.
                let seed = cfg.seed.wrapping_add(k as u64);
                let rescue = match dstep::dstep_randomize(&cur.solution.magnitude, level, cfg.stab, seed) {
                    Ok(r) => r,
                    Err(e) => return Ok(run.finish(cur, Termination::Aborted(format!("D step {k}: {e}")))),
                };
                run.record(k, Phase::DStep, level, Some(cur.solution.cost), rescue.is_some());
                let Some(d) = rescue else {
                    return Ok(run.finish(cur, Termination::Stalled));
                };
                let sol = match phi(stepper, cfg, &d, level) {
                    Ok(s) => s,
                    Err(e) => return Ok(run.finish(cur, Termination::Aborted(format!("Phi step {k}: {e}")))),
                };
                run.record(k, Phase::ReSolve, level, sol.as_ref().map(|s| s.cost), sol.is_some());
                let Some(sol) = sol else {
                    return Ok(run.finish(cur, Termination::Stalled));
                };
                cur.scaling = d;
                sol
            }
        };
        // The level, unless the solver's tolerance left the loop slightly above it.
        let beta = match scaled_norm(&sol.magnitude, &cur.scaling, cfg.stab) {
            Ok(b) => b.max(level),
            Err(e) => return Ok(run.finish(cur, Termination::Aborted(format!("Phi step {k}: {e}")))),
        };
        cur = Iterate {
            solution: sol,
            scaling: cur.scaling,
            beta,
            k,
        };
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub beta_max: f64,
    pub beta: f64,
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
}

/// Runs `algorithm` once per target level, sharing one Phi-step setup.
pub fn tradeoff_sweep(plant: &Plant, cfg: &DPhiConfig, algorithm: Algorithm, beta_max: &[f64]) -> Result<Vec<SweepRow>> {
    if beta_max.is_empty() {
        return Err(Error::Config("beta_max list is empty".into()));
    }
    let mut point = cfg.clone();
    for &b in beta_max {
        point.beta_max = b;
        point.validate(algorithm)?;
    }
    let stepper = PhiStepper::new(cfg.problem(plant))?;
    beta_max
        .iter()
        .map(|&b| {
            point.beta_max = b;
            let r = run_with(&stepper, &point, algorithm)?;
            Ok(SweepRow {
                beta_max: b,
                beta: r.beta,
                cost: r.cost,
                iterations: r.iterations,
                termination: r.termination,
            })
        })
        .collect()
}
