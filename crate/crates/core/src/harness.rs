//! Experiment configuration, file formats and the commands behind the CLI.
//!
//! Every command writes deterministic files: CSV tables, the plant JSON and a
//! controller JSON holding the exact taps. Wall-clock timing is only written
//! when asked for.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::baseline::{dare_solve, lqr_beta, LqrSolution};
use crate::dphi::{dphi_run, tradeoff_sweep, Algorithm, DPhiConfig, DPhiResult, DStepMode, Termination};
use crate::dstep;
use crate::model::{dhop_support, matrix_from_rows, ring_plant, rows_of, ClosedLoop, FirTransferMatrix, Plant, Support};
use crate::norms::{magnitude_matrix, scaled_norm, DiagonalScaling, NormKind, Regulation};
use crate::phistep::{AdmmConfig, PerfWeights};
use crate::sls::{achievability_residual, sample_uncertainty, uncertain_rollout};
use crate::{Error, Result};

/// Overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "DPHI_OUTPUT_DIR";

pub const EXIT_TARGET_MET: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_STALLED: i32 = 2;

pub const ACHIEVABILITY_TOL: f64 = 1e-6;
pub const ROLLOUT_SEEDS: u64 = 100;
pub const ROLLOUT_STEPS: usize = 1000;
/// Uncertainty size in the rollout smoke test, as a fraction of the margin.
pub const ROLLOUT_FRACTION: f64 = 0.9;

/// A target level; `"inf"` in JSON for no target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level(pub f64);

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Level(v)),
            Raw::Text(t) if t == "inf" || t == "infinity" => Ok(Level(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_finite() {
            write!(f, "{}", self.0)
        } else {
            f.write_str("inf")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSource {
    /// Random ring generated from the experiment seed.
    Ring { n: usize, rho: f64 },
    /// Plant JSON; relative paths are taken from the config file's directory.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmSettings {
    pub gamma: f64,
    pub tol_consensus: f64,
    pub tol_progress: f64,
    pub max_iter: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        let d = AdmmConfig::default();
        AdmmSettings {
            gamma: d.gamma,
            tol_consensus: d.tol_consensus,
            tol_progress: d.tol_progress,
            max_iter: d.max_iter,
        }
    }
}

impl From<&AdmmSettings> for AdmmConfig {
    fn from(s: &AdmmSettings) -> Self {
        AdmmConfig {
            gamma: s.gamma,
            tol_consensus: s.tol_consensus,
            tol_progress: s.tol_progress,
            max_iter: s.max_iter,
        }
    }
}

/// One experiment. Defaults are the ring experiment: 10 nodes, spectral
/// radius 3, 30 taps, 2-hop locality, `Qx = I`, `Qu = 50 I`, `z = x + u`,
/// level step 0.05.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSource,
    pub horizon: usize,
    pub hops: usize,
    pub stab: NormKind,
    pub perf: NormKind,
    pub algorithm: Algorithm,
    /// Defaults to `minimize` for alg1 and `randomize` for alg2.
    pub dstep_mode: Option<DStepMode>,
    pub consensus: bool,
    pub beta_step: f64,
    /// `dphi` takes exactly one entry; `sweep` runs each.
    pub beta_max: Vec<Level>,
    pub qx: f64,
    pub qu: f64,
    pub hx: f64,
    pub hu: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub admm: AdmmSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            plant: PlantSource::Ring { n: 10, rho: 3.0 },
            horizon: 30,
            hops: 2,
            stab: NormKind::NuMaxElt,
            perf: NormKind::H2,
            algorithm: Algorithm::Minimizing,
            dstep_mode: None,
            consensus: false,
            beta_step: 0.05,
            beta_max: vec![Level(1e-3)],
            qx: 1.0,
            qu: 50.0,
            hx: 1.0,
            hu: 1.0,
            seed: 0,
            output_dir: PathBuf::from("out"),
            admm: AdmmSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; parse errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, resolving a relative plant path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })?;
        if let PlantSource::File(p) = &mut cfg.plant {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn dstep_mode(&self) -> DStepMode {
        self.dstep_mode.unwrap_or(match self.algorithm {
            Algorithm::Minimizing => DStepMode::Minimize,
            Algorithm::Randomizing => DStepMode::Randomize,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let PlantSource::Ring { n, rho } = self.plant {
            if n < 3 {
                return Err(Error::Config("ring needs at least 3 nodes".into()));
            }
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::Config("ring rho must be positive".into()));
            }
        }
        if self.beta_max.is_empty() {
            return Err(Error::Config("beta_max list is empty".into()));
        }
        for (name, v) in [("qx", self.qx), ("hx", self.hx), ("hu", self.hu)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(self.qx >= 0.0) || !(self.qu > 0.0 && self.qu.is_finite()) {
            return Err(Error::Config("qx must be nonnegative and qu positive".into()));
        }
        Ok(())
    }

    pub fn build_plant(&self) -> Result<Plant> {
        match &self.plant {
            PlantSource::Ring { n, rho } => ring_plant(*n, *rho, self.seed),
            PlantSource::File(path) => Plant::from_json(&fs::read_to_string(path)?),
        }
    }

    /// Loop configuration for `plant` at the first listed target.
    pub fn dphi_config(&self, plant: &Plant) -> DPhiConfig {
        DPhiConfig {
            beta_step: self.beta_step,
            beta_max: self.beta_max[0].0,
            stab: self.stab,
            perf: self.perf,
            weights: PerfWeights::scalar(plant, self.qx, self.qu),
            regulation: Regulation::scalar(plant, self.hx, self.hu),
            support: dhop_support(plant, self.hops),
            horizon: self.horizon,
            mode: self.dstep_mode(),
            consensus: self.consensus,
            seed: self.seed,
            admm: (&self.admm).into(),
        }
    }

    /// `$DPHI_OUTPUT_DIR` if set, else the configured directory.
    pub fn resolved_output_dir(&self) -> PathBuf {
        output_dir_or(&self.output_dir)
    }
}

pub fn output_dir_or(configured: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => configured.to_path_buf(),
    }
}

/// On-disk controller: exact taps plus what is needed to re-check it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerDocument {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub hops: usize,
    pub stab: NormKind,
    /// Certified level for `stab` with the stored scaling.
    pub beta: f64,
    /// `log D_ii`.
    pub log_scaling: Vec<f64>,
    pub cost: f64,
    #[serde(rename = "Hx")]
    pub hx: Vec<Vec<f64>>,
    #[serde(rename = "Hu")]
    pub hu: Vec<Vec<f64>>,
    /// `phi_x[p-1]` is tap `p`, row-major.
    pub phi_x: Vec<Vec<Vec<f64>>>,
    pub phi_u: Vec<Vec<Vec<f64>>>,
}

impl ControllerDocument {
    pub fn new(result: &DPhiResult, cfg: &DPhiConfig, hops: usize) -> Self {
        let cl = &result.closed_loop;
        ControllerDocument {
            n: cl.n(),
            m: cl.m(),
            horizon: cl.horizon(),
            hops,
            stab: cfg.stab,
            beta: result.beta,
            log_scaling: result.scaling.log_values().iter().copied().collect(),
            cost: result.cost,
            hx: rows_of(&cfg.regulation.hx),
            hu: rows_of(&cfg.regulation.hu),
            phi_x: cl.phi_x().taps().iter().map(rows_of).collect(),
            phi_u: cl.phi_u().taps().iter().map(rows_of).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn taps(&self, taps: &[Vec<Vec<f64>>], rows: usize, name: &str) -> Result<FirTransferMatrix> {
        if taps.len() != self.horizon {
            return Err(Error::dim(format!("{name} has {} taps, expected {}", taps.len(), self.horizon)));
        }
        let taps = taps
            .iter()
            .enumerate()
            .map(|(p, t)| matrix_from_rows(t, rows, self.n, &format!("{name}({})", p + 1)))
            .collect::<Result<Vec<_>>>()?;
        FirTransferMatrix::new(taps)
    }

    /// The stored loop on the full support, so off-support entries can be reported.
    pub fn closed_loop(&self, plant: &Plant) -> Result<ClosedLoop> {
        if plant.n() != self.n || plant.m() != self.m {
            return Err(Error::dim("controller does not match the plant"));
        }
        ClosedLoop::new(
            self.taps(&self.phi_x, self.n, "phi_x")?,
            self.taps(&self.phi_u, self.m, "phi_u")?,
            Support::full(plant),
        )
    }

    pub fn regulation(&self) -> Result<Regulation> {
        let hx = matrix_from_rows(&self.hx, self.hx.len(), self.n, "Hx")?;
        let hu = matrix_from_rows(&self.hu, self.hu.len(), self.m, "Hu")?;
        Regulation::new(hx, hu)
    }

    pub fn scaling(&self) -> Result<DiagonalScaling> {
        if self.log_scaling.len() != self.n {
            return Err(Error::dim("log_scaling must have n entries"));
        }
        Ok(DiagonalScaling::from_log(self.log_scaling.clone().into(), self.beta))
    }
}

/// LQR reference point for a configuration.
#[derive(Clone, Debug)]
pub struct LqrReport {
    pub solution: LqrSolution,
    pub cost: f64,
    pub beta: f64,
    pub stab: NormKind,
}

impl fmt::Display for LqrReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cost_lqr={} beta_lqr={} stab={} radius={} riccati_residual={:e} riccati_iterations={}",
            self.cost, self.beta, self.stab, self.solution.closed_loop_radius, self.solution.residual, self.solution.iterations
        )
    }
}

pub fn lqr_report(plant: &Plant, cfg: &ExperimentConfig) -> Result<LqrReport> {
    let w = PerfWeights::scalar(plant, cfg.qx, cfg.qu);
    let solution = dare_solve(plant.a(), plant.b(), &w.qx, &w.qu)?;
    let beta = lqr_beta(plant, &solution, &Regulation::scalar(plant, cfg.hx, cfg.hu), cfg.stab, cfg.horizon)?;
    Ok(LqrReport {
        cost: solution.cost(),
        beta,
        stab: cfg.stab,
        solution,
    })
}

pub fn cmd_lqr(cfg: &ExperimentConfig) -> Result<LqrReport> {
    cfg.validate()?;
    lqr_report(&cfg.build_plant()?, cfg)
}

/// Writes a ring plant to `out` and returns its JSON.
pub fn cmd_ring_gen(n: usize, rho: f64, seed: u64, out: &Path) -> Result<String> {
    let json = ring_plant(n, rho, seed)?.to_json()?;
    write_file(out, &json)?;
    Ok(json)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Normalized against LQR: `cost_norm = cost / cost_lqr`, `margin_norm = beta_lqr / beta`.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub termination: Termination,
    pub iterations: usize,
    pub phi_steps: usize,
    pub beta: f64,
    pub cost: f64,
    pub cost_lqr: f64,
    pub beta_lqr: f64,
}

impl RunSummary {
    pub fn cost_norm(&self) -> f64 {
        self.cost / self.cost_lqr
    }

    pub fn margin_norm(&self) -> f64 {
        self.beta_lqr / self.beta
    }

    pub fn exit_code(&self) -> i32 {
        exit_code(&self.termination)
    }
}

pub fn termination_label(t: &Termination) -> &'static str {
    match t {
        Termination::TargetMet => "target-met",
        Termination::Stalled => "stalled",
        Termination::Aborted(_) => "aborted",
    }
}

/// An aborted run still returns a certified iterate but counts as an error.
pub fn exit_code(t: &Termination) -> i32 {
    match t {
        Termination::TargetMet => EXIT_TARGET_MET,
        Termination::Stalled => EXIT_STALLED,
        Termination::Aborted(_) => EXIT_ERROR,
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "algorithm={} termination={} k={} phi_steps={} beta={} cost={} cost_lqr={} beta_lqr={} cost_norm={} margin_norm={}",
            match self.algorithm {
                Algorithm::Minimizing => "alg1",
                Algorithm::Randomizing => "alg2",
            },
            termination_label(&self.termination),
            self.iterations,
            self.phi_steps,
            self.beta,
            self.cost,
            self.cost_lqr,
            self.beta_lqr,
            self.cost_norm(),
            self.margin_norm()
        )?;
        if let Termination::Aborted(msg) = &self.termination {
            write!(f, " reason={msg:?}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DPhiOutput {
    pub summary: RunSummary,
    pub result: DPhiResult,
    pub trace_path: PathBuf,
    pub controller_path: PathBuf,
}

/// Runs the configured loop; writes `trace.csv` and `controller.json` to `out_dir`.
pub fn cmd_dphi(cfg: &ExperimentConfig, out_dir: &Path, timing: bool) -> Result<DPhiOutput> {
    cfg.validate()?;
    if cfg.beta_max.len() != 1 {
        return Err(Error::Config(format!(
            "dphi takes one beta_max, got {}; use sweep for a list",
            cfg.beta_max.len()
        )));
    }
    let plant = cfg.build_plant()?;
    let dcfg = cfg.dphi_config(&plant);
    dcfg.validate(cfg.algorithm)?;
    let lqr = lqr_report(&plant, cfg)?;
    let result = dphi_run(&plant, &dcfg, cfg.algorithm)?;
    let trace_path = out_dir.join("trace.csv");
    let controller_path = out_dir.join("controller.json");
    write_file(&trace_path, &result.trace.to_csv(timing))?;
    write_file(&controller_path, &ControllerDocument::new(&result, &dcfg, cfg.hops).to_json()?)?;
    let summary = RunSummary {
        algorithm: cfg.algorithm,
        termination: result.termination.clone(),
        iterations: result.iterations,
        phi_steps: result.trace.phi_steps(),
        beta: result.beta,
        cost: result.cost,
        cost_lqr: lqr.cost,
        beta_lqr: lqr.beta,
    };
    Ok(DPhiOutput {
        summary,
        result,
        trace_path,
        controller_path,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepLine {
    pub beta_max: Level,
    pub beta: f64,
    pub cost: f64,
    pub cost_norm: f64,
    pub margin_norm: f64,
    pub iters: usize,
}

pub const SWEEP_HEADER: &str = "beta_max,beta,cost,cost_norm,margin_norm,iters";

pub fn sweep_csv(lines: &[SweepLine]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for l in lines {
        writeln!(out, "{},{},{},{},{},{}", l.beta_max, l.beta, l.cost, l.cost_norm, l.margin_norm, l.iters).unwrap();
    }
    out
}

/// Runs every listed target; writes `sweep.csv` to `out_dir`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SweepLine>> {
    cfg.validate()?;
    let plant = cfg.build_plant()?;
    let dcfg = cfg.dphi_config(&plant);
    let lqr = lqr_report(&plant, cfg)?;
    let targets: Vec<f64> = cfg.beta_max.iter().map(|l| l.0).collect();
    let rows = tradeoff_sweep(&plant, &dcfg, cfg.algorithm, &targets)?;
    let lines: Vec<SweepLine> = rows
        .iter()
        .map(|r| SweepLine {
            beta_max: Level(r.beta_max),
            beta: r.beta,
            cost: r.cost,
            cost_norm: r.cost / lqr.cost,
            margin_norm: lqr.beta / r.beta,
            iters: r.iterations,
        })
        .collect();
    write_file(&out_dir.join("sweep.csv"), &sweep_csv(&lines))?;
    Ok(lines)
}

#[derive(Clone, Debug)]
pub struct DStepRequest {
    pub kind: Option<NormKind>,
    pub mode: DStepMode,
    pub consensus: bool,
    /// Level for the randomizing step; defaults to the stored level.
    pub beta: Option<f64>,
    pub beta_step: f64,
    pub seed: u64,
    pub admm: AdmmConfig,
}

#[derive(Clone, Debug)]
pub struct DStepReport {
    pub kind: NormKind,
    pub mode: DStepMode,
    /// `None` when the randomizing step found no scaling.
    pub scaling: Option<DiagonalScaling>,
    pub beta: Option<f64>,
}

impl fmt::Display for DStepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kind={} mode={} ", self.kind, self.mode.as_str())?;
        match self.beta {
            Some(b) => write!(f, "feasible=true beta={b} margin={}", 1.0 / b),
            None => f.write_str("feasible=false"),
        }
    }
}

pub const SCALING_HEADER: &str = "node,log_d";

/// D step on the magnitude matrix of a stored controller; writes `scaling.csv`
/// when a scaling was found.
pub fn cmd_dstep(controller: &ControllerDocument, plant: &Plant, req: &DStepRequest, out_dir: &Path) -> Result<DStepReport> {
    let kind = req.kind.unwrap_or(controller.stab);
    if !kind.is_stability_kind() {
        return Err(Error::Config("h2 is not a stability kind".into()));
    }
    let cl = controller.closed_loop(plant)?;
    let m = magnitude_matrix(&cl, &controller.regulation()?)?;
    let scaling = match (req.mode, req.consensus) {
        (DStepMode::Minimize, true) if kind == NormKind::NuMaxElt => {
            let support = dhop_support(plant, controller.hops);
            Some(dstep::dstep_min_nu_consensus(&m, &support, &req.admm, req.seed, None)?.scaling)
        }
        (DStepMode::Minimize, true) => {
            return Err(Error::Config(format!("the minimizing {kind} D step has no distributed form")));
        }
        (DStepMode::Minimize, false) => Some(dstep::dstep_minimize(&m, kind)?),
        (DStepMode::IterativelyMinimize, _) => Some(dstep::dstep_iterative_min(&m, kind, req.beta_step, req.seed)?),
        (DStepMode::Randomize, _) => {
            let beta = req.beta.unwrap_or(controller.beta);
            dstep::dstep_randomize(&m, beta, kind, req.seed)?
        }
    };
    let beta = match &scaling {
        Some(s) => Some(scaled_norm(&m, s, kind)?),
        None => None,
    };
    if let Some(s) = &scaling {
        let mut csv = format!("{SCALING_HEADER}\n");
        for (i, l) in s.log_values().iter().enumerate() {
            writeln!(csv, "{i},{l}").unwrap();
        }
        write_file(&out_dir.join("scaling.csv"), &csv)?;
    }
    Ok(DStepReport {
        kind,
        mode: req.mode,
        scaling,
        beta,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub rollout_seeds: u64,
    pub rollout_steps: usize,
    pub rollout_fraction: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            rollout_seeds: ROLLOUT_SEEDS,
            rollout_steps: ROLLOUT_STEPS,
            rollout_fraction: ROLLOUT_FRACTION,
        }
    }
}

fn off_support(taps: &FirTransferMatrix, mask: &crate::model::Mask) -> usize {
    taps.taps()
        .iter()
        .map(|t| {
            (0..t.nrows())
                .flat_map(|i| (0..t.ncols()).map(move |j| (i, j)))
                .filter(|&(i, j)| !mask.get(i, j) && t[(i, j)] != 0.0)
                .count()
        })
        .sum()
}

/// Re-checks a stored controller against a plant.
///
/// The rollout check samples diagonal time-varying gains at a fraction of the
/// certified margin; passing it is evidence, not a proof.
pub fn cmd_verify(controller: &ControllerDocument, plant: &Plant, opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let cl = controller.closed_loop(plant)?;
    let h = controller.regulation()?;

    let residual = achievability_residual(plant, &cl)?;
    report.push(
        "achievability",
        residual <= ACHIEVABILITY_TOL,
        format!("residual {residual:e} (limit {ACHIEVABILITY_TOL:e})"),
    );

    let support = dhop_support(plant, controller.hops);
    let stray = off_support(cl.phi_x(), support.state_mask()) + off_support(cl.phi_u(), support.input_mask());
    report.push("support", stray == 0, format!("{stray} nonzero entries outside {}-hop neighborhoods", controller.hops));

    let m = magnitude_matrix(&cl, &h)?;
    let scaling = controller.scaling()?;
    let achieved = scaled_norm(&m, &scaling, controller.stab)?;
    let limit = controller.beta * (1.0 + 1e-6) + 1e-9;
    report.push(
        "certificate",
        achieved <= limit,
        format!("{} norm of D M D^-1 is {achieved}, stored beta {}", controller.stab, controller.beta),
    );

    for kind in [NormKind::L1RowMax, NormKind::LinfColMax, NormKind::NuMaxElt] {
        let best = scaled_norm(&m, &dstep::dstep_minimize(&m, kind)?, kind)?;
        let ok = best.is_finite() && (kind != controller.stab || best <= limit);
        report.push(&format!("margin-{kind}"), ok, format!("best beta {best}, margin {}", 1.0 / best));
    }

    let bound = opts.rollout_fraction / controller.beta;
    let mut bounded = 0;
    for seed in 0..opts.rollout_seeds {
        let unc = sample_uncertainty(plant.n(), controller.stab, bound, seed, opts.rollout_steps)?;
        if uncertain_rollout(plant, &cl, &h, &unc, opts.rollout_steps, seed)?.1 {
            bounded += 1;
        }
    }
    report.push(
        "rollout",
        bounded == opts.rollout_seeds,
        format!(
            "{bounded}/{} bounded over {} steps at {} of the margin (sampled, not a certificate)",
            opts.rollout_seeds, opts.rollout_steps, opts.rollout_fraction
        ),
    );
    Ok(report)
}
