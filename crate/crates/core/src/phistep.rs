//! The Phi step: minimize nominal cost over achievable, localized closed loops
//! subject to `||D M D^{-1}|| <= beta`.
//!
//! Column-separable criteria (`nu`, `linf`) decompose into one convex program
//! per column of the closed loop, solved in parallel. The row-separable `l1`
//! criterion is handled by a row/column ADMM split: rows carry the stability
//! constraint, columns carry achievability and the quadratic cost.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::model::{ClosedLoop, FirTransferMatrix, Plant, Support};
use crate::norms::{induced_norm, is_diagonal, magnitude_of_taps, DiagonalScaling, NormKind, Regulation, Separability};
use crate::subsolver::{self, Engine, EqualityReduction, ReducedProblem, Settings, SolveStatus};
use crate::{Error, Result};

/// Quadratic weights `Qx` (n x n) and `Qu` (m x m).
#[derive(Clone, Debug, PartialEq)]
pub struct PerfWeights {
    pub qx: DMatrix<f64>,
    pub qu: DMatrix<f64>,
}

impl PerfWeights {
    pub fn new(qx: DMatrix<f64>, qu: DMatrix<f64>) -> Result<Self> {
        if qx.nrows() != qx.ncols() || qu.nrows() != qu.ncols() {
            return Err(Error::dim("weights must be square"));
        }
        for (name, q) in [("Qx", &qx), ("Qu", &qu)] {
            if (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
                return Err(Error::invalid(format!("{name} must be symmetric")));
            }
            if q.nrows() > 0 && q.clone().symmetric_eigenvalues().min() < -1e-10 * q.amax().max(1.0) {
                return Err(Error::invalid(format!("{name} must be positive semidefinite")));
            }
        }
        Ok(PerfWeights { qx, qu })
    }

    pub fn scalar(plant: &Plant, qx: f64, qu: f64) -> Self {
        PerfWeights {
            qx: DMatrix::identity(plant.n(), plant.n()) * qx,
            qu: DMatrix::identity(plant.m(), plant.m()) * qu,
        }
    }

    /// Both weights diagonal.
    pub fn is_separably_diagonal(&self) -> bool {
        is_diagonal(&self.qx) && is_diagonal(&self.qu)
    }
}

/// Everything about a Phi step except the scaling and the level.
#[derive(Clone, Debug)]
pub struct PhiProblem {
    pub plant: Plant,
    pub support: Support,
    pub horizon: usize,
    pub weights: PerfWeights,
    pub perf: NormKind,
    pub regulation: Regulation,
    pub stab: NormKind,
}

#[derive(Clone, Debug)]
pub struct PhiStepSpec {
    pub problem: PhiProblem,
    pub scaling: DiagonalScaling,
    /// Level `beta > 0`, or `f64::INFINITY` for no stability constraint.
    pub beta: f64,
}

#[derive(Clone, Debug)]
pub struct AdmmConfig {
    pub gamma: f64,
    pub tol_consensus: f64,
    pub tol_progress: f64,
    pub max_iter: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            gamma: 1.0,
            tol_consensus: 1e-4,
            tol_progress: 1e-4,
            max_iter: 5000,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.tol_consensus > 0.0 && self.tol_progress > 0.0 && self.max_iter > 0) {
            return Err(Error::invalid("ADMM parameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhiStatus {
    Optimal,
    Infeasible,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhiPath {
    ColumnSeparable,
    RowColumnAdmm,
}

#[derive(Clone, Debug)]
pub struct PhiSolution {
    pub closed_loop: ClosedLoop,
    pub magnitude: DMatrix<f64>,
    /// Nominal cost in the problem's performance kind (H2 squared).
    pub cost: f64,
}

#[derive(Clone, Debug)]
pub struct PhiStepOutcome {
    pub status: PhiStatus,
    pub solution: Option<PhiSolution>,
    pub path: PhiPath,
    /// ADMM iterations on the row/column path, zero otherwise.
    pub iterations: usize,
}

impl PhiStepOutcome {
    fn infeasible(path: PhiPath, iterations: usize) -> Self {
        PhiStepOutcome {
            status: PhiStatus::Infeasible,
            solution: None,
            path,
            iterations,
        }
    }
}

/// `Phi`-step nominal cost. For `H2` this is the squared Frobenius norm
/// `sum_p ||Qx^{1/2} Phi_x(p)||^2 + ||Qu^{1/2} Phi_u(p)||^2`; for the other kinds
/// the kind's norm of `sum_p |[Qx^{1/2} Phi_x(p); Qu^{1/2} Phi_u(p)]|`.
pub fn nominal_cost(cl: &ClosedLoop, weights: &PerfWeights, kind: NormKind) -> Result<f64> {
    taps_cost(cl.phi_x(), cl.phi_u(), weights, kind)
}

pub fn taps_cost(
    phi_x: &FirTransferMatrix,
    phi_u: &FirTransferMatrix,
    weights: &PerfWeights,
    kind: NormKind,
) -> Result<f64> {
    if weights.qx.nrows() != phi_x.rows() || weights.qu.nrows() != phi_u.rows() {
        return Err(Error::dim("weights do not match the closed loop"));
    }
    match kind {
        NormKind::H2 => {
            let mut total = 0.0;
            for p in 1..=phi_x.horizon() {
                let (x, u) = (phi_x.tap(p), phi_u.tap(p));
                total += (x.transpose() * &weights.qx * x).trace() + (u.transpose() * &weights.qu * u).trace();
            }
            Ok(total)
        }
        _ => {
            let hx = psd_sqrt(&weights.qx);
            let hu = psd_sqrt(&weights.qu);
            let n = phi_x.rows();
            let mut stacked = DMatrix::zeros(n + phi_u.rows(), phi_x.cols());
            for p in 1..=phi_x.horizon() {
                let wx = &hx * phi_x.tap(p);
                let wu = &hu * phi_u.tap(p);
                stacked.rows_mut(0, n).zip_apply(&wx, |a, v| *a += v.abs());
                stacked.rows_mut(n, phi_u.rows()).zip_apply(&wu, |a, v| *a += v.abs());
            }
            Ok(induced_norm(&stacked, kind))
        }
    }
}

fn psd_sqrt(q: &DMatrix<f64>) -> DMatrix<f64> {
    if is_diagonal(q) {
        return DMatrix::from_diagonal(&q.diagonal().map(|v| v.max(0.0).sqrt()));
    }
    let eig = q.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Per-column data that depends only on the plant, support, weights and
/// regulation, cached across Phi steps.
struct Column {
    j: usize,
    rows_x: Vec<usize>,
    rows_u: Vec<usize>,
    /// `None` if the achievability constraint has no solution on this support.
    reduction: Option<EqualityReduction>,
    /// Reduced quadratic cost `1/2 th' hess th + grad' th + constant`.
    hess: DMatrix<f64>,
    grad: DVector<f64>,
    /// Output rows of `G = Hx Phi_x + Hu Phi_u` this column can reach.
    g_rows: Vec<usize>,
    /// `G(p)[g_rows, j] = g_off + g_map th`, stacked by tap.
    g_map: DMatrix<f64>,
    g_off: DVector<f64>,
    /// Same for the weighted response, when the performance kind needs it.
    w_map: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl Column {
    fn block(&self) -> usize {
        self.rows_x.len() + self.rows_u.len()
    }
}

/// Phi-step solver with cached per-column reductions.
pub struct PhiStepper {
    problem: PhiProblem,
    columns: Vec<Column>,
    settings: Settings,
}

impl PhiStepper {
    pub fn new(problem: PhiProblem) -> Result<Self> {
        validate_problem(&problem)?;
        let n = problem.plant.n();
        let columns = (0..n)
            .into_par_iter()
            .map(|j| build_column(&problem, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(PhiStepper {
            problem,
            columns,
            settings: Settings {
                engine: Engine::InteriorPoint,
                ..Settings::default()
            },
        })
    }

    pub fn problem(&self) -> &PhiProblem {
        &self.problem
    }

    pub fn path(&self) -> PhiPath {
        match self.problem.stab.separability() {
            Separability::Row => PhiPath::RowColumnAdmm,
            _ => PhiPath::ColumnSeparable,
        }
    }

    pub fn step(&self, scaling: &DiagonalScaling, beta: f64) -> Result<PhiStepOutcome> {
        self.step_with(scaling, beta, &AdmmConfig::default())
    }

    pub fn step_with(&self, scaling: &DiagonalScaling, beta: f64, admm: &AdmmConfig) -> Result<PhiStepOutcome> {
        let n = self.problem.plant.n();
        if scaling.len() != n {
            return Err(Error::dim(format!("scaling has length {}, plant has {n} states", scaling.len())));
        }
        if !(beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        match self.path() {
            PhiPath::ColumnSeparable => self.column_path(scaling, beta),
            PhiPath::RowColumnAdmm => {
                admm.validate()?;
                self.admm_path(scaling, beta, admm)
            }
        }
    }

    fn column_path(&self, scaling: &DiagonalScaling, beta: f64) -> Result<PhiStepOutcome> {
        let results = self
            .columns
            .par_iter()
            .map(|col| self.solve_column(col, scaling, beta))
            .collect::<Result<Vec<_>>>()?;
        let mut phis = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Some(phi) => phis.push(phi),
                None => return Ok(PhiStepOutcome::infeasible(PhiPath::ColumnSeparable, 0)),
            }
        }
        let solution = self.assemble(&phis)?;
        Ok(PhiStepOutcome {
            status: PhiStatus::Optimal,
            solution: Some(solution),
            path: PhiPath::ColumnSeparable,
            iterations: 0,
        })
    }

    /// Returns the column's stacked variables, or `None` if infeasible.
    fn solve_column(&self, col: &Column, scaling: &DiagonalScaling, beta: f64) -> Result<Option<DVector<f64>>> {
        let Some(red) = col.reduction.as_ref() else {
            return Ok(None);
        };
        let perf = self.problem.perf;
        if beta.is_infinite() && perf == NormKind::H2 {
            return Ok(Some(red.lift(&unconstrained(col)?)));
        }
        let built = self.column_program(col, scaling, beta, None);
        let report = subsolver::solve_reduced(&built, &self.settings, None)?;
        match report.status {
            SolveStatus::Optimal => {
                let r = red.dim();
                Ok(Some(red.lift(&report.x.rows(0, r).into_owned())))
            }
            SolveStatus::Infeasible => Ok(None),
            SolveStatus::Unbounded => Err(Error::Convergence(format!(
                "column {} subproblem reported unbounded",
                col.j
            ))),
            SolveStatus::IterationLimit => {
                // Decide feasibility with the minimal achievable level instead.
                let tau = self.minimal_level(col, scaling, beta)?;
                if tau > 1.0 + 1e-7 {
                    Ok(None)
                } else {
                    Err(Error::Convergence(format!(
                        "column {} subproblem hit the iteration limit (primal {:e}, dual {:e}) although feasible",
                        col.j, report.primal_residual, report.dual_residual
                    )))
                }
            }
        }
    }

    /// Smallest `tau` such that the stability rows hold at level `tau * beta`.
    fn minimal_level(&self, col: &Column, scaling: &DiagonalScaling, beta: f64) -> Result<f64> {
        let built = self.column_program(col, scaling, beta, Some(()));
        let report = subsolver::solve_reduced(&built, &self.settings, None)?;
        if report.status != SolveStatus::Optimal {
            return Err(Error::Convergence(format!(
                "column {} feasibility program did not converge ({:?})",
                col.j, report.status
            )));
        }
        Ok(report.objective)
    }

    /// Column program in variables `[theta, s, (t or tau)]`.
    ///
    /// With `phase_one` set, the objective is replaced by the level multiplier
    /// `tau` and the stability right-hand sides are scaled by it.
    fn column_program(
        &self,
        col: &Column,
        scaling: &DiagonalScaling,
        beta: f64,
        phase_one: Option<()>,
    ) -> ReducedProblem {
        let red = col.reduction.as_ref().expect("feasible reduction");
        let r = red.dim();
        let t = self.problem.horizon;
        let og = col.g_rows.len();
        let stab_active = beta.is_finite() || phase_one.is_some();
        let perf_epi = self.problem.perf != NormKind::H2 && phase_one.is_none();

        // Slacks for |G(p)_ij|, skipping entries that are identically zero.
        let mut g_slacks = Vec::new();
        if stab_active {
            for k in 0..og * t {
                if !is_trivial(&col.g_map, &col.g_off, k) {
                    g_slacks.push(k);
                }
            }
        }
        let mut w_slacks = Vec::new();
        let ow = col.w_map.as_ref().map_or(0, |(m, _)| m.nrows() / t);
        if perf_epi {
            let (m, off) = col.w_map.as_ref().expect("weighted map");
            for k in 0..ow * t {
                if !is_trivial(m, off, k) {
                    w_slacks.push(k);
                }
            }
        }
        let ns = g_slacks.len() + w_slacks.len();
        let extra = usize::from(perf_epi || phase_one.is_some());
        let nv = r + ns + extra;
        let epi = r + ns;

        let mut rows: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
        let dense_coeffs = |m: &DMatrix<f64>, k: usize| -> Vec<(usize, f64)> {
            m.row(k).iter().enumerate().map(|(c, v)| (c, *v)).collect()
        };
        for (s, &k) in g_slacks.iter().enumerate() {
            rows.push(subsolver::transcribe_abs(&dense_coeffs(&col.g_map, k), col.g_off[k], r + s, nv));
        }
        if let Some((m, off)) = col.w_map.as_ref().filter(|_| perf_epi) {
            for (s, &k) in w_slacks.iter().enumerate() {
                rows.push(subsolver::transcribe_abs(&dense_coeffs(m, k), off[k], r + g_slacks.len() + s, nv));
            }
        }

        if stab_active {
            let l = scaling.log_values();
            let j = col.j;
            // Sum of slacks per output row.
            let mut per_row: Vec<Vec<usize>> = vec![Vec::new(); og];
            for (s, &k) in g_slacks.iter().enumerate() {
                per_row[k % og].push(r + s);
            }
            let level = if phase_one.is_some() { 1.0 } else { beta };
            match self.problem.stab {
                NormKind::NuMaxElt => {
                    for (a, slots) in per_row.iter().enumerate() {
                        let i = col.g_rows[a];
                        let cap = level * (l[j] - l[i]).exp();
                        let mut row = DMatrix::zeros(1, nv);
                        for &v in slots {
                            row[(0, v)] = 1.0;
                        }
                        let rhs = if phase_one.is_some() {
                            row[(0, epi)] = -cap;
                            0.0
                        } else {
                            cap
                        };
                        rows.push((row, DVector::from_element(1, rhs)));
                    }
                }
                NormKind::LinfColMax => {
                    let mut row = DMatrix::zeros(1, nv);
                    for (a, slots) in per_row.iter().enumerate() {
                        let i = col.g_rows[a];
                        let w = (l[i] - l[j]).exp();
                        for &v in slots {
                            row[(0, v)] = w;
                        }
                    }
                    let rhs = if phase_one.is_some() {
                        row[(0, epi)] = -level;
                        0.0
                    } else {
                        level
                    };
                    rows.push((row, DVector::from_element(1, rhs)));
                }
                _ => unreachable!("column path only serves column-separable kinds"),
            }
        }

        if perf_epi {
            let base = r + g_slacks.len();
            let mut per_row: Vec<Vec<usize>> = vec![Vec::new(); ow];
            for (s, &k) in w_slacks.iter().enumerate() {
                per_row[k % ow].push(base + s);
            }
            match self.problem.perf {
                NormKind::NuMaxElt => {
                    for slots in &per_row {
                        let mut row = DMatrix::zeros(1, nv);
                        for &v in slots {
                            row[(0, v)] = 1.0;
                        }
                        row[(0, epi)] = -1.0;
                        rows.push((row, DVector::zeros(1)));
                    }
                }
                NormKind::LinfColMax => {
                    let mut row = DMatrix::zeros(1, nv);
                    for slots in &per_row {
                        for &v in slots {
                            row[(0, v)] = 1.0;
                        }
                    }
                    row[(0, epi)] = -1.0;
                    rows.push((row, DVector::zeros(1)));
                }
                _ => unreachable!("performance kind validated"),
            }
        }

        let m_rows: usize = rows.iter().map(|(a, _)| a.nrows()).sum();
        let mut c = DMatrix::zeros(m_rows, nv);
        let mut b = DVector::zeros(m_rows);
        let mut at = 0;
        for (a, rhs) in rows {
            let k = a.nrows();
            c.rows_mut(at, k).copy_from(&a);
            b.rows_mut(at, k).copy_from(&rhs);
            at += k;
        }

        let mut p = DMatrix::zeros(nv, nv);
        let mut q = DVector::zeros(nv);
        if phase_one.is_some() || perf_epi {
            q[epi] = 1.0;
        } else {
            p.view_mut((0, 0), (r, r)).copy_from(&col.hess);
            q.rows_mut(0, r).copy_from(&col.grad);
        }
        ReducedProblem { p, q, c, b }
    }

    fn assemble(&self, phis: &[DVector<f64>]) -> Result<PhiSolution> {
        let plant = &self.problem.plant;
        let (n, m, t) = (plant.n(), plant.m(), self.problem.horizon);
        let mut phi_x = FirTransferMatrix::zeros(n, n, t)?;
        let mut phi_u = FirTransferMatrix::zeros(m, n, t)?;
        for (col, phi) in self.columns.iter().zip(phis) {
            scatter(col, phi, &mut phi_x, &mut phi_u);
        }
        let magnitude = magnitude_of_taps(&phi_x, &phi_u, &self.problem.regulation)?;
        let cost = taps_cost(&phi_x, &phi_u, &self.problem.weights, self.problem.perf)?;
        let closed_loop = ClosedLoop::new(phi_x, phi_u, self.problem.support.clone())?;
        Ok(PhiSolution {
            closed_loop,
            magnitude,
            cost,
        })
    }

    fn admm_path(&self, scaling: &DiagonalScaling, beta: f64, cfg: &AdmmConfig) -> Result<PhiStepOutcome> {
        if self.columns.iter().any(|c| c.reduction.is_none()) {
            return Ok(PhiStepOutcome::infeasible(PhiPath::RowColumnAdmm, 0));
        }
        let optimum = self
            .columns
            .par_iter()
            .map(|col| Ok(col.reduction.as_ref().unwrap().lift(&unconstrained(col)?)))
            .collect::<Result<Vec<_>>>()?;
        let rows = self.row_groups();
        let outcome = admm_phi(
            &RowProblem {
                groups: &rows,
                scaling,
                beta,
            },
            &ColumnProblem {
                columns: &self.columns,
                gamma: cfg.gamma * self.curvature(),
            },
            optimum,
            cfg,
        )?;
        match outcome {
            AdmmOutcome::Converged { psi, iterations } => {
                let solution = self.assemble(&psi)?;
                Ok(PhiStepOutcome {
                    status: PhiStatus::Optimal,
                    solution: Some(solution),
                    path: PhiPath::RowColumnAdmm,
                    iterations,
                })
            }
            AdmmOutcome::Infeasible { iterations } => Ok(PhiStepOutcome::infeasible(PhiPath::RowColumnAdmm, iterations)),
        }
    }

    /// Largest curvature of the quadratic cost, `2 max(diag Qx, diag Qu)`.
    /// The ADMM penalty is measured in these units.
    fn curvature(&self) -> f64 {
        let w = &self.problem.weights;
        let top = w.qx.diagonal().amax().max(w.qu.diagonal().amax());
        if top > 0.0 {
            2.0 * top
        } else {
            1.0
        }
    }

    /// For each output row `i`, the entries `(column, [local indices], h)` with
    /// `G(p)_ij = h' v` where `v` gathers `Phi_x(p)[i, j]` and the owned inputs.
    fn row_groups(&self) -> Vec<RowGroup> {
        let h = &self.problem.regulation;
        let n = self.problem.plant.n();
        let t = self.problem.horizon;
        let mut groups: Vec<RowGroup> = (0..n).map(|i| RowGroup { row: i, entries: Vec::new() }).collect();
        for (c, col) in self.columns.iter().enumerate() {
            let blk = col.block();
            let nx = col.rows_x.len();
            for i in 0..n {
                let mut local = Vec::new();
                let mut coef = Vec::new();
                if let Ok(a) = col.rows_x.binary_search(&i) {
                    if h.hx[(i, i)] != 0.0 {
                        local.push(a);
                        coef.push(h.hx[(i, i)]);
                    }
                }
                for (b, &k) in col.rows_u.iter().enumerate() {
                    if h.hu[(i, k)] != 0.0 {
                        local.push(nx + b);
                        coef.push(h.hu[(i, k)]);
                    }
                }
                if local.is_empty() {
                    continue;
                }
                let hv = DVector::from_vec(coef);
                for p in 0..t {
                    groups[i].entries.push(RowEntry {
                        column: c,
                        j: col.j,
                        indices: local.iter().map(|a| p * blk + a).collect(),
                        h: hv.clone(),
                    });
                }
            }
        }
        groups
    }
}

fn is_trivial(m: &DMatrix<f64>, off: &DVector<f64>, k: usize) -> bool {
    let scale = 1e-13 * (1.0 + m.amax() + off.amax());
    m.row(k).amax() <= scale && off[k].abs() <= scale
}

fn unconstrained(col: &Column) -> Result<DVector<f64>> {
    if col.hess.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    if let Some(ch) = Cholesky::new(col.hess.clone()) {
        return Ok(ch.solve(&(-&col.grad)));
    }
    let problem = ReducedProblem {
        p: col.hess.clone(),
        q: col.grad.clone(),
        c: DMatrix::zeros(0, col.hess.nrows()),
        b: DVector::zeros(0),
    };
    let rep = subsolver::solve_reduced(&problem, &Settings::default(), None)?;
    if rep.status != SolveStatus::Optimal {
        return Err(Error::Convergence(format!(
            "unconstrained column {} problem is unbounded (weights too weak?)",
            col.j
        )));
    }
    Ok(rep.x)
}

fn scatter(col: &Column, phi: &DVector<f64>, phi_x: &mut FirTransferMatrix, phi_u: &mut FirTransferMatrix) {
    let blk = col.block();
    let nx = col.rows_x.len();
    for p in 1..=phi_x.horizon() {
        let base = (p - 1) * blk;
        for (a, &r) in col.rows_x.iter().enumerate() {
            phi_x.tap_mut(p)[(r, col.j)] = phi[base + a];
        }
        for (b, &k) in col.rows_u.iter().enumerate() {
            phi_u.tap_mut(p)[(k, col.j)] = phi[base + nx + b];
        }
    }
}

fn validate_problem(problem: &PhiProblem) -> Result<()> {
    let plant = &problem.plant;
    let (n, m) = (plant.n(), plant.m());
    if problem.horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if problem.support.state_mask().rows() != n
        || problem.support.state_mask().cols() != n
        || problem.support.input_mask().rows() != m
    {
        return Err(Error::dim("support does not match the plant"));
    }
    if problem.weights.qx.nrows() != n || problem.weights.qu.nrows() != m {
        return Err(Error::dim("weights do not match the plant"));
    }
    let h = &problem.regulation;
    if h.hx.nrows() != n || h.hx.ncols() != n || h.hu.ncols() != m {
        return Err(Error::dim("regulated output must have one entry per state"));
    }
    if !problem.stab.is_stability_kind() {
        return Err(Error::invalid("stability kind must be l1, linf or nu"));
    }
    match problem.stab.separability() {
        Separability::Row => {
            if problem.perf != NormKind::H2 {
                return Err(Error::Unsupported(format!(
                    "l1 stability is only paired with h2 performance, not {}",
                    problem.perf
                )));
            }
            if !problem.weights.is_separably_diagonal() {
                return Err(Error::Unsupported("l1 stability needs diagonal Qx and Qu".into()));
            }
            let owners = plant.actuator_nodes();
            let owned = (0..h.hu.nrows()).all(|i| (0..m).all(|k| h.hu[(i, k)] == 0.0 || owners[k] == i));
            if !h.is_separably_diagonal() || !owned {
                return Err(Error::Unsupported(
                    "l1 stability needs diagonal Hx and Hu mapping each input to its own node".into(),
                ));
            }
        }
        _ => {
            if problem.perf == NormKind::L1RowMax {
                return Err(Error::Unsupported(
                    "l1 performance is row separable and cannot use the column path".into(),
                ));
            }
        }
    }
    Ok(())
}

fn build_column(problem: &PhiProblem, j: usize) -> Result<Column> {
    let plant = &problem.plant;
    let (n, t) = (plant.n(), problem.horizon);
    let (a_mat, b_mat) = (plant.a(), plant.b());
    let rows_x = problem.support.state_mask().rows_in_column(j);
    let rows_u = problem.support.input_mask().rows_in_column(j);
    let (nx, nu) = (rows_x.len(), rows_u.len());
    let blk = nx + nu;
    let nvar = blk * t;

    // Achievability restricted to this column's support.
    let mut eq_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for r in 0..n {
        let coeffs: Vec<(usize, f64)> = rows_x.binary_search(&r).map(|a| vec![(a, 1.0)]).unwrap_or_default();
        let rhs = if r == j { 1.0 } else { 0.0 };
        if coeffs.is_empty() && rhs == 0.0 {
            continue;
        }
        eq_rows.push((coeffs, rhs));
    }
    for p in 1..=t {
        let base = (p - 1) * blk;
        for r in 0..n {
            let mut coeffs = Vec::new();
            for (a, &s) in rows_x.iter().enumerate() {
                if a_mat[(r, s)] != 0.0 {
                    coeffs.push((base + a, -a_mat[(r, s)]));
                }
            }
            for (b, &k) in rows_u.iter().enumerate() {
                if b_mat[(r, k)] != 0.0 {
                    coeffs.push((base + nx + b, -b_mat[(r, k)]));
                }
            }
            if p < t {
                if let Ok(a) = rows_x.binary_search(&r) {
                    coeffs.push((p * blk + a, 1.0));
                }
            }
            if !coeffs.is_empty() {
                eq_rows.push((coeffs, 0.0));
            }
        }
    }
    let mut aeq = DMatrix::zeros(eq_rows.len(), nvar);
    let mut beq = DVector::zeros(eq_rows.len());
    for (k, (coeffs, rhs)) in eq_rows.iter().enumerate() {
        for &(c, v) in coeffs {
            aeq[(k, c)] += v;
        }
        beq[k] = *rhs;
    }
    let reduction = EqualityReduction::new(&aeq, &beq)?;

    let h = &problem.regulation;
    let mut hblk = DMatrix::zeros(h.outputs(), blk);
    for (a, &r) in rows_x.iter().enumerate() {
        hblk.set_column(a, &h.hx.column(r));
    }
    for (b, &k) in rows_u.iter().enumerate() {
        hblk.set_column(nx + b, &h.hu.column(k));
    }
    let g_rows: Vec<usize> = (0..h.outputs()).filter(|&i| hblk.row(i).amax() > 0.0).collect();
    let hg = hblk.select_rows(g_rows.iter());

    let w_full = if problem.perf != NormKind::H2 {
        let sx = psd_sqrt(&problem.weights.qx);
        let su = psd_sqrt(&problem.weights.qu);
        let mut w = DMatrix::zeros(n + plant.m(), blk);
        for (a, &r) in rows_x.iter().enumerate() {
            w.view_mut((0, a), (n, 1)).copy_from(&sx.column(r));
        }
        for (b, &k) in rows_u.iter().enumerate() {
            w.view_mut((n, nx + b), (plant.m(), 1)).copy_from(&su.column(k));
        }
        let keep: Vec<usize> = (0..w.nrows()).filter(|&i| w.row(i).amax() > 0.0).collect();
        Some(w.select_rows(keep.iter()))
    } else {
        None
    };

    let mut qblk = DMatrix::zeros(blk, blk);
    for (a, &r) in rows_x.iter().enumerate() {
        for (a2, &r2) in rows_x.iter().enumerate() {
            qblk[(a, a2)] = problem.weights.qx[(r, r2)];
        }
    }
    for (b, &k) in rows_u.iter().enumerate() {
        for (b2, &k2) in rows_u.iter().enumerate() {
            qblk[(nx + b, nx + b2)] = problem.weights.qu[(k, k2)];
        }
    }

    let Some(red) = reduction.as_ref() else {
        return Ok(Column {
            j,
            rows_x,
            rows_u,
            reduction,
            hess: DMatrix::zeros(0, 0),
            grad: DVector::zeros(0),
            g_rows,
            g_map: DMatrix::zeros(0, 0),
            g_off: DVector::zeros(0),
            w_map: None,
        });
    };
    let r = red.dim();
    let og = g_rows.len();
    let mut hess = DMatrix::zeros(r, r);
    let mut grad = DVector::zeros(r);
    let mut g_map = DMatrix::zeros(og * t, r);
    let mut g_off = DVector::zeros(og * t);
    let ow = w_full.as_ref().map_or(0, |w| w.nrows());
    let mut w_map = DMatrix::zeros(ow * t, r);
    let mut w_off = DVector::zeros(ow * t);
    for p in 0..t {
        let zp = red.basis.rows(p * blk, blk);
        let x0p = red.x0.rows(p * blk, blk);
        let qz = &qblk * zp;
        hess += zp.transpose() * &qz * 2.0;
        grad += zp.transpose() * (&qblk * x0p) * 2.0;
        g_map.rows_mut(p * og, og).copy_from(&(&hg * zp));
        g_off.rows_mut(p * og, og).copy_from(&(&hg * x0p));
        if let Some(w) = w_full.as_ref() {
            w_map.rows_mut(p * ow, ow).copy_from(&(w * zp));
            w_off.rows_mut(p * ow, ow).copy_from(&(w * x0p));
        }
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    Ok(Column {
        j,
        rows_x,
        rows_u,
        reduction,
        hess,
        grad,
        g_rows,
        g_map,
        g_off,
        w_map: w_full.map(|_| (w_map, w_off)),
    })
}

/// Solves one Phi step from a full specification.
pub fn phi_step(spec: &PhiStepSpec) -> Result<PhiStepOutcome> {
    PhiStepper::new(spec.problem.clone())?.step(&spec.scaling, spec.beta)
}

struct RowEntry {
    column: usize,
    j: usize,
    indices: Vec<usize>,
    h: DVector<f64>,
}

struct RowGroup {
    row: usize,
    entries: Vec<RowEntry>,
}

/// Row half: Euclidean projection onto `sum_j exp(l_i - l_j) sum_p |G(p)_ij| <= beta`
/// for every row `i`.
pub struct RowProblem<'a> {
    groups: &'a [RowGroup],
    scaling: &'a DiagonalScaling,
    beta: f64,
}

/// Column half: quadratic cost plus `gamma/2 ||psi - target||^2` over the
/// achievable affine set of each column.
pub struct ColumnProblem<'a> {
    columns: &'a [Column],
    gamma: f64,
}

enum AdmmOutcome {
    Converged { psi: Vec<DVector<f64>>, iterations: usize },
    Infeasible { iterations: usize },
}

const STALL_WINDOW: usize = 200;

/// Row/column ADMM:
/// `Phi <- rows(Psi - Lambda)`, `Psi <- cols(Phi + Lambda)`, `Lambda <- Lambda + Phi - Psi`.
///
/// Starts from `Phi = Psi = start`, `Lambda = 0`. Returns the column iterate
/// `Psi`, which satisfies achievability exactly, once both the consensus gap
/// `||Phi - Psi||_F` and the step `||Phi^{k+1} - Phi^k||_F` fall below tolerance.
/// A gap that stops shrinking while the iterates stand still is reported as
/// infeasibility.
fn admm_phi(
    rows: &RowProblem<'_>,
    cols: &ColumnProblem<'_>,
    start: Vec<DVector<f64>>,
    cfg: &AdmmConfig,
) -> Result<AdmmOutcome> {
    let factors = cols
        .columns
        .par_iter()
        .map(|col| {
            let mut k = col.hess.clone();
            for i in 0..k.nrows() {
                k[(i, i)] += cols.gamma;
            }
            Cholesky::new(k).ok_or_else(|| Error::Convergence("column prox matrix not positive definite".into()))
        })
        .collect::<Result<Vec<Cholesky<f64, Dyn>>>>()?;

    let mut phi = start.clone();
    let mut psi = start;
    let mut lambda: Vec<DVector<f64>> = psi.iter().map(|v| DVector::zeros(v.len())).collect();
    let mut gap_history: Vec<f64> = Vec::new();
    let mut last_gap = f64::INFINITY;
    let mut last_progress = f64::INFINITY;
    for iter in 1..=cfg.max_iter {
        let mut v: Vec<DVector<f64>> = psi.iter().zip(&lambda).map(|(p, l)| p - l).collect();
        project_rows(rows, &mut v);
        let progress = frob_diff(&v, &phi);
        phi = v;

        psi = cols
            .columns
            .par_iter()
            .zip(factors.par_iter())
            .enumerate()
            .map(|(c, (col, ch))| {
                let red = col.reduction.as_ref().unwrap();
                let target = &phi[c] + &lambda[c];
                let rhs = red.basis.transpose() * (&target - &red.x0) * cols.gamma - &col.grad;
                red.lift(&ch.solve(&rhs))
            })
            .collect();

        let mut gap = 0.0;
        for c in 0..lambda.len() {
            let d = &phi[c] - &psi[c];
            gap += d.norm_squared();
            lambda[c] += d;
        }
        let gap = gap.sqrt();
        last_gap = gap;
        last_progress = progress;
        if gap <= cfg.tol_consensus && progress <= cfg.tol_progress {
            return Ok(AdmmOutcome::Converged { psi, iterations: iter });
        }
        gap_history.push(gap);
        if iter > STALL_WINDOW && progress <= cfg.tol_progress && gap > 10.0 * cfg.tol_consensus {
            let before = gap_history[iter - 1 - STALL_WINDOW];
            if gap > 0.99 * before {
                return Ok(AdmmOutcome::Infeasible { iterations: iter });
            }
        }
    }
    // Out of iterations with a gap that has stopped closing.
    if gap_history.len() > STALL_WINDOW && last_gap > cfg.tol_consensus {
        let before = gap_history[gap_history.len() - 1 - STALL_WINDOW];
        if last_gap > 0.99 * before {
            return Ok(AdmmOutcome::Infeasible {
                iterations: cfg.max_iter,
            });
        }
    }
    Err(Error::Convergence(format!(
        "row/column ADMM did not converge in {} iterations (gap {last_gap:e}, step {last_progress:e})",
        cfg.max_iter
    )))
}

fn frob_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt()
}

fn project_rows(rows: &RowProblem<'_>, v: &mut [DVector<f64>]) {
    if rows.beta.is_infinite() {
        return;
    }
    let l = rows.scaling.log_values();
    let updates: Vec<Vec<(usize, usize, f64)>> = rows
        .groups
        .par_iter()
        .map(|g| {
            let weights: Vec<f64> = g.entries.iter().map(|e| (l[g.row] - l[e.j]).exp()).collect();
            let s0: Vec<f64> = g
                .entries
                .iter()
                .map(|e| e.indices.iter().zip(e.h.iter()).map(|(&k, h)| h * v[e.column][k]).sum())
                .collect();
            let kappa: Vec<f64> = g.entries.iter().map(|e| e.h.norm_squared()).collect();
            let total: f64 = weights.iter().zip(&s0).map(|(w, s)| w * s.abs()).sum();
            if total <= rows.beta {
                return Vec::new();
            }
            let mu = weighted_l1_threshold(&s0, &weights, &kappa, rows.beta);
            let mut out = Vec::new();
            for (e, ((s, w), kp)) in g.entries.iter().zip(s0.iter().zip(&weights).zip(&kappa)) {
                let shrunk = s.signum() * (s.abs() - mu * w * kp).max(0.0);
                let step = (s - shrunk) / kp;
                for (&k, h) in e.indices.iter().zip(e.h.iter()) {
                    out.push((e.column, k, -step * h));
                }
            }
            out
        })
        .collect();
    for list in updates {
        for (c, k, delta) in list {
            v[c][k] += delta;
        }
    }
}

/// Solves `sum_k w_k max(0, |s_k| - mu w_k kappa_k) = beta` for `mu >= 0`,
/// assuming `sum_k w_k |s_k| > beta`.
fn weighted_l1_threshold(s: &[f64], w: &[f64], kappa: &[f64], beta: f64) -> f64 {
    // f(mu) = sum over k with breakpoint > mu of (w_k |s_k| - mu w_k^2 kappa_k)
    let mut items: Vec<(f64, f64, f64)> = s
        .iter()
        .zip(w)
        .zip(kappa)
        .filter(|((s, w), k)| s.abs() > 0.0 && **w > 0.0 && **k > 0.0)
        .map(|((s, w), k)| (s.abs() / (w * k), w * s.abs(), w * w * k))
        .collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Walk breakpoints from largest to smallest, growing the active set.
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for (idx, &(bp, a, b)) in items.iter().enumerate() {
        sum_a += a;
        sum_b += b;
        let mu = (sum_a - beta) / sum_b;
        let next = items.get(idx + 1).map_or(0.0, |x| x.0);
        if mu >= next && mu <= bp {
            return mu.max(0.0);
        }
    }
    ((sum_a - beta) / sum_b).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{dhop_support, ring_plant, Support};
    use crate::norms::scaled_norm;
    use crate::sls::achievability_residual;

    fn ring_problem(n: usize, t: usize, d: usize, stab: NormKind, seed: u64) -> PhiProblem {
        let plant = ring_plant(n, 1.5, seed).unwrap();
        let support = dhop_support(&plant, d);
        PhiProblem {
            weights: PerfWeights::scalar(&plant, 1.0, 50.0),
            regulation: Regulation::scalar(&plant, 1.0, 1.0),
            perf: NormKind::H2,
            stab,
            horizon: t,
            support,
            plant,
        }
    }

    #[test]
    fn decoupled_identity_plant() {
        let n = 4;
        let plant = Plant::new(DMatrix::zeros(n, n), DMatrix::identity(n, n)).unwrap();
        let problem = PhiProblem {
            support: Support::full(&plant),
            weights: PerfWeights::scalar(&plant, 1.0, 1.0),
            regulation: Regulation::scalar(&plant, 1.0, 1.0),
            perf: NormKind::H2,
            stab: NormKind::NuMaxElt,
            horizon: 3,
            plant,
        };
        let spec = PhiStepSpec {
            problem,
            scaling: DiagonalScaling::identity(n),
            beta: f64::INFINITY,
        };
        let out = phi_step(&spec).unwrap();
        let sol = out.solution.unwrap();
        assert!((sol.cost - n as f64).abs() < 1e-10);
        assert!((sol.closed_loop.phi_x().tap(1) - DMatrix::identity(n, n)).amax() < 1e-12);
        for p in 2..=3 {
            assert!(sol.closed_loop.phi_x().tap(p).amax() < 1e-10);
        }
        for p in 1..=3 {
            assert!(sol.closed_loop.phi_u().tap(p).amax() < 1e-10);
        }
    }

    #[test]
    fn finite_beta_result_is_sound() {
        let problem = ring_problem(6, 8, 2, NormKind::NuMaxElt, 3);
        let stepper = PhiStepper::new(problem.clone()).unwrap();
        let id = DiagonalScaling::identity(6);
        let free = stepper.step(&id, f64::INFINITY).unwrap().solution.unwrap();
        let beta0 = induced_norm(&free.magnitude, NormKind::NuMaxElt);
        let beta = 0.9 * beta0;
        let out = stepper.step(&id, beta).unwrap();
        let sol = out.solution.expect("feasible at 0.9 of the free level");
        assert!(achievability_residual(&problem.plant, &sol.closed_loop).unwrap() < 1e-6);
        assert!(scaled_norm(&sol.magnitude, &id, NormKind::NuMaxElt).unwrap() <= beta * (1.0 + 1e-6));
        assert!(sol.cost >= free.cost - 1e-9);
    }

    #[test]
    fn admm_fixed_point_takes_one_iteration() {
        let problem = ring_problem(5, 6, 1, NormKind::L1RowMax, 2);
        let stepper = PhiStepper::new(problem).unwrap();
        let id = DiagonalScaling::identity(5);
        let out = stepper.step(&id, 1e6).unwrap();
        assert_eq!(out.status, PhiStatus::Optimal);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn threshold_solves_breakpoint_equation() {
        let s = [3.0, -1.0, 0.5, 2.0];
        let w = [1.0, 2.0, 0.5, 1.5];
        let k = [1.0, 2.0, 1.0, 0.5];
        let beta = 2.0;
        let mu = weighted_l1_threshold(&s, &w, &k, beta);
        let f: f64 = (0..4).map(|i| w[i] * (s[i].abs() - mu * w[i] * k[i]).max(0.0)).sum();
        assert!((f - beta).abs() < 1e-12, "f = {f}");
    }

    #[test]
    fn rejects_unsupported_pairings() {
        let mut problem = ring_problem(5, 4, 1, NormKind::L1RowMax, 1);
        problem.perf = NormKind::NuMaxElt;
        assert!(matches!(PhiStepper::new(problem), Err(Error::Unsupported(_))));
        let mut problem = ring_problem(5, 4, 1, NormKind::NuMaxElt, 1);
        problem.perf = NormKind::L1RowMax;
        assert!(matches!(PhiStepper::new(problem), Err(Error::Unsupported(_))));
        let mut problem = ring_problem(5, 4, 1, NormKind::L1RowMax, 1);
        problem.weights.qx[(0, 1)] = 0.1;
        problem.weights.qx[(1, 0)] = 0.1;
        assert!(matches!(PhiStepper::new(problem), Err(Error::Unsupported(_))));
    }

    #[test]
    fn nu_never_takes_admm_path() {
        let stepper = PhiStepper::new(ring_problem(5, 4, 1, NormKind::NuMaxElt, 1)).unwrap();
        assert_eq!(stepper.path(), PhiPath::ColumnSeparable);
        let out = stepper.step(&DiagonalScaling::identity(5), 100.0).unwrap();
        assert_eq!(out.path, PhiPath::ColumnSeparable);
    }

    #[test]
    fn nominal_cost_examples() {
        let n = 3;
        let plant = Plant::new(DMatrix::zeros(n, n), DMatrix::identity(n, n)).unwrap();
        let mut phi_x = FirTransferMatrix::zeros(n, n, 2).unwrap();
        *phi_x.tap_mut(1) = DMatrix::identity(n, n);
        let phi_u = FirTransferMatrix::zeros(n, n, 2).unwrap();
        let w = PerfWeights::scalar(&plant, 1.0, 50.0);
        let cl = ClosedLoop::new(phi_x.clone(), phi_u.clone(), Support::full(&plant)).unwrap();
        assert_eq!(nominal_cost(&cl, &w, NormKind::H2).unwrap(), 3.0);
        let doubled = ClosedLoop::new(phi_x.scale(2.0), phi_u, Support::full(&plant)).unwrap();
        assert_eq!(nominal_cost(&doubled, &w, NormKind::H2).unwrap(), 12.0);
    }

    #[test]
    fn cost_is_monotone_in_beta() {
        let problem = ring_problem(6, 6, 2, NormKind::NuMaxElt, 5);
        let stepper = PhiStepper::new(problem).unwrap();
        let id = DiagonalScaling::identity(6);
        let free = stepper.step(&id, f64::INFINITY).unwrap().solution.unwrap();
        let top = induced_norm(&free.magnitude, NormKind::NuMaxElt);
        let mut last = free.cost;
        for frac in [0.95, 0.9, 0.85, 0.8] {
            let out = stepper.step(&id, frac * top).unwrap();
            let Some(sol) = out.solution else { break };
            assert!(sol.cost >= last - 1e-6 * last, "{} < {}", sol.cost, last);
            last = sol.cost;
        }
    }

    #[test]
    fn column_order_does_not_change_bits() {
        let stepper = PhiStepper::new(ring_problem(6, 6, 2, NormKind::LinfColMax, 8)).unwrap();
        let id = DiagonalScaling::identity(6);
        let free = stepper.step(&id, f64::INFINITY).unwrap().solution.unwrap();
        let beta = 0.97 * induced_norm(&free.magnitude, NormKind::LinfColMax);
        let sol = stepper.step(&id, beta).unwrap().solution.unwrap();
        let mut reversed: Vec<DVector<f64>> = stepper
            .columns
            .iter()
            .rev()
            .map(|c| stepper.solve_column(c, &id, beta).unwrap().unwrap())
            .collect();
        reversed.reverse();
        let again = stepper.assemble(&reversed).unwrap();
        assert_eq!(sol.closed_loop, again.closed_loop);
    }

    #[test]
    fn admm_agrees_with_direct_on_decoupled_plant() {
        // Diagonal A and B: every norm of M reduces to its diagonal, so the
        // L1 ADMM path and the nu column path solve the same problem.
        let n = 4;
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.2, -0.8, 1.5, 0.3]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 2.0, 1.0]));
        let plant = Plant::new(a, b).unwrap();
        let mk = |stab| PhiProblem {
            support: dhop_support(&plant, 1),
            weights: PerfWeights::scalar(&plant, 1.0, 5.0),
            regulation: Regulation::scalar(&plant, 1.0, 1.0),
            perf: NormKind::H2,
            stab,
            horizon: 4,
            plant: plant.clone(),
        };
        let id = DiagonalScaling::identity(n);
        let direct = PhiStepper::new(mk(NormKind::NuMaxElt)).unwrap();
        let free = direct.step(&id, f64::INFINITY).unwrap().solution.unwrap();
        let beta = 0.8 * induced_norm(&free.magnitude, NormKind::NuMaxElt);
        let d = direct.step(&id, beta).unwrap().solution.unwrap();
        let cfg = AdmmConfig {
            tol_consensus: 1e-6,
            tol_progress: 1e-6,
            max_iter: 20_000,
            ..AdmmConfig::default()
        };
        let admm = PhiStepper::new(mk(NormKind::L1RowMax)).unwrap();
        let out = admm.step_with(&id, beta, &cfg).unwrap();
        let s = out.solution.unwrap();
        for p in 1..=4 {
            assert!((d.closed_loop.phi_x().tap(p) - s.closed_loop.phi_x().tap(p)).amax() < 1e-3);
            assert!((d.closed_loop.phi_u().tap(p) - s.closed_loop.phi_u().tap(p)).amax() < 1e-3);
        }
    }

    #[test]
    fn penalty_extremes_reach_the_same_point() {
        let stepper = PhiStepper::new(ring_problem(3, 6, 1, NormKind::L1RowMax, 4)).unwrap();
        let id = DiagonalScaling::identity(3);
        let free = stepper.step(&id, f64::INFINITY).unwrap().solution.unwrap();
        let beta = 0.97 * induced_norm(&free.magnitude, NormKind::L1RowMax);
        let solve = |gamma| {
            let cfg = AdmmConfig {
                gamma,
                tol_consensus: 1e-6,
                tol_progress: 1e-6,
                max_iter: 50_000,
            };
            stepper.step_with(&id, beta, &cfg).unwrap().solution.unwrap()
        };
        let lo = solve(1e-3);
        let hi = solve(1e3);
        assert!((lo.cost - hi.cost).abs() <= 1e-2 * lo.cost);
        for p in 1..=6 {
            assert!((lo.closed_loop.phi_x().tap(p) - hi.closed_loop.phi_x().tap(p)).amax() < 1e-2);
        }
    }

    #[test]
    fn full_control_by_duality() {
        let ring = ring_plant(5, 1.4, 6).unwrap();
        let a = ring.a().clone();
        let c = DMatrix::identity(5, 5);
        let dual = crate::model::dualize_full_control(&a, &c).unwrap();
        let problem = PhiProblem {
            support: dhop_support(&dual, 2),
            weights: PerfWeights::scalar(&dual, 1.0, 1.0),
            regulation: Regulation::scalar(&dual, 1.0, 1.0),
            perf: NormKind::H2,
            stab: NormKind::NuMaxElt,
            horizon: 6,
            plant: dual,
        };
        let sol = phi_step(&PhiStepSpec {
            problem,
            scaling: DiagonalScaling::identity(5),
            beta: f64::INFINITY,
        })
        .unwrap()
        .solution
        .unwrap();
        let phi_w = sol.closed_loop.phi_x().transpose();
        let phi_v = sol.closed_loop.phi_u().transpose();
        let res = crate::model::full_control_residual(&a, &c, &phi_w, &phi_v).unwrap();
        assert!(res <= 1e-8, "residual {res:e}");
    }
}
