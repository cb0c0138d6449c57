//! Small dense convex QP/LP solver.
//!
//! Problems have the form
//!
//! ```text
//! minimize    1/2 x'Px + q'x
//! subject to  Aeq x = beq
//!             Ain x <= bin
//! ```
//!
//! Equalities are eliminated exactly through an orthonormal null-space basis. The
//! remaining inequality-constrained problem is solved by an operator-splitting
//! (ADMM) iteration with over-relaxation, equilibration and adaptive penalty,
//! followed by an active-set polish that recovers a high-accuracy solution.
//! A primal-dual interior-point engine is available for degenerate programs
//! where the splitting iteration is slow to settle.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct ConvexSubproblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub aeq: DMatrix<f64>,
    pub beq: DVector<f64>,
    pub ain: DMatrix<f64>,
    pub bin: DVector<f64>,
}

impl ConvexSubproblem {
    /// Unconstrained problem with zero objective over `n` variables.
    pub fn new(n: usize) -> Self {
        ConvexSubproblem {
            p: DMatrix::zeros(n, n),
            q: DVector::zeros(n),
            aeq: DMatrix::zeros(0, n),
            beq: DVector::zeros(0),
            ain: DMatrix::zeros(0, n),
            bin: DVector::zeros(0),
        }
    }

    pub fn variables(&self) -> usize {
        self.q.len()
    }

    pub fn with_objective(mut self, p: DMatrix<f64>, q: DVector<f64>) -> Self {
        self.p = p;
        self.q = q;
        self
    }

    pub fn with_equalities(mut self, aeq: DMatrix<f64>, beq: DVector<f64>) -> Self {
        self.aeq = aeq;
        self.beq = beq;
        self
    }

    pub fn with_inequalities(mut self, ain: DMatrix<f64>, bin: DVector<f64>) -> Self {
        self.ain = ain;
        self.bin = bin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.variables();
        if self.p.shape() != (n, n) {
            return Err(Error::dim(format!("P is {:?}, expected {n}x{n}", self.p.shape())));
        }
        if self.aeq.ncols() != n || self.aeq.nrows() != self.beq.len() {
            return Err(Error::dim("equality system is not conformal"));
        }
        if self.ain.ncols() != n || self.ain.nrows() != self.bin.len() {
            return Err(Error::dim("inequality system is not conformal"));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.p) || !finite(&self.aeq) || !finite(&self.ain) {
            return Err(Error::invalid("problem data must be finite"));
        }
        if self.q.iter().chain(self.beq.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("problem data must be finite"));
        }
        if self.bin.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::invalid("inequality bounds must be finite or +inf"));
        }
        check_psd(&self.p)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }
}

fn check_psd(p: &DMatrix<f64>) -> Result<()> {
    let scale = p.amax().max(1.0);
    let asym = (p - p.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::invalid(format!("P is not symmetric (asymmetry {asym:e})")));
    }
    if p.nrows() == 0 || p.iter().all(|v| *v == 0.0) {
        return Ok(());
    }
    let sym = (p + p.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min();
    if min_eig < -1e-10 * scale {
        return Err(Error::invalid(format!("P is not positive semidefinite (eigenvalue {min_eig:e})")));
    }
    Ok(())
}

/// Emits `s >= expr` and `s >= -expr` as rows of `A x <= b`, where
/// `expr = coeffs' x + constant` and `s` is variable `slack`.
pub fn transcribe_abs(
    coeffs: &[(usize, f64)],
    constant: f64,
    slack: usize,
    n: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut rows = DMatrix::zeros(2, n);
    for &(k, c) in coeffs {
        rows[(0, k)] += c;
        rows[(1, k)] -= c;
    }
    rows[(0, slack)] -= 1.0;
    rows[(1, slack)] -= 1.0;
    (rows, DVector::from_vec(vec![-constant, constant]))
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    pub polish: bool,
    /// Over-relaxation parameter.
    pub alpha: f64,
    /// Proximal regularization on the primal variable.
    pub sigma: f64,
    pub rho: f64,
    /// Relative tolerance on infeasibility certificates.
    pub tol_infeasible: f64,
    pub engine: Engine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Engine {
    #[default]
    OperatorSplitting,
    InteriorPoint,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tol_abs: 1e-8,
            tol_rel: 1e-8,
            max_iter: 100_000,
            polish: true,
            alpha: 1.6,
            sigma: 1e-6,
            rho: 0.1,
            tol_infeasible: 1e-7,
            engine: Engine::OperatorSplitting,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    /// Multipliers of the inequality rows (nonnegative at optimality).
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub polished: bool,
}

/// Affine parametrization `x = x0 + Z y` of the solution set of `Aeq x = beq`,
/// with orthonormal `Z`.
#[derive(Clone, Debug)]
pub struct EqualityReduction {
    pub x0: DVector<f64>,
    pub basis: DMatrix<f64>,
}

impl EqualityReduction {
    /// Returns `None` if the equality system is inconsistent.
    pub fn new(aeq: &DMatrix<f64>, beq: &DVector<f64>) -> Result<Option<Self>> {
        let (r, n) = aeq.shape();
        if beq.len() != r {
            return Err(Error::dim("equality right-hand side length mismatch"));
        }
        if r == 0 || aeq.iter().all(|v| *v == 0.0) {
            if beq.iter().any(|v| *v != 0.0) {
                return Ok(None);
            }
            return Ok(Some(EqualityReduction {
                x0: DVector::zeros(n),
                basis: DMatrix::identity(n, n),
            }));
        }
        // Range and null space from the Gram matrix. nalgebra's SVD loses
        // accuracy on rank-deficient systems; the symmetric eigensolver does not.
        let eig = symmetrize(aeq.transpose() * aeq).symmetric_eigen();
        let lambda_max = eig.eigenvalues.amax();
        let threshold = RANK_TOL * lambda_max;
        let (range, null): (Vec<usize>, Vec<usize>) = (0..n).partition(|&k| eig.eigenvalues[k] > threshold);
        let range_basis = eig.eigenvectors.select_columns(range.iter());
        let inv = DVector::from_iterator(range.len(), range.iter().map(|&k| 1.0 / eig.eigenvalues[k]));
        let pinv_apply = |rhs: &DVector<f64>| {
            let proj = range_basis.transpose() * (aeq.transpose() * rhs);
            &range_basis * proj.component_mul(&inv)
        };
        let mut x0 = pinv_apply(beq);
        let correction = pinv_apply(&(beq - aeq * &x0));
        x0 += correction;
        let residual = (aeq * &x0 - beq).amax();
        if residual > 1e-8 * (1.0 + beq.amax()) {
            return Ok(None);
        }
        let basis = eig.eigenvectors.select_columns(null.iter());
        Ok(Some(EqualityReduction { x0, basis }))
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn lift(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.x0 + &self.basis * y
    }
}

/// Inequality-only problem `min 1/2 y'Py + q'y s.t. Cy <= b`.
#[derive(Clone, Debug)]
pub struct ReducedProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub c: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ReducedProblem {
    pub fn reduce(problem: &ConvexSubproblem, red: &EqualityReduction) -> Self {
        let z = &red.basis;
        let pz = &problem.p * z;
        ReducedProblem {
            p: symmetrize(z.transpose() * &pz),
            q: z.transpose() * (&problem.p * &red.x0 + &problem.q),
            c: &problem.ain * z,
            b: &problem.bin - &problem.ain * &red.x0,
        }
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.p * y)) + self.q.dot(y)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Solves a full problem, eliminating equalities first.
pub fn solve(problem: &ConvexSubproblem, settings: &Settings) -> Result<SolveReport> {
    problem.validate()?;
    let n = problem.variables();
    let Some(red) = EqualityReduction::new(&problem.aeq, &problem.beq)? else {
        return Ok(SolveReport {
            status: SolveStatus::Infeasible,
            x: DVector::zeros(n),
            multipliers: DVector::zeros(problem.bin.len()),
            objective: f64::NAN,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            iterations: 0,
            polished: false,
        });
    };
    let reduced = ReducedProblem::reduce(problem, &red);
    let mut report = solve_reduced(&reduced, settings, None)?;
    report.x = red.lift(&report.x);
    report.objective = problem.objective(&report.x);
    Ok(report)
}

/// Initial iterate for [`solve_reduced`].
#[derive(Clone, Debug)]
pub struct WarmStart {
    pub y: DVector<f64>,
    pub multipliers: DVector<f64>,
}

/// Solves an inequality-only problem. The report's `x` is in the reduced coordinates.
pub fn solve_reduced(
    problem: &ReducedProblem,
    settings: &Settings,
    warm: Option<&WarmStart>,
) -> Result<SolveReport> {
    let n = problem.q.len();
    let m = problem.b.len();
    if problem.p.shape() != (n, n) || problem.c.shape() != (m, n) {
        return Err(Error::dim("reduced problem is not conformal"));
    }

    // Rows with no variables are either vacuous or certify infeasibility.
    let mut kept = Vec::with_capacity(m);
    for i in 0..m {
        let row_norm = problem.c.row(i).amax();
        if row_norm == 0.0 {
            if problem.b[i] < -settings.tol_abs {
                return Ok(trivial_report(SolveStatus::Infeasible, n, m, f64::NAN));
            }
        } else if problem.b[i] < f64::INFINITY {
            kept.push(i);
        }
    }

    if n == 0 {
        let y = DVector::zeros(0);
        return Ok(SolveReport {
            status: SolveStatus::Optimal,
            multipliers: DVector::zeros(m),
            objective: 0.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 0,
            polished: false,
            x: y,
        });
    }

    if kept.is_empty() {
        return solve_unconstrained(problem, settings, m);
    }

    let c = problem.c.select_rows(kept.iter());
    let b = DVector::from_iterator(kept.len(), kept.iter().map(|&i| problem.b[i]));
    let sub = ReducedProblem {
        p: problem.p.clone(),
        q: problem.q.clone(),
        c,
        b,
    };
    if settings.engine == Engine::InteriorPoint {
        let mut report = interior_point(&sub, settings);
        let mut full = DVector::zeros(m);
        for (k, &i) in kept.iter().enumerate() {
            full[i] = report.multipliers[k];
        }
        report.multipliers = full;
        return Ok(report);
    }
    let warm_kept = warm.map(|w| WarmStart {
        y: w.y.clone(),
        multipliers: DVector::from_iterator(kept.len(), kept.iter().map(|&i| w.multipliers[i])),
    });
    let mut admm = Admm::new(&sub, settings);
    if let Some(w) = warm_kept.as_ref() {
        admm.warm_start(w);
    }
    let mut report = admm.run(&sub, settings);
    let mut full = DVector::zeros(m);
    for (k, &i) in kept.iter().enumerate() {
        full[i] = report.multipliers[k];
    }
    report.multipliers = full;
    Ok(report)
}

fn trivial_report(status: SolveStatus, n: usize, m: usize, objective: f64) -> SolveReport {
    SolveReport {
        status,
        x: DVector::zeros(n),
        multipliers: DVector::zeros(m),
        objective,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        iterations: 0,
        polished: false,
    }
}

fn solve_unconstrained(problem: &ReducedProblem, settings: &Settings, m: usize) -> Result<SolveReport> {
    let n = problem.q.len();
    let rhs = -&problem.q;
    let y = match Cholesky::new(problem.p.clone()) {
        Some(ch) => ch.solve(&rhs),
        None => {
            let eig = symmetrize(problem.p.clone()).symmetric_eigen();
            let eps = 1e-12 * eig.eigenvalues.amax().max(1e-300);
            let proj = eig.eigenvectors.transpose() * &rhs;
            let scaled = DVector::from_fn(n, |k, _| {
                let l = eig.eigenvalues[k];
                if l > eps { proj[k] / l } else { 0.0 }
            });
            &eig.eigenvectors * scaled
        }
    };
    let py = &problem.p * &y;
    let dual = (&py + &problem.q).amax();
    let eps_dual = settings.tol_abs + settings.tol_rel * py.amax().max(problem.q.amax());
    if dual > eps_dual || y.iter().any(|v| !v.is_finite()) {
        return Ok(trivial_report(SolveStatus::Unbounded, n, m, f64::NEG_INFINITY));
    }
    Ok(SolveReport {
        status: SolveStatus::Optimal,
        objective: problem.objective(&y),
        x: y,
        multipliers: DVector::zeros(m),
        primal_residual: 0.0,
        dual_residual: dual,
        iterations: 0,
        polished: false,
    })
}

/// Relative eigenvalue floor of `Aeq'Aeq` below which a direction counts as null.
const RANK_TOL: f64 = 1e-12;
const CHECK_INTERVAL: usize = 5;
const RHO_INTERVAL: usize = 25;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const STAGNATION_WINDOW: usize = 1000;
const DIVERGENCE_THRESHOLD: f64 = 1e8;

/// Equilibrated problem data and ADMM state.
struct Admm {
    p: DMatrix<f64>,
    q: DVector<f64>,
    c: DMatrix<f64>,
    ct: DMatrix<f64>,
    b: DVector<f64>,
    /// Variable scaling: y = d .* y_scaled.
    d: DVector<f64>,
    /// Constraint scaling: rows of C multiplied by e.
    e: DVector<f64>,
    /// Cost scaling.
    cost: f64,
    y: DVector<f64>,
    z: DVector<f64>,
    lambda: DVector<f64>,
    rho: f64,
    factor: Cholesky<f64, Dyn>,
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
}

impl Admm {
    fn new(problem: &ReducedProblem, settings: &Settings) -> Self {
        let (p, q, c, b, d, e, cost) = equilibrate(problem);
        let n = q.len();
        let m = b.len();
        let ct = c.transpose();
        let rho = settings.rho;
        let factor = factorize(&p, &ct, settings.sigma, rho);
        Admm {
            p,
            q,
            c,
            ct,
            b,
            d,
            e,
            cost,
            y: DVector::zeros(n),
            z: DVector::zeros(m),
            lambda: DVector::zeros(m),
            rho,
            factor,
        }
    }

    fn warm_start(&mut self, w: &WarmStart) {
        if w.y.len() != self.y.len() || w.multipliers.len() != self.lambda.len() {
            return;
        }
        self.y = w.y.component_div(&self.d);
        // lambda = e .* lambda_scaled / cost
        self.lambda = w.multipliers.component_div(&self.e) * self.cost;
        self.z = (&self.c * &self.y).zip_map(&self.b, f64::min);
    }

    fn unscaled_y(&self) -> DVector<f64> {
        self.y.component_mul(&self.d)
    }

    fn unscaled_lambda(&self) -> DVector<f64> {
        self.lambda.component_mul(&self.e) / self.cost
    }

    fn residuals(&self, settings: &Settings) -> Residuals {
        let cy = &self.c * &self.y;
        let prim_vec = (&cy - &self.z).component_div(&self.e);
        let py = &self.p * &self.y;
        let ctl = &self.ct * &self.lambda;
        let inv_d = self.d.map(|v| 1.0 / v);
        let dual_vec = (&py + &self.q + &ctl).component_mul(&inv_d) / self.cost;
        let cy_n = cy.component_div(&self.e).amax();
        let z_n = self.z.component_div(&self.e).amax();
        let py_n = py.component_mul(&inv_d).amax() / self.cost;
        let ctl_n = ctl.component_mul(&inv_d).amax() / self.cost;
        let q_n = self.q.component_mul(&inv_d).amax() / self.cost;
        Residuals {
            prim: prim_vec.amax(),
            dual: dual_vec.amax(),
            eps_prim: settings.tol_abs + settings.tol_rel * cy_n.max(z_n),
            eps_dual: settings.tol_abs + settings.tol_rel * py_n.max(ctl_n).max(q_n),
        }
    }

    /// OSQP-style penalty update balancing normalized residuals.
    fn rho_estimate(&self) -> f64 {
        let cy = &self.c * &self.y;
        let py = &self.p * &self.y;
        let ctl = &self.ct * &self.lambda;
        let prim = (&cy - &self.z).amax();
        let dual = (&py + &self.q + &ctl).amax();
        let prim_norm = cy.amax().max(self.z.amax()).max(1e-30);
        let dual_norm = py.amax().max(ctl.amax()).max(self.q.amax()).max(1e-30);
        let ratio = (prim / prim_norm) / (dual / dual_norm).max(1e-30);
        (self.rho * ratio.sqrt()).clamp(RHO_MIN, RHO_MAX)
    }

    fn run(&mut self, problem: &ReducedProblem, settings: &Settings) -> SolveReport {
        let alpha = settings.alpha;
        let mut polish_factor = 1e4;
        let mut last_polish = 0usize;
        let mut stagnation_ref = f64::INFINITY;
        let mut stagnation_start = 0usize;
        let mut last = None;
        for iter in 1..=settings.max_iter {
            let rhs = &self.y * settings.sigma - &self.q + &self.ct * (&self.z * self.rho - &self.lambda);
            let y_hat = self.factor.solve(&rhs);
            let z_hat = &self.c * &y_hat;
            let y_new = &y_hat * alpha + &self.y * (1.0 - alpha);
            let v = &z_hat * alpha + &self.z * (1.0 - alpha) + &self.lambda / self.rho;
            let z_new = v.zip_map(&self.b, f64::min);
            let lambda_new = (&v - &z_new) * self.rho;
            let delta_y = &y_new - &self.y;
            let delta_lambda = &lambda_new - &self.lambda;
            self.y = y_new;
            self.z = z_new;
            self.lambda = lambda_new;

            if iter % CHECK_INTERVAL != 0 && iter != settings.max_iter {
                continue;
            }
            let res = self.residuals(settings);
            if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
                if settings.polish {
                    if let Some(rep) = self.polish(problem, settings, iter) {
                        return rep;
                    }
                }
                return self.report(problem, SolveStatus::Optimal, iter, &res, false);
            }
            if settings.polish
                && res.prim <= polish_factor * res.eps_prim
                && res.dual <= polish_factor * res.eps_dual
                && iter >= last_polish + 100
            {
                last_polish = iter;
                if let Some(rep) = self.polish(problem, settings, iter) {
                    return rep;
                }
                polish_factor = (polish_factor * 0.1).max(1.0);
            }
            if self.primal_infeasible(&delta_lambda, settings) {
                return self.certificate_report(problem, SolveStatus::Infeasible, iter, &res);
            }
            if self.dual_infeasible(&delta_y, settings) {
                return self.certificate_report(problem, SolveStatus::Unbounded, iter, &res);
            }
            // Heuristic divergence test: huge multipliers with a stuck primal residual.
            if res.prim < 0.99 * stagnation_ref {
                stagnation_ref = res.prim;
                stagnation_start = iter;
            } else if iter - stagnation_start >= STAGNATION_WINDOW
                && self.unscaled_lambda().amax() > DIVERGENCE_THRESHOLD
            {
                return self.certificate_report(problem, SolveStatus::Infeasible, iter, &res);
            }
            if iter % RHO_INTERVAL == 0 {
                let rho_new = self.rho_estimate();
                if rho_new > 5.0 * self.rho || rho_new < self.rho / 5.0 {
                    self.rho = rho_new;
                    self.factor = factorize(&self.p, &self.ct, settings.sigma, self.rho);
                }
            }
            last = Some(res);
        }
        let res = last.unwrap_or_else(|| self.residuals(settings));
        if settings.polish {
            if let Some(rep) = self.polish(problem, settings, settings.max_iter) {
                return rep;
            }
        }
        self.report(problem, SolveStatus::IterationLimit, settings.max_iter, &res, false)
    }

    fn primal_infeasible(&self, delta_lambda: &DVector<f64>, settings: &Settings) -> bool {
        // Work in unscaled multipliers: dl = e .* delta_lambda_scaled.
        let dl = delta_lambda.component_mul(&self.e);
        let norm = dl.amax();
        if norm < 1e-30 {
            return false;
        }
        let eps = settings.tol_infeasible * norm;
        if dl.iter().any(|v| *v < -eps) {
            return false;
        }
        // C' dl in unscaled variables: D^{-1} C_s' delta_lambda.
        let ct_dl = (&self.ct * delta_lambda).component_div(&self.d);
        if ct_dl.amax() > eps {
            return false;
        }
        let b_unscaled = self.b.component_div(&self.e);
        let support: f64 = b_unscaled
            .iter()
            .zip(dl.iter())
            .map(|(b, l)| b * l.max(0.0))
            .sum();
        support < -eps
    }

    fn dual_infeasible(&self, delta_y: &DVector<f64>, settings: &Settings) -> bool {
        let dy = delta_y.component_mul(&self.d);
        let norm = dy.amax();
        if norm < 1e-30 {
            return false;
        }
        let eps = settings.tol_infeasible * norm;
        let inv_d = self.d.map(|v| 1.0 / v);
        let p_dy = (&self.p * delta_y).component_mul(&inv_d) / self.cost;
        if p_dy.amax() > eps {
            return false;
        }
        let q_dy = self.q.dot(delta_y) / self.cost;
        if q_dy >= -eps {
            return false;
        }
        let c_dy = (&self.c * delta_y).component_div(&self.e);
        c_dy.iter().all(|v| *v <= eps)
    }

    fn report(
        &self,
        problem: &ReducedProblem,
        status: SolveStatus,
        iterations: usize,
        res: &Residuals,
        polished: bool,
    ) -> SolveReport {
        let y = self.unscaled_y();
        SolveReport {
            status,
            objective: problem.objective(&y),
            x: y,
            multipliers: self.unscaled_lambda(),
            primal_residual: res.prim,
            dual_residual: res.dual,
            iterations,
            polished,
        }
    }

    fn certificate_report(
        &self,
        problem: &ReducedProblem,
        status: SolveStatus,
        iterations: usize,
        res: &Residuals,
    ) -> SolveReport {
        let mut rep = self.report(problem, status, iterations, res, false);
        rep.objective = match status {
            SolveStatus::Infeasible => f64::INFINITY,
            SolveStatus::Unbounded => f64::NEG_INFINITY,
            _ => rep.objective,
        };
        rep
    }

    /// Guesses the active set from the ADMM iterate and solves the
    /// corresponding equality-constrained KKT system in unscaled data.
    fn polish(&self, problem: &ReducedProblem, settings: &Settings, iterations: usize) -> Option<SolveReport> {
        let n = problem.q.len();
        let active: Vec<usize> = (0..self.b.len())
            .filter(|&i| self.b[i] - self.z[i] < self.lambda[i])
            .collect();
        let k = active.len();
        let c_a = problem.c.select_rows(active.iter());
        let dim = n + k;
        let delta = 1e-9 * (1.0 + problem.p.amax().max(c_a.amax()));
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&problem.p);
        kkt.view_mut((0, n), (n, k)).copy_from(&c_a.transpose());
        kkt.view_mut((n, 0), (k, n)).copy_from(&c_a);
        let exact = kkt.clone();
        for i in 0..n {
            kkt[(i, i)] += delta;
        }
        for i in n..dim {
            kkt[(i, i)] -= delta;
        }
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&problem.q));
        for (r, &i) in active.iter().enumerate() {
            rhs[n + r] = problem.b[i];
        }
        let lu = kkt.lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..10 {
            let r = &rhs - &exact * &sol;
            if r.amax() <= 1e-14 * (1.0 + rhs.amax()) {
                break;
            }
            let corr = lu.solve(&r)?;
            sol += corr;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let y = sol.rows(0, n).into_owned();
        let mut lambda = DVector::zeros(self.b.len());
        for (r, &i) in active.iter().enumerate() {
            lambda[i] = sol[n + r];
        }
        let cy = &problem.c * &y;
        let prim = cy.iter().zip(problem.b.iter()).map(|(a, b)| (a - b).max(0.0)).fold(0.0, f64::max);
        let py = &problem.p * &y;
        let ctl = problem.c.transpose() * &lambda;
        let dual = (&py + &problem.q + &ctl).amax();
        let eps_prim = settings.tol_abs + settings.tol_rel * cy.amax().max(problem.b.iter().filter(|v| v.is_finite()).fold(0.0, |a, v| a.max(v.abs())));
        let eps_dual = settings.tol_abs + settings.tol_rel * py.amax().max(ctl.amax()).max(problem.q.amax());
        let min_lambda = lambda.iter().fold(0.0, |a: f64, v| a.min(*v));
        if prim > eps_prim || dual > eps_dual || min_lambda < -eps_dual {
            return None;
        }
        let lambda = lambda.map(|v| v.max(0.0));
        Some(SolveReport {
            status: SolveStatus::Optimal,
            objective: problem.objective(&y),
            x: y,
            multipliers: lambda,
            primal_residual: prim,
            dual_residual: dual,
            iterations,
            polished: true,
        })
    }
}

fn factorize(p: &DMatrix<f64>, ct: &DMatrix<f64>, sigma: f64, rho: f64) -> Cholesky<f64, Dyn> {
    let mut k = ct * ct.transpose() * rho + p;
    for i in 0..k.nrows() {
        k[(i, i)] += sigma;
    }
    Cholesky::new(symmetrize(k)).expect("P + sigma I + rho C'C is positive definite")
}

type Equilibrated = (
    DMatrix<f64>,
    DVector<f64>,
    DMatrix<f64>,
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
    f64,
);

/// Ruiz equilibration of the KKT matrix followed by cost scaling.
fn equilibrate(problem: &ReducedProblem) -> Equilibrated {
    let n = problem.q.len();
    let m = problem.b.len();
    let mut p = problem.p.clone();
    let mut c = problem.c.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let clip = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..10 {
        let dv = DVector::from_fn(n, |j, _| {
            let norm = p.column(j).amax().max(c.column(j).amax());
            1.0 / clip(norm).sqrt()
        });
        let ev = DVector::from_fn(m, |i, _| 1.0 / clip(c.row(i).amax()).sqrt());
        for j in 0..n {
            for i in 0..n {
                p[(i, j)] *= dv[i] * dv[j];
            }
            for i in 0..m {
                c[(i, j)] *= ev[i] * dv[j];
            }
        }
        d.component_mul_assign(&dv);
        e.component_mul_assign(&ev);
    }
    let mut q = problem.q.component_mul(&d);
    let mean_col = if n > 0 {
        (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64
    } else {
        0.0
    };
    let cost = 1.0 / clip(mean_col.max(q.amax()));
    p *= cost;
    q *= cost;
    let b = problem.b.component_mul(&e);
    (p, q, c, b, d, e, cost)
}

const IPM_MAX_ITER: usize = 200;
const IPM_STEP: f64 = 0.99;
const IPM_STALL: usize = 10;
/// Largest KKT error, in units of the tolerance, accepted from a stalled run.
const IPM_RELAXED: f64 = 100.0;

/// Mehrotra predictor-corrector on `min 1/2 y'Py + q'y  s.t.  Cy + s = b, s >= 0`.
///
/// Rows of `C` are normalized to unit infinity norm. Primal infeasibility is
/// reported only with a verified Farkas vector `lambda >= 0`, `C'lambda ~ 0`,
/// `b'lambda < 0`.
fn interior_point(problem: &ReducedProblem, settings: &Settings) -> SolveReport {
    let n = problem.q.len();
    let m = problem.b.len();
    let scale = DVector::from_fn(m, |i, _| 1.0 / problem.c.row(i).amax());
    let mut c = problem.c.clone();
    for i in 0..m {
        c.row_mut(i).scale_mut(scale[i]);
    }
    let b = problem.b.component_mul(&scale);
    let ct = c.transpose();
    let p = &problem.p;
    let q = &problem.q;
    let b_norm = b.amax();
    let q_norm = q.amax();

    let mut y = DVector::zeros(n);
    let mut s = (&b - &c * &y).map(|v| v.max(1.0));
    let mut lam = DVector::from_element(m, 1.0);
    let eps = settings.tol_abs.max(1e-12);
    struct Best {
        merit: f64,
        iter: usize,
        y: DVector<f64>,
        lam: DVector<f64>,
        prim: f64,
        dual: f64,
    }
    let mut best: Option<Best> = None;
    let mut iter = 0;
    let mut status = SolveStatus::IterationLimit;
    let max_iter = settings.max_iter.min(IPM_MAX_ITER);
    let (mut prim, mut dual) = (f64::INFINITY, f64::INFINITY);
    while iter < max_iter {
        iter += 1;
        let r_p = &c * &y + &s - &b;
        let r_d = p * &y + q + &ct * &lam;
        let mu = s.dot(&lam) / m as f64;
        prim = r_p.amax();
        dual = r_d.amax();
        let obj = 0.5 * y.dot(&(p * &y)) + q.dot(&y);
        if prim <= eps * (1.0 + b_norm)
            && dual <= eps * (1.0 + q_norm)
            && mu <= eps * (1.0 + obj.abs())
        {
            status = SolveStatus::Optimal;
            break;
        }
        if farkas(&ct, &b, &lam, settings.tol_infeasible) {
            status = SolveStatus::Infeasible;
            break;
        }
        // KKT error in units of the tolerance.
        let merit = (prim / (1.0 + b_norm)).max(dual / (1.0 + q_norm)).max(mu / (1.0 + obj.abs())) / eps;
        match &best {
            Some(b) if merit >= 0.5 * b.merit => {
                if iter - b.iter > IPM_STALL {
                    break;
                }
            }
            _ => {
                best = Some(Best {
                    merit,
                    iter,
                    y: y.clone(),
                    lam: lam.clone(),
                    prim,
                    dual,
                })
            }
        }

        let w = lam.component_div(&s);
        let mut k = p.clone();
        let cw = DMatrix::from_fn(m, n, |i, j| c[(i, j)] * w[i]);
        k.gemm(1.0, &ct, &cw, 1.0);
        let reg = 1e-13 * (1.0 + k.diagonal().amax());
        for i in 0..n {
            k[(i, i)] += reg;
        }
        let Some(chol) = Cholesky::new(symmetrize(k)) else {
            break;
        };
        let direction = |r_c: &DVector<f64>| {
            let s_inv_rc = r_c.component_div(&s);
            let rhs = -&r_d - &ct * (w.component_mul(&r_p) - &s_inv_rc);
            let mut dy = chol.solve(&rhs);
            let mut cdy = &c * &dy;
            let mut dlam = w.component_mul(&(&cdy + &r_p)) - &s_inv_rc;
            // refinement against the unreduced dual equation
            for _ in 0..2 {
                let e = &r_d + p * &dy + &ct * &dlam;
                dy -= chol.solve(&e);
                cdy = &c * &dy;
                dlam = w.component_mul(&(&cdy + &r_p)) - &s_inv_rc;
            }
            let ds = -&r_p - cdy;
            (dy, ds, dlam)
        };
        let rc_aff = s.component_mul(&lam);
        let (_, ds_a, dl_a) = direction(&rc_aff);
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&lam + &dl_a * alpha_aff)) / m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let rc = &rc_aff + ds_a.component_mul(&dl_a) - DVector::from_element(m, sigma * mu);
        let (dy, ds, dl) = direction(&rc);
        let alpha = (IPM_STEP * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        y += &dy * alpha;
        s += &ds * alpha;
        lam += &dl * alpha;
        s.apply(|v| *v = v.max(1e-300));
        lam.apply(|v| *v = v.max(1e-300));
    }
    if status == SolveStatus::IterationLimit {
        // Ill-conditioned endgames stall short of the tolerance; accept the
        // best iterate at reduced accuracy.
        if let Some(b) = best.filter(|b| b.merit <= IPM_RELAXED) {
            status = SolveStatus::Optimal;
            (y, lam, prim, dual) = (b.y, b.lam, b.prim, b.dual);
        }
    }
    let objective = match status {
        SolveStatus::Infeasible => f64::INFINITY,
        _ => problem.objective(&y),
    };
    SolveReport {
        status,
        x: y,
        multipliers: lam.component_mul(&scale),
        objective,
        primal_residual: prim,
        dual_residual: dual,
        iterations: iter,
        polished: false,
    }
}

/// Largest `a` in `[0, inf)` with `v + a dv >= 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn farkas(ct: &DMatrix<f64>, b: &DVector<f64>, lam: &DVector<f64>, tol: f64) -> bool {
    let norm = lam.amax();
    if norm < 1e6 {
        return false;
    }
    let l = lam / norm;
    let support = b.dot(&l);
    support < -tol && (ct * &l).amax() <= tol * support.abs()
}
