//! Discrete-time LQR, the communication-unconstrained reference point.
//!
//! Cost and margin of a synthesized controller are reported relative to the
//! LQR loop of the same plant and weights.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::dstep::dstep_minimize;
use crate::model::{spectral_radius, ClosedLoop, FirTransferMatrix, Plant, Support};
use crate::norms::{magnitude_matrix, scaled_norm, NormKind, Regulation};
use crate::{Error, Result};

const RICCATI_TOL: f64 = 1e-9;
const RICCATI_MAX_ITER: usize = 1_000_000;
const DIVERGENCE: f64 = 1e15;
/// Impulse responses for the margin are kept until their tail is this small.
const MARGIN_TAIL: f64 = 1e-12;
const MARGIN_MAX_HORIZON: usize = 10_000;

/// Stabilizing solution of the discrete algebraic Riccati equation.
///
/// The control law is `u = -K x`.
#[derive(Clone, Debug)]
pub struct LqrSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Spectral radius of `A - B K`.
    pub closed_loop_radius: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl LqrSolution {
    /// Infinite-horizon cost summed over unit impulses on every state, `tr P`.
    pub fn cost(&self) -> f64 {
        self.p.trace()
    }

    pub fn closed_loop_matrix(&self, plant: &Plant) -> DMatrix<f64> {
        plant.a() - plant.b() * &self.k
    }
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn riccati_map(a: &DMatrix<f64>, b: &DMatrix<f64>, qx: &DMatrix<f64>, qu: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bp = b.transpose() * p;
    let s = qu + &bp * b;
    let chol = Cholesky::new(s).ok_or_else(|| Error::Convergence("Qu + B'PB lost definiteness".into()))?;
    let bpa = &bp * a;
    let next = qx + a.transpose() * p * a - bpa.transpose() * chol.solve(&bpa);
    Ok((&next + next.transpose()) * 0.5)
}

/// `||P - Qx - A'PA + A'PB (Qu + B'PB)^{-1} B'PA||_inf` (max row sum).
pub fn riccati_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, qx: &DMatrix<f64>, qu: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
    Ok(inf_norm(&(p - riccati_map(a, b, qx, qu, p)?)))
}

/// Solves the DARE by fixed-point iteration of the Riccati map from `P = Qx`.
pub fn dare_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, qx: &DMatrix<f64>, qu: &DMatrix<f64>) -> Result<LqrSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::dim("A must be n x n and B n x m"));
    }
    if qx.shape() != (n, n) || qu.shape() != (m, m) {
        return Err(Error::dim("Qx must be n x n and Qu m x m"));
    }
    if (qx - qx.transpose()).amax() > 1e-12 * (1.0 + qx.amax()) || (qu - qu.transpose()).amax() > 1e-12 * (1.0 + qu.amax()) {
        return Err(Error::invalid("Qx and Qu must be symmetric"));
    }
    if n > 0 && SymmetricEigen::new(qx.clone()).eigenvalues.min() < -1e-12 * (1.0 + qx.amax()) {
        return Err(Error::invalid("Qx must be positive semidefinite"));
    }
    if m > 0 && Cholesky::new(qu.clone()).is_none() {
        return Err(Error::invalid("Qu must be positive definite"));
    }

    let mut p = qx.clone();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next = riccati_map(a, b, qx, qu, &p)?;
        let step = inf_norm(&(&next - &p));
        p = next;
        if !p.iter().all(|v| v.is_finite()) || p.amax() > DIVERGENCE {
            return Err(Error::Convergence("Riccati iteration diverged; (A, B) is not stabilizable".into()));
        }
        if step <= 1e-3 * RICCATI_TOL {
            break;
        }
        if iterations >= RICCATI_MAX_ITER {
            return Err(Error::Convergence(format!("Riccati iteration stalled at step {step:e}")));
        }
    }
    let residual = riccati_residual(a, b, qx, qu, &p)?;
    if residual > RICCATI_TOL {
        return Err(Error::Convergence(format!("Riccati residual {residual:e}")));
    }
    let bp = b.transpose() * &p;
    let s = Cholesky::new(qu + &bp * b).ok_or_else(|| Error::Convergence("Qu + B'PB lost definiteness".into()))?;
    let k = s.solve(&(&bp * a));
    let closed_loop_radius = spectral_radius(&(a - b * &k))?;
    if closed_loop_radius >= 1.0 {
        return Err(Error::Convergence(format!(
            "LQR loop has spectral radius {closed_loop_radius}; (A, B) is not stabilizable"
        )));
    }
    Ok(LqrSolution {
        p,
        k,
        closed_loop_radius,
        residual,
        iterations,
    })
}

/// Truncated impulse response of the static loop `u = -K x`:
/// `Phi_x(p) = (A - BK)^{p-1}`, `Phi_u(p) = -K Phi_x(p)`, `p = 1..=T`.
///
/// Returns the loop and the truncation tail `||(A - BK)^T||_inf`, which bounds
/// its achievability residual.
pub fn lqr_closed_loop(plant: &Plant, k: &DMatrix<f64>, horizon: usize) -> Result<(ClosedLoop, f64)> {
    if k.shape() != (plant.m(), plant.n()) {
        return Err(Error::dim("K must be m x n"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be positive"));
    }
    let acl = plant.a() - plant.b() * k;
    if spectral_radius(&acl)? >= 1.0 {
        return Err(Error::invalid("A - BK is not stable"));
    }
    let n = plant.n();
    let mut px = Vec::with_capacity(horizon);
    let mut pu = Vec::with_capacity(horizon);
    let mut power = DMatrix::identity(n, n);
    for _ in 0..horizon {
        pu.push(-k * &power);
        let next = &acl * &power;
        px.push(power);
        power = next;
    }
    let cl = ClosedLoop::new(FirTransferMatrix::new(px)?, FirTransferMatrix::new(pu)?, Support::full(plant))?;
    Ok((cl, inf_norm(&power)))
}

/// Shortest horizon whose truncation tail is below `1e-12`, at least `min`.
fn margin_horizon(acl: &DMatrix<f64>, min: usize) -> usize {
    let mut power = DMatrix::identity(acl.nrows(), acl.ncols());
    for t in 1..=MARGIN_MAX_HORIZON {
        power = acl * &power;
        if t >= min && inf_norm(&power) <= MARGIN_TAIL {
            return t;
        }
    }
    MARGIN_MAX_HORIZON
}

/// Level of the LQR loop after the minimizing D step.
///
/// The impulse response is taken at least `horizon` taps long, and longer
/// until its tail drops below `1e-12`.
pub fn lqr_beta(plant: &Plant, lqr: &LqrSolution, regulation: &Regulation, kind: NormKind, horizon: usize) -> Result<f64> {
    let t = margin_horizon(&lqr.closed_loop_matrix(plant), horizon.max(1));
    let (cl, _) = lqr_closed_loop(plant, &lqr.k, t)?;
    let m = magnitude_matrix(&cl, regulation)?;
    scaled_norm(&m, &dstep_minimize(&m, kind)?, kind)
}
