//! Achievability of closed-loop responses, controller realization and
//! closed-loop simulation, with and without diagonal uncertainty.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{max_abs, ClosedLoop, FirTransferMatrix, Plant};
use crate::norms::{NormKind, Regulation};
use crate::{Error, Result};

/// Max-abs violation of the FIR state-feedback achievability constraint:
/// `Phi_x(1) = I`, `Phi_x(p+1) = A Phi_x(p) + B Phi_u(p)` and
/// `A Phi_x(T) + B Phi_u(T) = 0`.
pub fn achievability_residual(plant: &Plant, cl: &ClosedLoop) -> Result<f64> {
    taps_residual(plant, cl.phi_x(), cl.phi_u())
}

pub fn taps_residual(plant: &Plant, phi_x: &FirTransferMatrix, phi_u: &FirTransferMatrix) -> Result<f64> {
    let (n, m) = (plant.n(), plant.m());
    if phi_x.rows() != n || phi_x.cols() != phi_u.cols() || phi_u.rows() != m {
        return Err(Error::dim("closed loop does not match the plant"));
    }
    if phi_x.horizon() != phi_u.horizon() {
        return Err(Error::dim("Phi_x and Phi_u must share a horizon"));
    }
    let t = phi_x.horizon();
    let cols = phi_x.cols();
    let mut worst = max_abs(&(phi_x.tap(1) - DMatrix::identity(n, cols)));
    for p in 1..=t {
        let next = plant.a() * phi_x.tap(p) + plant.b() * phi_u.tap(p);
        let r = if p < t { phi_x.tap(p + 1) - next } else { next };
        worst = worst.max(max_abs(&r));
    }
    Ok(worst)
}

/// Internal state of the controller `delta = x + (I - z Phi_x) delta`, `u = z Phi_u delta`.
#[derive(Clone, Debug)]
pub struct ControllerState<'a> {
    phi_x: &'a FirTransferMatrix,
    phi_u: &'a FirTransferMatrix,
    /// `history[k]` is `delta_{t-1-k}`; always exactly `T` entries.
    history: VecDeque<DVector<f64>>,
}

impl<'a> ControllerState<'a> {
    pub fn new(cl: &'a ClosedLoop) -> Self {
        let t = cl.horizon();
        ControllerState {
            phi_x: cl.phi_x(),
            phi_u: cl.phi_u(),
            history: (0..t).map(|_| DVector::zeros(cl.n())).collect(),
        }
    }

    pub fn step(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.phi_x.rows();
        if x.len() != n {
            return Err(Error::dim(format!("state has length {}, controller expects {n}", x.len())));
        }
        let t = self.phi_x.horizon();
        let mut delta = x.clone();
        for p in 2..=t {
            delta.gemv(-1.0, self.phi_x.tap(p), &self.history[p - 2], 1.0);
        }
        self.history.pop_back();
        self.history.push_front(delta);
        let mut u = DVector::zeros(self.phi_u.rows());
        for p in 1..=t {
            u.gemv(1.0, self.phi_u.tap(p), &self.history[p - 1], 1.0);
        }
        Ok(u)
    }
}

/// One controller step, for callers that hold the state explicitly.
pub fn controller_step(state: &mut ControllerState<'_>, x: &DVector<f64>) -> Result<DVector<f64>> {
    state.step(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `x[t]` for `t = 0..horizon`.
    pub x: Vec<DVector<f64>>,
    /// `u[t]` for `t = 0..horizon`.
    pub u: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// CSV with header `t,x_1..x_n,u_1..u_m`.
    pub fn to_csv(&self) -> String {
        let n = self.x.first().map_or(0, |v| v.len());
        let m = self.u.first().map_or(0, |v| v.len());
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",x_{i}").unwrap();
        }
        for i in 1..=m {
            write!(out, ",u_{i}").unwrap();
        }
        out.push('\n');
        for (t, (x, u)) in self.x.iter().zip(&self.u).enumerate() {
            write!(out, "{t}").unwrap();
            for v in x.iter().chain(u.iter()) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Simulates `x(t+1) = A x(t) + B u(t) + w(t)` from `x(0) = 0`; missing
/// disturbance entries are zero.
pub fn closed_loop_rollout(
    plant: &Plant,
    cl: &ClosedLoop,
    w: &[DVector<f64>],
    horizon: usize,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::invalid("rollout horizon must be at least 1"));
    }
    check_loop(plant, cl)?;
    let n = plant.n();
    let mut ctrl = ControllerState::new(cl);
    let mut x = DVector::zeros(n);
    let mut traj = Trajectory {
        x: Vec::with_capacity(horizon),
        u: Vec::with_capacity(horizon),
    };
    for t in 0..horizon {
        let u = ctrl.step(&x)?;
        let mut next = plant.a() * &x + plant.b() * &u;
        if let Some(wt) = w.get(t) {
            if wt.len() != n {
                return Err(Error::dim("disturbance length does not match the plant"));
            }
            next += wt;
        }
        traj.x.push(std::mem::replace(&mut x, next));
        traj.u.push(u);
    }
    Ok(traj)
}

fn check_loop(plant: &Plant, cl: &ClosedLoop) -> Result<()> {
    if cl.n() != plant.n() || cl.m() != plant.m() {
        return Err(Error::dim("closed loop does not match the plant"));
    }
    Ok(())
}

/// Time-varying diagonal gains `Delta(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Uncertainty {
    /// `gains[t][i] = Delta_ii(t)`.
    pub gains: Vec<DVector<f64>>,
    pub bound: f64,
    /// Stability kind whose uncertainty class the bound refers to: `NuMaxElt`
    /// bounds `sum_i sup_t |Delta_ii(t)|`, the others `max_i sup_t |Delta_ii(t)|`.
    pub kind: NormKind,
}

impl Uncertainty {
    pub fn zero(n: usize, horizon: usize, kind: NormKind) -> Self {
        Uncertainty {
            gains: vec![DVector::zeros(n); horizon],
            bound: 0.0,
            kind,
        }
    }

    /// The norm the bound applies to, evaluated on the gains.
    pub fn size(&self) -> f64 {
        let n = self.gains.first().map_or(0, |g| g.len());
        let peaks: Vec<f64> = (0..n)
            .map(|i| self.gains.iter().fold(0.0f64, |acc, g| acc.max(g[i].abs())))
            .collect();
        match self.kind {
            NormKind::NuMaxElt => peaks.iter().sum(),
            _ => peaks.iter().cloned().fold(0.0, f64::max),
        }
    }

    pub fn gain(&self, t: usize) -> Option<&DVector<f64>> {
        self.gains.get(t)
    }
}

/// Random piecewise-constant diagonal gains whose signs flip at random times,
/// normalized so that the declared norm equals `bound`.
pub fn sample_uncertainty(n: usize, kind: NormKind, bound: f64, seed: u64, horizon: usize) -> Result<Uncertainty> {
    if !(bound >= 0.0) || !bound.is_finite() {
        return Err(Error::invalid(format!("uncertainty bound must be finite and nonnegative, got {bound}")));
    }
    if !kind.is_stability_kind() {
        return Err(Error::invalid("uncertainty kind must be l1, linf or nu"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total = match kind {
        NormKind::NuMaxElt => raw.iter().sum::<f64>(),
        _ => raw.iter().cloned().fold(0.0, f64::max),
    };
    let magnitudes: Vec<f64> = raw.iter().map(|a| if total > 0.0 { a * bound / total } else { 0.0 }).collect();
    let mut signs: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let mut gains = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        for s in signs.iter_mut() {
            if rng.random_bool(0.1) {
                *s = -*s;
            }
        }
        gains.push(DVector::from_iterator(n, magnitudes.iter().zip(&signs).map(|(a, s)| a * s)));
    }
    Ok(Uncertainty { gains, bound, kind })
}

/// Relative blow-up beyond which a rollout is declared divergent.
pub const DIVERGENCE_RATIO: f64 = 1e6;

/// Simulates the loop closed through `w(t) = Delta(t) z(t)`, `z = Hx x + Hu u`,
/// excited by a seeded unit impulse at `t = 0`.
///
/// `bounded` compares the peak state over the whole run to the peak over the
/// first `T` steps; it is a divergence heuristic, not a stability proof.
pub fn uncertain_rollout(
    plant: &Plant,
    cl: &ClosedLoop,
    h: &Regulation,
    unc: &Uncertainty,
    horizon: usize,
    seed: u64,
) -> Result<(Trajectory, bool)> {
    if horizon == 0 {
        return Err(Error::invalid("rollout horizon must be at least 1"));
    }
    check_loop(plant, cl)?;
    let n = plant.n();
    if h.outputs() != n || h.hx.ncols() != n || h.hu.ncols() != plant.m() {
        return Err(Error::dim("regulated output must have one entry per state"));
    }
    let impulse = initial_impulse(n, seed);
    let mut ctrl = ControllerState::new(cl);
    let mut x = DVector::zeros(n);
    let mut traj = Trajectory {
        x: Vec::with_capacity(horizon),
        u: Vec::with_capacity(horizon),
    };
    for t in 0..horizon {
        let u = ctrl.step(&x)?;
        let mut next = plant.a() * &x + plant.b() * &u;
        if let Some(g) = unc.gain(t) {
            let z = &h.hx * &x + &h.hu * &u;
            next += g.component_mul(&z);
        }
        if t == 0 {
            next += &impulse;
        }
        traj.x.push(std::mem::replace(&mut x, next));
        traj.u.push(u);
    }
    let window = (cl.horizon() + 1).min(horizon);
    let peak = |xs: &[DVector<f64>]| xs.iter().fold(0.0, |acc: f64, v| acc.max(v.amax()));
    let early = peak(&traj.x[..window]);
    let overall = peak(&traj.x);
    let finite = traj.x.iter().all(|v| v.iter().all(|e| e.is_finite()));
    let bounded = finite && overall <= DIVERGENCE_RATIO * early;
    Ok((traj, bounded))
}

fn initial_impulse(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let peak = v.amax();
    if peak > 0.0 {
        v /= peak;
    } else if n > 0 {
        v[0] = 1.0;
    }
    v
}
