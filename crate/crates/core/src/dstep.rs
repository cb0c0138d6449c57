//! D steps: choose the diagonal scaling for a fixed magnitude matrix `M`.
//!
//! The minimizing variants return the smallest achievable `||D M D^{-1}||`;
//! the randomizing variant returns any scaling that certifies a given level.
//! Every returned scaling carries in `beta` the exactly evaluated norm it
//! achieves (or, for randomizing, the level it was asked to certify).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{is_irreducible, perron, Support};
use crate::norms::{scaled_norm, DiagonalScaling, NormKind};
use crate::phistep::AdmmConfig;
use crate::subsolver::{self, ConvexSubproblem, Engine, Settings, SolveStatus};
use crate::{Error, Result};

/// Box on log-scalings for the nu programs.
pub const LOG_BOX: f64 = 20.0;
/// Smallest level reported for acyclic nu patterns.
pub const BETA_FLOOR: f64 = 1e-12;
const PERRON_TOL: f64 = 1e-12;
const PERRON_MAX_ITER: usize = 1_000_000;
const PERTURBATION: f64 = 1e-9;
/// Lower bound `exp(-20)` on the normalized `D` entries (or their inverses)
/// in the L1/Linf feasibility programs.
const VECTOR_BOX: f64 = 20.0;
/// Residual ratio that triggers a consensus penalty change.
const BALANCE: f64 = 10.0;
const BALANCE_EVERY: usize = 50;
/// The consensus penalty stays within this factor of the configured one.
const GAMMA_RANGE: f64 = 1e4;

fn lp_settings() -> Settings {
    Settings {
        engine: Engine::InteriorPoint,
        tol_abs: 1e-10,
        tol_rel: 1e-10,
        ..Settings::default()
    }
}

fn check_magnitude(m: &DMatrix<f64>) -> Result<usize> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::dim("magnitude matrix must be square"));
    }
    if m.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("magnitude matrix must be finite and nonnegative"));
    }
    Ok(n)
}

/// Off-diagonal nonzero arcs `(i, j, log M_ij)`.
fn log_arcs(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let n = m.nrows();
    let mut arcs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] > 0.0 {
                arcs.push((i, j, m[(i, j)].ln()));
            }
        }
    }
    arcs
}

fn has_cycle(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    if (0..n).any(|i| m[(i, i)] > 0.0) {
        return true;
    }
    // Kahn's algorithm on the off-diagonal pattern.
    let mut indeg = vec![0usize; n];
    for (_, j, _) in log_arcs(m) {
        indeg[j] += 1;
    }
    let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(u) = stack.pop() {
        seen += 1;
        for v in 0..n {
            if v != u && m[(u, v)] > 0.0 {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    stack.push(v);
                }
            }
        }
    }
    seen < n
}

/// Result of the minimizing nu step.
#[derive(Clone, Debug)]
pub struct NuScaling {
    pub scaling: DiagonalScaling,
    /// `log beta`.
    pub eta: f64,
    /// Set when the nonzero pattern has no cycle, so the infimum is not attained
    /// and the scaling is clamped to the box.
    pub clamped: bool,
}

/// `min eta  s.t.  log M_ij + l_i - l_j <= eta` over nonzero entries,
/// with `sum(l) = 0` and `|l_i| <= 20`.
///
/// The optimal `eta` is the maximum cycle mean of `log M`.
pub fn dstep_min_nu_lp(m: &DMatrix<f64>) -> Result<NuScaling> {
    let n = check_magnitude(m)?;
    if n == 0 {
        return Ok(NuScaling {
            scaling: DiagonalScaling::identity(0).with_beta(0.0),
            eta: f64::NEG_INFINITY,
            clamped: false,
        });
    }
    let clamped = !has_cycle(m);
    if m.iter().all(|v| *v == 0.0) {
        return Ok(NuScaling {
            scaling: DiagonalScaling::identity(n).with_beta(BETA_FLOOR),
            eta: BETA_FLOOR.ln(),
            clamped: true,
        });
    }
    let arcs = log_arcs(m);
    let diag: Vec<(usize, f64)> = (0..n).filter(|&i| m[(i, i)] > 0.0).map(|i| (i, m[(i, i)].ln())).collect();
    let nv = n + 1;
    let rows = arcs.len() + diag.len() + 2 * n;
    let mut ain = DMatrix::zeros(rows, nv);
    let mut bin = DVector::zeros(rows);
    let mut r = 0;
    for &(i, j, w) in &arcs {
        ain[(r, i)] = 1.0;
        ain[(r, j)] = -1.0;
        ain[(r, n)] = -1.0;
        bin[r] = -w;
        r += 1;
    }
    for &(_, w) in &diag {
        ain[(r, n)] = -1.0;
        bin[r] = -w;
        r += 1;
    }
    for i in 0..n {
        ain[(r, i)] = 1.0;
        bin[r] = LOG_BOX;
        ain[(r + 1, i)] = -1.0;
        bin[r + 1] = LOG_BOX;
        r += 2;
    }
    let mut aeq = DMatrix::zeros(1, nv);
    aeq.view_mut((0, 0), (1, n)).fill(1.0);
    let mut q = DVector::zeros(nv);
    q[n] = 1.0;
    let problem = ConvexSubproblem::new(nv)
        .with_objective(DMatrix::zeros(nv, nv), q)
        .with_equalities(aeq, DVector::zeros(1))
        .with_inequalities(ain, bin);
    let rep = subsolver::solve(&problem, &lp_settings())?;
    if rep.status != SolveStatus::Optimal {
        return Err(Error::Convergence(format!("nu D-step LP ended with {:?}", rep.status)));
    }
    let scaling = DiagonalScaling::from_log(rep.x.rows(0, n).into_owned(), 0.0);
    let beta = scaled_norm(m, &scaling, NormKind::NuMaxElt)?.max(BETA_FLOOR);
    Ok(NuScaling {
        scaling: scaling.with_beta(beta),
        eta: beta.ln(),
        clamped,
    })
}

/// Perron scaling for the L1 (max row sum) norm: `l = -log v` with `M v = rho v`.
///
/// A reducible `M` is perturbed by `1e-9 max(M)` on every entry before the
/// power iteration; the returned level is always the exact norm of the
/// unperturbed scaled matrix.
pub fn dstep_min_l1(m: &DMatrix<f64>) -> Result<DiagonalScaling> {
    let n = check_magnitude(m)?;
    if let Some(s) = trivial_scaling(m, n, NormKind::L1RowMax)? {
        return Ok(s);
    }
    let work = if is_irreducible(m) {
        m.clone()
    } else {
        m.add_scalar(PERTURBATION * m.max())
    };
    let p = perron(&work, PERRON_TOL, PERRON_MAX_ITER)?;
    let scaling = DiagonalScaling::from_log(p.vector.map(|v| -v.ln()), 0.0);
    let beta = scaled_norm(m, &scaling, NormKind::L1RowMax)?;
    if beta > (1.0 + 1e-6) * p.radius {
        return Err(Error::Convergence(format!(
            "Perron scaling achieves {beta}, above the perturbed radius {}",
            p.radius
        )));
    }
    Ok(scaling.with_beta(beta))
}

/// Perron scaling for the Linf (max column sum) norm, by duality with L1 on `M'`.
pub fn dstep_min_linf(m: &DMatrix<f64>) -> Result<DiagonalScaling> {
    let dual = dstep_min_l1(&m.transpose())?;
    let scaling = dual.inverse();
    let beta = scaled_norm(m, &scaling, NormKind::LinfColMax)?;
    Ok(scaling.with_beta(beta))
}

/// Zero and diagonal matrices are unaffected by scaling: `l = 0`.
fn trivial_scaling(m: &DMatrix<f64>, n: usize, kind: NormKind) -> Result<Option<DiagonalScaling>> {
    let off_diagonal = (0..n).any(|i| (0..n).any(|j| i != j && m[(i, j)] != 0.0));
    if n == 0 || !off_diagonal {
        let id = DiagonalScaling::from_log(DVector::zeros(n), 0.0);
        let beta = scaled_norm(m, &id, kind)?;
        return Ok(Some(id.with_beta(beta)));
    }
    Ok(None)
}

/// Centralized minimizing D step for a stability kind.
pub fn dstep_minimize(m: &DMatrix<f64>, kind: NormKind) -> Result<DiagonalScaling> {
    match kind {
        NormKind::NuMaxElt => Ok(dstep_min_nu_lp(m)?.scaling),
        NormKind::L1RowMax => dstep_min_l1(m),
        NormKind::LinfColMax => dstep_min_linf(m),
        NormKind::H2 => Err(Error::invalid("h2 is not a stability kind")),
    }
}

/// Randomizing D step: some scaling with `||D M D^{-1}|| <= beta`, or `None`.
///
/// Solves the feasibility program with a seeded random linear objective:
/// `log M_ij + l_i - l_j <= log beta` for nu, `M x <= beta x` with `x = D^{-1}`
/// for L1 and `M' x <= beta x` with `x = D` for Linf, with `x` normalized to
/// unit sum. Candidates are verified
/// against the exact norm; a candidate that misses by rounding is retried at
/// slightly tighter levels.
pub fn dstep_randomize(m: &DMatrix<f64>, beta: f64, kind: NormKind, seed: u64) -> Result<Option<DiagonalScaling>> {
    let n = check_magnitude(m)?;
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    if !kind.is_stability_kind() {
        return Err(Error::invalid("h2 is not a stability kind"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objective = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    if beta.is_infinite() {
        let l = objective.map(|c| -c);
        let s = DiagonalScaling::from_log(l, 0.0);
        return Ok(Some(s.with_beta(beta)));
    }
    if (0..n).any(|i| m[(i, i)] > beta) {
        return Ok(None);
    }
    for tighten in [0.0, 1e-7, 1e-5, 1e-3] {
        let level = beta * (1.0 - tighten);
        let candidate = match kind {
            NormKind::NuMaxElt => randomize_nu(m, level, &objective)?,
            NormKind::L1RowMax => randomize_vector(&m.clone(), level, &objective)?.map(|x| x.map(|v| -v.ln())),
            NormKind::LinfColMax => randomize_vector(&m.transpose(), level, &objective)?.map(|x| x.map(f64::ln)),
            NormKind::H2 => unreachable!(),
        };
        let Some(l) = candidate else {
            return Ok(None);
        };
        let s = DiagonalScaling::from_log(l, beta);
        if scaled_norm(m, &s, kind)? <= beta * (1.0 + 1e-9) {
            return Ok(Some(s));
        }
    }
    Ok(None)
}

fn randomize_nu(m: &DMatrix<f64>, beta: f64, objective: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    let n = m.nrows();
    let arcs = log_arcs(m);
    let rows = arcs.len() + 2 * n;
    let mut ain = DMatrix::zeros(rows, n);
    let mut bin = DVector::zeros(rows);
    let lb = beta.ln();
    for (r, &(i, j, w)) in arcs.iter().enumerate() {
        ain[(r, i)] = 1.0;
        ain[(r, j)] = -1.0;
        bin[r] = lb - w;
    }
    for i in 0..n {
        let r = arcs.len() + 2 * i;
        ain[(r, i)] = 1.0;
        bin[r] = LOG_BOX;
        ain[(r + 1, i)] = -1.0;
        bin[r + 1] = LOG_BOX;
    }
    let problem = ConvexSubproblem::new(n)
        .with_objective(DMatrix::zeros(n, n), objective.clone())
        .with_equalities(DMatrix::from_element(1, n, 1.0), DVector::zeros(1))
        .with_inequalities(ain, bin);
    let rep = subsolver::solve(&problem, &lp_settings())?;
    Ok(candidate(&rep))
}

/// A feasibility program only needs a point; an unconverged iterate is
/// still worth verifying against the exact norm.
fn candidate(rep: &subsolver::SolveReport) -> Option<DVector<f64>> {
    let usable = matches!(rep.status, SolveStatus::Optimal | SolveStatus::IterationLimit);
    (usable && rep.x.iter().all(|v| v.is_finite())).then(|| rep.x.clone())
}

/// `K x <= beta x` with `sum(x) = 1` and `x >= exp(-20)`.
fn randomize_vector(k: &DMatrix<f64>, beta: f64, objective: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    let n = k.nrows();
    let lo = (-VECTOR_BOX).exp();
    let mut ain = DMatrix::zeros(2 * n, n);
    let mut bin = DVector::zeros(2 * n);
    for i in 0..n {
        for j in 0..n {
            ain[(i, j)] = k[(i, j)];
        }
        ain[(i, i)] -= beta;
        ain[(n + i, i)] = -1.0;
        bin[n + i] = -lo;
    }
    let problem = ConvexSubproblem::new(n)
        .with_objective(DMatrix::zeros(n, n), objective.clone())
        .with_equalities(DMatrix::from_element(1, n, 1.0), DVector::from_element(1, 1.0))
        .with_inequalities(ain, bin);
    let rep = subsolver::solve(&problem, &lp_settings())?;
    Ok(candidate(&rep).map(|x| x.map(|v| v.max(lo))))
}

/// Lowest level certified by [`dstep_randomize`], by bisection between
/// `max diag(M)` and `||M||`, to within `beta_step`.
pub fn dstep_iterative_min(m: &DMatrix<f64>, kind: NormKind, beta_step: f64, seed: u64) -> Result<DiagonalScaling> {
    let n = check_magnitude(m)?;
    if !(beta_step > 0.0) {
        return Err(Error::invalid("beta_step must be positive"));
    }
    if !kind.is_stability_kind() {
        return Err(Error::invalid("h2 is not a stability kind"));
    }
    let id = DiagonalScaling::from_log(DVector::zeros(n), 0.0);
    let top = scaled_norm(m, &id, kind)?;
    let mut best = id.with_beta(top);
    let mut lo = (0..n).map(|i| m[(i, i)]).fold(0.0, f64::max);
    let mut hi = top;
    let mut k = 0u64;
    while hi - lo > beta_step {
        let mid = 0.5 * (lo + hi);
        k += 1;
        match dstep_randomize(m, mid, kind, seed.wrapping_add(k))? {
            Some(s) => {
                let achieved = scaled_norm(m, &s, kind)?;
                hi = achieved.min(mid);
                best = s.with_beta(hi);
            }
            None => lo = mid,
        }
    }
    Ok(best)
}

/// Per-node consensus state: `x = (eta, L_{j@i})`, dual `y`, and averages.
#[derive(Clone, Debug)]
pub struct ConsensusNodeState {
    pub node: usize,
    /// `N_d(i)`, sorted; `l_copies[k]` is this node's copy of `l_{neighbors[k]}`.
    pub neighbors: Vec<usize>,
    /// The node's `eta`, which also serves as its copy of `eta_j` for every neighbor `j`.
    pub eta: f64,
    pub l_copies: DVector<f64>,
    /// One multiplier per neighbor copy of `eta`.
    pub y_eta: DVector<f64>,
    pub y_l: DVector<f64>,
    /// `eta_bar[k]` is the average of `eta` over the neighborhood of `neighbors[k]`.
    pub eta_bar: DVector<f64>,
    pub l_bar: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct ConsensusOutcome {
    pub scaling: DiagonalScaling,
    /// `log beta` of the returned scaling.
    pub eta: f64,
    pub iterations: usize,
    pub eta_spread: f64,
    pub l_spread: f64,
}

/// Distributed nu D step by consensus ADMM over `d`-hop neighborhoods.
///
/// Each node minimizes `eta_i + y_i'(x_i - xbar_i) + gamma ||x_i - xbar_i||^2`
/// subject to `log M_ij + l_{i@i} - l_{j@i} <= eta_i` for its nonzero entries,
/// then neighborhoods average `eta` and the copies of each `l_j`, then
/// `y_i += gamma/2 (x_i - xbar_i)`. Node `i`'s `eta_i` stands for its copy of
/// every `eta_j` in its neighborhood, and the copy of `eta_j` is pulled toward
/// the average of `eta` over the neighborhood of `j`, with its own multiplier.
/// `gamma` starts at the configured value and is doubled or halved every 50
/// iterations when the disagreement and the change of the averages are out of
/// balance by more than a factor 10. Stops when the spread of `eta` and of every
/// `l_j` across its copies, and the change of the averages, are below the
/// tolerances. Initial copies of `l` are drawn from `seed`.
pub fn dstep_min_nu_consensus(
    m: &DMatrix<f64>,
    support: &Support,
    cfg: &AdmmConfig,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<ConsensusOutcome> {
    let n = check_magnitude(m)?;
    cfg.validate()?;
    if support.neighborhoods().len() != n {
        return Err(Error::dim("support does not match the magnitude matrix"));
    }
    for i in 0..n {
        for j in 0..n {
            if m[(i, j)] != 0.0 && support.neighborhood(i).binary_search(&j).is_err() {
                return Err(Error::invalid(format!("M[{i},{j}] is nonzero outside the neighborhood of {i}")));
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("empty magnitude matrix"));
    }
    if m.iter().all(|v| *v == 0.0) {
        let s = DiagonalScaling::identity(n).with_beta(BETA_FLOOR);
        return Ok(ConsensusOutcome {
            scaling: s,
            eta: BETA_FLOOR.ln(),
            iterations: 0,
            eta_spread: 0.0,
            l_spread: 0.0,
        });
    }
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "iter,max_eta_spread,max_l_spread")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_l: Vec<f64> = (0..n).map(|_| rng.random_range(-0.01..0.01)).collect();
    // Local estimate of eta from the node's own entries.
    let local_eta = |i: usize| {
        support
            .neighborhood(i)
            .iter()
            .filter(|&&j| m[(i, j)] > 0.0)
            .map(|&j| m[(i, j)].ln())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let start_eta = (0..n).map(local_eta).filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let mut nodes: Vec<ConsensusNodeState> = (0..n)
        .map(|i| {
            let neighbors = support.neighborhood(i).to_vec();
            let l = DVector::from_iterator(neighbors.len(), neighbors.iter().map(|&j| init_l[j]));
            ConsensusNodeState {
                node: i,
                eta: start_eta,
                y_eta: DVector::zeros(neighbors.len()),
                y_l: DVector::zeros(neighbors.len()),
                eta_bar: DVector::from_element(neighbors.len(), start_eta),
                l_bar: l.clone(),
                l_copies: l,
                neighbors,
            }
        })
        .collect();
    // Which nodes hold a copy of l_j, and at which position.
    let mut holders: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for node in &nodes {
        for (k, &j) in node.neighbors.iter().enumerate() {
            holders[j].push((node.node, k));
        }
    }

    let mut gamma = cfg.gamma;
    let mut spreads = (f64::INFINITY, f64::INFINITY);
    for iter in 1..=cfg.max_iter {
        // Local proximal programs.
        let updates = nodes
            .par_iter()
            .map(|s| local_update(m, s, gamma))
            .collect::<Result<Vec<_>>>()?;
        for (s, (eta, l)) in nodes.iter_mut().zip(updates) {
            s.eta = eta;
            s.l_copies = l;
        }
        // Neighborhood averages.
        let l_avg: Vec<f64> = holders
            .iter()
            .map(|h| h.iter().map(|&(i, k)| nodes[i].l_copies[k]).sum::<f64>() / h.len() as f64)
            .collect();
        let eta_avg: Vec<f64> = (0..n)
            .map(|i| nodes[i].neighbors.iter().map(|&j| nodes[j].eta).sum::<f64>() / nodes[i].neighbors.len() as f64)
            .collect();
        let mut change = 0.0f64;
        let mut residual = 0.0f64;
        for s in nodes.iter_mut() {
            let new_l_bar = DVector::from_iterator(s.neighbors.len(), s.neighbors.iter().map(|&j| l_avg[j]));
            let new_eta_bar = DVector::from_iterator(s.neighbors.len(), s.neighbors.iter().map(|&j| eta_avg[j]));
            change = change.max((&new_l_bar - &s.l_bar).amax()).max((&new_eta_bar - &s.eta_bar).amax());
            s.l_bar = new_l_bar;
            s.eta_bar = new_eta_bar;
            residual = residual.max((&s.l_copies - &s.l_bar).amax()).max((s.eta_bar.add_scalar(-s.eta)).amax());
            s.y_eta += (&s.eta_bar - DVector::from_element(s.neighbors.len(), s.eta)) * (-0.5 * gamma);
            s.y_l += (&s.l_copies - &s.l_bar) * (0.5 * gamma);
        }
        // Residual balancing; multipliers are unscaled so they carry over.
        if iter % BALANCE_EVERY == 0 {
            if residual > BALANCE * gamma * change {
                gamma = (gamma * 2.0).min(cfg.gamma * GAMMA_RANGE);
            } else if gamma * change > BALANCE * residual {
                gamma = (gamma / 2.0).max(cfg.gamma / GAMMA_RANGE);
            }
        }
        spreads = consensus_spreads(&nodes, &holders);
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{iter},{:e},{:e}", spreads.0, spreads.1)?;
        }
        if spreads.0 <= cfg.tol_consensus && spreads.1 <= cfg.tol_consensus && change <= cfg.tol_progress {
            let scaling = DiagonalScaling::from_log(DVector::from_vec(l_avg), 0.0);
            let beta = scaled_norm(m, &scaling, NormKind::NuMaxElt)?.max(BETA_FLOOR);
            return Ok(ConsensusOutcome {
                scaling: scaling.with_beta(beta),
                eta: beta.ln(),
                iterations: iter,
                eta_spread: spreads.0,
                l_spread: spreads.1,
            });
        }
    }
    Err(Error::Convergence(format!(
        "consensus D step did not agree in {} iterations (eta spread {:e}, l spread {:e})",
        cfg.max_iter, spreads.0, spreads.1
    )))
}

fn consensus_spreads(nodes: &[ConsensusNodeState], holders: &[Vec<(usize, usize)>]) -> (f64, f64) {
    let (lo, hi) = nodes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.eta), b.max(s.eta)));
    let l_spread = holders
        .iter()
        .map(|h| {
            let vals = h.iter().map(|&(i, k)| nodes[i].l_copies[k]);
            let (a, b) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            b - a
        })
        .fold(0.0, f64::max);
    (hi - lo, l_spread)
}

/// One node's program (20a) in variables `(eta, L)`.
fn local_update(m: &DMatrix<f64>, s: &ConsensusNodeState, gamma: f64) -> Result<(f64, DVector<f64>)> {
    let k = s.neighbors.len();
    let nv = k + 1;
    let me = s.neighbors.binary_search(&s.node).expect("node is in its own neighborhood");
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for (a, &j) in s.neighbors.iter().enumerate() {
        if m[(s.node, j)] <= 0.0 {
            continue;
        }
        let mut row = DVector::zeros(nv);
        row[0] = -1.0;
        if a != me {
            row[1 + me] = 1.0;
            row[1 + a] = -1.0;
        }
        rows.push((row, -m[(s.node, j)].ln()));
    }
    // Objective: eta + sum_k [y_k (eta - eta_bar_k) + gamma (eta - eta_bar_k)^2]
    //            + y_l'(L - l_bar) + gamma ||L - l_bar||^2.
    let mut p = DMatrix::identity(nv, nv) * (2.0 * gamma);
    p[(0, 0)] = 2.0 * gamma * k as f64;
    let mut q = DVector::zeros(nv);
    q[0] = 1.0 + s.y_eta.sum() - 2.0 * gamma * s.eta_bar.sum();
    q.rows_mut(1, k).copy_from(&(&s.y_l - &s.l_bar * (2.0 * gamma)));
    if rows.is_empty() {
        let x = -q.component_div(&p.diagonal());
        return Ok((x[0], x.rows(1, k).into_owned()));
    }
    let mut ain = DMatrix::zeros(rows.len(), nv);
    let mut bin = DVector::zeros(rows.len());
    for (r, (row, b)) in rows.iter().enumerate() {
        ain.set_row(r, &row.transpose());
        bin[r] = *b;
    }
    let problem = ConvexSubproblem::new(nv).with_objective(p, q).with_inequalities(ain, bin);
    let rep = subsolver::solve(&problem, &lp_settings())?;
    if rep.status != SolveStatus::Optimal {
        return Err(Error::Convergence(format!(
            "consensus node {} program ended with {:?}",
            s.node, rep.status
        )));
    }
    Ok((rep.x[0], rep.x.rows(1, k).into_owned()))
}
