//! Independent oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use dphi::dphi::{DPhiConfig, DStepMode};
use dphi::model::{dhop_support, ring_plant, Plant};
use dphi::norms::{NormKind, Regulation};
use dphi::phistep::{AdmmConfig, PerfWeights, PhiProblem};

/// Ring experiment plant: 10 nodes, spectral radius 3.
pub fn ring(seed: u64) -> Plant {
    ring_plant(10, 3.0, seed).unwrap()
}

/// Ring experiment loop settings: `T = 30`, 2 hops, `Qx = I`, `Qu = 50 I`,
/// `z = x + u`, step 0.05.
pub fn ring_config(plant: &Plant, stab: NormKind, mode: DStepMode, seed: u64) -> DPhiConfig {
    DPhiConfig {
        beta_step: 0.05,
        beta_max: 1e-3,
        stab,
        perf: NormKind::H2,
        weights: PerfWeights::scalar(plant, 1.0, 50.0),
        regulation: Regulation::scalar(plant, 1.0, 1.0),
        support: dhop_support(plant, 2),
        horizon: 30,
        mode,
        consensus: false,
        seed,
        admm: AdmmConfig::default(),
    }
}

pub fn ring_problem(plant: &Plant, stab: NormKind) -> PhiProblem {
    let cfg = ring_config(plant, stab, DStepMode::Minimize, 0);
    PhiProblem {
        plant: plant.clone(),
        support: cfg.support,
        horizon: cfg.horizon,
        weights: cfg.weights,
        perf: cfg.perf,
        regulation: cfg.regulation,
        stab,
    }
}

/// Nonnegative matrix on the 2-hop ring pattern with every pattern entry
/// positive, so it is irreducible.
pub fn ring_pattern_matrix(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let gap = (i as isize - j as isize).rem_euclid(n as isize) as usize;
        if gap.min(n - gap) <= 2 {
            rng.random_range(0.01..2.0)
        } else {
            0.0
        }
    })
}

/// Random nonnegative matrix with a Hamiltonian cycle, so it is irreducible,
/// and about half of the other entries zero.
pub fn irreducible_matrix(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut m = DMatrix::from_fn(n, n, |_, _| if rng.random_bool(0.5) { rng.random_range(0.0..1.0) } else { 0.0 });
    for k in 0..n {
        m[(order[k], order[(k + 1) % n])] = rng.random_range(0.1..1.0);
    }
    m
}

/// Karp's maximum cycle mean of `log M` over the arcs `i -> j` with `M_ij > 0`.
/// `None` if the pattern has no cycle.
pub fn karp_max_cycle_mean(m: &DMatrix<f64>) -> Option<f64> {
    let n = m.nrows();
    let neg = f64::NEG_INFINITY;
    // best[k][v]: heaviest walk with k arcs ending at v, from any start.
    let mut best = vec![vec![neg; n]; n + 1];
    best[0] = vec![0.0; n];
    for k in 1..=n {
        for j in 0..n {
            for i in 0..n {
                if m[(i, j)] > 0.0 && best[k - 1][i] > neg {
                    best[k][j] = best[k][j].max(best[k - 1][i] + m[(i, j)].ln());
                }
            }
        }
    }
    let mut answer: Option<f64> = None;
    for v in 0..n {
        if best[n][v] == neg {
            continue;
        }
        let worst = (0..n)
            .filter(|&k| best[k][v] > neg)
            .map(|k| (best[n][v] - best[k][v]) / (n - k) as f64)
            .fold(f64::INFINITY, f64::min);
        answer = Some(answer.map_or(worst, |a: f64| a.max(worst)));
    }
    answer
}

/// Collatz-Wielandt bracket `lo <= rho(M) <= hi` from power iteration on
/// `M + I`, which is primitive when `M` is irreducible.
pub fn perron_bracket(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    let shifted = m + DMatrix::identity(n, n);
    let mut x = DVector::from_element(n, 1.0);
    let mut bracket = (0.0, f64::INFINITY);
    for _ in 0..200_000 {
        let y = &shifted * &x;
        let ratios = y.component_div(&x);
        bracket = (ratios.min() - 1.0, ratios.max() - 1.0);
        x = &y / y.sum();
        if bracket.1 - bracket.0 <= 1e-12 * bracket.1.max(1.0) {
            break;
        }
    }
    bracket
}

/// Optimal value of `min 1/2 x'Px + q'x  s.t.  Aeq x = beq, Ain x <= bin` for
/// positive definite `P`, by enumerating every active set and keeping the
/// KKT points. `None` if infeasible.
pub fn active_set_optimum(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    aeq: &DMatrix<f64>,
    beq: &DVector<f64>,
    ain: &DMatrix<f64>,
    bin: &DVector<f64>,
) -> Option<f64> {
    let n = q.len();
    let me = aeq.nrows();
    let mi = ain.nrows();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << mi) {
        let active: Vec<usize> = (0..mi).filter(|&r| mask & (1 << r) != 0).collect();
        let k = me + active.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        rhs.rows_mut(0, n).copy_from(&(-q));
        for r in 0..k {
            let (row, b) = if r < me {
                (aeq.row(r).clone_owned(), beq[r])
            } else {
                (ain.row(active[r - me]).clone_owned(), bin[active[r - me]])
            };
            kkt.view_mut((n + r, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + r), (n, 1)).copy_from(&row.transpose());
            rhs[n + r] = b;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).clone_owned();
        let feasible = (ain * &x - bin).iter().all(|v| *v <= 1e-9) && (aeq * &x - beq).amax() <= 1e-9;
        let dual_ok = (me..k).all(|r| sol[n + r] >= -1e-9);
        if feasible && dual_ok {
            let value = 0.5 * x.dot(&(p * &x)) + q.dot(&x);
            best = Some(best.map_or(value, |b: f64| b.min(value)));
        }
    }
    best
}

/// Minimum-norm solution of `E x = f` under the weighted norm `x' W x`
/// (`W` diagonal, positive), via the pseudo-inverse.
pub fn weighted_min_norm(e: &DMatrix<f64>, f: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let winv = w.map(|v| 1.0 / v);
    let ew = DMatrix::from_fn(e.nrows(), e.ncols(), |i, j| e[(i, j)] * winv[j]);
    let gram = &ew * e.transpose();
    let mult = gram.svd(true, true).solve(f, 1e-12).unwrap();
    (e.transpose() * mult).component_mul(&winv)
}
