//! Plants, interconnection graphs, local supports and FIR transfer matrices.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Undirected interconnection graph over `n` nodes.
///
/// Adjacency lists are sorted and never contain self loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph {
            adjacency: vec![Vec::new(); n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i != j {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Graph { adjacency })
    }

    /// Graph of the off-diagonal sparsity pattern of a square matrix,
    /// symmetrized.
    pub fn from_pattern(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..a.ncols().min(n) {
                if i != j && a[(i, j)] != 0.0 {
                    edges.push((i, j));
                }
            }
        }
        Graph::from_edges(n, &edges).expect("pattern indices are in range")
    }

    pub fn complete(n: usize) -> Self {
        let adjacency = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        Graph { adjacency }
    }

    pub fn ring(n: usize) -> Self {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::from_edges(n, &edges).expect("ring indices are in range")
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Edge list with `i < j`, lexicographically ordered.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, list) in self.adjacency.iter().enumerate() {
            for &j in list {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Nodes reachable from `i` in at most `d` hops, sorted.
    pub fn hop_neighborhood(&self, i: usize, d: usize) -> Vec<usize> {
        let n = self.node_count();
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        dist[i] = 0;
        queue.push_back(i);
        while let Some(u) = queue.pop_front() {
            if dist[u] == d {
                continue;
            }
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (0..n).filter(|&v| dist[v] != usize::MAX).collect()
    }
}

/// Discrete-time plant `x(t+1) = A x(t) + B u(t) + w(t)`.
#[derive(Clone, Debug)]
pub struct Plant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    graph: Graph,
    actuator_nodes: Vec<usize>,
    seed: Option<u64>,
}

impl Plant {
    /// Builds a plant whose graph is inferred from the off-diagonal pattern of `A`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let graph = Graph::from_pattern(&a);
        Plant::with_graph(a, b, graph)
    }

    pub fn with_graph(a: DMatrix<f64>, b: DMatrix<f64>, graph: Graph) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::invalid("plant needs at least one state"));
        }
        if a.ncols() != n {
            return Err(Error::dim(format!("A is {}x{}, expected square", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::dim(format!("B has {} rows, A has {}", b.nrows(), n)));
        }
        if graph.node_count() != n {
            return Err(Error::dim(format!(
                "graph has {} nodes, plant has {}",
                graph.node_count(),
                n
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("plant matrices must be finite"));
        }
        let actuator_nodes = infer_actuator_nodes(&b)?;
        Ok(Plant {
            a,
            b,
            graph,
            actuator_nodes,
            seed: None,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Node that owns each actuator (the first row where its column of `B` is nonzero).
    pub fn actuator_nodes(&self) -> &[usize] {
        &self.actuator_nodes
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn to_document(&self) -> PlantDocument {
        PlantDocument {
            n: self.n(),
            m: self.m(),
            a: rows_of(&self.a),
            b: rows_of(&self.b),
            graph: self.graph.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            seed: self.seed,
        }
    }

    pub fn from_document(doc: &PlantDocument) -> Result<Self> {
        let a = matrix_from_rows(&doc.a, doc.n, doc.n, "A")?;
        let b = matrix_from_rows(&doc.b, doc.n, doc.m, "B")?;
        let edges: Vec<_> = doc.graph.iter().map(|e| (e[0], e[1])).collect();
        let graph = Graph::from_edges(doc.n, &edges)?;
        let mut plant = Plant::with_graph(a, b, graph)?;
        plant.seed = doc.seed;
        Ok(plant)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PlantDocument = serde_json::from_str(text)?;
        Plant::from_document(&doc)
    }
}

fn infer_actuator_nodes(b: &DMatrix<f64>) -> Result<Vec<usize>> {
    (0..b.ncols())
        .map(|k| {
            (0..b.nrows())
                .find(|&i| b[(i, k)] != 0.0)
                .ok_or_else(|| Error::invalid(format!("actuator {k} has an all-zero column in B")))
        })
        .collect()
}

/// On-disk plant: `{n, m, A, B, graph, seed}` with row-major nested arrays
/// and an undirected edge list.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlantDocument {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub graph: Vec<[usize; 2]>,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub(crate) fn matrix_from_rows(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    name: &str,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::dim(format!("{name} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Random ring of `n` nodes scaled to spectral radius `rho_target`, with `B = I`.
///
/// Ring couplings have magnitude uniform in `[0.2, 1.0]` and a random sign.
pub fn ring_plant(n: usize, rho_target: f64, seed: u64) -> Result<Plant> {
    if n < 3 {
        return Err(Error::invalid(format!("ring needs at least 3 nodes, got {n}")));
    }
    if !(rho_target > 0.0) || !rho_target.is_finite() {
        return Err(Error::invalid(format!(
            "target spectral radius must be positive, got {rho_target}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in [(i + n - 1) % n, (i + 1) % n] {
            let magnitude = rng.random_range(0.2..=1.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            a[(i, j)] = sign * magnitude;
        }
    }
    let radius = spectral_radius(&a)?;
    a *= rho_target / radius;
    let mut plant = Plant::with_graph(a, DMatrix::identity(n, n), Graph::ring(n))?;
    plant.seed = Some(seed);
    Ok(plant)
}

/// Largest eigenvalue modulus of a general square matrix, from a real Schur form.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim("spectral radius needs a square matrix"));
    }
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    // The implicit double-shift QR can cycle on structured matrices (a ring with
    // zero diagonal is a typical case); a random orthogonal similarity breaks
    // the structure without moving the spectrum.
    let n = a.nrows();
    for attempt in 0..MAX_SCHUR_ATTEMPTS {
        let m = if attempt == 0 {
            a.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(attempt);
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q = g.qr().q();
            q.transpose() * a * q
        };
        if let Some(schur) = Schur::try_new(m, f64::EPSILON, 10_000) {
            return Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max));
        }
    }
    Err(Error::Convergence(format!(
        "Schur iteration did not converge after {MAX_SCHUR_ATTEMPTS} attempts"
    )))
}

const MAX_SCHUR_ATTEMPTS: u64 = 12;

/// Perron root and vector of a nonnegative matrix.
#[derive(Clone, Debug)]
pub struct Perron {
    pub radius: f64,
    /// Strictly positive, normalized to unit max entry.
    pub vector: DVector<f64>,
}

/// Shifted power iteration for an irreducible nonnegative matrix.
///
/// Stops when the Collatz-Wielandt bounds `min_i (Mv)_i/v_i <= rho <= max_i (Mv)_i/v_i`
/// agree to `rel_tol`; the reported radius is the upper bound.
pub fn perron(m: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> Result<Perron> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::dim("Perron vector needs a square matrix"));
    }
    if m.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("Perron vector needs a finite nonnegative matrix"));
    }
    if n == 0 {
        return Ok(Perron {
            radius: 0.0,
            vector: DVector::zeros(0),
        });
    }
    let row_sums: Vec<f64> = (0..n).map(|i| m.row(i).sum()).collect();
    let shift = row_sums.iter().sum::<f64>() / n as f64;
    if shift == 0.0 {
        return Ok(Perron {
            radius: 0.0,
            vector: DVector::from_element(n, 1.0),
        });
    }
    let mut v = DVector::from_element(n, 1.0);
    for _ in 0..max_iter {
        let mv = m * &v;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            if v[i] <= 0.0 {
                return Err(Error::Convergence(
                    "Perron iterate lost positivity (matrix reducible?)".into(),
                ));
            }
            let ratio = mv[i] / v[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if hi - lo <= rel_tol * hi {
            return Ok(Perron { radius: hi, vector: v });
        }
        let mut next = mv + &v * shift;
        let scale = next.max();
        next /= scale;
        v = next;
    }
    Err(Error::Convergence(format!(
        "power iteration did not reach relative tolerance {rel_tol:e} in {max_iter} iterations"
    )))
}

/// Whether the directed graph of nonzero entries is strongly connected.
pub fn is_irreducible(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let w = if forward { m[(u, v)] } else { m[(v, u)] };
                if w != 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Dense boolean mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mask { rows, cols, data }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Mask::new(rows, cols, |_, _| true)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn rows_in_column(&self, j: usize) -> Vec<usize> {
        (0..self.rows).filter(|&i| self.get(i, j)).collect()
    }

    pub fn cols_in_row(&self, i: usize) -> Vec<usize> {
        (0..self.cols).filter(|&j| self.get(i, j)).collect()
    }
}

/// Locality constraint on the closed loop: `Phi[i, j] = 0` unless `j` is within
/// `hops` of `i`.
///
/// The same node mask governs the state response and, through the actuator
/// ownership map, the input response.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    hops: usize,
    neighborhoods: Vec<Vec<usize>>,
    state_mask: Mask,
    input_mask: Mask,
}

impl Support {
    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    pub fn neighborhoods(&self) -> &[Vec<usize>] {
        &self.neighborhoods
    }

    /// `n x n` mask on the state response.
    pub fn state_mask(&self) -> &Mask {
        &self.state_mask
    }

    /// `m x n` mask on the input response.
    pub fn input_mask(&self) -> &Mask {
        &self.input_mask
    }

    /// Support that imposes no locality.
    pub fn full(plant: &Plant) -> Self {
        let n = plant.n();
        Support {
            hops: n,
            neighborhoods: (0..n).map(|_| (0..n).collect()).collect(),
            state_mask: Mask::full(n, n),
            input_mask: Mask::full(plant.m(), n),
        }
    }
}

/// Support from `d`-hop neighborhoods of the plant graph.
pub fn dhop_support(plant: &Plant, d: usize) -> Support {
    let n = plant.n();
    let neighborhoods: Vec<Vec<usize>> =
        (0..n).map(|i| plant.graph().hop_neighborhood(i, d)).collect();
    let state_mask = Mask::new(n, n, |i, j| neighborhoods[i].binary_search(&j).is_ok());
    let owners = plant.actuator_nodes();
    let input_mask = Mask::new(plant.m(), n, |k, j| state_mask.get(owners[k], j));
    Support {
        hops: d,
        neighborhoods,
        state_mask,
        input_mask,
    }
}

/// Strictly causal FIR transfer matrix `sum_{p=1..T} taps[p-1] z^{-p}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FirTransferMatrix {
    taps: Vec<DMatrix<f64>>,
}

impl FirTransferMatrix {
    pub fn new(taps: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = taps
            .first()
            .ok_or_else(|| Error::invalid("FIR horizon must be at least 1"))?;
        let shape = first.shape();
        if taps.iter().any(|t| t.shape() != shape) {
            return Err(Error::dim("all FIR taps must share one shape"));
        }
        Ok(FirTransferMatrix { taps })
    }

    pub fn zeros(rows: usize, cols: usize, horizon: usize) -> Result<Self> {
        FirTransferMatrix::new(vec![DMatrix::zeros(rows, cols); horizon])
    }

    pub fn horizon(&self) -> usize {
        self.taps.len()
    }

    pub fn rows(&self) -> usize {
        self.taps[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.taps[0].ncols()
    }

    /// Coefficient of `z^{-p}`, `p` in `1..=T`.
    pub fn tap(&self, p: usize) -> &DMatrix<f64> {
        &self.taps[p - 1]
    }

    pub fn tap_mut(&mut self, p: usize) -> &mut DMatrix<f64> {
        &mut self.taps[p - 1]
    }

    pub fn taps(&self) -> &[DMatrix<f64>] {
        &self.taps
    }

    pub fn transpose(&self) -> Self {
        FirTransferMatrix {
            taps: self.taps.iter().map(|t| t.transpose()).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        FirTransferMatrix {
            taps: self.taps.iter().map(|t| t * c).collect(),
        }
    }
}

/// State-feedback closed loop `(Phi_x, Phi_u)` on a support.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoop {
    phi_x: FirTransferMatrix,
    phi_u: FirTransferMatrix,
    support: Support,
}

impl ClosedLoop {
    /// Validates shapes, shared horizon, and exact zeros off the support.
    pub fn new(phi_x: FirTransferMatrix, phi_u: FirTransferMatrix, support: Support) -> Result<Self> {
        let n = phi_x.rows();
        if phi_x.cols() != n || phi_u.cols() != n {
            return Err(Error::dim("closed-loop responses must have n columns and square Phi_x"));
        }
        if phi_x.horizon() != phi_u.horizon() {
            return Err(Error::dim("Phi_x and Phi_u must share a horizon"));
        }
        let (sx, su) = (support.state_mask(), support.input_mask());
        if sx.rows() != n || su.rows() != phi_u.rows() || su.cols() != n {
            return Err(Error::dim("support does not match closed-loop dimensions"));
        }
        for p in 1..=phi_x.horizon() {
            check_off_support(phi_x.tap(p), sx, "Phi_x", p)?;
            check_off_support(phi_u.tap(p), su, "Phi_u", p)?;
        }
        Ok(ClosedLoop {
            phi_x,
            phi_u,
            support,
        })
    }

    pub fn phi_x(&self) -> &FirTransferMatrix {
        &self.phi_x
    }

    pub fn phi_u(&self) -> &FirTransferMatrix {
        &self.phi_u
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn horizon(&self) -> usize {
        self.phi_x.horizon()
    }

    pub fn n(&self) -> usize {
        self.phi_x.rows()
    }

    pub fn m(&self) -> usize {
        self.phi_u.rows()
    }
}

fn check_off_support(tap: &DMatrix<f64>, mask: &Mask, name: &str, p: usize) -> Result<()> {
    for i in 0..tap.nrows() {
        for j in 0..tap.ncols() {
            if !mask.get(i, j) && tap[(i, j)] != 0.0 {
                return Err(Error::invalid(format!(
                    "{name}({p})[{i},{j}] = {} lies outside the support",
                    tap[(i, j)]
                )));
            }
        }
    }
    Ok(())
}

/// Dual of the full-control problem `(A, C)`: the state-feedback plant `(A', C')`.
///
/// Solving state feedback on the dual and transposing yields
/// `Phi_w = Phi_x'`, `Phi_v = Phi_u'` satisfying the full-control constraint
/// `Phi_w(1) = I`, `Phi_w(p+1) = Phi_w(p) A + Phi_v(p) C`, `Phi_w(T) A + Phi_v(T) C = 0`.
pub fn dualize_full_control(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Plant> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim("A must be square"));
    }
    if c.ncols() != a.nrows() {
        return Err(Error::dim(format!(
            "C has {} columns, A has {} states",
            c.ncols(),
            a.nrows()
        )));
    }
    Plant::with_graph(a.transpose(), c.transpose(), Graph::from_pattern(a))
}

/// Max-abs violation of the FIR full-control constraint.
pub fn full_control_residual(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    phi_w: &FirTransferMatrix,
    phi_v: &FirTransferMatrix,
) -> Result<f64> {
    let n = a.nrows();
    if phi_w.rows() != n || phi_w.cols() != n || phi_v.cols() != c.nrows() || phi_v.rows() != n {
        return Err(Error::dim("full-control responses do not match (A, C)"));
    }
    if phi_w.horizon() != phi_v.horizon() {
        return Err(Error::dim("Phi_w and Phi_v must share a horizon"));
    }
    let t = phi_w.horizon();
    let mut worst = max_abs(&(phi_w.tap(1) - DMatrix::identity(n, n)));
    for p in 1..=t {
        let next = phi_w.tap(p) * a + phi_v.tap(p) * c;
        let r = if p < t { phi_w.tap(p + 1) - next } else { next };
        worst = worst.max(max_abs(&r));
    }
    Ok(worst)
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ring_plant_hits_target_radius() {
        let plant = ring_plant(10, 3.0, 7).unwrap();
        assert!((spectral_radius(plant.a()).unwrap() - 3.0).abs() <= 1e-9);
        assert_eq!(plant.b(), &DMatrix::identity(10, 10));
        for i in 0..10 {
            for j in 0..10 {
                let on_ring = (i + 1) % 10 == j || (j + 1) % 10 == i;
                assert_eq!(plant.a()[(i, j)] != 0.0, on_ring, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn ring_plant_rejects_degenerate_inputs() {
        assert!(ring_plant(3, 0.0, 1).is_err());
        assert!(ring_plant(2, 1.0, 1).is_err());
        assert!(ring_plant(3, f64::NAN, 1).is_err());
    }

    #[test]
    fn ring_plant_is_seed_deterministic() {
        let a = ring_plant(10, 3.0, 11).unwrap();
        let b = ring_plant(10, 3.0, 11).unwrap();
        assert_eq!(a.a(), b.a());
        let c = ring_plant(10, 3.0, 12).unwrap();
        assert_ne!(a.a(), c.a());
    }

    #[test]
    fn spectral_radius_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!((spectral_radius(&eye).unwrap() - 1.0).abs() < 1e-12);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 8.0, 0.0]);
        assert!((spectral_radius(&m).unwrap() - 4.0).abs() < 1e-12);
        // complex pair of modulus sqrt(2)
        let rot = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        assert!((spectral_radius(&rot).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn perron_on_two_cycle() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 8.0, 0.0]);
        let p = perron(&m, 1e-12, 100_000).unwrap();
        assert!((p.radius - 4.0).abs() < 1e-10);
        assert!((p.vector[1] / p.vector[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn dhop_on_ring() {
        let plant = ring_plant(10, 3.0, 1).unwrap();
        let s = dhop_support(&plant, 2);
        for i in 0..10 {
            assert_eq!(s.neighborhood(i).len(), 5);
            assert!(s.neighborhood(i).contains(&i));
        }
        let s0 = dhop_support(&plant, 0);
        for i in 0..10 {
            assert_eq!(s0.neighborhood(i), &[i]);
        }
    }

    #[test]
    fn dhop_saturates_on_complete_graph() {
        let a = DMatrix::from_element(4, 4, 1.0);
        let plant = Plant::new(a, DMatrix::identity(4, 4)).unwrap();
        let s = dhop_support(&plant, 1);
        assert_eq!(s.state_mask().count(), 16);
    }

    #[test]
    fn dhop_masks_are_monotone_and_saturate() {
        let plant = ring_plant(9, 2.0, 3).unwrap();
        let mut prev = dhop_support(&plant, 0);
        for d in 1..=9 {
            let cur = dhop_support(&plant, d);
            assert!(prev.state_mask().is_subset_of(cur.state_mask()));
            prev = cur;
        }
        assert_eq!(prev.state_mask().count(), 81);
    }

    #[test]
    fn plant_json_round_trip() {
        let plant = ring_plant(5, 1.5, 9).unwrap();
        let text = plant.to_json().unwrap();
        let back = Plant::from_json(&text).unwrap();
        assert_eq!(back.a(), plant.a());
        assert_eq!(back.b(), plant.b());
        assert_eq!(back.graph(), plant.graph());
        assert_eq!(back.seed(), Some(9));
    }

    #[test]
    fn plant_json_rejects_bad_shape() {
        let text = r#"{"n":2,"m":1,"A":[[0,1],[1]],"B":[[1],[0]],"graph":[[0,1]]}"#;
        assert!(matches!(Plant::from_json(text), Err(Error::Dimension(_))));
    }

    #[test]
    fn explicit_graph_overrides_pattern() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let inferred = Plant::new(a.clone(), DMatrix::identity(3, 3)).unwrap();
        assert!(inferred.graph().neighbors(2).is_empty());
        let explicit =
            Plant::with_graph(a, DMatrix::identity(3, 3), Graph::complete(3)).unwrap();
        assert_eq!(explicit.graph().neighbors(2), &[0, 1]);
    }

    #[test]
    fn dualize_shapes() {
        let a = DMatrix::from_fn(4, 4, |i, j| (i + 2 * j) as f64 * 0.1);
        let c = DMatrix::from_fn(2, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let dual = dualize_full_control(&a, &c).unwrap();
        assert_eq!(dual.a(), &a.transpose());
        assert_eq!(dual.b().shape(), (4, 2));
        let eye = DMatrix::identity(4, 4);
        let self_dual = dualize_full_control(&a, &eye).unwrap();
        assert_eq!(self_dual.b(), &eye);
        assert!(dualize_full_control(&a, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn closed_loop_rejects_off_support_entries() {
        let plant = ring_plant(5, 1.0, 2).unwrap();
        let support = dhop_support(&plant, 0);
        let mut phi_x = FirTransferMatrix::zeros(5, 5, 2).unwrap();
        phi_x.tap_mut(1)[(0, 1)] = 1e-300;
        let phi_u = FirTransferMatrix::zeros(5, 5, 2).unwrap();
        assert!(ClosedLoop::new(phi_x, phi_u, support).is_err());
    }

    proptest! {
        #[test]
        fn spectral_radius_is_absolutely_homogeneous(
            entries in proptest::collection::vec(-2.0f64..2.0, 16),
            c in -3.0f64..3.0,
        ) {
            let a = DMatrix::from_row_slice(4, 4, &entries);
            let r = spectral_radius(&a).unwrap();
            let rc = spectral_radius(&(&a * c)).unwrap();
            prop_assert!((rc - c.abs() * r).abs() <= 1e-9 * (1.0 + r));
        }
    }
}
