//! Matrix norms used as stability and performance criteria, the magnitude
//! matrix of a closed loop, and diagonal similarity scalings.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{ClosedLoop, FirTransferMatrix, Plant};
use crate::{Error, Result};

/// Norm applied to a magnitude matrix (or, for `H2`, to the raw taps).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    /// Maximum absolute row sum.
    #[serde(rename = "l1")]
    L1RowMax,
    /// Maximum absolute column sum.
    #[serde(rename = "linf")]
    LinfColMax,
    /// Maximum absolute element.
    #[serde(rename = "nu")]
    NuMaxElt,
    /// Frobenius norm.
    #[serde(rename = "h2")]
    H2,
}

/// Which slices of a matrix a norm constraint decouples over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Separability {
    Row,
    Column,
    Element,
}

impl NormKind {
    pub const STABILITY: [NormKind; 3] = [NormKind::L1RowMax, NormKind::LinfColMax, NormKind::NuMaxElt];

    pub fn separability(self) -> Separability {
        match self {
            NormKind::L1RowMax => Separability::Row,
            NormKind::LinfColMax => Separability::Column,
            NormKind::NuMaxElt | NormKind::H2 => Separability::Element,
        }
    }

    pub fn is_stability_kind(self) -> bool {
        self != NormKind::H2
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::L1RowMax => "l1",
            NormKind::LinfColMax => "linf",
            NormKind::NuMaxElt => "nu",
            NormKind::H2 => "h2",
        }
    }

    /// The kind that acts on the transpose the way `self` acts on the original.
    pub fn transposed(self) -> NormKind {
        match self {
            NormKind::L1RowMax => NormKind::LinfColMax,
            NormKind::LinfColMax => NormKind::L1RowMax,
            k => k,
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(NormKind::L1RowMax),
            "linf" => Ok(NormKind::LinfColMax),
            "nu" => Ok(NormKind::NuMaxElt),
            "h2" => Ok(NormKind::H2),
            other => Err(Error::invalid(format!(
                "unknown norm kind {other:?} (expected l1, linf, nu or h2)"
            ))),
        }
    }
}

pub fn induced_norm(m: &DMatrix<f64>, kind: NormKind) -> f64 {
    match kind {
        NormKind::L1RowMax => (0..m.nrows())
            .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::LinfColMax => (0..m.ncols())
            .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::NuMaxElt => m.iter().fold(0.0, |acc, v| acc.max(v.abs())),
        NormKind::H2 => m.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// Positive diagonal `D = diag(exp(l))` with `sum(l) = 0`, and the level it certifies.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalScaling {
    log_values: DVector<f64>,
    pub beta: f64,
}

impl DiagonalScaling {
    pub fn identity(n: usize) -> Self {
        DiagonalScaling {
            log_values: DVector::zeros(n),
            beta: f64::INFINITY,
        }
    }

    /// Shifts `l` onto the zero-sum gauge.
    pub fn from_log(l: DVector<f64>, beta: f64) -> Self {
        let mut log_values = l;
        if !log_values.is_empty() {
            let mean = log_values.mean();
            log_values.add_scalar_mut(-mean);
        }
        DiagonalScaling { log_values, beta }
    }

    pub fn len(&self) -> usize {
        self.log_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_values.is_empty()
    }

    pub fn log_values(&self) -> &DVector<f64> {
        &self.log_values
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.log_values.map(f64::exp)
    }

    /// `D^{-1}`, with the same certified level.
    pub fn inverse(&self) -> Self {
        DiagonalScaling {
            log_values: -&self.log_values,
            beta: self.beta,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// `D M D^{-1}`.
pub fn scaled_matrix(m: &DMatrix<f64>, d: &DiagonalScaling) -> Result<DMatrix<f64>> {
    let n = d.len();
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dim(format!(
            "scaling has length {n}, matrix is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let l = d.log_values();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            m[(i, i)]
        } else {
            (l[i] - l[j]).exp() * m[(i, j)]
        }
    }))
}

/// `||D M D^{-1}||` for the given kind.
pub fn scaled_norm(m: &DMatrix<f64>, d: &DiagonalScaling, kind: NormKind) -> Result<f64> {
    Ok(induced_norm(&scaled_matrix(m, d)?, kind))
}

/// Robust stability margin `1/beta`.
pub fn margin(beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("margin needs beta > 0, got {beta}")));
    }
    Ok(1.0 / beta)
}

/// Regulated output `z = Hx x + Hu u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Regulation {
    pub hx: DMatrix<f64>,
    pub hu: DMatrix<f64>,
}

impl Regulation {
    pub fn new(hx: DMatrix<f64>, hu: DMatrix<f64>) -> Result<Self> {
        if hx.nrows() != hu.nrows() {
            return Err(Error::dim("Hx and Hu must have the same number of rows"));
        }
        Ok(Regulation { hx, hu })
    }

    /// `z_i = hx x_i + hu * (sum of inputs owned by node i)`.
    pub fn scalar(plant: &Plant, hx: f64, hu: f64) -> Self {
        let n = plant.n();
        let mut hu_mat = DMatrix::zeros(n, plant.m());
        for (k, &owner) in plant.actuator_nodes().iter().enumerate() {
            hu_mat[(owner, k)] = hu;
        }
        Regulation {
            hx: DMatrix::identity(n, n) * hx,
            hu: hu_mat,
        }
    }

    pub fn outputs(&self) -> usize {
        self.hx.nrows()
    }

    /// Hx diagonal and each Hu column feeding at most one output.
    pub fn is_separably_diagonal(&self) -> bool {
        is_diagonal(&self.hx)
            && (0..self.hu.ncols())
                .all(|k| self.hu.column(k).iter().filter(|v| **v != 0.0).count() <= 1)
    }

    /// `Hx Phi_x(p) + Hu Phi_u(p)`.
    pub fn apply(&self, phi_x: &DMatrix<f64>, phi_u: &DMatrix<f64>) -> DMatrix<f64> {
        &self.hx * phi_x + &self.hu * phi_u
    }
}

pub(crate) fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// `M = sum_p |Hx Phi_x(p) + Hu Phi_u(p)|`.
pub fn magnitude_matrix(cl: &ClosedLoop, h: &Regulation) -> Result<DMatrix<f64>> {
    magnitude_of_taps(cl.phi_x(), cl.phi_u(), h)
}

pub fn magnitude_of_taps(
    phi_x: &FirTransferMatrix,
    phi_u: &FirTransferMatrix,
    h: &Regulation,
) -> Result<DMatrix<f64>> {
    if h.hx.ncols() != phi_x.rows() || h.hu.ncols() != phi_u.rows() {
        return Err(Error::dim(format!(
            "regulation map takes ({}, {}) inputs, closed loop has ({}, {}) rows",
            h.hx.ncols(),
            h.hu.ncols(),
            phi_x.rows(),
            phi_u.rows()
        )));
    }
    if phi_x.horizon() != phi_u.horizon() || phi_x.cols() != phi_u.cols() {
        return Err(Error::dim("Phi_x and Phi_u disagree in horizon or columns"));
    }
    let mut m = DMatrix::zeros(h.outputs(), phi_x.cols());
    for p in 1..=phi_x.horizon() {
        let g = h.apply(phi_x.tap(p), phi_u.tap(p));
        m.zip_apply(&g, |acc, v| *acc += v.abs());
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ring_plant, Support};
    use proptest::prelude::*;

    fn sample() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 4.0])
    }

    #[test]
    fn induced_norm_examples() {
        assert_eq!(induced_norm(&sample(), NormKind::L1RowMax), 7.0);
        assert_eq!(induced_norm(&sample(), NormKind::LinfColMax), 6.0);
        assert_eq!(induced_norm(&sample(), NormKind::NuMaxElt), 4.0);
        assert!((induced_norm(&sample(), NormKind::H2) - 30f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn separability_tags() {
        assert_eq!(NormKind::L1RowMax.separability(), Separability::Row);
        assert_eq!(NormKind::LinfColMax.separability(), Separability::Column);
        assert_eq!(NormKind::NuMaxElt.separability(), Separability::Element);
        assert_eq!(NormKind::H2.separability(), Separability::Element);
    }

    #[test]
    fn kind_strings_round_trip() {
        for kind in [NormKind::L1RowMax, NormKind::LinfColMax, NormKind::NuMaxElt, NormKind::H2] {
            assert_eq!(kind.as_str().parse::<NormKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{kind}\""));
        }
        assert!("max".parse::<NormKind>().is_err());
    }

    #[test]
    fn scaled_norm_hand_example() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 8.0, 0.0]);
        let d = DiagonalScaling::from_log(DVector::from_vec(vec![0.0, -(2f64.ln())]), 4.0);
        assert!((scaled_norm(&m, &d, NormKind::L1RowMax).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn identity_scaling_is_neutral() {
        let d = DiagonalScaling::identity(2);
        for kind in NormKind::STABILITY {
            assert_eq!(scaled_norm(&sample(), &d, kind).unwrap(), induced_norm(&sample(), kind));
        }
    }

    #[test]
    fn diagonal_matrix_ignores_scaling() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0, 1.0]));
        let d = DiagonalScaling::from_log(DVector::from_vec(vec![3.0, -1.0, 0.5]), 5.0);
        for kind in NormKind::STABILITY {
            assert_eq!(scaled_norm(&m, &d, kind).unwrap(), induced_norm(&m, kind));
        }
    }

    #[test]
    fn margin_is_reciprocal() {
        assert_eq!(margin(4.0).unwrap(), 0.25);
        assert_eq!(margin(1.0).unwrap(), 1.0);
        assert!(margin(0.0).is_err());
        assert!(margin(-1.0).is_err());
    }

    #[test]
    fn magnitude_of_scalar_taps() {
        let phi_x = FirTransferMatrix::new(vec![
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, -2.0),
        ])
        .unwrap();
        let phi_u = FirTransferMatrix::zeros(1, 1, 2).unwrap();
        let h = Regulation::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0))
            .unwrap();
        let m = magnitude_of_taps(&phi_x, &phi_u, &h).unwrap();
        assert_eq!(m[(0, 0)], 3.0);
    }

    #[test]
    fn magnitude_of_zero_loop_is_zero() {
        let plant = ring_plant(4, 1.0, 0).unwrap();
        let z = FirTransferMatrix::zeros(4, 4, 3).unwrap();
        let cl = ClosedLoop::new(z.clone(), z, Support::full(&plant)).unwrap();
        let h = Regulation::scalar(&plant, 1.0, 1.0);
        assert_eq!(magnitude_matrix(&cl, &h).unwrap(), DMatrix::zeros(4, 4));
    }

    #[test]
    fn scalar_regulation_is_separably_diagonal() {
        let plant = ring_plant(5, 1.0, 0).unwrap();
        assert!(Regulation::scalar(&plant, 1.0, 1.0).is_separably_diagonal());
        let h = Regulation::new(DMatrix::from_element(2, 2, 1.0), DMatrix::zeros(2, 2)).unwrap();
        assert!(!h.is_separably_diagonal());
    }

    fn mat8() -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-5.0f64..5.0, 64).prop_map(|v| DMatrix::from_row_slice(8, 8, &v))
    }

    proptest! {
        #[test]
        fn norms_are_homogeneous_and_subadditive(a in mat8(), b in mat8(), c in -4.0f64..4.0) {
            for kind in [NormKind::L1RowMax, NormKind::LinfColMax, NormKind::NuMaxElt, NormKind::H2] {
                let na = induced_norm(&a, kind);
                let nb = induced_norm(&b, kind);
                prop_assert!((induced_norm(&(&a * c), kind) - c.abs() * na).abs() <= 1e-12 * (1.0 + na * c.abs()));
                prop_assert!(induced_norm(&(&a + &b), kind) <= na + nb + 1e-12 * (1.0 + na + nb));
            }
        }

        #[test]
        fn nu_is_dominated_by_row_and_column_norms(a in mat8()) {
            let nu = induced_norm(&a, NormKind::NuMaxElt);
            prop_assert!(nu <= induced_norm(&a, NormKind::L1RowMax));
            prop_assert!(nu <= induced_norm(&a, NormKind::LinfColMax));
        }

        #[test]
        fn transpose_duality(a in mat8(), l in proptest::collection::vec(-2.0f64..2.0, 8)) {
            let m = a.abs();
            let d = DiagonalScaling::from_log(DVector::from_vec(l), 1.0);
            let lhs = scaled_norm(&m, &d, NormKind::L1RowMax).unwrap();
            let rhs = scaled_norm(&m.transpose(), &d.inverse(), NormKind::LinfColMax).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs));
        }

        #[test]
        fn gauge_shift_changes_nothing(a in mat8(), l in proptest::collection::vec(-2.0f64..2.0, 8), shift in -5.0f64..5.0) {
            let m = a.abs();
            let base = DVector::from_vec(l);
            let d1 = DiagonalScaling::from_log(base.clone(), 1.0);
            let d2 = DiagonalScaling::from_log(base.add_scalar(shift), 1.0);
            for kind in NormKind::STABILITY {
                let n1 = scaled_norm(&m, &d1, kind).unwrap();
                let n2 = scaled_norm(&m, &d2, kind).unwrap();
                prop_assert!((n1 - n2).abs() <= 1e-12 * (1.0 + n1));
            }
        }

        #[test]
        fn magnitude_is_subadditive(
            x1 in proptest::collection::vec(-2.0f64..2.0, 18),
            x2 in proptest::collection::vec(-2.0f64..2.0, 18),
        ) {
            let taps = |v: &[f64]| FirTransferMatrix::new(vec![
                DMatrix::from_row_slice(3, 3, &v[..9]),
                DMatrix::from_row_slice(3, 3, &v[9..]),
            ]).unwrap();
            let (p, q) = (taps(&x1), taps(&x2));
            let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
            let s = taps(&sum);
            let h = Regulation::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3) * 0.5).unwrap();
            let zero_u = FirTransferMatrix::zeros(3, 3, 2).unwrap();
            let mp = magnitude_of_taps(&p, &q, &h).unwrap();
            let mq = magnitude_of_taps(&q, &zero_u, &h).unwrap();
            let ms = magnitude_of_taps(&s, &q, &h).unwrap();
            let bound = mp + mq;
            for (a, b) in ms.iter().zip(bound.iter()) {
                prop_assert!(*a <= *b + 1e-12);
            }
        }
    }
}
