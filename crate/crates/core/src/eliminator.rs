//! Matrices that annihilate the constant (ambiguity) direction of a
//! stacked phase window.
//!
//! Three constructions are provided:
//!
//! * [`orthonormal_null_basis`]: `Sᵀ`, the `(n−1)×n` matrix whose rows are an
//!   orthonormal basis of the complement of the all-ones vector. Built from
//!   the Householder reflector that maps `1/√n` onto `e₁`, so it is fully
//!   deterministic.
//! * [`random_unitary_eliminator`]: `G = Im(U)` with
//!   `U = S·Q·Sᵀ + (1/n)·1·1ᵀ`, where `Q` is the unitary factor of a QR
//!   decomposition of `H − I` and `H = H₁ + i·H₂` has entries drawn uniformly
//!   from `[0, 1)`. `U` is unitary and fixes `1`, hence `G·1 = 0`.
//! * [`tdcp_difference_matrix`]: `D`, consecutive differences with a zero
//!   last row.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::prng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EliminatorKind {
    /// `G = Im(U)`, `n×n`, rank `n−1`.
    RandomUnitaryImag,
    /// `Sᵀ`, `(n−1)×n`, orthonormal rows.
    OrthonormalBasisT,
    /// `D`, `n×n` consecutive differences.
    TimeDifference,
}

impl fmt::Display for EliminatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EliminatorKind::RandomUnitaryImag => "random-unitary",
            EliminatorKind::OrthonormalBasisT => "orthonormal",
            EliminatorKind::TimeDifference => "tdcp",
        })
    }
}

impl FromStr for EliminatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random-unitary" | "random_unitary" | "g" => Ok(EliminatorKind::RandomUnitaryImag),
            "orthonormal" | "s" | "st" => Ok(EliminatorKind::OrthonormalBasisT),
            "tdcp" | "d" | "time-difference" => Ok(EliminatorKind::TimeDifference),
            other => Err(Error::InvalidArgument(format!("unknown eliminator kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliminatorMatrix {
    pub kind: EliminatorKind,
    pub entries: DMatrix<f64>,
}

impl EliminatorMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    /// Window size `n`.
    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    /// Number of entries with magnitude above `tol`.
    pub fn nonzeros(&self, tol: f64) -> usize {
        self.entries.iter().filter(|v| v.abs() > tol).count()
    }
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("window size must be ≥ 2, got {n}")));
    }
    Ok(())
}

/// Columns span the orthogonal complement of the all-ones vector (`S`,
/// `n×(n−1)`).
pub(crate) fn null_basis_columns(n: usize) -> DMatrix<f64> {
    // P = I − 2·w·wᵀ/(wᵀw), w = 1/√n − e₁. P·e₁ = 1/√n, so the remaining
    // columns of the symmetric orthogonal P are orthonormal and ⟂ 1.
    let inv_sqrt = 1.0 / (n as f64).sqrt();
    let mut w = nalgebra::DVector::from_element(n, inv_sqrt);
    w[0] -= 1.0;
    let ww = w.dot(&w);
    DMatrix::from_fn(n, n - 1, |i, j| {
        let col = j + 1;
        let delta = if i == col { 1.0 } else { 0.0 };
        delta - 2.0 * w[i] * w[col] / ww
    })
}

pub fn orthonormal_null_basis(n: usize) -> Result<EliminatorMatrix> {
    check_size(n)?;
    Ok(EliminatorMatrix {
        kind: EliminatorKind::OrthonormalBasisT,
        entries: null_basis_columns(n).transpose(),
    })
}

/// Unitary factor of `H − I`, normalized so that `R` has a real
/// non-negative diagonal.
fn unitary_factor(n: usize, seed: u64) -> DMatrix<Complex64> {
    let m = n - 1;
    let mut rng = SplitMix64::new(seed);
    let real: Vec<f64> = (0..m * m).map(|_| rng.next_f64()).collect();
    let imag: Vec<f64> = (0..m * m).map(|_| rng.next_f64()).collect();
    let h = DMatrix::from_fn(m, m, |i, j| {
        let k = i * m + j;
        let diag = if i == j { 1.0 } else { 0.0 };
        Complex64::new(real[k] - diag, imag[k])
    });
    let qr = h.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        let d = r[(j, j)];
        let mag = d.norm();
        if mag > 0.0 {
            let phase = d / mag;
            for i in 0..m {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

/// The full unitary `U = S·Q·Sᵀ + (1/n)·1·1ᵀ` behind
/// [`random_unitary_eliminator`].
pub fn random_unitary(n: usize, seed: u64) -> Result<DMatrix<Complex64>> {
    check_size(n)?;
    let s = null_basis_columns(n).map(|v| Complex64::new(v, 0.0));
    let q = unitary_factor(n, seed);
    let mean = Complex64::new(1.0 / n as f64, 0.0);
    Ok(&s * q * s.transpose() + DMatrix::from_element(n, n, mean))
}

pub fn random_unitary_eliminator(n: usize, seed: u64) -> Result<EliminatorMatrix> {
    let u = random_unitary(n, seed)?;
    Ok(EliminatorMatrix {
        kind: EliminatorKind::RandomUnitaryImag,
        entries: u.map(|z| z.im),
    })
}

pub fn tdcp_difference_matrix(n: usize) -> Result<EliminatorMatrix> {
    check_size(n)?;
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        d[(i, i)] = -1.0;
        d[(i, i + 1)] = 1.0;
    }
    Ok(EliminatorMatrix {
        kind: EliminatorKind::TimeDifference,
        entries: d,
    })
}

pub fn build_eliminator(kind: EliminatorKind, n: usize, seed: u64) -> Result<EliminatorMatrix> {
    match kind {
        EliminatorKind::RandomUnitaryImag => random_unitary_eliminator(n, seed),
        EliminatorKind::OrthonormalBasisT => orthonormal_null_basis(n),
        EliminatorKind::TimeDifference => tdcp_difference_matrix(n),
    }
}

/// Numerical rank via singular values above `tol`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > tol)
        .count()
}
