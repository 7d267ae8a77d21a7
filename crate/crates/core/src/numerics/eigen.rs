//! Symmetric eigendecomposition (cyclic Jacobi) and the PSD square-root trace
//! used by the Fréchet distance.

use super::{Matrix, Scalar};
use crate::error::{ensure_dim, Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix. `vectors` holds eigenvectors as columns,
/// in the same order as `values`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<S: Scalar> {
    pub values: Vec<S>,
    pub vectors: Matrix<S>,
}

impl<S: Scalar> SymmetricEigen<S> {
    /// Decomposes `m`, which must be square. Only the upper triangle is trusted;
    /// the matrix is symmetrized first.
    pub fn new(m: &Matrix<S>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::contract("eigendecomposition needs a square matrix"));
        }
        let n = m.rows();
        let mut a = m.symmetrized()?;
        let mut v = Matrix::identity(n);
        let eps = S::epsilon();

        for _ in 0..MAX_SWEEPS {
            let off: S = off_diagonal_norm(&a);
            let total = frobenius(&a).max(S::min_positive_value());
            if off <= eps * total {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a.get(p, q);
                    if apq == S::zero() {
                        continue;
                    }
                    let app = a.get(p, p);
                    let aqq = a.get(q, q);
                    let theta = (aqq - app) / (S::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                    let c = S::one() / (t * t + S::one()).sqrt();
                    let s = t * c;
                    rotate(&mut a, &mut v, p, q, c, s);
                }
            }
        }
        let values = (0..n).map(|i| a.get(i, i)).collect();
        Ok(SymmetricEigen { values, vectors: v })
    }

    /// Rebuilds `V · diag(f(λ)) · Vᵀ`.
    pub fn map_values(&self, f: impl Fn(S) -> S) -> Matrix<S> {
        let n = self.values.len();
        let mapped: Vec<S> = self.values.iter().map(|&l| f(l)).collect();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors.get(i, k) * mapped[k] * self.vectors.get(j, k))
                .sum()
        })
    }
}

fn off_diagonal_norm<S: Scalar>(a: &Matrix<S>) -> S {
    let n = a.rows();
    let mut acc = S::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a.get(i, j) * a.get(i, j);
            }
        }
    }
    acc.sqrt()
}

fn frobenius<S: Scalar>(a: &Matrix<S>) -> S {
    a.as_slice().iter().map(|&x| x * x).sum::<S>().sqrt()
}

// Applies the Jacobi rotation J(p, q, θ) as A ← JᵀAJ, V ← VJ.
fn rotate<S: Scalar>(a: &mut Matrix<S>, v: &mut Matrix<S>, p: usize, q: usize, c: S, s: S) {
    let n = a.rows();
    for k in 0..n {
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        a.set(k, p, c * akp - s * akq);
        a.set(k, q, s * akp + c * akq);
    }
    for k in 0..n {
        let apk = a.get(p, k);
        let aqk = a.get(q, k);
        a.set(p, k, c * apk - s * aqk);
        a.set(q, k, s * apk + c * aqk);
    }
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// Result of [`psd_sqrt_trace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtTrace<S> {
    /// `Tr((a^{1/2} b a^{1/2})^{1/2})`
    pub value: S,
    /// Total magnitude of negative eigenvalues that were clamped to zero.
    pub clamped_mass: S,
}

/// Asymmetry allowed in inputs, relative to the largest entry.
pub fn symmetry_tolerance<S: Scalar>() -> S {
    S::lit(1e-8).max(S::epsilon() * S::lit(100.0))
}

pub(crate) fn check_symmetric<S: Scalar>(m: &Matrix<S>, what: &str) -> Result<()> {
    let asym = m
        .asymmetry()
        .ok_or_else(|| Error::contract(format!("{what} must be square")))?;
    let scale = m
        .as_slice()
        .iter()
        .fold(S::one(), |acc, v| acc.max(v.abs()));
    if asym > symmetry_tolerance::<S>() * scale {
        return Err(Error::contract(format!(
            "{what} is not symmetric (max asymmetry {asym})"
        )));
    }
    Ok(())
}

/// Trace of the square root of the product of two PSD matrices, evaluated in
/// the symmetric form `Tr((a^{1/2} b a^{1/2})^{1/2})`, which equals `Tr((ab)^{1/2})`.
/// Eigenvalues within `n·ε·max|λ|` of zero are round-off and count as zero;
/// negative ones are clamped to zero.
pub fn psd_sqrt_trace<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<SqrtTrace<S>> {
    check_symmetric(a, "first operand")?;
    check_symmetric(b, "second operand")?;
    ensure_dim("psd_sqrt_trace", a.rows(), b.rows())?;

    let ea = SymmetricEigen::new(a)?;
    let floor_a = round_off_floor(&ea.values);
    let mut clamped = ea
        .values
        .iter()
        .filter(|&&l| l < S::zero())
        .fold(S::zero(), |acc, &l| acc - l);
    let sqrt_a = ea.map_values(|l| if l > floor_a { l.sqrt() } else { S::zero() });

    let inner = sqrt_a.matmul(&b.symmetrized()?)?.matmul(&sqrt_a)?;
    let em = SymmetricEigen::new(&inner)?;
    let floor_m = round_off_floor(&em.values);
    let mut value = S::zero();
    for &l in &em.values {
        if l < S::zero() {
            clamped -= l;
        } else if l > floor_m {
            value += l.sqrt();
        }
    }
    Ok(SqrtTrace {
        value,
        clamped_mass: clamped,
    })
}

fn round_off_floor<S: Scalar>(values: &[S]) -> S {
    let max = values.iter().fold(S::zero(), |acc, l| acc.max(l.abs()));
    S::lit(values.len() as f64) * S::epsilon() * max
}
