use std::ops::Index;

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{ensure_dim, Error, Result};

/// Dense real vector with at least one entry, all finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<S>", into = "Vec<S>", bound = "S: Scalar")]
pub struct Vector<S: Scalar>(Vec<S>);

impl<S: Scalar> TryFrom<Vec<S>> for Vector<S> {
    type Error = Error;

    fn try_from(values: Vec<S>) -> Result<Self> {
        Vector::new(values)
    }
}

impl<S: Scalar> From<Vector<S>> for Vec<S> {
    fn from(v: Vector<S>) -> Self {
        v.0
    }
}

impl<S: Scalar> Vector<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("vector must have at least one entry"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vector entry {i}")));
        }
        Ok(Vector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Vector(vec![S::zero(); dim])
    }

    /// One-hot vector of length `dim` with a one at `index`.
    pub fn one_hot(dim: usize, index: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[index] = S::one();
        v
    }

    /// Wraps values produced by arithmetic on already-validated vectors.
    pub(crate) fn from_raw(values: Vec<S>) -> Self {
        debug_assert!(!values.is_empty());
        Vector(values)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> Result<S> {
        ensure_dim("dot", self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> S {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        ensure_dim("add", self.dim(), other.dim())?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        ensure_dim("sub", self.dim(), other.dim())?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn scale(&self, factor: S) -> Self {
        Vector(self.0.iter().map(|&v| v * factor).collect())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: S, other: &Self) -> Result<()> {
        ensure_dim("axpy", self.dim(), other.dim())?;
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut values = Vec::with_capacity(self.dim() + other.dim());
        values.extend_from_slice(&self.0);
        values.extend_from_slice(&other.0);
        Vector(values)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        ensure_dim("max_abs_diff", self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max))
    }

    pub fn cast<T: Scalar>(&self) -> Vector<T> {
        Vector(self.0.iter().map(|&v| T::lit(v.as_f64())).collect())
    }

    fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        Vector(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }
}

impl<S: Scalar> Index<usize> for Vector<S> {
    type Output = S;

    fn index(&self, index: usize) -> &S {
        &self.0[index]
    }
}

impl<S: Scalar> AsRef<[S]> for Vector<S> {
    fn as_ref(&self) -> &[S] {
        &self.0
    }
}

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Cosine similarity together with the zero-norm flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity<S> {
    pub value: S,
    /// Set when either input had norm below [`Scalar::norm_epsilon`]; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine_similarity<S: Scalar>(a: &Vector<S>, b: &Vector<S>) -> Result<Similarity<S>> {
    ensure_dim("cosine_similarity", a.dim(), b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    if na < S::norm_epsilon() || nb < S::norm_epsilon() {
        return Ok(Similarity {
            value: S::zero(),
            degenerate: true,
        });
    }
    let value = dot(&a.0, &b.0) / (na * nb);
    // Rounding can push |cos| a hair past 1.
    Ok(Similarity {
        value: value.max(-S::one()).min(S::one()),
        degenerate: false,
    })
}

/// Cosine similarity and its gradients with respect to both arguments.
///
/// Degenerate inputs yield similarity 0 and zero gradients.
pub fn cosine_similarity_grad<S: Scalar>(
    a: &Vector<S>,
    b: &Vector<S>,
) -> Result<(Similarity<S>, Vector<S>, Vector<S>)> {
    ensure_dim("cosine_similarity_grad", a.dim(), b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    if na < S::norm_epsilon() || nb < S::norm_epsilon() {
        let sim = Similarity {
            value: S::zero(),
            degenerate: true,
        };
        return Ok((sim, Vector::zeros(a.dim()), Vector::zeros(b.dim())));
    }
    let inv = S::one() / (na * nb);
    let cos = dot(&a.0, &b.0) * inv;
    let ga = a
        .0
        .iter()
        .zip(&b.0)
        .map(|(&x, &y)| y * inv - cos * x / (na * na))
        .collect();
    let gb = a
        .0
        .iter()
        .zip(&b.0)
        .map(|(&x, &y)| x * inv - cos * y / (nb * nb))
        .collect();
    let sim = Similarity {
        value: cos.max(-S::one()).min(S::one()),
        degenerate: false,
    };
    Ok((sim, Vector(ga), Vector(gb)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector<f64> {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[1., 0.]), &v(&[1., 0.])).unwrap().value, 1.0);
        assert_eq!(cosine_similarity(&v(&[1., 0.]), &v(&[0., 1.])).unwrap().value, 0.0);
        // 4 / (sqrt5 * sqrt5)
        let s = cosine_similarity(&v(&[1., 2.]), &v(&[2., 1.])).unwrap();
        assert!((s.value - 0.8).abs() < 1e-15);
        assert!(!s.degenerate);
    }

    #[test]
    fn zero_norm_is_flagged() {
        let s = cosine_similarity(&v(&[0., 0.]), &v(&[1., 2.])).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.degenerate);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(matches!(
            cosine_similarity(&v(&[1.]), &v(&[1., 2.])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(Vector::<f64>::new(vec![]).is_err());
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let a = v(&[0.3, -1.2, 0.7]);
        let b = v(&[1.1, 0.4, -0.5]);
        let (_, ga, gb) = cosine_similarity_grad(&a, &b).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut ap = a.clone();
            ap.as_mut_slice()[i] += h;
            let mut am = a.clone();
            am.as_mut_slice()[i] -= h;
            let fd = (cosine_similarity(&ap, &b).unwrap().value
                - cosine_similarity(&am, &b).unwrap().value)
                / (2.0 * h);
            assert!((fd - ga[i]).abs() < 1e-8);
            let mut bp = b.clone();
            bp.as_mut_slice()[i] += h;
            let mut bm = b.clone();
            bm.as_mut_slice()[i] -= h;
            let fd = (cosine_similarity(&a, &bp).unwrap().value
                - cosine_similarity(&a, &bm).unwrap().value)
                / (2.0 * h);
            assert!((fd - gb[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let a = Vector::new(vec![1.0f32, 2.0]).unwrap();
        let b = Vector::new(vec![2.0f32, 1.0]).unwrap();
        assert!((cosine_similarity(&a, &b).unwrap().value - 0.8).abs() < 1e-6);
    }
}
