//! Fréchet distance between Gaussian fits of feature sets, lip-sync embedding
//! distance and mean cosine similarity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{read_feature_file, FeatureManifest};
use crate::error::{ensure_dim, Error, Result};
use crate::numerics::{check_symmetric, cosine_similarity, psd_sqrt_trace, Matrix, Scalar, Vector};

/// Clamped eigenvalue mass, relative to the trace, above which a warning is logged.
pub const CLAMP_WARN_RATIO: f64 = 1e-6;

/// Embeddings of uniform dimension with a tag naming their origin.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<S: Scalar = f64> {
    vectors: Vec<Vector<S>>,
    source_tag: String,
}

impl<S: Scalar> FeatureSet<S> {
    pub fn new(vectors: Vec<Vector<S>>, source_tag: impl Into<String>) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::contract("feature set is empty"));
        };
        let d = first.dim();
        for v in &vectors {
            ensure_dim("feature set", d, v.dim())?;
            if !v.is_finite() {
                return Err(Error::NonFinite("feature vector".into()));
            }
        }
        Ok(FeatureSet {
            vectors,
            source_tag: source_tag.into(),
        })
    }

    pub fn vectors(&self) -> &[Vector<S>] {
        &self.vectors
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }
}

/// Sample ids and features listed in a precomputed-feature manifest, in file order.
pub fn load_feature_set(manifest_path: &Path) -> Result<(Vec<String>, FeatureSet<f64>)> {
    let manifest = FeatureManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut ids = Vec::with_capacity(manifest.samples.len());
    let mut vectors = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        let values = read_feature_file(&base.join(&s.feature_file))?;
        if values.len() != manifest.dim {
            return Err(Error::Load(format!(
                "feature `{}` has {} values, manifest dim is {}",
                s.id,
                values.len(),
                manifest.dim
            )));
        }
        ids.push(s.id.clone());
        vectors.push(Vector::new(values.into_iter().map(f64::from).collect())?);
    }
    let tag = manifest_path.display().to_string();
    Ok((ids, FeatureSet::new(vectors, tag)?))
}

/// Mean and covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit<S: Scalar = f64> {
    pub mean: Vector<S>,
    pub covariance: Matrix<S>,
}

/// Sample mean and unbiased (`n − 1`) covariance, symmetrized.
pub fn fit_gaussian<S: Scalar>(fs: &FeatureSet<S>) -> Result<GaussianFit<S>> {
    let n = fs.len();
    if n < 2 {
        return Err(Error::contract(format!(
            "fitting a Gaussian needs at least 2 vectors, got {n}"
        )));
    }
    let d = fs.dim();
    let mut mean = Vector::zeros(d);
    for v in fs.vectors() {
        mean.axpy(S::one(), v)?;
    }
    let mean = mean.scale(S::one() / S::lit(n as f64));
    let mut cov = Matrix::zeros(d, d);
    let w = S::one() / S::lit((n - 1) as f64);
    for v in fs.vectors() {
        let c = v.sub(&mean)?;
        cov.add_outer(w, &c, &c)?;
    }
    let covariance = cov.symmetrized()?;
    check_symmetric(&covariance, "covariance")?;
    Ok(GaussianFit { mean, covariance })
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})` between two fits.
pub fn frechet_distance<S: Scalar>(a: &GaussianFit<S>, b: &GaussianFit<S>) -> Result<S> {
    ensure_dim("frechet_distance", a.mean.dim(), b.mean.dim())?;
    let dm = a.mean.sub(&b.mean)?;
    let cross = psd_sqrt_trace(&a.covariance, &b.covariance)?;
    let trace = a.covariance.trace() + b.covariance.trace();
    if cross.clamped_mass > S::lit(CLAMP_WARN_RATIO) * trace.abs() {
        log::warn!(
            "clamped {} of negative eigenvalue mass against trace {}",
            cross.clamped_mass.as_f64(),
            trace.as_f64()
        );
    }
    let value = dm.dot(&dm)? + trace - S::lit(2.0) * cross.value;
    if !value.is_finite() {
        return Err(Error::NonFinite("Fréchet distance".into()));
    }
    Ok(value)
}

/// Fréchet distance between the Gaussian fits of two feature sets.
pub fn fad<S: Scalar>(real: &FeatureSet<S>, gen: &FeatureSet<S>) -> Result<S> {
    ensure_dim("fad", real.dim(), gen.dim())?;
    frechet_distance(&fit_gaussian(real)?, &fit_gaussian(gen)?)
}

/// Mean Euclidean distance between time-aligned audio and visual embeddings.
pub fn lse_d<S: Scalar>(audio: &[Vector<S>], visual: &[Vector<S>]) -> Result<S> {
    if audio.len() != visual.len() {
        return Err(Error::contract(format!(
            "lse_d needs equal lengths, got {} audio and {} visual",
            audio.len(),
            visual.len()
        )));
    }
    if audio.is_empty() {
        return Err(Error::contract("lse_d needs at least one window"));
    }
    let mut total = S::zero();
    for (a, v) in audio.iter().zip(visual) {
        total += a.sub(v)?.norm();
    }
    Ok(total / S::lit(audio.len() as f64))
}

/// Mean cosine similarity over aligned (generated, real) pairs.
pub fn csim<S: Scalar>(gen: &[Vector<S>], real: &[Vector<S>]) -> Result<S> {
    if gen.len() != real.len() {
        return Err(Error::contract(format!(
            "csim needs equal lengths, got {} generated and {} real",
            gen.len(),
            real.len()
        )));
    }
    if gen.is_empty() {
        return Err(Error::contract("csim needs at least one pair"));
    }
    let mut total = S::zero();
    for (g, r) in gen.iter().zip(real) {
        total += cosine_similarity(g, r)?.value;
    }
    Ok(total / S::lit(gen.len() as f64))
}

/// Evaluation report; `lse_d` is absent when no sync embeddings were supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fad: f64,
    pub lse_d: Option<f64>,
    pub csim: f64,
    pub n_real: usize,
    pub n_gen: usize,
}

/// Sync embedding sequences for LSE-D.
#[derive(Debug, Clone, Copy)]
pub struct SyncEmbeddings<'a> {
    pub audio: &'a [Vector<f64>],
    pub visual: &'a [Vector<f64>],
}

/// FAD over the two sets, CSIM over pairs sharing a sample id (or by position
/// when no ids are given), LSE-D when sync embeddings are supplied.
pub fn evaluate(
    real: (&[String], &FeatureSet<f64>),
    gen: (&[String], &FeatureSet<f64>),
    sync: Option<SyncEmbeddings<'_>>,
) -> Result<MetricReport> {
    let (real_ids, real_fs) = real;
    let (gen_ids, gen_fs) = gen;
    let (g, r): (Vec<Vector<f64>>, Vec<Vector<f64>>) = if gen_ids.is_empty() && real_ids.is_empty() {
        (gen_fs.vectors().to_vec(), real_fs.vectors().to_vec())
    } else {
        ensure_dim("generated ids", gen_fs.len(), gen_ids.len())?;
        ensure_dim("real ids", real_fs.len(), real_ids.len())?;
        let mut pairs = (Vec::new(), Vec::new());
        for (id, v) in gen_ids.iter().zip(gen_fs.vectors()) {
            let Some(k) = real_ids.iter().position(|r| r == id) else {
                return Err(Error::Lookup(format!("generated sample `{id}` has no real counterpart")));
            };
            pairs.0.push(v.clone());
            pairs.1.push(real_fs.vectors()[k].clone());
        }
        pairs
    };
    let lse = sync.map(|s| lse_d(s.audio, s.visual)).transpose()?;
    Ok(MetricReport {
        fad: fad(real_fs, gen_fs)?,
        lse_d: lse,
        csim: csim(&g, &r)?,
        n_real: real_fs.len(),
        n_gen: gen_fs.len(),
    })
}
