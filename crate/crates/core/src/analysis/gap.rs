use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, EmotionLabel, EMOTION_COUNT};
use crate::encoders::EncoderSuite;
use crate::error::{ensure_dim, Error, Result};
use crate::numerics::cosine_similarity;
use crate::{Real, Vector};

/// Image features grouped by emotion.
pub type FeaturesByEmotion = BTreeMap<EmotionLabel, Vec<Vector>>;
/// One text embedding per emotion.
pub type TextByEmotion = BTreeMap<EmotionLabel, Vector>;

/// Visual embeddings of every manifest sample, grouped by emotion.
pub fn features_by_emotion(
    manifest: &CorpusManifest,
    suite: &dyn EncoderSuite,
) -> Result<FeaturesByEmotion> {
    let mut out = FeaturesByEmotion::new();
    for s in manifest.samples() {
        out.entry(s.emotion)
            .or_default()
            .push(suite.visual_encode(&s.image_ref)?);
    }
    Ok(out)
}

/// Text embeddings of the seven template prompts.
pub fn template_text_embeddings(suite: &dyn EncoderSuite) -> Result<TextByEmotion> {
    EmotionLabel::ALL
        .iter()
        .map(|&e| Ok((e, suite.text_encode(&suite.tokenize(&e.prompt())?)?)))
        .collect()
}

fn check_inputs(features: &FeaturesByEmotion, text: &TextByEmotion) -> Result<()> {
    for e in EmotionLabel::ALL {
        let n = features.get(&e).map_or(0, Vec::len);
        if n < 2 {
            return Err(Error::contract(format!(
                "emotion `{e}` needs at least 2 image features, got {n}"
            )));
        }
        if !text.contains_key(&e) {
            return Err(Error::contract(format!("no text embedding for `{e}`")));
        }
    }
    Ok(())
}

fn mean_cosine_to(images: &[Vector], text: &Vector) -> Result<Real> {
    let mut total = 0.0;
    for v in images {
        total += cosine_similarity(v, text)?.value;
    }
    Ok(total / images.len() as Real)
}

// Mean cosine over unordered distinct pairs.
fn mean_pairwise_cosine(images: &[Vector]) -> Result<Real> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..images.len() {
        for j in (i + 1)..images.len() {
            total += cosine_similarity(&images[i], &images[j])?.value;
            pairs += 1;
        }
    }
    Ok(total / pairs as Real)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub emotion: EmotionLabel,
    pub s_image: Real,
    pub s_match: Real,
    pub gap: Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapAverages {
    pub s_image: Real,
    pub s_match: Real,
    pub gap: Real,
}

/// Within-modality image cohesion against image-text matching similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    pub average: GapAverages,
}

/// Differences between two gap reports, `self − reference`, per emotion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapDelta {
    pub emotion: EmotionLabel,
    pub s_image: Real,
    pub s_match: Real,
    pub gap: Real,
}

impl GapReport {
    /// Builds a report from per-emotion operands; gaps and averages are derived.
    pub fn from_operands(operands: &[(EmotionLabel, Real, Real)]) -> Result<Self> {
        let rows: Vec<GapRow> = operands
            .iter()
            .map(|&(emotion, s_image, s_match)| GapRow {
                emotion,
                s_image,
                s_match,
                gap: s_image - s_match,
            })
            .collect();
        if rows.is_empty() {
            return Err(Error::contract("gap report needs at least one emotion"));
        }
        let n = rows.len() as Real;
        let average = GapAverages {
            s_image: rows.iter().map(|r| r.s_image).sum::<Real>() / n,
            s_match: rows.iter().map(|r| r.s_match).sum::<Real>() / n,
            gap: rows.iter().map(|r| r.gap).sum::<Real>() / n,
        };
        Ok(GapReport { rows, average })
    }

    pub fn row(&self, emotion: EmotionLabel) -> Option<&GapRow> {
        self.rows.iter().find(|r| r.emotion == emotion)
    }

    /// Checks `gap == s_image − s_match` per row within `row_tol` and each stored
    /// average against the mean of its column within `avg_tol`.
    pub fn check_consistency(&self, row_tol: Real, avg_tol: Real) -> Result<()> {
        for r in &self.rows {
            let err = (r.gap - (r.s_image - r.s_match)).abs();
            if err > row_tol {
                return Err(Error::contract(format!(
                    "gap of `{}` is off by {err} from its operands",
                    r.emotion
                )));
            }
        }
        let n = self.rows.len() as Real;
        let columns = [
            ("s_image", self.average.s_image, self.rows.iter().map(|r| r.s_image).sum::<Real>()),
            ("s_match", self.average.s_match, self.rows.iter().map(|r| r.s_match).sum::<Real>()),
            ("gap", self.average.gap, self.rows.iter().map(|r| r.gap).sum::<Real>()),
        ];
        for (name, stored, sum) in columns {
            let err = (stored - sum / n).abs();
            if err > avg_tol {
                return Err(Error::contract(format!(
                    "average {name} is off by {err} from the rows"
                )));
            }
        }
        Ok(())
    }

    pub fn diff_against(&self, reference: &GapReport) -> Vec<GapDelta> {
        self.rows
            .iter()
            .filter_map(|r| {
                reference.row(r.emotion).map(|q| GapDelta {
                    emotion: r.emotion,
                    s_image: r.s_image - q.s_image,
                    s_match: r.s_match - q.s_match,
                    gap: r.gap - q.gap,
                })
            })
            .collect()
    }

    /// CSV with header `emotion,s_image,s_match,gap` and a closing `average` row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "emotion,s_image,s_match,gap")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.emotion, r.s_image, r.s_match, r.gap)?;
        }
        let a = &self.average;
        writeln!(out, "average,{},{},{}", a.s_image, a.s_match, a.gap)?;
        Ok(())
    }
}

/// Per-emotion mean pairwise image cosine (`i < j`), mean image-to-own-text
/// cosine, and their difference.
pub fn modality_gap_report(features: &FeaturesByEmotion, text: &TextByEmotion) -> Result<GapReport> {
    check_inputs(features, text)?;
    let operands = EmotionLabel::ALL
        .iter()
        .map(|e| {
            let images = &features[e];
            Ok((
                *e,
                mean_pairwise_cosine(images)?,
                mean_cosine_to(images, &text[e])?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    GapReport::from_operands(&operands)
}

/// Mean image-to-text cosine for every (image emotion, text emotion) cell,
/// rows and columns in emotion-code order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr")]
pub struct CrossModalSimilarityMatrix {
    values: Vec<Vec<Real>>,
    n_per_cell: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct MatrixRepr {
    values: Vec<Vec<Real>>,
    n_per_cell: Vec<Vec<usize>>,
}

impl TryFrom<MatrixRepr> for CrossModalSimilarityMatrix {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        CrossModalSimilarityMatrix::new(r.values, r.n_per_cell)
    }
}

impl CrossModalSimilarityMatrix {
    pub fn new(values: Vec<Vec<Real>>, n_per_cell: Vec<Vec<usize>>) -> Result<Self> {
        ensure_dim("similarity rows", EMOTION_COUNT, values.len())?;
        ensure_dim("count rows", EMOTION_COUNT, n_per_cell.len())?;
        for (row, counts) in values.iter().zip(&n_per_cell) {
            ensure_dim("similarity columns", EMOTION_COUNT, row.len())?;
            ensure_dim("count columns", EMOTION_COUNT, counts.len())?;
            if row.iter().any(|v| !(v.is_finite() && (-1.0..=1.0).contains(v))) {
                return Err(Error::contract("similarities must lie in [-1, 1]"));
            }
        }
        Ok(CrossModalSimilarityMatrix { values, n_per_cell })
    }

    pub fn get(&self, image: EmotionLabel, text: EmotionLabel) -> Real {
        self.values[image.code()][text.code()]
    }

    pub fn count(&self, image: EmotionLabel, text: EmotionLabel) -> usize {
        self.n_per_cell[image.code()][text.code()]
    }

    pub fn row(&self, image: EmotionLabel) -> &[Real] {
        &self.values[image.code()]
    }

    /// CSV with a header of text emotions and one labelled row per image emotion.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = EmotionLabel::ALL.iter().map(|e| e.to_string()).collect();
        writeln!(out, "image,{}", header.join(","))?;
        for e in EmotionLabel::ALL {
            let cells: Vec<String> = self.row(e).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{e},{}", cells.join(","))?;
        }
        Ok(())
    }
}

pub fn cross_modal_matrix(
    features: &FeaturesByEmotion,
    text: &TextByEmotion,
) -> Result<CrossModalSimilarityMatrix> {
    check_inputs(features, text)?;
    let mut values = Vec::with_capacity(EMOTION_COUNT);
    let mut counts = Vec::with_capacity(EMOTION_COUNT);
    for i in EmotionLabel::ALL {
        let images = &features[&i];
        values.push(
            EmotionLabel::ALL
                .iter()
                .map(|j| mean_cosine_to(images, &text[j]))
                .collect::<Result<Vec<_>>>()?,
        );
        counts.push(vec![images.len(); EMOTION_COUNT]);
    }
    CrossModalSimilarityMatrix::new(values, counts)
}
