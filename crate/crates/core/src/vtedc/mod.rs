//! Paired embedding extraction, source-minus-target difference vectors and the
//! difference-alignment loss.

use std::io::Write;

use crate::corpus::{CorpusManifest, EmotionLabel, Sample, Split};
use crate::encoders::{EncoderSuite, ImageRef};
use crate::error::{ensure_dim, Error, Result};
use crate::numerics::{self, cosine_similarity, cosine_similarity_grad, Scalar};
use crate::pepl::{PeplCheckpoint, PromptTable};
use crate::{Real, Vector};

/// Projected visual and personalized text embeddings of a source and a target.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEmbeddings {
    pub i_s: Vector,
    pub t_s: Vector,
    pub i_t: Vector,
    pub t_t: Vector,
    pub source_emotion: EmotionLabel,
    pub target_emotion: EmotionLabel,
}

/// Source-minus-target differences on both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferencePair {
    pub i_diff: Vector,
    pub t_diff: Vector,
    /// Either difference has norm below [`Scalar::norm_epsilon`].
    pub degenerate: bool,
}

/// Value of the difference-alignment loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Loss<S = Real> {
    pub value: S,
    pub degenerate: bool,
}

/// Embeds a source sample and a target image with a frozen checkpoint, sharing
/// one neutral reference for both prompts.
pub fn embed_pair(
    ckpt: &PeplCheckpoint,
    source: &Sample,
    target_image: &ImageRef,
    target_emotion: EmotionLabel,
    reference: &Sample,
    suite: &dyn EncoderSuite,
) -> Result<PairEmbeddings> {
    if !ckpt.is_frozen() {
        return Err(Error::contract("embed_pair needs a frozen checkpoint"));
    }
    if reference.identity != source.identity {
        return Err(Error::contract(format!(
            "reference `{}` belongs to `{}`, source to `{}`",
            reference.id, reference.identity, source.identity
        )));
    }
    let params = ckpt.params();
    let tokens = params.guider.tokens(reference, suite)?;
    let text = |emotion: EmotionLabel| -> Result<Vector> {
        suite.text_encode(&suite.tokenize(&emotion.prompt())?.with_prefix(tokens.clone())?)
    };
    let i_s = params
        .projectors
        .project(&suite.visual_encode(&source.image_ref)?, source.emotion)?;
    let i_t = params
        .projectors
        .project(&suite.visual_encode(target_image)?, target_emotion)?;
    Ok(PairEmbeddings {
        i_s,
        t_s: text(source.emotion)?,
        i_t,
        t_t: text(target_emotion)?,
        source_emotion: source.emotion,
        target_emotion,
    })
}

pub fn diff_vectors(pe: &PairEmbeddings) -> Result<DifferencePair> {
    let i_diff = pe.i_s.sub(&pe.i_t)?;
    let t_diff = pe.t_s.sub(&pe.t_t)?;
    let eps = Real::norm_epsilon();
    let degenerate = i_diff.norm() < eps || t_diff.norm() < eps;
    Ok(DifferencePair {
        i_diff,
        t_diff,
        degenerate,
    })
}

/// `1 − cos(I_diff, T_diff)` in `[0, 2]`; 1 with the flag set when degenerate.
pub fn vtedc_loss_l2(dp: &DifferencePair) -> Result<L2Loss> {
    l2_from_diffs(&dp.i_diff, &dp.t_diff)
}

pub fn l2_from_diffs<S: Scalar>(
    i_diff: &numerics::Vector<S>,
    t_diff: &numerics::Vector<S>,
) -> Result<L2Loss<S>> {
    let s = cosine_similarity(i_diff, t_diff)?;
    Ok(L2Loss {
        value: S::one() - s.value,
        degenerate: s.degenerate,
    })
}

/// Loss and gradients with respect to `i_diff` and `t_diff`.
pub fn vtedc_loss_l2_grad<S: Scalar>(
    i_diff: &numerics::Vector<S>,
    t_diff: &numerics::Vector<S>,
) -> Result<(L2Loss<S>, numerics::Vector<S>, numerics::Vector<S>)> {
    let (s, gi, gt) = cosine_similarity_grad(i_diff, t_diff)?;
    let loss = L2Loss {
        value: S::one() - s.value,
        degenerate: s.degenerate,
    };
    Ok((loss, gi.scale(-S::one()), gt.scale(-S::one())))
}

/// One exported difference row.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffRow {
    pub identity: String,
    pub source_emotion: EmotionLabel,
    pub target_emotion: EmotionLabel,
    /// Emotion of the target prompt; differs from `target_emotion` for
    /// non-corresponding text differences.
    pub text_emotion: EmotionLabel,
    pub i_diff: Vector,
    pub t_diff: Vector,
}

impl DiffRow {
    pub fn corresponding(&self) -> bool {
        self.text_emotion == self.target_emotion
    }
}

/// Difference vectors for every identity and ordered pair of distinct emotions,
/// using the first sample of each emotion in the chosen split.
///
/// With `non_corresponding`, each image difference is also paired with text
/// differences towards every other emotion.
pub fn collect_diff_rows(
    ckpt: &PeplCheckpoint,
    manifest: &CorpusManifest,
    split: Option<Split>,
    suite: &dyn EncoderSuite,
    non_corresponding: bool,
) -> Result<Vec<DiffRow>> {
    if !ckpt.is_frozen() {
        return Err(Error::contract("difference export needs a frozen checkpoint"));
    }
    let params = ckpt.params();
    let prompts = PromptTable::new(suite)?;
    let mut rows = Vec::new();
    for identity in manifest.identities() {
        let firsts: Vec<Option<&Sample>> = EmotionLabel::ALL
            .iter()
            .map(|&e| {
                manifest.samples().iter().find(|s| {
                    s.identity == identity && s.emotion == e && split.is_none_or(|sp| s.split == sp)
                })
            })
            .collect();
        let Some(any) = firsts.iter().flatten().next() else {
            continue;
        };
        let reference = manifest.neutral_reference(any)?;
        let tokens = params.guider.tokens(reference, suite)?;
        let texts: Vec<Vector> = EmotionLabel::ALL
            .iter()
            .map(|&e| suite.text_encode(&prompts.get(e).with_prefix(tokens.clone())?))
            .collect::<Result<_>>()?;
        let images: Vec<Option<Vector>> = firsts
            .iter()
            .map(|s| {
                s.map(|s| {
                    params
                        .projectors
                        .project(&suite.visual_encode(&s.image_ref)?, s.emotion)
                })
                .transpose()
            })
            .collect::<Result<_>>()?;
        for s in EmotionLabel::ALL {
            for t in EmotionLabel::ALL {
                if s == t {
                    continue;
                }
                let (Some(is), Some(it)) = (&images[s.code()], &images[t.code()]) else {
                    continue;
                };
                let i_diff = is.sub(it)?;
                for k in EmotionLabel::ALL {
                    if k == s || (k != t && !non_corresponding) {
                        continue;
                    }
                    rows.push(DiffRow {
                        identity: identity.to_owned(),
                        source_emotion: s,
                        target_emotion: t,
                        text_emotion: k,
                        i_diff: i_diff.clone(),
                        t_diff: texts[s.code()].sub(&texts[k.code()])?,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// CSV with columns `identity, source_emotion, target_emotion, text_emotion,
/// corresponding, i_diff_0.., t_diff_0..`.
pub fn write_diffs_csv<W: Write>(rows: &[DiffRow], mut out: W) -> Result<()> {
    let Some(first) = rows.first() else {
        writeln!(out, "identity,source_emotion,target_emotion,text_emotion,corresponding")?;
        return Ok(());
    };
    let d = first.i_diff.dim();
    let mut header = String::from("identity,source_emotion,target_emotion,text_emotion,corresponding");
    for i in 0..d {
        header.push_str(&format!(",i_diff_{i}"));
    }
    for i in 0..d {
        header.push_str(&format!(",t_diff_{i}"));
    }
    writeln!(out, "{header}")?;
    for r in rows {
        ensure_dim("diff row", d, r.i_diff.dim())?;
        ensure_dim("diff row", d, r.t_diff.dim())?;
        let mut line = format!(
            "{},{},{},{},{}",
            r.identity,
            r.source_emotion,
            r.target_emotion,
            r.text_emotion,
            r.corresponding()
        );
        for v in r.i_diff.iter().chain(r.t_diff.iter()) {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
