use crate::error::Result;
use crate::numerics::{cosine_similarity, cosine_similarity_grad};
use crate::{Real, Vector};

/// Value of the contrastive objective for one triplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Loss {
    pub value: Real,
    /// The positive similarity hit a zero-norm input and was taken as 0.
    pub degenerate_positive: bool,
    /// The negative similarity hit a zero-norm input and was taken as 0.
    pub degenerate_negative: bool,
}

/// Gradients of [`contrastive_loss_l1`] with respect to its three inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Gradients {
    pub positive: Vector,
    pub negative: Vector,
    pub visual: Vector,
}

/// `(1 − sim(Tpos, I)) + sim(Tneg, I)`, in `[−1, 3]`.
pub fn contrastive_loss_l1(positive: &Vector, negative: &Vector, visual: &Vector) -> Result<L1Loss> {
    let sp = cosine_similarity(positive, visual)?;
    let sn = cosine_similarity(negative, visual)?;
    Ok(L1Loss {
        value: (1.0 - sp.value) + sn.value,
        degenerate_positive: sp.degenerate,
        degenerate_negative: sn.degenerate,
    })
}

pub fn contrastive_loss_l1_grad(
    positive: &Vector,
    negative: &Vector,
    visual: &Vector,
) -> Result<(L1Loss, L1Gradients)> {
    let (sp, dp_t, dp_i) = cosine_similarity_grad(positive, visual)?;
    let (sn, dn_t, dn_i) = cosine_similarity_grad(negative, visual)?;
    let loss = L1Loss {
        value: (1.0 - sp.value) + sn.value,
        degenerate_positive: sp.degenerate,
        degenerate_negative: sn.degenerate,
    };
    let grads = L1Gradients {
        positive: dp_t.scale(-1.0),
        negative: dn_t,
        visual: dn_i.sub(&dp_i)?,
    };
    Ok((loss, grads))
}
