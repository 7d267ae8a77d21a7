use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{contrastive_loss_l1_grad, L1Loss};
use crate::corpus::{EmotionLabel, Sample, EMOTION_COUNT};
use crate::encoders::{EncoderDims, EncoderSuite, TokenSequence};
use crate::error::{ensure_dim, Error, Result};
use crate::numerics::ForwardCache;
use crate::vtedc::{vtedc_loss_l2_grad, L2Loss};
use crate::{Mlp, MlpGradients, Real, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorMode {
    /// One projector per emotion.
    #[default]
    Multi,
    /// One shared projector fed the visual embedding and a one-hot emotion code.
    SingleConditional,
}

impl fmt::Display for ProjectorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectorMode::Multi => "multi",
            ProjectorMode::SingleConditional => "single_conditional",
        })
    }
}

impl FromStr for ProjectorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(ProjectorMode::Multi),
            "single_conditional" => Ok(ProjectorMode::SingleConditional),
            _ => Err(Error::contract(format!(
                "unknown projector mode `{s}` (expected multi or single_conditional)"
            ))),
        }
    }
}

/// Emotion projectors mapping frozen visual embeddings to emotion-centric ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorBank {
    mode: ProjectorMode,
    networks: Vec<Mlp>,
}

/// Forward state of one projector call.
#[derive(Debug, Clone)]
pub struct ProjectorCache {
    index: usize,
    cache: ForwardCache<Real>,
}

impl ProjectorBank {
    /// Hidden widths `[d_e, d_e/2, d_e]`.
    pub fn hidden_widths(d_e: usize) -> [usize; 3] {
        [d_e, (d_e / 2).max(1), d_e]
    }

    fn input_dim(mode: ProjectorMode, d_e: usize) -> usize {
        match mode {
            ProjectorMode::Multi => d_e,
            ProjectorMode::SingleConditional => d_e + EMOTION_COUNT,
        }
    }

    fn network_count(mode: ProjectorMode) -> usize {
        match mode {
            ProjectorMode::Multi => EMOTION_COUNT,
            ProjectorMode::SingleConditional => 1,
        }
    }

    pub fn random<R: Rng + ?Sized>(mode: ProjectorMode, d_e: usize, rng: &mut R) -> Result<Self> {
        let [h1, h2, h3] = Self::hidden_widths(d_e);
        let widths = [Self::input_dim(mode, d_e), h1, h2, h3, d_e];
        let networks = (0..Self::network_count(mode))
            .map(|_| Mlp::he_uniform(&widths, rng))
            .collect::<Result<_>>()?;
        Ok(ProjectorBank { mode, networks })
    }

    pub fn from_networks(mode: ProjectorMode, networks: Vec<Mlp>) -> Result<Self> {
        ensure_dim("projector count", Self::network_count(mode), networks.len())?;
        let d_e = networks[0].output_dim();
        for n in &networks {
            ensure_dim("projector output", d_e, n.output_dim())?;
            ensure_dim("projector input", Self::input_dim(mode, d_e), n.input_dim())?;
        }
        Ok(ProjectorBank { mode, networks })
    }

    pub fn mode(&self) -> ProjectorMode {
        self.mode
    }

    pub fn d_e(&self) -> usize {
        self.networks[0].output_dim()
    }

    pub fn networks(&self) -> &[Mlp] {
        &self.networks
    }

    pub(crate) fn networks_mut(&mut self) -> &mut [Mlp] {
        &mut self.networks
    }

    /// Index of the network that serves `emotion`.
    pub fn network_index(&self, emotion: EmotionLabel) -> usize {
        match self.mode {
            ProjectorMode::Multi => emotion.code(),
            ProjectorMode::SingleConditional => 0,
        }
    }

    fn input(&self, visual: &Vector, emotion: EmotionLabel) -> Result<Vector> {
        ensure_dim("projector visual input", self.d_e(), visual.dim())?;
        Ok(match self.mode {
            ProjectorMode::Multi => visual.clone(),
            ProjectorMode::SingleConditional => {
                visual.concat(&Vector::one_hot(EMOTION_COUNT, emotion.code()))
            }
        })
    }

    pub fn project(&self, visual: &Vector, emotion: EmotionLabel) -> Result<Vector> {
        let x = self.input(visual, emotion)?;
        self.networks[self.network_index(emotion)].predict(&x)
    }

    pub fn forward(&self, visual: &Vector, emotion: EmotionLabel) -> Result<(Vector, ProjectorCache)> {
        let x = self.input(visual, emotion)?;
        let index = self.network_index(emotion);
        let (y, cache) = self.networks[index].forward(&x)?;
        Ok((y, ProjectorCache { index, cache }))
    }

    /// Adds `weight ·` the parameter gradient of `⟨output, upstream⟩` into `grads`
    /// and returns the gradient with respect to the visual embedding.
    pub fn backward(
        &self,
        cache: &ProjectorCache,
        upstream: &Vector,
        weight: Real,
        grads: &mut [MlpGradients],
    ) -> Result<Vector> {
        let g = self.networks[cache.index].backward(&cache.cache, upstream)?;
        grads[cache.index].accumulate(weight, &g)?;
        let d_e = self.d_e();
        Ok(Vector::from_raw(g.input.as_slice()[..d_e].to_vec()))
    }

    /// Gradient of `⟨output, upstream⟩` with respect to the visual embedding only.
    pub fn input_grad(&self, cache: &ProjectorCache, upstream: &Vector) -> Result<Vector> {
        let g = self.networks[cache.index].backward(&cache.cache, upstream)?;
        Ok(Vector::from_raw(g.input.as_slice()[..self.d_e()].to_vec()))
    }
}

/// Learnable head on top of the frozen identity backbone; emits the identity
/// tokens that are prepended to a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualGuider {
    head: Mlp,
    identity_tokens: usize,
}

impl VisualGuider {
    pub fn random<R: Rng + ?Sized>(dims: EncoderDims, identity_tokens: usize, rng: &mut R) -> Result<Self> {
        if identity_tokens == 0 {
            return Err(Error::contract("identity_tokens must be at least 1"));
        }
        let head = Mlp::he_uniform(&[dims.d_b, dims.d_tok, dims.d_tok * identity_tokens], rng)?;
        Ok(VisualGuider {
            head,
            identity_tokens,
        })
    }

    pub fn new(head: Mlp, identity_tokens: usize) -> Result<Self> {
        if identity_tokens == 0 || head.output_dim() % identity_tokens != 0 {
            return Err(Error::contract(
                "guider head output must split evenly into identity tokens",
            ));
        }
        Ok(VisualGuider {
            head,
            identity_tokens,
        })
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub(crate) fn head_mut(&mut self) -> &mut Mlp {
        &mut self.head
    }

    pub fn identity_tokens(&self) -> usize {
        self.identity_tokens
    }

    pub fn token_dim(&self) -> usize {
        self.head.output_dim() / self.identity_tokens
    }

    fn split(&self, out: &Vector) -> Vec<Vector> {
        out.as_slice()
            .chunks(self.token_dim())
            .map(|c| Vector::from_raw(c.to_vec()))
            .collect()
    }

    fn check_reference(reference: &Sample) -> Result<()> {
        if reference.emotion != EmotionLabel::Neutral {
            return Err(Error::contract(format!(
                "reference `{}` must be neutral, found `{}`",
                reference.id, reference.emotion
            )));
        }
        Ok(())
    }

    /// Identity tokens for a neutral reference image.
    pub fn tokens(&self, reference: &Sample, suite: &dyn EncoderSuite) -> Result<Vec<Vector>> {
        Self::check_reference(reference)?;
        let b = suite.backbone_identity(&reference.image_ref)?;
        Ok(self.split(&self.head.predict(&b)?))
    }

    fn forward(
        &self,
        reference: &Sample,
        suite: &dyn EncoderSuite,
    ) -> Result<(Vec<Vector>, ForwardCache<Real>)> {
        Self::check_reference(reference)?;
        let b = suite.backbone_identity(&reference.image_ref)?;
        let (out, cache) = self.head.forward(&b)?;
        Ok((self.split(&out), cache))
    }
}

/// Learnable state of the prompt-learning module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeplParams {
    pub guider: VisualGuider,
    pub projectors: ProjectorBank,
}

impl PeplParams {
    pub fn random<R: Rng + ?Sized>(
        dims: EncoderDims,
        mode: ProjectorMode,
        identity_tokens: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let guider = VisualGuider::random(dims, identity_tokens, rng)?;
        let projectors = ProjectorBank::random(mode, dims.d_e, rng)?;
        Ok(PeplParams { guider, projectors })
    }

    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = self.guider.head.param_bytes();
        for n in &self.projectors.networks {
            out.extend(n.param_bytes());
        }
        out
    }
}

/// Gradients for every learnable parameter of [`PeplParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct PeplGradients {
    pub guider: MlpGradients,
    pub projectors: Vec<MlpGradients>,
}

impl PeplGradients {
    pub fn zeros_like(params: &PeplParams) -> Self {
        PeplGradients {
            guider: MlpGradients::zeros_like(&params.guider.head),
            projectors: params
                .projectors
                .networks
                .iter()
                .map(MlpGradients::zeros_like)
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.guider.is_finite() && self.projectors.iter().all(|g| g.is_finite())
    }
}

/// The seven tokenized template prompts of a suite.
#[derive(Debug, Clone)]
pub struct PromptTable {
    prompts: Vec<TokenSequence>,
}

impl PromptTable {
    pub fn new(suite: &dyn EncoderSuite) -> Result<Self> {
        let prompts = EmotionLabel::ALL
            .iter()
            .map(|e| suite.tokenize(&e.prompt()))
            .collect::<Result<_>>()?;
        Ok(PromptTable { prompts })
    }

    pub fn get(&self, emotion: EmotionLabel) -> &TokenSequence {
        &self.prompts[emotion.code()]
    }
}

/// Identity tokens followed by the tokenized emotion prompt.
pub fn build_personalized_prompt(
    guider: &VisualGuider,
    reference: &Sample,
    emotion: EmotionLabel,
    suite: &dyn EncoderSuite,
) -> Result<TokenSequence> {
    let tokens = guider.tokens(reference, suite)?;
    suite.tokenize(&emotion.prompt())?.with_prefix(tokens)
}

pub fn personalized_text_embedding(prompt: &TokenSequence, suite: &dyn EncoderSuite) -> Result<Vector> {
    suite.text_encode(prompt)
}

/// Projected visual embedding of a sample, using the projector of its emotion.
pub fn emotion_visual_embedding(
    bank: &ProjectorBank,
    sample: &Sample,
    suite: &dyn EncoderSuite,
) -> Result<Vector> {
    let v = suite.visual_encode(&sample.image_ref)?;
    bank.project(&v, sample.emotion)
}

/// Personalized text embeddings of all seven emotions for one reference.
pub fn personalized_text_embeddings(
    guider: &VisualGuider,
    reference: &Sample,
    prompts: &PromptTable,
    suite: &dyn EncoderSuite,
) -> Result<Vec<Vector>> {
    let tokens = guider.tokens(reference, suite)?;
    EmotionLabel::ALL
        .iter()
        .map(|&e| suite.text_encode(&prompts.get(e).with_prefix(tokens.clone())?))
        .collect()
}

// Guider forward pass shared by the positive and negative prompts.
struct GuiderPass {
    tokens: Vec<Vector>,
    cache: ForwardCache<Real>,
}

impl GuiderPass {
    fn new(params: &PeplParams, reference: &Sample, suite: &dyn EncoderSuite) -> Result<Self> {
        let (tokens, cache) = params.guider.forward(reference, suite)?;
        Ok(GuiderPass { tokens, cache })
    }

    fn prompt(&self, prompts: &PromptTable, emotion: EmotionLabel) -> Result<TokenSequence> {
        prompts.get(emotion).with_prefix(self.tokens.clone())
    }

    // Back-propagates text-embedding gradients of several prompts into the head.
    fn backward(
        &self,
        params: &PeplParams,
        suite: &dyn EncoderSuite,
        upstream: &[(&TokenSequence, &Vector)],
        weight: Real,
        grads: &mut MlpGradients,
    ) -> Result<()> {
        let n = params.guider.identity_tokens;
        let mut head_up = Vec::with_capacity(n * params.guider.token_dim());
        for j in 0..n {
            let mut g = Vector::zeros(params.guider.token_dim());
            for (seq, up) in upstream {
                g.axpy(1.0, &suite.text_encode_token_grad(seq, j, up)?)?;
            }
            head_up.extend_from_slice(g.as_slice());
        }
        let g = params
            .guider
            .head
            .backward(&self.cache, &Vector::from_raw(head_up))?;
        grads.accumulate(weight, &g)
    }
}

/// Contrastive loss of one triplet; adds `weight ·` its parameter gradient to `grads`.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_l1(
    params: &PeplParams,
    suite: &dyn EncoderSuite,
    prompts: &PromptTable,
    anchor: &Sample,
    positive: EmotionLabel,
    negative: EmotionLabel,
    reference: &Sample,
    weight: Real,
    grads: &mut PeplGradients,
) -> Result<L1Loss> {
    let guider = GuiderPass::new(params, reference, suite)?;
    let pos_seq = guider.prompt(prompts, positive)?;
    let neg_seq = guider.prompt(prompts, negative)?;
    let t_pos = suite.text_encode(&pos_seq)?;
    let t_neg = suite.text_encode(&neg_seq)?;
    let v = suite.visual_encode(&anchor.image_ref)?;
    let (i_vis, pcache) = params.projectors.forward(&v, anchor.emotion)?;

    let (loss, g) = contrastive_loss_l1_grad(&t_pos, &t_neg, &i_vis)?;
    params
        .projectors
        .backward(&pcache, &g.visual, weight, &mut grads.projectors)?;
    guider.backward(
        params,
        suite,
        &[(&pos_seq, &g.positive), (&neg_seq, &g.negative)],
        weight,
        &mut grads.guider,
    )?;
    Ok(loss)
}

/// Difference-alignment loss of one (source, target) pair; adds `weight ·` its
/// parameter gradient to `grads`.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_l2(
    params: &PeplParams,
    suite: &dyn EncoderSuite,
    prompts: &PromptTable,
    source: &Sample,
    target: &Sample,
    reference: &Sample,
    weight: Real,
    grads: &mut PeplGradients,
) -> Result<L2Loss> {
    let guider = GuiderPass::new(params, reference, suite)?;
    let s_seq = guider.prompt(prompts, source.emotion)?;
    let t_seq = guider.prompt(prompts, target.emotion)?;
    let t_s = suite.text_encode(&s_seq)?;
    let t_t = suite.text_encode(&t_seq)?;
    let (i_s, cs) = params
        .projectors
        .forward(&suite.visual_encode(&source.image_ref)?, source.emotion)?;
    let (i_t, ct) = params
        .projectors
        .forward(&suite.visual_encode(&target.image_ref)?, target.emotion)?;

    let (loss, d_idiff, d_tdiff) = vtedc_loss_l2_grad(&i_s.sub(&i_t)?, &t_s.sub(&t_t)?)?;
    params
        .projectors
        .backward(&cs, &d_idiff, weight, &mut grads.projectors)?;
    params
        .projectors
        .backward(&ct, &d_idiff.scale(-1.0), weight, &mut grads.projectors)?;
    let neg = d_tdiff.scale(-1.0);
    guider.backward(
        params,
        suite,
        &[(&s_seq, &d_tdiff), (&t_seq, &neg)],
        weight,
        &mut grads.guider,
    )?;
    Ok(loss)
}
