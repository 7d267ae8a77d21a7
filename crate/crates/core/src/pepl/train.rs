use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{PeplCheckpoint, TrainingMetadata};
use super::model::{
    accumulate_l1, accumulate_l2, personalized_text_embeddings, PeplGradients, PeplParams,
    ProjectorMode, PromptTable,
};
use crate::corpus::{CorpusManifest, NegativePoolTable, Sampler, Split};
use crate::encoders::EncoderSuite;
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, MomentumSgd};
use crate::{Mlp, Real};

/// Pre-training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeplConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Initial learning rate.
    pub lr: Real,
    /// Epochs (0-based) at whose start the learning rate is divided by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: Real,
    pub batch_size: usize,
    /// Batches drawn per epoch; anchors are sampled with replacement.
    pub steps_per_epoch: usize,
    pub momentum: Real,
    pub projector_mode: ProjectorMode,
    pub identity_tokens: usize,
}

impl Default for PeplConfig {
    fn default() -> Self {
        PeplConfig {
            seed: 1,
            epochs: 10,
            lr: 0.1,
            decay_epochs: vec![2, 4, 6],
            decay_factor: 10.0,
            batch_size: 32,
            steps_per_epoch: 200,
            momentum: 0.0,
            projector_mode: ProjectorMode::Multi,
            identity_tokens: 1,
        }
    }
}

impl PeplConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::contract(
                "epochs, batch_size and steps_per_epoch must be positive",
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::contract("lr must be finite and positive"));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0) {
            return Err(Error::contract("decay_factor must be finite and positive"));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::contract("momentum must lie in [0, 1)"));
        }
        if self.identity_tokens == 0 {
            return Err(Error::contract("identity_tokens must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> Real {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr / self.decay_factor.powi(decays as i32)
    }
}

/// Per-epoch mean loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: usize,
    pub loss: Real,
    pub lr: Real,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossCurve {
    pub points: Vec<CurvePoint>,
}

impl LossCurve {
    pub fn first_loss(&self) -> Option<Real> {
        self.points.first().map(|p| p.loss)
    }

    pub fn final_loss(&self) -> Option<Real> {
        self.points.last().map(|p| p.loss)
    }

    /// CSV with header `epoch,step,loss,lr`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,step,loss,lr")?;
        for p in &self.points {
            writeln!(out, "{},{},{},{}", p.epoch, p.step, p.loss, p.lr)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV is ASCII"))
    }
}

/// Output of a training run: the frozen checkpoint and its loss curve.
#[derive(Debug, Clone)]
pub struct PeplRun {
    pub checkpoint: PeplCheckpoint,
    pub curve: LossCurve,
}

#[derive(Clone, Copy)]
enum Objective {
    Contrastive,
    Difference,
}

impl Objective {
    fn tag(self) -> &'static str {
        match self {
            Objective::Contrastive => "l1",
            Objective::Difference => "l2",
        }
    }
}

struct Optimizers {
    guider: MomentumSgd<Real>,
    projectors: Vec<MomentumSgd<Real>>,
}

impl Optimizers {
    fn new(params: &PeplParams, momentum: Real) -> Result<Self> {
        Ok(Optimizers {
            guider: MomentumSgd::new(momentum)?,
            projectors: params
                .projectors
                .networks()
                .iter()
                .map(|_| MomentumSgd::new(momentum))
                .collect::<Result<_>>()?,
        })
    }

    fn step(&mut self, params: &mut PeplParams, grads: &PeplGradients, lr: Real) -> Result<()> {
        self.guider.step(params.guider.head_mut(), &grads.guider, lr)?;
        let nets: &mut [Mlp] = params.projectors.networks_mut();
        for ((opt, net), g) in self.projectors.iter_mut().zip(nets).zip(&grads.projectors) {
            opt.step(net, g, lr)?;
        }
        Ok(())
    }
}

fn run(
    manifest: &CorpusManifest,
    pools: &NegativePoolTable,
    suite: &dyn EncoderSuite,
    config: &PeplConfig,
    objective: Objective,
) -> Result<PeplRun> {
    config.validate()?;
    let dims = suite.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = PeplParams::random(dims, config.projector_mode, config.identity_tokens, &mut rng)?;
    let sampler = Sampler::new(manifest, pools)?;
    let prompts = PromptTable::new(suite)?;
    let mut opt = Optimizers::new(&params, config.momentum)?;
    let weight = 1.0 / config.batch_size as Real;
    let mut curve = LossCurve::default();
    let mut step = 0;

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut epoch_sum = 0.0;
        for _ in 0..config.steps_per_epoch {
            let mut grads = PeplGradients::zeros_like(&params);
            let mut batch_loss = 0.0;
            match objective {
                Objective::Contrastive => {
                    for e in sampler.contrastive_batch(config.batch_size, &mut rng)?.entries {
                        let l = accumulate_l1(
                            &params, suite, &prompts, e.anchor, e.positive, e.negative,
                            e.reference, weight, &mut grads,
                        )?;
                        batch_loss += l.value;
                    }
                }
                Objective::Difference => {
                    for p in sampler.pair_batch(config.batch_size, &mut rng)? {
                        let l = accumulate_l2(
                            &params, suite, &prompts, p.source, p.target, p.reference, weight,
                            &mut grads,
                        )?;
                        batch_loss += l.value;
                    }
                }
            }
            batch_loss *= weight;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    reason: "non-finite loss or gradient".into(),
                });
            }
            opt.step(&mut params, &grads, lr).map_err(|e| Error::Diverged {
                epoch,
                step,
                reason: e.to_string(),
            })?;
            epoch_sum += batch_loss;
            step += 1;
        }
        let loss = epoch_sum / config.steps_per_epoch as Real;
        log::debug!("epoch {epoch}: mean {} {loss:.6} (lr {lr})", objective.tag());
        curve.points.push(CurvePoint {
            epoch,
            step,
            loss,
            lr,
        });
    }

    let metadata = TrainingMetadata {
        seed: config.seed,
        epochs: config.epochs,
        steps_per_epoch: config.steps_per_epoch,
        batch_size: config.batch_size,
        objective: objective.tag().to_owned(),
        final_loss: curve.final_loss().unwrap_or(Real::NAN),
    };
    let checkpoint = PeplCheckpoint::new(params, dims, Some(metadata)).frozen();
    Ok(PeplRun { checkpoint, curve })
}

/// Contrastive pre-training by SGD with a step-decayed learning rate.
pub fn pretrain_pepl(
    manifest: &CorpusManifest,
    pools: &NegativePoolTable,
    suite: &dyn EncoderSuite,
    config: &PeplConfig,
) -> Result<PeplRun> {
    run(manifest, pools, suite, config, Objective::Contrastive)
}

/// Same loop with the difference-alignment objective over same-identity
/// (source, target) pairs in place of the contrastive loss.
pub fn pretrain_with_vtedc_objective(
    manifest: &CorpusManifest,
    pools: &NegativePoolTable,
    suite: &dyn EncoderSuite,
    config: &PeplConfig,
) -> Result<PeplRun> {
    run(manifest, pools, suite, config, Objective::Difference)
}

/// Fraction of split samples whose own-emotion personalized text embedding is
/// the most similar of the seven to the projected visual embedding. Ties go to
/// the lower emotion code.
pub fn retrieval_accuracy(
    ckpt: &PeplCheckpoint,
    manifest: &CorpusManifest,
    split: Split,
    suite: &dyn EncoderSuite,
) -> Result<Real> {
    if !ckpt.is_frozen() {
        return Err(Error::contract("retrieval_accuracy needs a frozen checkpoint"));
    }
    let params = ckpt.params();
    let prompts = PromptTable::new(suite)?;
    let mut n = 0usize;
    let mut correct = 0usize;
    for sample in manifest.split(split) {
        let reference = manifest.neutral_reference(sample)?;
        let texts = personalized_text_embeddings(&params.guider, reference, &prompts, suite)?;
        let visual = params
            .projectors
            .project(&suite.visual_encode(&sample.image_ref)?, sample.emotion)?;
        let mut best = (0, Real::NEG_INFINITY);
        for (k, t) in texts.iter().enumerate() {
            let s = cosine_similarity(t, &visual)?.value;
            if s > best.1 {
                best = (k, s);
            }
        }
        n += 1;
        if best.0 == sample.emotion.code() {
            correct += 1;
        }
    }
    if n == 0 {
        return Err(Error::contract("retrieval split is empty"));
    }
    Ok(correct as Real / n as Real)
}
