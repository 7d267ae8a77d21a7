//! Composite training objective around an opaque base loss, and a small
//! generator that demonstrates the effect of the difference-alignment term.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, EmotionLabel, Sample, Split, EMOTION_COUNT};
use crate::encoders::{EncoderSuite, SyntheticWorld};
use crate::error::{ensure_dim, Error, Result};
use crate::numerics::{cosine_similarity, SymmetricEigen};
use crate::pepl::{PeplCheckpoint, PromptTable};
use crate::vtedc::vtedc_loss_l2_grad;
use crate::{Matrix, Mlp, MlpGradients, Real, Vector};

/// Weight of the difference-alignment term for a named baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaConfig {
    pub value: Real,
    pub baseline_tag: String,
}

impl LambdaConfig {
    pub fn new(value: Real, baseline_tag: impl Into<String>) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::contract("lambda must be finite and >= 0"));
        }
        Ok(LambdaConfig {
            value,
            baseline_tag: baseline_tag.into(),
        })
    }

    /// Default weight per baseline: ned 0.4, icface 0.05, sserd 0.2, toy 0.4.
    pub fn for_baseline(tag: &str) -> Result<Self> {
        let value = match tag {
            "ned" => 0.4,
            "icface" => 0.05,
            "sserd" => 0.2,
            "toy" => 0.4,
            _ => {
                return Err(Error::contract(format!(
                    "unknown baseline `{tag}` (expected ned, icface, sserd or toy)"
                )))
            }
        };
        LambdaConfig::new(value, tag)
    }
}

/// The generator's own objective: `(generated, ground truth) → (loss, ∂loss/∂generated)`.
pub trait BaseLossHook {
    fn evaluate(&self, generated: &Vector, truth: &Vector) -> Result<(Real, Vector)>;
}

impl<F> BaseLossHook for F
where
    F: Fn(&Vector, &Vector) -> Result<(Real, Vector)>,
{
    fn evaluate(&self, generated: &Vector, truth: &Vector) -> Result<(Real, Vector)> {
        self(generated, truth)
    }
}

/// Mean squared error over embedding coordinates, `‖generated − truth‖² / d`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredError;

impl BaseLossHook for SquaredError {
    fn evaluate(&self, generated: &Vector, truth: &Vector) -> Result<(Real, Vector)> {
        let d = generated.sub(truth)?;
        let n = d.dim() as Real;
        Ok((d.dot(&d)? / n, d.scale(2.0 / n)))
    }
}

/// `base + λ·l2` and the matching gradient.
pub fn total_loss(
    base: Real,
    base_grad: &Vector,
    l2: Real,
    l2_grad: &Vector,
    lambda: &LambdaConfig,
) -> Result<(Real, Vector)> {
    ensure_dim("total_loss gradients", base_grad.dim(), l2_grad.dim())?;
    if !base.is_finite() || !l2.is_finite() || !base_grad.is_finite() || !l2_grad.is_finite() {
        return Err(Error::contract("total_loss inputs must be finite"));
    }
    if !lambda.value.is_finite() || lambda.value < 0.0 {
        return Err(Error::contract("lambda must be finite and >= 0"));
    }
    let mut grad = base_grad.clone();
    if lambda.value != 0.0 {
        grad.axpy(lambda.value, l2_grad)?;
    }
    Ok((base + lambda.value * l2, grad))
}

/// Assigns an emotion to a visual embedding.
pub trait EmotionClassifier {
    fn classify(&self, embedding: &Vector) -> Result<EmotionLabel>;
}

/// Expression recognizer for the synthetic world: recovers latent coordinates
/// by least squares against `A` and picks the emotion prototype with the
/// highest cosine to the emotion part.
#[derive(Debug, Clone)]
pub struct SyntheticFerOracle {
    pinv: Matrix,
    offset: Vector,
    d_identity: usize,
    prototypes: Vec<Vector>,
}

impl SyntheticFerOracle {
    pub fn new(world: &SyntheticWorld) -> Result<Self> {
        let a = world.visual_map();
        let at = a.transpose();
        let gram = at.matmul(a)?;
        let eig = SymmetricEigen::new(&gram)?;
        let inv = eig.map_values(|l| if l > 1e-12 { 1.0 / l } else { 0.0 });
        let d_identity = world.config().d_identity();
        let prototypes = EmotionLabel::ALL
            .iter()
            .map(|&e| {
                Vector::from_raw(world.emotion_prototype(e).as_slice()[d_identity..].to_vec())
            })
            .collect();
        Ok(SyntheticFerOracle {
            pinv: inv.matmul(&at)?,
            offset: world.offset().clone(),
            d_identity,
            prototypes,
        })
    }

    /// Least-squares latent code of an embedding.
    pub fn latent(&self, embedding: &Vector) -> Result<Vector> {
        self.pinv.matvec(&embedding.sub(&self.offset)?)
    }
}

impl EmotionClassifier for SyntheticFerOracle {
    fn classify(&self, embedding: &Vector) -> Result<EmotionLabel> {
        let z = self.latent(embedding)?;
        let part = Vector::from_raw(z.as_slice()[self.d_identity..].to_vec());
        let mut best = (EmotionLabel::Neutral, Real::NEG_INFINITY);
        for (k, p) in self.prototypes.iter().enumerate() {
            let s = cosine_similarity(&part, p)?.value;
            if s > best.1 {
                best = (EmotionLabel::from_code(k)?, s);
            }
        }
        Ok(best.0)
    }
}

/// Generator mapping a source visual embedding and a target-emotion one-hot
/// code to a generated visual embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGenerator {
    pub params: Mlp,
}

impl ToyGenerator {
    pub fn random<R: Rng + ?Sized>(d_e: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(ToyGenerator {
            params: Mlp::he_uniform(&[d_e + EMOTION_COUNT, hidden, d_e], rng)?,
        })
    }

    pub fn input(source: &Vector, target: EmotionLabel) -> Vector {
        source.concat(&Vector::one_hot(EMOTION_COUNT, target.code()))
    }

    pub fn generate(&self, source: &Vector, target: EmotionLabel) -> Result<Vector> {
        self.params.predict(&Self::input(source, target))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: Real,
    pub hidden: usize,
    /// When false the difference term is never evaluated.
    pub vtedc_enabled: bool,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 1,
            epochs: 8,
            steps_per_epoch: 25,
            batch_size: 16,
            lr: 0.3,
            hidden: 64,
            vtedc_enabled: true,
        }
    }
}

impl DemoConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 || self.hidden == 0
        {
            return Err(Error::contract(
                "epochs, steps_per_epoch, batch_size and hidden must be positive",
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::contract("lr must be finite and positive"));
        }
        Ok(())
    }
}

/// Validation metrics of one generator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRun {
    pub lambda: Real,
    pub seed: u64,
    /// Mean base loss on validation pairs.
    pub base_loss: Real,
    /// Mean difference-alignment loss on validation pairs.
    pub l2_loss: Real,
    /// Fraction of validation pairs whose generated embedding is classified
    /// as the target emotion.
    pub emotion_accuracy: Real,
    /// Mean cosine between generated and ground-truth embeddings.
    pub csim: Real,
}

/// Side-by-side runs without and with the difference-alignment term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub baseline_tag: String,
    pub seed: u64,
    pub baseline: DemoRun,
    pub supervised: DemoRun,
    /// Parameter digest of the prompt-learning checkpoint, unchanged by the demo.
    pub pepl_param_digest: String,
}

// A (source, target emotion, ground truth) example with its frozen-side
// quantities precomputed.
struct Example {
    source: Vector,
    target: EmotionLabel,
    truth: Vector,
    i_source: Vector,
    t_diff: Vector,
}

fn build_examples(
    manifest: &CorpusManifest,
    ckpt: &PeplCheckpoint,
    suite: &dyn EncoderSuite,
    split: Split,
    prompts: &PromptTable,
) -> Result<Vec<Example>> {
    let params = ckpt.params();
    let mut out = Vec::new();
    for source in manifest.split(split) {
        let reference = manifest.neutral_reference(source)?;
        let tokens = params.guider.tokens(reference, suite)?;
        let text = |e: EmotionLabel| suite.text_encode(&prompts.get(e).with_prefix(tokens.clone())?);
        let v_s = suite.visual_encode(&source.image_ref)?;
        let i_source = params.projectors.project(&v_s, source.emotion)?;
        let t_source = text(source.emotion)?;
        for target in EmotionLabel::ALL {
            if target == source.emotion {
                continue;
            }
            let Some(truth) = ground_truth(manifest, source, target) else {
                continue;
            };
            out.push(Example {
                source: v_s.clone(),
                target,
                truth: suite.visual_encode(&truth.image_ref)?,
                i_source: i_source.clone(),
                t_diff: t_source.sub(&text(target)?)?,
            });
        }
    }
    Ok(out)
}

// Same identity, target emotion; the matching instance when it exists.
fn ground_truth<'a>(
    manifest: &'a CorpusManifest,
    source: &Sample,
    target: EmotionLabel,
) -> Option<&'a Sample> {
    let instance = source.id.rsplit('-').next();
    let mut candidates = manifest
        .samples()
        .iter()
        .filter(|s| s.identity == source.identity && s.emotion == target);
    let first = candidates.clone().next();
    candidates
        .find(|s| s.id.rsplit('-').next() == instance)
        .or(first)
}

struct StepOutcome {
    base: Real,
    l2: Option<Real>,
}

fn example_step(
    generator: &ToyGenerator,
    ckpt: &PeplCheckpoint,
    ex: &Example,
    base_hook: &dyn BaseLossHook,
    lambda: &LambdaConfig,
    vtedc: bool,
    grads: Option<(&mut MlpGradients, Real)>,
) -> Result<StepOutcome> {
    let x = ToyGenerator::input(&ex.source, ex.target);
    let (generated, cache) = generator.params.forward(&x)?;
    let (base, base_grad) = base_hook.evaluate(&generated, &ex.truth)?;
    let (total_grad, l2) = if vtedc {
        let bank = &ckpt.params().projectors;
        let (i_gen, pcache) = bank.forward(&generated, ex.target)?;
        let (loss, d_idiff, _) = vtedc_loss_l2_grad(&ex.i_source.sub(&i_gen)?, &ex.t_diff)?;
        let l2_grad = bank.input_grad(&pcache, &d_idiff.scale(-1.0))?;
        let (_, g) = total_loss(base, &base_grad, loss.value, &l2_grad, lambda)?;
        (g, Some(loss.value))
    } else {
        (base_grad, None)
    };
    if let Some((acc, weight)) = grads {
        let g = generator.params.backward(&cache, &total_grad)?;
        acc.accumulate(weight, &g)?;
    }
    Ok(StepOutcome { base, l2 })
}

/// Trains a fresh generator with `λ` and evaluates it on the validation split.
pub fn train_generator(
    manifest: &CorpusManifest,
    ckpt: &PeplCheckpoint,
    lambda: &LambdaConfig,
    suite: &dyn EncoderSuite,
    classifier: &dyn EmotionClassifier,
    config: &DemoConfig,
) -> Result<(ToyGenerator, DemoRun)> {
    config.validate()?;
    if !ckpt.is_frozen() {
        return Err(Error::contract("supervision needs a frozen checkpoint"));
    }
    let prompts = PromptTable::new(suite)?;
    let train = build_examples(manifest, ckpt, suite, Split::Train, &prompts)?;
    let val = build_examples(manifest, ckpt, suite, Split::Val, &prompts)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::contract("supervision needs train and val pairs"));
    }
    let base_hook = SquaredError;
    let vtedc = config.vtedc_enabled;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut generator = ToyGenerator::random(suite.dims().d_e, config.hidden, &mut rng)?;
    let weight = 1.0 / config.batch_size as Real;

    for epoch in 0..config.epochs {
        for step in 0..config.steps_per_epoch {
            let mut grads = MlpGradients::zeros_like(&generator.params);
            let mut total = 0.0;
            for _ in 0..config.batch_size {
                let ex = &train[rng.random_range(0..train.len())];
                let o = example_step(
                    &generator, ckpt, ex, &base_hook, lambda, vtedc,
                    Some((&mut grads, weight)),
                )?;
                total += o.base + lambda.value * o.l2.unwrap_or(0.0);
            }
            if !total.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    reason: "non-finite generator loss".into(),
                });
            }
            generator.params.sgd_step(&grads, config.lr)?;
        }
    }

    let mut base_sum = 0.0;
    let mut l2_sum = 0.0;
    let mut hits = 0usize;
    let mut csim_sum = 0.0;
    for ex in &val {
        let o = example_step(&generator, ckpt, ex, &base_hook, lambda, true, None)?;
        base_sum += o.base;
        l2_sum += o.l2.unwrap_or(0.0);
        let generated = generator.generate(&ex.source, ex.target)?;
        if classifier.classify(&generated)? == ex.target {
            hits += 1;
        }
        csim_sum += cosine_similarity(&generated, &ex.truth)?.value;
    }
    let n = val.len() as Real;
    let run = DemoRun {
        lambda: lambda.value,
        seed: config.seed,
        base_loss: base_sum / n,
        l2_loss: l2_sum / n,
        emotion_accuracy: hits as Real / n,
        csim: csim_sum / n,
    };
    Ok((generator, run))
}

/// Trains the generator with `λ = 0` and with the given `λ` under the same seed.
pub fn supervise_demo(
    manifest: &CorpusManifest,
    ckpt: &PeplCheckpoint,
    lambda: &LambdaConfig,
    suite: &dyn EncoderSuite,
    classifier: &dyn EmotionClassifier,
    config: &DemoConfig,
) -> Result<DemoReport> {
    let zero = LambdaConfig::new(0.0, lambda.baseline_tag.clone())?;
    let (_, baseline) = train_generator(manifest, ckpt, &zero, suite, classifier, config)?;
    let (_, supervised) = train_generator(manifest, ckpt, lambda, suite, classifier, config)?;
    Ok(DemoReport {
        baseline_tag: lambda.baseline_tag.clone(),
        seed: config.seed,
        baseline,
        supervised,
        pepl_param_digest: ckpt.param_digest(),
    })
}

/// One generator run per grid value, all with the same seed.
pub fn sweep_lambda(
    manifest: &CorpusManifest,
    ckpt: &PeplCheckpoint,
    grid: &[Real],
    baseline_tag: &str,
    suite: &dyn EncoderSuite,
    classifier: &dyn EmotionClassifier,
    config: &DemoConfig,
) -> Result<Vec<DemoRun>> {
    if grid.is_empty() {
        return Err(Error::contract("lambda grid must not be empty"));
    }
    grid.iter()
        .map(|&v| {
            let lambda = LambdaConfig::new(v, baseline_tag)?;
            train_generator(manifest, ckpt, &lambda, suite, classifier, config).map(|(_, r)| r)
        })
        .collect()
}

/// CSV with columns `lambda,base_loss,l2_loss,emotion_accuracy,csim,seed`.
pub fn write_runs_csv<W: Write>(runs: &[DemoRun], mut out: W) -> Result<()> {
    writeln!(out, "lambda,base_loss,l2_loss,emotion_accuracy,csim,seed")?;
    for r in runs {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.lambda, r.base_loss, r.l2_loss, r.emotion_accuracy, r.csim, r.seed
        )?;
    }
    Ok(())
}
