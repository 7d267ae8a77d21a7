//! Finite-difference oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use emosup::corpus::{EmotionLabel, Sample};
use emosup::encoders::EncoderSuite;
use emosup::pepl::{
    accumulate_l1, accumulate_l2, PeplGradients, PeplParams, ProjectorBank, PromptTable,
    VisualGuider,
};
use emosup::{Mlp, Vector};
use rand::Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Parameters whose ±step crossed a ReLU kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

impl FdReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs()).max(FD_FLOOR);
        self.max_rel_error = self.max_rel_error.max((analytic - numeric).abs() / scale);
        self.checked += 1;
    }

    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }
}

fn relu_signs(mlp: &Mlp, x: &Vector) -> Vec<bool> {
    let (_, cache) = mlp.forward(x).unwrap();
    cache
        .pre_activations()
        .iter()
        .flat_map(|z| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        .collect()
}

fn with_param(mlp: &Mlp, index: usize, value: f64) -> Mlp {
    let mut m = mlp.clone();
    m.set_param(index, value);
    m
}

/// Checks the parameter and input gradients of `⟨mlp(x), upstream⟩`.
pub fn fd_check_mlp(mlp: &Mlp, x: &Vector, upstream: &Vector) -> FdReport {
    let (_, cache) = mlp.forward(x).unwrap();
    let grads = mlp.backward(&cache, upstream).unwrap();
    let f = |m: &Mlp, x: &Vector| m.predict(x).unwrap().dot(upstream).unwrap();
    let base_signs = relu_signs(mlp, x);
    let mut report = FdReport::default();
    for i in 0..mlp.param_count() {
        let p = mlp.param(i);
        let plus = with_param(mlp, i, p + FD_STEP);
        let minus = with_param(mlp, i, p - FD_STEP);
        if relu_signs(&plus, x) != base_signs || relu_signs(&minus, x) != base_signs {
            report.skipped += 1;
            continue;
        }
        let numeric = (f(&plus, x) - f(&minus, x)) / (2.0 * FD_STEP);
        report.record(grads.param(i), numeric);
    }
    for i in 0..x.dim() {
        let mut xp = x.as_slice().to_vec();
        let mut xm = xp.clone();
        xp[i] += FD_STEP;
        xm[i] -= FD_STEP;
        let (xp, xm) = (Vector::new(xp).unwrap(), Vector::new(xm).unwrap());
        if relu_signs(mlp, &xp) != base_signs || relu_signs(mlp, &xm) != base_signs {
            report.skipped += 1;
            continue;
        }
        let numeric = (f(mlp, &xp) - f(mlp, &xm)) / (2.0 * FD_STEP);
        report.record(grads.input.as_slice()[i], numeric);
    }
    report
}

/// A loss of the prompt-learning parameters together with the inputs whose
/// ReLU patterns it depends on.
pub enum PeplObjective<'a> {
    Contrastive {
        anchor: &'a Sample,
        positive: EmotionLabel,
        negative: EmotionLabel,
        reference: &'a Sample,
    },
    Difference {
        source: &'a Sample,
        target: &'a Sample,
        reference: &'a Sample,
    },
}

impl PeplObjective<'_> {
    fn evaluate(
        &self,
        params: &PeplParams,
        suite: &dyn EncoderSuite,
        prompts: &PromptTable,
    ) -> (f64, PeplGradients) {
        let mut g = PeplGradients::zeros_like(params);
        let v = match *self {
            PeplObjective::Contrastive {
                anchor,
                positive,
                negative,
                reference,
            } => {
                accumulate_l1(params, suite, prompts, anchor, positive, negative, reference, 1.0, &mut g)
                    .unwrap()
                    .value
            }
            PeplObjective::Difference {
                source,
                target,
                reference,
            } => {
                accumulate_l2(params, suite, prompts, source, target, reference, 1.0, &mut g)
                    .unwrap()
                    .value
            }
        };
        (v, g)
    }

    fn signature(&self, params: &PeplParams, suite: &dyn EncoderSuite) -> Vec<bool> {
        let bank = &params.projectors;
        let project = |s: &Sample| {
            let v = suite.visual_encode(&s.image_ref).unwrap();
            let net = &bank.networks()[bank.network_index(s.emotion)];
            let x = match bank.mode() {
                emosup::pepl::ProjectorMode::Multi => v,
                emosup::pepl::ProjectorMode::SingleConditional => {
                    v.concat(&Vector::one_hot(7, s.emotion.code()))
                }
            };
            relu_signs(net, &x)
        };
        let (reference, samples): (&Sample, Vec<&Sample>) = match *self {
            PeplObjective::Contrastive {
                anchor, reference, ..
            } => (reference, vec![anchor]),
            PeplObjective::Difference {
                source,
                target,
                reference,
            } => (reference, vec![source, target]),
        };
        let b = suite.backbone_identity(&reference.image_ref).unwrap();
        let mut sig = relu_signs(params.guider.head(), &b);
        for s in samples {
            sig.extend(project(s));
        }
        sig
    }
}

fn perturbed(params: &PeplParams, net: Option<usize>, index: usize, delta: f64) -> PeplParams {
    match net {
        None => {
            let head = params.guider.head();
            let head = with_param(head, index, head.param(index) + delta);
            PeplParams {
                guider: VisualGuider::new(head, params.guider.identity_tokens()).unwrap(),
                projectors: params.projectors.clone(),
            }
        }
        Some(k) => {
            let mut nets = params.projectors.networks().to_vec();
            let p = nets[k].param(index);
            nets[k].set_param(index, p + delta);
            PeplParams {
                guider: params.guider.clone(),
                projectors: ProjectorBank::from_networks(params.projectors.mode(), nets).unwrap(),
            }
        }
    }
}

/// Finite-difference check over up to `per_network` randomly chosen parameters
/// of the guider head and of every projector.
pub fn fd_check_pepl<R: Rng>(
    params: &PeplParams,
    suite: &dyn EncoderSuite,
    objective: &PeplObjective<'_>,
    per_network: usize,
    rng: &mut R,
) -> FdReport {
    let prompts = PromptTable::new(suite).unwrap();
    let (_, grads) = objective.evaluate(params, suite, &prompts);
    let base = objective.signature(params, suite);
    let mut report = FdReport::default();
    let mut networks: Vec<(Option<usize>, usize)> =
        vec![(None, params.guider.head().param_count())];
    for (k, n) in params.projectors.networks().iter().enumerate() {
        networks.push((Some(k), n.param_count()));
    }
    for (net, count) in networks {
        for _ in 0..per_network.min(count) {
            let i = rng.random_range(0..count);
            let plus = perturbed(params, net, i, FD_STEP);
            let minus = perturbed(params, net, i, -FD_STEP);
            if objective.signature(&plus, suite) != base || objective.signature(&minus, suite) != base {
                report.skipped += 1;
                continue;
            }
            let numeric = (objective.evaluate(&plus, suite, &prompts).0
                - objective.evaluate(&minus, suite, &prompts).0)
                / (2.0 * FD_STEP);
            let analytic = match net {
                None => grads.guider.param(i),
                Some(k) => grads.projectors[k].param(i),
            };
            report.record(analytic, numeric);
        }
    }
    report
}

/// Measured and predicted modality gap for one emotion.
#[derive(Debug, Clone, Copy)]
pub struct GapCheck {
    pub emotion: EmotionLabel,
    pub measured: f64,
    pub expected: f64,
    /// Monte-Carlo standard error of `measured`.
    pub sigma: f64,
}

/// `E[(μ + σZ) / sqrt((μ + σZ)² + σ²Q)]` with `Z ~ N(0, 1)` and `Q ~ χ²(d − 1)`,
/// by composite Simpson quadrature. For isotropic noise ε, `E[cos(m + ε, t)]`
/// equals `cos(m, t) · shrinkage(|m|, σ, d)`, since only the component of ε
/// along `m` and the norm of the rest enter.
pub fn shrinkage(mu: f64, sigma: f64, d: usize) -> f64 {
    use statrs::distribution::{ChiSquared, Continuous};
    let chi = ChiSquared::new((d - 1) as f64).unwrap();
    let k = (d - 1) as f64;
    let (q_lo, q_hi) = ((k - 12.0 * (2.0 * k).sqrt()).max(0.0), k + 16.0 * (2.0 * k).sqrt());
    let simpson = |lo: f64, hi: f64, n: usize, f: &dyn Fn(f64) -> f64| {
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
        }
        acc * h / 3.0
    };
    let gauss = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    simpson(q_lo, q_hi, 800, &|q: f64| {
        let inner = simpson(-9.0, 9.0, 600, &|z: f64| {
            let x = mu + sigma * z;
            gauss(z) * x / (x * x + sigma * sigma * q).sqrt()
        });
        chi.pdf(q) * inner
    })
}

/// Draws `per_cell` images per (identity, emotion) from a synthetic world,
/// measures the gap report on them and predicts each row from the generative
/// model. The standard error comes from the per-image influence of the
/// pairwise-mean and text-mean statistics, pooled within identities.
pub fn gap_monte_carlo(world: &emosup::encoders::SyntheticWorld, per_cell: usize) -> Vec<GapCheck> {
    use emosup::analysis::{modality_gap_report, template_text_embeddings, FeaturesByEmotion};
    use emosup::encoders::ImageKey;
    use emosup::numerics::cosine_similarity;

    let n_id = world.n_identities();
    let sigma = world.config().noise_sigma;
    let d = world.dims().d_e;
    let text = template_text_embeddings(world).unwrap();
    let mut features = FeaturesByEmotion::new();
    for e in EmotionLabel::ALL {
        let mut images = Vec::with_capacity(n_id * per_cell);
        for identity in 0..n_id {
            for instance in 0..per_cell {
                let key = ImageKey { identity, emotion: e, instance };
                images.push(world.visual_encode(&key.to_ref()).unwrap());
            }
        }
        features.insert(e, images);
    }
    let report = modality_gap_report(&features, &text).unwrap();

    let mut out = Vec::new();
    for e in EmotionLabel::ALL {
        let t = &text[&e];
        let means: Vec<Vector> = (0..n_id).map(|i| world.clean_visual(i, e).unwrap()).collect();
        let kappa: Vec<f64> = means.iter().map(|m| shrinkage(m.norm(), sigma, d)).collect();
        let n = n_id * per_cell;
        let total_pairs = (n * (n - 1) / 2) as f64;
        let mut s_image = 0.0;
        for a in 0..n_id {
            for b in a..n_id {
                let pairs = if a == b { per_cell * (per_cell - 1) / 2 } else { per_cell * per_cell };
                let c = cosine_similarity(&means[a], &means[b]).unwrap().value;
                s_image += pairs as f64 * c * kappa[a] * kappa[b];
            }
        }
        s_image /= total_pairs;
        let s_match = means
            .iter()
            .zip(&kappa)
            .map(|(m, k)| cosine_similarity(m, t).unwrap().value * k)
            .sum::<f64>()
            / n_id as f64;

        let images = &features[&e];
        let row = report.row(e).unwrap();
        let mut psi = vec![0.0; n];
        for a in 0..n {
            let mut h = 0.0;
            for b in 0..n {
                if a != b {
                    h += cosine_similarity(&images[a], &images[b]).unwrap().value;
                }
            }
            let h = h / (n - 1) as f64;
            let c = cosine_similarity(&images[a], t).unwrap().value;
            psi[a] = 2.0 * (h - row.s_image) - (c - row.s_match);
        }
        let mut within = 0.0;
        for identity in 0..n_id {
            let group = &psi[identity * per_cell..(identity + 1) * per_cell];
            let mean = group.iter().sum::<f64>() / per_cell as f64;
            within += group.iter().map(|p| (p - mean).powi(2)).sum::<f64>();
        }
        let var = within / (n - n_id) as f64;
        out.push(GapCheck {
            emotion: e,
            measured: row.gap,
            expected: s_image - s_match,
            sigma: (var / n as f64).sqrt(),
        });
    }
    out
}
