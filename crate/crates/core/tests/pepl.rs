use std::sync::OnceLock;

use emosup::analysis::load_paper_pools;
use emosup::corpus::{generate_synthetic_corpus, CorpusManifest, NegativePoolTable, Split};
use emosup::encoders::{build_synthetic_world, EncoderSuite, SyntheticWorld, WorldConfig};
use emosup::pepl::{
    pretrain_pepl, pretrain_with_vtedc_objective, retrieval_accuracy, PeplCheckpoint, PeplConfig,
    PeplParams, PeplRun, ProjectorMode,
};
use emosup::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PINNED_CURVE: &str = include_str!("fixtures/pepl_curve_seed1.csv");

struct Setup {
    world: SyntheticWorld,
    manifest: CorpusManifest,
    run: PeplRun,
}

fn setup() -> &'static Setup {
    static SETUP: OnceLock<Setup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let world = build_synthetic_world(1, &WorldConfig::default()).unwrap();
        let manifest = generate_synthetic_corpus(&world, 3).unwrap();
        let pools = load_paper_pools().unwrap();
        let run = pretrain_pepl(&manifest, &pools, &world, &PeplConfig::default()).unwrap();
        Setup { world, manifest, run }
    })
}

#[test]
fn default_run_converges() {
    let s = setup();
    let curve = &s.run.curve;
    assert_eq!(curve.points.len(), 10);
    assert!(curve.final_loss().unwrap() < 0.1 * curve.first_loss().unwrap());
    let acc = retrieval_accuracy(&s.run.checkpoint, &s.manifest, Split::Val, &s.world).unwrap();
    assert!(acc > 0.95, "val retrieval {acc}");
}

#[test]
fn default_run_matches_pinned_curve() {
    let got = setup().run.curve.to_csv().unwrap();
    let rows = |text: &str| -> Vec<Vec<f64>> {
        text.lines()
            .skip(1)
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect()
    };
    let (got, want) = (rows(&got), rows(PINNED_CURVE));
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        for (a, b) in g.iter().zip(w) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{g:?} vs {w:?}");
        }
    }
}

#[test]
fn lr_schedule_divides_by_ten() {
    let c = PeplConfig::default();
    let lrs: Vec<f64> = setup().run.curve.points.iter().map(|p| p.lr).collect();
    assert_eq!(lrs, (0..10).map(|e| c.lr_at(e)).collect::<Vec<_>>());
    assert_eq!(c.lr_at(0), 0.1);
    assert!((c.lr_at(2) - 0.01).abs() < 1e-18);
    assert!((c.lr_at(9) - 1e-4).abs() < 1e-18);
}

#[test]
fn training_is_deterministic() {
    let s = setup();
    let config = PeplConfig { epochs: 2, ..PeplConfig::default() };
    let pools = NegativePoolTable::all_others();
    let a = pretrain_pepl(&s.manifest, &pools, &s.world, &config).unwrap();
    let b = pretrain_pepl(&s.manifest, &pools, &s.world, &config).unwrap();
    assert_eq!(a.checkpoint.to_json().unwrap(), b.checkpoint.to_json().unwrap());
    assert_eq!(a.curve, b.curve);
    let other = pretrain_pepl(&s.manifest, &pools, &s.world, &PeplConfig { seed: 2, ..config }).unwrap();
    assert_ne!(a.checkpoint.param_digest(), other.checkpoint.param_digest());
}

#[test]
fn checkpoint_roundtrip_and_frozen_contract() {
    let s = setup();
    let ckpt = &s.run.checkpoint;
    assert!(ckpt.is_frozen());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    ckpt.save(&path).unwrap();
    let loaded = PeplCheckpoint::load(&path).unwrap();
    assert_eq!(&loaded, ckpt);
    assert_eq!(loaded.param_digest(), ckpt.param_digest());
    assert_eq!(loaded.content_hash().unwrap(), ckpt.content_hash().unwrap());
    assert!(loaded.is_frozen());

    let mut frozen = loaded.clone();
    assert!(matches!(frozen.params_mut(), Err(Error::Frozen)));
    let meta = frozen.metadata().unwrap().clone();
    assert!(matches!(frozen.set_metadata(meta), Err(Error::Frozen)));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = PeplParams::random(s.world.dims(), ProjectorMode::Multi, 1, &mut rng).unwrap();
    let unfrozen = PeplCheckpoint::new(params, s.world.dims(), None);
    assert!(retrieval_accuracy(&unfrozen, &s.manifest, Split::Val, &s.world).is_err());

    let mut bad = ckpt.to_json().unwrap();
    bad = bad.replacen("\"format_version\": 1", "\"format_version\": 99", 1);
    assert!(PeplCheckpoint::from_json(&bad).is_err());
}

#[test]
fn untrained_checkpoints_retrieve_at_chance() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut correct = 0.0;
    let mut total = 0.0;
    let n_val = s.manifest.split(Split::Val).count() as f64;
    for _ in 0..40 {
        let params = PeplParams::random(s.world.dims(), ProjectorMode::Multi, 1, &mut rng).unwrap();
        let ckpt = PeplCheckpoint::new(params, s.world.dims(), None).frozen();
        correct += retrieval_accuracy(&ckpt, &s.manifest, Split::Val, &s.world).unwrap() * n_val;
        total += n_val;
    }
    let p = 1.0 / 7.0;
    let rate = correct / total;
    // Binomial standard error of the pooled rate.
    let se = (p * (1.0 - p) / total).sqrt();
    assert!((rate - p).abs() < 4.0 * se + 0.05, "pooled rate {rate} over {total}");
}

#[test]
fn single_conditional_projector_trains() {
    let s = setup();
    let config = PeplConfig {
        epochs: 3,
        decay_epochs: vec![],
        projector_mode: ProjectorMode::SingleConditional,
        ..PeplConfig::default()
    };
    let run = pretrain_pepl(&s.manifest, &NegativePoolTable::all_others(), &s.world, &config).unwrap();
    assert_eq!(run.checkpoint.params().projectors.networks().len(), 1);
    assert!(run.curve.final_loss().unwrap() < run.curve.first_loss().unwrap());
}

#[test]
fn difference_objective_ablation_runs() {
    let s = setup();
    let config = PeplConfig { epochs: 2, ..PeplConfig::default() };
    let run = pretrain_with_vtedc_objective(&s.manifest, &load_paper_pools().unwrap(), &s.world, &config)
        .unwrap();
    assert_eq!(run.checkpoint.metadata().unwrap().objective, "l2");
    for p in &run.curve.points {
        assert!((0.0..=2.0).contains(&p.loss));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let s = setup();
    let pools = NegativePoolTable::all_others();
    for config in [
        PeplConfig { epochs: 0, ..PeplConfig::default() },
        PeplConfig { lr: -1.0, ..PeplConfig::default() },
        PeplConfig { momentum: 1.0, ..PeplConfig::default() },
        PeplConfig { identity_tokens: 0, ..PeplConfig::default() },
    ] {
        assert!(pretrain_pepl(&s.manifest, &pools, &s.world, &config).is_err());
    }
}

#[test]
fn divergence_is_reported_as_numerical() {
    let s = setup();
    let config = PeplConfig { lr: 1e150, epochs: 1, ..PeplConfig::default() };
    let err = pretrain_pepl(&s.manifest, &NegativePoolTable::all_others(), &s.world, &config).unwrap_err();
    assert!(err.is_numerical(), "{err}");
}
