use std::sync::OnceLock;

use emosup::analysis::load_paper_pools;
use emosup::corpus::{generate_synthetic_corpus, CorpusManifest, EmotionLabel};
use emosup::encoders::{build_synthetic_world, SyntheticWorld, WorldConfig};
use emosup::pepl::{pretrain_pepl, PeplCheckpoint, PeplConfig};
use emosup::supervision::{
    supervise_demo, sweep_lambda, total_loss, train_generator, write_runs_csv, DemoConfig,
    EmotionClassifier, LambdaConfig, SyntheticFerOracle,
};
use emosup::Vector;

struct Setup {
    world: SyntheticWorld,
    manifest: CorpusManifest,
    ckpt: PeplCheckpoint,
    oracle: SyntheticFerOracle,
}

fn setup() -> &'static Setup {
    static SETUP: OnceLock<Setup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let world = build_synthetic_world(1, &WorldConfig::default()).unwrap();
        let manifest = generate_synthetic_corpus(&world, 3).unwrap();
        let run = pretrain_pepl(&manifest, &load_paper_pools().unwrap(), &world, &PeplConfig::default())
            .unwrap();
        let oracle = SyntheticFerOracle::new(&world).unwrap();
        Setup { world, manifest, ckpt: run.checkpoint, oracle }
    })
}

fn short() -> DemoConfig {
    DemoConfig { epochs: 2, steps_per_epoch: 10, ..DemoConfig::default() }
}

#[test]
fn baseline_lambdas() {
    for (tag, value) in [("ned", 0.4), ("icface", 0.05), ("sserd", 0.2), ("toy", 0.4)] {
        assert_eq!(LambdaConfig::for_baseline(tag).unwrap().value, value);
    }
    assert!(LambdaConfig::for_baseline("other").is_err());
    assert!(LambdaConfig::new(-0.1, "toy").is_err());
    assert!(LambdaConfig::new(f64::NAN, "toy").is_err());
}

#[test]
fn total_loss_combines_terms() {
    let g = Vector::new(vec![1.0, -2.0]).unwrap();
    let h = Vector::new(vec![0.5, 4.0]).unwrap();
    let lambda = LambdaConfig::new(0.4, "toy").unwrap();
    let (v, grad) = total_loss(1.5, &g, 0.25, &h, &lambda).unwrap();
    assert!((v - 1.6).abs() < 1e-15);
    assert!((grad.as_slice()[0] - 1.2).abs() < 1e-15);
    assert!((grad.as_slice()[1] + 0.4).abs() < 1e-15);
    let zero = LambdaConfig::new(0.0, "toy").unwrap();
    assert_eq!(total_loss(1.5, &g, 0.25, &h, &zero).unwrap(), (1.5, g.clone()));
    assert!(total_loss(f64::INFINITY, &g, 0.25, &h, &lambda).is_err());
}

#[test]
fn oracle_classifies_clean_images() {
    let s = setup();
    for identity in 0..s.world.n_identities() {
        for e in EmotionLabel::ALL {
            let v = s.world.clean_visual(identity, e).unwrap();
            assert_eq!(s.oracle.classify(&v).unwrap(), e);
        }
    }
}

#[test]
fn zero_lambda_equals_disabled_term() {
    let s = setup();
    let zero = LambdaConfig::new(0.0, "toy").unwrap();
    let on = train_generator(&s.manifest, &s.ckpt, &zero, &s.world, &s.oracle, &short()).unwrap();
    let off_config = DemoConfig { vtedc_enabled: false, ..short() };
    let off = train_generator(&s.manifest, &s.ckpt, &zero, &s.world, &s.oracle, &off_config).unwrap();
    assert_eq!(on.0.params.param_bytes(), off.0.params.param_bytes());
    assert_eq!(on.1, off.1);
}

#[test]
fn supervision_leaves_checkpoint_untouched() {
    let s = setup();
    let before = s.ckpt.param_digest();
    let json = s.ckpt.to_json().unwrap();
    let lambda = LambdaConfig::for_baseline("toy").unwrap();
    let report = supervise_demo(&s.manifest, &s.ckpt, &lambda, &s.world, &s.oracle, &short()).unwrap();
    assert_eq!(report.pepl_param_digest, before);
    assert_eq!(s.ckpt.param_digest(), before);
    assert_eq!(s.ckpt.to_json().unwrap(), json);
}

#[test]
fn supervision_needs_frozen_checkpoint() {
    let s = setup();
    let unfrozen = PeplCheckpoint::new(s.ckpt.params().clone(), s.ckpt.dims(), None);
    let lambda = LambdaConfig::for_baseline("toy").unwrap();
    assert!(train_generator(&s.manifest, &unfrozen, &lambda, &s.world, &s.oracle, &short()).is_err());
}

#[test]
fn demo_is_deterministic() {
    let s = setup();
    let lambda = LambdaConfig::for_baseline("toy").unwrap();
    let a = supervise_demo(&s.manifest, &s.ckpt, &lambda, &s.world, &s.oracle, &short()).unwrap();
    let b = supervise_demo(&s.manifest, &s.ckpt, &lambda, &s.world, &s.oracle, &short()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.baseline.lambda, 0.0);
    assert_eq!(a.supervised.lambda, 0.4);
}

#[test]
fn sweep_runs_every_grid_point() {
    let s = setup();
    let grid = [0.1, 0.2, 0.4, 0.8];
    let runs = sweep_lambda(&s.manifest, &s.ckpt, &grid, "toy", &s.world, &s.oracle, &short()).unwrap();
    assert_eq!(runs.iter().map(|r| r.lambda).collect::<Vec<_>>(), grid);
    for r in &runs {
        assert!((0.0..=1.0).contains(&r.emotion_accuracy));
        assert!((0.0..=2.0).contains(&r.l2_loss));
    }
    let mut csv = Vec::new();
    write_runs_csv(&runs, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    assert!(sweep_lambda(&s.manifest, &s.ckpt, &[], "toy", &s.world, &s.oracle, &short()).is_err());
}

#[test]
fn difference_term_improves_emotion_accuracy() {
    let s = setup();
    let lambda = LambdaConfig::for_baseline("toy").unwrap();
    for seed in 1..=3 {
        let config = DemoConfig { seed, ..DemoConfig::default() };
        let r = supervise_demo(&s.manifest, &s.ckpt, &lambda, &s.world, &s.oracle, &config).unwrap();
        assert!(
            r.supervised.emotion_accuracy > r.baseline.emotion_accuracy,
            "seed {seed}: {} vs {}",
            r.supervised.emotion_accuracy,
            r.baseline.emotion_accuracy
        );
    }
}
