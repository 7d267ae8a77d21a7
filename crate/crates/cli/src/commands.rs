use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use emosup::analysis::{
    compare_pools, cross_modal_matrix, derive_negative_pools, features_by_emotion,
    load_paper_pools, modality_gap_report, paper_gap_table, paper_similarity_matrix,
    template_text_embeddings, CrossModalSimilarityMatrix,
};
use emosup::corpus::{generate_synthetic_corpus, CorpusManifest, NegativePoolTable, Split};
use emosup::encoders::{
    build_synthetic_world, export_features, EncoderSuite, PrecomputedSuite, SyntheticWorld,
};
use emosup::metrics::{evaluate, load_feature_set, SyncEmbeddings};
use emosup::pepl::{
    pretrain_pepl, pretrain_with_vtedc_objective, retrieval_accuracy, PeplCheckpoint,
};
use emosup::supervision::{
    supervise_demo as run_demo, sweep_lambda as run_sweep, write_runs_csv, LambdaConfig,
    SyntheticFerOracle,
};
use emosup::vtedc::{collect_diff_rows, write_diffs_csv};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{PoolSource, RunConfig};
use crate::{
    AnalyzeGapArgs, Common, CorpusInput, DemoArgs, DerivePoolsArgs, EvalMetricsArgs,
    ExportDiffsArgs, GenCorpusArgs, PretrainArgs, SweepArgs,
};

#[derive(Debug, Clone, Copy)]
pub enum Objective {
    Contrastive,
    Difference,
}

enum Suite {
    Synthetic(Box<SyntheticWorld>),
    Precomputed(Box<PrecomputedSuite>),
}

impl Suite {
    fn load(manifest: &CorpusManifest, features: Option<&Path>) -> Result<Self> {
        if let Some(path) = features {
            return Ok(Suite::Precomputed(Box::new(PrecomputedSuite::load(path)?)));
        }
        let Some(world) = manifest.world() else {
            bail!("the manifest has no synthetic world; pass --features");
        };
        Ok(Suite::Synthetic(Box::new(build_synthetic_world(
            world.seed,
            &world.config,
        )?)))
    }

    fn encoders(&self) -> &dyn EncoderSuite {
        match self {
            Suite::Synthetic(w) => w.as_ref(),
            Suite::Precomputed(p) => p.as_ref(),
        }
    }

    fn world(&self) -> Option<&SyntheticWorld> {
        match self {
            Suite::Synthetic(w) => Some(w),
            Suite::Precomputed(_) => None,
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    inputs: BTreeMap<&'a str, String>,
    results: Value,
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_run(
    out: &Path,
    command: &str,
    config: &RunConfig,
    inputs: BTreeMap<&str, String>,
    results: Value,
) -> Result<()> {
    let record = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        inputs,
        results,
    };
    write_json(&out.join("run.json"), &record)
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn corpus_inputs(input: &CorpusInput) -> BTreeMap<&'static str, String> {
    let mut m = BTreeMap::new();
    m.insert("manifest", input.manifest.display().to_string());
    if let Some(f) = &input.features {
        m.insert("features", f.display().to_string());
    }
    m
}

fn resolve_pools(source: &PoolSource) -> Result<NegativePoolTable> {
    Ok(match source {
        PoolSource::Paper => load_paper_pools()?,
        PoolSource::All => NegativePoolTable::all_others(),
        PoolSource::File(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {path}"))?;
            let value: Value = serde_json::from_str(&text)?;
            let table = value.get("pools").cloned().unwrap_or(value);
            serde_json::from_value(table).with_context(|| format!("invalid pools in {path}"))?
        }
    })
}

fn load_checkpoint(path: &Path) -> Result<PeplCheckpoint> {
    let ckpt = PeplCheckpoint::load(path)?;
    if !ckpt.is_frozen() {
        bail!("checkpoint {} is not frozen", path.display());
    }
    Ok(ckpt)
}

pub fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if let Some(n) = a.identities {
        cfg.world.n_identities = n;
    }
    if let Some(n) = a.per_emotion {
        cfg.per_emotion = n;
    }
    if let Some(g) = a.gap {
        cfg.world.gap = g;
    }
    if let Some(s) = a.noise {
        cfg.world.noise_sigma = s;
    }
    let cfg = cfg.finalize()?;
    let out = &a.common.out;
    prepare_out(out)?;

    let mut inputs = BTreeMap::new();
    let manifest = match &a.from_features {
        Some(path) => {
            inputs.insert("features", path.display().to_string());
            CorpusManifest::from_precomputed(&PrecomputedSuite::load(path)?, cfg.seed)?
        }
        None => {
            let world = build_synthetic_world(cfg.seed, &cfg.world)?;
            let manifest = generate_synthetic_corpus(&world, cfg.per_emotion)?;
            export_features(&world, &manifest, out, cfg.seed)?.save(&out.join("features.json"))?;
            manifest
        }
    };
    manifest.save(&out.join("manifest.json"))?;

    let train = manifest.split(Split::Train).count();
    let val = manifest.split(Split::Val).count();
    let identities = manifest.identities().len();
    println!(
        "{} samples ({train} train, {val} val) over {identities} identities",
        manifest.len()
    );
    write_run(
        out,
        "gen-corpus",
        &cfg,
        inputs,
        json!({ "samples": manifest.len(), "train": train, "val": val, "identities": identities }),
    )
}

pub fn pretrain(a: PretrainArgs, objective: Objective) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if let Some(n) = a.epochs {
        cfg.pepl.epochs = n;
    }
    if let Some(lr) = a.lr {
        cfg.pepl.lr = lr;
    }
    if let Some(n) = a.batch_size {
        cfg.pepl.batch_size = n;
    }
    if let Some(n) = a.steps_per_epoch {
        cfg.pepl.steps_per_epoch = n;
    }
    if let Some(m) = a.momentum {
        cfg.pepl.momentum = m;
    }
    if let Some(mode) = &a.projector_mode {
        cfg.pepl.projector_mode = mode.parse()?;
    }
    if let Some(p) = &a.pools {
        cfg.pools = PoolSource::parse(p);
    }
    let cfg = cfg.finalize()?;
    let out = &a.common.out;

    let manifest = CorpusManifest::load(&a.input.manifest)?;
    let suite = Suite::load(&manifest, a.input.features.as_deref())?;
    let pools = resolve_pools(&cfg.pools)?;
    let (command, run) = match objective {
        Objective::Contrastive => (
            "pretrain-pepl",
            pretrain_pepl(&manifest, &pools, suite.encoders(), &cfg.pepl)?,
        ),
        Objective::Difference => (
            "pretrain-vtedc-ablation",
            pretrain_with_vtedc_objective(&manifest, &pools, suite.encoders(), &cfg.pepl)?,
        ),
    };
    prepare_out(out)?;
    run.checkpoint.save(&out.join("checkpoint.json"))?;
    run.curve.write_csv(create(&out.join("curve.csv"))?)?;

    let retrieval = if manifest.split(Split::Val).next().is_some() {
        Some(retrieval_accuracy(&run.checkpoint, &manifest, Split::Val, suite.encoders())?)
    } else {
        None
    };
    let first = run.curve.first_loss();
    let last = run.curve.final_loss();
    println!(
        "loss {} -> {}, val retrieval {}",
        first.map_or("n/a".into(), |v| format!("{v:.6}")),
        last.map_or("n/a".into(), |v| format!("{v:.6}")),
        retrieval.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    write_run(
        out,
        command,
        &cfg,
        corpus_inputs(&a.input),
        json!({
            "first_loss": first,
            "final_loss": last,
            "val_retrieval_accuracy": retrieval,
            "checkpoint_sha256": run.checkpoint.content_hash()?,
            "param_digest": run.checkpoint.param_digest(),
        }),
    )
}

pub fn analyze_gap(a: AnalyzeGapArgs) -> Result<()> {
    let cfg = base_config(&a.common)?.finalize()?;
    let out = &a.common.out;
    let manifest = CorpusManifest::load(&a.input.manifest)?;
    let suite = Suite::load(&manifest, a.input.features.as_deref())?;
    let features = features_by_emotion(&manifest, suite.encoders())?;
    let text = template_text_embeddings(suite.encoders())?;
    let report = modality_gap_report(&features, &text)?;
    let matrix = cross_modal_matrix(&features, &text)?;
    let reference = paper_gap_table()?;

    prepare_out(out)?;
    write_json(
        &out.join("report.json"),
        &json!({
            "gap": report,
            "matrix": matrix,
            "reference": reference,
            "delta_vs_reference": report.diff_against(&reference),
        }),
    )?;
    report.write_csv(create(&out.join("gap.csv"))?)?;
    matrix.write_csv(create(&out.join("matrix.csv"))?)?;
    println!(
        "mean S_image {:.4}, S_match {:.4}, gap {:.4}",
        report.average.s_image, report.average.s_match, report.average.gap
    );
    write_run(out, "analyze-gap", &cfg, corpus_inputs(&a.input), json!({ "average": report.average }))
}

fn load_matrix(source: &str) -> Result<CrossModalSimilarityMatrix> {
    if source == "table_s2" {
        return Ok(paper_similarity_matrix()?);
    }
    let text = fs::read_to_string(source).with_context(|| format!("cannot read {source}"))?;
    let value: Value = serde_json::from_str(&text)?;
    let matrix = value.get("matrix").cloned().unwrap_or(value);
    serde_json::from_value(matrix).with_context(|| format!("invalid similarity matrix in {source}"))
}

pub fn derive_pools(a: DerivePoolsArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    let cfg = cfg.finalize()?;
    let out = &a.common.out;
    let matrix = load_matrix(&a.matrix)?;
    let pools = derive_negative_pools(&matrix, cfg.k)?;
    let comparison = compare_pools(&pools, &load_paper_pools()?);

    prepare_out(out)?;
    write_json(
        &out.join("pools.json"),
        &json!({
            "k": cfg.k,
            "matrix": a.matrix,
            "pools": pools,
            "stored_pool_comparison": comparison,
        }),
    )?;
    let names = |v: Vec<String>| if v.is_empty() { "none".to_owned() } else { v.join(", ") };
    println!(
        "matching stored pools: {}",
        names(comparison.matching.iter().map(|e| e.to_string()).collect())
    );
    if !comparison.discrepant.is_empty() {
        println!(
            "note: derived pools differ from the stored pools for {}",
            names(comparison.discrepant.iter().map(|d| d.emotion.to_string()).collect())
        );
    }
    let mut inputs = BTreeMap::new();
    inputs.insert("matrix", a.matrix.clone());
    write_run(
        out,
        "derive-pools",
        &cfg,
        inputs,
        json!({
            "matching": comparison.matching,
            "discrepant": comparison.discrepant.iter().map(|d| d.emotion).collect::<Vec<_>>(),
        }),
    )
}

pub fn eval_metrics(a: EvalMetricsArgs) -> Result<()> {
    let cfg = base_config(&a.common)?.finalize()?;
    let out = &a.common.out;
    let (real_ids, real) = load_feature_set(&a.real)?;
    let (gen_ids, gen) = load_feature_set(&a.gen)?;
    let sync = match (&a.sync_audio, &a.sync_visual) {
        (Some(au), Some(vi)) => Some((load_feature_set(au)?.1, load_feature_set(vi)?.1)),
        _ => None,
    };
    let report = evaluate(
        (&real_ids, &real),
        (&gen_ids, &gen),
        sync.as_ref().map(|(au, vi)| SyncEmbeddings {
            audio: au.vectors(),
            visual: vi.vectors(),
        }),
    )?;
    prepare_out(out)?;
    write_json(&out.join("report.json"), &report)?;
    println!(
        "fad {:.6}, csim {:.6}, lse_d {}",
        report.fad,
        report.csim,
        report.lse_d.map_or("n/a".into(), |v| format!("{v:.6}"))
    );
    let mut inputs = BTreeMap::new();
    inputs.insert("real", a.real.display().to_string());
    inputs.insert("gen", a.gen.display().to_string());
    if let (Some(au), Some(vi)) = (&a.sync_audio, &a.sync_visual) {
        inputs.insert("sync_audio", au.display().to_string());
        inputs.insert("sync_visual", vi.display().to_string());
    }
    write_run(out, "eval-metrics", &cfg, inputs, serde_json::to_value(&report)?)
}

struct DemoSetup {
    cfg: RunConfig,
    manifest: CorpusManifest,
    suite: Suite,
    ckpt: PeplCheckpoint,
    inputs: BTreeMap<&'static str, String>,
}

fn demo_setup(a: &DemoArgs) -> Result<DemoSetup> {
    let mut cfg = base_config(&a.common)?;
    if let Some(b) = &a.baseline {
        cfg.baseline = b.clone();
    }
    if let Some(l) = a.lambda {
        cfg.lambda = Some(l);
    }
    if let Some(n) = a.epochs {
        cfg.demo.epochs = n;
    }
    if let Some(n) = a.steps_per_epoch {
        cfg.demo.steps_per_epoch = n;
    }
    if let Some(lr) = a.lr {
        cfg.demo.lr = lr;
    }
    let cfg = cfg.finalize()?;
    LambdaConfig::for_baseline(&cfg.baseline)?;
    let manifest = CorpusManifest::load(&a.input.manifest)?;
    let suite = Suite::load(&manifest, a.input.features.as_deref())?;
    if suite.world().is_none() {
        bail!("the supervision demo needs a synthetic corpus for its expression classifier");
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let mut inputs = corpus_inputs(&a.input);
    inputs.insert("checkpoint", a.checkpoint.display().to_string());
    Ok(DemoSetup {
        cfg,
        manifest,
        suite,
        ckpt,
        inputs,
    })
}

fn lambda_of(cfg: &RunConfig) -> Result<LambdaConfig> {
    Ok(match cfg.lambda {
        Some(v) => LambdaConfig::new(v, cfg.baseline.clone())?,
        None => LambdaConfig::for_baseline(&cfg.baseline)?,
    })
}

pub fn supervise_demo(a: DemoArgs) -> Result<()> {
    let s = demo_setup(&a)?;
    let out = &a.common.out;
    let world = s.suite.world().expect("checked in setup");
    let classifier = SyntheticFerOracle::new(world)?;
    let lambda = lambda_of(&s.cfg)?;
    let before = s.ckpt.param_digest();
    let report = run_demo(&s.manifest, &s.ckpt, &lambda, s.suite.encoders(), &classifier, &s.cfg.demo)?;
    if s.ckpt.param_digest() != before {
        bail!("checkpoint parameters changed during supervision");
    }
    prepare_out(out)?;
    write_json(&out.join("report.json"), &report)?;
    println!(
        "lambda 0: accuracy {:.4}, csim {:.4}; lambda {}: accuracy {:.4}, csim {:.4}",
        report.baseline.emotion_accuracy,
        report.baseline.csim,
        lambda.value,
        report.supervised.emotion_accuracy,
        report.supervised.csim
    );
    write_run(out, "supervise-demo", &s.cfg, s.inputs, serde_json::to_value(&report)?)
}

pub fn sweep_lambda(a: SweepArgs) -> Result<()> {
    let mut s = demo_setup(&a.demo)?;
    if let Some(g) = &a.grid {
        s.cfg.grid = g.clone();
    }
    let out = &a.demo.common.out;
    let world = s.suite.world().expect("checked in setup");
    let classifier = SyntheticFerOracle::new(world)?;
    let runs = run_sweep(
        &s.manifest,
        &s.ckpt,
        &s.cfg.grid,
        &s.cfg.baseline,
        s.suite.encoders(),
        &classifier,
        &s.cfg.demo,
    )?;
    prepare_out(out)?;
    write_runs_csv(&runs, create(&out.join("sweep.csv"))?)?;
    for r in &runs {
        println!(
            "lambda {}: accuracy {:.4}, csim {:.4}",
            r.lambda, r.emotion_accuracy, r.csim
        );
    }
    write_run(
        out,
        "sweep-lambda",
        &s.cfg,
        s.inputs,
        json!({ "runs": runs, "param_digest": s.ckpt.param_digest() }),
    )
}

pub fn export_diffs(a: ExportDiffsArgs) -> Result<()> {
    let cfg = base_config(&a.common)?.finalize()?;
    let out = &a.common.out;
    let split = match a.split.as_str() {
        "train" => Some(Split::Train),
        "val" => Some(Split::Val),
        "all" => None,
        other => bail!("unknown split `{other}` (expected train, val or all)"),
    };
    let manifest = CorpusManifest::load(&a.input.manifest)?;
    let suite = Suite::load(&manifest, a.input.features.as_deref())?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let rows = collect_diff_rows(&ckpt, &manifest, split, suite.encoders(), a.non_corresponding)?;
    prepare_out(out)?;
    write_diffs_csv(&rows, create(&out.join("diffs.csv"))?)?;
    println!("{} difference rows", rows.len());
    let mut inputs = corpus_inputs(&a.input);
    inputs.insert("checkpoint", a.checkpoint.display().to_string());
    write_run(
        out,
        "export-diffs",
        &cfg,
        inputs,
        json!({ "rows": rows.len(), "split": a.split, "non_corresponding": a.non_corresponding }),
    )
}
