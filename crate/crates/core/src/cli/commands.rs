//! `synth`, `train`, `complete` and `eval`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SamplerKind;
use crate::error::{Error, Result};
use crate::imaging::{
    load_depth_png, load_manifest_scenes, save_depth_png, save_rgb_png, write_manifest, ManifestEntry,
};
use crate::metrics::{accumulate, MetricAccumulator, MetricRow};
use crate::sampling::{load_pipeline, run_phased_testing, save_pipeline, train_pipeline};
use crate::synth::generate_corpus;

use super::{CompleteArgs, Context, EvalArgs, SynthArgs, TrainArgs};

pub const MANIFEST_NAME: &str = "manifest.tsv";
pub const RUN_NAME: &str = "run.toml";
pub const POOLED_ID: &str = "ALL";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn pred_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_pred.png"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_mask.png"))
}

pub fn synth(ctx: &Context, a: &SynthArgs) -> Result<()> {
    let (spec, count) = ctx.synth_spec(&a.scene)?;
    create_dir(&a.out)?;
    let scenes = generate_corpus(&spec, count)?;
    let mut entries = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let depth = format!("{}_depth.png", s.id);
        save_depth_png(&s.ground_truth, a.out.join(&depth))?;
        let rgb = match &s.rgb {
            Some(img) => {
                let name = format!("{}_rgb.png", s.id);
                save_rgb_png(img, a.out.join(&name))?;
                Some(PathBuf::from(name))
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: s.id.clone(),
            rgb,
            depth: PathBuf::from(depth),
        });
    }
    let manifest = a.out.join(MANIFEST_NAME);
    write_manifest(&manifest, &entries)?;
    println!("wrote {} scenes to {}", entries.len(), manifest.display());
    Ok(())
}

pub fn train(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let config = ctx.run_config(&a.model)?;
    let plan = ctx.plan(a, &config)?;
    let mut scenes = load_manifest_scenes(&a.manifest, config.crop)?;
    let (pipeline, logs) = train_pipeline(&mut scenes, &plan, &config)?;
    for log in &logs {
        let corr = log.correlation.map_or("-".to_string(), |r| format!("{r:.3}"));
        println!(
            "phase {}: {} samples over {} scenes, variance/error r = {corr}, {:.2}s",
            log.phase + 1,
            log.samples_added,
            scenes.len(),
            log.seconds
        );
        if log.exhausted_scenes > 0 {
            println!("  {} scenes ran out of candidate pixels", log.exhausted_scenes);
        }
    }
    save_pipeline(&a.out, &pipeline)?;
    println!(
        "saved {} phase forests and the final forest to {}",
        pipeline.phases.len(),
        a.out.display()
    );
    Ok(())
}

/// Parameters of a `complete` run, stored next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sampler: SamplerKind,
    pub budget: usize,
    pub phases: usize,
    pub seed: u64,
    pub crop: Option<(usize, usize)>,
}

pub fn complete(ctx: &Context, a: &CompleteArgs) -> Result<()> {
    let pipeline = load_pipeline(&a.model)?;
    let scenes = load_manifest_scenes(&a.manifest, pipeline.config.crop)?;
    create_dir(&a.out)?;
    let mut exhausted = 0;
    for (i, scene) in scenes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        rng.set_stream(i as u64);
        let out = run_phased_testing(&pipeline, scene, &mut rng)
            .map_err(|e| Error::Data(format!("scene {}: {e}", scene.id)))?;
        exhausted += usize::from(out.phases.iter().any(|p| p.exhausted));
        save_depth_png(&out.prediction, pred_path(&a.out, &scene.id))?;
        save_depth_png(&out.samples.to_depth_map(), mask_path(&a.out, &scene.id))?;
    }
    let record = RunRecord {
        sampler: pipeline.plan.sampler,
        budget: pipeline.plan.budget,
        phases: pipeline.plan.phases,
        seed: ctx.seed,
        crop: pipeline.config.crop,
    };
    let text = toml::to_string(&record).map_err(|e| Error::Config(format!("serializing run record: {e}")))?;
    let path = a.out.join(RUN_NAME);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!("completed {} scenes into {}", scenes.len(), a.out.display());
    if exhausted > 0 {
        println!("{exhausted} scenes had fewer candidate pixels than the budget");
    }
    Ok(())
}

fn read_run_record(dir: &Path) -> Result<Option<RunRecord>> {
    let path = dir.join(RUN_NAME);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map(Some).map_err(|e| Error::Format {
        path,
        reason: e.to_string(),
    })
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let record = read_run_record(&a.pred)?;
    let crop = record.as_ref().and_then(|r| r.crop);
    let scenes = load_manifest_scenes(&a.manifest, crop)?;
    let (sampler, budget, phases, seed) = match &record {
        Some(r) => (r.sampler.to_string(), r.budget, r.phases, r.seed),
        None => ("-".to_string(), 0, 0, ctx.seed),
    };
    let row = |scene_id: &str, acc: &MetricAccumulator| -> Result<MetricRow> {
        let r = acc.report()?;
        Ok(MetricRow {
            scene_id: scene_id.to_string(),
            sampler: sampler.clone(),
            budget,
            phases,
            rmse_mm: r.rmse_mm,
            mae_mm: r.mae_mm,
            rel: r.rel,
            delta1: r.delta1,
            seed,
        })
    };
    let mut rows = Vec::with_capacity(scenes.len() + 1);
    let mut pooled = MetricAccumulator::default();
    for scene in &scenes {
        let path = pred_path(&a.pred, &scene.id);
        if !path.exists() {
            return Err(Error::Data(format!("no prediction for scene {} at {}", scene.id, path.display())));
        }
        let pred = load_depth_png(&path)?;
        let acc = accumulate(&pred, &scene.ground_truth).map_err(|e| Error::Data(format!("scene {}: {e}", scene.id)))?;
        rows.push(row(&scene.id, &acc)?);
        pooled.merge(&acc);
    }
    rows.push(row(POOLED_ID, &pooled)?);
    let mut w = csv::Writer::from_path(&a.out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    let all = rows.last().expect("pooled row");
    println!(
        "{} scenes: RMSE {:.1} mm, MAE {:.1} mm, REL {:.4}, delta1 {:.4}",
        scenes.len(),
        all.rmse_mm,
        all.mae_mm,
        all.rel,
        all.delta1
    );
    Ok(())
}
