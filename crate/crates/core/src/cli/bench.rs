//! The benchmark matrix: every (sampler, budget, phases, seed) cell is
//! trained on the training split and evaluated on the test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SamplerKind, SamplingPlan};
use crate::error::{Error, Result};
use crate::imaging::load_manifest_scenes;
use crate::metrics::{accumulate, mean_pairwise_l1, MetricAccumulator};
use crate::sampling::{run_phased_testing, train_pipeline};
use crate::scene::Scene;
use crate::synth::generate_corpus;

use super::commands::POOLED_ID;
use super::{BenchArgs, Context};

/// Percentage of drive groups assigned to training.
const TRAIN_PERCENT: u64 = 70;

/// Scenes of one drive share everything before the last `_` of their id.
fn drive_group(id: &str) -> &str {
    id.rsplit_once('_').map_or(id, |(drive, _)| drive)
}

pub fn is_train_scene(id: &str) -> bool {
    let digest = Sha256::digest(drive_group(id).as_bytes());
    let head = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    head % 100 < TRAIN_PERCENT
}

/// (train, test), keeping manifest order within each.
pub fn split_scenes(scenes: Vec<Scene>) -> (Vec<Scene>, Vec<Scene>) {
    scenes.into_iter().partition(|s| is_train_scene(&s.id))
}

/// One scene (or pooled `ALL`) result of one cell. Metrics are empty when
/// the cell failed, with the reason in `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scene_id: String,
    pub sampler: SamplerKind,
    pub budget: usize,
    pub phases: usize,
    pub seed: u64,
    pub rmse_mm: Option<f64>,
    pub mae_mm: Option<f64>,
    pub rel: Option<f64>,
    pub delta1: Option<f64>,
    /// Mean pairwise L1 distance between the scene's samples (mean over
    /// scenes for the pooled row).
    pub spread: Option<f64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrRow {
    pub sampler: SamplerKind,
    pub budget: usize,
    pub phases: usize,
    pub seed: u64,
    pub scene_id: String,
    /// 1-based phase index.
    pub phase: usize,
    pub pearson_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub sampler: SamplerKind,
    pub phases: usize,
    pub target_rmse_mm: f64,
    /// Interpolated budget; empty when RMSE does not fall with budget.
    pub budget: Option<f64>,
}

type CellKey = (SamplerKind, usize, usize, u64);

fn row_key(r: &BenchRow) -> CellKey {
    (r.sampler, r.budget, r.phases, r.seed)
}

fn read_rows(path: &Path) -> Result<Vec<BenchRow>> {
    if !path.exists() || fs::metadata(path).map_err(|e| Error::io(path, e))?.len() == 0 {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(Error::from)
}

/// CSV writer appending to `path`, with a header only for a new file.
fn appender(path: &Path) -> Result<csv::Writer<fs::File>> {
    let fresh = !path.exists() || fs::metadata(path).map_err(|e| Error::io(path, e))?.len() == 0;
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(fresh).from_writer(file))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or("bench".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

struct CellResult {
    rows: Vec<BenchRow>,
    corr: Vec<CorrRow>,
}

fn run_cell(key: CellKey, train: &[Scene], test: &[Scene], config: &RunConfig) -> Result<CellResult> {
    let (sampler, budget, phases, seed) = key;
    let plan = SamplingPlan::new(budget, phases, sampler, config.trees_per_phase_forest, seed)?;
    let mut train = train.to_vec();
    let (pipeline, _) = train_pipeline(&mut train, &plan, config)?;
    let mut rows = Vec::with_capacity(test.len() + 1);
    let mut corr = Vec::new();
    let mut pooled = MetricAccumulator::default();
    let mut spread_sum = 0.0;
    for (i, scene) in test.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let out = run_phased_testing(&pipeline, scene, &mut rng)
            .map_err(|e| Error::Data(format!("scene {}: {e}", scene.id)))?;
        let acc = accumulate(&out.prediction, &scene.ground_truth)
            .map_err(|e| Error::Data(format!("scene {}: {e}", scene.id)))?;
        let r = acc.report()?;
        pooled.merge(&acc);
        let spread = mean_pairwise_l1(out.samples.measured());
        spread_sum += spread;
        rows.push(BenchRow {
            scene_id: scene.id.clone(),
            sampler,
            budget,
            phases,
            seed,
            rmse_mm: Some(r.rmse_mm),
            mae_mm: Some(r.mae_mm),
            rel: Some(r.rel),
            delta1: Some(r.delta1),
            spread: Some(spread),
            error: String::new(),
        });
        if sampler == SamplerKind::Pm {
            corr.extend(out.phases.iter().map(|p| CorrRow {
                sampler,
                budget,
                phases,
                seed,
                scene_id: scene.id.clone(),
                phase: p.phase + 1,
                pearson_r: p.correlation,
            }));
        }
    }
    let r = pooled.report()?;
    rows.push(BenchRow {
        scene_id: POOLED_ID.to_string(),
        sampler,
        budget,
        phases,
        seed,
        rmse_mm: Some(r.rmse_mm),
        mae_mm: Some(r.mae_mm),
        rel: Some(r.rel),
        delta1: Some(r.delta1),
        spread: Some(spread_sum / test.len() as f64),
        error: String::new(),
    });
    Ok(CellResult { rows, corr })
}

/// Budget reaching each target RMSE, from a least-squares line through
/// (ln budget, ln mean pooled RMSE) per (sampler, phases).
pub fn fit_target_budgets(rows: &[BenchRow], targets: &[f64]) -> Vec<TargetRow> {
    let mut by_cell: BTreeMap<(SamplerKind, usize), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.scene_id == POOLED_ID && r.error.is_empty()) {
        if let Some(rmse) = r.rmse_mm.filter(|v| *v > 0.0) {
            by_cell
                .entry((r.sampler, r.phases))
                .or_default()
                .entry(r.budget)
                .or_default()
                .push(rmse);
        }
    }
    let mut out = Vec::new();
    for ((sampler, phases), budgets) in by_cell {
        let pts: Vec<(f64, f64)> = budgets
            .iter()
            .map(|(b, v)| ((*b as f64).ln(), (v.iter().sum::<f64>() / v.len() as f64).ln()))
            .collect();
        let fit = (pts.len() >= 2).then(|| {
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
            let slope = sxy / sxx;
            (my - slope * mx, slope)
        });
        for &t in targets {
            let budget = fit
                .filter(|(_, slope)| *slope < 0.0)
                .map(|(intercept, slope)| ((t.ln() - intercept) / slope).exp());
            out.push(TargetRow {
                sampler,
                phases,
                target_rmse_mm: t,
                budget,
            });
        }
    }
    out
}

pub fn bench(ctx: &Context, a: &BenchArgs) -> Result<()> {
    let f = &ctx.file;
    let config = ctx.run_config(&a.model)?;
    let samplers = f.pick_list(
        a.samplers.clone(),
        "samplers",
        vec![SamplerKind::Pm, SamplerKind::Random, SamplerKind::Grid, SamplerKind::Max],
    )?;
    let budgets = f.pick_list(a.budgets.clone(), "budgets", vec![256])?;
    let phase_counts = f.pick_list(a.phase_counts.clone(), "phases", vec![8])?;
    let seeds = f.pick_list(a.seeds.clone(), "seeds", vec![0, 1, 2])?;
    let targets = f.pick_list(a.target_rmse.clone(), "target_rmse", vec![])?;
    if samplers.is_empty() || budgets.is_empty() || phase_counts.is_empty() || seeds.is_empty() {
        return Err(Error::Config("benchmark lists must not be empty".into()));
    }
    if budgets.contains(&0) {
        return Err(Error::Config("budgets must be positive".into()));
    }

    let scenes = match &a.manifest {
        Some(m) => load_manifest_scenes(m, config.crop)?,
        None => {
            let (spec, count) = ctx.synth_spec(&a.scene)?;
            generate_corpus(&spec, count)?
        }
    };
    let (train, test) = split_scenes(scenes);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "split left {} training and {} test scenes",
            train.len(),
            test.len()
        )));
    }
    println!("{} training scenes, {} test scenes", train.len(), test.len());

    let corr_path = a.corr_out.clone().unwrap_or_else(|| sibling(&a.out, ".corr.csv"));
    let done: BTreeSet<CellKey> = read_rows(&a.out)?
        .iter()
        .filter(|r| r.scene_id == POOLED_ID && r.error.is_empty())
        .map(row_key)
        .collect();

    let mut cells = Vec::new();
    for &sampler in &samplers {
        for &budget in &budgets {
            let mut ks: Vec<usize> = if sampler.is_single_shot() { vec![1] } else { phase_counts.clone() };
            ks.dedup();
            for k in ks {
                for &seed in &seeds {
                    let key = (sampler, budget, k, seed);
                    if !cells.contains(&key) {
                        cells.push(key);
                    }
                }
            }
        }
    }

    for key in cells {
        let (sampler, budget, phases, seed) = key;
        if done.contains(&key) {
            println!("{sampler} B={budget} K={phases} seed={seed}: already present, skipped");
            continue;
        }
        let result = run_cell(key, &train, &test, &config);
        let mut rows_out = appender(&a.out)?;
        match result {
            Ok(cell) => {
                let pooled = cell.rows.last().and_then(|r| r.rmse_mm).unwrap_or(f64::NAN);
                println!("{sampler} B={budget} K={phases} seed={seed}: pooled RMSE {pooled:.1} mm");
                for r in &cell.rows {
                    rows_out.serialize(r)?;
                }
                if !cell.corr.is_empty() {
                    let mut corr_out = appender(&corr_path)?;
                    for r in &cell.corr {
                        corr_out.serialize(r)?;
                    }
                    corr_out.flush().map_err(|e| Error::io(&corr_path, e))?;
                }
            }
            Err(e) => {
                println!("{sampler} B={budget} K={phases} seed={seed}: failed: {e}");
                rows_out.serialize(BenchRow {
                    scene_id: POOLED_ID.to_string(),
                    sampler,
                    budget,
                    phases,
                    seed,
                    rmse_mm: None,
                    mae_mm: None,
                    rel: None,
                    delta1: None,
                    spread: None,
                    error: e.to_string(),
                })?;
            }
        }
        rows_out.flush().map_err(|e| Error::io(&a.out, e))?;
    }

    if !targets.is_empty() {
        let fits = fit_target_budgets(&read_rows(&a.out)?, &targets);
        let path = sibling(&a.out, ".targets.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for t in &fits {
            w.serialize(t)?;
            match t.budget {
                Some(b) => println!(
                    "{} K={}: {:.0} samples for {:.0} mm",
                    t.sampler, t.phases, b, t.target_rmse_mm
                ),
                None => println!("{} K={}: no budget estimate for {:.0} mm", t.sampler, t.phases, t.target_rmse_mm),
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
