//! Phased training and test-time replay.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{RunConfig, SamplerKind, SamplingPlan};
use crate::error::{Error, Result};
use crate::forest::ensemble_variance;
use crate::metrics::variance_error_correlation;
use crate::scene::{DepthMap, Pixel, SampleMap, Scene};

use super::provider::{DepthCompleter, EnsembleProvider, EnsembleTrainer, ForestTrainer};
use super::{
    grid_sampler, max_sampler, random_sampler, sample_without_replacement, variance_to_probability, Draw,
    VarianceMap,
};
use super::persist::ForestPipeline;

const DOMAIN_PHASE_FIT: u64 = 1;
const DOMAIN_DRAW: u64 = 2;
const DOMAIN_FINAL_FIT: u64 = 3;
const DOMAIN_PASSIVE: u64 = 4;

/// Independent generator for one (purpose, phase, scene) triple of a run.
fn stream(seed: u64, domain: u64, phase: usize, scene: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 56) | ((phase as u64) << 32) | scene as u64);
    rng
}

/// Committee scores over one scene's sampling support.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseScore {
    pub support: Vec<Pixel>,
    /// Population variance of the member predictions.
    pub variance: Vec<f64>,
    /// Squared error of the committee mean against ground truth.
    pub sq_error: Vec<f64>,
}

impl PhaseScore {
    pub fn compute<E: EnsembleProvider + ?Sized>(ensemble: &E, scene: &Scene) -> Result<Self> {
        let support = scene.sampling_support();
        if support.is_empty() {
            return Ok(PhaseScore {
                support,
                variance: Vec::new(),
                sq_error: Vec::new(),
            });
        }
        let preds = ensemble.predict_members(scene, &support)?;
        let variance = ensemble_variance(&preds)?;
        let sq_error = preds
            .row_means()
            .iter()
            .zip(&support)
            .map(|(m, &p)| {
                let e = m - scene.ground_truth.get(p).expect("support is valid");
                e * e
            })
            .collect();
        Ok(PhaseScore {
            support,
            variance,
            sq_error,
        })
    }

    /// Pearson correlation of variance and squared error, if defined.
    pub fn correlation(&self) -> Option<f64> {
        variance_error_correlation(&self.variance, &self.sq_error).ok()
    }
}

/// Scores and selects `count` pixels of `scene` for an adaptive sampler.
pub fn draw_phase<E: EnsembleProvider + ?Sized, R: Rng + ?Sized>(
    sampler: SamplerKind,
    ensemble: &E,
    scene: &Scene,
    count: usize,
    rng: &mut R,
) -> Result<(Draw, PhaseScore)> {
    let score = PhaseScore::compute(ensemble, scene)?;
    if score.support.is_empty() {
        return Ok((
            Draw {
                pixels: Vec::new(),
                exhausted: count > 0,
            },
            score,
        ));
    }
    let values = match sampler {
        SamplerKind::Pm | SamplerKind::Max => score.variance.clone(),
        SamplerKind::OracleSqerr => score.sq_error.clone(),
        SamplerKind::Random | SamplerKind::Grid => {
            return Err(Error::InvalidPlan(format!("{sampler} sampling does not use a committee")))
        }
    };
    let map = VarianceMap::new(scene.dims(), score.support.clone(), values)?;
    let draw = match sampler {
        SamplerKind::Max => max_sampler(&map, count),
        _ => sample_without_replacement(&variance_to_probability(&map)?, count, rng),
    };
    Ok((draw, score))
}

fn measure<R: Rng + ?Sized>(scene: &mut Scene, pixels: &[Pixel], noise: Option<f64>, rng: &mut R) -> Result<()> {
    let normal = match noise {
        Some(sigma) if sigma > 0.0 => {
            Some(Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise sigma {sigma}: {e}")))?)
        }
        _ => None,
    };
    for &p in pixels {
        let gt = scene
            .ground_truth
            .get(p)
            .ok_or_else(|| Error::Data(format!("pixel {p} of {} has no ground truth", scene.id)))?;
        let value = match &normal {
            Some(n) => (gt + n.sample(rng)).max(0.0),
            None => gt,
        };
        scene.samples.insert(p, value)?;
    }
    Ok(())
}

fn passive_draw<R: Rng + ?Sized>(sampler: SamplerKind, scene: &Scene, budget: usize, rng: &mut R) -> Draw {
    match sampler {
        SamplerKind::Grid => grid_sampler(scene, budget),
        _ => random_sampler(scene, budget, rng),
    }
}

/// Frozen phase committees plus the final completer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline<E, F> {
    pub plan: SamplingPlan,
    pub config: RunConfig,
    pub phases: Vec<E>,
    pub final_model: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPhaseLog {
    pub phase: usize,
    pub samples_added: usize,
    /// Variance / squared-error correlation pooled over the training scenes.
    pub correlation: Option<f64>,
    pub exhausted_scenes: usize,
    pub seconds: f64,
}

/// Runs the phased procedure on `scenes`, leaving their final sample maps in
/// place, and returns the pipeline with one log entry per phase (a single
/// entry for passive samplers).
pub fn run_phased_training<T: EnsembleTrainer>(
    trainer: &T,
    scenes: &mut [Scene],
    plan: &SamplingPlan,
    config: &RunConfig,
) -> Result<(TrainedPipeline<T::Ensemble, T::Final>, Vec<TrainingPhaseLog>)> {
    plan.validate()?;
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::Fit("no training scenes".into()));
    }
    for scene in scenes.iter_mut() {
        scene.reset_samples();
    }
    let mut phases = Vec::new();
    let mut logs = Vec::new();
    if plan.sampler.is_single_shot() {
        let start = Instant::now();
        let mut added = 0;
        let mut exhausted = 0;
        for (i, scene) in scenes.iter_mut().enumerate() {
            let mut rng = stream(plan.seed, DOMAIN_PASSIVE, 0, i);
            let draw = passive_draw(plan.sampler, scene, plan.budget, &mut rng);
            measure(scene, &draw.pixels, config.noise_sigma, &mut rng)?;
            added += draw.pixels.len();
            exhausted += usize::from(draw.exhausted);
        }
        logs.push(TrainingPhaseLog {
            phase: 0,
            samples_added: added,
            correlation: None,
            exhausted_scenes: exhausted,
            seconds: start.elapsed().as_secs_f64(),
        });
    } else {
        for (k, &count) in plan.per_phase.iter().enumerate() {
            let start = Instant::now();
            let fit_seed = stream(plan.seed, DOMAIN_PHASE_FIT, k, 0).random();
            let ensemble = trainer.fit_phase(scenes, plan.ensemble_size, fit_seed)?;
            let mut added = 0;
            let mut exhausted = 0;
            let mut variance = Vec::new();
            let mut sq_error = Vec::new();
            for (i, scene) in scenes.iter_mut().enumerate() {
                let mut rng = stream(plan.seed, DOMAIN_DRAW, k, i);
                let (draw, score) = draw_phase(plan.sampler, &ensemble, scene, count, &mut rng)?;
                measure(scene, &draw.pixels, config.noise_sigma, &mut rng)?;
                added += draw.pixels.len();
                exhausted += usize::from(draw.exhausted);
                variance.extend(score.variance);
                sq_error.extend(score.sq_error);
            }
            logs.push(TrainingPhaseLog {
                phase: k,
                samples_added: added,
                correlation: variance_error_correlation(&variance, &sq_error).ok(),
                exhausted_scenes: exhausted,
                seconds: start.elapsed().as_secs_f64(),
            });
            phases.push(ensemble);
        }
    }
    let final_seed = stream(plan.seed, DOMAIN_FINAL_FIT, 0, 0).random();
    let final_model = trainer.fit_final(scenes, final_seed)?;
    Ok((
        TrainedPipeline {
            plan: plan.clone(),
            config: config.clone(),
            phases,
            final_model,
        },
        logs,
    ))
}

/// Random-forest pipeline with the forest sizes and features of `config`.
pub fn train_pipeline(
    scenes: &mut [Scene],
    plan: &SamplingPlan,
    config: &RunConfig,
) -> Result<(ForestPipeline, Vec<TrainingPhaseLog>)> {
    let trainer = ForestTrainer {
        scenario: config.scenario,
        neighbors: config.neighbors,
        subsample: config.pixels_per_image_subsample,
        trees_final: config.trees_final,
    };
    run_phased_training(&trainer, scenes, plan, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub phase: usize,
    pub pixels: Vec<Pixel>,
    pub exhausted: bool,
    /// Variance / squared-error correlation over the scene's support before
    /// the phase's draw, when ground truth makes it defined.
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub samples: SampleMap,
    pub prediction: DepthMap,
    pub phases: Vec<PhaseRecord>,
}

/// Places the plan's budget on a copy of `scene` by replaying the frozen
/// phase committees, then completes it with the final model.
pub fn run_phased_testing<E, F, R>(pipeline: &TrainedPipeline<E, F>, scene: &Scene, rng: &mut R) -> Result<TestOutcome>
where
    E: EnsembleProvider,
    F: DepthCompleter,
    R: Rng + ?Sized,
{
    let plan = &pipeline.plan;
    let mut scene = scene.clone();
    scene.reset_samples();
    let mut records = Vec::new();
    if plan.sampler.is_single_shot() {
        let draw = passive_draw(plan.sampler, &scene, plan.budget, rng);
        measure(&mut scene, &draw.pixels, pipeline.config.noise_sigma, rng)?;
        records.push(PhaseRecord {
            phase: 0,
            pixels: draw.pixels,
            exhausted: draw.exhausted,
            correlation: None,
        });
    } else {
        if pipeline.phases.len() != plan.phases {
            return Err(Error::InvalidPlan(format!(
                "plan has {} phases but {} committees are stored",
                plan.phases,
                pipeline.phases.len()
            )));
        }
        for (k, (ensemble, &count)) in pipeline.phases.iter().zip(&plan.per_phase).enumerate() {
            let (draw, score) = draw_phase(plan.sampler, ensemble, &scene, count, rng)?;
            measure(&mut scene, &draw.pixels, pipeline.config.noise_sigma, rng)?;
            records.push(PhaseRecord {
                phase: k,
                pixels: draw.pixels,
                exhausted: draw.exhausted,
                correlation: score.correlation(),
            });
        }
    }
    let prediction = pipeline.final_model.complete(&scene)?;
    Ok(TestOutcome {
        samples: scene.samples,
        prediction,
        phases: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scenario;
    use crate::forest::PredictionMatrix;
    use crate::scene::Dims;
    use crate::synth::{generate_corpus, RgbMode, SynthSpec};

    fn small_corpus(n: usize, seed: u64) -> Vec<Scene> {
        let spec = SynthSpec {
            width: 40,
            height: 30,
            n_objects: 3,
            seed,
            ..SynthSpec::default()
        };
        generate_corpus(&spec, n).unwrap()
    }

    fn small_config() -> RunConfig {
        RunConfig {
            trees_per_phase_forest: 6,
            trees_final: 8,
            pixels_per_image_subsample: 200,
            ..RunConfig::default()
        }
    }

    #[test]
    fn training_places_exact_budget_on_valid_pixels() {
        for sampler in SamplerKind::ALL {
            let phases = if sampler.is_single_shot() { 1 } else { 4 };
            let plan = SamplingPlan::new(30, phases, sampler, 6, 11).unwrap();
            let mut scenes = small_corpus(3, 2);
            let (pipeline, logs) = train_pipeline(&mut scenes, &plan, &small_config()).unwrap();
            assert_eq!(pipeline.phases.len(), if sampler.is_single_shot() { 0 } else { 4 });
            assert_eq!(logs.iter().map(|l| l.samples_added).sum::<usize>(), 90);
            for s in &scenes {
                assert_eq!(s.samples.count(), 30, "{sampler}");
                assert!(s.samples.measured().iter().all(|&p| s.ground_truth.is_valid(p)));
            }
        }
    }

    #[test]
    fn testing_replays_phase_allocation() {
        let plan = SamplingPlan::new(10, 4, SamplerKind::Pm, 6, 3).unwrap();
        let mut train = small_corpus(3, 4);
        let (pipeline, _) = train_pipeline(&mut train, &plan, &small_config()).unwrap();
        let test = &small_corpus(1, 5)[0];
        let out = run_phased_testing(&pipeline, test, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let sizes: Vec<usize> = out.phases.iter().map(|r| r.pixels.len()).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        assert_eq!(out.samples.count(), 10);
        assert_eq!(out.prediction.valid_count(), test.dims().len());
        let again = run_phased_testing(&pipeline, test, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn training_is_deterministic() {
        let plan = SamplingPlan::new(12, 3, SamplerKind::Pm, 6, 21).unwrap();
        let mut a = small_corpus(2, 6);
        let mut b = small_corpus(2, 6);
        let (pa, _) = train_pipeline(&mut a, &plan, &small_config()).unwrap();
        let (pb, _) = train_pipeline(&mut b, &plan, &small_config()).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_measurements_stay_non_negative() {
        let plan = SamplingPlan::new(20, 1, SamplerKind::Random, 2, 0).unwrap();
        let mut scenes = small_corpus(2, 8);
        let config = RunConfig {
            noise_sigma: Some(50.0),
            ..small_config()
        };
        train_pipeline(&mut scenes, &plan, &config).unwrap();
        let s = &scenes[0];
        assert!(s.samples.measured_row_major().iter().all(|(_, d)| *d >= 0.0));
        assert!(s
            .samples
            .measured_row_major()
            .iter()
            .any(|(p, d)| s.ground_truth.get(*p) != Some(*d)));
    }

    /// Committee whose members disagree only at one pixel.
    struct Spike(Pixel);

    impl EnsembleProvider for Spike {
        fn members(&self) -> usize {
            2
        }

        fn predict_members(&self, _: &Scene, pixels: &[Pixel]) -> Result<PredictionMatrix> {
            let data = pixels
                .iter()
                .flat_map(|&p| if p == self.0 { [0.0, 4.0] } else { [1.0, 1.0] })
                .collect();
            PredictionMatrix::new(pixels.len(), 2, data)
        }
    }

    #[test]
    fn pm_follows_committee_disagreement() {
        let dims = Dims::new(5, 5);
        let gt = DepthMap::from_values(dims, vec![Some(1.0); 25]).unwrap();
        let scene = Scene::new("s", None, gt).unwrap();
        let spike = Spike(Pixel::new(3, 1));
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (draw, score) = draw_phase(SamplerKind::Pm, &spike, &scene, 1, &mut rng).unwrap();
            assert_eq!(draw.pixels, vec![Pixel::new(3, 1)]);
            assert_eq!(score.variance.iter().filter(|v| **v > 0.0).count(), 1);
        }
        let (draw, _) = draw_phase(SamplerKind::Max, &spike, &scene, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(draw.pixels, vec![Pixel::new(3, 1), Pixel::new(0, 0)]);
        // the committee mean is 2 at the spike, so it also carries the only error
        let (draw, _) =
            draw_phase(SamplerKind::OracleSqerr, &spike, &scene, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(draw.pixels, vec![Pixel::new(3, 1)]);
    }

    #[test]
    fn depth_only_needs_no_rgb() {
        let spec = SynthSpec {
            width: 30,
            height: 20,
            n_objects: 2,
            rgb_mode: RgbMode::None,
            seed: 1,
            ..SynthSpec::default()
        };
        let mut scenes: Vec<Scene> = generate_corpus(&spec, 2).unwrap();
        let plan = SamplingPlan::new(8, 2, SamplerKind::Pm, 4, 0).unwrap();
        let rgbd = small_config();
        assert!(train_pipeline(&mut scenes, &plan, &rgbd).is_err());
        let d = RunConfig {
            scenario: Scenario::DOnly,
            ..rgbd
        };
        train_pipeline(&mut scenes, &plan, &d).unwrap();
    }
}
