//! On-disk layout of a trained forest pipeline:
//! `pipeline.toml` (plan and run configuration), `phase_<k>.adls` per phase
//! committee and `final.adls`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SamplingPlan};
use crate::error::{Error, Result};
use crate::forest::{read_forest, write_forest};

use super::driver::TrainedPipeline;
use super::provider::ForestEnsemble;

pub type ForestPipeline = TrainedPipeline<ForestEnsemble, ForestEnsemble>;

const MANIFEST: &str = "pipeline.toml";
const FINAL: &str = "final.adls";

#[derive(Serialize, Deserialize)]
struct Manifest {
    plan: SamplingPlan,
    config: RunConfig,
}

fn phase_file(k: usize) -> String {
    format!("phase_{k}.adls")
}

pub fn save_pipeline(dir: impl AsRef<Path>, pipeline: &ForestPipeline) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        plan: pipeline.plan.clone(),
        config: pipeline.config.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("serializing pipeline: {e}")))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let scenario = Some(pipeline.config.scenario);
    for (k, phase) in pipeline.phases.iter().enumerate() {
        write_forest(dir.join(phase_file(k)), &phase.forest, scenario)?;
    }
    write_forest(dir.join(FINAL), &pipeline.final_model.forest, scenario)
}

pub fn load_pipeline(dir: impl AsRef<Path>) -> Result<ForestPipeline> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    manifest.plan.validate()?;
    manifest.config.validate()?;
    let config = manifest.config;
    let load = |name: String| -> Result<ForestEnsemble> {
        let (forest, scenario) = read_forest(dir.join(&name))?;
        if scenario.is_some_and(|s| s != config.scenario) {
            return Err(Error::ContainerFormat(format!(
                "{name} was trained for a different scenario than {}",
                config.scenario
            )));
        }
        if forest.n_features() != config.feature_len() {
            return Err(Error::ContainerFormat(format!(
                "{name} has {} features, expected {}",
                forest.n_features(),
                config.feature_len()
            )));
        }
        Ok(ForestEnsemble {
            forest,
            scenario: config.scenario,
            neighbors: config.neighbors,
        })
    };
    let n_phases = if manifest.plan.sampler.is_single_shot() {
        0
    } else {
        manifest.plan.phases
    };
    let phases = (0..n_phases).map(|k| load(phase_file(k))).collect::<Result<Vec<_>>>()?;
    let final_model = load(FINAL.to_string())?;
    Ok(TrainedPipeline {
        plan: manifest.plan,
        config,
        phases,
        final_model,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::config::SamplerKind;
    use crate::sampling::{run_phased_testing, train_pipeline};
    use crate::synth::{generate_corpus, SynthSpec};

    #[test]
    fn saved_pipeline_reproduces_test_outcome() {
        let spec = SynthSpec {
            width: 32,
            height: 24,
            n_objects: 3,
            seed: 4,
            ..SynthSpec::default()
        };
        let mut scenes: Vec<_> = generate_corpus(&spec, 3).unwrap();
        let config = RunConfig {
            trees_per_phase_forest: 5,
            trees_final: 7,
            pixels_per_image_subsample: 150,
            noise_sigma: Some(0.1),
            ..RunConfig::default()
        };
        let plan = SamplingPlan::new(12, 3, SamplerKind::Pm, 5, 9).unwrap();
        let (pipeline, _) = train_pipeline(&mut scenes, &plan, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_pipeline(dir.path(), &pipeline).unwrap();
        let back = load_pipeline(dir.path()).unwrap();
        assert_eq!(back.plan, pipeline.plan);
        assert_eq!(back.config, pipeline.config);
        let a = run_phased_testing(&pipeline, &scenes[0], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = run_phased_testing(&back, &scenes[0], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);

        fs::remove_file(dir.path().join("phase_1.adls")).unwrap();
        assert!(matches!(load_pipeline(dir.path()), Err(Error::Io { .. })));
    }
}
