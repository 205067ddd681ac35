use adaptive_depth::config::{RunConfig, SamplerKind, SamplingPlan, Scenario};
use adaptive_depth::metrics::evaluate;
use adaptive_depth::sampling::{run_phased_testing, train_pipeline};
use adaptive_depth::synth::{generate_corpus, interpolation_oracle, SynthSpec};
use adaptive_depth::validate_scene;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize, seed: u64) -> Vec<adaptive_depth::Scene> {
    let spec = SynthSpec {
        width: 80,
        height: 60,
        n_objects: 5,
        seed,
        ..SynthSpec::default()
    };
    generate_corpus(&spec, n).unwrap()
}

#[test]
fn forest_beats_nearest_sample_interpolation() {
    let config = RunConfig {
        trees_final: 40,
        trees_per_phase_forest: 10,
        pixels_per_image_subsample: 800,
        ..RunConfig::default()
    };
    for sampler in [SamplerKind::Random, SamplerKind::Pm] {
        let phases = if sampler.is_single_shot() { 1 } else { 4 };
        let plan = SamplingPlan::new(100, phases, sampler, 10, 5).unwrap();
        let mut train = corpus(8, 1);
        let (pipeline, _) = train_pipeline(&mut train, &plan, &config).unwrap();
        let (mut forest_sq, mut oracle_sq) = (0.0, 0.0);
        for (i, scene) in corpus(4, 2).iter().enumerate() {
            let out = run_phased_testing(&pipeline, scene, &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
            let n = scene.ground_truth.valid_count() as f64;
            let f = evaluate(&out.prediction, &scene.ground_truth).unwrap().rmse_mm;
            let o = evaluate(&interpolation_oracle(&out.samples).unwrap(), &scene.ground_truth).unwrap().rmse_mm;
            forest_sq += f * f * n;
            oracle_sq += o * o * n;
        }
        assert!(forest_sq < oracle_sq, "{sampler}: forest {forest_sq} vs interpolation {oracle_sq}");
    }
}

#[test]
fn test_time_samples_form_a_valid_scene() {
    let config = RunConfig {
        scenario: Scenario::DOnly,
        trees_final: 10,
        pixels_per_image_subsample: 300,
        ..RunConfig::default()
    };
    let plan = SamplingPlan::new(60, 6, SamplerKind::Max, 8, 0).unwrap();
    let mut train = corpus(4, 3);
    let (pipeline, _) = train_pipeline(&mut train, &plan, &config).unwrap();
    assert!(train.iter().all(|s| validate_scene(s).is_empty()));
    let mut scene = corpus(1, 9).remove(0);
    let out = run_phased_testing(&pipeline, &scene, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    scene.samples = out.samples;
    assert!(validate_scene(&scene).is_empty());
    assert_eq!(scene.samples.count(), 60);
}
