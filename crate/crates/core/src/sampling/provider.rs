//! Committees and completers used by the phased drivers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::features::{build_training_matrix, FeatureBuilder};
use crate::forest::{FeatureMatrix, PredictionMatrix, RegressionForest};
use crate::scene::{DepthMap, Pixel, Scene};

/// A committee whose members each predict depth from a scene's current samples.
pub trait EnsembleProvider {
    fn members(&self) -> usize;

    /// One row per pixel, one column per member.
    fn predict_members(&self, scene: &Scene, pixels: &[Pixel]) -> Result<PredictionMatrix>;
}

/// Dense depth from a scene's current samples.
pub trait DepthCompleter {
    fn complete(&self, scene: &Scene) -> Result<DepthMap>;
}

/// Fits phase committees and the final completer on scenes with their
/// current sample maps.
pub trait EnsembleTrainer {
    type Ensemble: EnsembleProvider;
    type Final: DepthCompleter;

    fn fit_phase(&self, scenes: &[Scene], members: usize, seed: u64) -> Result<Self::Ensemble>;
    fn fit_final(&self, scenes: &[Scene], seed: u64) -> Result<Self::Final>;
}

/// A random forest over the neighbor features of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestEnsemble {
    pub forest: RegressionForest,
    pub scenario: Scenario,
    pub neighbors: usize,
}

impl ForestEnsemble {
    fn features(&self, scene: &Scene, pixels: &[Pixel]) -> Result<FeatureMatrix> {
        let builder = FeatureBuilder::new(scene, self.scenario, self.neighbors)?;
        if builder.len() != self.forest.n_features() {
            return Err(Error::Config(format!(
                "forest expects {} features, {} scenario with {} neighbors gives {}",
                self.forest.n_features(),
                self.scenario,
                self.neighbors,
                builder.len()
            )));
        }
        Ok(builder.matrix(pixels))
    }
}

impl EnsembleProvider for ForestEnsemble {
    fn members(&self) -> usize {
        self.forest.n_trees()
    }

    fn predict_members(&self, scene: &Scene, pixels: &[Pixel]) -> Result<PredictionMatrix> {
        self.forest.predict_per_tree(&self.features(scene, pixels)?)
    }
}

impl DepthCompleter for ForestEnsemble {
    fn complete(&self, scene: &Scene) -> Result<DepthMap> {
        let pixels: Vec<Pixel> = scene.dims().pixels().collect();
        let pred = self.forest.predict_mean(&self.features(scene, &pixels)?)?;
        DepthMap::from_values(scene.dims(), pred.into_iter().map(|d| Some(d.max(0.0))).collect())
    }
}

/// Trains forests on per-scene uniform subsamples of valid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestTrainer {
    pub scenario: Scenario,
    pub neighbors: usize,
    pub subsample: usize,
    pub trees_final: usize,
}

impl ForestTrainer {
    fn fit(&self, scenes: &[Scene], n_trees: usize, seed: u64) -> Result<ForestEnsemble> {
        if scenes.is_empty() {
            return Err(Error::Fit("no training scenes".into()));
        }
        let mut x = FeatureMatrix::with_cols(crate::features::feature_len(self.scenario, self.neighbors));
        let mut y = Vec::new();
        for (i, scene) in scenes.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let set = build_training_matrix(scene, self.subsample, self.scenario, self.neighbors, &mut rng)?;
            x.extend(&set.x)?;
            y.extend(set.y);
        }
        Ok(ForestEnsemble {
            forest: RegressionForest::fit_seeded(&x, &y, n_trees, seed)?,
            scenario: self.scenario,
            neighbors: self.neighbors,
        })
    }
}

impl EnsembleTrainer for ForestTrainer {
    type Ensemble = ForestEnsemble;
    type Final = ForestEnsemble;

    fn fit_phase(&self, scenes: &[Scene], members: usize, seed: u64) -> Result<ForestEnsemble> {
        self.fit(scenes, members, seed)
    }

    fn fit_final(&self, scenes: &[Scene], seed: u64) -> Result<ForestEnsemble> {
        self.fit(scenes, self.trees_final, seed)
    }
}
