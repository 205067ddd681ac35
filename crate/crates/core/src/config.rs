//! Sampling plans and run configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which inputs the completer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Color image plus depth samples.
    Rgbd,
    /// Depth samples only.
    #[serde(rename = "d", alias = "d_only")]
    DOnly,
}

impl Scenario {
    pub fn feature_len(self) -> usize {
        match self {
            Scenario::Rgbd => 26,
            Scenario::DOnly => 14,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Scenario::Rgbd => 0,
            Scenario::DOnly => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Scenario::Rgbd),
            1 => Some(Scenario::DOnly),
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Rgbd => "rgbd",
            Scenario::DOnly => "d",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgbd" => Ok(Scenario::Rgbd),
            "d" | "d_only" | "d-only" | "donly" => Ok(Scenario::DOnly),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Probability matching on ensemble variance.
    Pm,
    /// Greedy top-variance selection.
    Max,
    Random,
    Grid,
    /// Probability matching on the true squared error of the ensemble mean.
    OracleSqerr,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] = [
        SamplerKind::Pm,
        SamplerKind::Max,
        SamplerKind::Random,
        SamplerKind::Grid,
        SamplerKind::OracleSqerr,
    ];

    /// Samplers that place their whole budget at once without an ensemble.
    pub fn is_single_shot(self) -> bool {
        matches!(self, SamplerKind::Random | SamplerKind::Grid)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Pm => "pm",
            SamplerKind::Max => "max",
            SamplerKind::Random => "random",
            SamplerKind::Grid => "grid",
            SamplerKind::OracleSqerr => "oracle_sqerr",
        })
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pm" => Ok(SamplerKind::Pm),
            "max" => Ok(SamplerKind::Max),
            "random" | "rnd" => Ok(SamplerKind::Random),
            "grid" => Ok(SamplerKind::Grid),
            "oracle_sqerr" | "oracle" => Ok(SamplerKind::OracleSqerr),
            other => Err(Error::Config(format!("unknown sampler {other:?}"))),
        }
    }
}

/// Splits a budget of `budget` samples over `phases` phases.
///
/// The first `budget % phases` phases get one extra sample.
pub fn allocate_phases(budget: usize, phases: usize) -> Result<Vec<usize>> {
    if phases == 0 || phases > budget {
        return Err(Error::InvalidPlan(format!(
            "need 1 <= phases <= budget, got budget {budget}, phases {phases}"
        )));
    }
    let base = budget / phases;
    let extra = budget % phases;
    Ok((0..phases).map(|k| base + usize::from(k < extra)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub budget: usize,
    pub phases: usize,
    pub per_phase: Vec<usize>,
    pub sampler: SamplerKind,
    /// Ensemble members per phase (trees per phase forest for the forest provider).
    pub ensemble_size: usize,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(
        budget: usize,
        phases: usize,
        sampler: SamplerKind,
        ensemble_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if sampler.is_single_shot() && phases != 1 {
            return Err(Error::InvalidPlan(format!(
                "{sampler} sampling is single-shot, got {phases} phases"
            )));
        }
        if !sampler.is_single_shot() && ensemble_size < 2 {
            return Err(Error::InvalidPlan(format!(
                "ensemble size must be at least 2, got {ensemble_size}"
            )));
        }
        let per_phase = allocate_phases(budget, phases)?;
        Ok(SamplingPlan {
            budget,
            phases,
            per_phase,
            sampler,
            ensemble_size,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let rebuilt = SamplingPlan::new(
            self.budget,
            self.phases,
            self.sampler,
            self.ensemble_size,
            self.seed,
        )?;
        if rebuilt.per_phase != self.per_phase {
            return Err(Error::InvalidPlan(format!(
                "per-phase allocation {:?} does not match {:?}",
                self.per_phase, rebuilt.per_phase
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub trees_per_phase_forest: usize,
    pub trees_final: usize,
    pub pixels_per_image_subsample: usize,
    pub neighbors: usize,
    /// Standard deviation of additive measurement noise in meters.
    pub noise_sigma: Option<f64>,
    /// Bottom-center crop applied when loading scenes, as (width, height).
    pub crop: Option<(usize, usize)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Scenario::Rgbd,
            trees_per_phase_forest: 40,
            trees_final: 500,
            pixels_per_image_subsample: 2048,
            neighbors: 3,
            noise_sigma: None,
            crop: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees_per_phase_forest == 0 || self.trees_final == 0 {
            return Err(Error::Config("tree counts must be positive".into()));
        }
        if self.pixels_per_image_subsample == 0 {
            return Err(Error::Config("subsample size must be positive".into()));
        }
        if self.neighbors == 0 {
            return Err(Error::Config("need at least one neighbor".into()));
        }
        if let Some(sigma) = self.noise_sigma {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::Config(format!("noise sigma {sigma}")));
            }
        }
        if let Some((w, h)) = self.crop {
            if w == 0 || h == 0 {
                return Err(Error::Config("crop dimensions must be positive".into()));
            }
        }
        Ok(())
    }

    /// Feature vector length for the configured scenario and neighbor count.
    pub fn feature_len(&self) -> usize {
        match self.scenario {
            Scenario::Rgbd => 5 + 7 * self.neighbors,
            Scenario::DOnly => 2 + 4 * self.neighbors,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_phases(1024, 8).unwrap(), vec![128; 8]);
        assert_eq!(allocate_phases(10, 4).unwrap(), vec![3, 3, 2, 2]);
        assert_eq!(allocate_phases(5, 5).unwrap(), vec![1; 5]);
        assert_eq!(allocate_phases(255, 4).unwrap(), vec![64, 64, 64, 63]);
    }

    #[test]
    fn allocation_rejects_bad_phase_counts() {
        assert!(matches!(allocate_phases(3, 4), Err(Error::InvalidPlan(_))));
        assert!(matches!(allocate_phases(3, 0), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn single_shot_samplers_need_one_phase() {
        assert!(SamplingPlan::new(16, 2, SamplerKind::Grid, 40, 0).is_err());
        assert!(SamplingPlan::new(16, 1, SamplerKind::Random, 1, 0).is_ok());
        assert!(SamplingPlan::new(16, 2, SamplerKind::Pm, 1, 0).is_err());
    }

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.trees_per_phase_forest, 40);
        assert_eq!(c.trees_final, 500);
        assert_eq!(c.pixels_per_image_subsample, 2048);
        assert_eq!(c.neighbors, 3);
        assert_eq!(c.feature_len(), 26);
        let d = RunConfig {
            scenario: Scenario::DOnly,
            ..c
        };
        assert_eq!(d.feature_len(), 14);
    }

    #[test]
    fn names_round_trip() {
        for s in SamplerKind::ALL {
            assert_eq!(s.to_string().parse::<SamplerKind>().unwrap(), s);
        }
        assert_eq!("rgbd".parse::<Scenario>().unwrap(), Scenario::Rgbd);
        assert_eq!("d".parse::<Scenario>().unwrap(), Scenario::DOnly);
    }

    proptest::proptest! {
        #[test]
        fn allocation_sums_and_is_non_increasing(budget in 1usize..5000, k in 1usize..64) {
            proptest::prop_assume!(k <= budget);
            let a = allocate_phases(budget, k).unwrap();
            proptest::prop_assert_eq!(a.len(), k);
            proptest::prop_assert_eq!(a.iter().sum::<usize>(), budget);
            proptest::prop_assert!(a.windows(2).all(|w| w[0] >= w[1] && w[0] - w[1] <= 1));
        }
    }
}
