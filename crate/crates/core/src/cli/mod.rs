//! Command-line front end.
//!
//! Every option can also come from a flat `key = value` file passed with
//! `--config`; flags given on the command line win.

mod bench;
mod commands;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, SamplerKind, SamplingPlan, Scenario};
use crate::error::{Error, Result};
use crate::synth::{RgbMode, SynthSpec};

pub use bench::{fit_target_budgets, is_train_scene, split_scenes, BenchRow, CorrRow, TargetRow};

#[derive(Debug, Parser)]
#[command(name = "adsample", version, about = "Adaptive depth sampling and random forest depth completion")]
pub struct Cli {
    /// Master seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` file with default option values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes as PNG files plus a manifest.
    Synth(SynthArgs),
    /// Train phase committees and the final forest on a manifest.
    Train(TrainArgs),
    /// Sample and complete every scene of a manifest with a trained model.
    Complete(CompleteArgs),
    /// Score predicted depth maps against a manifest's ground truth.
    Eval(EvalArgs),
    /// Train and evaluate a grid of samplers, budgets, phase counts and seeds.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SceneArgs {
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub gt_density: Option<f64>,
    #[arg(long)]
    pub depth_min: Option<f64>,
    #[arg(long)]
    pub depth_max: Option<f64>,
    /// `flat` (one color per surface) or `none`.
    #[arg(long)]
    pub rgb_mode: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// `rgbd` or `d`.
    #[arg(long)]
    pub scenario: Option<Scenario>,
    /// Trees per phase forest.
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    /// Trees in the final forest.
    #[arg(long)]
    pub trees_final: Option<usize>,
    /// Training pixels drawn per scene.
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Standard deviation of measurement noise in meters.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Bottom-center crop applied to loaded scenes, `WIDTHxHEIGHT`.
    #[arg(long)]
    pub crop: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scene: SceneArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sampler: Option<SamplerKind>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub phases: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `complete`.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scene manifest; synthetic scenes are generated when omitted.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Result CSV; existing pooled rows are kept and their cells skipped.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-phase variance / error correlation CSV (defaults next to `--out`).
    #[arg(long)]
    pub corr_out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub samplers: Option<Vec<SamplerKind>>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long = "phases", value_delimiter = ',')]
    pub phase_counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Report the budget needed for each target RMSE (mm) by log-log regression.
    #[arg(long, value_delimiter = ',')]
    pub target_rmse: Option<Vec<f64>>,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "threads",
    "scenes",
    "width",
    "height",
    "objects",
    "gt_density",
    "depth_min",
    "depth_max",
    "rgb_mode",
    "scenario",
    "ensemble_size",
    "trees_final",
    "subsample",
    "neighbors",
    "noise_sigma",
    "crop",
    "sampler",
    "budget",
    "phases",
    "samplers",
    "budgets",
    "seeds",
    "target_rmse",
];

/// Values from a `key = value` file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, found {line:?}")))?;
            let key = key.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(bad(format!("unknown key {key:?}")));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse().map_err(|e| Error::Config(format!("{key} = {v}: {e}"))))
            .transpose()
    }

    fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse().map_err(|e| Error::Config(format!("{key} = {v}: {e}"))))
                    .collect()
            })
            .transpose()
    }

    /// Flag value, else file value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn pick_list<T: FromStr>(&self, flag: Option<Vec<T>>, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get_list(key)?.unwrap_or(default),
        })
    }
}

/// `WIDTHxHEIGHT`.
pub fn parse_crop(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("crop {s:?} is not WIDTHxHEIGHT"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

/// Resolved global options.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: u64,
    pub file: ConfigFile,
}

impl Context {
    pub fn synth_spec(&self, a: &SceneArgs) -> Result<(SynthSpec, usize)> {
        let f = &self.file;
        let d = SynthSpec::default();
        let rgb_mode = match f.pick(a.rgb_mode.clone(), "rgb_mode", "flat".to_string())?.as_str() {
            "flat" => RgbMode::FlatColorPerObject,
            "none" => RgbMode::None,
            other => return Err(Error::Config(format!("unknown rgb mode {other:?}"))),
        };
        let spec = SynthSpec {
            width: f.pick(a.width, "width", d.width)?,
            height: f.pick(a.height, "height", d.height)?,
            n_objects: f.pick(a.objects, "objects", d.n_objects)?,
            depth_range: (
                f.pick(a.depth_min, "depth_min", d.depth_range.0)?,
                f.pick(a.depth_max, "depth_max", d.depth_range.1)?,
            ),
            gt_density: f.pick(a.gt_density, "gt_density", d.gt_density)?,
            rgb_mode,
            seed: self.seed,
        };
        spec.validate()?;
        Ok((spec, f.pick(a.scenes, "scenes", 20)?))
    }

    pub fn run_config(&self, a: &ModelArgs) -> Result<RunConfig> {
        let f = &self.file;
        let d = RunConfig::default();
        let crop = f.pick_opt(a.crop.clone(), "crop")?.map(|s: String| parse_crop(&s)).transpose()?;
        let config = RunConfig {
            scenario: f.pick(a.scenario, "scenario", d.scenario)?,
            trees_per_phase_forest: f.pick(a.ensemble_size, "ensemble_size", d.trees_per_phase_forest)?,
            trees_final: f.pick(a.trees_final, "trees_final", d.trees_final)?,
            pixels_per_image_subsample: f.pick(a.subsample, "subsample", d.pixels_per_image_subsample)?,
            neighbors: f.pick(a.neighbors, "neighbors", d.neighbors)?,
            noise_sigma: f.pick_opt(a.noise_sigma, "noise_sigma")?,
            crop,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn plan(&self, a: &TrainArgs, config: &RunConfig) -> Result<SamplingPlan> {
        let f = &self.file;
        let sampler = f.pick(a.sampler, "sampler", SamplerKind::Pm)?;
        let default_phases = if sampler.is_single_shot() { 1 } else { 8 };
        SamplingPlan::new(
            f.pick(a.budget, "budget", 256)?,
            f.pick(a.phases, "phases", default_phases)?,
            sampler,
            config.trees_per_phase_forest,
            self.seed,
        )
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let threads = file.pick_opt(cli.threads, "threads")?;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let ctx = Context {
        seed: file.pick(cli.seed, "seed", 0)?,
        file,
    };
    match &cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Complete(a) => commands::complete(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Bench(a) => bench::bench(&ctx, a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_and_flags() {
        let f = ConfigFile::parse(
            "# defaults\nbudget = 128\nsamplers = pm, random\nnoise-sigma = 0.5 # meters\n",
            Path::new("c.txt"),
        )
        .unwrap();
        assert_eq!(f.pick(None, "budget", 1usize).unwrap(), 128);
        assert_eq!(f.pick(Some(7usize), "budget", 1).unwrap(), 7);
        assert_eq!(f.pick(None, "phases", 8usize).unwrap(), 8);
        assert_eq!(
            f.pick_list::<SamplerKind>(None, "samplers", vec![]).unwrap(),
            vec![SamplerKind::Pm, SamplerKind::Random]
        );
        assert_eq!(f.pick_opt::<f64>(None, "noise_sigma").unwrap(), Some(0.5));
        assert!(ConfigFile::parse("bogus = 1", Path::new("c")).is_err());
        assert!(ConfigFile::parse("budget 1", Path::new("c")).is_err());
        let bad = ConfigFile::parse("budget = many", Path::new("c")).unwrap();
        assert!(bad.pick(None, "budget", 1usize).is_err());
    }

    #[test]
    fn crop_parsing() {
        assert_eq!(parse_crop("1216x352").unwrap(), (1216, 352));
        assert!(parse_crop("1216").is_err());
        assert!(parse_crop("ax3").is_err());
    }

    #[test]
    fn command_line_parses() {
        let cli = Cli::try_parse_from([
            "adsample", "--seed", "7", "bench", "--out", "r.csv", "--samplers", "pm,grid", "--budgets", "64,128",
            "--phases", "1,8", "--scenario", "d",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(7));
        let Command::Bench(b) = cli.command else { panic!() };
        assert_eq!(b.samplers, Some(vec![SamplerKind::Pm, SamplerKind::Grid]));
        assert_eq!(b.phase_counts, Some(vec![1, 8]));
        assert_eq!(b.model.scenario, Some(Scenario::DOnly));
    }
}
