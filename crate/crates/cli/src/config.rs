use std::path::{Path, PathBuf};

use distinit::baseline::BaselineConfig;
use distinit::objective::ObjectiveConfig;
use distinit::optimizer::OptimizerConfig;
use distinit::phantom::PhantomSpec;
use distinit::sweep::{Dataset, SweepSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Input and output locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub fixed: Option<PathBuf>,
    pub moving: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub init_transform: Option<PathBuf>,
    pub transform: Option<PathBuf>,
    pub fixed_landmarks: Option<PathBuf>,
    pub moving_landmarks: Option<PathBuf>,
    pub eval_fixed_landmarks: Option<PathBuf>,
    pub eval_moving_landmarks: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Everything a run can be configured with. Section defaults are the
/// library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the seed of every random component when set.
    pub seed: Option<u64>,
    /// 0 = warnings, 1 = info, 2+ = debug.
    pub verbosity: u8,
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
    pub baseline: BaselineConfig,
    pub phantom: PhantomSpec,
    pub sweep: SweepSpec,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Core(distinit::Error::Io { path: path.to_path_buf(), source: e }))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }

    /// Applies `seed` to every seeded section.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.phantom.rng_seed = seed;
        self.baseline.rng_seed = seed;
        if let Dataset::Phantoms { base, .. } = &mut self.sweep.dataset {
            base.rng_seed = seed;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_library_defaults() {
        let cfg = RunConfig::parse(Path::new("c.toml"), "").unwrap();
        assert_eq!(cfg.objective, ObjectiveConfig::default());
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
        assert_eq!(cfg.baseline, BaselineConfig::default());
        assert_eq!(cfg.phantom, PhantomSpec::default());
        assert_eq!(cfg.sweep, SweepSpec::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        for (text, key) in [
            ("bogus = 1", "bogus"),
            ("[optimizer]\ntau = 0.5\nstep = 2", "step"),
            ("[objective]\npp = 2", "pp"),
            ("[sweep.dataset]\nkind = \"phantoms\"\ncount = 2\nextra = 1\n[sweep.dataset.base]", "extra"),
        ] {
            let err = RunConfig::parse(Path::new("c.toml"), text).unwrap_err().to_string();
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_seed(42);
        cfg.paths.fixed = Some("f.mhd".into());
        let back = RunConfig::parse(Path::new("echo"), &cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.phantom.rng_seed, 42);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = RunConfig::parse(Path::new("c.toml"), "[optimizer]\nmax_iters = 7\n[objective]\np = 1").unwrap();
        assert_eq!(cfg.optimizer.max_iters, 7);
        assert_eq!(cfg.optimizer.tau, 0.5);
        assert_eq!(cfg.objective.p, 1);
    }
}
