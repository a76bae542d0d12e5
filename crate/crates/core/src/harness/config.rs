use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GrnError, Result};
use crate::predictor::PredictorConfig;
use crate::refine::ScheduleConfig;
use crate::sampler::SampleConfig;
use crate::synthdata::DatasetSpec;
use crate::trainer::TrainConfig;

/// Output directory used when neither `--out` nor `out` is given.
pub const DEFAULT_OUT: &str = "grn-lab-out";

/// One experiment: data, model, optimizer, decoding and evaluation settings.
///
/// A top-level `seed` (or `--seed`) overrides `train.seed` and `sample.seed`;
/// `data.seed` stays independent so runs can share one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DatasetSpec,
    /// Load a dataset written by `build-data` instead of regenerating it.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    pub model: PredictorConfig,
    pub train: TrainConfig,
    #[serde(default = "default_sample")]
    pub sample: SampleConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_sample() -> SampleConfig {
    SampleConfig::fixed(50, 1.0, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples_per_class: usize,
    /// Compare samples against the dataset; off reports trace statistics only.
    pub reference: bool,
    /// Paired seeds per ablation arm.
    pub seeds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 10,
            reference: true,
            seeds: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GrnError::config(e.to_string().trim_end().to_string()))
    }

    /// Reads, applies overrides, then validates.
    pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GrnError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| GrnError::config(format!("{}: {e}", path.display())))?;
        cfg.apply_overrides(seed, out);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<&Path>) {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.sample.seed = s;
        }
        if let Some(o) = out {
            self.out = Some(o.to_path_buf());
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.sample.validate()?;
        self.schedule.validate()?;
        let d = &self.data;
        let m = &self.model;
        let channels = d.channels();
        let n_pos = d.n_pos();
        if m.n_pos != n_pos {
            return Err(GrnError::config(format!(
                "model.n_pos ({}) does not match data.grid {:?} ({n_pos} positions)",
                m.n_pos, d.grid
            )));
        }
        let variant = self.train.variant;
        let (c_eff, k) = variant.token_dims(channels, d.rounds);
        let vname = format!("{variant:?}").to_lowercase();
        if m.c_eff != c_eff {
            return Err(GrnError::config(format!(
                "model.c_eff ({}) does not match train.variant = {vname} over data.grid channels {channels} \
                 and data.rounds {} (expected {c_eff})",
                m.c_eff, d.rounds
            )));
        }
        if m.k != k {
            return Err(GrnError::config(format!(
                "model.k ({}) does not match train.variant = {vname} with data.rounds {} (expected {k})",
                m.k, d.rounds
            )));
        }
        if m.n_classes != d.n_classes {
            return Err(GrnError::config(format!(
                "model.n_classes ({}) does not match data.n_classes ({})",
                m.n_classes, d.n_classes
            )));
        }
        if self.sample.target_mode != self.train.target_mode {
            return Err(GrnError::config(format!(
                "sample.target_mode ({:?}) differs from train.target_mode ({:?})",
                self.sample.target_mode, self.train.target_mode
            )));
        }
        if self.eval.samples_per_class == 0 || self.eval.seeds == 0 {
            return Err(GrnError::config("eval.samples_per_class and eval.seeds must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
[data]
family = "mixed"
n_classes = 10
maps_per_class = 4
grid = [1, 8, 8, 4]
rounds = 2
noise_sigma = 0.8
[model]
depth = 2
hidden = 64
heads = 4
ff_hidden = 128
n_pos = 64
c_eff = 8
k = 2
n_classes = 10
[train]
variant = "bit"
steps = 10
batch_size = 4
lr = 2e-3
[sample]
mode = "refine"
selection = "random"
schedule = { kind = "adaptive", k = 30.0, b = 0.0 }
cfg_scale = 1.0
cfg_start = 0.0
temperature = 1.0
"#;

    fn edit(from: &str, to: &str) -> Result<ExperimentConfig> {
        assert!(BASE.contains(from), "{from}");
        let cfg = ExperimentConfig::from_toml(&BASE.replace(from, to))?;
        cfg.validate().map(|_| cfg)
    }

    #[test]
    fn base_parses_and_seed_propagates() {
        let mut cfg = ExperimentConfig::from_toml(BASE).unwrap();
        cfg.validate().unwrap();
        cfg.apply_overrides(None, None);
        assert_eq!((cfg.train.seed, cfg.sample.seed), (3, 3));
        cfg.apply_overrides(Some(9), Some(Path::new("x")));
        assert_eq!((cfg.train.seed, cfg.sample.seed), (9, 9));
        assert_eq!(cfg.out_dir(), PathBuf::from("x"));
        match &cfg.sample.schedule {
            crate::sampler::Schedule::Adaptive(s) => {
                assert_eq!((s.k, s.b, s.t_min, s.t_max), (30.0, 0.0, 20, 50));
            }
            other => panic!("{other:?}"),
        }
    }

    fn names_both(err: GrnError, a: &str, b: &str) {
        let msg = err.to_string();
        assert!(matches!(err, GrnError::Config(_)), "{msg}");
        assert!(msg.contains(a) && msg.contains(b), "{msg}");
    }

    #[test]
    fn cross_field_errors_name_both_fields() {
        names_both(edit("n_pos = 64", "n_pos = 63").unwrap_err(), "model.n_pos", "data.grid");
        names_both(edit("c_eff = 8", "c_eff = 4").unwrap_err(), "model.c_eff", "train.variant");
        names_both(edit("k = 2\n", "k = 4\n").unwrap_err(), "model.k", "data.rounds");
        names_both(edit("n_classes = 10\n[train]", "n_classes = 9\n[train]").unwrap_err(), "model.n_classes", "data.n_classes");
        names_both(
            edit("variant = \"bit\"", "variant = \"ind\"").unwrap_err(),
            "model.c_eff",
            "train.variant",
        );
        names_both(
            edit("lr = 2e-3", "lr = 2e-3\ntarget_mode = \"relative\"").unwrap_err(),
            "sample.target_mode",
            "train.target_mode",
        );
        names_both(
            edit("mode = \"refine\"\nselection = \"random\"", "mode = \"mask\"\nselection = \"confidence\"").unwrap_err(),
            "sample.mode",
            "sample.selection",
        );
        names_both(
            edit("k = 30.0, b = 0.0", "k = 30.0, b = 0.0, t_min = 60").unwrap_err(),
            "schedule.t_min",
            "schedule.t_max",
        );
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = edit("rounds = 2", "rounds = 2\nround = 3").unwrap_err();
        assert!(err.to_string().contains("round"), "{err}");
        assert!(edit("depth = 2", "depth = 2\nwidth = 1").is_err());
    }
}
