//! `key = value` configuration files mirroring the training and synthetic
//! benchmark parameters. Unknown keys are rejected so typos fail loudly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use kadapt_core::kernel::KernelSpec;
use kadapt_core::model::ArchitectureConfig;
use kadapt_core::train::{Objective, TrainConfig};

use crate::error::{HarnessError, Result};
use crate::synth::SyntheticSpec;

pub struct ConfigFile {
    entries: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

impl ConfigFile {
    pub fn empty() -> Self {
        ConfigFile { entries: BTreeMap::new(), consumed: BTreeSet::new() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::validation(format!(
                    "config line {}: expected 'key = value', got '{line}'",
                    i + 1
                )));
            };
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(HarnessError::validation(format!(
                    "config line {}: duplicate key '{key}'",
                    i + 1
                )));
            }
        }
        Ok(ConfigFile { entries, consumed: BTreeSet::new() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            HarnessError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn take(&mut self, key: &str) -> Option<String> {
        if let Some(v) = self.entries.get(key) {
            self.consumed.insert(key.to_string());
            Some(v.clone())
        } else {
            None
        }
    }

    fn parse_as<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                HarnessError::validation(format!("config key '{key}': bad value '{v}'"))
            }),
        }
    }

    fn list_f64(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|t| {
                    t.trim().parse().map_err(|_| {
                        HarnessError::validation(format!("config key '{key}': bad number '{t}'"))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    fn list_string(&mut self, key: &str) -> Option<Vec<String>> {
        self.take(key)
            .map(|v| v.split(',').map(|t| t.trim().to_string()).collect())
    }

    /// Error on any key that no consumer asked for.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&String> =
            self.entries.keys().filter(|k| !self.consumed.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::validation(format!(
                "unknown config keys: {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

/// Apply synthetic-benchmark keys over the defaults.
pub fn synth_spec(cfg: &mut ConfigFile) -> Result<SyntheticSpec> {
    let mut spec = SyntheticSpec::default();
    if let Some(v) = cfg.parse_as("side")? {
        spec.side = v;
    }
    if let Some(v) = cfg.parse_as("seed")? {
        spec.seed = v;
    }
    if let Some(v) = cfg.parse_as("subjects_train")? {
        spec.subjects_train = v;
    }
    if let Some(v) = cfg.parse_as("subjects_test")? {
        spec.subjects_test = v;
    }
    if let Some(v) = cfg.parse_as("subjects_devel")? {
        spec.subjects_devel = v;
    }
    if let Some(v) = cfg.parse_as("real_videos_per_subject")? {
        spec.real_videos_per_subject = v;
    }
    if let Some(v) = cfg.parse_as("fake_videos_per_subject")? {
        spec.fake_videos_per_subject = v;
    }
    if let Some(v) = cfg.parse_as("frames_per_video")? {
        spec.frames_per_video = v;
    }
    if let Some(v) = cfg.list_string("modalities") {
        spec.modalities = v;
    }
    if let Some(v) = cfg.list_f64("base_frequencies")? {
        spec.base_frequencies = v;
    }
    for (prefix, recipe) in
        [("source", &mut spec.source), ("target", &mut spec.target)]
    {
        if let Some(v) = cfg.parse_as(&format!("{prefix}_brightness"))? {
            recipe.photometric.brightness = v;
        }
        if let Some(v) = cfg.parse_as(&format!("{prefix}_contrast"))? {
            recipe.photometric.contrast = v;
        }
        if let Some(v) = cfg.parse_as(&format!("{prefix}_noise_sigma"))? {
            recipe.photometric.noise_sigma = v;
        }
        if let Some(v) = cfg.parse_as(&format!("{prefix}_freq_shift"))? {
            recipe.texture_freq_shift = v;
        }
        if let Some(v) = cfg.parse_as(&format!("{prefix}_carrier_amplitude"))? {
            recipe.carrier_amplitude = v;
        }
        if let Some(v) = cfg.parse_as(&format!("{prefix}_carrier_freq"))? {
            recipe.carrier_freq = v;
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Training keys shared by `train` and `cross-test`.
pub struct TrainSettings {
    pub arch: ArchitectureConfig,
    pub config: TrainConfig,
    pub labeled_target_subjects: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            arch: ArchitectureConfig::desk(),
            config: TrainConfig::new(Objective::Semisupervised),
            labeled_target_subjects: 1,
            checkpoint_every: 0,
        }
    }
}

pub fn train_settings(cfg: &mut ConfigFile) -> Result<TrainSettings> {
    let mut s = TrainSettings::default();
    if let Some(v) = cfg.take("arch") {
        s.arch = ArchitectureConfig::preset(&v)?;
    }
    if let Some(v) = cfg.take("objective") {
        s.config.objective = Objective::parse(&v)?;
    }
    if let Some(v) = cfg.parse_as("lambda")? {
        s.config.lambda = v;
    }
    if let Some(v) = cfg.parse_as("batch_size")? {
        s.config.batch_size = v;
    }
    if let Some(v) = cfg.parse_as("epochs")? {
        s.config.epochs = v;
    }
    if let Some(v) = cfg.parse_as("learning_rate")? {
        s.config.learning_rate = v;
    }
    if let Some(v) = cfg.parse_as("seed")? {
        s.config.seed = v;
    }
    if let Some(v) = cfg.list_f64("bandwidths")? {
        s.config.kernel = KernelSpec::new(v)?;
    }
    if let Some(v) = cfg.parse_as("labeled_target_subjects")? {
        s.labeled_target_subjects = v;
    }
    if let Some(v) = cfg.parse_as("checkpoint_every")? {
        s.checkpoint_every = v;
    }
    Ok(s)
}
