//! `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use super::synth::SynthSpec;
use crate::error::{Error, Result};
use crate::features::FrameConfig;
use crate::gmm::DEFAULT_COMPONENTS;
use crate::ssvc::{DblstmConfig, SsVcConfig, TrainConfig};
use crate::stats::McdAlignment;

/// Parsed `key = value` lines. `#` starts a comment; keys are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", no + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(k.to_string(), (v.trim().to_string(), no + 1)).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        match self.entries.get(key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse()
                .map_err(|_| Error::Config(format!("line {line}: bad value `{v}` for `{key}`"))),
        }
    }

    pub fn get_list<V: FromStr>(&self, key: &str, default: &[V]) -> Result<Vec<V>>
    where
        V: Clone,
    {
        match self.entries.get(key) {
            None => Ok(default.to_vec()),
            Some((v, line)) => v
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::Config(format!("line {line}: bad list item `{t}` for `{key}`")))
                })
                .collect(),
        }
    }

    /// Fails on any key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(Error::Config(format!("line {line}: unknown key `{k}`")));
            }
        }
        Ok(())
    }
}

/// Every tunable of the training and evaluation pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub frame: FrameConfig,
    pub model: SsVcConfig,
    pub baseline: DblstmConfig,
    pub train: TrainConfig,
    pub gmm_components: usize,
    pub mcd_alignment: McdAlignment,
    pub dtw_band: Option<usize>,
    pub repeats: usize,
    pub record_timing: bool,
    pub budget: usize,
    pub parallel_counts: Vec<usize>,
    pub nonparallel_counts: Vec<usize>,
    pub synth: SynthSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            frame: FrameConfig::default(),
            model: SsVcConfig::default(),
            baseline: DblstmConfig::default(),
            train: TrainConfig::default(),
            gmm_components: DEFAULT_COMPONENTS,
            mcd_alignment: McdAlignment::Dtw,
            dtw_band: None,
            repeats: 3,
            record_timing: false,
            budget: 100,
            parallel_counts: vec![1, 10, 100],
            nonparallel_counts: vec![0, 10, 50, 100],
            synth: SynthSpec::default(),
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "fft_size",
    "frame_hop",
    "n_cepstra",
    "mel_warp",
    "n_bands",
    "f0_min",
    "f0_max",
    "voicing_threshold",
    "sample_rate",
    "encoder_widths",
    "decoder_widths",
    "latent_dim",
    "sigma2",
    "baseline_widths",
    "learning_rate",
    "max_steps",
    "min_epoch_steps",
    "patience",
    "gmm_components",
    "mcd_alignment",
    "dtw_band",
    "repeats",
    "record_timing",
    "budget",
    "parallel_counts",
    "nonparallel_counts",
    "synth_train",
    "synth_source_only",
    "synth_target_only",
    "synth_validation",
    "synth_test",
    "synth_frames",
    "synth_jitter",
    "synth_latent_dim",
    "synth_hidden",
    "synth_speaker_gap",
    "synth_noise_std",
];

fn pair(kv: &KeyValues, key: &str, default: [usize; 2]) -> Result<[usize; 2]> {
    let v: Vec<usize> = kv.get_list(key, &default)?;
    v.try_into()
        .map_err(|_| Error::Config(format!("`{key}` needs exactly two widths")))
}

impl ExperimentConfig {
    /// Reads every known key, falling back to defaults; `seed` comes from
    /// the command line, never the file.
    pub fn from_key_values(kv: &KeyValues, seed: u64) -> Result<Self> {
        kv.reject_unknown(CONFIG_KEYS)?;
        let d = ExperimentConfig::default();
        let df = &d.frame;
        let frame = FrameConfig {
            fft_size: kv.get("fft_size", df.fft_size)?,
            hop: kv.get("frame_hop", df.hop)?,
            n_cepstra: kv.get("n_cepstra", df.n_cepstra)?,
            mel_warp: kv.get("mel_warp", df.mel_warp)?,
            n_bands: kv.get("n_bands", df.n_bands)?,
            f0_min: kv.get("f0_min", df.f0_min)?,
            f0_max: kv.get("f0_max", df.f0_max)?,
            voicing_threshold: kv.get("voicing_threshold", df.voicing_threshold)?,
            sample_rate: kv.get("sample_rate", df.sample_rate)?,
        };
        frame.validate().map_err(|e| Error::Config(e.to_string()))?;
        // c0 is carried separately, so models see one coefficient fewer
        let input_dim = frame.n_cepstra - 1;
        let model = SsVcConfig {
            input_dim,
            encoder_widths: pair(kv, "encoder_widths", d.model.encoder_widths)?,
            decoder_widths: pair(kv, "decoder_widths", d.model.decoder_widths)?,
            latent_dim: kv.get("latent_dim", d.model.latent_dim)?,
            sigma2: kv.get("sigma2", d.model.sigma2)?,
        };
        model.validate()?;
        let baseline = DblstmConfig {
            input_dim,
            widths: kv.get_list("baseline_widths", &d.baseline.widths)?,
        };
        let train = TrainConfig {
            learning_rate: kv.get("learning_rate", d.train.learning_rate)?,
            max_steps: kv.get("max_steps", d.train.max_steps)?,
            min_epoch_steps: kv.get("min_epoch_steps", d.train.min_epoch_steps)?,
            patience: kv.get("patience", d.train.patience)?,
            seed,
        };
        let band: usize = kv.get("dtw_band", 0)?;
        let ds = &d.synth;
        let synth = SynthSpec {
            n_train: kv.get("synth_train", ds.n_train)?,
            n_source_only: kv.get("synth_source_only", ds.n_source_only)?,
            n_target_only: kv.get("synth_target_only", ds.n_target_only)?,
            n_validation: kv.get("synth_validation", ds.n_validation)?,
            n_test: kv.get("synth_test", ds.n_test)?,
            frames: kv.get("synth_frames", ds.frames)?,
            jitter: kv.get("synth_jitter", ds.jitter)?,
            latent_dim: kv.get("synth_latent_dim", ds.latent_dim)?,
            hidden: kv.get("synth_hidden", ds.hidden)?,
            dim: input_dim,
            speaker_gap: kv.get("synth_speaker_gap", ds.speaker_gap)?,
            noise_std: kv.get("synth_noise_std", ds.noise_std)?,
            seed,
        };
        synth.validate()?;
        let cfg = ExperimentConfig {
            frame,
            model,
            baseline,
            train,
            gmm_components: kv.get("gmm_components", d.gmm_components)?,
            mcd_alignment: kv.get("mcd_alignment", d.mcd_alignment)?,
            dtw_band: (band > 0).then_some(band),
            repeats: kv.get("repeats", d.repeats)?,
            record_timing: kv.get("record_timing", d.record_timing)?,
            budget: kv.get("budget", d.budget)?,
            parallel_counts: kv.get_list("parallel_counts", &d.parallel_counts)?,
            nonparallel_counts: kv.get_list("nonparallel_counts", &d.nonparallel_counts)?,
            synth,
        };
        if cfg.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if cfg.gmm_components == 0 {
            return Err(Error::Config("gmm_components must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, seed: u64) -> Result<Self> {
        let kv = match path {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        Self::from_key_values(&kv, seed)
    }
}
