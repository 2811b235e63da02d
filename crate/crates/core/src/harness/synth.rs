//! Synthetic two-speaker corpus with a known shared latent.
//!
//! Each utterance draws a smooth latent trajectory from independent
//! second-order autoregressive processes. The source speaker renders it
//! through a fixed random two-layer tanh map, the target speaker through a
//! perturbed copy of that map, and both add white observation noise. Paired
//! entries render one trajectory twice; unpaired entries get fresh
//! trajectories, with the other speaker's rendering kept aside as ground
//! truth.

use std::path::{Path, PathBuf};

use super::manifest::{DatasetManifest, Entry, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::features::{write_features, FeatureSequence, MCEP_DIM};
use crate::graph::RngState;
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_source_only: usize,
    pub n_target_only: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Mean utterance length in frames.
    pub frames: usize,
    /// Lengths are uniform in `frames ± jitter`.
    pub jitter: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub dim: usize,
    /// Relative size of the perturbation separating the two speakers' maps.
    pub speaker_gap: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_train: 100,
            n_source_only: 0,
            n_target_only: 0,
            n_validation: 10,
            n_test: 20,
            frames: 200,
            jitter: 20,
            latent_dim: 4,
            hidden: 16,
            dim: MCEP_DIM,
            speaker_gap: 0.6,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train + self.n_source_only + self.n_target_only == 0 {
            return Err(Error::Config("synthetic corpus needs at least one training utterance".into()));
        }
        if self.frames == 0 || self.jitter >= self.frames || self.latent_dim == 0 || self.hidden == 0 || self.dim == 0 {
            return Err(Error::Config("synthetic sizes must be positive with jitter < frames".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.speaker_gap >= 0.0) {
            return Err(Error::Config("noise_std and speaker_gap must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Paired,
    SourceOnly,
    TargetOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub prompt: String,
    pub split: Split,
    pub kind: SynthKind,
    pub latent: Matrix<f64>,
    /// Renderings by both speakers; for unpaired entries the one not listed
    /// in the manifest is ground truth only.
    pub source: FeatureSequence<f64>,
    pub target: FeatureSequence<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: SynthSpec,
    pub utterances: Vec<SynthUtterance>,
}

struct SpeakerMap {
    w1: Matrix<f64>,
    b1: Vec<f64>,
    w2: Matrix<f64>,
    b2: Vec<f64>,
    log_f0: f64,
}

impl SpeakerMap {
    fn render(&self, latent: &Matrix<f64>, scale: &[f64], noise: f64, rng: &mut RngState) -> FeatureSequence<f64> {
        let t = latent.rows();
        let mut h = latent.matmul(&self.w1);
        for i in 0..t {
            for (v, b) in h.row_mut(i).iter_mut().zip(&self.b1) {
                *v = (*v + b).tanh();
            }
        }
        let mut m = h.matmul(&self.w2);
        for i in 0..t {
            for (k, v) in m.row_mut(i).iter_mut().enumerate() {
                *v = (*v + self.b2[k] + noise * rng.normal()) * scale[k];
            }
        }
        let c0 = (0..t).map(|i| 1.0 + 0.3 * latent[(i, 0)]).collect();
        let voiced: Vec<bool> = (0..t)
            .map(|i| latent[(i, 1 % latent.cols())] > -0.8)
            .collect();
        let f0 = (0..t)
            .map(|i| {
                if voiced[i] {
                    (self.log_f0 + 0.08 * latent[(i, 2 % latent.cols())]).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let ap = voiced.iter().map(|&v| if v { 0.0 } else { 1.0 }).collect();
        FeatureSequence::new(m, c0, f0, ap, 0.005).expect("consistent synthetic tracks")
    }
}

fn gaussian_matrix(rng: &mut RngState, r: usize, c: usize, std: f64) -> Matrix<f64> {
    Matrix::from_fn(r, c, |_, _| std * rng.normal())
}

/// Smooth latent: per-dimension AR(2) with a complex pole pair of radius
/// 0.95, scaled to unit stationary variance.
fn latent_trajectory(rng: &mut RngState, frames: usize, dims: usize, freqs: &[f64]) -> Matrix<f64> {
    const RADIUS: f64 = 0.95;
    const BURN_IN: usize = 50;
    let mut out = Matrix::zeros(frames, dims);
    for (d, &w) in freqs.iter().enumerate().take(dims) {
        let (a1, a2) = (2.0 * RADIUS * w.cos(), -RADIUS * RADIUS);
        let var = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2).powi(2) - a1 * a1));
        let std = var.sqrt();
        let (mut p1, mut p2) = (0.0, 0.0);
        for t in 0..frames + BURN_IN {
            let v = a1 * p1 + a2 * p2 + rng.normal();
            p2 = p1;
            p1 = v;
            if t >= BURN_IN {
                out[(t - BURN_IN, d)] = v / std;
            }
        }
    }
    out
}

pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut maps_rng = RngState::stream(spec.seed, 0);
    let (l, h, d) = (spec.latent_dim, spec.hidden, spec.dim);
    let source = SpeakerMap {
        w1: gaussian_matrix(&mut maps_rng, l, h, 1.0 / (l as f64).sqrt()),
        b1: (0..h).map(|_| 0.5 * maps_rng.normal()).collect(),
        w2: gaussian_matrix(&mut maps_rng, h, d, 1.0 / (h as f64).sqrt()),
        b2: (0..d).map(|_| 0.5 * maps_rng.normal()).collect(),
        log_f0: 110f64.ln(),
    };
    let g = spec.speaker_gap;
    let perturb = |m: &Matrix<f64>, rng: &mut RngState, std: f64| {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] + g * std * rng.normal())
    };
    let target = SpeakerMap {
        w1: perturb(&source.w1, &mut maps_rng, 1.0 / (l as f64).sqrt()),
        b1: source.b1.iter().map(|b| b + g * 0.5 * maps_rng.normal()).collect(),
        w2: perturb(&source.w2, &mut maps_rng, 1.0 / (h as f64).sqrt()),
        b2: source.b2.iter().map(|b| b + 0.5 * maps_rng.normal()).collect(),
        log_f0: 210f64.ln(),
    };
    let freqs: Vec<f64> = (0..l).map(|_| maps_rng.uniform(0.04, 0.25)).collect();
    let scale: Vec<f64> = (0..d).map(|k| 1.0 / (1.0 + 0.15 * k as f64)).collect();

    let mut rng = RngState::stream(spec.seed, 1);
    let plan = [
        (Split::Train, SynthKind::Paired, spec.n_train, "p"),
        (Split::Train, SynthKind::SourceOnly, spec.n_source_only, "s"),
        (Split::Train, SynthKind::TargetOnly, spec.n_target_only, "t"),
        (Split::Validation, SynthKind::Paired, spec.n_validation, "v"),
        (Split::Test, SynthKind::Paired, spec.n_test, "e"),
    ];
    let mut utterances = Vec::new();
    for (split, kind, count, tag) in plan {
        for i in 0..count {
            let lo = spec.frames - spec.jitter;
            let frames = lo + rng.below(2 * spec.jitter + 1);
            let latent = latent_trajectory(&mut rng, frames, l, &freqs);
            let src = source.render(&latent, &scale, spec.noise_std, &mut rng);
            let tgt = target.render(&latent, &scale, spec.noise_std, &mut rng);
            utterances.push(SynthUtterance {
                prompt: format!("{tag}{:04}", i + 1),
                split,
                kind,
                latent,
                source: src,
                target: tgt,
            });
        }
    }
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        utterances,
    })
}

impl SyntheticCorpus {
    /// Writes `source/`, `target/` and `truth/` feature files plus
    /// `manifest.txt` and `truth.txt` under `dir`. Ground-truth renderings of
    /// unpaired entries go only to `truth/`, which the manifest never
    /// references.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        for sub in ["source", "target", "truth"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        let file = |sub: &str, prompt: &str| -> PathBuf { dir.join(sub).join(format!("{prompt}.vcf")) };
        let mut manifest = DatasetManifest::default();
        let mut truth = String::new();
        for u in &self.utterances {
            let entry = match u.kind {
                SynthKind::Paired => {
                    write_features(file("source", &u.prompt), &u.source)?;
                    write_features(file("target", &u.prompt), &u.target)?;
                    Entry::Paired {
                        source: file("source", &u.prompt),
                        target: file("target", &u.prompt),
                    }
                }
                SynthKind::SourceOnly => {
                    write_features(file("source", &u.prompt), &u.source)?;
                    write_features(file("truth", &u.prompt), &u.target)?;
                    truth.push_str(&format!("source/{0}.vcf truth/{0}.vcf\n", u.prompt));
                    Entry::Source(file("source", &u.prompt))
                }
                SynthKind::TargetOnly => {
                    write_features(file("target", &u.prompt), &u.target)?;
                    write_features(file("truth", &u.prompt), &u.source)?;
                    truth.push_str(&format!("truth/{0}.vcf target/{0}.vcf\n", u.prompt));
                    Entry::Target(file("target", &u.prompt))
                }
            };
            manifest.entries.push(ManifestEntry { entry, split: u.split });
        }
        manifest.validate()?;
        manifest.save(dir.join("manifest.txt"))?;
        std::fs::write(dir.join("truth.txt"), truth)?;
        Ok(manifest)
    }
}
