//! Semi-supervised variational voice conversion.
//!
//! A shared bidirectional encoder maps either speaker's normalized cepstra to
//! a per-frame Gaussian posterior over a latent sequence `Z`; two decoders of
//! identical shape map `Z` back to source and target cepstra. Paired
//! utterances train both decoders from a sample of each speaker's posterior,
//! unpaired utterances train the encoder and their own speaker's decoder.

mod baseline;
mod train;

pub use baseline::{DblstmConfig, DblstmModel};
pub use train::{train, validation_mcd, LogRow, Objective, TrainConfig, Trainable, TrainingLog, ValidationPair};

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureSequence, MCEP_DIM};
use crate::graph::{
    AffineParams, BiGruParams, Graph, NoiseSource, ParamSet, RngState, Var, LOG_VAR_MAX, LOG_VAR_MIN,
};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::sections::{find, read_sections, SectionWriter};
use crate::stats::{convert_f0, SpeakerStats};

pub const DEFAULT_SIGMA2: f64 = 1e-3;
/// Longest sequence processed as one unit; longer utterances are chunked.
pub const MAX_CHUNK_FRAMES: usize = 600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Speaker {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsVcConfig {
    pub input_dim: usize,
    pub encoder_widths: [usize; 2],
    pub decoder_widths: [usize; 2],
    pub latent_dim: usize,
    pub sigma2: f64,
}

impl Default for SsVcConfig {
    fn default() -> Self {
        SsVcConfig {
            input_dim: MCEP_DIM,
            encoder_widths: [32, 64],
            decoder_widths: [64, 32],
            latent_dim: 16,
            sigma2: DEFAULT_SIGMA2,
        }
    }
}

impl SsVcConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self.encoder_widths.iter().chain(&self.decoder_widths);
        if self.input_dim == 0 || self.latent_dim == 0 || widths.clone().any(|&w| w == 0) {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BatchKind {
    Paired,
    SourceOnly,
    TargetOnly,
}

impl BatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchKind::Paired => "paired",
            BatchKind::SourceOnly => "source",
            BatchKind::TargetOnly => "target",
        }
    }
}

/// One training unit: normalized cepstra of a pair (target warped onto the
/// source timeline) or of a single speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch<T> {
    pub kind: BatchKind,
    pub x: Option<Matrix<T>>,
    pub y: Option<Matrix<T>>,
}

impl<T: Scalar> TrainingBatch<T> {
    pub fn paired(x: Matrix<T>, y: Matrix<T>) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::input(format!(
                "paired batch needs equal shapes, got {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        Self::check_len(&x)?;
        Ok(TrainingBatch {
            kind: BatchKind::Paired,
            x: Some(x),
            y: Some(y),
        })
    }

    pub fn source_only(x: Matrix<T>) -> Result<Self> {
        Self::check_len(&x)?;
        Ok(TrainingBatch {
            kind: BatchKind::SourceOnly,
            x: Some(x),
            y: None,
        })
    }

    pub fn target_only(y: Matrix<T>) -> Result<Self> {
        Self::check_len(&y)?;
        Ok(TrainingBatch {
            kind: BatchKind::TargetOnly,
            x: None,
            y: Some(y),
        })
    }

    fn check_len(m: &Matrix<T>) -> Result<()> {
        if m.rows() == 0 {
            return Err(Error::input("training batch has no frames"));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.x.as_ref().or(self.y.as_ref()).map_or(0, |m| m.rows())
    }

    /// Splits into pieces of at most `max` frames; each piece is processed
    /// independently with fresh recurrent state.
    pub fn chunks(&self, max: usize) -> Vec<Self> {
        let n = self.frames();
        if n <= max {
            return vec![self.clone()];
        }
        let pieces = n.div_ceil(max);
        let base = n.div_ceil(pieces);
        (0..pieces)
            .map(|p| {
                let (a, b) = (p * base, ((p + 1) * base).min(n));
                TrainingBatch {
                    kind: self.kind,
                    x: self.x.as_ref().map(|m| m.slice_rows(a, b)),
                    y: self.y.as_ref().map(|m| m.slice_rows(a, b)),
                }
            })
            .collect()
    }
}

/// Per-sample terms of a batch loss, reconstruction terms already scaled by
/// `1/(2σ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTerms<T> {
    pub posterior: Speaker,
    pub recon_x: Option<T>,
    pub recon_y: Option<T>,
    pub kl: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub samples: Vec<SampleTerms<T>>,
}

struct SampleVars {
    posterior: Speaker,
    recon_x: Option<Var>,
    recon_y: Option<Var>,
    kl: Var,
}

#[derive(Clone, Copy, Debug)]
struct DecoderParams {
    rnn: [BiGruParams; 2],
    out: AffineParams,
}

/// Converted utterance on the source timeline.
pub type ConversionResult<T> = FeatureSequence<T>;

#[derive(Clone, Debug)]
pub struct SsVcModel<T> {
    config: SsVcConfig,
    params: ParamSet<T>,
    encoder: [BiGruParams; 2],
    head_mu: AffineParams,
    head_logvar: AffineParams,
    decoder_x: DecoderParams,
    decoder_y: DecoderParams,
    pub source_stats: SpeakerStats<T>,
    pub target_stats: SpeakerStats<T>,
    /// Optimizer steps taken on paired batches.
    pub paired_steps: u64,
}

impl<T: Scalar> SsVcModel<T> {
    pub fn new(config: SsVcConfig, source_stats: SpeakerStats<T>, target_stats: SpeakerStats<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        for s in [&source_stats, &target_stats] {
            if s.dim() != config.input_dim {
                return Err(Error::Config(format!(
                    "stats have {} coefficients, model expects {}",
                    s.dim(),
                    config.input_dim
                )));
            }
        }
        let mut rng = RngState::new(seed);
        let mut ps = ParamSet::new();
        let [e1, e2] = config.encoder_widths;
        let encoder = [
            BiGruParams::register(&mut ps, "enc.0", config.input_dim, e1, &mut rng)?,
            BiGruParams::register(&mut ps, "enc.1", 2 * e1, e2, &mut rng)?,
        ];
        let head_mu = AffineParams::register(&mut ps, "head_mu", 2 * e2, config.latent_dim, &mut rng)?;
        let head_logvar = AffineParams::register(&mut ps, "head_logvar", 2 * e2, config.latent_dim, &mut rng)?;
        let mut decoder = |name: &str, ps: &mut ParamSet<T>| -> Result<DecoderParams> {
            let [d1, d2] = config.decoder_widths;
            Ok(DecoderParams {
                rnn: [
                    BiGruParams::register(ps, &format!("{name}.0"), config.latent_dim, d1, &mut rng)?,
                    BiGruParams::register(ps, &format!("{name}.1"), 2 * d1, d2, &mut rng)?,
                ],
                out: AffineParams::register(ps, &format!("{name}.out"), 2 * d2, config.input_dim, &mut rng)?,
            })
        };
        let decoder_x = decoder("dec_x", &mut ps)?;
        let decoder_y = decoder("dec_y", &mut ps)?;
        Ok(SsVcModel {
            config,
            params: ps,
            encoder,
            head_mu,
            head_logvar,
            decoder_x,
            decoder_y,
            source_stats,
            target_stats,
            paired_steps: 0,
        })
    }

    pub fn config(&self) -> &SsVcConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Replaces all parameter values; names and shapes must match.
    pub fn set_params(&mut self, params: ParamSet<T>) -> Result<()> {
        check_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    /// Parameter-name prefix of one decoder.
    pub fn decoder_prefix(speaker: Speaker) -> &'static str {
        match speaker {
            Speaker::Source => "dec_x.",
            Speaker::Target => "dec_y.",
        }
    }

    /// Whether any paired data has shaped the decoders jointly.
    pub fn cross_coupled(&self) -> bool {
        self.paired_steps > 0
    }

    fn check_input(&self, m: &Matrix<T>) -> Result<()> {
        if m.cols() != self.config.input_dim {
            return Err(Error::input(format!(
                "features have {} coefficients, model expects {}",
                m.cols(),
                self.config.input_dim
            )));
        }
        if m.rows() == 0 {
            return Err(Error::input("empty feature sequence"));
        }
        Ok(())
    }

    fn encode_on(&self, ps: &ParamSet<T>, g: &mut Graph<T>, x: Var) -> Result<(Var, Var)> {
        let h = g.birnn(ps, self.encoder[0], x)?;
        let h = g.birnn(ps, self.encoder[1], h)?;
        let mu = g.affine_params(ps, self.head_mu, h)?;
        let lv = g.affine_params(ps, self.head_logvar, h)?;
        let lv = g.clamp(lv, T::of(LOG_VAR_MIN), T::of(LOG_VAR_MAX));
        Ok((mu, lv))
    }

    fn decode_on(&self, ps: &ParamSet<T>, g: &mut Graph<T>, z: Var, speaker: Speaker) -> Result<Var> {
        let d = match speaker {
            Speaker::Source => self.decoder_x,
            Speaker::Target => self.decoder_y,
        };
        let h = g.birnn(ps, d.rnn[0], z)?;
        let h = g.birnn(ps, d.rnn[1], h)?;
        g.affine_params(ps, d.out, h)
    }

    /// Posterior mean and clamped log-variance of `q(Z|·)` for normalized
    /// cepstra of either speaker.
    pub fn encode(&self, features: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        self.check_input(features)?;
        let mut g = Graph::new();
        let x = g.input(features.clone());
        let (mu, lv) = self.encode_on(&self.params, &mut g, x)?;
        Ok((g.value(mu).clone(), g.value(lv).clone()))
    }

    pub fn decode(&self, z: &Matrix<T>, speaker: Speaker) -> Result<Matrix<T>> {
        if z.cols() != self.config.latent_dim || z.rows() == 0 || !z.is_finite() {
            return Err(Error::input(format!(
                "latent must be finite T×{} with T ≥ 1, got {:?}",
                self.config.latent_dim,
                z.shape()
            )));
        }
        let mut g = Graph::new();
        let zv = g.input(z.clone());
        let out = self.decode_on(&self.params, &mut g, zv, speaker)?;
        Ok(g.value(out).clone())
    }

    pub fn decode_x(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        self.decode(z, Speaker::Source)
    }

    pub fn decode_y(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        self.decode(z, Speaker::Target)
    }

    /// One single-sample bound estimate: sample from the posterior of
    /// `input`, reconstruct every sequence in `targets` with its own decoder.
    fn sample_terms(
        &self,
        ps: &ParamSet<T>,
        g: &mut Graph<T>,
        posterior: Speaker,
        input: &Matrix<T>,
        targets: &[(Speaker, &Matrix<T>)],
        noise: &mut dyn NoiseSource<T>,
    ) -> Result<SampleVars> {
        let iv = g.input(input.clone());
        let (mu, lv) = self.encode_on(ps, g, iv)?;
        let z = g.gaussian_sample(mu, lv, noise)?;
        let kl = g.kl_to_standard_normal(mu, lv)?;
        let w = T::of(0.5 / self.config.sigma2);
        let mut out = SampleVars {
            posterior,
            recon_x: None,
            recon_y: None,
            kl,
        };
        for &(spk, target) in targets {
            let pred = self.decode_on(ps, g, z, spk)?;
            let e = g.sq_err(pred, target)?;
            let e = g.scale(e, w);
            match spk {
                Speaker::Source => out.recon_x = Some(e),
                Speaker::Target => out.recon_y = Some(e),
            }
        }
        Ok(out)
    }

    fn build_loss(
        &self,
        ps: &ParamSet<T>,
        g: &mut Graph<T>,
        batch: &TrainingBatch<T>,
        noise: &mut dyn NoiseSource<T>,
    ) -> Result<(Var, Vec<SampleVars>)> {
        let samples = match batch.kind {
            BatchKind::Paired => {
                let (x, y) = match (&batch.x, &batch.y) {
                    (Some(x), Some(y)) => (x, y),
                    _ => return Err(Error::input("paired batch needs both sequences")),
                };
                if x.rows() != y.rows() {
                    return Err(Error::input(format!(
                        "paired sequences differ in length: {} vs {}",
                        x.rows(),
                        y.rows()
                    )));
                }
                self.check_input(x)?;
                self.check_input(y)?;
                let targets = [(Speaker::Source, x), (Speaker::Target, y)];
                vec![
                    self.sample_terms(ps, g, Speaker::Source, x, &targets, noise)?,
                    self.sample_terms(ps, g, Speaker::Target, y, &targets, noise)?,
                ]
            }
            BatchKind::SourceOnly | BatchKind::TargetOnly => {
                let (spk, m) = if batch.kind == BatchKind::SourceOnly {
                    (Speaker::Source, batch.x.as_ref())
                } else {
                    (Speaker::Target, batch.y.as_ref())
                };
                let m = m.ok_or_else(|| Error::input("unpaired batch is missing its sequence"))?;
                self.check_input(m)?;
                vec![self.sample_terms(ps, g, spk, m, &[(spk, m)], noise)?]
            }
        };
        let mut total: Option<Var> = None;
        for s in &samples {
            let mut est = s.kl;
            for r in [s.recon_x, s.recon_y].into_iter().flatten() {
                est = g.add(est, r)?;
            }
            total = Some(match total {
                Some(t) => g.add(t, est)?,
                None => est,
            });
        }
        let total = total.expect("at least one sample");
        let total = g.scale(total, T::one() / T::of(samples.len() as f64));
        Ok((total, samples))
    }

    /// Negated bound estimate for one batch and its per-sample terms.
    pub fn loss_breakdown(&self, batch: &TrainingBatch<T>, noise: &mut dyn NoiseSource<T>) -> Result<LossBreakdown<T>> {
        let mut g = Graph::new();
        let (total, samples) = self.build_loss(&self.params, &mut g, batch, noise)?;
        Ok(LossBreakdown {
            total: g.scalar(total),
            samples: samples
                .iter()
                .map(|s| SampleTerms {
                    posterior: s.posterior,
                    recon_x: s.recon_x.map(|v| g.scalar(v)),
                    recon_y: s.recon_y.map(|v| g.scalar(v)),
                    kl: g.scalar(s.kl),
                })
                .collect(),
        })
    }

    /// Batch loss evaluated with an alternative parameter set of the same
    /// layout.
    pub fn batch_loss_with(
        &self,
        params: &ParamSet<T>,
        batch: &TrainingBatch<T>,
        noise: &mut dyn NoiseSource<T>,
    ) -> Result<T> {
        let mut g = Graph::new();
        let (total, _) = self.build_loss(params, &mut g, batch, noise)?;
        Ok(g.scalar(total))
    }

    pub fn batch_loss(&self, batch: &TrainingBatch<T>, noise: &mut dyn NoiseSource<T>) -> Result<T> {
        self.batch_loss_with(&self.params, batch, noise)
    }

    /// Negated dataset bound: the unweighted sum of the batch losses, built
    /// as one graph.
    pub fn dataset_loss(&self, batches: &[TrainingBatch<T>], noise: &mut dyn NoiseSource<T>) -> Result<T> {
        let mut g = Graph::new();
        let mut total: Option<Var> = None;
        for b in batches {
            let (l, _) = self.build_loss(&self.params, &mut g, b, noise)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        let total = total.ok_or_else(|| Error::input("dataset has no batches"))?;
        Ok(g.scalar(total))
    }

    /// Negated two-sample estimate of the paired bound: the average of one
    /// estimate sampled from `q(Z|X)` and one from `q(Z|Y)`, each with both
    /// reconstruction terms and its own KL term.
    pub fn loss_paired(&self, x: &Matrix<T>, y: &Matrix<T>, noise: &mut dyn NoiseSource<T>) -> Result<T> {
        self.batch_loss(&TrainingBatch::paired(x.clone(), y.clone())?, noise)
    }

    /// Negated single-sample estimate of the one-speaker bound.
    pub fn loss_unpaired(&self, features: &Matrix<T>, which: Speaker, noise: &mut dyn NoiseSource<T>) -> Result<T> {
        let batch = match which {
            Speaker::Source => TrainingBatch::source_only(features.clone())?,
            Speaker::Target => TrainingBatch::target_only(features.clone())?,
        };
        self.batch_loss(&batch, noise)
    }

    /// Runs forward and backward for one batch, adding the gradient into the
    /// model's parameter accumulators. Returns the loss.
    pub fn accumulate_gradients(&mut self, batch: &TrainingBatch<T>, noise: &mut dyn NoiseSource<T>) -> Result<T> {
        let mut g = Graph::new();
        let (total, _) = self.build_loss(&self.params, &mut g, batch, noise)?;
        g.backward(total);
        g.accumulate_param_grads(&mut self.params);
        Ok(g.scalar(total))
    }

    /// Normalized source cepstra to normalized target cepstra through the
    /// posterior mean.
    pub fn convert_normalized(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (mu, _) = self.encode_on(&self.params, &mut g, xv)?;
        let out = self.decode_on(&self.params, &mut g, mu, Speaker::Target)?;
        Ok(g.value(out).clone())
    }

    /// Normalized input reconstructed through its own speaker's decoder.
    pub fn reconstruct_normalized(&self, x: &Matrix<T>, speaker: Speaker) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (mu, _) = self.encode_on(&self.params, &mut g, xv)?;
        let out = self.decode_on(&self.params, &mut g, mu, speaker)?;
        Ok(g.value(out).clone())
    }

    /// Converts a raw source utterance with the given statistics. No noise
    /// is drawn; chunks longer than the maximum are converted independently.
    pub fn convert_with(
        &self,
        x: &FeatureSequence<T>,
        src: &SpeakerStats<T>,
        tgt: &SpeakerStats<T>,
    ) -> Result<ConversionResult<T>> {
        if !self.cross_coupled() {
            log::warn!("decoders were never cross-coupled: the model saw no paired data");
        }
        let norm = src.normalize_mcep(&x.mcep);
        let mapped = map_chunked(&norm, |m| self.convert_normalized(m))?;
        Ok(FeatureSequence {
            mcep: tgt.denormalize_mcep(&mapped),
            c0: x.c0.clone(),
            f0: convert_f0(&x.f0, src, tgt),
            ap: x.ap.clone(),
            frame_hop: x.frame_hop,
        })
    }

    /// Converts with the statistics stored in the model.
    pub fn convert(&self, x: &FeatureSequence<T>) -> Result<ConversionResult<T>> {
        self.convert_with(x, &self.source_stats, &self.target_stats)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut head = String::new();
        let _ = writeln!(head, "input_dim = {}", c.input_dim);
        let _ = writeln!(head, "encoder_widths = {} {}", c.encoder_widths[0], c.encoder_widths[1]);
        let _ = writeln!(head, "decoder_widths = {} {}", c.decoder_widths[0], c.decoder_widths[1]);
        let _ = writeln!(head, "latent_dim = {}", c.latent_dim);
        let _ = writeln!(head, "sigma2 = {:?}", c.sigma2);
        let _ = writeln!(head, "paired_steps = {}", self.paired_steps);
        write_checkpoint(SSVC_MAGIC, &head, &self.params, &self.source_stats, &self.target_stats)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ck = read_checkpoint::<T>(bytes, SSVC_MAGIC)?;
        let pair = |k: &str| -> Result<[usize; 2]> {
            let v = ck.usizes(k)?;
            match v.as_slice() {
                [a, b] => Ok([*a, *b]),
                _ => Err(Error::format(0, format!("header key `{k}` needs two values"))),
            }
        };
        let config = SsVcConfig {
            input_dim: ck.usize("input_dim")?,
            encoder_widths: pair("encoder_widths")?,
            decoder_widths: pair("decoder_widths")?,
            latent_dim: ck.usize("latent_dim")?,
            sigma2: ck.f64("sigma2")?,
        };
        let paired_steps = ck.usize("paired_steps")? as u64;
        let mut model = SsVcModel::new(config, ck.source, ck.target, 0)?;
        model.set_params(ck.params)?;
        model.paired_steps = paired_steps;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl<T: Scalar> Trainable<T> for SsVcModel<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn accepts(&self, _kind: BatchKind) -> bool {
        true
    }

    fn accumulate(&mut self, batch: &TrainingBatch<T>, noise: &mut dyn NoiseSource<T>) -> Result<T> {
        self.accumulate_gradients(batch, noise)
    }

    fn record_step(&mut self, kind: BatchKind) {
        if kind == BatchKind::Paired {
            self.paired_steps += 1;
        }
    }

    fn predict_normalized(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.convert_normalized(x)
    }

    fn target_stats(&self) -> &SpeakerStats<T> {
        &self.target_stats
    }
}

/// Applies `f` to pieces of at most [`MAX_CHUNK_FRAMES`] rows and stacks the
/// results.
pub(crate) fn map_chunked<T: Scalar>(
    x: &Matrix<T>,
    mut f: impl FnMut(&Matrix<T>) -> Result<Matrix<T>>,
) -> Result<Matrix<T>> {
    let pieces = TrainingBatch::source_only(x.clone())?.chunks(MAX_CHUNK_FRAMES);
    let mut out: Option<Matrix<T>> = None;
    for p in pieces {
        let y = f(p.x.as_ref().expect("source chunk"))?;
        out = Some(match out {
            Some(o) => o.vstack(&y),
            None => y,
        });
    }
    Ok(out.expect("at least one chunk"))
}

pub(crate) fn check_layout<T: Scalar>(expected: &ParamSet<T>, got: &ParamSet<T>) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::format(
            0,
            format!("checkpoint has {} parameters, model needs {}", got.len(), expected.len()),
        ));
    }
    for ((_, a, ta), (_, b, tb)) in expected.iter().zip(got.iter()) {
        if a != b || ta.shape != tb.shape {
            return Err(Error::format(
                0,
                format!("parameter `{b}` {:?} does not match expected `{a}` {:?}", tb.shape, ta.shape),
            ));
        }
    }
    Ok(())
}

const SSVC_MAGIC: &[u8; 4] = b"VCSS";
const CHECKPOINT_VERSION: u32 = 1;

pub(crate) fn write_checkpoint<T: Scalar>(
    magic: &[u8; 4],
    head: &str,
    params: &ParamSet<T>,
    source: &SpeakerStats<T>,
    target: &SpeakerStats<T>,
) -> Vec<u8> {
    let mut w = SectionWriter::new(magic, CHECKPOINT_VERSION);
    w.section(b"HEAD", head.as_bytes())
        .section(b"PARM", &params.to_bytes())
        .section(b"SSRC", source.to_text().as_bytes())
        .section(b"STGT", target.to_text().as_bytes());
    w.finish()
}

pub(crate) struct Checkpoint<T> {
    head: Vec<(String, String)>,
    pub params: ParamSet<T>,
    pub source: SpeakerStats<T>,
    pub target: SpeakerStats<T>,
}

impl<T> Checkpoint<T> {
    pub fn raw(&self, key: &str) -> Result<&str> {
        self.head
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::format(0, format!("checkpoint header missing `{key}`")))
    }

    pub fn usizes(&self, key: &str) -> Result<Vec<usize>> {
        self.raw(key)?
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::format(0, format!("header key `{key}`: bad integer `{t}`")))
            })
            .collect()
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self.raw(key)?;
        v.trim()
            .parse()
            .map_err(|_| Error::format(0, format!("header key `{key}`: bad integer `{v}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self.raw(key)?;
        v.trim()
            .parse()
            .map_err(|_| Error::format(0, format!("header key `{key}`: bad number `{v}`")))
    }
}

pub(crate) fn read_checkpoint<T: Scalar>(bytes: &[u8], magic: &[u8; 4]) -> Result<Checkpoint<T>> {
    let sections = read_sections(bytes, magic, CHECKPOINT_VERSION)?;
    let text = |tag: &[u8; 4]| -> Result<String> {
        let s = find(&sections, tag)?;
        String::from_utf8(s.payload.to_vec()).map_err(|_| Error::format(s.offset, "section is not utf-8 text"))
    };
    let head = text(b"HEAD")?
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let parm = find(&sections, b"PARM")?;
    let params = ParamSet::from_bytes(parm.payload).map_err(|e| match e {
        Error::Format { offset, message } => Error::format(parm.offset + offset, message),
        other => other,
    })?;
    Ok(Checkpoint {
        head,
        params,
        source: SpeakerStats::from_text(&text(b"SSRC")?)?,
        target: SpeakerStats::from_text(&text(b"STGT")?)?,
    })
}
