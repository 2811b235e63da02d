//! Deterministic stacked bidirectional regression baseline trained on
//! aligned pairs only.

use std::fmt::Write as _;
use std::path::Path;

use super::{check_layout, map_chunked, read_checkpoint, write_checkpoint, BatchKind, Trainable, TrainingBatch};
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, MCEP_DIM};
use crate::graph::{AffineParams, BiGruParams, Graph, NoiseSource, ParamSet, RngState, Var};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::stats::{convert_f0, SpeakerStats};

#[derive(Clone, Debug, PartialEq)]
pub struct DblstmConfig {
    pub input_dim: usize,
    pub widths: Vec<usize>,
}

impl Default for DblstmConfig {
    fn default() -> Self {
        DblstmConfig {
            input_dim: MCEP_DIM,
            widths: vec![32, 64, 64, 32],
        }
    }
}

#[derive(Clone, Debug)]
pub struct DblstmModel<T> {
    config: DblstmConfig,
    params: ParamSet<T>,
    layers: Vec<BiGruParams>,
    out: AffineParams,
    pub source_stats: SpeakerStats<T>,
    pub target_stats: SpeakerStats<T>,
}

const DBLSTM_MAGIC: &[u8; 4] = b"VCDB";

impl<T: Scalar> DblstmModel<T> {
    pub fn new(config: DblstmConfig, source_stats: SpeakerStats<T>, target_stats: SpeakerStats<T>, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.widths.is_empty() || config.widths.contains(&0) {
            return Err(Error::Config("baseline needs at least one positive layer width".into()));
        }
        if source_stats.dim() != config.input_dim || target_stats.dim() != config.input_dim {
            return Err(Error::Config("stats dimension does not match the model".into()));
        }
        let mut rng = RngState::new(seed);
        let mut ps = ParamSet::new();
        let mut input = config.input_dim;
        let mut layers = Vec::with_capacity(config.widths.len());
        for (i, &w) in config.widths.iter().enumerate() {
            layers.push(BiGruParams::register(&mut ps, &format!("rnn.{i}"), input, w, &mut rng)?);
            input = 2 * w;
        }
        let out = AffineParams::register(&mut ps, "out", input, config.input_dim, &mut rng)?;
        Ok(DblstmModel {
            config,
            params: ps,
            layers,
            out,
            source_stats,
            target_stats,
        })
    }

    pub fn config(&self) -> &DblstmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn forward(&self, ps: &ParamSet<T>, g: &mut Graph<T>, x: &Matrix<T>) -> Result<Var> {
        if x.cols() != self.config.input_dim || x.rows() == 0 {
            return Err(Error::input(format!(
                "features must be T×{} with T ≥ 1, got {:?}",
                self.config.input_dim,
                x.shape()
            )));
        }
        let mut h = g.input(x.clone());
        for &layer in &self.layers {
            h = g.birnn(ps, layer, h)?;
        }
        g.affine_params(ps, self.out, h)
    }

    /// Summed squared error of the prediction for a paired batch.
    pub fn batch_loss_with(&self, params: &ParamSet<T>, batch: &TrainingBatch<T>) -> Result<T> {
        let mut g = Graph::new();
        let loss = self.build_loss(params, &mut g, batch)?;
        Ok(g.scalar(loss))
    }

    fn build_loss(&self, ps: &ParamSet<T>, g: &mut Graph<T>, batch: &TrainingBatch<T>) -> Result<Var> {
        match (batch.kind, &batch.x, &batch.y) {
            (BatchKind::Paired, Some(x), Some(y)) => {
                let pred = self.forward(ps, g, x)?;
                g.sq_err(pred, y)
            }
            _ => Err(Error::input("the baseline trains on paired batches only")),
        }
    }

    pub fn predict_normalized(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut g = Graph::new();
        let out = self.forward(&self.params, &mut g, x)?;
        Ok(g.value(out).clone())
    }

    pub fn convert_with(
        &self,
        x: &FeatureSequence<T>,
        src: &SpeakerStats<T>,
        tgt: &SpeakerStats<T>,
    ) -> Result<FeatureSequence<T>> {
        let mapped = map_chunked(&src.normalize_mcep(&x.mcep), |m| self.predict_normalized(m))?;
        Ok(FeatureSequence {
            mcep: tgt.denormalize_mcep(&mapped),
            c0: x.c0.clone(),
            f0: convert_f0(&x.f0, src, tgt),
            ap: x.ap.clone(),
            frame_hop: x.frame_hop,
        })
    }

    pub fn convert(&self, x: &FeatureSequence<T>) -> Result<FeatureSequence<T>> {
        self.convert_with(x, &self.source_stats, &self.target_stats)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        let _ = writeln!(head, "input_dim = {}", self.config.input_dim);
        let widths: Vec<String> = self.config.widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(head, "widths = {}", widths.join(" "));
        write_checkpoint(DBLSTM_MAGIC, &head, &self.params, &self.source_stats, &self.target_stats)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ck = read_checkpoint::<T>(bytes, DBLSTM_MAGIC)?;
        let config = DblstmConfig {
            input_dim: ck.usize("input_dim")?,
            widths: ck.usizes("widths")?,
        };
        let mut model = DblstmModel::new(config, ck.source, ck.target, 0)?;
        check_layout(&model.params, &ck.params)?;
        model.params = ck.params;
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

impl<T: Scalar> Trainable<T> for DblstmModel<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn accepts(&self, kind: BatchKind) -> bool {
        kind == BatchKind::Paired
    }

    fn accumulate(&mut self, batch: &TrainingBatch<T>, _noise: &mut dyn NoiseSource<T>) -> Result<T> {
        let mut g = Graph::new();
        let loss = self.build_loss(&self.params, &mut g, batch)?;
        g.backward(loss);
        g.accumulate_param_grads(&mut self.params);
        Ok(g.scalar(loss))
    }

    fn record_step(&mut self, _kind: BatchKind) {}

    fn predict_normalized(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        DblstmModel::predict_normalized(self, x)
    }

    fn target_stats(&self) -> &SpeakerStats<T> {
        &self.target_stats
    }
}
