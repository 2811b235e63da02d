//! Data-budget sweeps comparing supervised and semi-supervised training.

use std::fmt::Write as _;
use std::time::Instant;

use super::config::ExperimentConfig;
use super::manifest::{prompt_of, DatasetManifest, Split};
use super::synth::{SynthKind, SyntheticCorpus};
use crate::align::{align_pair, DtwOptions};
use crate::error::{Error, Result};
use crate::features::{read_features, FeatureSequence};
use crate::graph::RngState;
use crate::scalar::Scalar;
use crate::ssvc::{train, DblstmModel, Objective, SsVcModel, TrainConfig, TrainingBatch, TrainingLog, ValidationPair};
use crate::stats::{corpus_mcd, fit_stats, SpeakerStats};

/// Features of every manifest entry, grouped by role.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus<T> {
    pub train_pairs: Vec<(String, FeatureSequence<T>, FeatureSequence<T>)>,
    pub train_source: Vec<(String, FeatureSequence<T>)>,
    pub train_target: Vec<(String, FeatureSequence<T>)>,
    pub validation: Vec<(FeatureSequence<T>, FeatureSequence<T>)>,
    pub test: Vec<(FeatureSequence<T>, FeatureSequence<T>)>,
}

impl<T: Scalar> Corpus<T> {
    pub fn from_manifest(m: &DatasetManifest) -> Result<Self> {
        let read = |p: &std::path::Path| read_features::<T>(p);
        let pairs = |split| -> Result<Vec<_>> {
            m.paired(split)
                .into_iter()
                .map(|(s, t)| Ok((read(s)?, read(t)?)))
                .collect()
        };
        Ok(Corpus {
            train_pairs: m
                .paired(Split::Train)
                .into_iter()
                .map(|(s, t)| Ok((prompt_of(s), read(s)?, read(t)?)))
                .collect::<Result<_>>()?,
            train_source: m
                .source_only(Split::Train)
                .into_iter()
                .map(|p| Ok((prompt_of(p), read(p)?)))
                .collect::<Result<_>>()?,
            train_target: m
                .target_only(Split::Train)
                .into_iter()
                .map(|p| Ok((prompt_of(p), read(p)?)))
                .collect::<Result<_>>()?,
            validation: pairs(Split::Validation)?,
            test: pairs(Split::Test)?,
        })
    }

    /// The training view of a synthetic corpus; ground-truth renderings of
    /// unpaired entries are dropped.
    pub fn from_synthetic(c: &SyntheticCorpus) -> Self {
        let mut out = Corpus::default();
        for u in &c.utterances {
            let (s, t) = (u.source.cast::<T>(), u.target.cast::<T>());
            match (u.split, u.kind) {
                (Split::Train, SynthKind::Paired) => out.train_pairs.push((u.prompt.clone(), s, t)),
                (Split::Train, SynthKind::SourceOnly) => out.train_source.push((u.prompt.clone(), s)),
                (Split::Train, SynthKind::TargetOnly) => out.train_target.push((u.prompt.clone(), t)),
                (Split::Validation, _) => out.validation.push((s, t)),
                (Split::Test, _) => out.test.push((s, t)),
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Deterministic stacked recurrent regression on pairs.
    Dblstm,
    /// The variational model trained on the paired terms only.
    DblstmVae,
    /// The variational model trained on paired and unpaired terms.
    SemiVae,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dblstm, Method::DblstmVae, Method::SemiVae];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dblstm => "dblstm",
            Method::DblstmVae => "dblstm_vae",
            Method::SemiVae => "semi_vae",
        }
    }
}

/// Training data of one sweep cell, as corpus indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub pairs: Vec<usize>,
    /// Source-only utterances: `Ok(i)` indexes `train_source`, `Err(i)` the
    /// source side of `train_pairs`.
    pub sources: Vec<std::result::Result<usize, usize>>,
    pub targets: Vec<std::result::Result<usize, usize>>,
}

/// Deterministic per-repeat draw: `n_pairs` random pairs, then `n_unpaired`
/// single-speaker utterances split evenly between the speakers. Listed
/// unpaired entries are used first, then the unused pairs contribute one
/// side each, sources and targets from disjoint pairs so no prompt is seen
/// from both speakers.
pub fn select<T>(corpus: &Corpus<T>, n_pairs: usize, n_unpaired: usize, seed: u64, repeat: usize) -> Result<Selection> {
    let mut perm: Vec<usize> = (0..corpus.train_pairs.len()).collect();
    RngState::stream(seed, 1000 + repeat as u64).shuffle(&mut perm);
    if n_pairs > perm.len() {
        return Err(Error::Config(format!(
            "{n_pairs} parallel utterances requested but the training split has {}",
            perm.len()
        )));
    }
    let (pairs, rest) = perm.split_at(n_pairs);
    let n_src = n_unpaired.div_ceil(2);
    let n_tgt = n_unpaired / 2;
    let src_listed = n_src.min(corpus.train_source.len());
    let tgt_listed = n_tgt.min(corpus.train_target.len());
    let need_from_pairs = (n_src - src_listed) + (n_tgt - tgt_listed);
    if need_from_pairs > rest.len() {
        return Err(Error::Config(format!(
            "need {n_pairs} paired + {n_unpaired} unpaired training utterances; short by {}",
            need_from_pairs - rest.len()
        )));
    }
    let mut sources: Vec<_> = (0..src_listed).map(Ok).collect();
    sources.extend(rest[..n_src - src_listed].iter().map(|&i| Err(i)));
    let mut targets: Vec<_> = (0..tgt_listed).map(Ok).collect();
    targets.extend(rest[n_src - src_listed..need_from_pairs].iter().map(|&i| Err(i)));
    Ok(Selection {
        pairs: pairs.to_vec(),
        sources,
        targets,
    })
}

/// Normalized training batches, statistics and validation set for one
/// cell.
pub struct PreparedData<T> {
    pub source_stats: SpeakerStats<T>,
    pub target_stats: SpeakerStats<T>,
    pub paired: Vec<TrainingBatch<T>>,
    pub unpaired: Vec<TrainingBatch<T>>,
    pub validation: Vec<ValidationPair<T>>,
}

/// Fits statistics on the selected utterances only, aligns pairs on
/// normalized cepstra, and prepares the validation set.
pub fn prepare<T: Scalar>(
    corpus: &Corpus<T>,
    sel: &Selection,
    with_unpaired: bool,
    cfg: &ExperimentConfig,
) -> Result<PreparedData<T>> {
    let mut src_seqs: Vec<FeatureSequence<T>> = sel.pairs.iter().map(|&i| corpus.train_pairs[i].1.clone()).collect();
    let mut tgt_seqs: Vec<FeatureSequence<T>> = sel.pairs.iter().map(|&i| corpus.train_pairs[i].2.clone()).collect();
    let source_of = |s: &std::result::Result<usize, usize>| match *s {
        Ok(i) => corpus.train_source[i].1.clone(),
        Err(i) => corpus.train_pairs[i].1.clone(),
    };
    let target_of = |s: &std::result::Result<usize, usize>| match *s {
        Ok(i) => corpus.train_target[i].1.clone(),
        Err(i) => corpus.train_pairs[i].2.clone(),
    };
    let un_src: Vec<_> = if with_unpaired { sel.sources.iter().map(source_of).collect() } else { Vec::new() };
    let un_tgt: Vec<_> = if with_unpaired { sel.targets.iter().map(target_of).collect() } else { Vec::new() };
    src_seqs.extend(un_src.iter().cloned());
    tgt_seqs.extend(un_tgt.iter().cloned());
    if src_seqs.is_empty() || tgt_seqs.is_empty() {
        return Err(Error::Config("training data must include both speakers".into()));
    }
    let source_stats = fit_stats(&src_seqs)?;
    let target_stats = fit_stats(&tgt_seqs)?;
    let opts = DtwOptions {
        band: cfg.dtw_band,
        ..DtwOptions::default()
    };
    let align = |x: &FeatureSequence<T>, y: &FeatureSequence<T>| {
        let (xn, yn) = (source_stats.normalize_mcep(&x.mcep), target_stats.normalize_mcep(&y.mcep));
        align_pair(x, y, &xn, &yn, opts).map(|a| (xn, a))
    };
    let mut paired = Vec::with_capacity(sel.pairs.len());
    for &i in &sel.pairs {
        let (_, x, y) = &corpus.train_pairs[i];
        let (xn, a) = align(x, y)?;
        paired.push(TrainingBatch::paired(xn, target_stats.normalize_mcep(&a.y_warped.mcep))?);
    }
    let mut unpaired = Vec::new();
    for s in &un_src {
        unpaired.push(TrainingBatch::source_only(source_stats.normalize_mcep(&s.mcep))?);
    }
    for t in &un_tgt {
        unpaired.push(TrainingBatch::target_only(target_stats.normalize_mcep(&t.mcep))?);
    }
    let validation = corpus
        .validation
        .iter()
        .map(|(x, y)| {
            let (xn, a) = align(x, y)?;
            Ok(ValidationPair {
                x_norm: xn,
                y_ref: a.y_warped.mcep,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PreparedData {
        source_stats,
        target_stats,
        paired,
        unpaired,
        validation,
    })
}

/// Deterministic 64-bit mix of a base seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A trained model of any method, ready to convert.
pub enum TrainedModel<T> {
    Baseline(DblstmModel<T>),
    Variational(SsVcModel<T>),
}

impl<T: Scalar> TrainedModel<T> {
    pub fn convert(&self, x: &FeatureSequence<T>) -> Result<FeatureSequence<T>> {
        match self {
            TrainedModel::Baseline(m) => m.convert(x),
            TrainedModel::Variational(m) => m.convert(x),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            TrainedModel::Baseline(m) => m.to_bytes(),
            TrainedModel::Variational(m) => m.to_bytes(),
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        match self {
            TrainedModel::Baseline(m) => m.save(path),
            TrainedModel::Variational(m) => m.save(path),
        }
    }
}

/// Trains one method on prepared data with the given seed.
pub fn train_method<T: Scalar>(
    method: Method,
    data: &PreparedData<T>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(TrainedModel<T>, TrainingLog)> {
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (src, tgt) = (data.source_stats.clone(), data.target_stats.clone());
    match method {
        Method::Dblstm => {
            let mut m = DblstmModel::new(cfg.baseline.clone(), src, tgt, seed)?;
            let log = train(&mut m, &data.paired, &data.validation, Objective::SupervisedVae, &tc)?;
            Ok((TrainedModel::Baseline(m), log))
        }
        Method::DblstmVae | Method::SemiVae => {
            let mut m = SsVcModel::new(cfg.model.clone(), src, tgt, seed)?;
            let (objective, batches) = if method == Method::SemiVae {
                let mut all = data.paired.clone();
                all.extend(data.unpaired.iter().cloned());
                (Objective::SemiSupervised, all)
            } else {
                (Objective::SupervisedVae, data.paired.clone())
            };
            let log = train(&mut m, &batches, &data.validation, objective, &tc)?;
            Ok((TrainedModel::Variational(m), log))
        }
    }
}

/// Corpus MCD of converted test sources against their targets.
pub fn test_mcd<T: Scalar>(model: &TrainedModel<T>, corpus: &Corpus<T>, cfg: &ExperimentConfig) -> Result<f64> {
    if corpus.test.is_empty() {
        return Err(Error::Config("the manifest has no test pairs".into()));
    }
    let pairs = corpus
        .test
        .iter()
        .map(|(x, y)| Ok((model.convert(x)?.mcep, y.mcep.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(corpus_mcd(&pairs, cfg.mcd_alignment)?.as_f64())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub n_parallel: usize,
    pub n_nonparallel: usize,
    pub repeat: usize,
    pub test_mcd_db: f64,
    pub train_seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResults {
    pub rows: Vec<ResultRow>,
}

impl SweepResults {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,n_parallel,n_nonparallel,repeat,test_mcd_db,train_seconds\n");
        for r in &self.rows {
            let secs = r.train_seconds.map(|v| format!("{v:.3}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{}",
                r.method.as_str(),
                r.n_parallel,
                r.n_nonparallel,
                r.repeat,
                r.test_mcd_db,
                secs
            );
        }
        s
    }

    pub fn mcd(&self, method: Method, n_parallel: usize, n_nonparallel: usize, repeat: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.n_parallel == n_parallel && r.n_nonparallel == n_nonparallel && r.repeat == repeat)
            .map(|r| r.test_mcd_db)
    }
}

/// Runs one cell: selection, preparation, training and test evaluation.
fn run_cell<T: Scalar>(
    corpus: &Corpus<T>,
    method: Method,
    n_pairs: usize,
    n_unpaired: usize,
    repeat: usize,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<ResultRow> {
    let sel = select(corpus, n_pairs, n_unpaired, seed, repeat)?;
    let with_unpaired = method == Method::SemiVae;
    let data = prepare(corpus, &sel, with_unpaired, cfg)?;
    let start = Instant::now();
    let (model, _) = train_method(method, &data, cfg, derive_seed(seed, repeat as u64))?;
    let secs = start.elapsed().as_secs_f64();
    let mcd = test_mcd(&model, corpus, cfg)?;
    log::info!(
        "{} n_parallel={n_pairs} n_nonparallel={} repeat={repeat}: test MCD {mcd:.3} dB ({secs:.1} s)",
        method.as_str(),
        if with_unpaired { n_unpaired } else { 0 }
    );
    Ok(ResultRow {
        method,
        n_parallel: n_pairs,
        n_nonparallel: if with_unpaired { n_unpaired } else { 0 },
        repeat,
        test_mcd_db: mcd,
        train_seconds: cfg.record_timing.then_some(secs),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepSpec {
    pub total_budget: usize,
    pub parallel_counts: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.parallel_counts.is_empty() {
            return Err(Error::Config("no parallel counts given".into()));
        }
        if let Some(&n) = self.parallel_counts.iter().find(|&&n| n > self.total_budget || n == 0) {
            return Err(Error::Config(format!(
                "parallel count {n} must be between 1 and the budget {}",
                self.total_budget
            )));
        }
        Ok(())
    }
}

/// For every parallel count `n`: the two supervised methods on `n` pairs and
/// the semi-supervised method on `n` pairs plus `budget − n` unpaired
/// utterances, split evenly between the speakers.
pub fn run_parallel_sweep<T: Scalar>(corpus: &Corpus<T>, spec: &SweepSpec, cfg: &ExperimentConfig) -> Result<SweepResults> {
    spec.validate()?;
    let available = corpus.train_pairs.len() + corpus.train_source.len() + corpus.train_target.len();
    if available < spec.total_budget {
        return Err(Error::Config(format!(
            "training split has {available} utterances, budget needs {} (short by {})",
            spec.total_budget,
            spec.total_budget - available
        )));
    }
    let mut out = SweepResults::default();
    for repeat in 0..spec.repeats {
        for &n in &spec.parallel_counts {
            for method in Method::ALL {
                out.rows.push(run_cell(corpus, method, n, spec.total_budget - n, repeat, spec.seed, cfg)?);
            }
        }
    }
    Ok(out)
}

/// One parallel utterance plus each unpaired count; supervised reference
/// rows on the single pair are included for every repeat.
pub fn run_nonparallel_sweep<T: Scalar>(
    corpus: &Corpus<T>,
    counts: &[usize],
    repeats: usize,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<SweepResults> {
    if counts.is_empty() || counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("unpaired counts must be non-empty and strictly ascending".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    if corpus.train_pairs.is_empty() {
        return Err(Error::Config("the training split has no paired utterance".into()));
    }
    let mut out = SweepResults::default();
    for repeat in 0..repeats {
        for method in [Method::Dblstm, Method::DblstmVae] {
            out.rows.push(run_cell(corpus, method, 1, 0, repeat, seed, cfg)?);
        }
        for &c in counts {
            out.rows.push(run_cell(corpus, Method::SemiVae, 1, c, repeat, seed, cfg)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate_synthetic_corpus, SynthSpec};

    fn corpus(n_train: usize, n_src: usize, n_tgt: usize) -> Corpus<f64> {
        let spec = SynthSpec {
            n_train,
            n_source_only: n_src,
            n_target_only: n_tgt,
            n_validation: 1,
            n_test: 1,
            frames: 12,
            jitter: 2,
            ..SynthSpec::default()
        };
        Corpus::from_synthetic(&generate_synthetic_corpus(&spec).unwrap())
    }

    #[test]
    fn selection_is_disjoint_and_deterministic() {
        let c = corpus(10, 1, 0);
        let s = select(&c, 3, 6, 7, 0).unwrap();
        assert_eq!(s, select(&c, 3, 6, 7, 0).unwrap());
        assert_ne!(s, select(&c, 3, 6, 7, 1).unwrap());
        assert_eq!(s.pairs.len(), 3);
        assert_eq!(s.sources.len(), 3);
        assert_eq!(s.targets.len(), 3);
        assert_eq!(s.sources[0], Ok(0));
        let mut used: Vec<usize> = s.pairs.clone();
        for v in s.sources.iter().chain(&s.targets) {
            if let Err(i) = v {
                used.push(*i);
            }
        }
        let n = used.len();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), n, "a pair was used twice");
        // nested: a larger n keeps the smaller draw as a prefix
        assert_eq!(select(&c, 5, 0, 7, 0).unwrap().pairs[..3], s.pairs[..]);
    }

    #[test]
    fn selection_reports_shortfall() {
        let c = corpus(4, 0, 0);
        let err = select(&c, 2, 5, 0, 0).unwrap_err().to_string();
        assert!(err.contains("short by 3"), "{err}");
        assert!(select(&c, 5, 0, 0, 0).is_err());
    }

    #[test]
    fn sweep_settings_are_validated() {
        let ok = SweepSpec {
            total_budget: 10,
            parallel_counts: vec![1, 10],
            repeats: 1,
            seed: 0,
        };
        assert!(ok.validate().is_ok());
        assert!(SweepSpec { parallel_counts: vec![11], ..ok.clone() }.validate().is_err());
        assert!(SweepSpec { repeats: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn tiny_sweeps_have_expected_rows() {
        let c = corpus(4, 0, 0);
        let mut cfg = ExperimentConfig::default();
        cfg.model.encoder_widths = [3, 3];
        cfg.model.decoder_widths = [3, 3];
        cfg.model.latent_dim = 2;
        cfg.baseline.widths = vec![3, 3];
        cfg.train.max_steps = 4;
        cfg.train.min_epoch_steps = 2;
        let spec = SweepSpec {
            total_budget: 4,
            parallel_counts: vec![1, 4],
            repeats: 2,
            seed: 3,
        };
        let r = run_parallel_sweep(&c, &spec, &cfg).unwrap();
        assert_eq!(r.rows.len(), 2 * 3 * 2);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.starts_with("method,n_parallel,n_nonparallel,repeat,test_mcd_db,train_seconds\n"));
        // with the whole budget paired the two variational methods coincide
        for rep in 0..2 {
            assert_eq!(r.mcd(Method::DblstmVae, 4, 0, rep), r.mcd(Method::SemiVae, 4, 0, rep));
        }
        assert_eq!(r, run_parallel_sweep(&c, &spec, &cfg).unwrap());

        let np = run_nonparallel_sweep(&c, &[0, 2], 1, 3, &cfg).unwrap();
        assert_eq!(np.rows.len(), 4);
        assert_eq!(np.mcd(Method::SemiVae, 1, 0, 0), np.mcd(Method::DblstmVae, 1, 0, 0));
        assert!(run_nonparallel_sweep(&c, &[2, 0], 1, 3, &cfg).is_err());
    }
}
