use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use semivc::align::{dtw, warp_target, DtwOptions};
use semivc::features::{extract_features, load_wav, read_features, write_features, FeatureSequence};
use semivc::gmm::{convert_gmm, fit_conversion, fit_gmm, GmmVcModel};
use semivc::harness::{
    generate_synthetic_corpus, prepare, run_nonparallel_sweep, run_parallel_sweep, train_method, Corpus,
    DatasetManifest, ExperimentConfig, Method, Selection, SweepSpec,
};
use semivc::linalg::Matrix;
use semivc::ssvc::{DblstmModel, SsVcModel};
use semivc::stats::{corpus_mcd, fit_stats, normalize, SpeakerStats};
use semivc::Error;

use crate::{Cli, Command, SweepArgs, TrainArgs};

/// A failed run: exit code 1 for bad input, 2 for runtime failures.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_input_error() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Variational model on paired and unpaired data.
    Semi,
    /// Variational model on paired data only.
    Vae,
    /// Deterministic recurrent regression on paired data.
    Dblstm,
}

impl MethodArg {
    fn method(self) -> Method {
        match self {
            MethodArg::Semi => Method::SemiVae,
            MethodArg::Vae => Method::DblstmVae,
            MethodArg::Dblstm => Method::Dblstm,
        }
    }
}

pub fn run(cli: Cli) -> Outcome {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), cli.seed)
        .map_err(|e| Failure::input(format!("--config: {e}")))?;
    match cli.command {
        Command::Extract { input, output } => extract(&input, &output, &cfg),
        Command::Align {
            source,
            target,
            output,
            path_out,
            source_stats,
            target_stats,
        } => align(&source, &target, &output, path_out.as_deref(), source_stats.zip(target_stats), &cfg),
        Command::Stats { manifest, output } => stats(&manifest, &output),
        Command::TrainGmm {
            manifest,
            output,
            components,
        } => train_gmm(&manifest, &output, components.unwrap_or(cfg.gmm_components), &cfg),
        Command::TrainSsvc(args) => train_ssvc(&args, &cfg),
        Command::Convert { model, input, output } => convert(&model, &input, &output),
        Command::Evaluate { converted, reference } => evaluate(&converted, &reference, &cfg),
        Command::GenSynth { output } => {
            let corpus = generate_synthetic_corpus(&cfg.synth)?;
            corpus.write(&output)?;
            println!("wrote {} utterances to {}", corpus.utterances.len(), output.display());
            Ok(())
        }
        Command::SweepParallel(args) => sweep(&args, false, &cfg),
        Command::SweepNonparallel(args) => sweep(&args, true, &cfg),
    }
}

fn require(flag: &str, path: &Path) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::input(format!("{flag}: {} does not exist", path.display())))
    }
}

/// Files with the given extension directly under `dir`, sorted by name.
fn files_with_extension(dir: &Path, ext: &str) -> Outcome<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::input(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

/// Maps a file or a directory of files; directories map entry-wise into
/// `output/<stem>.vcf`.
fn for_each_input(
    input: &Path,
    output: &Path,
    ext: &str,
    mut f: impl FnMut(&Path, &Path) -> Outcome,
) -> Outcome<usize> {
    require("--input", input)?;
    if !input.is_dir() {
        f(input, output)?;
        return Ok(1);
    }
    let files = files_with_extension(input, ext)?;
    if files.is_empty() {
        return Err(Failure::input(format!("--input: no .{ext} files in {}", input.display())));
    }
    std::fs::create_dir_all(output).map_err(Error::from)?;
    for p in &files {
        let stem = p.file_stem().unwrap_or_default();
        f(p, &output.join(stem).with_extension("vcf"))?;
    }
    Ok(files.len())
}

fn extract(input: &Path, output: &Path, cfg: &ExperimentConfig) -> Outcome {
    let n = for_each_input(input, output, "wav", |i, o| {
        let clip = load_wav(i)?;
        let fs: FeatureSequence<f64> = extract_features(&clip, &cfg.frame)?;
        write_features(o, &fs)?;
        Ok(())
    })?;
    println!("extracted {n} file(s)");
    Ok(())
}

fn align(
    source: &Path,
    target: &Path,
    output: &Path,
    path_out: Option<&Path>,
    stats: Option<(PathBuf, PathBuf)>,
    cfg: &ExperimentConfig,
) -> Outcome {
    require("--source", source)?;
    require("--target", target)?;
    let x: FeatureSequence<f64> = read_features(source)?;
    let y: FeatureSequence<f64> = read_features(target)?;
    let (xc, yc) = match stats {
        Some((s, t)) => {
            require("--source-stats", &s)?;
            require("--target-stats", &t)?;
            let (s, t) = (SpeakerStats::<f64>::load(&s)?, SpeakerStats::<f64>::load(&t)?);
            (s.normalize_mcep(&x.mcep), t.normalize_mcep(&y.mcep))
        }
        None => (x.mcep.clone(), y.mcep.clone()),
    };
    let opts = DtwOptions {
        band: cfg.dtw_band,
        ..DtwOptions::default()
    };
    let al = dtw(&xc, &yc, opts)?;
    let pair = warp_target(&x, &y, &al.path)?;
    write_features(output, &pair.y_warped)?;
    if let Some(p) = path_out {
        let mut text = String::new();
        for (i, j) in &al.path.steps {
            let _ = writeln!(text, "{i} {j}");
        }
        std::fs::write(p, text).map_err(Error::from)?;
    }
    println!(
        "aligned {} -> {} frames, path length {}, cost {:.6}",
        y.len(),
        x.len(),
        al.path.steps.len(),
        al.cost
    );
    Ok(())
}

fn load_corpus(manifest: &Path) -> Outcome<Corpus<f64>> {
    require("--manifest", manifest)?;
    let m = DatasetManifest::load(manifest).map_err(|e| Failure::input(format!("--manifest: {e}")))?;
    Ok(Corpus::from_manifest(&m)?)
}

fn corpus_stats(c: &Corpus<f64>) -> Outcome<(SpeakerStats<f64>, SpeakerStats<f64>)> {
    let src: Vec<_> = c
        .train_pairs
        .iter()
        .map(|p| p.1.clone())
        .chain(c.train_source.iter().map(|s| s.1.clone()))
        .collect();
    let tgt: Vec<_> = c
        .train_pairs
        .iter()
        .map(|p| p.2.clone())
        .chain(c.train_target.iter().map(|t| t.1.clone()))
        .collect();
    if src.is_empty() || tgt.is_empty() {
        return Err(Failure::input("--manifest: the training split needs utterances of both speakers"));
    }
    Ok((fit_stats(&src)?, fit_stats(&tgt)?))
}

fn stats(manifest: &Path, output: &Path) -> Outcome {
    let corpus = load_corpus(manifest)?;
    let (s, t) = corpus_stats(&corpus)?;
    std::fs::create_dir_all(output).map_err(Error::from)?;
    s.save(output.join("source.stats"))?;
    t.save(output.join("target.stats"))?;
    println!("wrote statistics to {}", output.display());
    Ok(())
}

/// `model.vcgm` keeps its statistics in `model.vcgm.source.stats` and
/// `model.vcgm.target.stats`.
fn gmm_stats_paths(model: &Path) -> (PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut s = model.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".source.stats"), with(".target.stats"))
}

fn train_gmm(manifest: &Path, output: &Path, k: usize, cfg: &ExperimentConfig) -> Outcome {
    let corpus = load_corpus(manifest)?;
    if corpus.train_pairs.is_empty() {
        return Err(Failure::input("--manifest: the GMM baseline needs paired training utterances"));
    }
    let (s, t) = corpus_stats(&corpus)?;
    let opts = DtwOptions {
        band: cfg.dtw_band,
        ..DtwOptions::default()
    };
    let mut pairs = Vec::with_capacity(corpus.train_pairs.len());
    let mut frames = Vec::new();
    for (_, x, y) in &corpus.train_pairs {
        let (xn, yn) = (normalize(x, &s), normalize(y, &t));
        let al = dtw(&xn.mcep, &yn.mcep, opts)?;
        frames.extend_from_slice(xn.mcep.as_slice());
        pairs.push(warp_target(&xn, &yn, &al.path)?);
    }
    let dim = s.dim();
    let frames = Matrix::from_vec(frames.len() / dim, dim, frames);
    let model: GmmVcModel<f64> = fit_conversion(&fit_gmm(&frames, k, cfg.train.seed)?, &pairs)?;
    model.save(output)?;
    let (sp, tp) = gmm_stats_paths(output);
    s.save(sp)?;
    t.save(tp)?;
    println!("trained {k}-component GMM on {} frames", frames.rows());
    Ok(())
}

fn train_ssvc(args: &TrainArgs, cfg: &ExperimentConfig) -> Outcome {
    let corpus = load_corpus(&args.manifest)?;
    let available = corpus.train_pairs.len();
    let n = args.parallel.unwrap_or(available);
    if n > available {
        return Err(Failure::input(format!(
            "--parallel: {n} requested but the training split has {available} paired utterances"
        )));
    }
    let method = args.method.method();
    let sel = Selection {
        pairs: (0..n).collect(),
        sources: (0..corpus.train_source.len()).map(Ok).collect(),
        targets: (0..corpus.train_target.len()).map(Ok).collect(),
    };
    let data = prepare(&corpus, &sel, method == Method::SemiVae, cfg)?;
    let (model, log) = train_method(method, &data, cfg, cfg.train.seed)?;
    model.save(&args.output)?;
    if let Some(p) = &args.log {
        std::fs::write(p, log.to_csv()).map_err(Error::from)?;
    }
    match log.best_val_mcd {
        Some(v) => println!(
            "trained {} for {} steps; best validation MCD {v:.3} dB at step {}",
            method.as_str(),
            log.rows.len(),
            log.best_step
        ),
        None => println!("trained {} for {} steps", method.as_str(), log.rows.len()),
    }
    Ok(())
}

enum Converter {
    Variational(SsVcModel<f64>),
    Baseline(DblstmModel<f64>),
    Gmm(GmmVcModel<f64>, SpeakerStats<f64>, SpeakerStats<f64>),
}

impl Converter {
    fn load(path: &Path) -> Outcome<Self> {
        require("--model", path)?;
        let bytes = std::fs::read(path).map_err(Error::from)?;
        match bytes.get(..4) {
            Some(b"VCSS") => Ok(Converter::Variational(SsVcModel::from_bytes(&bytes)?)),
            Some(b"VCDB") => Ok(Converter::Baseline(DblstmModel::from_bytes(&bytes)?)),
            Some(b"VCGM") => {
                let (sp, tp) = gmm_stats_paths(path);
                require("--model statistics", &sp)?;
                require("--model statistics", &tp)?;
                Ok(Converter::Gmm(
                    GmmVcModel::from_bytes(&bytes)?,
                    SpeakerStats::load(sp)?,
                    SpeakerStats::load(tp)?,
                ))
            }
            _ => Err(Failure::input(format!("--model: {} is not a known checkpoint", path.display()))),
        }
    }

    fn convert(&self, x: &FeatureSequence<f64>) -> Outcome<FeatureSequence<f64>> {
        Ok(match self {
            Converter::Variational(m) => m.convert(x)?,
            Converter::Baseline(m) => m.convert(x)?,
            Converter::Gmm(m, s, t) => convert_gmm(m, x, s, t)?,
        })
    }
}

fn convert(model: &Path, input: &Path, output: &Path) -> Outcome {
    let conv = Converter::load(model)?;
    let n = for_each_input(input, output, "vcf", |i, o| {
        let x: FeatureSequence<f64> = read_features(i)?;
        write_features(o, &conv.convert(&x)?)?;
        Ok(())
    })?;
    println!("converted {n} file(s)");
    Ok(())
}

fn evaluate(converted: &Path, reference: &Path, cfg: &ExperimentConfig) -> Outcome {
    require("--converted", converted)?;
    require("--reference", reference)?;
    let files = files_with_extension(converted, "vcf")?;
    if files.is_empty() {
        return Err(Failure::input(format!("--converted: no .vcf files in {}", converted.display())));
    }
    let mut pairs = Vec::with_capacity(files.len());
    for c in &files {
        let r = reference.join(c.file_name().unwrap_or_default());
        require("--reference", &r)?;
        let (c, r): (FeatureSequence<f64>, FeatureSequence<f64>) = (read_features(c)?, read_features(&r)?);
        pairs.push((c.mcep, r.mcep));
    }
    let d = corpus_mcd(&pairs, cfg.mcd_alignment)?;
    println!("MCD {d:.2} dB over {} utterance(s)", pairs.len());
    Ok(())
}

fn sweep(args: &SweepArgs, nonparallel: bool, cfg: &ExperimentConfig) -> Outcome {
    let corpus = match &args.manifest {
        Some(m) => load_corpus(m)?,
        None => Corpus::from_synthetic(&generate_synthetic_corpus(&cfg.synth)?),
    };
    let seed = cfg.train.seed;
    let results = if nonparallel {
        run_nonparallel_sweep(&corpus, &cfg.nonparallel_counts, cfg.repeats, seed, cfg)?
    } else {
        let spec = SweepSpec {
            total_budget: cfg.budget,
            parallel_counts: cfg.parallel_counts.clone(),
            repeats: cfg.repeats,
            seed,
        };
        run_parallel_sweep(&corpus, &spec, cfg)?
    };
    std::fs::write(&args.output, results.to_csv()).map_err(Error::from)?;
    println!("wrote {} result rows to {}", results.rows.len(), args.output.display());
    Ok(())
}
