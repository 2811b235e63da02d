//! Speaker normalization statistics, log-Gaussian F0 conversion and
//! mel-cepstral distortion.

use std::fmt::Write as _;
use std::path::Path;

use crate::align::{dtw, DtwOptions};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Lower bound applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerStats<T> {
    pub mcep_mean: Vec<T>,
    pub mcep_std: Vec<T>,
    /// Mean of ln(f0) over voiced frames.
    pub logf0_mean: T,
    pub logf0_std: T,
}

/// Population moments of the cepstra over all frames, and of log-F0 over
/// voiced frames only.
pub fn fit_stats<T: Scalar>(corpus: &[FeatureSequence<T>]) -> Result<SpeakerStats<T>> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::Statistics("empty corpus".into()))?;
    let d = first.dim();
    if corpus.iter().any(|fs| fs.dim() != d) {
        return Err(Error::input("corpus mixes cepstral dimensions"));
    }
    // accumulate in f64 regardless of T
    let mut n = 0usize;
    let mut sum = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    let (mut nv, mut lsum, mut lsq) = (0usize, 0.0f64, 0.0f64);
    for fs in corpus {
        for row in fs.mcep.row_iter() {
            n += 1;
            for k in 0..d {
                let v = row[k].as_f64();
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        for &f in &fs.f0 {
            if f > T::zero() {
                let l = f.as_f64().ln();
                nv += 1;
                lsum += l;
                lsq += l * l;
            }
        }
    }
    if nv == 0 {
        return Err(Error::Statistics("no voiced frames in corpus".into()));
    }
    let moments = |s: f64, q: f64, n: usize| {
        let m = s / n as f64;
        let var = (q / n as f64 - m * m).max(0.0);
        (m, var.sqrt().max(STD_FLOOR))
    };
    let mut mcep_mean = Vec::with_capacity(d);
    let mut mcep_std = Vec::with_capacity(d);
    for k in 0..d {
        let (m, s) = moments(sum[k], sq[k], n);
        mcep_mean.push(T::of(m));
        mcep_std.push(T::of(s));
    }
    let (lm, ls) = moments(lsum, lsq, nv);
    Ok(SpeakerStats {
        mcep_mean,
        mcep_std,
        logf0_mean: T::of(lm),
        logf0_std: T::of(ls),
    })
}

impl<T: Scalar> SpeakerStats<T> {
    /// Zero means and unit deviations: normalization is a no-op.
    pub fn identity(dim: usize) -> Self {
        SpeakerStats {
            mcep_mean: vec![T::zero(); dim],
            mcep_std: vec![T::one(); dim],
            logf0_mean: T::zero(),
            logf0_std: T::one(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mcep_mean.len()
    }

    pub fn normalize_mcep(&self, m: &Matrix<T>) -> Matrix<T> {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (k, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mcep_mean[k]) / self.mcep_std[k];
            }
        }
        out
    }

    pub fn denormalize_mcep(&self, m: &Matrix<T>) -> Matrix<T> {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (k, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.mcep_std[k] + self.mcep_mean[k];
            }
        }
        out
    }

    /// Keyed text form: one `key = value [value ...]` line per field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[T]| {
            v.iter()
                .map(|x| format!("{:?}", x.as_f64()))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(s, "mcep_mean = {}", join(&self.mcep_mean));
        let _ = writeln!(s, "mcep_std = {}", join(&self.mcep_std));
        let _ = writeln!(s, "logf0_mean = {:?}", self.logf0_mean.as_f64());
        let _ = writeln!(s, "logf0_std = {:?}", self.logf0_std.as_f64());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut mean = None;
        let mut std = None;
        let mut lm = None;
        let mut ls = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::input(format!("stats line {}: expected `key = value`", no + 1)))?;
            let nums = v
                .split_whitespace()
                .map(|t| t.parse::<f64>().map(T::of))
                .collect::<std::result::Result<Vec<T>, _>>()
                .map_err(|e| Error::input(format!("stats line {}: {e}", no + 1)))?;
            match k.trim() {
                "mcep_mean" => mean = Some(nums),
                "mcep_std" => std = Some(nums),
                "logf0_mean" => lm = nums.first().copied(),
                "logf0_std" => ls = nums.first().copied(),
                other => return Err(Error::input(format!("unknown stats key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::input(format!("stats missing key `{k}`"));
        let s = SpeakerStats {
            mcep_mean: mean.ok_or_else(|| missing("mcep_mean"))?,
            mcep_std: std.ok_or_else(|| missing("mcep_std"))?,
            logf0_mean: lm.ok_or_else(|| missing("logf0_mean"))?,
            logf0_std: ls.ok_or_else(|| missing("logf0_std"))?,
        };
        if s.mcep_mean.len() != s.mcep_std.len() {
            return Err(Error::input("mcep_mean and mcep_std lengths differ"));
        }
        if s.mcep_std.iter().any(|&v| !(v > T::zero())) || !(s.logf0_std > T::zero()) {
            return Err(Error::input("standard deviations must be positive"));
        }
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Per-coefficient z-score of the cepstra; other tracks untouched.
pub fn normalize<T: Scalar>(fs: &FeatureSequence<T>, s: &SpeakerStats<T>) -> FeatureSequence<T> {
    FeatureSequence {
        mcep: s.normalize_mcep(&fs.mcep),
        ..fs.clone()
    }
}

pub fn denormalize<T: Scalar>(fs: &FeatureSequence<T>, s: &SpeakerStats<T>) -> FeatureSequence<T> {
    FeatureSequence {
        mcep: s.denormalize_mcep(&fs.mcep),
        ..fs.clone()
    }
}

/// Log-Gaussian F0 mapping; unvoiced (0) frames stay 0.
pub fn convert_f0<T: Scalar>(f0: &[T], src: &SpeakerStats<T>, tgt: &SpeakerStats<T>) -> Vec<T> {
    f0.iter()
        .map(|&f| {
            if f > T::zero() {
                ((f.ln() - src.logf0_mean) / src.logf0_std * tgt.logf0_std + tgt.logf0_mean).exp()
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Mean over frames of `(10 / ln 10) * sqrt(2 * Σ_d (a_d - b_d)^2)`, in dB.
pub fn mcd<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::input(format!(
            "mcd shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::input("mcd of empty sequences"));
    }
    Ok(mcd_sum(a, b) / T::of(a.rows() as f64))
}

fn mcd_sum<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    let k = T::of(10.0 / std::f64::consts::LN_10);
    let two = T::of(2.0);
    a.row_iter()
        .zip(b.row_iter())
        .map(|(ra, rb)| {
            let s: T = ra.iter().zip(rb).map(|(&x, &y)| (x - y) * (x - y)).sum();
            k * (two * s).sqrt()
        })
        .sum()
}

/// How converted and reference frames are put into correspondence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum McdAlignment {
    /// Reference warped onto the converted timeline by DTW.
    #[default]
    Dtw,
    /// Frames already correspond; shapes must match.
    Raw,
}

impl std::str::FromStr for McdAlignment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dtw" => Ok(McdAlignment::Dtw),
            "raw" => Ok(McdAlignment::Raw),
            other => Err(Error::Config(format!("alignment must be `dtw` or `raw`, got `{other}`"))),
        }
    }
}

/// MCD of one converted/reference pair under the chosen alignment. Returns
/// the distortion and the number of frames it averages over.
pub fn pair_mcd<T: Scalar>(
    converted: &Matrix<T>,
    reference: &Matrix<T>,
    mode: McdAlignment,
) -> Result<(T, usize)> {
    match mode {
        McdAlignment::Raw => Ok((mcd(converted, reference)?, converted.rows())),
        McdAlignment::Dtw => {
            let al = dtw(converted, reference, DtwOptions::default())?;
            let mut idx = vec![usize::MAX; converted.rows()];
            for &(i, j) in &al.path.steps {
                if idx[i] == usize::MAX {
                    idx[i] = j;
                }
            }
            let warped = reference.select_rows(&idx);
            Ok((mcd(converted, &warped)?, converted.rows()))
        }
    }
}

/// Frame-weighted mean MCD over `(converted, reference)` pairs.
pub fn corpus_mcd<T: Scalar>(pairs: &[(Matrix<T>, Matrix<T>)], mode: McdAlignment) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::input("corpus_mcd needs at least one pair"));
    }
    let mut total = T::zero();
    let mut frames = 0usize;
    for (c, r) in pairs {
        let (m, n) = pair_mcd(c, r, mode)?;
        total += m * T::of(n as f64);
        frames += n;
    }
    Ok(total / T::of(frames as f64))
}
