//! Audio ingest, per-frame acoustic analysis and the `VCF1` feature container.
//!
//! The spectral envelope is approximated by the STFT magnitude smoothed with a
//! bank of triangular filters laid out on an all-pass-warped (mel-like)
//! frequency axis. Mel-cepstra are the DCT of the log filter-bank amplitudes.
//! Coefficient 0 is kept apart as the `c0` energy track; the remaining
//! coefficients form the `mcep` matrix used for conversion.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Number of conversion coefficients per frame (cepstra 1..=49).
pub const MCEP_DIM: usize = 49;

const MAGIC: &[u8; 4] = b"VCF1";

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    /// Validates and clamps samples into `[-1, 1]`.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::input("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite sample at index {i}")));
        }
        let samples = samples.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameConfig {
    /// Analysis window length in samples; must be a power of two.
    pub fft_size: usize,
    /// Frame shift in seconds.
    pub hop: f64,
    /// Cepstral order including c0.
    pub n_cepstra: usize,
    /// All-pass warping constant used to lay out the filter bank.
    pub mel_warp: f64,
    /// Number of triangular filters; at least `n_cepstra`.
    pub n_bands: usize,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Normalized-autocorrelation peak required to call a frame voiced.
    pub voicing_threshold: f64,
    pub sample_rate: u32,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            fft_size: 1024,
            hop: 0.005,
            n_cepstra: 50,
            mel_warp: 0.42,
            n_bands: 64,
            f0_min: 50.0,
            f0_max: 500.0,
            voicing_threshold: 0.3,
            sample_rate: 16_000,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::input(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if !(self.hop > 0.0) {
            return Err(Error::input("hop must be positive"));
        }
        if self.hop_samples() == 0 {
            return Err(Error::input("hop is shorter than one sample"));
        }
        if self.n_cepstra < 2 {
            return Err(Error::input("n_cepstra must be at least 2"));
        }
        if self.n_bands < self.n_cepstra {
            return Err(Error::input("n_bands must be at least n_cepstra"));
        }
        if !(self.mel_warp > -1.0 && self.mel_warp < 1.0) {
            return Err(Error::input("mel_warp must lie in (-1, 1)"));
        }
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max) {
            return Err(Error::input("require 0 < f0_min < f0_max"));
        }
        Ok(())
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop * self.sample_rate as f64).round() as usize
    }

    /// Frames produced for a clip of `len` samples, or `None` if too short.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        if len < self.fft_size {
            None
        } else {
            Some((len - self.fft_size) / self.hop_samples() + 1)
        }
    }
}

/// Per-utterance acoustic features. All tracks have the same length `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<T> {
    /// `T × D` cepstral coefficients 1..=D.
    pub mcep: Matrix<T>,
    pub c0: Vec<T>,
    /// Hz; exactly 0 on unvoiced frames.
    pub f0: Vec<T>,
    pub ap: Vec<T>,
    /// Seconds.
    pub frame_hop: f64,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn new(mcep: Matrix<T>, c0: Vec<T>, f0: Vec<T>, ap: Vec<T>, frame_hop: f64) -> Result<Self> {
        let fs = FeatureSequence {
            mcep,
            c0,
            f0,
            ap,
            frame_hop,
        };
        fs.validate()?;
        Ok(fs)
    }

    /// Sequence with only cepstra; f0 unvoiced, c0 zero, ap one.
    pub fn from_mcep(mcep: Matrix<T>, frame_hop: f64) -> Self {
        let t = mcep.rows();
        FeatureSequence {
            mcep,
            c0: vec![T::zero(); t],
            f0: vec![T::zero(); t],
            ap: vec![T::one(); t],
            frame_hop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.mcep.rows();
        if t == 0 {
            return Err(Error::input("feature sequence has no frames"));
        }
        if self.c0.len() != t || self.f0.len() != t || self.ap.len() != t {
            return Err(Error::input(format!(
                "track lengths differ: mcep {t}, c0 {}, f0 {}, ap {}",
                self.c0.len(),
                self.f0.len(),
                self.ap.len()
            )));
        }
        if !self.mcep.is_finite() {
            return Err(Error::input("mcep contains non-finite values"));
        }
        if self.f0.iter().any(|&f| !(f >= T::zero()) || !f.is_finite()) {
            return Err(Error::input("f0 must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mcep.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.mcep.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.mcep.cols()
    }

    pub fn voiced_mask(&self) -> Vec<bool> {
        self.f0.iter().map(|&f| f > T::zero()).collect()
    }

    /// Frames gathered by index on every track.
    pub fn select_frames(&self, idx: &[usize]) -> Self {
        FeatureSequence {
            mcep: self.mcep.select_rows(idx),
            c0: idx.iter().map(|&i| self.c0[i]).collect(),
            f0: idx.iter().map(|&i| self.f0[i]).collect(),
            ap: idx.iter().map(|&i| self.ap[i]).collect(),
            frame_hop: self.frame_hop,
        }
    }

    pub fn cast<U: Scalar>(&self) -> FeatureSequence<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect();
        FeatureSequence {
            mcep: self.mcep.cast(),
            c0: c(&self.c0),
            f0: c(&self.f0),
            ap: c(&self.ap),
            frame_hop: self.frame_hop,
        }
    }
}

/// Reads a PCM WAV file, keeping the first channel only.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(e, path))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(e, path))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(e, path))?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples (need 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let path = path.as_ref();
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| map_hound(e, path))?;
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| map_hound(e, path))?;
    }
    w.finalize().map_err(|e| map_hound(e, path))?;
    Ok(())
}

fn map_hound(e: hound::Error, path: &Path) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::Unsupported => {
            Error::Unsupported(format!("{}: unsupported wav encoding", path.display()))
        }
        hound::Error::FormatError(m) => Error::format(0, format!("{}: {m}", path.display())),
        other => Error::format(0, format!("{}: {other}", path.display())),
    }
}

fn check_clip(clip: &AudioClip, cfg: &FrameConfig) -> Result<usize> {
    cfg.validate()?;
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::input(format!(
            "sample rate {} Hz, pipeline expects {} Hz (resample first)",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    cfg.frame_count(clip.samples.len()).ok_or_else(|| {
        Error::input(format!(
            "clip has {} samples, need at least fft_size = {}",
            clip.samples.len(),
            cfg.fft_size
        ))
    })
}

/// Maps a normalized angular frequency in `[0, π]` through the first-order
/// all-pass warp with constant `alpha`.
fn warp_frequency(omega: f64, alpha: f64) -> f64 {
    omega + 2.0 * (alpha * omega.sin() / (1.0 - alpha * omega.cos())).atan()
}

/// Triangular filters, equally spaced on the warped axis, evaluated at the
/// FFT bin centers. Returns `n_bands × (fft_size/2 + 1)` weights.
fn filter_bank(cfg: &FrameConfig) -> Matrix<f64> {
    let n_bins = cfg.fft_size / 2 + 1;
    let pi = std::f64::consts::PI;
    let warped: Vec<f64> = (0..n_bins)
        .map(|k| warp_frequency(pi * k as f64 / (n_bins - 1) as f64, cfg.mel_warp))
        .collect();
    let step = pi / (cfg.n_bands + 1) as f64;
    let mut bank = Matrix::zeros(cfg.n_bands, n_bins);
    for b in 0..cfg.n_bands {
        let (lo, mid, hi) = (b as f64 * step, (b + 1) as f64 * step, (b + 2) as f64 * step);
        let mut any = false;
        for (k, &w) in warped.iter().enumerate() {
            let v = if w > lo && w <= mid {
                (w - lo) / (mid - lo)
            } else if w > mid && w < hi {
                (hi - w) / (hi - mid)
            } else {
                0.0
            };
            if v > 0.0 {
                bank[(b, k)] = v;
                any = true;
            }
        }
        if !any {
            // narrower than one bin: take the nearest bin
            let k = warped
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - mid).abs().total_cmp(&(b.1 - mid).abs()))
                .map(|(k, _)| k)
                .unwrap_or(0);
            bank[(b, k)] = 1.0;
        }
    }
    bank
}

fn hann(n: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * pi * i as f64 / n as f64).cos())
        .collect()
}

/// Frame-level analysis of a 16 kHz clip.
///
/// Produces `floor((len - fft_size) / hop_samples) + 1` frames, the `i`-th
/// starting at sample `i * hop_samples` (no padding).
pub fn extract_features<T: Scalar>(clip: &AudioClip, cfg: &FrameConfig) -> Result<FeatureSequence<T>> {
    let n_frames = check_clip(clip, cfg)?;
    let hop = cfg.hop_samples();
    let n = cfg.fft_size;
    let n_bins = n / 2 + 1;
    let window = hann(n);
    let bank = filter_bank(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let n_out = cfg.n_cepstra;
    let m = cfg.n_bands;

    // DCT-II basis, orthonormal scaling
    let dct = Matrix::from_fn(n_out, m, |k, j| {
        let s = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
        s * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / m as f64).cos()
    });

    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut mag = vec![0.0; n_bins];
    let mut logband = vec![0.0; m];
    let mut mcep = Matrix::zeros(n_frames, n_out - 1);
    let mut c0 = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let frame = &clip.samples[t * hop..t * hop + n];
        for (b, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        for (mg, b) in mag.iter_mut().zip(&buf) {
            *mg = b.norm();
        }
        for (lb, row) in logband.iter_mut().zip(bank.row_iter()) {
            let e: f64 = row.iter().zip(&mag).map(|(w, a)| w * a).sum();
            *lb = e.max(1e-10).ln();
        }
        for k in 0..n_out {
            let c: f64 = dct.row(k).iter().zip(&logband).map(|(a, b)| a * b).sum();
            if k == 0 {
                c0.push(T::of(c));
            } else {
                mcep[(t, k - 1)] = T::of(c);
            }
        }
    }
    let f0 = estimate_f0_frames(clip, cfg, n_frames);
    let ap = f0.iter().map(|&f| if f > 0.0 { T::zero() } else { T::one() }).collect();
    let f0 = f0.into_iter().map(T::of).collect();
    FeatureSequence::new(mcep, c0, f0, ap, hop as f64 / cfg.sample_rate as f64)
}

/// Per-frame F0 by normalized autocorrelation; 0 marks unvoiced frames.
pub fn estimate_f0<T: Scalar>(clip: &AudioClip, cfg: &FrameConfig) -> Result<Vec<T>> {
    let n_frames = check_clip(clip, cfg)?;
    Ok(estimate_f0_frames(clip, cfg, n_frames)
        .into_iter()
        .map(T::of)
        .collect())
}

fn estimate_f0_frames(clip: &AudioClip, cfg: &FrameConfig, n_frames: usize) -> Vec<f64> {
    let hop = cfg.hop_samples();
    let n = cfg.fft_size;
    let sr = cfg.sample_rate as f64;
    let min_lag = ((sr / cfg.f0_max).floor() as usize).max(2);
    let max_lag = ((sr / cfg.f0_min).ceil() as usize).min(n - 2);
    let mut r = vec![0.0; max_lag + 2];
    (0..n_frames)
        .map(|t| {
            let frame = &clip.samples[t * hop..t * hop + n];
            let energy: f64 = frame.iter().map(|v| v * v).sum();
            if energy < 1e-10 * n as f64 || min_lag + 1 >= max_lag {
                return 0.0;
            }
            // prefix sums of squares give per-lag energies of both segments
            let mut cum = Vec::with_capacity(n + 1);
            cum.push(0.0);
            let mut acc = 0.0;
            for v in frame {
                acc += v * v;
                cum.push(acc);
            }
            for (lag, rv) in r.iter_mut().enumerate().take(max_lag + 2).skip(min_lag - 1) {
                let len = n - lag;
                let num: f64 = frame[..len].iter().zip(&frame[lag..]).map(|(a, b)| a * b).sum();
                let e1 = cum[len];
                let e2 = cum[n] - cum[lag];
                let den = (e1 * e2).sqrt();
                *rv = if den > 0.0 { num / den } else { 0.0 };
            }
            let global = (min_lag..=max_lag).map(|l| r[l]).fold(f64::NEG_INFINITY, f64::max);
            if global < cfg.voicing_threshold {
                return 0.0;
            }
            // earliest local peak close to the global maximum avoids octave errors
            let pick = (min_lag..=max_lag)
                .find(|&l| r[l] >= r[l - 1] && r[l] >= r[l + 1] && r[l] >= 0.9 * global)
                .unwrap_or(min_lag);
            let (a, b, c) = (r[pick - 1], r[pick], r[pick + 1]);
            let den = a - 2.0 * b + c;
            let shift = if den.abs() > 1e-12 { 0.5 * (a - c) / den } else { 0.0 };
            let lag = pick as f64 + shift.clamp(-0.5, 0.5);
            let f0 = sr / lag;
            if f0 >= cfg.f0_min && f0 <= cfg.f0_max {
                f0
            } else {
                0.0
            }
        })
        .collect()
}

/// Serializes a feature sequence into the `VCF1` container.
///
/// Layout (little-endian): magic, `u32` T, `u32` n_mcep, `u32` flags, then
/// `f32` mcep rows, c0, f0, ap, and a trailing `f64` frame hop. Values are
/// stored as `f32`.
pub fn write_features<T: Scalar>(path: impl AsRef<Path>, fs: &FeatureSequence<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_features(fs, 0))?;
    w.flush()?;
    Ok(())
}

pub fn encode_features<T: Scalar>(fs: &FeatureSequence<T>, flags: u32) -> Vec<u8> {
    let t = fs.len();
    let d = fs.dim();
    let mut out = Vec::with_capacity(20 + 4 * t * (d + 3));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    let mut put = |v: T| out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    fs.mcep.as_slice().iter().for_each(|&v| put(v));
    fs.c0.iter().for_each(|&v| put(v));
    fs.f0.iter().for_each(|&v| put(v));
    fs.ap.iter().for_each(|&v| put(v));
    out.extend_from_slice(&fs.frame_hop.to_le_bytes());
    out
}

pub fn read_features<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureSequence<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_features(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what} ({} bytes left, need {n})", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s<T: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect())
    }
}

pub fn decode_features<T: Scalar>(bytes: &[u8]) -> Result<FeatureSequence<T>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}, expected \"VCF1\"", String::from_utf8_lossy(magic))));
    }
    let t = c.u32("frame count")? as usize;
    let d = c.u32("coefficient count")? as usize;
    let _flags = c.u32("flags")?;
    if t == 0 || d == 0 {
        return Err(Error::format(4, "empty feature sequence"));
    }
    let mcep = Matrix::from_vec(t, d, c.f32s(t * d, "mcep rows")?);
    let c0 = c.f32s(t, "c0 track")?;
    let f0 = c.f32s(t, "f0 track")?;
    let ap = c.f32s(t, "ap track")?;
    let hop = f64::from_le_bytes(c.take(8, "frame hop")?.try_into().unwrap());
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos as u64, "trailing bytes after payload"));
    }
    FeatureSequence::new(mcep, c0, f0, ap, hop).map_err(|e| Error::format(16, e.to_string()))
}
