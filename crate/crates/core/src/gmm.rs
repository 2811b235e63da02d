//! Gaussian-mixture voice conversion baseline.
//!
//! A diagonal-covariance mixture is fitted to source frames by EM (no parallel
//! data needed). The per-component conversion parameters `ν_i`, `Γ_i` of
//!
//! ```text
//! ŷ_t = Σ_i P(i | x_t) [ν_i + Γ_i Σ_i⁻¹ (x_t − μ_i)]
//! ```
//!
//! are then learned from aligned pairs. The mapping is linear in `(ν, Γ)`, so
//! the MSE fit is a ridge-regularized least-squares solve.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::AlignedPair;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::linalg::{cholesky_in_place, cholesky_solve, gemm, log_sum_exp, matvec_acc, Matrix};
use crate::scalar::Scalar;
use crate::sections::{find, read_sections, SectionWriter};
use crate::stats::{convert_f0, SpeakerStats};

pub const VAR_FLOOR: f64 = 1e-6;
pub const RIDGE: f64 = 1e-6;
pub const DEFAULT_COMPONENTS: usize = 32;

const MAGIC: &[u8; 4] = b"VCGM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmVcModel<T> {
    /// Mixture weights α, summing to one.
    pub weights: Vec<T>,
    /// `K × D` component means μ_i.
    pub means: Matrix<T>,
    /// `K × D` diagonal variances Σ_i.
    pub vars: Matrix<T>,
    /// `K × D` conversion biases ν_i.
    pub conv_bias: Matrix<T>,
    /// `K` conversion matrices Γ_i, each `D × D`.
    pub conv_mat: Vec<Matrix<T>>,
}

#[derive(Clone, Debug)]
pub struct GmmOptions {
    pub max_iter: usize,
    /// Stop once the per-frame log-likelihood gain drops below this.
    pub tol: f64,
    /// Frames beyond this count are subsampled before EM.
    pub max_frames: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            max_iter: 200,
            tol: 1e-6,
            max_frames: 100_000,
        }
    }
}

/// Result of [`fit_gmm_traced`]: the model and the total log-likelihood
/// after each E-step.
pub struct GmmFit<T> {
    pub model: GmmVcModel<T>,
    pub log_likelihood: Vec<f64>,
}

pub fn fit_gmm<T: Scalar>(frames: &Matrix<T>, k: usize, seed: u64) -> Result<GmmVcModel<T>> {
    Ok(fit_gmm_traced(frames, k, seed, &GmmOptions::default())?.model)
}

/// EM for a diagonal mixture with k-means++ seeding.
pub fn fit_gmm_traced<T: Scalar>(
    frames: &Matrix<T>,
    k: usize,
    seed: u64,
    opts: &GmmOptions,
) -> Result<GmmFit<T>> {
    if k == 0 {
        return Err(Error::input("component count must be at least 1"));
    }
    if frames.rows() < k {
        return Err(Error::input(format!(
            "{} frames cannot support {k} components",
            frames.rows()
        )));
    }
    if !frames.is_finite() {
        return Err(Error::input("frames contain non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = if frames.rows() > opts.max_frames {
        let mut idx: Vec<usize> = (0..frames.rows()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(opts.max_frames);
        idx.sort_unstable();
        frames.select_rows(&idx)
    } else {
        frames.clone()
    };
    let (n, d) = data.shape();
    let nf = T::of(n as f64);

    let global_mean: Vec<T> = data.column_sums().into_iter().map(|s| s / nf).collect();
    let global_var: Vec<T> = {
        let mut v = vec![T::zero(); d];
        for r in data.row_iter() {
            for j in 0..d {
                let e = r[j] - global_mean[j];
                v[j] += e * e;
            }
        }
        v.into_iter().map(|s| (s / nf).max(T::of(VAR_FLOOR))).collect()
    };

    let mut model = GmmVcModel {
        weights: vec![T::one() / T::of(k as f64); k],
        means: kmeans_pp(&data, k, &mut rng),
        vars: Matrix::from_fn(k, d, |_, j| global_var[j]),
        conv_bias: Matrix::zeros(k, d),
        conv_mat: vec![Matrix::zeros(d, d); k],
    };

    let mut trace = Vec::new();
    let mut reseeded = vec![false; k];
    let mut resp = Matrix::zeros(n, k);
    let mut prev: Option<f64> = None;
    for _ in 0..opts.max_iter {
        // E-step
        let mut ll = 0.0;
        let mut frame_ll = vec![T::zero(); n];
        let mut logp = vec![T::zero(); k];
        for (i, x) in data.row_iter().enumerate() {
            model.component_log_densities(x, &mut logp);
            let lse = log_sum_exp(&logp);
            frame_ll[i] = lse;
            ll += lse.as_f64();
            for (c, &lp) in logp.iter().enumerate() {
                resp[(i, c)] = (lp - lse).exp();
            }
        }
        if let Some(p) = prev {
            // monotone up to rounding
            debug_assert!(
                ll >= p - 1e-6 * p.abs().max(1.0),
                "EM log-likelihood decreased: {p} -> {ll}"
            );
        }
        trace.push(ll);
        if let Some(p) = prev {
            if (ll - p) / (n as f64) < opts.tol {
                break;
            }
        }
        prev = Some(ll);

        // M-step
        let mass = resp.column_sums();
        let mut reseed = false;
        for c in 0..k {
            if mass[c].as_f64() < 1e-8 * n as f64 {
                if reseeded[c] {
                    return Err(Error::Degenerate(format!(
                        "component {c} lost all responsibility mass twice"
                    )));
                }
                reseeded[c] = true;
                reseed = true;
                // restart it on the worst-explained frame
                let worst = (0..n)
                    .min_by(|&a, &b| frame_ll[a].partial_cmp(&frame_ll[b]).unwrap_or(std::cmp::Ordering::Equal))
                    .unwrap_or(0);
                model.means.row_mut(c).copy_from_slice(data.row(worst));
                model.vars.row_mut(c).copy_from_slice(&global_var);
                model.weights[c] = T::one() / nf;
                log::warn!("GMM component {c} collapsed; re-seeded on frame {worst}");
                continue;
            }
            let mut mu = vec![T::zero(); d];
            for (i, x) in data.row_iter().enumerate() {
                let r = resp[(i, c)];
                for j in 0..d {
                    mu[j] += r * x[j];
                }
            }
            for v in &mut mu {
                *v /= mass[c];
            }
            let mut var = vec![T::zero(); d];
            for (i, x) in data.row_iter().enumerate() {
                let r = resp[(i, c)];
                for j in 0..d {
                    let e = x[j] - mu[j];
                    var[j] += r * e * e;
                }
            }
            for v in &mut var {
                *v = (*v / mass[c]).max(T::of(VAR_FLOOR));
            }
            model.means.row_mut(c).copy_from_slice(&mu);
            model.vars.row_mut(c).copy_from_slice(&var);
            model.weights[c] = mass[c] / nf;
        }
        let total: T = model.weights.iter().copied().sum();
        for w in &mut model.weights {
            *w /= total;
        }
        if reseed {
            // the likelihood may drop after a restart
            prev = None;
        }
    }
    Ok(GmmFit {
        model,
        log_likelihood: trace,
    })
}

fn kmeans_pp<T: Scalar>(data: &Matrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let (n, d) = data.shape();
    let mut centers = Matrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(data.row(first));
    let dist = |a: &[T], b: &[T]| -> f64 {
        a.iter().zip(b).map(|(&x, &y)| ((x - y) * (x - y)).as_f64()).sum()
    };
    let mut best: Vec<f64> = data.row_iter().map(|r| dist(r, centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if u < b {
                    idx = i;
                    break;
                }
                u -= b;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(data.row(pick));
        for (i, r) in data.row_iter().enumerate() {
            best[i] = best[i].min(dist(r, centers.row(c)));
        }
    }
    centers
}

impl<T: Scalar> GmmVcModel<T> {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// `ln α_i + ln N(x | μ_i, Σ_i)` for every component.
    pub fn component_log_densities(&self, x: &[T], out: &mut [T]) {
        let ln2pi = T::of((2.0 * std::f64::consts::PI).ln());
        let half = T::of(0.5);
        for (c, o) in out.iter_mut().enumerate() {
            let mu = self.means.row(c);
            let var = self.vars.row(c);
            let mut s = T::zero();
            for j in 0..x.len() {
                let e = x[j] - mu[j];
                s += ln2pi + var[j].ln() + e * e / var[j];
            }
            *o = self.weights[c].ln() - half * s;
        }
    }

    /// Responsibilities `P(z_t = i | x_t)`, computed in log space.
    pub fn posterior(&self, x: &[T]) -> Vec<T> {
        let mut lp = vec![T::zero(); self.n_components()];
        self.component_log_densities(x, &mut lp);
        let lse = log_sum_exp(&lp);
        lp.into_iter().map(|v| (v - lse).exp()).collect()
    }

    /// Applies the conversion mapping to every row of `x`.
    pub fn map_frames(&self, x: &Matrix<T>) -> Matrix<T> {
        let (k, d) = (self.n_components(), self.dim());
        let mut out = Matrix::zeros(x.rows(), d);
        let mut u = vec![T::zero(); d];
        let mut term = vec![T::zero(); d];
        for (t, xt) in x.row_iter().enumerate() {
            let p = self.posterior(xt);
            let row = out.row_mut(t);
            for c in 0..k {
                let mu = self.means.row(c);
                let var = self.vars.row(c);
                for j in 0..d {
                    u[j] = (xt[j] - mu[j]) / var[j];
                }
                term.copy_from_slice(self.conv_bias.row(c));
                matvec_acc(&self.conv_mat[c], &u, &mut term);
                for j in 0..d {
                    row[j] += p[c] * term[j];
                }
            }
        }
        out
    }

    /// Regression features `[p_i, p_i Σ_i⁻¹(x − μ_i)]` for each component.
    fn design_row(&self, x: &[T], out: &mut [T]) {
        let d = self.dim();
        let p = self.posterior(x);
        for (c, &pc) in p.iter().enumerate() {
            let base = c * (d + 1);
            out[base] = pc;
            let mu = self.means.row(c);
            let var = self.vars.row(c);
            for j in 0..d {
                out[base + 1 + j] = pc * (x[j] - mu[j]) / var[j];
            }
        }
    }

    /// Permutes every per-component parameter by `perm` (new `i` = old `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        GmmVcModel {
            weights: perm.iter().map(|&p| self.weights[p]).collect(),
            means: self.means.select_rows(perm),
            vars: self.vars.select_rows(perm),
            conv_bias: self.conv_bias.select_rows(perm),
            conv_mat: perm.iter().map(|&p| self.conv_mat[p].clone()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (k, d) = (self.n_components(), self.dim());
        let f = |m: &Matrix<T>| m.as_slice().iter().map(|v| v.as_f64()).collect::<Vec<_>>();
        let mut w = SectionWriter::new(MAGIC, VERSION);
        w.f64_section(b"DIMS", [k as f64, d as f64])
            .f64_section(b"WGHT", self.weights.iter().map(|v| v.as_f64()))
            .f64_section(b"MEAN", f(&self.means))
            .f64_section(b"VARS", f(&self.vars))
            .f64_section(b"CBIA", f(&self.conv_bias))
            .f64_section(b"CMAT", self.conv_mat.iter().flat_map(f));
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let s = read_sections(bytes, MAGIC, VERSION)?;
        let dims = find(&s, b"DIMS")?.f64s()?;
        if dims.len() != 2 {
            return Err(Error::format(find(&s, b"DIMS")?.offset, "DIMS must hold 2 values"));
        }
        let (k, d) = (dims[0] as usize, dims[1] as usize);
        let load = |tag: &[u8; 4], len: usize| -> Result<Vec<T>> {
            let sec = find(&s, tag)?;
            let v = sec.f64s()?;
            if v.len() != len {
                return Err(Error::format(
                    sec.offset,
                    format!("section {:?} holds {} values, expected {len}", String::from_utf8_lossy(tag), v.len()),
                ));
            }
            Ok(v.into_iter().map(T::of).collect())
        };
        let weights = load(b"WGHT", k)?;
        let means = Matrix::from_vec(k, d, load(b"MEAN", k * d)?);
        let vars = Matrix::from_vec(k, d, load(b"VARS", k * d)?);
        let conv_bias = Matrix::from_vec(k, d, load(b"CBIA", k * d)?);
        let cm = load(b"CMAT", k * d * d)?;
        let conv_mat = cm.chunks_exact(d * d).map(|c| Matrix::from_vec(d, d, c.to_vec())).collect();
        Ok(GmmVcModel {
            weights,
            means,
            vars,
            conv_bias,
            conv_mat,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Least-squares fit of `ν_i`, `Γ_i` on aligned (normalized) pairs.
pub fn fit_conversion<T: Scalar>(model: &GmmVcModel<T>, pairs: &[AlignedPair<T>]) -> Result<GmmVcModel<T>> {
    let (k, d) = (model.n_components(), model.dim());
    let frames: usize = pairs.iter().map(|p| p.x.len()).sum();
    if frames == 0 {
        return Err(Error::input("fit_conversion needs at least one aligned frame"));
    }
    for p in pairs {
        if p.x.dim() != d || p.y_warped.dim() != d || p.x.len() != p.y_warped.len() {
            return Err(Error::input("aligned pair shape does not match the model"));
        }
    }
    let width = k * (d + 1);
    let mut ata = Matrix::zeros(width, width);
    let mut aty = Matrix::zeros(width, d);
    const CHUNK: usize = 512;
    let rows: Vec<(&[T], &[T])> = pairs
        .iter()
        .flat_map(|p| p.x.mcep.row_iter().zip(p.y_warped.mcep.row_iter()))
        .collect();
    for chunk in rows.chunks(CHUNK) {
        let mut phi = Matrix::zeros(chunk.len(), width);
        let mut y = Matrix::zeros(chunk.len(), d);
        for (r, (x, yt)) in chunk.iter().enumerate() {
            model.design_row(x, phi.row_mut(r));
            y.row_mut(r).copy_from_slice(yt);
        }
        gemm(T::one(), &phi, true, &phi, false, T::one(), &mut ata);
        gemm(T::one(), &phi, true, &y, false, T::one(), &mut aty);
    }
    if (0..width).any(|i| ata[(i, i)].as_f64() < 1e-12) {
        log::warn!("normal equations are rank deficient; relying on ridge regularization");
    }
    let mut ridge = RIDGE;
    let solution = loop {
        let mut a = ata.clone();
        for i in 0..width {
            a[(i, i)] += T::of(ridge);
        }
        if cholesky_in_place(&mut a) {
            break cholesky_solve(&a, &aty);
        }
        ridge *= 10.0;
        log::warn!("normal equations not positive definite; raising ridge to {ridge:e}");
        if ridge > 1e6 {
            return Err(Error::Degenerate("conversion least squares could not be regularized".into()));
        }
    };
    let mut out = model.clone();
    for c in 0..k {
        let base = c * (d + 1);
        out.conv_bias.row_mut(c).copy_from_slice(solution.row(base));
        // solution row base+1+e, column j holds Γ_c[j][e]
        out.conv_mat[c] = Matrix::from_fn(d, d, |j, e| solution[(base + 1 + e, j)]);
    }
    Ok(out)
}

/// Converts a raw (unnormalized) source utterance: cepstra through the
/// mixture mapping in the normalized domain, F0 by log-Gaussian mapping,
/// c0 and aperiodicity copied.
pub fn convert_gmm<T: Scalar>(
    model: &GmmVcModel<T>,
    x: &FeatureSequence<T>,
    src: &SpeakerStats<T>,
    tgt: &SpeakerStats<T>,
) -> Result<FeatureSequence<T>> {
    if x.dim() != model.dim() {
        return Err(Error::input(format!(
            "source has {} coefficients, model expects {}",
            x.dim(),
            model.dim()
        )));
    }
    let mapped = model.map_frames(&src.normalize_mcep(&x.mcep));
    Ok(FeatureSequence {
        mcep: tgt.denormalize_mcep(&mapped),
        c0: x.c0.clone(),
        f0: convert_f0(&x.f0, src, tgt),
        ap: x.ap.clone(),
        frame_hop: x.frame_hop,
    })
}
