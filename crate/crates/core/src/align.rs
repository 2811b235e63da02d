//! Dynamic time warping with a deterministic backtrace, and target warping
//! onto the source timeline.

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistanceKind {
    #[default]
    SquaredEuclidean,
    Euclidean,
}

impl DistanceKind {
    fn eval<T: Scalar>(self, a: &[T], b: &[T]) -> T {
        let sq: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
        match self {
            DistanceKind::SquaredEuclidean => sq,
            DistanceKind::Euclidean => sq.sqrt(),
        }
    }
}

/// Monotone alignment path of `(source index, target index)` steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WarpPath {
    pub steps: Vec<(usize, usize)>,
}

impl WarpPath {
    pub fn diagonal(n: usize) -> Self {
        WarpPath {
            steps: (0..n).map(|i| (i, i)).collect(),
        }
    }

    /// Checks boundary, monotonicity and unit-step conditions for a
    /// `tx × ty` alignment.
    pub fn validate(&self, tx: usize, ty: usize) -> Result<()> {
        let (first, last) = match (self.steps.first(), self.steps.last()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => return Err(Error::input("empty warp path")),
        };
        if first != (0, 0) {
            return Err(Error::input(format!("path starts at {first:?}, not (0, 0)")));
        }
        if tx == 0 || ty == 0 || last != (tx - 1, ty - 1) {
            return Err(Error::input(format!(
                "path ends at {last:?}, sequences are {tx} x {ty}"
            )));
        }
        for w in self.steps.windows(2) {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
                return Err(Error::input(format!("invalid step {:?} -> {:?}", w[0], w[1])));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment<T> {
    pub path: WarpPath,
    /// Sum of local costs along the path.
    pub cost: T,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DtwOptions {
    pub metric: DistanceKind,
    /// Sakoe–Chiba radius around the rescaled diagonal; `None` disables it.
    pub band: Option<usize>,
}

/// Minimum-cost alignment under the step set {(1,0), (0,1), (1,1)}.
///
/// Ties in the backtrace prefer the diagonal predecessor, then `(i-1, j)`,
/// then `(i, j-1)`.
pub fn dtw<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>, opts: DtwOptions) -> Result<Alignment<T>> {
    let (tx, ty) = (x.rows(), y.rows());
    if tx == 0 || ty == 0 {
        return Err(Error::input("dtw needs at least one frame on each side"));
    }
    if x.cols() != y.cols() {
        return Err(Error::input(format!(
            "dtw dimension mismatch: {} vs {}",
            x.cols(),
            y.cols()
        )));
    }
    let inf = T::infinity();
    let in_band = |i: usize, j: usize| match opts.band {
        None => true,
        Some(r) => {
            // distance from the straight line joining the corners
            let center = if tx > 1 {
                i as f64 * (ty - 1) as f64 / (tx - 1) as f64
            } else {
                0.0
            };
            (j as f64 - center).abs() <= r as f64 + 0.5 || i == tx - 1 && j == ty - 1
        }
    };
    let mut acc = Matrix::filled(tx, ty, inf);
    for i in 0..tx {
        for j in 0..ty {
            if !in_band(i, j) {
                continue;
            }
            let local = opts.metric.eval(x.row(i), y.row(j));
            let best = if i == 0 && j == 0 {
                T::zero()
            } else {
                let d = if i > 0 && j > 0 { acc[(i - 1, j - 1)] } else { inf };
                let u = if i > 0 { acc[(i - 1, j)] } else { inf };
                let l = if j > 0 { acc[(i, j - 1)] } else { inf };
                d.min(u).min(l)
            };
            acc[(i, j)] = local + best;
        }
    }
    let cost = acc[(tx - 1, ty - 1)];
    if !cost.is_finite() {
        return Err(Error::input("band too narrow: no admissible path"));
    }

    let mut steps = vec![(tx - 1, ty - 1)];
    let (mut i, mut j) = (tx - 1, ty - 1);
    while i > 0 || j > 0 {
        let (ni, nj) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let d = acc[(i - 1, j - 1)];
            let u = acc[(i - 1, j)];
            let l = acc[(i, j - 1)];
            if d <= u && d <= l {
                (i - 1, j - 1)
            } else if u <= l {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        i = ni;
        j = nj;
        steps.push((i, j));
    }
    steps.reverse();
    Ok(Alignment {
        path: WarpPath { steps },
        cost,
    })
}

/// Source utterance and the target warped onto its timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPair<T> {
    pub x: FeatureSequence<T>,
    pub y_warped: FeatureSequence<T>,
    pub path: WarpPath,
}

impl<T: Scalar> AlignedPair<T> {
    /// Pair of equal-length sequences already in frame correspondence.
    pub fn synchronous(x: FeatureSequence<T>, y: FeatureSequence<T>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::input(format!(
                "synchronous pair needs equal lengths, got {} and {}",
                x.len(),
                y.len()
            )));
        }
        let path = WarpPath::diagonal(x.len());
        Ok(AlignedPair {
            x,
            y_warped: y,
            path,
        })
    }
}

/// Warps `y` onto `x`'s timeline: source frame `i` takes the target frame of
/// the first path step that visits `i` (the smallest such `j`). All tracks
/// are warped with the same index map.
pub fn warp_target<T: Scalar>(
    x: &FeatureSequence<T>,
    y: &FeatureSequence<T>,
    path: &WarpPath,
) -> Result<AlignedPair<T>> {
    path.validate(x.len(), y.len())?;
    let mut idx = vec![usize::MAX; x.len()];
    for &(i, j) in &path.steps {
        if idx[i] == usize::MAX {
            idx[i] = j;
        }
    }
    Ok(AlignedPair {
        x: x.clone(),
        y_warped: y.select_frames(&idx),
        path: path.clone(),
    })
}

/// Aligns on the given cost features (typically z-scored cepstra) and warps
/// the full target sequence.
pub fn align_pair<T: Scalar>(
    x: &FeatureSequence<T>,
    y: &FeatureSequence<T>,
    x_cost: &Matrix<T>,
    y_cost: &Matrix<T>,
    opts: DtwOptions,
) -> Result<AlignedPair<T>> {
    let al = dtw(x_cost, y_cost, opts)?;
    warp_target(x, y, &al.path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Exhaustive minimum over every monotone unit-step path.
    fn brute_force(x: &Matrix<f64>, y: &Matrix<f64>) -> f64 {
        fn go(x: &Matrix<f64>, y: &Matrix<f64>, i: usize, j: usize) -> f64 {
            let local: f64 = x.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            if i + 1 == x.rows() && j + 1 == y.rows() {
                return local;
            }
            let mut best = f64::INFINITY;
            if i + 1 < x.rows() {
                best = best.min(go(x, y, i + 1, j));
            }
            if j + 1 < y.rows() {
                best = best.min(go(x, y, i, j + 1));
            }
            if i + 1 < x.rows() && j + 1 < y.rows() {
                best = best.min(go(x, y, i + 1, j + 1));
            }
            local + best
        }
        go(x, y, 0, 0)
    }

    fn path_cost(x: &Matrix<f64>, y: &Matrix<f64>, p: &WarpPath) -> f64 {
        p.steps
            .iter()
            .map(|&(i, j)| DistanceKind::SquaredEuclidean.eval(x.row(i), y.row(j)))
            .sum()
    }

    #[test]
    fn identical_sequences_diagonal_zero_cost() {
        let x = Matrix::from_fn(6, 3, |i, j| (i * 3 + j) as f64);
        let al = dtw(&x, &x, DtwOptions::default()).unwrap();
        assert_eq!(al.path, WarpPath::diagonal(6));
        assert_eq!(al.cost, 0.0);
    }

    #[test]
    fn scalar_example() {
        let x = Matrix::from_vec(1, 1, vec![0.0]);
        let y = Matrix::from_vec(3, 1, vec![0.0, 1.0, 2.0]);
        let al = dtw(&x, &y, DtwOptions::default()).unwrap();
        assert_eq!(al.path.steps, vec![(0, 0), (0, 1), (0, 2)]);
        assert_eq!(al.cost, 5.0);
        assert_eq!(brute_force(&x, &y), 5.0);
    }

    #[test]
    fn random_6x3_vs_7x3_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x = Matrix::from_fn(6, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = Matrix::from_fn(7, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let al = dtw(&x, &y, DtwOptions::default()).unwrap();
        assert!((al.cost - brute_force(&x, &y)).abs() < 1e-12);
        assert!((path_cost(&x, &y, &al.path) - al.cost).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let x = Matrix::<f64>::zeros(3, 2);
        let y = Matrix::<f64>::zeros(3, 3);
        assert!(matches!(dtw(&x, &y, DtwOptions::default()), Err(Error::Input(_))));
    }

    #[test]
    fn tie_break_prefers_diagonal() {
        // all-equal frames: every path costs 0, the diagonal must win
        let x = Matrix::<f64>::zeros(4, 1);
        let y = Matrix::<f64>::zeros(4, 1);
        let al = dtw(&x, &y, DtwOptions::default()).unwrap();
        assert_eq!(al.path, WarpPath::diagonal(4));
    }

    #[test]
    fn band_restricts_but_stays_valid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::from_fn(20, 2, |_, _| rng.random::<f64>());
        let y = Matrix::from_fn(25, 2, |_, _| rng.random::<f64>());
        let free = dtw(&x, &y, DtwOptions::default()).unwrap();
        let banded = dtw(&x, &y, DtwOptions { band: Some(2), ..Default::default() }).unwrap();
        banded.path.validate(20, 25).unwrap();
        assert!(banded.cost >= free.cost);
    }

    fn seq(mcep: Matrix<f64>) -> FeatureSequence<f64> {
        let t = mcep.rows();
        let f0 = (0..t).map(|i| 100.0 + i as f64).collect();
        let c0 = (0..t).map(|i| i as f64).collect();
        let ap = (0..t).map(|i| i as f64 / 10.0).collect();
        FeatureSequence::new(mcep, c0, f0, ap, 0.005).unwrap()
    }

    #[test]
    fn warp_diagonal_is_identity() {
        let y = seq(Matrix::from_fn(4, 2, |i, j| (i + j) as f64));
        let x = seq(Matrix::zeros(4, 2));
        let ap = warp_target(&x, &y, &WarpPath::diagonal(4)).unwrap();
        assert_eq!(ap.y_warped, y);
    }

    #[test]
    fn warp_first_visit_rule() {
        let y = seq(Matrix::from_fn(2, 1, |i, _| i as f64 * 10.0));
        let x = seq(Matrix::zeros(3, 1));
        let path = WarpPath { steps: vec![(0, 0), (1, 0), (2, 1)] };
        let ap = warp_target(&x, &y, &path).unwrap();
        assert_eq!(ap.y_warped.mcep.as_slice(), &[0.0, 0.0, 10.0]);
        assert_eq!(ap.y_warped.f0, vec![100.0, 100.0, 101.0]);
        assert_eq!(ap.y_warped.c0, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn warp_self_alignment_has_zero_distance() {
        let x = seq(Matrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64).sin()));
        let al = dtw(&x.mcep, &x.mcep, DtwOptions::default()).unwrap();
        let ap = warp_target(&x, &x, &al.path).unwrap();
        assert_eq!(ap.x.mcep.max_abs_diff(&ap.y_warped.mcep), 0.0);
    }

    #[test]
    fn warp_rejects_inconsistent_path() {
        let x = seq(Matrix::zeros(3, 1));
        let y = seq(Matrix::zeros(2, 1));
        let path = WarpPath { steps: vec![(0, 0), (2, 1)] };
        assert!(warp_target(&x, &y, &path).is_err());
        let path = WarpPath { steps: vec![(0, 0), (1, 1)] };
        assert!(warp_target(&x, &y, &path).is_err());
    }

    fn mat(rows: usize, vals: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(rows, 2, vals[..rows * 2].to_vec())
    }

    proptest! {
        #[test]
        fn dtw_matches_brute_force_and_is_symmetric(
            tx in 1usize..=8, ty in 1usize..=8,
            a in proptest::collection::vec(-3.0f64..3.0, 16),
            b in proptest::collection::vec(-3.0f64..3.0, 16),
        ) {
            let (x, y) = (mat(tx, &a), mat(ty, &b));
            let al = dtw(&x, &y, DtwOptions::default()).unwrap();
            prop_assert!(al.path.validate(tx, ty).is_ok());
            prop_assert!((al.cost - brute_force(&x, &y)).abs() <= 1e-9 * (1.0 + al.cost));
            prop_assert!((al.cost - path_cost(&x, &y, &al.path)).abs() <= 1e-9 * (1.0 + al.cost));
            let back = dtw(&y, &x, DtwOptions::default()).unwrap();
            prop_assert!((al.cost - back.cost).abs() <= 1e-9 * (1.0 + al.cost));
            let ap = warp_target(&FeatureSequence::from_mcep(x.clone(), 0.005),
                                 &FeatureSequence::from_mcep(y, 0.005), &al.path).unwrap();
            prop_assert_eq!(ap.y_warped.len(), tx);
        }
    }
}
