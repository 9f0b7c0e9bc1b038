//! Kernel two-sample statistics between feature sets.
//!
//! All statistics use the Gaussian RBF kernel
//! `k(x, y) = exp(-||x - y||^2 / (2 l^2))` with the length scale `l` either
//! fixed or resolved by the median heuristic: the median of pairwise
//! Euclidean distances, by default over the pooled samples of both sets
//! (self-pairs excluded), optionally over cross-set pairs only.
//!
//! * [`mmd`] is the biased V-statistic estimate of the squared maximum mean
//!   discrepancy, which is non-negative and zero for identical samples.
//! * [`jmmd`] adds the class-conditional MMDs to the marginal one, so label
//!   disagreement shows up even when the marginals align.
//! * [`pad`] is the proxy A-distance `2 (1 - 2 err)` of a held-out RBF
//!   domain classifier, clipped to `[0, 2]`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::linalg;
use crate::{Error, Result};

/// How the RBF length scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthScale {
    /// Median pairwise distance over the pooled samples (default).
    MedianPooled,
    /// Median distance over cross-set pairs only.
    MedianCross,
    /// Explicit value, must be positive.
    Fixed(f64),
}

/// RBF kernel specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub length_scale: LengthScale,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            length_scale: LengthScale::MedianPooled,
        }
    }
}

impl KernelSpec {
    pub fn fixed(l: f64) -> Self {
        KernelSpec {
            length_scale: LengthScale::Fixed(l),
        }
    }

    /// Resolves the concrete length scale for a pair of sample sets.
    pub fn resolve(&self, xs: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>) -> Result<f64> {
        match self.length_scale {
            LengthScale::Fixed(l) => {
                if !(l.is_finite() && l > 0.0) {
                    Err(Error::InvalidConfig(format!(
                        "kernel length scale {l} must be positive"
                    )))
                } else {
                    Ok(l)
                }
            }
            LengthScale::MedianPooled => median_heuristic(xs, xt, MedianMode::Pooled),
            LengthScale::MedianCross => median_heuristic(xs, xt, MedianMode::CrossOnly),
        }
    }
}

/// Pair selection for the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MedianMode {
    /// All pairs of distinct pooled samples.
    Pooled,
    /// Source-target pairs only.
    CrossOnly,
}

fn check_features(xs: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>) -> Result<()> {
    if xs.ncols() != xt.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "feature dimensions differ: {} vs {}",
            xs.ncols(),
            xt.ncols()
        )));
    }
    if xs.nrows() == 0 || xt.nrows() == 0 {
        return Err(Error::MissingData("divergence needs non-empty sample sets".into()));
    }
    Ok(())
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Median pairwise Euclidean distance between samples.
///
/// Self-pairs are excluded; duplicated points still contribute their zero
/// cross-distances. Errors with [`Error::DegenerateScale`] when the median
/// is zero (at least half of all pairs coincide).
pub fn median_heuristic(
    xs: ArrayView2<'_, f64>,
    xt: ArrayView2<'_, f64>,
    mode: MedianMode,
) -> Result<f64> {
    check_features(xs, xt)?;
    let mut d2: Vec<f64> = Vec::new();
    match mode {
        MedianMode::Pooled => {
            let n = xs.nrows() + xt.nrows();
            let row = |i: usize| {
                if i < xs.nrows() {
                    xs.row(i)
                } else {
                    xt.row(i - xs.nrows())
                }
            };
            d2.reserve(n * (n - 1) / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    d2.push(sq_dist(row(i), row(j)));
                }
            }
        }
        MedianMode::CrossOnly => {
            d2.reserve(xs.nrows() * xt.nrows());
            for i in 0..xs.nrows() {
                for j in 0..xt.nrows() {
                    d2.push(sq_dist(xs.row(i), xt.row(j)));
                }
            }
        }
    }
    if d2.is_empty() {
        return Err(Error::MissingData(
            "median heuristic needs at least one pair of distinct samples".into(),
        ));
    }
    let n = d2.len();
    let median_sq = if n % 2 == 1 {
        let (_, m, _) = d2.select_nth_unstable_by(n / 2, f64::total_cmp);
        *m
    } else {
        let (lo, hi_first, _) = d2.select_nth_unstable_by(n / 2, f64::total_cmp);
        let hi = *hi_first;
        let lo_max = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo_max.sqrt() + hi.sqrt()).powi(2) / 4.0
    };
    let median = median_sq.sqrt();
    if median <= 0.0 {
        return Err(Error::DegenerateScale);
    }
    Ok(median)
}

/// Mean of the RBF gram block between two sample sets.
fn mean_gram(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, l: f64) -> f64 {
    let gamma = 1.0 / (2.0 * l * l);
    let mut sum = 0.0;
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            sum += (-gamma * sq_dist(a.row(i), b.row(j))).exp();
        }
    }
    sum / (a.nrows() as f64 * b.nrows() as f64)
}

/// RBF gram matrix between the rows of `a` and `b`.
pub fn rbf_gram(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, l: f64) -> Array2<f64> {
    let gamma = 1.0 / (2.0 * l * l);
    let mut g = Array2::zeros((a.nrows(), b.nrows()));
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            g[[i, j]] = (-gamma * sq_dist(a.row(i), b.row(j))).exp();
        }
    }
    g
}

/// Biased V-statistic estimate of the squared MMD.
pub fn mmd(xs: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>, kernel: &KernelSpec) -> Result<f64> {
    check_features(xs, xt)?;
    let l = kernel.resolve(xs, xt)?;
    Ok(mmd_with_scale(xs, xt, l))
}

fn mmd_with_scale(xs: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>, l: f64) -> f64 {
    let v = mean_gram(xs, xs, l) + mean_gram(xt, xt, l) - 2.0 * mean_gram(xs, xt, l);
    // The V-statistic is non-negative for a PSD kernel; clamp round-off.
    v.max(0.0)
}

/// Joint MMD: marginal plus class-conditional terms.
///
/// The length scale is resolved once from the marginal inputs and reused for
/// every term. Each class must appear in both domains.
pub fn jmmd(
    xs: ArrayView2<'_, f64>,
    ys: &[usize],
    xt: ArrayView2<'_, f64>,
    yt: &[usize],
    kernel: &KernelSpec,
) -> Result<f64> {
    check_features(xs, xt)?;
    if ys.len() != xs.nrows() || yt.len() != xt.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "label counts ({}, {}) do not match sample counts ({}, {})",
            ys.len(),
            yt.len(),
            xs.nrows(),
            xt.nrows()
        )));
    }
    let l = kernel.resolve(xs, xt)?;
    let mut total = mmd_with_scale(xs, xt, l);
    let mut classes: Vec<usize> = ys.iter().chain(yt.iter()).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    for &c in &classes {
        let s_rows = select_rows(xs, ys, c);
        let t_rows = select_rows(xt, yt, c);
        if s_rows.nrows() == 0 {
            return Err(Error::MissingClass {
                class: c,
                context: "source domain".into(),
            });
        }
        if t_rows.nrows() == 0 {
            return Err(Error::MissingClass {
                class: c,
                context: "target domain".into(),
            });
        }
        total += mmd_with_scale(s_rows.view(), t_rows.view(), l);
    }
    Ok(total)
}

fn select_rows(x: ArrayView2<'_, f64>, y: &[usize], class: usize) -> Array2<f64> {
    let idx: Vec<usize> = y
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| (c == class).then_some(i))
        .collect();
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Proxy A-distance between two sample sets.
///
/// Labels samples by domain, trains an RBF-kernel regularised least-squares
/// classifier (ridge constant 1.0) on a stratified `split` fraction of each
/// domain, and evaluates the 0-1 error `err` on the remainder. Returns
/// `2 (1 - 2 err)` clipped to `[0, 2]`: 0 when domains are
/// indistinguishable, 2 when perfectly separable.
pub fn pad(xs: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>, split: f64, seed: u64) -> Result<f64> {
    check_features(xs, xt)?;
    if !(0.0 < split && split < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "PAD split fraction {split} must lie strictly between 0 and 1"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (s_train, s_hold) = stratified_split(xs.nrows(), split, &mut rng)?;
    let (t_train, t_hold) = stratified_split(xt.nrows(), split, &mut rng)?;

    let l = median_heuristic(xs, xt, MedianMode::Pooled)?;
    let n_train = s_train.len() + t_train.len();
    let mut train = Array2::zeros((n_train, xs.ncols()));
    let mut y = Array2::zeros((n_train, 1));
    for (r, &i) in s_train.iter().enumerate() {
        train.row_mut(r).assign(&xs.row(i));
        y[[r, 0]] = -1.0;
    }
    for (r, &i) in t_train.iter().enumerate() {
        train.row_mut(s_train.len() + r).assign(&xt.row(i));
        y[[s_train.len() + r, 0]] = 1.0;
    }
    let mut gram = rbf_gram(train.view(), train.view(), l);
    for i in 0..n_train {
        gram[[i, i]] += 1.0; // ridge regularisation constant
    }
    let beta = linalg::solve_spd(gram.view(), y.view())?;

    let mut errors = 0usize;
    let mut total = 0usize;
    let score = |x: ArrayView1<'_, f64>| -> f64 {
        let mut s = 0.0;
        let gamma = 1.0 / (2.0 * l * l);
        for (r, row) in train.rows().into_iter().enumerate() {
            s += beta[[r, 0]] * (-gamma * sq_dist(x, row)).exp();
        }
        s
    };
    for &i in &s_hold {
        total += 1;
        if score(xs.row(i)) > 0.0 {
            errors += 1;
        }
    }
    for &i in &t_hold {
        total += 1;
        if score(xt.row(i)) <= 0.0 {
            errors += 1;
        }
    }
    let err = errors as f64 / total as f64;
    Ok((2.0 * (1.0 - 2.0 * err)).clamp(0.0, 2.0))
}

fn stratified_split(
    n: usize,
    split: f64,
    rng: &mut ChaCha20Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64) * split).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::MissingData(format!(
            "split fraction leaves an empty partition for {n} samples"
        )));
    }
    let hold = idx.split_off(n_train);
    Ok((idx, hold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn kernel_unit() -> KernelSpec {
        KernelSpec::fixed(1.0)
    }

    #[test]
    fn median_heuristic_on_three_scalars() {
        // Pooled points {0, 1, 3}: distances {1, 3, 2}, median 2.
        let xs = array![[0.0]];
        let xt = array![[1.0], [3.0]];
        let m = median_heuristic(xs.view(), xt.view(), MedianMode::Pooled).unwrap();
        assert_abs_diff_eq!(m, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn median_heuristic_cross_only_ignores_within_pairs() {
        let xs = array![[0.0], [0.1]];
        let xt = array![[10.0], [10.1]];
        let cross = median_heuristic(xs.view(), xt.view(), MedianMode::CrossOnly).unwrap();
        // Cross distances {10, 10.1, 9.9, 10}; median 10.
        assert_abs_diff_eq!(cross, 10.0, epsilon = 1e-9);
        let pooled = median_heuristic(xs.view(), xt.view(), MedianMode::Pooled).unwrap();
        assert!(pooled < cross);
    }

    #[test]
    fn median_heuristic_rejects_identical_points() {
        let xs = array![[2.0], [2.0]];
        let xt = array![[2.0]];
        assert!(matches!(
            median_heuristic(xs.view(), xt.view(), MedianMode::Pooled),
            Err(Error::DegenerateScale)
        ));
    }

    #[test]
    fn mmd_matches_double_loop_oracle_on_fixed_points() {
        let xs = array![[0.0, 0.0], [1.0, 0.0]];
        let xt = array![[0.5, 0.5], [2.0, -1.0]];
        let l = 1.0;
        // Independent exhaustive evaluation of the V-statistic.
        let k = |a: &[f64], b: &[f64]| {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-d2 / (2.0 * l * l)).exp()
        };
        let s: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let t: Vec<Vec<f64>> = vec![vec![0.5, 0.5], vec![2.0, -1.0]];
        let mut kss = 0.0;
        let mut ktt = 0.0;
        let mut kst = 0.0;
        for a in &s {
            for b in &s {
                kss += k(a, b);
            }
        }
        for a in &t {
            for b in &t {
                ktt += k(a, b);
            }
        }
        for a in &s {
            for b in &t {
                kst += k(a, b);
            }
        }
        let oracle = kss / 4.0 + ktt / 4.0 - 2.0 * kst / 4.0;
        let got = mmd(xs.view(), xt.view(), &kernel_unit()).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-14);
    }

    #[test]
    fn mmd_of_identical_sets_is_zero_and_symmetric() {
        let xs = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        let same = mmd(xs.view(), xs.view(), &kernel_unit()).unwrap();
        assert!(same <= 1e-12, "MMD(X, X) = {same}");
        let xt = array![[5.0, 1.0], [1.0, 4.0]];
        let a = mmd(xs.view(), xt.view(), &kernel_unit()).unwrap();
        let b = mmd(xt.view(), xs.view(), &kernel_unit()).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    }

    #[test]
    fn jmmd_equals_sum_of_marginal_and_class_terms() {
        let xs = array![[0.0], [0.2], [3.0], [3.4]];
        let ys = vec![0, 0, 1, 1];
        let xt = array![[0.5], [2.5], [3.1]];
        let yt = vec![0, 1, 1];
        let spec = kernel_unit();
        let got = jmmd(xs.view(), &ys, xt.view(), &yt, &spec).unwrap();

        let marginal = mmd(xs.view(), xt.view(), &spec).unwrap();
        let s0 = array![[0.0], [0.2]];
        let t0 = array![[0.5]];
        let s1 = array![[3.0], [3.4]];
        let t1 = array![[2.5], [3.1]];
        let c0 = mmd(s0.view(), t0.view(), &spec).unwrap();
        let c1 = mmd(s1.view(), t1.view(), &spec).unwrap();
        assert_abs_diff_eq!(got, marginal + c0 + c1, epsilon = 1e-13);
    }

    #[test]
    fn jmmd_detects_label_swap_that_marginal_mmd_misses() {
        let xs = array![[0.0], [0.1], [5.0], [5.1]];
        let ys = vec![0, 0, 1, 1];
        let yt_swapped = vec![1, 1, 0, 0];
        let spec = kernel_unit();
        let aligned = jmmd(xs.view(), &ys, xs.view(), &ys, &spec).unwrap();
        let swapped = jmmd(xs.view(), &ys, xs.view(), &yt_swapped, &spec).unwrap();
        assert!(aligned <= 1e-12);
        assert!(swapped > 0.5, "swapped-label JMMD = {swapped}");
        // Marginal MMD cannot tell the difference.
        let marginal = mmd(xs.view(), xs.view(), &spec).unwrap();
        assert!(marginal <= 1e-12);
    }

    #[test]
    fn jmmd_errors_when_a_class_is_one_sided() {
        let xs = array![[0.0], [1.0]];
        let ys = vec![0, 1];
        let xt = array![[0.5], [0.6]];
        let yt = vec![0, 0];
        match jmmd(xs.view(), &ys, xt.view(), &yt, &kernel_unit()) {
            Err(Error::MissingClass { class: 1, .. }) => {}
            other => panic!("expected missing class, got {other:?}"),
        }
    }

    #[test]
    fn pad_is_small_for_identical_distributions() {
        // 20 seeds over two draws from the same grid-like cloud.
        let n = 40;
        let mut pts = Vec::new();
        for i in 0..n {
            let x = (i % 8) as f64 * 0.7;
            let y = (i / 8) as f64 * 0.9;
            pts.push([x + 0.013 * i as f64, y - 0.007 * i as f64]);
        }
        let xs = Array2::from_shape_vec((n, 2), pts.iter().flat_map(|p| [p[0], p[1]]).collect())
            .unwrap();
        // Interleave to build a second sample of the same cloud.
        let xt = {
            let mut rows = Vec::new();
            for i in 0..n {
                let j = (i * 7 + 3) % n;
                rows.push([pts[j][0] + 0.011, pts[j][1] - 0.009]);
            }
            Array2::from_shape_vec((n, 2), rows.iter().flat_map(|p| [p[0], p[1]]).collect())
                .unwrap()
        };
        for seed in 0..20 {
            let p = pad(xs.view(), xt.view(), 0.7, seed).unwrap();
            assert!((0.0..=2.0).contains(&p));
            assert!(p < 0.3, "seed {seed}: PAD {p} should be near zero");
        }
    }

    #[test]
    fn pad_saturates_for_separated_clusters() {
        let n = 30;
        let xs = Array2::from_shape_fn((n, 2), |(i, j)| 0.01 * i as f64 + 0.02 * j as f64);
        let xt = xs.mapv(|v| v + 50.0);
        let p = pad(xs.view(), xt.view(), 0.7, 7).unwrap();
        assert!(p >= 1.8, "separated clusters give PAD {p}");
    }

    #[test]
    fn pad_rejects_degenerate_split() {
        let xs = array![[0.0], [1.0]];
        let xt = array![[0.5]];
        assert!(pad(xs.view(), xt.view(), 0.7, 0).is_err());
        assert!(pad(xs.view(), xt.view(), 1.2, 0).is_err());
    }

    use ndarray::Array2;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn mmd_is_nonnegative_and_zero_on_self(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 2..12),
            other in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 2..12),
        ) {
            let xs = Array2::from_shape_vec((rows.len(), 3), rows.concat()).unwrap();
            let xt = Array2::from_shape_vec((other.len(), 3), other.concat()).unwrap();
            let spec = KernelSpec::fixed(0.8);
            let v = mmd(xs.view(), xt.view(), &spec).unwrap();
            prop_assert!(v >= 0.0);
            let self_v = mmd(xs.view(), xs.view(), &spec).unwrap();
            prop_assert!(self_v <= 1e-12);
        }
    }
}
