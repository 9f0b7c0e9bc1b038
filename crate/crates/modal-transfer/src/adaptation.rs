//! Domain-adaptation transforms and the transfer classifier.
//!
//! The pipeline pieces here are
//!
//! * normal-condition alignment: per-feature standardisation of each domain
//!   by the mean/std of its own baseline samples, which removes affine
//!   (unit/offset) discrepancies between domains;
//! * a PCA baseline (mean-centred orthogonal projection);
//! * transfer component analysis (TCA): kernelised projection that trades
//!   retained variance against the maximum mean discrepancy between the
//!   projected domains;
//! * balanced distribution adaptation (BDA): iterative extension of TCA that
//!   also aligns class-conditional distributions using pseudo-labels;
//! * a k-nearest-neighbour classifier and the accuracy metric.
//!
//! All fits are deterministic: eigenvector signs are fixed by making each
//! column's largest-magnitude component positive, and nearest-neighbour
//! distance ties go to the lowest training index.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::dataset::LabeledDataset;
use crate::divergence::{rbf_gram, KernelSpec};
use crate::linalg::{gemm, sym_eigh, Trans};
use crate::{Error, Result};

/// Per-feature normal-condition moments of a source/target pair.
///
/// `mu_*_n` and `sigma_*_n` are the mean and population standard deviation
/// of the normal-condition (baseline) rows of each domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentStats {
    pub mu_s_n: Array1<f64>,
    pub sigma_s_n: Array1<f64>,
    pub mu_t_n: Array1<f64>,
    pub sigma_t_n: Array1<f64>,
}

/// Mean and population std (ddof = 0) of the masked rows, per column.
pub(crate) fn masked_moments(
    x: ArrayView2<'_, f64>,
    mask: &[bool],
) -> Result<(Array1<f64>, Array1<f64>)> {
    if mask.len() != x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} entries for {} rows",
            mask.len(),
            x.nrows()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::MissingData(
            "no normal-condition rows to estimate alignment statistics from".into(),
        ));
    }
    let d = x.ncols();
    let mut mean = Array1::zeros(d);
    for (row, _) in x.outer_iter().zip(mask).filter(|(_, &m)| m) {
        mean += &row;
    }
    mean /= count as f64;
    let mut var = Array1::zeros(d);
    for (row, _) in x.outer_iter().zip(mask).filter(|(_, &m)| m) {
        let dev = &row - &mean;
        var += &dev.mapv(|v| v * v);
    }
    var /= count as f64;
    Ok((mean, var.mapv(f64::sqrt)))
}

fn check_positive_sigma(sigma: &Array1<f64>) -> Result<()> {
    for (index, &s) in sigma.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegenerateFeature { index });
        }
    }
    Ok(())
}

fn standardize(x: ArrayView2<'_, f64>, mean: &Array1<f64>, sigma: &Array1<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        row -= mean;
        row /= sigma;
    }
    out
}

impl AlignmentStats {
    /// Estimates moments from the normal-condition rows of each domain.
    pub fn fit(
        xs: ArrayView2<'_, f64>,
        normal_s: &[bool],
        xt: ArrayView2<'_, f64>,
        normal_t: &[bool],
    ) -> Result<Self> {
        if xs.ncols() != xt.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "source has {} features, target has {}",
                xs.ncols(),
                xt.ncols()
            )));
        }
        let (mu_s_n, sigma_s_n) = masked_moments(xs, normal_s)?;
        let (mu_t_n, sigma_t_n) = masked_moments(xt, normal_t)?;
        check_positive_sigma(&sigma_s_n)?;
        check_positive_sigma(&sigma_t_n)?;
        Ok(AlignmentStats {
            mu_s_n,
            sigma_s_n,
            mu_t_n,
            sigma_t_n,
        })
    }

    /// Standardises source-domain rows by the source normal-condition stats.
    pub fn standardize_source(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        standardize(x, &self.mu_s_n, &self.sigma_s_n)
    }

    /// Standardises target-domain rows by the target normal-condition stats.
    pub fn standardize_target(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        standardize(x, &self.mu_t_n, &self.sigma_t_n)
    }

    /// Maps target-domain rows into raw source units:
    /// `z = (x - mu_t_n) / sigma_t_n * sigma_s_n + mu_s_n`.
    pub fn map_target_to_source_units(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = self.standardize_target(x);
        for mut row in out.rows_mut() {
            row *= &self.sigma_s_n;
            row += &self.mu_s_n;
        }
        out
    }
}

/// Normal-condition alignment of a source/target pair.
///
/// Both domains are standardised by their own baseline moments, so after the
/// transform the target baseline has the same per-feature mean and spread as
/// the source baseline (zero and one). This is equivalent to mapping the
/// target into source units and then standardising everything by the source
/// baseline stats.
pub fn nca(
    source: &LabeledDataset,
    target: &LabeledDataset,
) -> Result<(LabeledDataset, LabeledDataset, AlignmentStats)> {
    let stats = AlignmentStats::fit(
        source.features.view(),
        &source.normal_mask(),
        target.features.view(),
        &target.normal_mask(),
    )?;
    let mut s = source.clone();
    s.features = stats.standardize_source(source.features.view());
    let mut t = target.clone();
    t.features = stats.standardize_target(target.features.view());
    Ok((s, t, stats))
}

/// Which algorithm produced a [`LatentMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMethod {
    Pca,
    Tca,
    Bda,
}

/// A fitted projection onto a low-dimensional latent space.
///
/// PCA maps are linear (`(x - center) * basis`); TCA/BDA maps are kernelised
/// (`k(x, reference) * basis` with an RBF kernel at the stored length scale).
#[derive(Debug, Clone)]
pub struct LatentMap {
    pub method: LatentMethod,
    basis: Array2<f64>,
    center: Option<Array1<f64>>,
    reference: Option<Array2<f64>>,
    length_scale: Option<f64>,
    pub latent_dim: usize,
    pub mu: Option<f64>,
}

impl LatentMap {
    /// Number of input features the map expects.
    pub fn input_dim(&self) -> usize {
        match &self.reference {
            Some(r) => r.ncols(),
            None => self.basis.nrows(),
        }
    }

    /// The projection coefficients (features x D for PCA, reference rows x D
    /// for kernel maps).
    pub fn basis(&self) -> ArrayView2<'_, f64> {
        self.basis.view()
    }

    /// Resolved RBF length scale, for kernel maps.
    pub fn length_scale(&self) -> Option<f64> {
        self.length_scale
    }

    /// Embeds rows of `x` into the latent space.
    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "map expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        match (&self.reference, &self.center, self.length_scale) {
            (Some(reference), None, Some(l)) => {
                let k = rbf_gram(x, reference.view(), l);
                gemm(k.view(), Trans::No, self.basis.view(), Trans::No)
            }
            (None, Some(center), None) => {
                let centered = {
                    let mut c = x.to_owned();
                    for mut row in c.rows_mut() {
                        row -= center;
                    }
                    c
                };
                gemm(centered.view(), Trans::No, self.basis.view(), Trans::No)
            }
            _ => Err(Error::InvalidConfig("malformed latent map".into())),
        }
    }

    /// Lifts latent rows back to the input space (PCA maps only).
    pub fn reconstruct(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let center = match (&self.center, self.method) {
            (Some(c), LatentMethod::Pca) => c,
            _ => {
                return Err(Error::InvalidConfig(
                    "reconstruction is only defined for PCA maps".into(),
                ))
            }
        };
        if z.ncols() != self.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "map produces {} latent features, got {}",
                self.latent_dim,
                z.ncols()
            )));
        }
        let mut out = gemm(z, Trans::No, self.basis.view(), Trans::Yes)?;
        for mut row in out.rows_mut() {
            row += center;
        }
        Ok(out)
    }
}

/// Makes each column's largest-magnitude entry positive, so eigenvector
/// orientation is deterministic.
fn fix_column_signs(w: &mut Array2<f64>) {
    for mut col in w.columns_mut() {
        let mut best = 0usize;
        let mut best_mag = f64::NEG_INFINITY;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best_mag {
                best_mag = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

/// Requested PCA dimensionality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcaDims {
    /// Keep the smallest number of components whose variance sum reaches
    /// this fraction of the total.
    VarianceFraction(f64),
    /// Keep exactly this many components.
    Components(usize),
}

impl Default for PcaDims {
    fn default() -> Self {
        PcaDims::VarianceFraction(0.9)
    }
}

/// Fits a mean-centred PCA projection on `train`.
pub fn pca_fit(train: ArrayView2<'_, f64>, dims: PcaDims) -> Result<LatentMap> {
    let (n, d) = (train.nrows(), train.ncols());
    if n == 0 || d == 0 {
        return Err(Error::MissingData("PCA needs a non-empty matrix".into()));
    }
    let mean = train.mean_axis(Axis(0)).expect("n > 0");
    let centered = {
        let mut c = train.to_owned();
        for mut row in c.rows_mut() {
            row -= &mean;
        }
        c
    };
    let mut cov = gemm(centered.view(), Trans::Yes, centered.view(), Trans::No)?;
    cov /= n as f64;
    let (vals, vecs) = sym_eigh(cov.view())?;
    let total: f64 = vals.iter().map(|&v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateScale);
    }
    let tol = total * 1e-12;
    let rank = vals.iter().filter(|&&v| v > tol).count();
    let keep = match dims {
        PcaDims::Components(k) => {
            if k == 0 {
                return Err(Error::InvalidConfig("PCA needs at least 1 component".into()));
            }
            if k > rank {
                return Err(Error::RankError {
                    requested: k,
                    available: rank,
                });
            }
            k
        }
        PcaDims::VarianceFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "variance fraction {f} must lie in (0, 1]"
                )));
            }
            let mut acc = 0.0;
            let mut keep = rank;
            for k in 1..=rank {
                acc += vals[d - k].max(0.0);
                if acc >= f * total {
                    keep = k;
                    break;
                }
            }
            keep
        }
    };
    let mut basis = Array2::zeros((d, keep));
    for k in 0..keep {
        basis.column_mut(k).assign(&vecs.column(d - 1 - k));
    }
    fix_column_signs(&mut basis);
    Ok(LatentMap {
        method: LatentMethod::Pca,
        basis,
        center: Some(mean),
        reference: None,
        length_scale: None,
        latent_dim: keep,
        mu: None,
    })
}

/// Projects rows of `x` with a fitted PCA map.
pub fn pca_apply(map: &LatentMap, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if map.method != LatentMethod::Pca {
        return Err(Error::InvalidConfig(
            "pca_apply called with a non-PCA map".into(),
        ));
    }
    map.transform(x)
}

/// Pooled kernel quantities shared by TCA and BDA.
struct KernelCore {
    /// Pooled training rows (source stacked over target).
    reference: Array2<f64>,
    /// Resolved RBF length scale.
    length_scale: f64,
    /// Pooled Gram matrix K.
    k: Array2<f64>,
    /// Centred scatter K H K (H the centring matrix).
    a: Array2<f64>,
    n_source: usize,
}

impl KernelCore {
    fn build(xs: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>, kernel: &KernelSpec) -> Result<Self> {
        if xs.ncols() != xt.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "source has {} features, target has {}",
                xs.ncols(),
                xt.ncols()
            )));
        }
        if xs.nrows() == 0 || xt.nrows() == 0 {
            return Err(Error::MissingData("both domains need samples".into()));
        }
        let length_scale = kernel.resolve(xs, xt)?;
        let n = xs.nrows() + xt.nrows();
        let mut reference = Array2::zeros((n, xs.ncols()));
        reference.slice_mut(ndarray::s![..xs.nrows(), ..]).assign(&xs);
        reference.slice_mut(ndarray::s![xs.nrows().., ..]).assign(&xt);
        let k = rbf_gram(reference.view(), reference.view(), length_scale);
        let q = k.sum_axis(Axis(1));
        let mut a = gemm(k.view(), Trans::No, k.view(), Trans::No)?;
        let scale = 1.0 / n as f64;
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] -= q[i] * q[j] * scale;
            }
        }
        // Kill round-off asymmetry before the symmetric eigensolver sees it.
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (a[[i, j]] + a[[j, i]]);
                a[[i, j]] = m;
                a[[j, i]] = m;
            }
        }
        Ok(KernelCore {
            reference,
            length_scale,
            k,
            a,
            n_source: xs.nrows(),
        })
    }

    fn n(&self) -> usize {
        self.k.nrows()
    }

    /// The domain-discrepancy coefficient vector: +1/n_s on source rows,
    /// -1/n_t on target rows.
    fn marginal_vector(&self) -> Array1<f64> {
        let n = self.n();
        let ns = self.n_source as f64;
        let nt = (n - self.n_source) as f64;
        Array1::from_shape_fn(n, |i| if i < self.n_source { 1.0 / ns } else { -1.0 / nt })
    }
}

/// Solves for the D leading generalized eigenvectors of (A, B) where
/// B = mu I + P P^T, returned B-orthonormal. `p` may have zero columns
/// (then B = mu I).
fn top_generalized_eigvecs(
    a: &Array2<f64>,
    p: &Array2<f64>,
    mu: f64,
    dims: usize,
) -> Result<Array2<f64>> {
    let n = a.nrows();
    // Orthonormalise the low-rank part: P = U diag(s) V^T, keeping s > 0.
    let (u, coef) = {
        let r = p.ncols();
        if r == 0 {
            (Array2::zeros((n, 0)), Array1::zeros(0))
        } else {
            let s_small = gemm(p.view(), Trans::Yes, p.view(), Trans::No)?;
            let (vals, vecs) = sym_eigh(s_small.view())?;
            let max = vals.iter().cloned().fold(0.0f64, f64::max);
            let kept: Vec<usize> = (0..r).filter(|&j| vals[j] > max * 1e-12 && vals[j] > 0.0).collect();
            let mut u = Array2::zeros((n, kept.len()));
            let mut coef = Array1::zeros(kept.len());
            for (col, &j) in kept.iter().enumerate() {
                let s = vals[j].sqrt();
                let pv = gemm(p.view(), Trans::No, vecs.column(j).insert_axis(ndarray::Axis(1)), Trans::No)?;
                let mut ucol = u.column_mut(col);
                ucol.assign(&pv.column(0));
                ucol /= s;
                // B^{-1/2} = mu^{-1/2} (I + U diag(coef) U^T)
                coef[col] = (mu / (mu + vals[j])).sqrt() - 1.0;
            }
            (u, coef)
        }
    };
    let r = u.ncols();

    // C = B^{-1/2} A B^{-1/2}, assembled through the rank-r correction.
    let mut c = a.clone();
    if r > 0 {
        let g = gemm(a.view(), Trans::No, u.view(), Trans::No)?; // A U, n x r
        let t = gemm(u.view(), Trans::Yes, g.view(), Trans::No)?; // U^T A U, r x r
        let mut ud = u.clone();
        for (mut col, &dcoef) in ud.columns_mut().into_iter().zip(coef.iter()) {
            col *= dcoef;
        }
        let term1 = gemm(ud.view(), Trans::No, g.view(), Trans::Yes)?; // U D G^T
        let mut mid = t.clone();
        for i in 0..r {
            for j in 0..r {
                mid[[i, j]] *= coef[i] * coef[j];
            }
        }
        let term3 = gemm(gemm(u.view(), Trans::No, mid.view(), Trans::No)?.view(), Trans::No, u.view(), Trans::Yes)?;
        for i in 0..n {
            for j in 0..n {
                c[[i, j]] += term1[[i, j]] + term1[[j, i]] + term3[[i, j]];
            }
        }
    }
    c /= mu;
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (c[[i, j]] + c[[j, i]]);
            c[[i, j]] = m;
            c[[j, i]] = m;
        }
    }

    let (_vals, vecs) = sym_eigh(c.view())?;
    let mut v_top = Array2::zeros((n, dims));
    for k in 0..dims {
        v_top.column_mut(k).assign(&vecs.column(n - 1 - k));
    }
    // W = B^{-1/2} V_top.
    let mut w = v_top.clone();
    if r > 0 {
        let h = gemm(u.view(), Trans::Yes, v_top.view(), Trans::No)?; // r x dims
        let mut dh = h;
        for (mut row, &dcoef) in dh.rows_mut().into_iter().zip(coef.iter()) {
            row *= dcoef;
        }
        w += &gemm(u.view(), Trans::No, dh.view(), Trans::No)?;
    }
    w /= mu.sqrt();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "latent projection is not finite; the system is ill-conditioned, increase mu".into(),
        ));
    }
    fix_column_signs(&mut w);
    Ok(w)
}

fn check_latent_request(n: usize, dims: usize, mu: f64) -> Result<()> {
    if dims == 0 {
        return Err(Error::InvalidConfig("latent dimension must be >= 1".into()));
    }
    if n < dims + 1 {
        return Err(Error::RankError {
            requested: dims,
            available: n.saturating_sub(1),
        });
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "regularization weight mu = {mu} must be positive"
        )));
    }
    Ok(())
}

/// Transfer component analysis.
///
/// Finds a kernelised projection that keeps pooled variance while shrinking
/// the (empirical) maximum mean discrepancy between the projected domains,
/// then embeds both inputs. Returns `(Z_s, Z_t, map)`.
pub fn tca(
    xs: ArrayView2<'_, f64>,
    xt: ArrayView2<'_, f64>,
    dims: usize,
    mu: f64,
    kernel: &KernelSpec,
) -> Result<(Array2<f64>, Array2<f64>, LatentMap)> {
    check_latent_request(xs.nrows() + xt.nrows(), dims, mu)?;
    let core = KernelCore::build(xs, xt, kernel)?;
    let v = core.marginal_vector();
    let p = gemm(
        core.k.view(),
        Trans::No,
        v.view().insert_axis(Axis(1)),
        Trans::No,
    )?;
    let w = top_generalized_eigvecs(&core.a, &p, mu, dims)?;
    let z = gemm(core.k.view(), Trans::No, w.view(), Trans::No)?;
    let zs = z.slice(ndarray::s![..core.n_source, ..]).to_owned();
    let zt = z.slice(ndarray::s![core.n_source.., ..]).to_owned();
    let map = LatentMap {
        method: LatentMethod::Tca,
        basis: w,
        center: None,
        reference: Some(core.reference),
        length_scale: Some(core.length_scale),
        latent_dim: dims,
        mu: Some(mu),
    };
    Ok((zs, zt, map))
}

/// Options for [`bda`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdaOptions {
    /// Pseudo-label refinement rounds.
    pub iterations: usize,
    /// Weight of the class-conditional terms against the marginal term;
    /// 1.0 drops the marginal term entirely.
    pub balance: f64,
}

impl Default for BdaOptions {
    fn default() -> Self {
        BdaOptions {
            iterations: 10,
            balance: 1.0,
        }
    }
}

/// Balanced distribution adaptation.
///
/// Iterates: solve the projection with the current discrepancy terms, embed,
/// fit 1-NN on the embedded source, pseudo-label the target, rebuild the
/// class-conditional discrepancy terms, re-solve. The first round has no
/// pseudo-labels, so with `balance = 1.0` it reduces to a kernel-PCA-style
/// projection. Returns `(Z_s, Z_t, map, pseudo_labels)` from the final round.
pub fn bda(
    xs: ArrayView2<'_, f64>,
    ys: &[usize],
    xt: ArrayView2<'_, f64>,
    dims: usize,
    mu: f64,
    kernel: &KernelSpec,
    opts: &BdaOptions,
) -> Result<(Array2<f64>, Array2<f64>, LatentMap, Vec<usize>)> {
    if ys.len() != xs.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} source labels for {} source rows",
            ys.len(),
            xs.nrows()
        )));
    }
    if opts.iterations == 0 {
        return Err(Error::InvalidConfig("BDA needs at least 1 iteration".into()));
    }
    if !(0.0..=1.0).contains(&opts.balance) {
        return Err(Error::InvalidConfig(format!(
            "balance {} must lie in [0, 1]",
            opts.balance
        )));
    }
    check_latent_request(xs.nrows() + xt.nrows(), dims, mu)?;
    let core = KernelCore::build(xs, xt, kernel)?;
    let n = core.n();
    let ns = core.n_source;
    let nt = n - ns;
    let classes = {
        let mut c = ys.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };

    let mut pseudo: Option<Vec<usize>> = None;
    let mut w = Array2::zeros((n, dims));
    for _round in 0..opts.iterations {
        let mut cols: Vec<Array1<f64>> = Vec::new();
        let marginal_weight = 1.0 - opts.balance;
        if marginal_weight > 0.0 {
            let mut col = core.marginal_vector();
            col *= marginal_weight.sqrt();
            cols.push(col);
        }
        if let Some(labels) = &pseudo {
            for &c in &classes {
                let n_sc = ys.iter().filter(|&&y| y == c).count();
                let n_tc = labels.iter().filter(|&&y| y == c).count();
                if n_tc == 0 {
                    log::warn!("BDA: class {c} has no pseudo-labelled target points this round; term skipped");
                    continue;
                }
                let mut v = Array1::zeros(n);
                for (i, &y) in ys.iter().enumerate() {
                    if y == c {
                        v[i] = 1.0 / n_sc as f64;
                    }
                }
                for (j, &y) in labels.iter().enumerate() {
                    if y == c {
                        v[ns + j] = -1.0 / n_tc as f64;
                    }
                }
                v *= opts.balance.sqrt();
                cols.push(v);
            }
        }
        // P's columns are K v for each weighted coefficient vector v, so
        // that K M K = P P^T.
        let mut p = Array2::zeros((n, cols.len()));
        for (j, v) in cols.iter().enumerate() {
            let kv = gemm(
                core.k.view(),
                Trans::No,
                v.view().insert_axis(Axis(1)),
                Trans::No,
            )?;
            p.column_mut(j).assign(&kv.column(0));
        }
        w = top_generalized_eigvecs(&core.a, &p, mu, dims)?;
        let z = gemm(core.k.view(), Trans::No, w.view(), Trans::No)?;
        let zs = z.slice(ndarray::s![..ns, ..]);
        let zt = z.slice(ndarray::s![ns.., ..]);
        pseudo = Some(knn_predict(zs, ys, zt, 1)?);
    }

    let z = gemm(core.k.view(), Trans::No, w.view(), Trans::No)?;
    let zs = z.slice(ndarray::s![..ns, ..]).to_owned();
    let zt = z.slice(ndarray::s![ns.., ..]).to_owned();
    let map = LatentMap {
        method: LatentMethod::Bda,
        basis: w,
        center: None,
        reference: Some(core.reference),
        length_scale: Some(core.length_scale),
        latent_dim: dims,
        mu: Some(mu),
    };
    let labels = pseudo.expect("iterations >= 1");
    debug_assert_eq!(labels.len(), nt);
    Ok((zs, zt, map, labels))
}

/// k-nearest-neighbour classification with Euclidean distances.
///
/// Distance ties go to the lowest training index; for k > 1 the majority
/// label wins, with vote ties going to the smallest label.
pub fn knn_predict(
    train_x: ArrayView2<'_, f64>,
    train_y: &[usize],
    test_x: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Vec<usize>> {
    let n = train_x.nrows();
    if n == 0 {
        return Err(Error::MissingData("empty training set".into()));
    }
    if train_y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} training rows",
            train_y.len()
        )));
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "training rows have {} features, test rows have {}",
            train_x.ncols(),
            test_x.ncols()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!(
            "k = {k} must lie in 1..={n}"
        )));
    }
    let mut out = Vec::with_capacity(test_x.nrows());
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n);
    for test_row in test_x.outer_iter() {
        dists.clear();
        for (i, train_row) in train_x.outer_iter().enumerate() {
            let d2 = train_row
                .iter()
                .zip(test_row.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            dists.push((d2, i));
        }
        if k == 1 {
            let (_, idx) = dists
                .iter()
                .copied()
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .expect("n >= 1");
            out.push(train_y[idx]);
        } else {
            dists.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes: std::collections::BTreeMap<usize, usize> = Default::default();
            for &(_, idx) in dists.iter().take(k) {
                *votes.entry(train_y[idx]).or_insert(0) += 1;
            }
            let (&label, _) = votes
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .expect("k >= 1");
            out.push(label);
        }
    }
    Ok(out)
}

/// Fraction of predictions matching the truth.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::MissingData("accuracy of an empty label set".into()));
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / pred.len() as f64)
}
