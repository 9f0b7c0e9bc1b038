//! Transfer-aware feature selection.
//!
//! Scores feature subsets by a trade-off between discriminative power on the
//! source domain and physical correspondence between the domains:
//!
//! ```text
//! objective(v_s) = -(cross-validated source 1-NN error on v_s)
//!                  + lambda * mean MAC over the induced mode pairs
//! ```
//!
//! Each selected source index is paired with the target mode of highest MAC
//! (ties to the lowest index). Candidates whose induced target indices
//! collide are infeasible and excluded, which is what stops the search from
//! pairing several source features with one target feature. The search is
//! exhaustive over all size-D subsets, so results are exactly reproducible;
//! hyperparameters are picked by summing target loss over a set of labelled
//! validation tasks.
//!
//! Features may be grouped (for example a window of spectral-magnitude bins
//! per mode), in which case selection operates on whole groups and the MAC
//! term uses one mode per group.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ops::Range;

use itertools::Itertools;
use ndarray::{Array2, ArrayView2};

use crate::adaptation::{knn_predict, masked_moments};
use crate::dataset::{take_columns, take_rows, TransferTask};
use crate::modal::{mac_discrepancy, mac_matrix, pair_modes, ModePairing};
use crate::{Error, Result};

/// Maps group indices (one group per mode) to feature-column ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGroups {
    ranges: Vec<Range<usize>>,
}

impl FeatureGroups {
    /// One group per feature column: group i covers column i.
    pub fn identity(n_features: usize) -> Self {
        FeatureGroups {
            ranges: (0..n_features).map(|i| i..i + 1).collect(),
        }
    }

    /// Equal-width contiguous windows: group i covers columns
    /// `i*width .. (i+1)*width`.
    pub fn windows(n_groups: usize, width: usize) -> Self {
        FeatureGroups {
            ranges: (0..n_groups).map(|i| i * width..(i + 1) * width).collect(),
        }
    }

    /// Explicit ranges; they must be non-empty and strictly ordered without
    /// overlap.
    pub fn new(ranges: Vec<Range<usize>>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::InvalidConfig("no feature groups".into()));
        }
        let mut end = 0usize;
        for (i, r) in ranges.iter().enumerate() {
            if r.start >= r.end {
                return Err(Error::InvalidConfig(format!("feature group {i} is empty")));
            }
            if r.start < end {
                return Err(Error::InvalidConfig(format!(
                    "feature group {i} overlaps or is out of order"
                )));
            }
            end = r.end;
        }
        Ok(FeatureGroups { ranges })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Total feature-column count covered (end of the last group).
    pub fn total_features(&self) -> usize {
        self.ranges.last().map(|r| r.end).unwrap_or(0)
    }

    /// Expands group indices into feature columns, preserving the given
    /// group order.
    pub fn columns_for(&self, groups: &[usize]) -> Result<Vec<usize>> {
        let mut cols = Vec::new();
        for &g in groups {
            let r = self.ranges.get(g).ok_or(Error::RankError {
                requested: g,
                available: self.ranges.len(),
            })?;
            cols.extend(r.clone());
        }
        Ok(cols)
    }
}

/// Configuration of the subset search.
#[derive(Debug, Clone)]
pub struct TfcConfig {
    /// Number of groups to select (D).
    pub subset_size: usize,
    /// Weight of the modal-similarity term.
    pub lambda: f64,
    /// Folds of the cross-validated source 1-NN loss; values of at least
    /// the training-row count give leave-one-out.
    pub folds: usize,
    /// Feature grouping; `None` treats each column as its own group.
    pub groups: Option<FeatureGroups>,
    /// Upper bound on the number of enumerated candidates.
    pub max_candidates: u64,
}

impl TfcConfig {
    pub fn new(subset_size: usize, lambda: f64) -> Self {
        TfcConfig {
            subset_size,
            lambda,
            folds: 5,
            groups: None,
            max_candidates: 1_000_000,
        }
    }
}

/// A chosen subset: source group indices, induced target group indices
/// (elementwise pairs), and the score breakdown.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Selection {
    pub v_s: Vec<usize>,
    pub v_t: Vec<usize>,
    pub score: f64,
    pub source_loss: f64,
    pub mac_similarity: f64,
}

impl Selection {
    /// Feature columns of the source domain, in pair order.
    pub fn source_columns(&self, groups: &FeatureGroups) -> Result<Vec<usize>> {
        groups.columns_for(&self.v_s)
    }

    /// Feature columns of the target domain, in pair order.
    pub fn target_columns(&self, groups: &FeatureGroups) -> Result<Vec<usize>> {
        groups.columns_for(&self.v_t)
    }
}

/// Per-task scoring state: the standardized source training block, the MAC
/// matrix, and a cache of per-subset cross-validation losses (so sweeps over
/// lambda or D never recompute a subset's loss).
pub struct TaskScorer {
    groups: FeatureGroups,
    folds: usize,
    train: Array2<f64>,
    train_labels: Vec<usize>,
    fold_of: Vec<usize>,
    mac: Array2<f64>,
    loss_cache: RefCell<BTreeMap<Vec<usize>, f64>>,
}

impl TaskScorer {
    pub fn new(task: &TransferTask, folds: usize, groups: Option<FeatureGroups>) -> Result<Self> {
        let groups = groups.unwrap_or_else(|| FeatureGroups::identity(task.source.n_features()));
        if groups.total_features() != task.source.n_features() {
            return Err(Error::ShapeMismatch(format!(
                "feature groups cover {} columns but the data has {}",
                groups.total_features(),
                task.source.n_features()
            )));
        }
        let mac = mac_matrix(&task.source_modal, &task.target_modal)?;
        if mac.nrows() < groups.len() || mac.ncols() < groups.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature groups need as many source and target modes, found {}x{}",
                groups.len(),
                mac.nrows(),
                mac.ncols()
            )));
        }
        if folds < 2 {
            return Err(Error::InvalidConfig(
                "cross-validation needs at least 2 folds".into(),
            ));
        }

        // Standardize the source by its normal-condition stats, then keep
        // the training rows for loss estimation.
        let (mu, sigma) = masked_moments(task.source.features.view(), &task.source.normal_mask())?;
        for (index, &s) in sigma.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::DegenerateFeature { index });
            }
        }
        let train_idx = task.source.indices_of(crate::dataset::Split::Train);
        if train_idx.len() < folds {
            return Err(Error::InvalidConfig(format!(
                "{} training rows cannot fill {} folds",
                train_idx.len(),
                folds
            )));
        }
        let mut train = take_rows(task.source.features.view(), &train_idx)?;
        for mut row in train.rows_mut() {
            row -= &mu;
            row /= &sigma;
        }
        let train_labels: Vec<usize> = train_idx.iter().map(|&i| task.source.labels[i]).collect();

        // Round-robin stratified folds: the j-th training row of a class
        // goes to fold j mod folds. With folds >= rows this degenerates to
        // leave-one-out.
        let loo = folds >= train_labels.len();
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        let fold_of: Vec<usize> = train_labels
            .iter()
            .enumerate()
            .map(|(row, &class)| {
                if loo {
                    row
                } else {
                    let c = seen.entry(class).or_insert(0);
                    let f = *c % folds;
                    *c += 1;
                    f
                }
            })
            .collect();

        Ok(TaskScorer {
            groups,
            folds: if loo { train_labels.len() } else { folds },
            train,
            train_labels,
            fold_of,
            mac,
            loss_cache: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn groups(&self) -> &FeatureGroups {
        &self.groups
    }

    /// The source-vs-target MAC matrix (row = source mode, column = target
    /// mode).
    pub fn mac_matrix(&self) -> ArrayView2<'_, f64> {
        self.mac.view()
    }

    fn validate_subset(&self, v_s: &[usize]) -> Result<()> {
        if v_s.is_empty() {
            return Err(Error::InvalidConfig("empty feature subset".into()));
        }
        let mut seen = vec![false; self.groups.len()];
        for &g in v_s {
            if g >= self.groups.len() {
                return Err(Error::RankError {
                    requested: g,
                    available: self.groups.len(),
                });
            }
            if seen[g] {
                return Err(Error::InvalidPairing(format!(
                    "source index {g} repeated in the subset"
                )));
            }
            seen[g] = true;
        }
        Ok(())
    }

    /// Cross-validated source 1-NN error on the columns of the given groups
    /// (cached per subset).
    pub fn source_loss(&self, v_s: &[usize]) -> Result<f64> {
        self.validate_subset(v_s)?;
        let key = v_s.to_vec();
        if let Some(&hit) = self.loss_cache.borrow().get(&key) {
            return Ok(hit);
        }
        let cols = self.groups.columns_for(v_s)?;
        let x = take_columns(self.train.view(), &cols)?;
        let n = x.nrows();
        let mut errors = 0usize;
        for fold in 0..self.folds {
            let held: Vec<usize> = (0..n).filter(|&i| self.fold_of[i] == fold).collect();
            if held.is_empty() {
                continue;
            }
            let kept: Vec<usize> = (0..n).filter(|&i| self.fold_of[i] != fold).collect();
            let train_x = take_rows(x.view(), &kept)?;
            let train_y: Vec<usize> = kept.iter().map(|&i| self.train_labels[i]).collect();
            let test_x = take_rows(x.view(), &held)?;
            let pred = knn_predict(train_x.view(), &train_y, test_x.view(), 1)?;
            errors += pred
                .iter()
                .zip(held.iter())
                .filter(|(p, &i)| **p != self.train_labels[i])
                .count();
        }
        let loss = errors as f64 / n as f64;
        self.loss_cache.borrow_mut().insert(key, loss);
        Ok(loss)
    }

    /// Pairs each selected source mode with its best-matching target mode.
    pub fn pairing(&self, v_s: &[usize]) -> Result<ModePairing> {
        self.validate_subset(v_s)?;
        pair_modes(self.mac.view(), v_s)
    }

    /// Mean MAC over explicit pairs.
    pub fn mac_similarity(&self, v_s: &[usize], v_t: &[usize]) -> Result<f64> {
        mac_discrepancy(self.mac.view(), v_s, v_t)
    }

    /// The selection objective for an explicit pairing.
    pub fn objective(&self, v_s: &[usize], v_t: &[usize], lambda: f64) -> Result<f64> {
        if v_s.len() != v_t.len() {
            return Err(Error::InvalidPairing(format!(
                "{} source indices vs {} target indices",
                v_s.len(),
                v_t.len()
            )));
        }
        let mut seen = vec![false; self.mac.ncols()];
        for &j in v_t {
            if j >= seen.len() {
                return Err(Error::InvalidPairing(format!(
                    "target index {j} out of range"
                )));
            }
            if seen[j] {
                return Err(Error::InvalidPairing(format!(
                    "target index {j} induced twice; the candidate is infeasible"
                )));
            }
            seen[j] = true;
        }
        Ok(-self.source_loss(v_s)? + lambda * self.mac_similarity(v_s, v_t)?)
    }
}

/// The selection objective for one explicit candidate pairing.
pub fn tfc_objective(
    task: &TransferTask,
    config: &TfcConfig,
    v_s: &[usize],
    v_t: &[usize],
) -> Result<f64> {
    if config.lambda < 0.0 {
        return Err(Error::InvalidConfig("lambda must be non-negative".into()));
    }
    let scorer = TaskScorer::new(task, config.folds, config.groups.clone())?;
    scorer.objective(v_s, v_t, config.lambda)
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Exhaustive subset selection with a pre-built scorer (lets callers sweep
/// lambda or D while reusing cached subset losses).
pub fn select_features_with(scorer: &TaskScorer, config: &TfcConfig) -> Result<Selection> {
    let d = scorer.groups().len();
    if config.subset_size == 0 || config.subset_size > d {
        return Err(Error::InvalidConfig(format!(
            "subset size {} must lie in 1..={d}",
            config.subset_size
        )));
    }
    if config.lambda < 0.0 {
        return Err(Error::InvalidConfig("lambda must be non-negative".into()));
    }
    let candidates = binomial(d as u64, config.subset_size as u64);
    if candidates > config.max_candidates {
        return Err(Error::InvalidConfig(format!(
            "{candidates} candidate subsets exceed the search budget of {}",
            config.max_candidates
        )));
    }

    let mut best: Option<Selection> = None;
    let mut enumerated = 0usize;
    for v_s in (0..d).combinations(config.subset_size) {
        enumerated += 1;
        let pairing = scorer.pairing(&v_s)?;
        if !pairing.is_injective() {
            continue;
        }
        let loss = scorer.source_loss(&v_s)?;
        let sim = scorer.mac_similarity(&pairing.source, &pairing.target)?;
        let score = -loss + config.lambda * sim;
        // Strictly-greater keeps the first (lexicographically smallest)
        // subset on ties.
        if best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(Selection {
                v_s: pairing.source,
                v_t: pairing.target,
                score,
                source_loss: loss,
                mac_similarity: sim,
            });
        }
    }
    best.ok_or(Error::NoFeasibleSubset {
        candidates: enumerated,
    })
}

/// Exhaustive subset selection for a task.
pub fn select_features(task: &TransferTask, config: &TfcConfig) -> Result<Selection> {
    let scorer = TaskScorer::new(task, config.folds, config.groups.clone())?;
    select_features_with(&scorer, config)
}

/// One grid point: latent/subset dimension and the scalar weight (the
/// selection trade-off lambda, or the regularizer of a kernel method).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Theta {
    pub d: usize,
    pub lambda: f64,
}

/// Hyperparameter grid evaluated over validation tasks.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HyperGrid {
    pub d_values: Vec<usize>,
    pub lambda_values: Vec<f64>,
}

impl HyperGrid {
    fn points(&self) -> Result<Vec<Theta>> {
        if self.d_values.is_empty() || self.lambda_values.is_empty() {
            return Err(Error::InvalidConfig("empty hyperparameter grid".into()));
        }
        let mut ds = self.d_values.clone();
        ds.sort_unstable();
        ds.dedup();
        let mut ls = self.lambda_values.clone();
        ls.sort_by(f64::total_cmp);
        ls.dedup();
        Ok(ds
            .iter()
            .flat_map(|&d| ls.iter().map(move |&lambda| Theta { d, lambda }))
            .collect())
    }
}

/// Target 0-1 loss of one pipeline run on one validation task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLoss {
    pub errors: usize,
    pub total: usize,
}

/// Per-point summed validation loss, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridCell {
    pub d: usize,
    pub lambda: f64,
    pub error_sum: f64,
}

/// Outcome of [`multitask_grid_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchOutcome {
    pub best: Theta,
    pub table: Vec<GridCell>,
}

/// Picks the grid point minimizing the summed target 0-1 loss across the
/// validation tasks. A failing pipeline run is logged and penalized with
/// the worst-case loss (every target sample wrong). Ties go to the smaller
/// dimension, then the smaller weight.
pub fn multitask_grid_search<E>(
    grid: &HyperGrid,
    tasks: &[TransferTask],
    mut eval: E,
) -> Result<GridSearchOutcome>
where
    E: FnMut(&TransferTask, Theta) -> Result<GridLoss>,
{
    if tasks.is_empty() {
        return Err(Error::MissingData("no validation tasks".into()));
    }
    let points = grid.points()?;
    let mut table = Vec::with_capacity(points.len());
    let mut best: Option<(Theta, f64)> = None;
    for theta in points {
        let mut error_sum = 0.0;
        for task in tasks {
            match eval(task, theta) {
                Ok(loss) => error_sum += loss.errors as f64,
                Err(e) => {
                    let worst = task.target.n_samples();
                    log::warn!(
                        "validation task {} failed at D={}, weight={}: {e}; penalized with {worst} errors",
                        task.id,
                        theta.d,
                        theta.lambda
                    );
                    error_sum += worst as f64;
                }
            }
        }
        table.push(GridCell {
            d: theta.d,
            lambda: theta.lambda,
            error_sum,
        });
        // The grid is enumerated in (D asc, lambda asc) order, so a strict
        // improvement test realizes the documented tie-break.
        if best.as_ref().map_or(true, |(_, b)| error_sum < *b) {
            best = Some((theta, error_sum));
        }
    }
    Ok(GridSearchOutcome {
        best: best.expect("non-empty grid").0,
        table,
    })
}
