//! End-to-end study orchestration.
//!
//! Runs every configured method on every transfer task of a generated
//! population, selects hyperparameters on a held-out validation block,
//! correlates modal similarity and divergence measures with transfer
//! accuracy, and emits a deterministic report plus flat CSV artifacts.
//! Also hosts the FRF ingestion path: peak-windowed feature extraction
//! turns measured frequency-response magnitudes into labeled datasets that
//! run through the same task pipeline, including leave-one-out evaluation
//! for small datasets.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write as IoWrite};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    accuracy, bda, knn_predict, nca, pca_fit, tca, BdaOptions, PcaDims,
};
use crate::dataset::{take_columns, take_rows, LabeledDataset, Split, TransferTask};
use crate::divergence::{jmmd, mmd, pad, KernelSpec};
use crate::modal::{mac_discrepancy, mac_matrix, pair_modes};
use crate::population::{build_tasks, generate_population, PopulationConfig, Structure};
use crate::spectral::{assemble_matrices, undamped_modes, ModalModel, StructureSpec};
use crate::tfc::{
    multitask_grid_search, select_features_with, FeatureGroups, GridCell, GridLoss, HyperGrid,
    Selection, TaskScorer, TfcConfig, Theta,
};
use crate::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// The compared pipelines. Everything except the raw baseline starts with
/// normal-condition alignment; the TFC composites run subset selection
/// first, then alignment, then the latent step at dimension D - 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "noDA")]
    NoDa,
    #[serde(rename = "NCA")]
    Nca,
    #[serde(rename = "PCA")]
    Pca,
    #[serde(rename = "TCA")]
    Tca,
    #[serde(rename = "BDA")]
    Bda,
    #[serde(rename = "TFC")]
    Tfc,
    #[serde(rename = "TFC+TCA")]
    TfcTca,
    #[serde(rename = "TFC+BDA")]
    TfcBda,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::NoDa,
        Method::Nca,
        Method::Pca,
        Method::Tca,
        Method::Bda,
        Method::Tfc,
        Method::TfcTca,
        Method::TfcBda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NoDa => "noDA",
            Method::Nca => "NCA",
            Method::Pca => "PCA",
            Method::Tca => "TCA",
            Method::Bda => "BDA",
            Method::Tfc => "TFC",
            Method::TfcTca => "TFC+TCA",
            Method::TfcBda => "TFC+BDA",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown method {name:?}; expected one of {}",
                    Method::ALL.map(Method::name).join(", ")
                ))
            })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        Method::parse(s)
    }
}

/// Hyperparameters chosen for the tunable methods: (D, lambda) for the
/// subset selection and (latent dimension, mu) for each kernel method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedHyper {
    pub tfc: Theta,
    pub tca: Theta,
    pub bda: Theta,
}

impl Default for SelectedHyper {
    fn default() -> Self {
        SelectedHyper {
            tfc: Theta { d: 6, lambda: 0.1 },
            tca: Theta { d: 5, lambda: 0.1 },
            bda: Theta { d: 5, lambda: 0.1 },
        }
    }
}

/// One method with its hyperparameters resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    /// Subset size and trade-off weight for the TFC family; latent
    /// dimension and mu for TCA/BDA; unused by noDA/NCA, and an optional
    /// fixed component count for PCA (default: 90% retained variance).
    pub theta: Option<Theta>,
    /// Regularizer mu of the latent step of TFC+TCA / TFC+BDA.
    pub latent_mu: Option<f64>,
}

impl MethodSpec {
    pub fn resolve(method: Method, hyper: &SelectedHyper) -> MethodSpec {
        let (theta, latent_mu) = match method {
            Method::NoDa | Method::Nca | Method::Pca => (None, None),
            Method::Tca => (Some(hyper.tca), None),
            Method::Bda => (Some(hyper.bda), None),
            Method::Tfc => (Some(hyper.tfc), None),
            Method::TfcTca => (Some(hyper.tfc), Some(hyper.tca.lambda)),
            Method::TfcBda => (Some(hyper.tfc), Some(hyper.bda.lambda)),
        };
        MethodSpec {
            method,
            theta,
            latent_mu,
        }
    }
}

/// How a task evaluation runs.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Cross-validation folds of the subset-selection source loss; values
    /// at or above the training-row count give leave-one-out.
    pub folds: usize,
    /// Feature grouping for subset selection (windowed FRF features);
    /// `None` selects individual columns.
    pub groups: Option<FeatureGroups>,
    /// Leave-one-out evaluation: every row joins the classifier pool and
    /// the source score is the LOO accuracy over that pool, for datasets
    /// too small to hold out a test split.
    pub loo: bool,
    pub kernel: KernelSpec,
    pub bda: BdaOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            folds: 5,
            groups: None,
            loo: false,
            kernel: KernelSpec::default(),
            bda: BdaOptions::default(),
        }
    }
}

/// Result of one method on one task. Wall time is kept in memory only so
/// serialized reports stay deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub source_accuracy: Option<f64>,
    pub target_accuracy: Option<f64>,
    /// Joint discrepancy in the method's own output space, on the rows the
    /// accuracies were scored on.
    pub jmmd: Option<f64>,
    pub selection: Option<Selection>,
    pub error: Option<String>,
    #[serde(skip)]
    pub seconds: f64,
}

/// All measurements of one task: task-level similarity metrics plus one
/// outcome per requested method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    /// Mean modal assurance criterion over same-index mode pairs.
    pub mac_similarity: Option<f64>,
    /// Marginal discrepancy after normal-condition alignment, test rows.
    pub mmd: Option<f64>,
    /// Proxy A-distance after normal-condition alignment, test rows.
    pub pad: Option<f64>,
    pub methods: Vec<MethodOutcome>,
}

impl TaskResult {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|o| o.method == method)
    }

    /// Whether any method failed on this task.
    pub fn failed(&self) -> bool {
        self.methods.iter().any(|o| o.error.is_some())
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn rows_of(ds: &LabeledDataset, idx: &[usize]) -> Result<(Array2<f64>, Vec<usize>)> {
    let x = take_rows(ds.features.view(), idx)?;
    let y = idx.iter().map(|&i| ds.labels[i]).collect();
    Ok((x, y))
}

fn fit_eval_indices(ds: &LabeledDataset, loo: bool) -> (Vec<usize>, Vec<usize>) {
    if loo {
        let all: Vec<usize> = (0..ds.n_samples()).collect();
        (all.clone(), all)
    } else {
        (ds.indices_of(Split::Train), ds.indices_of(Split::Test))
    }
}

/// 1-NN leave-one-out accuracy: each row is predicted from its nearest
/// other row, with distance ties going to the lowest index.
pub fn loo_accuracy(x: ArrayView2<'_, f64>, y: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} rows",
            y.len()
        )));
    }
    if n < 2 {
        return Err(Error::MissingData(
            "leave-one-out needs at least 2 rows".into(),
        ));
    }
    let mut hits = 0usize;
    for i in 0..n {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if best.map_or(true, |(bd, bj)| {
                d.total_cmp(&bd).then(j.cmp(&bj)) == std::cmp::Ordering::Less
            }) {
                best = Some((d, j));
            }
        }
        if y[best.expect("n >= 2").1] == y[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Column-subset copies of a task's datasets for a selection, in pair order.
fn subset_datasets(
    task: &TransferTask,
    selection: &Selection,
    groups: &FeatureGroups,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let cols_s = selection.source_columns(groups)?;
    let cols_t = selection.target_columns(groups)?;
    let mut s = task.source.clone();
    s.features = take_columns(task.source.features.view(), &cols_s)?;
    let mut t = task.target.clone();
    t.features = take_columns(task.target.features.view(), &cols_t)?;
    Ok((s, t))
}

/// The data blocks a classifier run needs, in the method's output space.
struct Blocks {
    train_x: Array2<f64>,
    train_y: Vec<usize>,
    s_eval_x: Array2<f64>,
    s_eval_y: Vec<usize>,
    t_eval_x: Array2<f64>,
    t_eval_y: Vec<usize>,
    selection: Option<Selection>,
}

struct TaskEval<'a> {
    task: &'a TransferTask,
    opts: &'a EvalOptions,
    scorer: Option<TaskScorer>,
    selections: BTreeMap<(usize, u64), Selection>,
}

impl<'a> TaskEval<'a> {
    fn new(task: &'a TransferTask, opts: &'a EvalOptions) -> Self {
        TaskEval {
            task,
            opts,
            scorer: None,
            selections: BTreeMap::new(),
        }
    }

    fn groups(&self) -> FeatureGroups {
        self.opts
            .groups
            .clone()
            .unwrap_or_else(|| FeatureGroups::identity(self.task.source.n_features()))
    }

    fn selection_for(&mut self, theta: Theta) -> Result<Selection> {
        let key = (theta.d, theta.lambda.to_bits());
        if let Some(s) = self.selections.get(&key) {
            return Ok(s.clone());
        }
        if self.scorer.is_none() {
            self.scorer = Some(TaskScorer::new(
                self.task,
                self.opts.folds,
                self.opts.groups.clone(),
            )?);
        }
        let config = TfcConfig {
            subset_size: theta.d,
            lambda: theta.lambda,
            folds: self.opts.folds,
            groups: self.opts.groups.clone(),
            max_candidates: 1_000_000,
        };
        let selection = select_features_with(self.scorer.as_ref().expect("just built"), &config)?;
        self.selections.insert(key, selection.clone());
        Ok(selection)
    }

    /// Classifier-space blocks of datasets that need no latent step.
    fn plain_blocks(
        &self,
        source: &LabeledDataset,
        target: &LabeledDataset,
        selection: Option<Selection>,
    ) -> Result<Blocks> {
        let (s_fit, s_eval) = fit_eval_indices(source, self.opts.loo);
        let (_t_fit, t_eval) = fit_eval_indices(target, self.opts.loo);
        let (train_x, train_y) = rows_of(source, &s_fit)?;
        let (s_eval_x, s_eval_y) = rows_of(source, &s_eval)?;
        let (t_eval_x, t_eval_y) = rows_of(target, &t_eval)?;
        Ok(Blocks {
            train_x,
            train_y,
            s_eval_x,
            s_eval_y,
            t_eval_x,
            t_eval_y,
            selection,
        })
    }

    /// Blocks after a kernelized latent step fitted on the fit rows of the
    /// aligned datasets.
    fn latent_blocks(
        &self,
        source: &LabeledDataset,
        target: &LabeledDataset,
        method: Method,
        dims: usize,
        mu: f64,
        selection: Option<Selection>,
    ) -> Result<Blocks> {
        let (s_fit, s_eval) = fit_eval_indices(source, self.opts.loo);
        let (t_fit, t_eval) = fit_eval_indices(target, self.opts.loo);
        let (s_fit_x, s_fit_y) = rows_of(source, &s_fit)?;
        let (t_fit_x, _) = rows_of(target, &t_fit)?;
        let map = match method {
            Method::Tca | Method::TfcTca => {
                let (_, _, map) = tca(s_fit_x.view(), t_fit_x.view(), dims, mu, &self.opts.kernel)?;
                map
            }
            Method::Bda | Method::TfcBda => {
                let (_, _, map, _) = bda(
                    s_fit_x.view(),
                    &s_fit_y,
                    t_fit_x.view(),
                    dims,
                    mu,
                    &self.opts.kernel,
                    &self.opts.bda,
                )?;
                map
            }
            _ => return Err(Error::InvalidConfig(format!("{method} is not a latent step"))),
        };
        let (s_eval_x, s_eval_y) = rows_of(source, &s_eval)?;
        let (t_eval_x, t_eval_y) = rows_of(target, &t_eval)?;
        Ok(Blocks {
            train_x: map.transform(s_fit_x.view())?,
            train_y: s_fit_y,
            s_eval_x: map.transform(s_eval_x.view())?,
            s_eval_y,
            t_eval_x: map.transform(t_eval_x.view())?,
            t_eval_y,
            selection,
        })
    }

    fn pipeline(&mut self, spec: &MethodSpec) -> Result<Blocks> {
        let need_theta = || {
            spec.theta.ok_or_else(|| {
                Error::InvalidConfig(format!("{} needs resolved hyperparameters", spec.method))
            })
        };
        match spec.method {
            Method::NoDa => self.plain_blocks(&self.task.source, &self.task.target, None),
            Method::Nca => {
                let (s, t, _) = nca(&self.task.source, &self.task.target)?;
                self.plain_blocks(&s, &t, None)
            }
            Method::Pca => {
                let (s, t, _) = nca(&self.task.source, &self.task.target)?;
                let (s_fit, s_eval) = fit_eval_indices(&s, self.opts.loo);
                let (_t_fit, t_eval) = fit_eval_indices(&t, self.opts.loo);
                let (s_fit_x, s_fit_y) = rows_of(&s, &s_fit)?;
                let dims = match spec.theta {
                    Some(theta) => PcaDims::Components(theta.d),
                    None => PcaDims::default(),
                };
                let map = pca_fit(s_fit_x.view(), dims)?;
                let (s_eval_x, s_eval_y) = rows_of(&s, &s_eval)?;
                let (t_eval_x, t_eval_y) = rows_of(&t, &t_eval)?;
                Ok(Blocks {
                    train_x: map.transform(s_fit_x.view())?,
                    train_y: s_fit_y,
                    s_eval_x: map.transform(s_eval_x.view())?,
                    s_eval_y,
                    t_eval_x: map.transform(t_eval_x.view())?,
                    t_eval_y,
                    selection: None,
                })
            }
            Method::Tca | Method::Bda => {
                let theta = need_theta()?;
                let (s, t, _) = nca(&self.task.source, &self.task.target)?;
                self.latent_blocks(&s, &t, spec.method, theta.d, theta.lambda, None)
            }
            Method::Tfc => {
                let theta = need_theta()?;
                let selection = self.selection_for(theta)?;
                let (s_sub, t_sub) = subset_datasets(self.task, &selection, &self.groups())?;
                let (s, t, _) = nca(&s_sub, &t_sub)?;
                self.plain_blocks(&s, &t, Some(selection))
            }
            Method::TfcTca | Method::TfcBda => {
                let theta = need_theta()?;
                if theta.d < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "{} needs a subset of at least 2 groups for its latent step",
                        spec.method
                    )));
                }
                let mu = spec.latent_mu.ok_or_else(|| {
                    Error::InvalidConfig(format!("{} needs a latent-step mu", spec.method))
                })?;
                let selection = self.selection_for(theta)?;
                let (s_sub, t_sub) = subset_datasets(self.task, &selection, &self.groups())?;
                let (s, t, _) = nca(&s_sub, &t_sub)?;
                self.latent_blocks(&s, &t, spec.method, theta.d - 1, mu, Some(selection))
            }
        }
    }

    fn run(&mut self, spec: &MethodSpec) -> MethodOutcome {
        let start = Instant::now();
        let result = self.pipeline(spec).and_then(|blocks| {
            let source_accuracy = if self.opts.loo {
                loo_accuracy(blocks.train_x.view(), &blocks.train_y)?
            } else {
                let pred = knn_predict(
                    blocks.train_x.view(),
                    &blocks.train_y,
                    blocks.s_eval_x.view(),
                    1,
                )?;
                accuracy(&pred, &blocks.s_eval_y)?
            };
            let pred = knn_predict(
                blocks.train_x.view(),
                &blocks.train_y,
                blocks.t_eval_x.view(),
                1,
            )?;
            let target_accuracy = accuracy(&pred, &blocks.t_eval_y)?;
            let jmmd_value = jmmd(
                blocks.s_eval_x.view(),
                &blocks.s_eval_y,
                blocks.t_eval_x.view(),
                &blocks.t_eval_y,
                &self.opts.kernel,
            )?;
            Ok((source_accuracy, target_accuracy, jmmd_value, blocks.selection))
        });
        let seconds = start.elapsed().as_secs_f64();
        match result {
            Ok((source_accuracy, target_accuracy, jmmd_value, selection)) => MethodOutcome {
                method: spec.method,
                source_accuracy: Some(source_accuracy),
                target_accuracy: Some(target_accuracy),
                jmmd: Some(jmmd_value),
                selection,
                error: None,
                seconds,
            },
            Err(e) => MethodOutcome {
                method: spec.method,
                source_accuracy: None,
                target_accuracy: None,
                jmmd: None,
                selection: None,
                error: Some(e.to_string()),
                seconds,
            },
        }
    }
}

/// Runs every method on one task. Method failures are recorded in the
/// corresponding outcome; the task-level metrics are independent of them.
pub fn evaluate_task(task: &TransferTask, methods: &[MethodSpec], opts: &EvalOptions) -> TaskResult {
    let mac_similarity = modal_similarity(&task.source_modal, &task.target_modal).ok();

    let (mmd_value, pad_value) = match nca(&task.source, &task.target) {
        Ok((s, t, _)) => {
            let s_test = s.indices_of(Split::Test);
            let t_test = t.indices_of(Split::Test);
            let blocks = (
                take_rows(s.features.view(), &s_test),
                take_rows(t.features.view(), &t_test),
            );
            match blocks {
                (Ok(xs), Ok(xt)) => (
                    mmd(xs.view(), xt.view(), &KernelSpec::default()).ok(),
                    pad(xs.view(), xt.view(), 0.5, fnv1a(&task.id)).ok(),
                ),
                _ => (None, None),
            }
        }
        Err(_) => (None, None),
    };

    let mut eval = TaskEval::new(task, opts);
    let methods = methods.iter().map(|spec| eval.run(spec)).collect();
    TaskResult {
        task_id: task.id.clone(),
        mac_similarity,
        mmd: mmd_value,
        pad: pad_value,
        methods,
    }
}

/// Runs a single method on one task.
pub fn run_task(task: &TransferTask, method: &MethodSpec, opts: &EvalOptions) -> TaskResult {
    evaluate_task(task, std::slice::from_ref(method), opts)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "correlation inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::MissingData(
            "correlation needs at least 2 points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Numerical(
            "correlation undefined: an input has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Average rank over the tie run, 1-based.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "correlation inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&ranks(x), &ranks(y))
}

/// Full study description: population, methods, validation block, and the
/// hyperparameter grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub population: PopulationConfig,
    pub methods: Vec<Method>,
    /// Structures (by index) whose mutual tasks form the validation block.
    pub validation_structures: usize,
    pub tfc_grid: HyperGrid,
    pub tca_grid: HyperGrid,
    pub bda_grid: HyperGrid,
    /// Subset sizes of the reported accuracy-versus-D sweep.
    pub sweep_dims: Vec<usize>,
    /// Also exclude mirror-image ground layouts when building tasks.
    pub exclude_symmetric: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            population: PopulationConfig::default(),
            methods: Method::ALL.to_vec(),
            validation_structures: 5,
            tfc_grid: HyperGrid {
                d_values: (2..=10).collect(),
                lambda_values: vec![0.01, 0.1, 1.0],
            },
            tca_grid: HyperGrid {
                d_values: vec![3, 5, 7, 9],
                lambda_values: vec![0.01, 0.1, 1.0],
            },
            bda_grid: HyperGrid {
                d_values: vec![3, 5, 7, 9],
                lambda_values: vec![0.01, 0.1, 1.0],
            },
            sweep_dims: (1..=10).collect(),
            exclude_symmetric: true,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods requested".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &m in &self.methods {
            if !seen.insert(m.name()) {
                return Err(Error::InvalidConfig(format!("method {m} listed twice")));
            }
        }
        if !self.methods.contains(&Method::Nca) {
            return Err(Error::InvalidConfig(
                "the study needs NCA: correlations and negative-transfer rates are relative to it"
                    .into(),
            ));
        }
        if self.validation_structures < 2 {
            return Err(Error::InvalidConfig(
                "at least 2 validation structures are needed to form validation tasks".into(),
            ));
        }
        if self.validation_structures >= self.population.n_structures {
            return Err(Error::InvalidConfig(format!(
                "{} validation structures leave no test structures out of {}",
                self.validation_structures, self.population.n_structures
            )));
        }
        if self.sweep_dims.is_empty() {
            return Err(Error::InvalidConfig("empty sweep dimension list".into()));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: StudyConfig =
            toml::from_str(text).map_err(|e| Error::parse("config (toml)", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).with_context(path.display().to_string()))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => StudyConfig::from_json_str(&text),
            Some("toml") => StudyConfig::from_toml_str(&text),
            other => Err(Error::InvalidConfig(format!(
                "config file must end in .json or .toml, found {:?}",
                other.unwrap_or("<none>")
            ))),
        }
        .map_err(|e| e.with_context(path.display().to_string()))
    }
}

/// One grid search's winner and its full loss table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub best: Theta,
    pub table: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSearchReport {
    pub tfc: GridReport,
    pub tca: GridReport,
    pub bda: GridReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSummary {
    pub index: usize,
    pub ground_dofs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub x: String,
    pub y: String,
    pub r: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub method: Method,
    pub source_accuracy: Option<f64>,
    pub target_accuracy: Option<f64>,
    pub jmmd: Option<f64>,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeTransferRow {
    pub method: Method,
    /// Fraction of tasks scoring strictly below the same task's NCA run.
    pub rate: Option<f64>,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d: usize,
    pub mean_accuracy: Option<f64>,
    pub n_tasks: usize,
}

/// Everything a study run produces. Serialization is deterministic in
/// (config, seed): ordered containers only and no wall-clock fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub config: StudyConfig,
    pub structures: Vec<StructureSummary>,
    /// Pairwise mean MAC between structure modal models.
    pub structure_mac: Vec<Vec<f64>>,
    pub hyper_search: HyperSearchReport,
    pub validation_tasks: Vec<String>,
    pub tasks: Vec<TaskResult>,
    pub correlations: Vec<CorrelationEntry>,
    pub mean_table: Vec<MeanRow>,
    pub negative_transfer: Vec<NegativeTransferRow>,
    pub sweep: Vec<SweepPoint>,
    pub failed_tasks: Vec<String>,
    pub notes: Vec<String>,
}

impl StudyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Errors if more than 5% of the test tasks had a failing method.
    pub fn check_failures(&self) -> Result<()> {
        let total = self.tasks.len().max(1);
        let failed = self.failed_tasks.len();
        if failed as f64 / total as f64 > 0.05 {
            return Err(Error::Numerical(format!(
                "{failed} of {} tasks failed, above the 5% budget",
                self.tasks.len()
            )));
        }
        Ok(())
    }

    pub fn mean_target_accuracy(&self, method: Method) -> Option<f64> {
        self.mean_table
            .iter()
            .find(|r| r.method == method)
            .and_then(|r| r.target_accuracy)
    }

    /// Writes `report.json` and the flat CSV artifacts into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut json = self.to_json()?;
        json.push('\n');
        std::fs::write(dir.join("report.json"), json)?;

        let fmt_opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();

        let mut table2 = String::from("x,y,r,n\n");
        for c in &self.correlations {
            table2.push_str(&format!("{},{},{},{}\n", c.x, c.y, fmt_opt(c.r), c.n));
        }
        std::fs::write(dir.join("table2.csv"), table2)?;

        let mut table3 = String::from("method,source_accuracy,target_accuracy,jmmd,n_tasks\n");
        for row in &self.mean_table {
            table3.push_str(&format!(
                "{},{},{},{},{}\n",
                row.method,
                fmt_opt(row.source_accuracy),
                fmt_opt(row.target_accuracy),
                fmt_opt(row.jmmd),
                row.n_tasks
            ));
        }
        std::fs::write(dir.join("table3.csv"), table3)?;

        let mut fig4 = String::from("task,method,target_accuracy,accuracy_minus_nca\n");
        for task in &self.tasks {
            let nca_acc = task
                .outcome(Method::Nca)
                .and_then(|o| o.target_accuracy);
            for o in &task.methods {
                let delta = match (o.target_accuracy, nca_acc) {
                    (Some(a), Some(b)) => Some(a - b),
                    _ => None,
                };
                fig4.push_str(&format!(
                    "{},{},{},{}\n",
                    task.task_id,
                    o.method,
                    fmt_opt(o.target_accuracy),
                    fmt_opt(delta)
                ));
            }
        }
        std::fs::write(dir.join("fig4.csv"), fig4)?;

        let mut fig5 = String::from("d,mean_accuracy,n_tasks\n");
        for p in &self.sweep {
            fig5.push_str(&format!("{},{},{}\n", p.d, fmt_opt(p.mean_accuracy), p.n_tasks));
        }
        std::fs::write(dir.join("fig5.csv"), fig5)?;

        let mut macm = String::from("structure");
        for s in &self.structures {
            macm.push_str(&format!(",structure_{:02}", s.index));
        }
        macm.push('\n');
        for (s, row) in self.structures.iter().zip(&self.structure_mac) {
            macm.push_str(&format!("structure_{:02}", s.index));
            for v in row {
                macm.push_str(&format!(",{v}"));
            }
            macm.push('\n');
        }
        std::fs::write(dir.join("macmatrix.csv"), macm)?;
        Ok(())
    }
}

fn task_indices(id: &str) -> Option<(usize, usize)> {
    let (s, t) = id.split_once('-')?;
    let s = s.strip_prefix('s')?.parse().ok()?;
    let t = t.strip_prefix('t')?.parse().ok()?;
    Some((s, t))
}

/// Splits tasks into (validation, test): a task is validation when both its
/// structures sit in the first `n_validation` indices.
fn partition_tasks(
    tasks: Vec<TransferTask>,
    n_validation: usize,
) -> (Vec<TransferTask>, Vec<TransferTask>) {
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for task in tasks {
        match task_indices(&task.id) {
            Some((s, t)) if s < n_validation && t < n_validation => validation.push(task),
            _ => test.push(task),
        }
    }
    (validation, test)
}

fn clamp_grid(grid: &HyperGrid, d_min: usize, d_max: usize, what: &str) -> Result<HyperGrid> {
    let d_values: Vec<usize> = grid
        .d_values
        .iter()
        .copied()
        .filter(|&d| d >= d_min && d <= d_max)
        .collect();
    if d_values.len() < grid.d_values.len() {
        log::info!(
            "{what} grid: dropped dimensions outside {d_min}..={d_max}, kept {:?}",
            d_values
        );
    }
    if d_values.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no {what} grid dimension fits 1..={d_max} features"
        )));
    }
    Ok(HyperGrid {
        d_values,
        lambda_values: grid.lambda_values.clone(),
    })
}

/// Target-test 0-1 loss of a 1-NN trained on the source train split.
fn target_grid_loss(source: &LabeledDataset, target: &LabeledDataset) -> Result<GridLoss> {
    let train = source.indices_of(Split::Train);
    let test = target.indices_of(Split::Test);
    let (train_x, train_y) = rows_of(source, &train)?;
    let (test_x, test_y) = rows_of(target, &test)?;
    let pred = knn_predict(train_x.view(), &train_y, test_x.view(), 1)?;
    let errors = pred.iter().zip(&test_y).filter(|(p, t)| p != t).count();
    Ok(GridLoss {
        errors,
        total: test_y.len(),
    })
}

fn tfc_validation_loss(
    scorers: &mut BTreeMap<String, TaskScorer>,
    task: &TransferTask,
    theta: Theta,
    opts: &EvalOptions,
) -> Result<GridLoss> {
    if !scorers.contains_key(&task.id) {
        scorers.insert(
            task.id.clone(),
            TaskScorer::new(task, opts.folds, opts.groups.clone())?,
        );
    }
    let scorer = scorers.get(&task.id).expect("just inserted");
    let config = TfcConfig {
        subset_size: theta.d,
        lambda: theta.lambda,
        folds: opts.folds,
        groups: opts.groups.clone(),
        max_candidates: 1_000_000,
    };
    let selection = select_features_with(scorer, &config)?;
    let groups = opts
        .groups
        .clone()
        .unwrap_or_else(|| FeatureGroups::identity(task.source.n_features()));
    let (s_sub, t_sub) = subset_datasets(task, &selection, &groups)?;
    let (s, t, _) = nca(&s_sub, &t_sub)?;
    target_grid_loss(&s, &t)
}

fn kernel_validation_loss(
    task: &TransferTask,
    method: Method,
    theta: Theta,
    opts: &EvalOptions,
) -> Result<GridLoss> {
    let (s, t, _) = nca(&task.source, &task.target)?;
    let train_s = s.indices_of(Split::Train);
    let train_t = t.indices_of(Split::Train);
    let test_t = t.indices_of(Split::Test);
    let (s_fit_x, s_fit_y) = rows_of(&s, &train_s)?;
    let (t_fit_x, _) = rows_of(&t, &train_t)?;
    let map = match method {
        Method::Tca => tca(s_fit_x.view(), t_fit_x.view(), theta.d, theta.lambda, &opts.kernel)?.2,
        Method::Bda => {
            bda(
                s_fit_x.view(),
                &s_fit_y,
                t_fit_x.view(),
                theta.d,
                theta.lambda,
                &opts.kernel,
                &opts.bda,
            )?
            .2
        }
        _ => return Err(Error::InvalidConfig(format!("{method} has no grid search"))),
    };
    let (test_x, test_y) = rows_of(&t, &test_t)?;
    let pred = knn_predict(
        map.transform(s_fit_x.view())?.view(),
        &s_fit_y,
        map.transform(test_x.view())?.view(),
        1,
    )?;
    let errors = pred.iter().zip(&test_y).filter(|(p, t)| p != t).count();
    Ok(GridLoss {
        errors,
        total: test_y.len(),
    })
}

/// Mean TFC target accuracy per subset size, over the test tasks that
/// admit a feasible subset at that size.
fn feature_count_sweep(
    tasks: &[TransferTask],
    dims: &[usize],
    lambda: f64,
    opts: &EvalOptions,
) -> Vec<SweepPoint> {
    let per_task: Vec<Vec<Option<f64>>> = tasks
        .par_iter()
        .map(|task| {
            let mut row = vec![None; dims.len()];
            let scorer = match TaskScorer::new(task, opts.folds, opts.groups.clone()) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("sweep: task {} scorer failed: {e}", task.id);
                    return row;
                }
            };
            let groups = opts
                .groups
                .clone()
                .unwrap_or_else(|| FeatureGroups::identity(task.source.n_features()));
            for (i, &d) in dims.iter().enumerate() {
                let config = TfcConfig {
                    subset_size: d,
                    lambda,
                    folds: opts.folds,
                    groups: opts.groups.clone(),
                    max_candidates: 1_000_000,
                };
                row[i] = (|| -> Result<f64> {
                    let selection = select_features_with(&scorer, &config)?;
                    let (s_sub, t_sub) = subset_datasets(task, &selection, &groups)?;
                    let (s, t, _) = nca(&s_sub, &t_sub)?;
                    let loss = target_grid_loss(&s, &t)?;
                    Ok(1.0 - loss.errors as f64 / loss.total.max(1) as f64)
                })()
                .ok();
            }
            row
        })
        .collect();
    dims.iter()
        .enumerate()
        .map(|(i, &d)| {
            let values: Vec<f64> = per_task.iter().filter_map(|r| r[i]).collect();
            SweepPoint {
                d,
                mean_accuracy: if values.is_empty() {
                    None
                } else {
                    Some(values.iter().sum::<f64>() / values.len() as f64)
                },
                n_tasks: values.len(),
            }
        })
        .collect()
}

/// Generates the population, selects hyperparameters on the validation
/// block, evaluates every method on every test task, and aggregates. Unlike
/// [`run_numerical_study`] this does not error when many tasks fail.
pub fn run_numerical_study_lenient(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let n_features = config.population.dof;
    let opts = EvalOptions::default();

    log::info!("generating population of {}", config.population.n_structures);
    let population = generate_population(&config.population)?;
    let tasks = build_tasks(&population, config.exclude_symmetric)?;
    let (validation, test) = partition_tasks(tasks, config.validation_structures);
    log::info!(
        "{} validation tasks, {} test tasks",
        validation.len(),
        test.len()
    );
    if test.is_empty() {
        return Err(Error::MissingData("no test tasks".into()));
    }
    if validation.is_empty() {
        return Err(Error::MissingData(
            "no validation tasks: the validation structures all share a ground layout".into(),
        ));
    }

    let tfc_grid = clamp_grid(&config.tfc_grid, 1, n_features, "subset-selection")?;
    let tca_grid = clamp_grid(&config.tca_grid, 1, n_features.max(2), "TCA")?;
    let bda_grid = clamp_grid(&config.bda_grid, 1, n_features.max(2), "BDA")?;

    log::info!("selecting subset-selection hyperparameters");
    let mut scorers: BTreeMap<String, TaskScorer> = BTreeMap::new();
    let tfc_outcome = multitask_grid_search(&tfc_grid, &validation, |task, theta| {
        tfc_validation_loss(&mut scorers, task, theta, &opts)
    })?;
    drop(scorers);
    log::info!("selecting TCA hyperparameters");
    let tca_outcome = multitask_grid_search(&tca_grid, &validation, |task, theta| {
        kernel_validation_loss(task, Method::Tca, theta, &opts)
    })?;
    log::info!("selecting BDA hyperparameters");
    let bda_outcome = multitask_grid_search(&bda_grid, &validation, |task, theta| {
        kernel_validation_loss(task, Method::Bda, theta, &opts)
    })?;
    let hyper = SelectedHyper {
        tfc: tfc_outcome.best,
        tca: tca_outcome.best,
        bda: bda_outcome.best,
    };
    log::info!(
        "selected: subsets D={} lambda={}, TCA D={} mu={}, BDA D={} mu={}",
        hyper.tfc.d,
        hyper.tfc.lambda,
        hyper.tca.d,
        hyper.tca.lambda,
        hyper.bda.d,
        hyper.bda.lambda
    );

    let specs: Vec<MethodSpec> = config
        .methods
        .iter()
        .map(|&m| MethodSpec::resolve(m, &hyper))
        .collect();

    log::info!("evaluating {} test tasks", test.len());
    let results: Vec<TaskResult> = test
        .par_iter()
        .map(|task| evaluate_task(task, &specs, &opts))
        .collect();

    log::info!("sweeping subset sizes {:?}", config.sweep_dims);
    let sweep_dims: Vec<usize> = config
        .sweep_dims
        .iter()
        .copied()
        .filter(|&d| d >= 1 && d <= n_features)
        .collect();
    let sweep = feature_count_sweep(&test, &sweep_dims, hyper.tfc.lambda, &opts);

    // Correlations over complete cases: tasks with every metric and a
    // successful alignment run.
    let mut macs = Vec::new();
    let mut mmds = Vec::new();
    let mut pads = Vec::new();
    let mut jmmds = Vec::new();
    let mut accs = Vec::new();
    for r in &results {
        let nca_out = r.outcome(Method::Nca);
        if let (Some(mac), Some(m), Some(p), Some(out)) = (r.mac_similarity, r.mmd, r.pad, nca_out)
        {
            if let (Some(acc), Some(j)) = (out.target_accuracy, out.jmmd) {
                macs.push(mac);
                mmds.push(m);
                pads.push(p);
                jmmds.push(j);
                accs.push(acc);
            }
        }
    }
    let correlate = |x: &[f64], y: &[f64], xn: &str, yn: &str| {
        let r = match pearson(x, y) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("correlation {xn}-{yn} undefined: {e}");
                None
            }
        };
        CorrelationEntry {
            x: xn.to_string(),
            y: yn.to_string(),
            r,
            n: x.len(),
        }
    };
    let correlations = vec![
        correlate(&pads, &accs, "PAD", "accuracy"),
        correlate(&mmds, &accs, "MMD", "accuracy"),
        correlate(&jmmds, &accs, "JMMD", "accuracy"),
        correlate(&macs, &accs, "MAC", "accuracy"),
        correlate(&macs, &jmmds, "MAC", "JMMD"),
    ];

    let mean_table: Vec<MeanRow> = config
        .methods
        .iter()
        .map(|&method| {
            let mut src = Vec::new();
            let mut tgt = Vec::new();
            let mut jm = Vec::new();
            for r in &results {
                if let Some(o) = r.outcome(method) {
                    if o.error.is_none() {
                        src.extend(o.source_accuracy);
                        tgt.extend(o.target_accuracy);
                        jm.extend(o.jmmd);
                    }
                }
            }
            let mean = |v: &[f64]| {
                if v.is_empty() {
                    None
                } else {
                    Some(v.iter().sum::<f64>() / v.len() as f64)
                }
            };
            MeanRow {
                method,
                source_accuracy: mean(&src),
                target_accuracy: mean(&tgt),
                jmmd: mean(&jm),
                n_tasks: tgt.len(),
            }
        })
        .collect();

    let negative_transfer: Vec<NegativeTransferRow> = config
        .methods
        .iter()
        .map(|&method| {
            let mut below = 0usize;
            let mut n = 0usize;
            for r in &results {
                let nca_acc = r.outcome(Method::Nca).and_then(|o| o.target_accuracy);
                let acc = r.outcome(method).and_then(|o| o.target_accuracy);
                if let (Some(a), Some(b)) = (acc, nca_acc) {
                    n += 1;
                    if a < b {
                        below += 1;
                    }
                }
            }
            NegativeTransferRow {
                method,
                rate: if n == 0 {
                    None
                } else {
                    Some(below as f64 / n as f64)
                },
                n_tasks: n,
            }
        })
        .collect();

    let structures: Vec<StructureSummary> = population
        .iter()
        .map(|s| StructureSummary {
            index: s.index,
            ground_dofs: s.ground_dofs.clone(),
        })
        .collect();
    let structure_mac = structure_mac_table(&population)?;

    let failed_tasks: Vec<String> = results
        .iter()
        .filter(|r| r.failed())
        .map(|r| r.task_id.clone())
        .collect();

    Ok(StudyReport {
        schema_version: 1,
        config: config.clone(),
        structures,
        structure_mac,
        hyper_search: HyperSearchReport {
            tfc: GridReport {
                best: tfc_outcome.best,
                table: tfc_outcome.table,
            },
            tca: GridReport {
                best: tca_outcome.best,
                table: tca_outcome.table,
            },
            bda: GridReport {
                best: bda_outcome.best,
                table: bda_outcome.table,
            },
        },
        validation_tasks: validation.iter().map(|t| t.id.clone()).collect(),
        tasks: results,
        correlations,
        mean_table,
        negative_transfer,
        sweep,
        failed_tasks,
        notes: vec![
            "JMMD is computed in each method's own output space; the output dimension itself \
             influences attainable JMMD, so cross-method JMMD comparisons should hold the \
             dimension fixed."
                .to_string(),
        ],
    })
}

/// Like [`run_numerical_study_lenient`], but errors when more than 5% of
/// the test tasks had a failing method.
pub fn run_numerical_study(config: &StudyConfig) -> Result<StudyReport> {
    let report = run_numerical_study_lenient(config)?;
    report.check_failures()?;
    Ok(report)
}

/// Mean MAC over best-match mode pairs: every source mode is paired with
/// its highest-MAC target mode (ties to the lowest index) and the paired
/// values are averaged.
pub fn modal_similarity(source: &ModalModel, target: &ModalModel) -> Result<f64> {
    let mac = mac_matrix(source, target)?;
    let all: Vec<usize> = (0..mac.nrows()).collect();
    let pairing = pair_modes(mac.view(), &all)?;
    mac_discrepancy(mac.view(), &pairing.source, &pairing.target)
}

/// Mean-MAC similarity between every pair of structure modal models.
pub fn structure_mac_table(population: &[Structure]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(population.len());
    for a in population {
        let mut row = Vec::with_capacity(population.len());
        for b in population {
            row.push(modal_similarity(&a.modal, &b.modal)?);
        }
        out.push(row);
    }
    Ok(out)
}

/// Frequency-response magnitudes with state labels and the identified modal
/// quantities needed to window and pair them.
#[derive(Debug, Clone, PartialEq)]
pub struct FrfDataset {
    pub domain_id: String,
    /// Strictly increasing frequency grid, Hz.
    pub frequencies_hz: Vec<f64>,
    /// Response magnitudes, samples x grid bins.
    pub magnitudes: Array2<f64>,
    /// State label per sample.
    pub labels: Vec<usize>,
    /// Marks the samples of the normal (baseline) state.
    pub normal_mask: Vec<bool>,
    /// Identified natural frequencies, Hz, strictly ascending.
    pub natural_frequencies_hz: Vec<f64>,
    /// Mode shapes at the sensor locations, sensors x modes.
    pub mode_shapes: Option<Array2<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FrfFile {
    domain_id: String,
    frequencies_hz: Vec<f64>,
    magnitudes: Vec<Vec<f64>>,
    labels: Vec<usize>,
    normal_mask: Vec<bool>,
    natural_frequencies_hz: Vec<f64>,
    mode_shapes: Option<Vec<Vec<f64>>>,
}

impl FrfDataset {
    pub fn n_samples(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let bins = self.frequencies_hz.len();
        if bins < 2 {
            return Err(Error::InvalidConfig(
                "an FRF grid needs at least 2 bins".into(),
            ));
        }
        for w in self.frequencies_hz.windows(2) {
            if !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite() {
                return Err(Error::InvalidConfig(
                    "the FRF frequency grid must be finite and strictly increasing".into(),
                ));
            }
        }
        if self.magnitudes.ncols() != bins {
            return Err(Error::ShapeMismatch(format!(
                "{} magnitude bins per sample but the grid has {bins}",
                self.magnitudes.ncols()
            )));
        }
        let n = self.magnitudes.nrows();
        if n == 0 {
            return Err(Error::MissingData("no FRF samples".into()));
        }
        if self.labels.len() != n || self.normal_mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} samples but {} labels and {} normal flags",
                n,
                self.labels.len(),
                self.normal_mask.len()
            )));
        }
        if self.magnitudes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "FRF magnitudes must be finite".into(),
            ));
        }
        self.normal_class()?;
        if self.natural_frequencies_hz.is_empty() {
            return Err(Error::MissingData(
                "no identified natural frequencies".into(),
            ));
        }
        let (lo, hi) = (self.frequencies_hz[0], self.frequencies_hz[bins - 1]);
        for w in self.natural_frequencies_hz.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidConfig(
                    "natural frequencies must be strictly ascending".into(),
                ));
            }
        }
        for (j, &f) in self.natural_frequencies_hz.iter().enumerate() {
            if !(f >= lo && f <= hi) || !f.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "natural frequency {j} ({f} Hz) lies outside the grid range {lo}..{hi} Hz"
                )));
            }
        }
        if let Some(shapes) = &self.mode_shapes {
            if shapes.ncols() != self.natural_frequencies_hz.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} mode-shape columns for {} natural frequencies",
                    shapes.ncols(),
                    self.natural_frequencies_hz.len()
                )));
            }
            if shapes.nrows() == 0 || shapes.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(
                    "mode shapes must be non-empty and finite".into(),
                ));
            }
        }
        Ok(())
    }

    /// The label shared by all normal-masked samples.
    pub fn normal_class(&self) -> Result<usize> {
        let mut normal = None;
        for (i, (&label, &mask)) in self.labels.iter().zip(&self.normal_mask).enumerate() {
            if mask {
                match normal {
                    None => normal = Some(label),
                    Some(l) if l != label => {
                        return Err(Error::InvalidConfig(format!(
                            "normal mask spans labels {l} and {label} (sample {i})"
                        )))
                    }
                    _ => {}
                }
            }
        }
        let normal =
            normal.ok_or_else(|| Error::MissingData("no sample is marked normal".into()))?;
        for (i, (&label, &mask)) in self.labels.iter().zip(&self.normal_mask).enumerate() {
            if label == normal && !mask {
                return Err(Error::InvalidConfig(format!(
                    "sample {i} carries the normal label {normal} but is not masked normal"
                )));
            }
        }
        Ok(normal)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FrfFile {
            domain_id: self.domain_id.clone(),
            frequencies_hz: self.frequencies_hz.clone(),
            magnitudes: self
                .magnitudes
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            labels: self.labels.clone(),
            normal_mask: self.normal_mask.clone(),
            natural_frequencies_hz: self.natural_frequencies_hz.clone(),
            mode_shapes: self.mode_shapes.as_ref().map(|s| {
                s.columns().into_iter().map(|c| c.to_vec()).collect()
            }),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FrfFile = serde_json::from_str(text)?;
        let bins = file.frequencies_hz.len();
        let magnitudes = rows_to_array(&file.magnitudes, bins, "magnitudes")?;
        let mode_shapes = match file.mode_shapes {
            Some(cols) => Some(columns_to_array(&cols, "mode_shapes")?),
            None => None,
        };
        let ds = FrfDataset {
            domain_id: file.domain_id,
            frequencies_hz: file.frequencies_hz,
            magnitudes,
            labels: file.labels,
            normal_mask: file.normal_mask,
            natural_frequencies_hz: file.natural_frequencies_hz,
            mode_shapes,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes the sectioned CSV form:
    ///
    /// ```text
    /// frf,1
    /// domain,<id>
    /// grid_hz,<bin frequencies...>
    /// modes_hz,<natural frequencies...>
    /// mode_shape,<mode index>,<value per sensor...>   (optional, one per mode)
    /// sample,<label>,<1 if normal else 0>,<magnitude per bin...>
    /// ```
    pub fn to_csv<W: IoWrite>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frf,1")?;
        writeln!(w, "domain,{}", self.domain_id)?;
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(w, "grid_hz,{}", join(&self.frequencies_hz))?;
        writeln!(w, "modes_hz,{}", join(&self.natural_frequencies_hz))?;
        if let Some(shapes) = &self.mode_shapes {
            for (j, col) in shapes.columns().into_iter().enumerate() {
                writeln!(w, "mode_shape,{j},{}", join(&col.to_vec()))?;
            }
        }
        for (i, row) in self.magnitudes.rows().into_iter().enumerate() {
            writeln!(
                w,
                "sample,{},{},{}",
                self.labels[i],
                u8::from(self.normal_mask[i]),
                join(&row.to_vec())
            )?;
        }
        Ok(())
    }

    /// Parses the sectioned CSV form; `location` names the input in errors.
    pub fn from_csv<R: BufRead>(reader: R, location: &str) -> Result<Self> {
        let mut domain_id: Option<String> = None;
        let mut grid: Option<Vec<f64>> = None;
        let mut modes: Option<Vec<f64>> = None;
        let mut shape_rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut samples: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        let mut mask = Vec::new();

        let at = |line: usize| format!("{location} line {line}");
        let floats = |fields: &[&str], line: usize, what: &str| -> Result<Vec<f64>> {
            fields
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    f.trim().parse::<f64>().map_err(|_| {
                        Error::parse(at(line), format!("{what} field {} is not a number: {f:?}", i + 1))
                    })
                })
                .collect()
        };

        for (index, line) in reader.lines().enumerate() {
            let line_no = index + 1;
            let line = line.map_err(|e| Error::parse(at(line_no), e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            match fields[0].trim() {
                "frf" => {
                    let version = fields.get(1).map(|s| s.trim());
                    if version != Some("1") {
                        return Err(Error::parse(
                            at(line_no),
                            format!("unsupported format version {version:?}"),
                        ));
                    }
                }
                "domain" => {
                    let id = fields.get(1).map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
                    domain_id = Some(id.ok_or_else(|| Error::parse(at(line_no), "empty domain id"))?);
                }
                "grid_hz" => grid = Some(floats(&fields[1..], line_no, "grid")?),
                "modes_hz" => modes = Some(floats(&fields[1..], line_no, "mode frequency")?),
                "mode_shape" => {
                    if fields.len() < 3 {
                        return Err(Error::parse(at(line_no), "mode_shape needs an index and values"));
                    }
                    let j: usize = fields[1].trim().parse().map_err(|_| {
                        Error::parse(at(line_no), format!("mode index is not an integer: {:?}", fields[1]))
                    })?;
                    if shape_rows.insert(j, floats(&fields[2..], line_no, "mode shape")?).is_some() {
                        return Err(Error::parse(at(line_no), format!("mode {j} shape listed twice")));
                    }
                }
                "sample" => {
                    if fields.len() < 4 {
                        return Err(Error::parse(
                            at(line_no),
                            "sample rows need a label, a normal flag and magnitudes",
                        ));
                    }
                    let label: usize = fields[1].trim().parse().map_err(|_| {
                        Error::parse(at(line_no), format!("label is not an integer: {:?}", fields[1]))
                    })?;
                    let normal = match fields[2].trim() {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(Error::parse(
                                at(line_no),
                                format!("normal flag must be 0 or 1, found {other:?}"),
                            ))
                        }
                    };
                    labels.push(label);
                    mask.push(normal);
                    samples.push(floats(&fields[3..], line_no, "magnitude")?);
                }
                other => {
                    return Err(Error::parse(
                        at(line_no),
                        format!("unknown section {other:?} (expected frf, domain, grid_hz, modes_hz, mode_shape or sample)"),
                    ))
                }
            }
        }

        let domain_id = domain_id.ok_or_else(|| Error::parse(location, "missing domain row"))?;
        let grid = grid.ok_or_else(|| Error::parse(location, "missing grid_hz row"))?;
        let modes = modes.ok_or_else(|| Error::parse(location, "missing modes_hz row"))?;
        if samples.is_empty() {
            return Err(Error::parse(location, "no sample rows"));
        }
        let magnitudes = rows_to_array(&samples, grid.len(), "sample magnitudes")?;
        let mode_shapes = if shape_rows.is_empty() {
            None
        } else {
            let expected: Vec<usize> = (0..modes.len()).collect();
            let present: Vec<usize> = shape_rows.keys().copied().collect();
            if present != expected {
                return Err(Error::parse(
                    location,
                    format!("mode_shape rows cover modes {present:?}, expected {expected:?}"),
                ));
            }
            let cols: Vec<Vec<f64>> = shape_rows.into_values().collect();
            Some(columns_to_array(&cols, "mode shapes")?)
        };
        let ds = FrfDataset {
            domain_id,
            frequencies_hz: grid,
            magnitudes,
            labels,
            normal_mask: mask,
            natural_frequencies_hz: modes,
            mode_shapes,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Reads a `.json` or `.csv` FRF file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).with_context(path.display().to_string()))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => FrfDataset::from_json(&text)
                .map_err(|e| e.with_context(path.display().to_string())),
            Some("csv") => {
                FrfDataset::from_csv(text.as_bytes(), &path.display().to_string())
            }
            other => Err(Error::InvalidConfig(format!(
                "FRF file must end in .json or .csv, found {:?}",
                other.unwrap_or("<none>")
            ))),
        }
    }
}

fn rows_to_array(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows.len(), ncols));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::ShapeMismatch(format!(
                "{what} row {i} has {} values, expected {ncols}",
                row.len()
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

fn columns_to_array(cols: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    if cols.is_empty() || cols[0].is_empty() {
        return Err(Error::MissingData(format!("{what} is empty")));
    }
    let nrows = cols[0].len();
    let mut out = Array2::zeros((nrows, cols.len()));
    for (j, col) in cols.iter().enumerate() {
        if col.len() != nrows {
            return Err(Error::ShapeMismatch(format!(
                "{what} column {j} has {} values, expected {nrows}",
                col.len()
            )));
        }
        for (i, &v) in col.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Concatenates, per identified natural frequency, the `window` magnitude
/// bins centred on the nearest grid bin, in ascending frequency order.
/// Samples are split per class, alternating train/test by occurrence, so
/// every class needs at least 2 samples.
pub fn window_features(frf: &FrfDataset, window: usize) -> Result<LabeledDataset> {
    frf.validate()?;
    let bins = frf.frequencies_hz.len();
    if window < 2 || window > bins {
        return Err(Error::InvalidConfig(format!(
            "window of {window} bins must lie in 2..={bins}"
        )));
    }
    let half = window / 2;
    let mut starts = Vec::with_capacity(frf.natural_frequencies_hz.len());
    let mut prev_end: Option<(usize, usize)> = None;
    for (j, &f) in frf.natural_frequencies_hz.iter().enumerate() {
        let centre = frf
            .frequencies_hz
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| (*a - f).abs().total_cmp(&(*b - f).abs()))
            .map(|(i, _)| i)
            .expect("validated non-empty grid");
        if centre < half || centre - half + window > bins {
            return Err(Error::InvalidConfig(format!(
                "the {window}-bin window around mode {j} ({f} Hz) truncates at the grid edge"
            )));
        }
        let start = centre - half;
        if let Some((pj, pe)) = prev_end {
            if start < pe {
                return Err(Error::InvalidConfig(format!(
                    "the windows around modes {pj} and {j} overlap; reduce the window or drop a mode"
                )));
            }
        }
        prev_end = Some((j, start + window));
        starts.push(start);
    }

    let n = frf.n_samples();
    let mut features = Array2::zeros((n, starts.len() * window));
    for i in 0..n {
        for (m, &start) in starts.iter().enumerate() {
            for k in 0..window {
                features[[i, m * window + k]] = frf.magnitudes[[i, start + k]];
            }
        }
    }
    let mut occurrence: BTreeMap<usize, usize> = BTreeMap::new();
    let split: Vec<Split> = frf
        .labels
        .iter()
        .map(|&label| {
            let seen = occurrence.entry(label).or_insert(0);
            let s = if *seen % 2 == 0 { Split::Train } else { Split::Test };
            *seen += 1;
            s
        })
        .collect();
    LabeledDataset::new(
        frf.domain_id.clone(),
        features,
        frf.labels.clone(),
        split,
        frf.normal_class()?,
    )
}

/// The modal model implied by an FRF dataset's identified modes.
pub fn frf_to_modal(frf: &FrfDataset) -> Result<ModalModel> {
    let shapes = frf
        .mode_shapes
        .clone()
        .ok_or_else(|| Error::MissingData("mode shapes are required to pair modes".into()))?;
    Ok(ModalModel {
        frequencies: frf
            .natural_frequencies_hz
            .iter()
            .map(|f| f * 2.0 * std::f64::consts::PI)
            .collect(),
        shapes,
        mass_normalized: false,
    })
}

/// Windows two FRF datasets and builds the transfer task between them,
/// with one feature group per mode.
pub fn frf_task(
    source: &FrfDataset,
    target: &FrfDataset,
    window: usize,
) -> Result<(TransferTask, FeatureGroups)> {
    let s = window_features(source, window)?;
    let t = window_features(target, window)?;
    let task = TransferTask::new(
        format!("{}-{}", source.domain_id, target.domain_id),
        s,
        frf_to_modal(source)?,
        t,
        frf_to_modal(target)?,
    )?;
    let groups = FeatureGroups::windows(source.natural_frequencies_hz.len(), window);
    Ok((task, groups))
}

/// Construction knobs of the synthetic two-domain FRF pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BladePairConfig {
    pub seed: u64,
    /// Chain size; also the mode count of each synthetic FRF.
    pub dof: usize,
    pub source_repeats: usize,
    pub target_repeats: usize,
    /// Inter-mass springs weakened by the damage states, one state each.
    pub damage_sites: Vec<usize>,
    pub damage_reduction: f64,
    /// Ground damper constant at every mass. With dampers to ground only,
    /// each resonance's half-power bandwidth equals this value in rad/s,
    /// independent of the mode, which keeps every peak resolvable on the
    /// grid: element dampers would instead leave low modes collapsed into
    /// single bins and high modes smeared across whole windows.
    pub damping: f64,
    /// Standard deviation of the log-normal multiplicative magnitude noise.
    pub noise: f64,
    /// Relative scale of the per-repeat stiffness/mass jitter.
    pub jitter: f64,
    pub bins: usize,
}

impl Default for BladePairConfig {
    fn default() -> Self {
        BladePairConfig {
            seed: 7,
            dof: 8,
            source_repeats: 25,
            target_repeats: 10,
            damage_sites: vec![1, 3, 5, 7],
            damage_reduction: 0.2,
            damping: 0.02,
            noise: 0.05,
            jitter: 0.001,
            bins: 1024,
        }
    }
}

/// Builds two related synthetic FRF domains: lightly damped chains measured
/// at the last mass, the target differing by a local mass and stiffness
/// change. States are the normal condition plus one damage state per
/// configured site; repeats differ by parameter jitter and measurement
/// noise.
pub fn synthetic_blade_pair(config: &BladePairConfig) -> Result<(FrfDataset, FrfDataset)> {
    if config.dof < 3 {
        return Err(Error::InvalidConfig("the chain needs at least 3 DoF".into()));
    }
    for &site in &config.damage_sites {
        if site == 0 || site >= config.dof {
            return Err(Error::InvalidDamage(format!(
                "damage site {site} is not an inter-mass spring of a {}-DoF chain",
                config.dof
            )));
        }
    }
    if !(config.damage_reduction > 0.0 && config.damage_reduction < 1.0) {
        return Err(Error::InvalidConfig(
            "damage reduction must lie strictly in (0, 1)".into(),
        ));
    }

    let mut source_spec = StructureSpec::uniform(config.dof, 1.0, 1.0, 0.0);
    source_spec.ground = (0..config.dof)
        .map(|dof| crate::spectral::GroundAttachment {
            dof,
            stiffness: 0.0,
            damping: config.damping,
        })
        .collect();
    // A mirror-symmetric chain would make damage at spring j and at spring
    // dof - j indistinguishable (identical spectra, and identical transfer
    // FRFs by reciprocity), so taper the source before deriving the target.
    source_spec.masses[1] *= 1.25;
    source_spec.springs[3] *= 0.8;
    let mut target_spec = source_spec.clone();
    target_spec.masses[2] *= 1.6;
    target_spec.springs[config.dof - 1] *= 0.7;

    let modal_s = undamped_modes(&assemble_matrices(&source_spec)?)?;
    let modal_t = undamped_modes(&assemble_matrices(&target_spec)?)?;
    let all_freqs: Vec<f64> = modal_s
        .frequencies
        .iter()
        .chain(modal_t.frequencies.iter())
        .copied()
        .collect();
    let lo = 0.6 * all_freqs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = 1.25 * all_freqs.iter().cloned().fold(0.0f64, f64::max);
    let grid_rad: Vec<f64> = (0..config.bins)
        .map(|i| lo + (hi - lo) * i as f64 / (config.bins - 1) as f64)
        .collect();

    let build = |spec: &StructureSpec, modal: &ModalModel, repeats: usize, domain: u64, id: &str| -> Result<FrfDataset> {
        let states = 1 + config.damage_sites.len();
        let n = states * repeats;
        let mut magnitudes = Array2::zeros((n, config.bins));
        let mut labels = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for state in 0..states {
            let damaged = if state == 0 {
                spec.clone()
            } else {
                crate::population::apply_damage(
                    spec,
                    config.damage_sites[state - 1],
                    config.damage_reduction,
                )?
            };
            for repeat in 0..repeats {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream((domain << 48) | ((state as u64) << 32) | repeat as u64);
                let unit = Normal::new(0.0, 1.0)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                let mut instance = damaged.clone();
                for k in instance.springs.iter_mut() {
                    *k *= 1.0 + config.jitter * unit.sample(&mut rng);
                }
                for m in instance.masses.iter_mut() {
                    *m *= 1.0 + config.jitter * unit.sample(&mut rng);
                }
                let mats = assemble_matrices(&instance)?;
                let inst_modal = undamped_modes(&mats)?;
                let row = crate::spectral::frf_magnitude(
                    &inst_modal,
                    &mats,
                    0,
                    config.dof - 1,
                    &grid_rad,
                )?;
                let out_row = state * repeats + repeat;
                for (j, v) in row.iter().enumerate() {
                    magnitudes[[out_row, j]] = v * (config.noise * unit.sample(&mut rng)).exp();
                }
                labels.push(state);
                mask.push(state == 0);
            }
        }
        let ds = FrfDataset {
            domain_id: id.to_string(),
            frequencies_hz: grid_rad
                .iter()
                .map(|w| w / (2.0 * std::f64::consts::PI))
                .collect(),
            magnitudes,
            labels,
            normal_mask: mask,
            natural_frequencies_hz: modal
                .frequencies
                .iter()
                .map(|w| w / (2.0 * std::f64::consts::PI))
                .collect(),
            mode_shapes: Some(modal.shapes.clone()),
        };
        ds.validate()?;
        Ok(ds)
    };

    let source = build(&source_spec, &modal_s, config.source_repeats, 1, "blade_a")?;
    let target = build(&target_spec, &modal_t, config.target_repeats, 2, "blade_b")?;
    Ok((source, target))
}
