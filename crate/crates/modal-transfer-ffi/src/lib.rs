//! C ABI over the modal-transfer toolkit.
//!
//! Every entry point is `mt_`-prefixed, returns an [`MtStatus`] code (output
//! values travel through out-pointers), and records a human-readable message
//! for the calling thread on failure, retrievable via
//! [`mt_last_error_message`]. Matrices cross the boundary as dense row-major
//! `double` buffers with explicit dimensions; class labels as `uint32_t`.
//!
//! Transfer tasks (a source/target FRF dataset pair reduced to windowed
//! features) live behind the opaque [`MtTask`] handle: build one with
//! [`mt_task_load`], query and run methods against it, release it with
//! [`mt_task_free`]. The generated header is written to
//! `include/modal_transfer.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use modal_transfer::adaptation::{accuracy, knn_predict, AlignmentStats};
use modal_transfer::divergence::{jmmd, mmd, pad, KernelSpec};
use modal_transfer::modal::mac;
use modal_transfer::population::{generate_population, sensitivity_demo, PopulationConfig};
use modal_transfer::study::{
    frf_task, modal_similarity, run_task, EvalOptions, FrfDataset, Method, MethodSpec,
    SelectedHyper,
};
use modal_transfer::tfc::{select_features, FeatureGroups, TfcConfig, Theta};
use modal_transfer::{Error, Result};

use ndarray::{ArrayView1, ArrayView2};

/// Outcome of an FFI call. Anything but `Ok` leaves a message for
/// [`mt_last_error_message`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument value is out of range or otherwise unusable.
    InvalidArgument = 2,
    /// Array dimensions disagree.
    ShapeMismatch = 3,
    /// A quantity degenerated (zero-norm shape, zero variance, zero kernel
    /// scale, overdamped mode).
    Degenerate = 4,
    /// Required rows, classes, or samples are absent.
    MissingData = 5,
    /// A numerical routine failed to converge or produced non-finite values.
    Numerical = 6,
    /// Text input (JSON, CSV, UTF-8) failed to parse.
    Parse = 7,
    /// File IO failed.
    Io = 8,
    /// Unexpected internal failure; treat as a bug.
    Internal = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn clear_error() {
    LAST_ERROR.with(|slot| slot.borrow_mut().take());
}

fn store_message(message: &str) {
    let owned = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(owned));
}

fn status_of(err: &Error) -> MtStatus {
    match err {
        Error::InvalidSpec(_)
        | Error::InvalidPairing(_)
        | Error::RankError { .. }
        | Error::NoFeasibleSubset { .. }
        | Error::InvalidConfig(_)
        | Error::InvalidDamage(_) => MtStatus::InvalidArgument,
        Error::IncompatibleSensors { .. } | Error::ShapeMismatch(_) => MtStatus::ShapeMismatch,
        Error::DegenerateDamping { .. }
        | Error::UndefinedMac { .. }
        | Error::DegenerateScale
        | Error::DegenerateFeature { .. } => MtStatus::Degenerate,
        Error::MissingData(_) | Error::MissingClass { .. } | Error::RedrawLimit { .. } => {
            MtStatus::MissingData
        }
        Error::Numerical(_) => MtStatus::Numerical,
        Error::Parse { .. } | Error::Json(_) => MtStatus::Parse,
        Error::Io(_) => MtStatus::Io,
        Error::Context { source, .. } => status_of(source),
    }
}

fn fail(err: Error) -> MtStatus {
    store_message(&err.to_string());
    status_of(&err)
}

fn fail_with(status: MtStatus, message: &str) -> MtStatus {
    store_message(message);
    status
}

/// Runs `body`, converting panics into `Internal` instead of unwinding into
/// foreign stack frames.
fn guarded(body: impl FnOnce() -> MtStatus) -> MtStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail_with(MtStatus::Internal, "internal panic"),
    }
}

unsafe fn view1<'a>(ptr: *const f64, len: usize) -> Option<ArrayView1<'a, f64>> {
    if ptr.is_null() {
        return None;
    }
    Some(ArrayView1::from(std::slice::from_raw_parts(ptr, len)))
}

unsafe fn view2<'a>(ptr: *const f64, rows: usize, cols: usize) -> Option<ArrayView2<'a, f64>> {
    if ptr.is_null() {
        return None;
    }
    let slice = std::slice::from_raw_parts(ptr, rows * cols);
    ArrayView2::from_shape((rows, cols), slice).ok()
}

unsafe fn labels_vec(ptr: *const u32, len: usize) -> Option<Vec<usize>> {
    if ptr.is_null() {
        return None;
    }
    Some(
        std::slice::from_raw_parts(ptr, len)
            .iter()
            .map(|&l| l as usize)
            .collect(),
    )
}

unsafe fn utf8_arg<'a>(ptr: *const c_char) -> std::result::Result<&'a str, MtStatus> {
    if ptr.is_null() {
        return Err(MtStatus::NullArgument);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| MtStatus::Parse)
}

/// Version string of the underlying library. Static storage; do not free.
#[no_mangle]
pub extern "C" fn mt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the calling thread's most recent failure, or null if
/// the last call succeeded. Valid until the next `mt_` call on this thread;
/// do not free.
#[no_mangle]
pub extern "C" fn mt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Frees a string returned by an `mt_` function that transfers ownership
/// (currently [`mt_population_summary_json`]). Null is ignored.
///
/// # Safety
/// `s` must be a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Modal assurance criterion between two mode shapes of length `len`,
/// written to `out`.
///
/// # Safety
/// `a` and `b` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_mac(
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> MtStatus {
    guarded(|| {
        let (Some(a), Some(b)) = (view1(a, len), view1(b, len)) else {
            return fail_with(MtStatus::NullArgument, "null mode-shape pointer");
        };
        if out.is_null() {
            return fail_with(MtStatus::NullArgument, "null output pointer");
        }
        match mac(a, b) {
            Ok(v) => {
                *out = v;
                MtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// MAC matrix between two mode-shape sets sharing `sensors` rows. Shapes are
/// `sensors x modes` row-major; `out` receives `source_modes x target_modes`
/// row-major MAC values.
///
/// # Safety
/// Buffers must match the stated dimensions; `out` must hold
/// `source_modes * target_modes` doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_mac_matrix(
    source_shapes: *const f64,
    target_shapes: *const f64,
    sensors: usize,
    source_modes: usize,
    target_modes: usize,
    out: *mut f64,
) -> MtStatus {
    guarded(|| {
        let (Some(s), Some(t)) = (
            view2(source_shapes, sensors, source_modes),
            view2(target_shapes, sensors, target_modes),
        ) else {
            return fail_with(MtStatus::NullArgument, "null or misshapen shape matrix");
        };
        if out.is_null() {
            return fail_with(MtStatus::NullArgument, "null output pointer");
        }
        for i in 0..source_modes {
            for j in 0..target_modes {
                match mac(s.column(i), t.column(j)) {
                    Ok(v) => *out.add(i * target_modes + j) = v,
                    Err(e) => return fail(e),
                }
            }
        }
        MtStatus::Ok
    })
}

/// Maximum mean discrepancy between two row-major sample blocks with `d`
/// features, using the pooled median-heuristic RBF kernel.
///
/// # Safety
/// `xs` must hold `ns * d` doubles and `xt` `nt * d`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_mmd(
    xs: *const f64,
    ns: usize,
    xt: *const f64,
    nt: usize,
    d: usize,
    out: *mut f64,
) -> MtStatus {
    guarded(|| {
        let (Some(xs), Some(xt)) = (view2(xs, ns, d), view2(xt, nt, d)) else {
            return fail_with(MtStatus::NullArgument, "null sample block");
        };
        if out.is_null() {
            return fail_with(MtStatus::NullArgument, "null output pointer");
        }
        match mmd(xs, xt, &KernelSpec::default()) {
            Ok(v) => {
                *out = v;
                MtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Joint MMD (marginal plus class-conditional terms) between two labeled
/// sample blocks. Labels are `uint32_t` class ids; every class must appear
/// in both domains.
///
/// # Safety
/// `xs`/`xt` must hold `ns * d` / `nt * d` doubles, `ys`/`yt` must hold
/// `ns` / `nt` labels; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_jmmd(
    xs: *const f64,
    ys: *const u32,
    ns: usize,
    xt: *const f64,
    yt: *const u32,
    nt: usize,
    d: usize,
    out: *mut f64,
) -> MtStatus {
    guarded(|| {
        let (Some(xs), Some(xt)) = (view2(xs, ns, d), view2(xt, nt, d)) else {
            return fail_with(MtStatus::NullArgument, "null sample block");
        };
        let (Some(ys), Some(yt)) = (labels_vec(ys, ns), labels_vec(yt, nt)) else {
            return fail_with(MtStatus::NullArgument, "null label block");
        };
        if out.is_null() {
            return fail_with(MtStatus::NullArgument, "null output pointer");
        }
        match jmmd(xs, &ys, xt, &yt, &KernelSpec::default()) {
            Ok(v) => {
                *out = v;
                MtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Proxy A-distance between two sample blocks: `2 (1 - 2 err)` for a kernel
/// ridge discriminator trained on a seeded random `split` fraction and
/// scored on the rest, clamped to `[0, 2]`.
///
/// # Safety
/// `xs` must hold `ns * d` doubles and `xt` `nt * d`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_pad(
    xs: *const f64,
    ns: usize,
    xt: *const f64,
    nt: usize,
    d: usize,
    split: f64,
    seed: u64,
    out: *mut f64,
) -> MtStatus {
    guarded(|| {
        let (Some(xs), Some(xt)) = (view2(xs, ns, d), view2(xt, nt, d)) else {
            return fail_with(MtStatus::NullArgument, "null sample block");
        };
        if out.is_null() {
            return fail_with(MtStatus::NullArgument, "null output pointer");
        }
        match pad(xs, xt, split, seed) {
            Ok(v) => {
                *out = v;
                MtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Normal-condition alignment: rescales target rows into source units so the
/// target baseline matches the source baseline's per-feature moments.
/// `normal_s` / `normal_t` flag baseline rows (nonzero = baseline). The
/// mapped target block (`nt x d`, row-major) is written to `out`.
///
/// # Safety
/// `xs`/`xt` must hold `ns * d` / `nt * d` doubles, the masks `ns` / `nt`
/// bytes, and `out` `nt * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_nca_map_target(
    xs: *const f64,
    normal_s: *const u8,
    ns: usize,
    xt: *const f64,
    normal_t: *const u8,
    nt: usize,
    d: usize,
    out: *mut f64,
) -> MtStatus {
    guarded(|| {
        let (Some(xs), Some(xt)) = (view2(xs, ns, d), view2(xt, nt, d)) else {
            return fail_with(MtStatus::NullArgument, "null sample block");
        };
        if normal_s.is_null() || normal_t.is_null() || out.is_null() {
            return fail_with(MtStatus::NullArgument, "null mask or output pointer");
        }
        let mask_s: Vec<bool> = std::slice::from_raw_parts(normal_s, ns)
            .iter()
            .map(|&b| b != 0)
            .collect();
        let mask_t: Vec<bool> = std::slice::from_raw_parts(normal_t, nt)
            .iter()
            .map(|&b| b != 0)
            .collect();
        match AlignmentStats::fit(xs, &mask_s, xt, &mask_t) {
            Ok(stats) => {
                let mapped = stats.map_target_to_source_units(xt);
                let flat = mapped.as_standard_layout();
                std::ptr::copy_nonoverlapping(flat.as_ptr(), out, nt * d);
                MtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// k-nearest-neighbour prediction with Euclidean distances. Distance ties go
/// to the lowest training index, vote ties to the smallest label. Predicted
/// labels for the `n_test` rows are written to `out`.
///
/// # Safety
/// `train_x` must hold `n_train * d` doubles, `train_y` `n_train` labels,
/// `test_x` `n_test * d` doubles, and `out` `n_test` labels.
#[no_mangle]
pub unsafe extern "C" fn mt_knn_predict(
    train_x: *const f64,
    train_y: *const u32,
    n_train: usize,
    test_x: *const f64,
    n_test: usize,
    d: usize,
    k: usize,
    out: *mut u32,
) -> MtStatus {
    guarded(|| {
        let (Some(train), Some(test)) = (view2(train_x, n_train, d), view2(test_x, n_test, d))
        else {
            return fail_with(MtStatus::NullArgument, "null sample block");
        };
        let Some(labels) = labels_vec(train_y, n_train) else {
            return fail_with(MtStatus::NullArgument, "null label block");
        };
        if out.is_null() {
            return fail_with(MtStatus::NullArgument, "null output pointer");
        }
        match knn_predict(train, &labels, test, k) {
            Ok(pred) => {
                for (i, p) in pred.iter().enumerate() {
                    *out.add(i) = *p as u32;
                }
                MtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Fraction of `pred` entries equal to `truth`, written to `out`.
///
/// # Safety
/// Both label buffers must hold `n` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_accuracy(
    pred: *const u32,
    truth: *const u32,
    n: usize,
    out: *mut f64,
) -> MtStatus {
    guarded(|| {
        let (Some(pred), Some(truth)) = (labels_vec(pred, n), labels_vec(truth, n)) else {
            return fail_with(MtStatus::NullArgument, "null label block");
        };
        if out.is_null() {
            return fail_with(MtStatus::NullArgument, "null output pointer");
        }
        match accuracy(&pred, &truth) {
            Ok(v) => {
                *out = v;
                MtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Per-mode damage-sensitivity curves of a uniform fixed-fixed chain:
/// min-max normalized |mode shape| against normalized frequency drop when
/// each of the `dof - 1` inter-mass springs is weakened by `reduction`.
/// Curves for 0-based `mode` are written to two `dof - 1` buffers.
///
/// # Safety
/// `out_displacement` and `out_frequency_shift` must each hold `dof - 1`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_sensitivity_curve(
    dof: usize,
    reduction: f64,
    mode: usize,
    out_displacement: *mut f64,
    out_frequency_shift: *mut f64,
) -> MtStatus {
    guarded(|| {
        if out_displacement.is_null() || out_frequency_shift.is_null() {
            return fail_with(MtStatus::NullArgument, "null output pointer");
        }
        let curves = match sensitivity_demo(dof, reduction) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let Some(curve) = curves.get(mode) else {
            return fail_with(
                MtStatus::InvalidArgument,
                &format!("mode {mode} out of range for a {dof}-dof chain"),
            );
        };
        std::ptr::copy_nonoverlapping(curve.displacement.as_ptr(), out_displacement, dof - 1);
        std::ptr::copy_nonoverlapping(
            curve.frequency_shift.as_ptr(),
            out_frequency_shift,
            dof - 1,
        );
        MtStatus::Ok
    })
}

/// Samples a structure population and returns a JSON summary string:
/// `[{"index", "ground_dofs", "n_samples", "n_features",
/// "natural_frequencies_rad_s"}]`. `config_json` is a population
/// configuration document, or null for the default population. Free the
/// result with [`mt_string_free`].
///
/// # Safety
/// `config_json`, when non-null, must be a NUL-terminated UTF-8 string;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_population_summary_json(
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> MtStatus {
    guarded(|| {
        if out.is_null() {
            return fail_with(MtStatus::NullArgument, "null output pointer");
        }
        let config = if config_json.is_null() {
            PopulationConfig::default()
        } else {
            let text = match utf8_arg(config_json) {
                Ok(t) => t,
                Err(s) => return fail_with(s, "config is not valid UTF-8"),
            };
            match PopulationConfig::from_json_str(text) {
                Ok(c) => c,
                Err(e) => return fail(e),
            }
        };
        let population = match generate_population(&config) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        let summary: Vec<serde_json::Value> = population
            .iter()
            .map(|s| {
                serde_json::json!({
                    "index": s.index,
                    "ground_dofs": s.ground_dofs,
                    "n_samples": s.dataset.n_samples(),
                    "n_features": s.dataset.n_features(),
                    "natural_frequencies_rad_s": s.modal.frequencies,
                })
            })
            .collect();
        let text = match serde_json::to_string(&summary) {
            Ok(t) => t,
            Err(e) => return fail(e.into()),
        };
        let owned = CString::new(text).expect("JSON contains no NUL bytes");
        *out = owned.into_raw();
        MtStatus::Ok
    })
}

/// A source/target transfer task built from two FRF dataset files, with the
/// windowed feature grouping used by subset selection.
pub struct MtTask {
    task: modal_transfer::dataset::TransferTask,
    groups: FeatureGroups,
}

fn load_task(source_path: &str, target_path: &str, window: usize) -> Result<MtTask> {
    let source = FrfDataset::load(Path::new(source_path))?;
    let target = FrfDataset::load(Path::new(target_path))?;
    let (task, groups) = frf_task(&source, &target, window)?;
    Ok(MtTask { task, groups })
}

/// Builds a transfer task from two FRF dataset files (`.json` or `.csv`, as
/// written by the `modal-transfer ingest-frf` tool), reducing each FRF to
/// `window` magnitude bins around every natural frequency. Returns null on
/// failure (see [`mt_last_error_message`]); release with [`mt_task_free`].
///
/// # Safety
/// Both paths must be NUL-terminated UTF-8 strings.
#[no_mangle]
pub unsafe extern "C" fn mt_task_load(
    source_path: *const c_char,
    target_path: *const c_char,
    window: usize,
) -> *mut MtTask {
    clear_error();
    let parse = || -> std::result::Result<(&str, &str), MtStatus> {
        Ok((utf8_arg(source_path)?, utf8_arg(target_path)?))
    };
    let (source, target) = match parse() {
        Ok(pair) => pair,
        Err(status) => {
            fail_with(status, "invalid path argument");
            return std::ptr::null_mut();
        }
    };
    match catch_unwind(|| load_task(source, target, window)) {
        Ok(Ok(task)) => Box::into_raw(Box::new(task)),
        Ok(Err(e)) => {
            fail(e);
            std::ptr::null_mut()
        }
        Err(_) => {
            fail_with(MtStatus::Internal, "internal panic");
            std::ptr::null_mut()
        }
    }
}

/// Releases a task handle. Null is ignored.
///
/// # Safety
/// `task` must come from [`mt_task_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mt_task_free(task: *mut MtTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// Basic dimensions of a task: feature count, source rows, target rows, and
/// number of windowed modes. Null out-pointers are skipped.
///
/// # Safety
/// `task` must be a live handle from [`mt_task_load`].
#[no_mangle]
pub unsafe extern "C" fn mt_task_info(
    task: *const MtTask,
    out_features: *mut usize,
    out_source_rows: *mut usize,
    out_target_rows: *mut usize,
    out_modes: *mut usize,
) -> MtStatus {
    guarded(|| {
        let Some(handle) = task.as_ref() else {
            return fail_with(MtStatus::NullArgument, "null task handle");
        };
        if !out_features.is_null() {
            *out_features = handle.task.source.n_features();
        }
        if !out_source_rows.is_null() {
            *out_source_rows = handle.task.source.n_samples();
        }
        if !out_target_rows.is_null() {
            *out_target_rows = handle.task.target.n_samples();
        }
        if !out_modes.is_null() {
            *out_modes = handle.groups.len();
        }
        MtStatus::Ok
    })
}

/// Mean MAC between the task's source and target modal models under
/// best-match mode pairing, written to `out`.
///
/// # Safety
/// `task` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_task_modal_similarity(
    task: *const MtTask,
    out: *mut f64,
) -> MtStatus {
    guarded(|| {
        let Some(handle) = task.as_ref() else {
            return fail_with(MtStatus::NullArgument, "null task handle");
        };
        if out.is_null() {
            return fail_with(MtStatus::NullArgument, "null output pointer");
        }
        match modal_similarity(&handle.task.source_modal, &handle.task.target_modal) {
            Ok(v) => {
                *out = v;
                MtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Exhaustive subset selection on a task: picks `subset_size` of the
/// windowed mode groups trading cross-validated source 1-NN loss against
/// modal similarity with weight `lambda`. Selected source and paired target
/// group indices are written to the two `subset_size`-length buffers and the
/// combined score to `out_score` (null skips it).
///
/// # Safety
/// `task` must be a live handle; index buffers must hold `subset_size`
/// entries.
#[no_mangle]
pub unsafe extern "C" fn mt_task_select_features(
    task: *const MtTask,
    subset_size: usize,
    lambda: f64,
    folds: usize,
    out_source_groups: *mut usize,
    out_target_groups: *mut usize,
    out_score: *mut f64,
) -> MtStatus {
    guarded(|| {
        let Some(handle) = task.as_ref() else {
            return fail_with(MtStatus::NullArgument, "null task handle");
        };
        if out_source_groups.is_null() || out_target_groups.is_null() {
            return fail_with(MtStatus::NullArgument, "null index buffer");
        }
        let mut config = TfcConfig::new(subset_size, lambda);
        config.folds = folds;
        config.groups = Some(handle.groups.clone());
        match select_features(&handle.task, &config) {
            Ok(sel) => {
                std::ptr::copy_nonoverlapping(sel.v_s.as_ptr(), out_source_groups, subset_size);
                std::ptr::copy_nonoverlapping(sel.v_t.as_ptr(), out_target_groups, subset_size);
                if !out_score.is_null() {
                    *out_score = sel.score;
                }
                MtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs one named method on a task and writes `[source accuracy, target
/// accuracy, joint MMD]` to the 3-element `out_metrics` buffer. Method names
/// match the CLI: `noDA`, `NCA`, `PCA`, `TCA`, `BDA`, `TFC`, `TFC+TCA`,
/// `TFC+BDA` (case-insensitive). `subset_size`/`lambda` parameterize the
/// TFC family, `latent_dim`/`latent_mu` the kernel methods; nonzero `loo`
/// evaluates leave-one-out instead of the stored train/test split.
///
/// # Safety
/// `task` must be a live handle, `method` a NUL-terminated string, and
/// `out_metrics` a writable 3-element double buffer.
#[no_mangle]
pub unsafe extern "C" fn mt_task_run_method(
    task: *const MtTask,
    method: *const c_char,
    subset_size: usize,
    lambda: f64,
    latent_dim: usize,
    latent_mu: f64,
    loo: u8,
    out_metrics: *mut f64,
) -> MtStatus {
    guarded(|| {
        let Some(handle) = task.as_ref() else {
            return fail_with(MtStatus::NullArgument, "null task handle");
        };
        if out_metrics.is_null() {
            return fail_with(MtStatus::NullArgument, "null metrics buffer");
        }
        let name = match utf8_arg(method) {
            Ok(n) => n,
            Err(s) => return fail_with(s, "invalid method name"),
        };
        let method = match Method::parse(name) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let hyper = SelectedHyper {
            tfc: Theta {
                d: subset_size,
                lambda,
            },
            tca: Theta {
                d: latent_dim,
                lambda: latent_mu,
            },
            bda: Theta {
                d: latent_dim,
                lambda: latent_mu,
            },
        };
        let spec = MethodSpec::resolve(method, &hyper);
        let opts = EvalOptions {
            groups: Some(handle.groups.clone()),
            loo: loo != 0,
            ..EvalOptions::default()
        };
        let result = run_task(&handle.task, &spec, &opts);
        let Some(outcome) = result.outcome(method) else {
            return fail_with(MtStatus::Internal, "method outcome missing");
        };
        if let Some(message) = &outcome.error {
            return fail_with(MtStatus::Numerical, message);
        }
        *out_metrics = outcome.source_accuracy.unwrap_or(f64::NAN);
        *out_metrics.add(1) = outcome.target_accuracy.unwrap_or(f64::NAN);
        *out_metrics.add(2) = outcome.jmmd.unwrap_or(f64::NAN);
        MtStatus::Ok
    })
}
