//! Thin wrappers over the system LAPACK/BLAS routines used by this crate.
//!
//! Only three external routines are bound: `dsyevd` (symmetric
//! eigendecomposition), `dgeev` (general real eigenvalues) and `dgemm`
//! (matrix products on the hot paths). `ndarray` stores row-major while
//! LAPACK expects column-major; each wrapper documents how it bridges the
//! two. Small factorizations that are never performance-critical (Cholesky
//! of a mass matrix, triangular solves) are implemented directly.

use ndarray::{Array1, Array2, ArrayView2};

use crate::{Error, Result};

extern "C" {
    fn dsyevd_(
        jobz: *const u8,
        uplo: *const u8,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        w: *mut f64,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );

    fn dgeev_(
        jobvl: *const u8,
        jobvr: *const u8,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        wr: *mut f64,
        wi: *mut f64,
        vl: *mut f64,
        ldvl: *const i32,
        vr: *mut f64,
        ldvr: *const i32,
        work: *mut f64,
        lwork: *const i32,
        info: *mut i32,
    );

    fn dgemm_(
        transa: *const u8,
        transb: *const u8,
        m: *const i32,
        n: *const i32,
        k: *const i32,
        alpha: *const f64,
        a: *const f64,
        lda: *const i32,
        b: *const f64,
        ldb: *const i32,
        beta: *const f64,
        c: *mut f64,
        ldc: *const i32,
    );
}

fn as_i32(n: usize, what: &str) -> Result<i32> {
    i32::try_from(n).map_err(|_| Error::Numerical(format!("{what} dimension {n} too large")))
}

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues ascending and the matching eigenvectors as columns.
/// The input buffer is handed to LAPACK unchanged: a symmetric matrix reads
/// the same row- and column-major.
pub fn sym_eigh(a: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "symmetric eigendecomposition needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let n_i = as_i32(n, "matrix")?;
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut w = vec![0.0f64; n];
    let mut info: i32 = 0;

    // Workspace query.
    let mut work_probe = [0.0f64];
    let mut iwork_probe = [0i32];
    let neg1: i32 = -1;
    unsafe {
        dsyevd_(
            b"V".as_ptr(),
            b"L".as_ptr(),
            &n_i,
            buf.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            work_probe.as_mut_ptr(),
            &neg1,
            iwork_probe.as_mut_ptr(),
            &neg1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!("dsyevd workspace query failed: info = {info}")));
    }
    let lwork = work_probe[0] as usize;
    let liwork = iwork_probe[0] as usize;
    let mut work = vec![0.0f64; lwork.max(1)];
    let mut iwork = vec![0i32; liwork.max(1)];
    let lwork_i = as_i32(work.len(), "workspace")?;
    let liwork_i = as_i32(iwork.len(), "workspace")?;
    unsafe {
        dsyevd_(
            b"V".as_ptr(),
            b"L".as_ptr(),
            &n_i,
            buf.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork_i,
            iwork.as_mut_ptr(),
            &liwork_i,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!(
            "symmetric eigendecomposition did not converge: info = {info}"
        )));
    }
    // Column j of the column-major result occupies buf[j*n .. (j+1)*n].
    let mut vecs = Array2::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            vecs[[i, j]] = buf[j * n + i];
        }
    }
    Ok((Array1::from(w), vecs))
}

/// Eigenvalues of a general real matrix as `(re, im)` pairs.
///
/// The row-major buffer is passed directly; LAPACK then sees the transpose,
/// which has the same spectrum.
pub fn general_eigvals(a: ArrayView2<'_, f64>) -> Result<Vec<(f64, f64)>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "eigenvalues need a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let n_i = as_i32(n, "matrix")?;
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut wr = vec![0.0f64; n];
    let mut wi = vec![0.0f64; n];
    let mut info: i32 = 0;
    let one: i32 = 1;
    let neg1: i32 = -1;
    let mut work_probe = [0.0f64];
    unsafe {
        dgeev_(
            b"N".as_ptr(),
            b"N".as_ptr(),
            &n_i,
            buf.as_mut_ptr(),
            &n_i,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            std::ptr::null_mut(),
            &one,
            std::ptr::null_mut(),
            &one,
            work_probe.as_mut_ptr(),
            &neg1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!("dgeev workspace query failed: info = {info}")));
    }
    let mut work = vec![0.0f64; (work_probe[0] as usize).max(1)];
    let lwork_i = as_i32(work.len(), "workspace")?;
    unsafe {
        dgeev_(
            b"N".as_ptr(),
            b"N".as_ptr(),
            &n_i,
            buf.as_mut_ptr(),
            &n_i,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            std::ptr::null_mut(),
            &one,
            std::ptr::null_mut(),
            &one,
            work.as_mut_ptr(),
            &lwork_i,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!(
            "general eigenvalue computation did not converge: info = {info}"
        )));
    }
    Ok(wr.into_iter().zip(wi).collect())
}

/// `C = A op(B)` variants via BLAS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// Matrix product `op_a(A) . op_b(B)` through `dgemm`.
///
/// Row-major arrays are multiplied by computing the transposed product in
/// column-major order: `C_rm = op_a(A) op_b(B)` equals
/// `C_cm^T = op_b(B)^T op_a(A)^T`, so operands are swapped and the transpose
/// flags inverted relative to the caller's view.
pub fn gemm(a: ArrayView2<'_, f64>, ta: Trans, b: ArrayView2<'_, f64>, tb: Trans) -> Result<Array2<f64>> {
    let (am, ak) = match ta {
        Trans::No => (a.nrows(), a.ncols()),
        Trans::Yes => (a.ncols(), a.nrows()),
    };
    let (bk, bn) = match tb {
        Trans::No => (b.nrows(), b.ncols()),
        Trans::Yes => (b.ncols(), b.nrows()),
    };
    if ak != bk {
        return Err(Error::ShapeMismatch(format!(
            "matrix product inner dimensions differ: {ak} vs {bk}"
        )));
    }
    let a_std = a.as_standard_layout();
    let b_std = b.as_standard_layout();
    let a_buf = a_std.as_slice().expect("standard layout");
    let b_buf = b_std.as_slice().expect("standard layout");
    let mut c = vec![0.0f64; am * bn];
    if am == 0 || bn == 0 {
        return Ok(Array2::from_shape_vec((am, bn), c).expect("shape"));
    }
    if ak == 0 {
        return Ok(Array2::from_shape_vec((am, bn), c).expect("shape"));
    }
    // In column-major terms the row-major buffer of A is A^T, with leading
    // dimension ncols(A). The column-major product C^T = op_b(B)^T op_a(A)^T
    // therefore uses each buffer with the caller's own transpose flag.
    let flag = |t: Trans| match t {
        Trans::No => b"N".as_ptr(),
        Trans::Yes => b"T".as_ptr(),
    };
    let m_i = as_i32(bn, "matrix")?;
    let n_i = as_i32(am, "matrix")?;
    let k_i = as_i32(ak, "matrix")?;
    let lda = as_i32(b.ncols().max(1), "matrix")?;
    let ldb = as_i32(a.ncols().max(1), "matrix")?;
    let ldc = as_i32(bn.max(1), "matrix")?;
    let alpha = 1.0f64;
    let beta = 0.0f64;
    unsafe {
        dgemm_(
            flag(tb),
            flag(ta),
            &m_i,
            &n_i,
            &k_i,
            &alpha,
            b_buf.as_ptr(),
            &lda,
            a_buf.as_ptr(),
            &ldb,
            &beta,
            c.as_mut_ptr(),
            &ldc,
        );
    }
    Ok(Array2::from_shape_vec((am, bn), c).expect("shape"))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Pure-Rust implementation; only used on small matrices (mass matrices and
/// ridge systems), so no LAPACK binding is needed.
pub fn cholesky_lower(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "Cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "matrix is not positive definite at pivot {i}"
                    )));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves `L X = B` (or `L^T X = B`) for a lower-triangular `L`.
pub fn solve_lower_triangular(
    l: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    transpose: bool,
) -> Result<Array2<f64>> {
    let n = l.nrows();
    if l.ncols() != n || b.nrows() != n {
        return Err(Error::ShapeMismatch(
            "triangular solve dimensions do not agree".into(),
        ));
    }
    let m = b.ncols();
    let mut x = b.to_owned();
    if !transpose {
        for col in 0..m {
            for i in 0..n {
                let mut sum = x[[i, col]];
                for k in 0..i {
                    sum -= l[[i, k]] * x[[k, col]];
                }
                x[[i, col]] = sum / l[[i, i]];
            }
        }
    } else {
        for col in 0..m {
            for i in (0..n).rev() {
                let mut sum = x[[i, col]];
                for k in (i + 1)..n {
                    sum -= l[[k, i]] * x[[k, col]];
                }
                x[[i, col]] = sum / l[[i, i]];
            }
        }
    }
    Ok(x)
}

/// Solves the SPD system `A x = b` via Cholesky.
pub fn solve_spd(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let l = cholesky_lower(a)?;
    let y = solve_lower_triangular(l.view(), b, false)?;
    solve_lower_triangular(l.view(), y.view(), true)
}
