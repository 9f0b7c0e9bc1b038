//! Lumped-parameter chain models and modal analysis.
//!
//! A structure is a chain of point masses joined by springs and viscous
//! dampers. Element `springs[0]` ties mass 0 to the left wall, `springs[n]`
//! ties mass `n-1` to the right wall, and interior entries join neighbouring
//! masses. Additional mass-to-ground attachments model support conditions
//! that vary across a population.
//!
//! Modal quantities follow the usual conventions for the generalized
//! symmetric eigenproblem `K psi = omega^2 M psi`:
//!
//! * undamped modes are mass-normalised (`psi' M psi = 1`) and sorted by
//!   ascending frequency, with the first non-negligible shape component made
//!   positive so results are reproducible;
//! * damped natural frequencies come from the eigenvalues of the first-order
//!   state matrix `[[0, I], [-M^-1 K, -M^-1 C]]`, taking `|Im(lambda)|` of
//!   each oscillatory conjugate pair;
//! * receptance FRFs use modal superposition with modal damping ratios
//!   `zeta_i = psi_i' C psi_i / (2 omega_i)`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

/// Relative threshold below which an eigenvalue's imaginary part is treated
/// as zero when classifying state-space eigenvalues.
const OSCILLATORY_IM_TOL: f64 = 1e-9;

/// A mass-to-ground attachment at one chain DoF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundAttachment {
    /// Index of the attached mass (0-based).
    pub dof: usize,
    /// Spring constant of the attachment, N/m.
    pub stiffness: f64,
    /// Damper constant of the attachment, Ns/m.
    pub damping: f64,
}

/// Physical description of a spring-mass-damper chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    /// Lumped masses, kg. Length defines the DoF count `n`.
    pub masses: Vec<f64>,
    /// Spring constants, N/m, length `n + 1`. Entries 0 and `n` are the wall
    /// springs; set either to zero for a free end.
    pub springs: Vec<f64>,
    /// Damper constants, Ns/m, length `n + 1`, same topology as `springs`.
    pub dampers: Vec<f64>,
    /// Extra mass-to-ground attachments.
    pub ground: Vec<GroundAttachment>,
}

impl StructureSpec {
    /// Uniform chain helper: `n` equal masses, equal springs and dampers on
    /// every element including both walls, no extra ground attachments.
    pub fn uniform(n: usize, mass: f64, stiffness: f64, damping: f64) -> Self {
        StructureSpec {
            masses: vec![mass; n],
            springs: vec![stiffness; n + 1],
            dampers: vec![damping; n + 1],
            ground: Vec::new(),
        }
    }

    /// Number of degrees of freedom.
    pub fn dof(&self) -> usize {
        self.masses.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if n == 0 {
            return Err(Error::InvalidSpec("structure has no masses".into()));
        }
        if self.springs.len() != n + 1 {
            return Err(Error::InvalidSpec(format!(
                "expected {} springs for {} masses, got {}",
                n + 1,
                n,
                self.springs.len()
            )));
        }
        if self.dampers.len() != n + 1 {
            return Err(Error::InvalidSpec(format!(
                "expected {} dampers for {} masses, got {}",
                n + 1,
                n,
                self.dampers.len()
            )));
        }
        for (i, &m) in self.masses.iter().enumerate() {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidSpec(format!("mass {i} = {m} must be positive")));
            }
        }
        for (i, &k) in self.springs.iter().enumerate() {
            if !(k.is_finite() && k >= 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "spring {i} = {k} must be non-negative"
                )));
            }
        }
        for (i, &c) in self.dampers.iter().enumerate() {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "damper {i} = {c} must be non-negative"
                )));
            }
        }
        for g in &self.ground {
            if g.dof >= n {
                return Err(Error::InvalidSpec(format!(
                    "ground attachment at DoF {} out of range for {} masses",
                    g.dof, n
                )));
            }
            if !(g.stiffness.is_finite() && g.stiffness >= 0.0)
                || !(g.damping.is_finite() && g.damping >= 0.0)
            {
                return Err(Error::InvalidSpec(format!(
                    "ground attachment at DoF {} has negative or non-finite constants",
                    g.dof
                )));
            }
        }
        Ok(())
    }
}

/// Assembled second-order system matrices.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub mass: Array2<f64>,
    pub stiffness: Array2<f64>,
    pub damping: Array2<f64>,
}

impl SystemMatrices {
    pub fn dof(&self) -> usize {
        self.mass.nrows()
    }
}

/// Builds `M`, `K` and `C` for a chain description.
///
/// `K` is tridiagonal plus diagonal ground terms; `C` is assembled on the
/// same topology from the damper constants; `M` is diagonal.
pub fn assemble_matrices(spec: &StructureSpec) -> Result<SystemMatrices> {
    spec.validate()?;
    let n = spec.dof();
    let mut mass = Array2::zeros((n, n));
    let mut stiffness = Array2::zeros((n, n));
    let mut damping = Array2::zeros((n, n));
    for i in 0..n {
        mass[[i, i]] = spec.masses[i];
        stiffness[[i, i]] = spec.springs[i] + spec.springs[i + 1];
        damping[[i, i]] = spec.dampers[i] + spec.dampers[i + 1];
        if i + 1 < n {
            stiffness[[i, i + 1]] = -spec.springs[i + 1];
            stiffness[[i + 1, i]] = -spec.springs[i + 1];
            damping[[i, i + 1]] = -spec.dampers[i + 1];
            damping[[i + 1, i]] = -spec.dampers[i + 1];
        }
    }
    for g in &spec.ground {
        stiffness[[g.dof, g.dof]] += g.stiffness;
        damping[[g.dof, g.dof]] += g.damping;
    }
    Ok(SystemMatrices {
        mass,
        stiffness,
        damping,
    })
}

/// Undamped modal model: frequencies in rad/s (ascending) and one shape per
/// column of `shapes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalModel {
    /// Undamped natural frequencies, rad/s, ascending.
    pub frequencies: Vec<f64>,
    /// Mode shapes, `sensors x modes`; column `j` belongs to `frequencies[j]`.
    pub shapes: Array2<f64>,
    /// Whether shapes satisfy `psi' M psi = 1`.
    pub mass_normalized: bool,
}

impl ModalModel {
    pub fn n_modes(&self) -> usize {
        self.frequencies.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.shapes.nrows()
    }

    pub fn mode(&self, j: usize) -> ArrayView1<'_, f64> {
        self.shapes.column(j)
    }

    /// Serialises to the documented JSON form (`shapes` is a list of modes,
    /// each a list over sensors).
    pub fn to_json(&self) -> Result<String> {
        let file = ModalModelFile::from(self);
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses and validates the documented JSON form.
    pub fn from_json(text: &str) -> Result<ModalModel> {
        let file: ModalModelFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// Wire format for [`ModalModel`]: one entry of `shapes` per mode.
#[derive(Debug, Serialize, Deserialize)]
struct ModalModelFile {
    frequencies: Vec<f64>,
    shapes: Vec<Vec<f64>>,
    mass_normalized: bool,
}

impl From<&ModalModel> for ModalModelFile {
    fn from(m: &ModalModel) -> Self {
        ModalModelFile {
            frequencies: m.frequencies.clone(),
            shapes: m
                .shapes
                .columns()
                .into_iter()
                .map(|c| c.to_vec())
                .collect(),
            mass_normalized: m.mass_normalized,
        }
    }
}

impl TryFrom<ModalModelFile> for ModalModel {
    type Error = Error;

    fn try_from(f: ModalModelFile) -> Result<ModalModel> {
        if f.shapes.len() != f.frequencies.len() {
            return Err(Error::parse(
                "shapes",
                format!(
                    "{} mode shapes for {} frequencies",
                    f.shapes.len(),
                    f.frequencies.len()
                ),
            ));
        }
        if f.frequencies.is_empty() {
            return Err(Error::parse("frequencies", "no modes"));
        }
        let sensors = f.shapes[0].len();
        if sensors == 0 {
            return Err(Error::parse("shapes", "mode 0 has no sensors"));
        }
        for (j, s) in f.shapes.iter().enumerate() {
            if s.len() != sensors {
                return Err(Error::parse(
                    "shapes",
                    format!("mode {j} has {} sensors, expected {sensors}", s.len()),
                ));
            }
        }
        if f.frequencies.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::parse("frequencies", "not ascending"));
        }
        if f.frequencies.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::parse("frequencies", "negative or non-finite value"));
        }
        let mut shapes = Array2::zeros((sensors, f.frequencies.len()));
        for (j, s) in f.shapes.iter().enumerate() {
            for (i, &v) in s.iter().enumerate() {
                shapes[[i, j]] = v;
            }
        }
        Ok(ModalModel {
            frequencies: f.frequencies,
            shapes,
            mass_normalized: f.mass_normalized,
        })
    }
}

/// Flips the sign of each column so its first non-negligible entry is
/// positive.
fn fix_mode_signs(shapes: &mut Array2<f64>) {
    for mut col in shapes.columns_mut() {
        let max_abs = col.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if max_abs == 0.0 {
            continue;
        }
        let lead = col.iter().find(|v| v.abs() > 1e-12 * max_abs);
        if let Some(&v) = lead {
            if v < 0.0 {
                col.mapv_inplace(|x| -x);
            }
        }
    }
}

/// Solves `K psi = omega^2 M psi` for all modes.
///
/// Returns mass-normalised shapes and ascending frequencies. The reduction
/// uses the Cholesky factor of `M`, so `M` must be positive definite.
pub fn undamped_modes(mats: &SystemMatrices) -> Result<ModalModel> {
    let n = mats.dof();
    if mats.stiffness.nrows() != n || mats.damping.nrows() != n {
        return Err(Error::ShapeMismatch(
            "mass, stiffness and damping dimensions differ".into(),
        ));
    }
    // Reduce to a standard symmetric problem. Lumped chains have diagonal
    // mass, where S = D^-1/2 K D^-1/2; a general SPD mass goes through its
    // Cholesky factor.
    let diag = diagonal_entries(&mats.mass);
    let (s, shapes_for): (Array2<f64>, Box<dyn Fn(&Array2<f64>) -> Result<Array2<f64>>>) =
        if let Some(d) = diag {
            for (i, &m) in d.iter().enumerate() {
                if m <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "mass matrix is not positive definite at entry {i}"
                    )));
                }
            }
            let inv_sqrt: Vec<f64> = d.iter().map(|m| 1.0 / m.sqrt()).collect();
            let mut s = mats.stiffness.clone();
            for ((i, j), v) in s.indexed_iter_mut() {
                *v *= inv_sqrt[i] * inv_sqrt[j];
            }
            let scale = inv_sqrt;
            (
                s,
                Box::new(move |vecs: &Array2<f64>| {
                    let mut out = vecs.clone();
                    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                        row.mapv_inplace(|x| x * scale[i]);
                    }
                    Ok(out)
                }),
            )
        } else {
            let l = linalg::cholesky_lower(mats.mass.view())?;
            let kl = linalg::solve_lower_triangular(l.view(), mats.stiffness.view(), false)?;
            let s_t = linalg::solve_lower_triangular(l.view(), kl.t().to_owned().view(), false)?;
            let s = 0.5 * (&s_t + &s_t.t());
            (
                s,
                Box::new(move |vecs: &Array2<f64>| {
                    linalg::solve_lower_triangular(l.view(), vecs.view(), true)
                }),
            )
        };
    let (vals, vecs) = linalg::sym_eigh(s.view())?;
    // Back-transform preserves psi' M psi = v' v = 1.
    let shapes_unsorted = shapes_for(&vecs)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let mut frequencies = Vec::with_capacity(n);
    let mut shapes = Array2::zeros((n, n));
    for (j, &src) in order.iter().enumerate() {
        let lam = vals[src];
        if !lam.is_finite() || lam < -1e-8 * vals[order[n - 1]].abs().max(1.0) {
            return Err(Error::Numerical(format!(
                "negative stiffness eigenvalue {lam}; structure is not stable"
            )));
        }
        frequencies.push(lam.max(0.0).sqrt());
        shapes.column_mut(j).assign(&shapes_unsorted.column(src));
    }
    fix_mode_signs(&mut shapes);
    Ok(ModalModel {
        frequencies,
        shapes,
        mass_normalized: true,
    })
}

/// Damped natural frequencies from the first-order state matrix.
///
/// Eigenvalues of `[[0, I], [-M^-1 K, -M^-1 C]]` come in conjugate pairs
/// `-zeta omega +/- i omega_d` for underdamped modes; this returns the
/// ascending `omega_d = |Im(lambda)|`. A pair that has collapsed onto the
/// real axis has no oscillatory frequency and raises
/// [`Error::DegenerateDamping`] with the index of the first missing mode.
pub fn damped_frequencies(mats: &SystemMatrices) -> Result<Vec<f64>> {
    let n = mats.dof();
    let minv_k = solve_diag_or_general(&mats.mass, &mats.stiffness)?;
    let minv_c = solve_diag_or_general(&mats.mass, &mats.damping)?;
    let mut state = Array2::zeros((2 * n, 2 * n));
    for i in 0..n {
        state[[i, n + i]] = 1.0;
        for j in 0..n {
            state[[n + i, j]] = -minv_k[[i, j]];
            state[[n + i, n + j]] = -minv_c[[i, j]];
        }
    }
    let vals = linalg::general_eigvals(state.view())?;
    let scale = vals
        .iter()
        .fold(0.0f64, |a, (re, im)| a.max(re.hypot(*im)))
        .max(f64::MIN_POSITIVE);
    let mut omega_d: Vec<f64> = vals
        .iter()
        .filter(|(_, im)| *im > OSCILLATORY_IM_TOL * scale)
        .map(|(_, im)| *im)
        .collect();
    omega_d.sort_by(f64::total_cmp);
    if omega_d.len() != n {
        return Err(Error::DegenerateDamping {
            mode: omega_d.len(),
        });
    }
    Ok(omega_d)
}

/// Diagonal of `m` if it is exactly diagonal, else `None`.
fn diagonal_entries(m: &Array2<f64>) -> Option<Vec<f64>> {
    let diagonal = m.indexed_iter().all(|((i, j), &v)| i == j || v == 0.0);
    diagonal.then(|| (0..m.nrows()).map(|i| m[[i, i]]).collect())
}

/// `M^-1 B`, using the cheap path when `M` is diagonal.
fn solve_diag_or_general(m: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    if b.nrows() != n || b.ncols() != n {
        return Err(Error::ShapeMismatch(
            "state-space blocks must be square and equal-sized".into(),
        ));
    }
    if let Some(d) = diagonal_entries(m) {
        let mut out = b.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let mi = d[i];
            if mi <= 0.0 {
                return Err(Error::InvalidSpec(format!("mass {i} = {mi} must be positive")));
            }
            row.mapv_inplace(|x| x / mi);
        }
        Ok(out)
    } else {
        let l = linalg::cholesky_lower(m.view())?;
        let y = linalg::solve_lower_triangular(l.view(), b.view(), false)?;
        linalg::solve_lower_triangular(l.view(), y.view(), true)
    }
}

/// Modal stiffness `psi' K psi` of one shape.
pub fn modal_stiffness(shape: ArrayView1<'_, f64>, stiffness: ArrayView2<'_, f64>) -> f64 {
    shape.dot(&stiffness.dot(&shape))
}

/// Modal mass `psi' M psi` of one shape.
pub fn modal_mass(shape: ArrayView1<'_, f64>, mass: ArrayView2<'_, f64>) -> f64 {
    shape.dot(&mass.dot(&shape))
}

/// Receptance FRF magnitude `|H_pq(omega)|` by modal superposition.
///
/// `H_pq(omega) = sum_i psi_pi psi_qi / (omega_i^2 - omega^2 + 2 i zeta_i
/// omega_i omega)` with modal damping ratios taken from `mats.damping`.
/// Requires a mass-normalised model. Evaluating exactly at an undamped pole
/// is an error.
pub fn frf_magnitude(
    modal: &ModalModel,
    mats: &SystemMatrices,
    force_dof: usize,
    response_dof: usize,
    freqs: &[f64],
) -> Result<Vec<f64>> {
    if !modal.mass_normalized {
        return Err(Error::InvalidConfig(
            "FRF synthesis requires mass-normalised mode shapes".into(),
        ));
    }
    let n = modal.n_sensors();
    if mats.damping.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "damping matrix is {}x{} but shapes have {} sensors",
            mats.damping.nrows(),
            mats.damping.ncols(),
            n
        )));
    }
    if force_dof >= n || response_dof >= n {
        return Err(Error::InvalidConfig(format!(
            "force DoF {force_dof} or response DoF {response_dof} out of range for {n} DoF"
        )));
    }
    let m = modal.n_modes();
    let mut zetas = Vec::with_capacity(m);
    for j in 0..m {
        let shape = modal.mode(j);
        let w = modal.frequencies[j];
        if w <= 0.0 {
            return Err(Error::Numerical(
                "FRF synthesis needs strictly positive natural frequencies".into(),
            ));
        }
        zetas.push(modal_stiffness(shape, mats.damping.view()) / (2.0 * w));
    }
    let mut out = Vec::with_capacity(freqs.len());
    for &w in freqs {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "FRF frequency {w} must be finite and non-negative"
            )));
        }
        let mut re = 0.0f64;
        let mut im = 0.0f64;
        for j in 0..m {
            let wi = modal.frequencies[j];
            let dr = wi * wi - w * w;
            let di = 2.0 * zetas[j] * wi * w;
            if dr == 0.0 && di == 0.0 {
                return Err(Error::Numerical(format!(
                    "FRF evaluated at undamped pole omega = {w}"
                )));
            }
            let num = modal.shapes[[force_dof, j]] * modal.shapes[[response_dof, j]];
            let den = dr * dr + di * di;
            re += num * dr / den;
            im += -num * di / den;
        }
        out.push((re * re + im * im).sqrt());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn two_dof_unit() -> SystemMatrices {
        assemble_matrices(&StructureSpec::uniform(2, 1.0, 1.0, 0.0)).unwrap()
    }

    // ==== assembly ====

    #[test]
    fn assembles_tridiagonal_chain_with_ground_terms() {
        let mut spec = StructureSpec::uniform(3, 2.0, 5.0, 0.5);
        spec.ground.push(GroundAttachment {
            dof: 1,
            stiffness: 7.0,
            damping: 0.25,
        });
        let mats = assemble_matrices(&spec).unwrap();
        assert_eq!(mats.mass[[0, 0]], 2.0);
        assert_eq!(mats.stiffness[[0, 0]], 10.0);
        assert_eq!(mats.stiffness[[1, 1]], 17.0); // 5 + 5 + 7 ground
        assert_eq!(mats.stiffness[[0, 1]], -5.0);
        assert_eq!(mats.stiffness[[0, 2]], 0.0);
        assert_eq!(mats.damping[[1, 1]], 1.25);
        assert_eq!(mats.damping[[1, 0]], -0.5);
    }

    #[test]
    fn rejects_non_positive_mass() {
        let mut spec = StructureSpec::uniform(2, 1.0, 1.0, 0.0);
        spec.masses[1] = 0.0;
        assert!(matches!(
            assemble_matrices(&spec),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn rejects_ground_attachment_out_of_range() {
        let mut spec = StructureSpec::uniform(2, 1.0, 1.0, 0.0);
        spec.ground.push(GroundAttachment {
            dof: 2,
            stiffness: 1.0,
            damping: 0.0,
        });
        assert!(matches!(
            assemble_matrices(&spec),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn rejects_wrong_spring_count() {
        let spec = StructureSpec {
            masses: vec![1.0, 1.0],
            springs: vec![1.0, 1.0],
            dampers: vec![0.0, 0.0, 0.0],
            ground: Vec::new(),
        };
        assert!(matches!(
            assemble_matrices(&spec),
            Err(Error::InvalidSpec(_))
        ));
    }

    // ==== undamped modes ====

    #[test]
    fn two_dof_unit_chain_has_known_modes() {
        // K = [[2,-1],[-1,2]], M = I: omega^2 = {1, 3}, shapes (1,1)/sqrt(2)
        // and (1,-1)/sqrt(2).
        let modal = undamped_modes(&two_dof_unit()).unwrap();
        assert_relative_eq!(modal.frequencies[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(modal.frequencies[1], 3f64.sqrt(), max_relative = 1e-12);
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(modal.shapes[[0, 0]], s, epsilon = 1e-12);
        assert_abs_diff_eq!(modal.shapes[[1, 0]], s, epsilon = 1e-12);
        assert_abs_diff_eq!(modal.shapes[[0, 1]], s, epsilon = 1e-12);
        assert_abs_diff_eq!(modal.shapes[[1, 1]], -s, epsilon = 1e-12);
    }

    #[test]
    fn modes_are_mass_normalised_and_residual_free() {
        let mut spec = StructureSpec::uniform(10, 85008.0, 6.7647e9, 6.4);
        spec.ground.push(GroundAttachment {
            dof: 4,
            stiffness: 6.7647e9,
            damping: 6.4,
        });
        let mats = assemble_matrices(&spec).unwrap();
        let modal = undamped_modes(&mats).unwrap();
        assert!(modal.mass_normalized);
        for j in 0..modal.n_modes() {
            let psi = modal.mode(j);
            assert_abs_diff_eq!(modal_mass(psi, mats.mass.view()), 1.0, epsilon = 1e-10);
            let w2 = modal.frequencies[j] * modal.frequencies[j];
            let k_psi = mats.stiffness.dot(&psi);
            let m_psi = mats.mass.dot(&psi);
            let resid = (&k_psi - &(w2 * &m_psi))
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            let scale = k_psi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(
                resid < 1e-8 * scale,
                "mode {j}: residual {resid:e} vs scale {scale:e}"
            );
        }
        // Frequencies ascend.
        assert!(modal.frequencies.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn lead_shape_component_is_positive() {
        let mats = assemble_matrices(&StructureSpec::uniform(7, 3.0, 11.0, 0.0)).unwrap();
        let modal = undamped_modes(&mats).unwrap();
        for j in 0..modal.n_modes() {
            let col = modal.mode(j);
            let max_abs = col.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let lead = col.iter().find(|v| v.abs() > 1e-12 * max_abs).unwrap();
            assert!(*lead > 0.0, "mode {j} leads with {lead}");
        }
    }

    // ==== damped frequencies ====

    #[test]
    fn single_dof_damped_frequency() {
        // m = k = 1, c = 0.2: zeta = 0.1, omega_d = sqrt(1 - 0.01).
        let spec = StructureSpec {
            masses: vec![1.0],
            springs: vec![1.0, 0.0],
            dampers: vec![0.2, 0.0],
            ground: Vec::new(),
        };
        let mats = assemble_matrices(&spec).unwrap();
        let wd = damped_frequencies(&mats).unwrap();
        assert_relative_eq!(wd[0], 0.99f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn zero_damping_matches_undamped_frequencies() {
        let mats = assemble_matrices(&StructureSpec::uniform(6, 2.5, 40.0, 0.0)).unwrap();
        let modal = undamped_modes(&mats).unwrap();
        let wd = damped_frequencies(&mats).unwrap();
        for (d, u) in wd.iter().zip(&modal.frequencies) {
            assert_relative_eq!(d, u, max_relative = 1e-10);
        }
    }

    #[test]
    fn proportional_damping_matches_analytic_damped_frequencies() {
        // With every spring k and damper c equal, C = (c/k) K exactly, so
        // zeta_i = c omega_i / (2 k) and omega_d = omega_i sqrt(1 - zeta_i^2).
        let (m, k, c) = (85008.0, 6.7647e9, 2.0e6);
        let mats = assemble_matrices(&StructureSpec::uniform(4, m, k, c)).unwrap();
        let modal = undamped_modes(&mats).unwrap();
        let wd = damped_frequencies(&mats).unwrap();
        for (i, (&w, d)) in modal.frequencies.iter().zip(&wd).enumerate() {
            let zeta = c * w / (2.0 * k);
            let expect = w * (1.0 - zeta * zeta).sqrt();
            assert_relative_eq!(*d, expect, max_relative = 1e-10);
            assert!(zeta < 1.0, "mode {i} should stay underdamped");
        }
    }

    #[test]
    fn overdamped_single_dof_reports_degenerate_mode() {
        // c >= 2 sqrt(km) collapses the pair onto the real axis.
        let spec = StructureSpec {
            masses: vec![1.0],
            springs: vec![1.0, 0.0],
            dampers: vec![3.0, 0.0],
            ground: Vec::new(),
        };
        let mats = assemble_matrices(&spec).unwrap();
        match damped_frequencies(&mats) {
            Err(Error::DegenerateDamping { mode }) => assert_eq!(mode, 0),
            other => panic!("expected degenerate damping, got {other:?}"),
        }
    }

    #[test]
    fn damped_never_exceed_undamped() {
        let mats = assemble_matrices(&StructureSpec::uniform(5, 1.0, 30.0, 0.8)).unwrap();
        let modal = undamped_modes(&mats).unwrap();
        let wd = damped_frequencies(&mats).unwrap();
        for (d, u) in wd.iter().zip(&modal.frequencies) {
            assert!(d <= &(u * (1.0 + 1e-12)), "damped {d} above undamped {u}");
        }
    }

    // ==== modal quantities ====

    #[test]
    fn scaled_structures_share_scaled_modal_quantities() {
        // Scaling all stiffnesses by alpha and masses by beta leaves the
        // eigenvectors' directions unchanged, so modal stiffness / k and
        // modal mass / m agree across the pair when shapes are identically
        // normalised.
        let base = StructureSpec::uniform(6, 3.0, 50.0, 0.0);
        let (alpha, beta) = (2.75, 0.4);
        let scaled = StructureSpec {
            masses: base.masses.iter().map(|m| m * beta).collect(),
            springs: base.springs.iter().map(|k| k * alpha).collect(),
            dampers: base.dampers.clone(),
            ground: Vec::new(),
        };
        let mats_a = assemble_matrices(&base).unwrap();
        let mats_b = assemble_matrices(&scaled).unwrap();
        let modal_a = undamped_modes(&mats_a).unwrap();
        let modal_b = undamped_modes(&mats_b).unwrap();
        for j in 0..modal_a.n_modes() {
            // Unit-normalise both shapes so that the comparison does not
            // depend on the mass normalisation.
            let a = modal_a.mode(j).to_owned();
            let b = modal_b.mode(j).to_owned();
            let a = &a / a.dot(&a).sqrt();
            let b = &b / b.dot(&b).sqrt();
            let ka = modal_stiffness(a.view(), mats_a.stiffness.view()) / 50.0;
            let kb = modal_stiffness(b.view(), mats_b.stiffness.view()) / (50.0 * alpha);
            assert_relative_eq!(ka, kb, max_relative = 1e-8);
            let ma = modal_mass(a.view(), mats_a.mass.view()) / 3.0;
            let mb = modal_mass(b.view(), mats_b.mass.view()) / (3.0 * beta);
            assert_relative_eq!(ma, mb, max_relative = 1e-8);
        }
    }

    #[test]
    fn symmetric_two_dof_modal_stiffness_ignores_coupling_spring() {
        // For k1 = k3 the first mode has psi_1 = psi_2, and psi' K psi =
        // psi_1^2 (k1 + k3): the k2 contributions cancel exactly.
        let spec = StructureSpec {
            masses: vec![2.0, 2.0],
            springs: vec![5.0, 3.0, 5.0],
            dampers: vec![0.0; 3],
            ground: Vec::new(),
        };
        let mats = assemble_matrices(&spec).unwrap();
        let modal = undamped_modes(&mats).unwrap();
        let psi = modal.mode(0);
        assert_abs_diff_eq!(psi[0], psi[1], epsilon = 1e-12);
        let k_hat = modal_stiffness(psi, mats.stiffness.view());
        for delta in [-1.0, 0.5, 2.0] {
            let perturbed = StructureSpec {
                springs: vec![5.0, 3.0 + delta, 5.0],
                ..spec.clone()
            };
            let mats_p = assemble_matrices(&perturbed).unwrap();
            let k_hat_p = modal_stiffness(psi, mats_p.stiffness.view());
            assert_abs_diff_eq!(k_hat, k_hat_p, epsilon = 1e-10);
        }
    }

    // ==== FRF ====

    #[test]
    fn single_dof_frf_matches_closed_form() {
        let (m, k, c) = (2.0, 50.0, 0.3);
        let spec = StructureSpec {
            masses: vec![m],
            springs: vec![k, 0.0],
            dampers: vec![c, 0.0],
            ground: Vec::new(),
        };
        let mats = assemble_matrices(&spec).unwrap();
        let modal = undamped_modes(&mats).unwrap();
        let freqs = [0.0, 1.0, 4.0, 5.0, 6.0, 12.0];
        let mags = frf_magnitude(&modal, &mats, 0, 0, &freqs).unwrap();
        for (&w, &mag) in freqs.iter().zip(&mags) {
            // |H| = 1 / sqrt((k - m w^2)^2 + (c w)^2) for a single DoF.
            let expect = 1.0 / ((k - m * w * w).powi(2) + (c * w).powi(2)).sqrt();
            assert_relative_eq!(mag, expect, max_relative = 1e-10);
        }
        // Static receptance is 1/k.
        assert_relative_eq!(mags[0], 1.0 / k, max_relative = 1e-12);
    }

    #[test]
    fn frf_errors_on_undamped_pole() {
        let spec = StructureSpec {
            masses: vec![1.0],
            springs: vec![4.0, 0.0],
            dampers: vec![0.0, 0.0],
            ground: Vec::new(),
        };
        let mats = assemble_matrices(&spec).unwrap();
        let modal = undamped_modes(&mats).unwrap();
        assert!(matches!(
            frf_magnitude(&modal, &mats, 0, 0, &[2.0]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn frf_rejects_unnormalised_model_and_bad_dofs() {
        let mats = two_dof_unit();
        let mut modal = undamped_modes(&mats).unwrap();
        assert!(matches!(
            frf_magnitude(&modal, &mats, 0, 5, &[0.1]),
            Err(Error::InvalidConfig(_))
        ));
        modal.mass_normalized = false;
        assert!(matches!(
            frf_magnitude(&modal, &mats, 0, 1, &[0.1]),
            Err(Error::InvalidConfig(_))
        ));
    }

    // ==== serialisation ====

    #[test]
    fn modal_model_json_round_trip() {
        let mats = two_dof_unit();
        let modal = undamped_modes(&mats).unwrap();
        let text = modal.to_json().unwrap();
        let back = ModalModel::from_json(&text).unwrap();
        assert_eq!(modal, back);
        // Wire format: one shapes entry per mode.
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["shapes"].as_array().unwrap().len(), 2);
        assert!(value["mass_normalized"].as_bool().unwrap());
    }

    #[test]
    fn modal_model_json_rejects_ragged_shapes() {
        let text = r#"{"frequencies":[1.0,2.0],"shapes":[[1.0,0.0],[0.5]],"mass_normalized":true}"#;
        assert!(matches!(
            ModalModel::from_json(text),
            Err(Error::Parse { .. })
        ));
    }
}
