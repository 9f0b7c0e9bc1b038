//! Modal assurance criterion (MAC) and mode-pairing utilities.
//!
//! For real mode shapes the MAC between a source shape `psi_s` and target
//! shape `psi_t` is
//!
//! ```text
//! MAC = (psi_s' psi_t)^2 / ((psi_s' psi_s)(psi_t' psi_t))
//! ```
//!
//! which lies in `[0, 1]`, equals 1 for collinear shapes, and is invariant
//! to the scale and sign of either shape. The MAC-discrepancy between two
//! modal models averages the MAC over a set of index pairs and is used as a
//! task-level similarity measure: 1 means every paired mode matches, 0 means
//! none do.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::spectral::ModalModel;
use crate::{Error, Result};

/// A correspondence between source and target mode indices.
///
/// Entry `k` pairs source mode `source[k]` with target mode `target[k]`;
/// `mac_values[k]` is the MAC of that pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ModePairing {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub mac_values: Vec<f64>,
}

impl ModePairing {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// True when no two source modes map onto the same target mode.
    pub fn is_injective(&self) -> bool {
        let mut seen = vec![false; self.target.iter().map(|&t| t + 1).max().unwrap_or(0)];
        for &t in &self.target {
            if seen[t] {
                return false;
            }
            seen[t] = true;
        }
        true
    }
}

/// MAC between two real mode shapes.
pub fn mac(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::IncompatibleSensors {
            left: a.len(),
            right: b.len(),
        });
    }
    let aa = a.dot(&a);
    let bb = b.dot(&b);
    if aa == 0.0 {
        return Err(Error::UndefinedMac { side: "source" });
    }
    if bb == 0.0 {
        return Err(Error::UndefinedMac { side: "target" });
    }
    let ab = a.dot(&b);
    // Guard round-off above 1 for collinear shapes.
    Ok(((ab * ab) / (aa * bb)).min(1.0))
}

/// MAC between every source/target mode pair.
///
/// Row `i`, column `j` holds `MAC(source mode i, target mode j)`. Both
/// models must describe the same sensor set (equal row dimension).
pub fn mac_matrix(source: &ModalModel, target: &ModalModel) -> Result<Array2<f64>> {
    if source.n_sensors() != target.n_sensors() {
        return Err(Error::IncompatibleSensors {
            left: source.n_sensors(),
            right: target.n_sensors(),
        });
    }
    let mut out = Array2::zeros((source.n_modes(), target.n_modes()));
    for i in 0..source.n_modes() {
        for j in 0..target.n_modes() {
            out[[i, j]] = mac(source.mode(i), target.mode(j))?;
        }
    }
    Ok(out)
}

/// Pairs each selected source mode with its best-matching target mode.
///
/// For every source index in `v_s` the target index is the argmax of that
/// row of `mac_values`; ties resolve to the lowest target index. The
/// resulting pairing may map two source modes onto the same target mode;
/// callers that need an injective pairing check [`ModePairing::is_injective`].
pub fn pair_modes(mac_values: ArrayView2<'_, f64>, v_s: &[usize]) -> Result<ModePairing> {
    if v_s.is_empty() {
        return Err(Error::InvalidPairing("no source modes selected".into()));
    }
    if mac_values.ncols() == 0 {
        return Err(Error::InvalidPairing("MAC matrix has no target modes".into()));
    }
    let mut target = Vec::with_capacity(v_s.len());
    let mut values = Vec::with_capacity(v_s.len());
    for &i in v_s {
        if i >= mac_values.nrows() {
            return Err(Error::InvalidPairing(format!(
                "source mode {i} out of range for {} modes",
                mac_values.nrows()
            )));
        }
        let row = mac_values.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        target.push(best);
        values.push(row[best]);
    }
    Ok(ModePairing {
        source: v_s.to_vec(),
        target,
        mac_values: values,
    })
}

/// MAC-discrepancy: the mean MAC over explicit index pairs.
pub fn mac_discrepancy(
    mac_values: ArrayView2<'_, f64>,
    source: &[usize],
    target: &[usize],
) -> Result<f64> {
    if source.len() != target.len() {
        return Err(Error::InvalidPairing(format!(
            "{} source indices vs {} target indices",
            source.len(),
            target.len()
        )));
    }
    if source.is_empty() {
        return Err(Error::InvalidPairing("empty pairing".into()));
    }
    let mut sum = 0.0;
    for (&i, &j) in source.iter().zip(target) {
        if i >= mac_values.nrows() || j >= mac_values.ncols() {
            return Err(Error::InvalidPairing(format!(
                "pair ({i}, {j}) out of range for {}x{} MAC matrix",
                mac_values.nrows(),
                mac_values.ncols()
            )));
        }
        sum += mac_values[[i, j]];
    }
    Ok(sum / source.len() as f64)
}

/// Writes a MAC matrix as CSV: header `target_0..`, one row per source mode.
pub fn write_mac_matrix_csv<W: std::io::Write>(
    mac_values: ArrayView2<'_, f64>,
    writer: &mut W,
) -> Result<()> {
    let header: Vec<String> = (0..mac_values.ncols())
        .map(|j| format!("target_{j}"))
        .collect();
    writeln!(writer, "source,{}", header.join(","))?;
    for (i, row) in mac_values.rows().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(writer, "{i},{}", cells.join(","))?;
    }
    Ok(())
}
