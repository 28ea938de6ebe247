//! Doubly-robust pseudo-outcomes per study, with odds weights attached.

use std::io::Write;

use crate::data::{apply_reduction, ReductionSpec, StudyDataset};
use crate::error::{Error, Result};
use crate::nuisance::FittedNuisances;

/// `(T - π)/(π(1-π)) · (Y - μ(X, T)) + μ(X, 1) - μ(X, 0)`, with `π = π̂_1`.
pub fn dr_pseudo_outcome(t: u8, y: f64, pi1: f64, mu1: f64, mu0: f64) -> f64 {
    let pi0 = 1.0 - pi1;
    let mu_t = if t == 1 { mu1 } else { mu0 };
    (t as f64 - pi1) / (pi1 * pi0) * (y - mu_t) + mu1 - mu0
}

/// Per-record pseudo-outcomes, stored column-wise. `psi[i]` is `Ψ̂ʳ` for a
/// trial record and `Ψ̂ᵒ` for an OS record; the other is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomePanel {
    d: usize,
    z: Vec<u8>,
    v: Vec<f64>,
    psi: Vec<f64>,
    omega: Vec<f64>,
}

impl PseudoOutcomePanel {
    /// Assembles a panel from raw columns; `v` is row-major with `d` values
    /// per record.
    pub fn from_parts(d: usize, z: Vec<u8>, v: Vec<f64>, psi: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        let n = z.len();
        if d == 0 || v.len() != n * d || psi.len() != n || omega.len() != n {
            return Err(Error::InvalidArgument("panel columns have inconsistent lengths".into()));
        }
        if z.iter().any(|&z| z > 1) {
            return Err(Error::InvalidArgument("panel z must be 0/1".into()));
        }
        if omega.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument("odds weights must be finite and positive".into()));
        }
        if v.iter().chain(&psi).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("panel values must be finite".into()));
        }
        Ok(PseudoOutcomePanel { d, z, v, psi, omega })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn v(&self, i: usize) -> &[f64] {
        &self.v[i * self.d..(i + 1) * self.d]
    }

    pub fn v_flat(&self) -> &[f64] {
        &self.v
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn psi_r(&self, i: usize) -> Option<f64> {
        (self.z[i] == 0).then(|| self.psi[i])
    }

    pub fn psi_o(&self, i: usize) -> Option<f64> {
        (self.z[i] == 1).then(|| self.psi[i])
    }

    pub fn count(&self, z: u8) -> usize {
        self.z.iter().filter(|&&s| s == z).count()
    }

    /// Values of coordinate `j` of `V` over records of study `z`.
    pub fn v_coordinate(&self, z: u8, j: usize) -> Vec<f64> {
        (0..self.len())
            .filter(|&i| self.z[i] == z)
            .map(|i| self.v[i * self.d + j])
            .collect()
    }

    /// Columns `z, v, psi_r, psi_o, omega` (one `v` column per dimension).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: "<panel>".into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["z".to_string()];
        if self.d == 1 {
            header.push("v".into());
        } else {
            header.extend((1..=self.d).map(|j| format!("v{j}")));
        }
        header.extend(["psi_r", "psi_o", "omega"].map(String::from));
        w.write_record(&header).map_err(io)?;
        for i in 0..self.len() {
            let mut row = vec![self.z[i].to_string()];
            row.extend(self.v(i).iter().map(|x| x.to_string()));
            row.push(self.psi_r(i).map(|x| x.to_string()).unwrap_or_default());
            row.push(self.psi_o(i).map(|x| x.to_string()).unwrap_or_default());
            row.push(self.omega[i].to_string());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<panel>".into(),
            message: e.to_string(),
        })
    }
}

/// Builds the panel: trial nuisances for `z = 0` records, OS nuisances for
/// `z = 1`, `π̂_0 = 1 - π̂_1`, `V` from `reduction` against `reference`.
pub fn compute_pseudo_outcomes(
    data: &StudyDataset,
    nuis: &FittedNuisances,
    reduction: &ReductionSpec,
    reference: &StudyDataset,
) -> Result<PseudoOutcomePanel> {
    let v = apply_reduction(reduction, data, reference)?;
    let n = data.n();
    let mut z = Vec::with_capacity(n);
    let mut psi = Vec::with_capacity(n);
    let mut omega = Vec::with_capacity(n);
    for r in data.records() {
        let pi1 = nuis.propensity(&r.x, r.z)?;
        let mu1 = nuis.outcome(&r.x, r.z, 1)?;
        let mu0 = nuis.outcome(&r.x, r.z, 0)?;
        z.push(r.z);
        psi.push(dr_pseudo_outcome(r.t, r.y, pi1, mu1, mu0));
        omega.push(nuis.odds(&r.x)?);
    }
    PseudoOutcomePanel::from_parts(reduction.dim(), z, v, psi, omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_pseudo_outcomes() {
        // (1 - 0.5)/(0.5 * 0.5) * (2 - 1) + 1 - 0 = 3
        assert_eq!(dr_pseudo_outcome(1, 2.0, 0.5, 1.0, 0.0), 3.0);
        // zero residual leaves the outcome-model contrast
        assert_eq!(dr_pseudo_outcome(0, 0.0, 0.5, 1.0, 0.0), 1.0);
        // (0 - 0.5)/0.25 * 1 = -2
        assert_eq!(dr_pseudo_outcome(0, 1.0, 0.5, 1.0, 0.0), 1.0 - 2.0);
    }

    proptest::proptest! {
        #[test]
        fn zero_residual_gives_contrast(t in 0u8..2, pi in 0.01f64..0.99, mu1 in -50.0f64..50.0, mu0 in -50.0f64..50.0) {
            let y = if t == 1 { mu1 } else { mu0 };
            let psi = dr_pseudo_outcome(t, y, pi, mu1, mu0);
            proptest::prop_assert!((psi - (mu1 - mu0)).abs() < 1e-12);
        }
    }

    #[test]
    fn panel_accessors() {
        let p = PseudoOutcomePanel::from_parts(1, vec![0, 1], vec![0.1, 0.2], vec![3.0, 4.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(p.psi_r(0), Some(3.0));
        assert_eq!(p.psi_o(0), None);
        assert_eq!(p.psi_o(1), Some(4.0));
        assert_eq!(p.psi_r(1), None);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "z,v,psi_r,psi_o,omega\n0,0.1,3,,1\n1,0.2,,4,2\n");
        assert!(PseudoOutcomePanel::from_parts(1, vec![0], vec![0.0], vec![1.0], vec![0.0]).is_err());
    }
}
