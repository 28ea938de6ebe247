//! Locally constant (Nadaraya-Watson) smoothing of pseudo-outcomes over `V`.
//!
//! For target population `z`, trial records carry weight `ω̂^z` and OS
//! records `ω̂^(z-1)`:
//!
//! ```text
//! f̂ʳ(v) = n⁻¹ Σ_j K_h(V_j - v) I(Z_j = 0) ω̂_j^z
//! τ̂ʳ(v) = n⁻¹ Σ_j K_h(V_j - v) I(Z_j = 0) ω̂_j^z Ψ̂_j / f̂ʳ(v)
//! ξ̂ʳ_i(v) = K((V_i - v)/h) I(Z_i = 0) ω̂_i^z (Ψ̂_i - τ̂ʳ(v)) / f̂ʳ(v)
//! ```
//!
//! and symmetrically for the OS arm. `K_h(u) = K(u/h)/h^d` with a product
//! Gaussian `K`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudo::PseudoOutcomePanel;

/// Density estimates below this are treated as lack of support.
pub const DENSITY_FLOOR: f64 = 1e-10;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// One value per coordinate of `V` (a single value is broadcast).
    Fixed(Vec<f64>),
    /// Rule of thumb from the trial arm's `V` values.
    #[default]
    RuleOfThumb,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kernel: Kernel,
    pub bandwidth: Bandwidth,
}

impl KernelConfig {
    pub fn fixed(h: f64) -> Self {
        KernelConfig {
            kernel: Kernel::Gaussian,
            bandwidth: Bandwidth::Fixed(vec![h]),
        }
    }
}

/// Product Gaussian kernel `∏_j φ(u_j)`.
pub fn kernel_value(config: &KernelConfig, u: &[f64]) -> f64 {
    match config.kernel {
        Kernel::Gaussian => u.iter().map(|x| INV_SQRT_2PI * (-0.5 * x * x).exp()).product(),
    }
}

/// `1.06 · sd · m^(-1/5)` with the sample standard deviation of `values`.
pub fn rule_of_thumb_bandwidth(values: &[f64], m: usize) -> Result<f64> {
    if m < 2 || values.len() < 2 {
        return Err(Error::DegenerateV(format!(
            "rule of thumb needs at least two values (m = {m})"
        )));
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateV("V is constant".into()));
    }
    Ok(1.06 * sd * (m as f64).powf(-0.2))
}

/// One bandwidth per coordinate of `V`. The rule of thumb uses the trial
/// arm (`m = n₀`) and the same `h` serves both arms.
pub fn resolve_bandwidth(config: &KernelConfig, panel: &PseudoOutcomePanel) -> Result<Vec<f64>> {
    let d = panel.dim();
    match &config.bandwidth {
        Bandwidth::Fixed(h) => {
            let h = match h.len() {
                1 => vec![h[0]; d],
                l if l == d => h.clone(),
                l => return Err(Error::DimensionMismatch { expected: d, got: l }),
            };
            if h.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::InvalidArgument("bandwidth must be positive".into()));
            }
            Ok(h)
        }
        Bandwidth::RuleOfThumb => (0..d)
            .map(|j| {
                let vals = panel.v_coordinate(0, j);
                rule_of_thumb_bandwidth(&vals, vals.len())
            })
            .collect(),
    }
}

/// Second moments of the plug-in influence functions at one point:
/// `Σ ξʳ²`, `Σ ξᵒ²` and `Σ ξʳ ξᵒ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InfluenceMoments {
    pub rr: f64,
    pub oo: f64,
    pub ro: f64,
}

impl InfluenceMoments {
    pub fn from_vectors(xi_r: &[f64], xi_o: &[f64]) -> Self {
        let mut m = InfluenceMoments::default();
        for (a, b) in xi_r.iter().zip(xi_o) {
            m.rr += a * a;
            m.oo += b * b;
            m.ro += a * b;
        }
        m
    }

    /// `Σ aᵢ bᵢ` with `a = ξʳ`, `b = ξʳ - ξᵒ`.
    pub fn cross(&self) -> f64 {
        self.rr - self.ro
    }

    /// `Σ bᵢ²`.
    pub fn gram(&self) -> f64 {
        self.rr - 2.0 * self.ro + self.oo
    }

    /// `Σ {η ξᵒ + (1-η) ξʳ}²`.
    pub fn combined_sq(&self, eta: f64) -> f64 {
        let c = 1.0 - eta;
        (eta * eta * self.oo + c * c * self.rr + 2.0 * eta * c * self.ro).max(0.0)
    }
}

/// Everything the combiner needs at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub v: Vec<f64>,
    pub tau_r: f64,
    pub tau_o: f64,
    pub f_r: f64,
    pub f_o: f64,
    pub moments: InfluenceMoments,
}

impl PointSummary {
    /// `τ̂ᵒ(v) - τ̂ʳ(v)`.
    pub fn bias(&self) -> f64 {
        self.tau_o - self.tau_r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseEstimate {
    pub v: Vec<f64>,
    pub target_z: u8,
    pub tau_r: f64,
    pub tau_o: f64,
    pub f_r: f64,
    pub f_o: f64,
    /// Zero on OS records.
    pub xi_r: Vec<f64>,
    /// Zero on trial records.
    pub xi_o: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

impl BaseEstimate {
    pub fn summary(&self) -> PointSummary {
        PointSummary {
            v: self.v.clone(),
            tau_r: self.tau_r,
            tau_o: self.tau_o,
            f_r: self.f_r,
            f_o: self.f_o,
            moments: InfluenceMoments::from_vectors(&self.xi_r, &self.xi_o),
        }
    }

    pub fn h_d(&self) -> f64 {
        self.bandwidth.iter().product()
    }
}

/// A panel prepared for repeated evaluation at a fixed target and bandwidth.
#[derive(Debug, Clone)]
pub struct KernelSmoother {
    panel: PseudoOutcomePanel,
    target_z: u8,
    bandwidth: Vec<f64>,
    inv_h: Vec<f64>,
    h_d: f64,
    norm: f64,
    /// `ω̂^z` on trial records, `ω̂^(z-1)` on OS records.
    weight: Vec<f64>,
    /// Per-arm mean of Ψ̂, subtracted before accumulating squares.
    center: [f64; 2],
}

#[derive(Debug, Default, Clone, Copy)]
struct ArmSums {
    w: f64,
    wpsi: f64,
    w2: f64,
    w2psi: f64,
    w2psi2: f64,
}

impl KernelSmoother {
    pub fn new(panel: PseudoOutcomePanel, target_z: u8, bandwidth: Vec<f64>) -> Result<Self> {
        if target_z > 1 {
            return Err(Error::InvalidArgument(format!("target z = {target_z} not in {{0,1}}")));
        }
        if panel.count(0) == 0 || panel.count(1) == 0 {
            return Err(Error::InvalidData("panel needs records from both studies".into()));
        }
        if bandwidth.len() != panel.dim() || bandwidth.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::InvalidArgument("bandwidth must be positive, one per dimension".into()));
        }
        let weight = panel
            .z()
            .iter()
            .zip(panel.omega())
            .map(|(&z, &w)| match (z, target_z) {
                (0, 1) => w,
                (1, 0) => 1.0 / w,
                _ => 1.0,
            })
            .collect();
        let mut center = [0.0; 2];
        for arm in 0..2u8 {
            let (s, c) = panel
                .z()
                .iter()
                .zip(panel.psi())
                .filter(|(&z, _)| z == arm)
                .fold((0.0, 0usize), |(s, c), (_, p)| (s + p, c + 1));
            center[arm as usize] = s / c as f64;
        }
        let inv_h = bandwidth.iter().map(|h| 1.0 / h).collect();
        let h_d = bandwidth.iter().product();
        let norm = INV_SQRT_2PI.powi(panel.dim() as i32);
        Ok(KernelSmoother {
            panel,
            target_z,
            bandwidth,
            inv_h,
            h_d,
            norm,
            weight,
            center,
        })
    }

    pub fn from_config(panel: PseudoOutcomePanel, target_z: u8, config: &KernelConfig) -> Result<Self> {
        let h = resolve_bandwidth(config, &panel)?;
        KernelSmoother::new(panel, target_z, h)
    }

    pub fn panel(&self) -> &PseudoOutcomePanel {
        &self.panel
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn target_z(&self) -> u8 {
        self.target_z
    }

    /// `h^d` (product of per-coordinate bandwidths).
    pub fn h_d(&self) -> f64 {
        self.h_d
    }

    pub fn n(&self) -> usize {
        self.panel.len()
    }

    #[inline]
    fn kernel_at(&self, i: usize, v: &[f64]) -> f64 {
        let d = v.len();
        let vi = &self.panel.v_flat()[i * d..(i + 1) * d];
        let mut s = 0.0;
        for j in 0..d {
            let u = (vi[j] - v[j]) * self.inv_h[j];
            s += u * u;
        }
        self.norm * (-0.5 * s).exp()
    }

    fn check_point(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.panel.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.panel.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    fn density(&self, sum_w: f64) -> f64 {
        sum_w / (self.n() as f64 * self.h_d)
    }

    fn support(&self, v: &[f64], f: f64) -> Result<()> {
        if !(f > DENSITY_FLOOR) {
            return Err(Error::NoSupport {
                v: v.to_vec(),
                density: f,
            });
        }
        Ok(())
    }

    /// Full estimate with per-record influence functions.
    pub fn estimate(&self, v: &[f64]) -> Result<BaseEstimate> {
        self.check_point(v)?;
        let n = self.n();
        let z = self.panel.z();
        let psi = self.panel.psi();
        let mut kw = vec![0.0; n];
        let mut sw = [0.0; 2];
        let mut swp = [0.0; 2];
        for i in 0..n {
            let w = self.kernel_at(i, v) * self.weight[i];
            kw[i] = w;
            let a = z[i] as usize;
            sw[a] += w;
            swp[a] += w * psi[i];
        }
        let f = [self.density(sw[0]), self.density(sw[1])];
        self.support(v, f[0])?;
        self.support(v, f[1])?;
        let tau = [swp[0] / sw[0], swp[1] / sw[1]];
        let mut xi_r = vec![0.0; n];
        let mut xi_o = vec![0.0; n];
        for i in 0..n {
            let a = z[i] as usize;
            let xi = kw[i] * (psi[i] - tau[a]) / f[a];
            if a == 0 {
                xi_r[i] = xi;
            } else {
                xi_o[i] = xi;
            }
        }
        Ok(BaseEstimate {
            v: v.to_vec(),
            target_z: self.target_z,
            tau_r: tau[0],
            tau_o: tau[1],
            f_r: f[0],
            f_o: f[1],
            xi_r,
            xi_o,
            bandwidth: self.bandwidth.clone(),
        })
    }

    fn arm_sums(&self, v: &[f64], arms: [bool; 2]) -> [ArmSums; 2] {
        let z = self.panel.z();
        let psi = self.panel.psi();
        let mut sums = [ArmSums::default(); 2];
        for i in 0..self.n() {
            let a = z[i] as usize;
            if !arms[a] {
                continue;
            }
            let w = self.kernel_at(i, v) * self.weight[i];
            let p = psi[i] - self.center[a];
            let s = &mut sums[a];
            s.w += w;
            s.wpsi += w * p;
            let w2 = w * w;
            s.w2 += w2;
            s.w2psi += w2 * p;
            s.w2psi2 += w2 * p * p;
        }
        sums
    }

    /// Same quantities as [`estimate`](Self::estimate) without materializing
    /// the influence vectors. Trial and OS influence functions live on
    /// disjoint records, so their cross moment is zero.
    pub fn summary(&self, v: &[f64]) -> Result<PointSummary> {
        self.check_point(v)?;
        self.finish_summary(v, self.arm_sums(v, [true, true]))
    }

    fn finish_summary(&self, v: &[f64], sums: [ArmSums; 2]) -> Result<PointSummary> {
        let mut tau = [0.0; 2];
        let mut f = [0.0; 2];
        let mut sq = [0.0; 2];
        for a in 0..2 {
            let s = sums[a];
            f[a] = self.density(s.w);
            self.support(v, f[a])?;
            let t = s.wpsi / s.w;
            tau[a] = self.center[a] + t;
            sq[a] = ((s.w2psi2 - 2.0 * t * s.w2psi + t * t * s.w2) / (f[a] * f[a])).max(0.0);
        }
        Ok(PointSummary {
            v: v.to_vec(),
            tau_r: tau[0],
            tau_o: tau[1],
            f_r: f[0],
            f_o: f[1],
            moments: InfluenceMoments {
                rr: sq[0],
                oo: sq[1],
                ro: 0.0,
            },
        })
    }

    /// Trial-arm estimate `τ̂ʳ(v)` alone.
    pub fn trial_estimate(&self, v: &[f64]) -> Result<f64> {
        self.check_point(v)?;
        self.finish_trial(v, self.arm_sums(v, [true, false])[0])
    }

    fn finish_trial(&self, v: &[f64], s: ArmSums) -> Result<f64> {
        self.support(v, self.density(s.w))?;
        Ok(self.center[0] + s.wpsi / s.w)
    }

    /// Exact evaluation for a scalar `V` whose values are all of the form
    /// `c/m` with integer `c ∈ [0, m]`, as produced by an ECDF over `m`
    /// reference records. Returns `None` if any value is off the lattice.
    pub fn lattice(&self, m: usize) -> Option<LatticeSmoother<'_>> {
        if self.panel.dim() != 1 || m == 0 {
            return None;
        }
        let mut sites = Vec::with_capacity(self.n());
        for &v in self.panel.v_flat() {
            sites.push(lattice_index(v, m)?);
        }
        let z = self.panel.z();
        let psi = self.panel.psi();
        let mut arms = [ArmLattice::default(), ArmLattice::default()];
        for a in 0..2u8 {
            let mut idx: Vec<usize> = (0..self.n()).filter(|&i| z[i] == a).collect();
            idx.sort_by_key(|&i| sites[i]);
            let arm = &mut arms[a as usize];
            for i in idx {
                let w = self.weight[i];
                let p = psi[i] - self.center[a as usize];
                if arm.sites.last() != Some(&sites[i]) {
                    arm.sites.push(sites[i]);
                    arm.sums.push(ArmSums::default());
                }
                let s = arm.sums.last_mut().unwrap();
                s.w += w;
                s.wpsi += w * p;
                s.w2 += w * w;
                s.w2psi += w * w * p;
                s.w2psi2 += w * w * p * p;
            }
        }
        let step = self.inv_h[0] / m as f64;
        let table: Vec<f64> = (0..=m)
            .map(|k| {
                let u = k as f64 * step;
                self.norm * (-0.5 * u * u).exp()
            })
            .collect();
        let table2 = table.iter().map(|t| t * t).collect();
        Some(LatticeSmoother {
            smoother: self,
            m,
            table,
            table2,
            arms,
        })
    }
}

/// `c` with `c/m == v` exactly, if it exists.
pub fn lattice_index(v: f64, m: usize) -> Option<usize> {
    let c = (v * m as f64).round();
    if !(0.0..=m as f64).contains(&c) || c / m as f64 != v {
        return None;
    }
    Some(c as usize)
}

#[derive(Debug, Clone, Default)]
struct ArmLattice {
    /// Occupied lattice sites, increasing.
    sites: Vec<usize>,
    /// Per-site weight sums before multiplying by the kernel.
    sums: Vec<ArmSums>,
}

impl ArmLattice {
    fn accumulate(&self, c: usize, table: &[f64], table2: &[f64], out: &mut ArmSums) {
        let split = self.sites.partition_point(|&k| k < c);
        let mut add = |s: &ArmSums, t: f64, t2: f64| {
            out.w += t * s.w;
            out.wpsi += t * s.wpsi;
            out.w2 += t2 * s.w2;
            out.w2psi += t2 * s.w2psi;
            out.w2psi2 += t2 * s.w2psi2;
        };
        for (k, s) in self.sites[..split].iter().zip(&self.sums[..split]) {
            add(s, table[c - k], table2[c - k]);
        }
        for (k, s) in self.sites[split..].iter().zip(&self.sums[split..]) {
            add(s, table[k - c], table2[k - c]);
        }
    }
}

/// Lattice view of a [`KernelSmoother`]; see [`KernelSmoother::lattice`].
#[derive(Debug, Clone)]
pub struct LatticeSmoother<'a> {
    smoother: &'a KernelSmoother,
    m: usize,
    table: Vec<f64>,
    table2: Vec<f64>,
    arms: [ArmLattice; 2],
}

impl LatticeSmoother<'_> {
    pub fn m(&self) -> usize {
        self.m
    }

    fn sums(&self, c: usize, arms: [bool; 2]) -> [ArmSums; 2] {
        let mut out = [ArmSums::default(); 2];
        for a in 0..2 {
            if arms[a] {
                self.arms[a].accumulate(c, &self.table, &self.table2, &mut out[a]);
            }
        }
        out
    }

    /// [`KernelSmoother::summary`] at `v = c/m`.
    pub fn summary(&self, c: usize) -> Result<PointSummary> {
        let v = [c as f64 / self.m as f64];
        self.smoother.finish_summary(&v, self.sums(c, [true, true]))
    }

    /// [`KernelSmoother::trial_estimate`] at `v = c/m`.
    pub fn trial_estimate(&self, c: usize) -> Result<f64> {
        let v = [c as f64 / self.m as f64];
        self.smoother.finish_trial(&v, self.sums(c, [true, false])[0])
    }
}

/// Base estimators and influence functions at `v` for target population
/// `target_z`.
pub fn base_estimates(
    panel: &PseudoOutcomePanel,
    target_z: u8,
    v: &[f64],
    config: &KernelConfig,
) -> Result<BaseEstimate> {
    KernelSmoother::from_config(panel.clone(), target_z, config)?.estimate(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(z: Vec<u8>, v: Vec<f64>, psi: Vec<f64>, omega: Vec<f64>) -> PseudoOutcomePanel {
        PseudoOutcomePanel::from_parts(1, z, v, psi, omega).unwrap()
    }

    #[test]
    fn kernel_values() {
        let k = KernelConfig::default();
        assert!((kernel_value(&k, &[0.0]) - 0.398942).abs() < 1e-6);
        assert!((kernel_value(&k, &[1.0]) - 0.241971).abs() < 1e-6);
        assert!((kernel_value(&k, &[0.0, 0.0]) - 0.159155).abs() < 1e-6);
    }

    #[test]
    fn rule_of_thumb_arithmetic() {
        // values with sample sd exactly 1
        let vals = [-1.0, 1.0, -1.0, 1.0];
        let sd = (4.0f64 / 3.0).sqrt();
        let h = rule_of_thumb_bandwidth(&vals, 100).unwrap();
        assert!((h - 1.06 * sd * 100f64.powf(-0.2)).abs() < 1e-12);
        assert!((1.06 * 100f64.powf(-0.2) - 0.42200).abs() < 1e-5);
        assert!((1.06 * 0.2887 * 1024f64.powf(-0.2) - 0.076506).abs() < 1e-5);
        assert!(matches!(
            rule_of_thumb_bandwidth(&[2.0, 2.0, 2.0], 3),
            Err(Error::DegenerateV(_))
        ));
    }

    #[test]
    fn three_point_hand_example() {
        // trial records at V = 0, 0.5, 1 with Ψ = 1, 2, 4; h = 0.5; v = 0.5
        let p = panel(
            vec![0, 0, 0, 1],
            vec![0.0, 0.5, 1.0, 0.5],
            vec![1.0, 2.0, 4.0, 0.0],
            vec![1.0; 4],
        );
        let est = base_estimates(&p, 0, &[0.5], &KernelConfig::fixed(0.5)).unwrap();
        let (k0, k1) = (0.398942280401, 0.241970724519);
        let expected = (k1 * 1.0 + k0 * 2.0 + k1 * 4.0) / (2.0 * k1 + k0);
        assert!((est.tau_r - expected).abs() < 1e-10);
        assert!((est.tau_r - 2.274069).abs() < 1e-5);
    }

    #[test]
    fn single_trial_record_collapses() {
        let p = panel(vec![0, 1, 1], vec![0.3, 0.1, 0.9], vec![5.5, 1.0, 2.0], vec![2.0, 1.0, 3.0]);
        let est = base_estimates(&p, 0, &[0.3], &KernelConfig::fixed(0.2)).unwrap();
        assert_eq!(est.tau_r, 5.5);
        assert_eq!(est.xi_r[0], 0.0);
    }

    #[test]
    fn constant_pseudo_outcomes() {
        let p = panel(
            vec![0, 0, 1, 1, 0],
            vec![0.1, 0.4, 0.2, 0.8, 0.9],
            vec![3.0, 3.0, 1.0, 7.0, 3.0],
            vec![0.5, 2.0, 1.0, 1.0, 4.0],
        );
        for &v in &[0.0, 0.3, 1.2] {
            for z in 0..2 {
                let est = base_estimates(&p, z, &[v], &KernelConfig::fixed(0.3)).unwrap();
                assert!((est.tau_r - 3.0).abs() < 1e-14);
                assert!(est.xi_r.iter().all(|x| x.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn no_support_is_an_error() {
        let p = panel(vec![0, 1], vec![0.0, 0.0], vec![1.0, 2.0], vec![1.0, 1.0]);
        let err = base_estimates(&p, 0, &[100.0], &KernelConfig::fixed(0.1)).unwrap_err();
        assert!(matches!(err, Error::NoSupport { .. }));
    }

    #[test]
    fn summary_matches_full_estimate() {
        let p = panel(
            vec![0, 1, 0, 1, 1, 0, 1],
            vec![0.1, 0.2, 0.35, 0.5, 0.6, 0.8, 0.95],
            vec![1.0, -2.0, 4.0, 0.5, 3.0, -1.0, 2.0],
            vec![0.5, 2.0, 1.5, 1.0, 3.0, 0.7, 1.2],
        );
        for z in 0..2 {
            let s = KernelSmoother::new(p.clone(), z, vec![0.25]).unwrap();
            for &v in &[0.0, 0.3, 0.77] {
                let full = s.estimate(&[v]).unwrap().summary();
                let fast = s.summary(&[v]).unwrap();
                assert!((full.tau_r - fast.tau_r).abs() < 1e-12);
                assert!((full.tau_o - fast.tau_o).abs() < 1e-12);
                assert!((full.moments.rr - fast.moments.rr).abs() < 1e-10 * full.moments.rr.max(1.0));
                assert!((full.moments.oo - fast.moments.oo).abs() < 1e-10 * full.moments.oo.max(1.0));
                assert_eq!(full.moments.ro, 0.0);
                assert_eq!(s.trial_estimate(&[v]).unwrap(), fast.tau_r);
            }
        }
    }

    #[test]
    fn lattice_matches_direct_evaluation() {
        let m = 40;
        let z = vec![0, 1, 0, 1, 1, 0, 1, 0, 1, 1];
        let c = [0usize, 3, 3, 7, 12, 20, 20, 31, 39, 40];
        let v: Vec<f64> = c.iter().map(|&c| c as f64 / m as f64).collect();
        let psi = vec![1.0, -2.0, 4.0, 0.5, 3.0, -1.0, 2.0, 0.0, 1.5, -0.5];
        let omega = vec![0.5, 2.0, 1.5, 1.0, 3.0, 0.7, 1.2, 2.2, 0.9, 1.1];
        let p = panel(z, v, psi, omega);
        for target in 0..2 {
            let s = KernelSmoother::new(p.clone(), target, vec![0.15]).unwrap();
            let l = s.lattice(m).unwrap();
            for q in [0usize, 5, 20, 33, 40] {
                let x = [q as f64 / m as f64];
                let a = s.summary(&x).unwrap();
                let b = l.summary(q).unwrap();
                let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
                assert!(close(a.tau_r, b.tau_r) && close(a.tau_o, b.tau_o));
                assert!(close(a.f_r, b.f_r) && close(a.f_o, b.f_o));
                assert!(close(a.moments.rr, b.moments.rr) && close(a.moments.oo, b.moments.oo));
                assert!(close(s.trial_estimate(&x).unwrap(), l.trial_estimate(q).unwrap()));
            }
        }
        assert!(KernelSmoother::new(p, 0, vec![0.15]).unwrap().lattice(41).is_none());
        assert_eq!(lattice_index(0.25, 40), Some(10));
        assert_eq!(lattice_index(0.2501, 40), None);
    }

    #[test]
    fn huge_bandwidth_gives_weighted_mean() {
        let p = panel(
            vec![0, 0, 0, 1],
            vec![0.0, 0.3, 0.9, 0.5],
            vec![1.0, 2.0, 6.0, 0.0],
            vec![1.0, 3.0, 0.5, 1.0],
        );
        let mean = (1.0 * 1.0 + 3.0 * 2.0 + 0.5 * 6.0) / 4.5;
        for &v in &[0.0, 0.5, 1.0] {
            let est = base_estimates(&p, 1, &[v], &KernelConfig::fixed(1e6)).unwrap();
            assert!((est.tau_r - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn target_weights_follow_exponents() {
        let p = panel(vec![0, 1], vec![0.0, 0.0], vec![1.0, 2.0], vec![4.0, 8.0]);
        let s1 = KernelSmoother::new(p.clone(), 1, vec![1.0]).unwrap();
        let s0 = KernelSmoother::new(p, 0, vec![1.0]).unwrap();
        assert_eq!(s1.weight, vec![4.0, 1.0]);
        assert_eq!(s0.weight, vec![1.0, 1.0 / 8.0]);
    }

    fn naive(z: &[u8], v: &[f64], psi: &[f64], omega: &[f64], target: u8, h: f64, x: f64) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let n = z.len();
        let k = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let w = |i: usize| {
            let e = target as i32 - z[i] as i32;
            omega[i].powi(e)
        };
        let mut out = Vec::new();
        for arm in 0..2u8 {
            let mut f = 0.0;
            let mut num = 0.0;
            for j in 0..n {
                if z[j] == arm {
                    f += k((v[j] - x) / h) / h * w(j) / n as f64;
                    num += k((v[j] - x) / h) / h * w(j) * psi[j] / n as f64;
                }
            }
            let tau = num / f;
            let xi: Vec<f64> = (0..n)
                .map(|i| if z[i] == arm { k((v[i] - x) / h) * w(i) * (psi[i] - tau) / f } else { 0.0 })
                .collect();
            out.push((tau, xi));
        }
        let (o, r) = (out.pop().unwrap(), out.pop().unwrap());
        (r.0, o.0, r.1, o.1)
    }

    fn arb_panel() -> impl proptest::strategy::Strategy<Value = (Vec<u8>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        use proptest::prelude::*;
        (4usize..50).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..2, n).prop_map(|mut z| {
                    z[0] = 0;
                    z[1] = 1;
                    z
                }),
                proptest::collection::vec(0.0f64..1.0, n),
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(0.2f64..5.0, n),
            )
        })
    }

    proptest::proptest! {
        #[test]
        fn matches_naive_double_loop(
            (z, v, psi, omega) in arb_panel(),
            target in 0u8..2,
            h in 0.2f64..1.0,
            x in 0.0f64..1.0,
        ) {
            let p = panel(z.clone(), v.clone(), psi.clone(), omega.clone());
            let est = KernelSmoother::new(p, target, vec![h]).unwrap().estimate(&[x]).unwrap();
            let (tr, to, xr, xo) = naive(&z, &v, &psi, &omega, target, h, x);
            let tol = |a: f64| 1e-12 * a.abs().max(1.0);
            proptest::prop_assert!((est.tau_r - tr).abs() < tol(tr));
            proptest::prop_assert!((est.tau_o - to).abs() < tol(to));
            for i in 0..z.len() {
                proptest::prop_assert!((est.xi_r[i] - xr[i]).abs() < 1e-10 * xr[i].abs().max(1.0));
                proptest::prop_assert!((est.xi_o[i] - xo[i]).abs() < 1e-10 * xo[i].abs().max(1.0));
            }
        }

        #[test]
        fn influence_sums_to_zero_and_estimate_is_convex(
            (z, v, psi, omega) in arb_panel(),
            target in 0u8..2,
            h in 0.05f64..1.0,
            x in 0.0f64..1.0,
        ) {
            let p = panel(z.clone(), v, psi.clone(), omega);
            let Ok(est) = KernelSmoother::new(p, target, vec![h]).unwrap().estimate(&[x]) else {
                return Ok(());
            };
            for (xi, arm, tau) in [(&est.xi_r, 0u8, est.tau_r), (&est.xi_o, 1u8, est.tau_o)] {
                let scale: f64 = xi.iter().map(|a| a.abs()).sum::<f64>().max(1.0);
                proptest::prop_assert!(xi.iter().sum::<f64>().abs() < 1e-8 * scale);
                let vals: Vec<f64> = z.iter().zip(&psi).filter(|(&s, _)| s == arm).map(|(_, &p)| p).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                proptest::prop_assert!(tau >= lo - 1e-12 && tau <= hi + 1e-12);
            }
        }
    }
}
