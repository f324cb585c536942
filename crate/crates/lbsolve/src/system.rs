//! Assembly and matrix-free application of the augmented discrete system.
//!
//! Unknowns are ordered curve-major: the N densities of curve 0, then of
//! curve 1, ..., followed by the M source strengths. The density rows read
//!
//! ```text
//! sigma_i + 2h sum_j sigma_j K(xi_i, xi_j) + sum_m E[i,m] A_m = 2 g_i
//! ```
//!
//! with `E[i,m] = 2 G(xi_i, anchor_m)` and `h = 2 pi / N`. The bottom block
//! carries `sum_k A_k = 0` in its first row and `sum_j sigma^k_j = 0` for
//! each curve k >= 1 in the remaining rows.
//!
//! Applying the operator costs O(NM) in FMM mode: the Cauchy part of the
//! kernel sums over charges `sigma_j dxi_j`, the correction term is a single
//! target-independent scalar, and only the small E block is dense.

use crate::fmm::{CauchyFmm, FmmConfig};
use crate::geometry::{IslandDomain, PlanePoint};
use crate::kernels::{correction_weight, dlp_kernel, dlp_kernel_diag, green_plane, KernelError};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("domain must pass orient_and_validate before assembly")]
    DomainNotValidated,
    #[error("all curves must share one node count; curve {curve} has {got}, expected {want}")]
    UnevenNodeCounts { curve: usize, got: usize, want: usize },
    #[error("need an even node count of at least 8 per curve, got {0}")]
    BadNodeCount(usize),
    #[error("boundary data length {got} does not match {want} nodes")]
    DataLength { got: usize, want: usize },
    #[error("vector length {got} does not match system dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("boundary data contains a non-finite value")]
    NonFiniteData,
    #[error("need at least two islands, got {0}")]
    NeedTwoIslands(usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Fmm(#[from] crate::fmm::FmmError),
}

/// How the dense kernel block is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyMode {
    /// O(N^2) summation with the explicit kernel.
    Direct,
    /// Fast multipole summation of the Cauchy part.
    Fmm,
}

/// The assembled (N*M + M)-dimensional system in matrix-free form.
pub struct DiscreteSystem {
    domain: Arc<IslandDomain>,
    n_per_curve: usize,
    n_islands: usize,
    rhs: Vec<f64>,
    /// Dense influence block, row-major (N*M) x M: E[i][m] = 2 G(xi_i, anchor_m).
    e_block: Vec<f64>,
    mode: ApplyMode,
    // Flattened per-node data, curve-major.
    nodes: Vec<PlanePoint>,
    d_nodes: Vec<PlanePoint>,
    curvatures: Vec<f64>,
    /// Correction weights Im{conj(xi_j) dxi_j / (1+|xi_j|^2)}.
    corr: Vec<f64>,
    fmm: Option<CauchyFmm>,
    fmm_cfg: FmmConfig,
}

/// Assembles the augmented system for given per-node boundary values.
pub fn assemble(
    domain: &Arc<IslandDomain>,
    g: &[f64],
    mode: ApplyMode,
    fmm_cfg: &FmmConfig,
) -> Result<DiscreteSystem, SystemError> {
    if !domain.is_validated() {
        return Err(SystemError::DomainNotValidated);
    }
    let m = domain.n_islands();
    let n = domain.curves()[0].n_nodes();
    if n < 8 || n % 2 != 0 {
        return Err(SystemError::BadNodeCount(n));
    }
    for (k, c) in domain.curves().iter().enumerate() {
        if c.n_nodes() != n {
            return Err(SystemError::UnevenNodeCounts { curve: k, got: c.n_nodes(), want: n });
        }
    }
    let nm = n * m;
    if g.len() != nm {
        return Err(SystemError::DataLength { got: g.len(), want: nm });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(SystemError::NonFiniteData);
    }

    let nodes: Vec<PlanePoint> = domain.all_nodes().collect();
    let d_nodes: Vec<PlanePoint> =
        domain.curves().iter().flat_map(|c| c.d_nodes().iter().copied()).collect();
    let curvatures: Vec<f64> =
        domain.curves().iter().flat_map(|c| c.curvatures().iter().copied()).collect();
    let corr: Vec<f64> =
        nodes.iter().zip(&d_nodes).map(|(&z, &dz)| correction_weight(z, dz)).collect();

    let mut e_block = vec![0.0; nm * m];
    for i in 0..nm {
        for (mm, &a) in domain.anchors().iter().enumerate() {
            e_block[i * m + mm] = 2.0 * green_plane(nodes[i], a)?;
        }
    }

    let mut rhs = vec![0.0; nm + m];
    for i in 0..nm {
        rhs[i] = 2.0 * g[i];
    }

    let fmm = match mode {
        ApplyMode::Fmm => Some(CauchyFmm::for_sources(&nodes, fmm_cfg)?),
        ApplyMode::Direct => None,
    };

    Ok(DiscreteSystem {
        domain: Arc::clone(domain),
        n_per_curve: n,
        n_islands: m,
        rhs,
        e_block,
        mode,
        nodes,
        d_nodes,
        curvatures,
        corr,
        fmm,
        fmm_cfg: *fmm_cfg,
    })
}

impl DiscreteSystem {
    pub fn dim(&self) -> usize {
        self.n_per_curve * self.n_islands + self.n_islands
    }

    pub fn n_per_curve(&self) -> usize {
        self.n_per_curve
    }

    pub fn n_islands(&self) -> usize {
        self.n_islands
    }

    pub fn n_density(&self) -> usize {
        self.n_per_curve * self.n_islands
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn domain(&self) -> &Arc<IslandDomain> {
        &self.domain
    }

    pub fn mode(&self) -> ApplyMode {
        self.mode
    }

    pub fn fmm_config(&self) -> &FmmConfig {
        &self.fmm_cfg
    }

    pub fn fmm_plan(&self) -> Option<&CauchyFmm> {
        self.fmm.as_ref()
    }

    /// Row-major (N*M) x M influence block.
    pub fn e_block(&self) -> &[f64] {
        &self.e_block
    }

    /// E * a.
    pub fn e_apply(&self, a: &[f64]) -> Vec<f64> {
        let m = self.n_islands;
        (0..self.n_density())
            .map(|i| (0..m).map(|mm| self.e_block[i * m + mm] * a[mm]).sum())
            .collect()
    }

    /// F * sigma: zero first entry, then per-curve density sums for curves
    /// 1..M.
    pub fn f_apply(&self, sigma: &[f64]) -> Vec<f64> {
        let n = self.n_per_curve;
        let mut out = vec![0.0; self.n_islands];
        for k in 1..self.n_islands {
            out[k] = sigma[k * n..(k + 1) * n].iter().sum();
        }
        out
    }

    /// D * a: the strength-sum row, zero elsewhere.
    pub fn d_apply(&self, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_islands];
        out[0] = a.iter().sum();
        out
    }

    /// Applies the full augmented operator to `v = [sigma; a]`.
    pub fn apply_operator(&self, v: &[f64]) -> Result<Vec<f64>, SystemError> {
        let dim = self.dim();
        if v.len() != dim {
            return Err(SystemError::DimensionMismatch { got: v.len(), want: dim });
        }
        let nm = self.n_density();
        let (sigma, a) = v.split_at(nm);

        let kv = match self.mode {
            ApplyMode::Direct => self.k_apply_direct(sigma),
            ApplyMode::Fmm => self.k_apply_fmm(sigma)?,
        };

        let ea = self.e_apply(a);
        let h = 2.0 * PI / self.n_per_curve as f64;
        let mut out = vec![0.0; dim];
        for i in 0..nm {
            out[i] = sigma[i] + 2.0 * h * kv[i] + ea[i];
        }
        let fs = self.f_apply(sigma);
        let da = self.d_apply(a);
        for k in 0..self.n_islands {
            out[nm + k] = fs[k] + da[k];
        }
        Ok(out)
    }

    /// Dense kernel action (K sigma)_i including the diagonal limit.
    fn k_apply_direct(&self, sigma: &[f64]) -> Vec<f64> {
        let nm = self.n_density();
        (0..nm)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..nm {
                    acc += if i == j {
                        sigma[j] * dlp_kernel_diag(self.nodes[j], self.d_nodes[j], self.curvatures[j])
                    } else {
                        sigma[j] * dlp_kernel(self.nodes[i], self.nodes[j], self.d_nodes[j])
                    };
                }
                acc
            })
            .collect()
    }

    /// Same action through the fast multipole method. The correction term of
    /// the kernel telescopes: the self-correction excluded from the Cauchy
    /// sum is exactly the one the diagonal limit adds back, so the full row
    /// reduces to the Cauchy part plus one global scalar plus the curvature
    /// diagonal.
    fn k_apply_fmm(&self, sigma: &[f64]) -> Result<Vec<f64>, SystemError> {
        let conv = crate::kernels::CANONICAL;
        let plan = self.fmm.as_ref().expect("assembled in FMM mode");
        let charges: Vec<Complex64> =
            sigma.iter().zip(&self.d_nodes).map(|(&s, &dz)| s * dz).collect();
        let cauchy = plan.evaluate_self(&charges)?;
        let corr_dot: f64 = sigma.iter().zip(&self.corr).map(|(s, c)| s * c).sum();
        let nm = self.n_density();
        let mut out = Vec::with_capacity(nm);
        for i in 0..nm {
            let val = conv.sign_cauchy * cauchy[i].im - conv.sign_correction * corr_dot
                + conv.diag_curv_coeff * self.curvatures[i] * self.d_nodes[i].norm() * sigma[i];
            out.push(val / (2.0 * PI));
        }
        Ok(out)
    }
}

/// Probe values of the double layer potential applied to the indicator
/// density of curve `k`, together with the numerically defined island
/// constant `D_k`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityValues {
    /// W zeta_k at a probe inside the plane contour of curve k.
    pub interior: f64,
    /// Principal-value integral on curve k itself.
    pub boundary: f64,
    /// W zeta_k at a probe outside the contour.
    pub exterior: f64,
    /// Correction contour value of curve k under the canonical convention;
    /// equals +/- (spherical area of the region the contour encloses)/(4 pi).
    pub d_k: f64,
}

/// Correction-contour constant of curve `k`, by trapezoid quadrature.
pub fn island_constant(domain: &IslandDomain, k: usize) -> f64 {
    let conv = crate::kernels::CANONICAL;
    let curve = &domain.curves()[k];
    let h = 2.0 * PI / curve.n_nodes() as f64;
    let sum: f64 = curve
        .nodes()
        .iter()
        .zip(curve.d_nodes())
        .map(|(&z, &dz)| correction_weight(z, dz))
        .sum();
    -conv.sign_correction * h * sum / (2.0 * PI)
}

/// Evaluates the constant-density identities for curve `k`.
///
/// With the canonical orientation the values are, writing `D_k` for the
/// contour constant:
///
/// - interior-of-contour probe: `1 + D_k` when the solution region is inside
///   the contour (the north-pole island's curve), else `-1 + D_k`;
/// - on the contour (principal value): that interior value minus 1/2;
/// - exterior probe: the interior value minus 1.
pub fn identity_values(domain: &IslandDomain, k: usize) -> Result<IdentityValues, SystemError> {
    if !domain.is_validated() {
        return Err(SystemError::DomainNotValidated);
    }
    let nm = domain.total_nodes();
    let n = domain.curves()[0].n_nodes();
    let mut zeta = vec![0.0; nm];
    for j in 0..domain.curves()[k].n_nodes() {
        zeta[k * n + j] = 1.0;
    }

    let interior_probe = probe_inside_contour(domain, k);
    let exterior_probe = probe_outside_contour(domain, k);

    let vals = crate::kernels::dlp_apply_direct(
        domain,
        &zeta,
        crate::kernels::DlpTargets::Points(&[interior_probe, exterior_probe]),
    )?;
    // Boundary value: strip the jump term from the interior-limit node value.
    let node_vals =
        crate::kernels::dlp_apply_direct(domain, &zeta, crate::kernels::DlpTargets::BoundaryNodes)?;
    let boundary = node_vals[k * n] - 0.5;

    Ok(IdentityValues {
        interior: vals[0],
        boundary,
        exterior: vals[1],
        d_k: island_constant(domain, k),
    })
}

/// A probe point inside the plane contour of curve `k`, well separated from
/// every boundary node.
fn probe_inside_contour(domain: &IslandDomain, k: usize) -> PlanePoint {
    if domain.north_pole_island() == Some(k) {
        // Solution side: inside the contour but outside the other islands.
        best_probe(domain, |p| {
            domain.curves()[k].encloses(p)
                && domain
                    .curves()
                    .iter()
                    .enumerate()
                    .all(|(j, c)| j == k || !c.encloses(p))
        })
    } else {
        // Island side: the anchor qualifies by construction.
        domain.anchors()[k]
    }
}

fn probe_outside_contour(domain: &IslandDomain, k: usize) -> PlanePoint {
    if domain.north_pole_island() == Some(k) {
        domain.anchors()[k]
    } else {
        best_probe(domain, |p| domain.contains_plane_point(p))
    }
}

/// Deterministic candidate sweep maximizing the distance to all nodes.
fn best_probe(domain: &IslandDomain, admissible: impl Fn(PlanePoint) -> bool) -> PlanePoint {
    let nodes: Vec<PlanePoint> = domain.all_nodes().collect();
    let mut best = None;
    let mut best_dist = -1.0;
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    for i in 0..512 {
        // Fibonacci lattice on the sphere, projected.
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / 512.0;
        let phi = 2.0 * PI * (i as f64 / golden).fract();
        let r = (1.0 - z * z).sqrt();
        let p = crate::geometry::SpherePoint { x1: r * phi.cos(), x2: r * phi.sin(), x3: z };
        let Ok(xi) = crate::geometry::stereo_project(&p) else { continue };
        if !admissible(xi) {
            continue;
        }
        let d = nodes.iter().map(|q| (xi - q).norm()).fold(f64::INFINITY, f64::min);
        if d > best_dist {
            best_dist = d;
            best = Some(xi);
        }
    }
    best.expect("no admissible probe point found")
}

/// The piecewise-constant density annihilated by the unaugmented operator:
/// 1 on curve 0, `-c/D_i` on curve `i`, 0 elsewhere, where `c` is the
/// operator's constant response to the curve-0 indicator.
pub fn homogeneous_density(domain: &IslandDomain, i: usize) -> Result<Vec<f64>, SystemError> {
    if domain.n_islands() < 2 {
        return Err(SystemError::NeedTwoIslands(domain.n_islands()));
    }
    assert!(i >= 1 && i < domain.n_islands());
    let d0 = island_constant(domain, 0);
    let di = island_constant(domain, i);
    let c0 = if domain.north_pole_island() == Some(0) { 1.0 + d0 } else { d0 };
    let n = domain.curves()[0].n_nodes();
    let mut sigma = vec![0.0; domain.total_nodes()];
    for j in 0..n {
        sigma[j] = 1.0;
    }
    for j in 0..domain.curves()[i].n_nodes() {
        sigma[i * n + j] = -c0 / di;
    }
    Ok(sigma)
}

/// Residual of the unaugmented second-kind operator on the homogeneous
/// density of curve `i`, in the scaled sup norm. Small values demonstrate
/// the nullspace that the source augmentation removes.
pub fn homogeneous_residual(domain: &IslandDomain, i: usize) -> Result<f64, SystemError> {
    let sigma = homogeneous_density(domain, i)?;
    let vals =
        crate::kernels::dlp_apply_direct(domain, &sigma, crate::kernels::DlpTargets::BoundaryNodes)?;
    let sup = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = sigma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(sup / scale)
}
