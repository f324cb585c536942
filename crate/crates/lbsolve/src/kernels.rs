//! Fundamental solutions on the sphere and in the stereographic plane, and
//! the double-layer kernel of the boundary integral equation.
//!
//! The double layer potential over the projected boundary is
//!
//! ```text
//! (W sigma)(xi) = h * sum_j sigma_j K(xi, xi_j)
//! ```
//!
//! with the per-parameter kernel
//!
//! ```text
//! K(xi, xi_j) = (1/2pi) [ SIGN_CAUCHY * Im{ dxi_j / (xi - xi_j) }
//!             - SIGN_CORRECTION * Im{ conj(xi_j) dxi_j / (1 + |xi_j|^2) } ]
//! ```
//!
//! and the continuous diagonal limit
//!
//! ```text
//! K(xi_j, xi_j) = (1/2pi) [ DIAG_CURV_COEFF * kappa_j |dxi_j|
//!               - SIGN_CORRECTION * Im{ conj(xi_j) dxi_j / (1 + |xi_j|^2) } ].
//! ```
//!
//! The three constants are fixed once by matching the sign-unambiguous
//! kernel on the sphere, `(1/2pi) (x - x') . (s' x x') / |x - x'|^2` per unit
//! arclength (see [`dlp_kernel_sphere_oracle`]); the locking tests are
//! `oracle_fixes_convention_*` below and the kernel-oracle acceptance
//! criterion. The Cauchy and correction terms then contribute +1/2 and -1/2
//! per unit parameter on the canonically oriented projected equator, whose
//! kernel matrix vanishes identically.

use crate::geometry::{sphere_velocity, IslandDomain, PlanePoint, SpherePoint};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("coincident evaluation points (separation {0:.3e})")]
    CoincidentPoints(f64),
    #[error("off-boundary target {index} is within {dist:.3e} of a boundary node")]
    TargetOnBoundary { index: usize, dist: f64 },
    #[error("density length {got} does not match {want} boundary nodes")]
    DimensionMismatch { got: usize, want: usize },
    #[error("oracle tangent must be a unit vector tangent to the sphere")]
    BadTangent,
}

/// Sign and factor choices of the plane kernel, fixed at build time by the
/// sphere-side oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConvention {
    pub sign_cauchy: f64,
    pub sign_correction: f64,
    pub diag_curv_coeff: f64,
}

/// The oracle-locked convention used throughout the crate.
pub const CANONICAL: KernelConvention =
    KernelConvention { sign_cauchy: -1.0, sign_correction: 1.0, diag_curv_coeff: 0.5 };

impl Default for KernelConvention {
    fn default() -> Self {
        CANONICAL
    }
}

/// Generalized fundamental solution of the Laplace-Beltrami operator:
/// `G(x, x0) = -(1/2pi) log ||x - x0|| + (1/4pi) log 2`, with the Euclidean
/// distance in R^3 (not the geodesic distance).
pub fn green_sphere(x: &SpherePoint, x0: &SpherePoint) -> Result<f64, KernelError> {
    let d = x.chord_distance(x0);
    if d <= 1e-14 {
        return Err(KernelError::CoincidentPoints(d));
    }
    Ok(-d.ln() / (2.0 * PI) + 2.0f64.ln() / (4.0 * PI))
}

/// The same fundamental solution expressed in the stereographic plane:
/// `-(1/4pi) log( 2 |xi - xip|^2 / ((1+|xi|^2)(1+|xip|^2)) )`.
pub fn green_plane(xi: PlanePoint, xip: PlanePoint) -> Result<f64, KernelError> {
    let d2 = (xi - xip).norm_sqr();
    if d2 <= 1e-28 {
        return Err(KernelError::CoincidentPoints(d2.sqrt()));
    }
    let arg = 2.0 * d2 / ((1.0 + xi.norm_sqr()) * (1.0 + xip.norm_sqr()));
    Ok(-arg.ln() / (4.0 * PI))
}

/// Target-independent correction weight of a source node,
/// `Im{ conj(xi_j) dxi_j / (1 + |xi_j|^2) }`.
#[inline]
pub fn correction_weight(xi: PlanePoint, dxi: PlanePoint) -> f64 {
    (xi.conj() * dxi).im / (1.0 + xi.norm_sqr())
}

/// Off-diagonal Nystrom kernel per unit parameter, canonical convention.
#[inline]
pub fn dlp_kernel(target: PlanePoint, source: PlanePoint, source_d: PlanePoint) -> f64 {
    dlp_kernel_with(&CANONICAL, target, source, source_d)
}

/// Off-diagonal kernel under an explicit convention.
#[inline]
pub fn dlp_kernel_with(
    conv: &KernelConvention,
    target: PlanePoint,
    source: PlanePoint,
    source_d: PlanePoint,
) -> f64 {
    let cauchy = (source_d / (target - source)).im;
    (conv.sign_cauchy * cauchy - conv.sign_correction * correction_weight(source, source_d))
        / (2.0 * PI)
}

/// Diagonal (coincident-node) kernel limit per unit parameter.
#[inline]
pub fn dlp_kernel_diag(node: PlanePoint, d_node: PlanePoint, curvature: f64) -> f64 {
    dlp_kernel_diag_with(&CANONICAL, node, d_node, curvature)
}

#[inline]
pub fn dlp_kernel_diag_with(
    conv: &KernelConvention,
    node: PlanePoint,
    d_node: PlanePoint,
    curvature: f64,
) -> f64 {
    (conv.diag_curv_coeff * curvature * d_node.norm()
        - conv.sign_correction * correction_weight(node, d_node))
        / (2.0 * PI)
}

/// Sphere-side double-layer kernel, used as the sign oracle in tests:
/// `(1/2pi) (x - x') . (s' x x') / ||x - x'||^2 * speed`, where `s'` is the
/// unit curve tangent at the source and `speed = ds'/dalpha` converts to
/// per-unit-parameter.
pub fn dlp_kernel_sphere_oracle(
    target: &SpherePoint,
    source: &SpherePoint,
    source_tangent: [f64; 3],
    source_speed: f64,
) -> Result<f64, KernelError> {
    let t = source_tangent;
    let tn = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
    let radial = t[0] * source.x1 + t[1] * source.x2 + t[2] * source.x3;
    if (tn - 1.0).abs() > 1e-8 || radial.abs() > 1e-8 {
        return Err(KernelError::BadTangent);
    }
    let d = [target.x1 - source.x1, target.x2 - source.x2, target.x3 - source.x3];
    let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if d2 <= 1e-28 {
        return Err(KernelError::CoincidentPoints(d2.sqrt()));
    }
    // n' = s' x x'
    let n = [
        t[1] * source.x3 - t[2] * source.x2,
        t[2] * source.x1 - t[0] * source.x3,
        t[0] * source.x2 - t[1] * source.x1,
    ];
    Ok((d[0] * n[0] + d[1] * n[1] + d[2] * n[2]) / d2 / (2.0 * PI) * source_speed)
}

/// Evaluation targets for [`dlp_apply_direct`].
pub enum DlpTargets<'a> {
    /// Off-boundary plane points.
    Points(&'a [PlanePoint]),
    /// The domain's own nodes; values are the interior limits
    /// `sigma/2 + PV`.
    BoundaryNodes,
}

/// O(N^2) reference evaluation of the double layer potential.
///
/// In [`DlpTargets::Points`] mode the plain trapezoid values of `W sigma`
/// are returned; a target within 1e-10 of a node is rejected. In
/// [`DlpTargets::BoundaryNodes`] mode each node receives
/// `sigma/2 + PV`, the interior-limit value, with the principal value
/// discretized through the continuous diagonal limit.
pub fn dlp_apply_direct(
    domain: &IslandDomain,
    sigma: &[f64],
    targets: DlpTargets,
) -> Result<Vec<f64>, KernelError> {
    let total = domain.total_nodes();
    if sigma.len() != total {
        return Err(KernelError::DimensionMismatch { got: sigma.len(), want: total });
    }
    let nodes: Vec<PlanePoint> = domain.all_nodes().collect();
    let d_nodes: Vec<PlanePoint> =
        domain.curves().iter().flat_map(|c| c.d_nodes().iter().copied()).collect();
    let curvs: Vec<f64> =
        domain.curves().iter().flat_map(|c| c.curvatures().iter().copied()).collect();
    let n = domain.curves()[0].n_nodes();
    let h = 2.0 * PI / n as f64;

    match targets {
        DlpTargets::Points(pts) => {
            // Reject near-node targets first so the error is deterministic.
            for (t, p) in pts.iter().enumerate() {
                for q in &nodes {
                    let dist = (p - q).norm();
                    if dist < 1e-10 {
                        return Err(KernelError::TargetOnBoundary { index: t, dist });
                    }
                }
            }
            Ok(pts
                .par_iter()
                .map(|&p| {
                    let mut acc = 0.0;
                    for j in 0..total {
                        acc += sigma[j] * dlp_kernel(p, nodes[j], d_nodes[j]);
                    }
                    h * acc
                })
                .collect())
        }
        DlpTargets::BoundaryNodes => Ok((0..total)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..total {
                    acc += if i == j {
                        sigma[j] * dlp_kernel_diag(nodes[j], d_nodes[j], curvs[j])
                    } else {
                        sigma[j] * dlp_kernel(nodes[i], nodes[j], d_nodes[j])
                    };
                }
                0.5 * sigma[i] + h * acc
            })
            .collect()),
    }
}

/// Sphere-side node data of a curve, for oracle comparisons: points, unit
/// tangents, and speeds `ds/dalpha`.
pub fn sphere_side_nodes(
    nodes: &[PlanePoint],
    d_nodes: &[PlanePoint],
) -> (Vec<SpherePoint>, Vec<[f64; 3]>, Vec<f64>) {
    let mut pts = Vec::with_capacity(nodes.len());
    let mut tangents = Vec::with_capacity(nodes.len());
    let mut speeds = Vec::with_capacity(nodes.len());
    for (&z, &dz) in nodes.iter().zip(d_nodes) {
        let p = crate::geometry::stereo_inverse(z);
        let v = sphere_velocity(z, dz);
        let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        pts.push(p);
        tangents.push([v[0] / speed, v[1] / speed, v[2] / speed]);
        speeds.push(speed);
    }
    (pts, tangents, speeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        make_cap_circle, make_plane_ellipse, orient_and_validate, stereo_inverse, IslandDomain,
    };

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn green_sphere_values() {
        let x = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        let anti = SpherePoint::new(0.0, 0.0, -1.0).unwrap();
        // Antipodal points: -(log 2)/(4 pi).
        let expect = -2.0f64.ln() / (4.0 * PI);
        assert!((green_sphere(&x, &anti).unwrap() - expect).abs() < 1e-15);
        // Orthogonal points (separation sqrt 2): exactly zero.
        let orth = SpherePoint::new(1.0, 0.0, 0.0).unwrap();
        assert!(green_sphere(&x, &orth).unwrap().abs() < 1e-16);
        assert!(matches!(green_sphere(&x, &x), Err(KernelError::CoincidentPoints(_))));
        // Symmetry is exact.
        let a = SpherePoint::from_angles(0.7, 1.3);
        let b = SpherePoint::from_angles(2.1, -0.4);
        assert_eq!(green_sphere(&a, &b).unwrap(), green_sphere(&b, &a).unwrap());
    }

    #[test]
    fn green_plane_values() {
        assert!(green_plane(c(0.0, 0.0), c(1.0, 0.0)).unwrap().abs() < 1e-16);
        assert!(matches!(
            green_plane(c(1.0, 2.0), c(1.0, 2.0)),
            Err(KernelError::CoincidentPoints(_))
        ));
    }

    #[test]
    fn green_projection_identity() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let a = c(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let b = c(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            if (a - b).norm() < 1e-6 {
                continue;
            }
            let gp = green_plane(a, b).unwrap();
            let gs = green_sphere(&stereo_inverse(a), &stereo_inverse(b)).unwrap();
            assert!((gp - gs).abs() < 1e-13);
        }
    }

    /// Locks SIGN_CAUCHY and SIGN_CORRECTION: the plane kernel must equal the
    /// sphere-side oracle at every node pair of a latitude cap.
    #[test]
    fn oracle_fixes_convention_offdiag() {
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        for radius in [PI / 4.0, PI / 3.0, 2.0 * PI / 3.0] {
            let cur = make_cap_circle(&ctr, radius, 32).unwrap();
            let (pts, tans, speeds) = sphere_side_nodes(cur.nodes(), cur.d_nodes());
            for i in 0..32 {
                for j in 0..32 {
                    if i == j {
                        continue;
                    }
                    let plane = dlp_kernel(cur.nodes()[i], cur.nodes()[j], cur.d_nodes()[j]);
                    let oracle =
                        dlp_kernel_sphere_oracle(&pts[i], &pts[j], tans[j], speeds[j]).unwrap();
                    assert!(
                        (plane - oracle).abs() < 1e-12,
                        "radius {radius} pair ({i},{j}): {plane} vs {oracle}"
                    );
                }
            }
        }
    }

    /// Locks DIAG_CURV_COEFF: the diagonal limit must continue the
    /// off-diagonal kernel (Richardson extrapolation along the curve).
    #[test]
    fn oracle_fixes_convention_diag() {
        // Plane circle of radius 2 about the origin, clockwise (island-type).
        let n = 16;
        let nodes: Vec<Complex64> =
            (0..n).map(|j| 2.0 * Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64)).collect();
        let cur = crate::geometry::BoundaryCurve::from_nodes(nodes).unwrap();
        let diag = dlp_kernel_diag(cur.nodes()[0], cur.d_nodes()[0], cur.curvatures()[0]);
        // Approach along the parametrized circle with Richardson extrapolation.
        let xi = |a: f64| 2.0 * Complex64::from_polar(1.0, -a);
        let dxi = |a: f64| -2.0 * Complex64::new(0.0, 1.0) * Complex64::from_polar(1.0, -a);
        let k_at = |eps: f64| dlp_kernel(cur.nodes()[0], xi(eps), dxi(eps));
        let (k1, k2) = (k_at(1e-3), k_at(5e-4));
        let extrap = 2.0 * k2 - k1;
        assert!((diag - extrap).abs() < 1e-8, "{diag} vs {extrap}");
    }

    #[test]
    fn equator_kernel_vanishes() {
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        let cur = make_cap_circle(&ctr, PI / 2.0, 64).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                let v = if i == j {
                    dlp_kernel_diag(cur.nodes()[i], cur.d_nodes()[i], cur.curvatures()[i])
                } else {
                    dlp_kernel(cur.nodes()[i], cur.nodes()[j], cur.d_nodes()[j])
                };
                assert!(v.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn equator_term_contributions() {
        // On the canonically oriented projected equator the Cauchy term
        // contributes +1/2 and the correction -1/2 per unit parameter.
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        let cur = make_cap_circle(&ctr, PI / 2.0, 16).unwrap();
        let conv = CANONICAL;
        for i in 0..16 {
            for j in 0..16 {
                if i == j {
                    continue;
                }
                let cauchy = conv.sign_cauchy
                    * (cur.d_nodes()[j] / (cur.nodes()[i] - cur.nodes()[j])).im;
                let corr = -conv.sign_correction
                    * correction_weight(cur.nodes()[j], cur.d_nodes()[j]);
                assert!((cauchy - 0.5).abs() < 1e-13);
                assert!((corr + 0.5).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn latitude_diag_matches_sphere_limit() {
        // Appendix-style limit: -(1/4pi) kappa s.(Np x x) per arclength,
        // computed here from the analytic latitude-circle geometry at
        // theta = pi/4.
        let theta: f64 = PI / 4.0;
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        let n = 32;
        let cur = make_cap_circle(&ctr, theta, n).unwrap();
        let diag = dlp_kernel_diag(cur.nodes()[0], cur.d_nodes()[0], cur.curvatures()[0]);
        // For the latitude circle: curve radius sin(theta), curvature
        // cos(theta)/sin(theta) in the surface sense... use the chord form:
        // the R^3 curve x(t) = (sin th cos t, sin th sin t, cos th) has
        // kappa Np = x'' / |x'|^2, and the limit of the oracle kernel is
        // -(1/4pi) s.(kappa Np x x) * ds/dalpha.
        let (pts, tans, speeds) = sphere_side_nodes(cur.nodes(), cur.d_nodes());
        // finite-difference confirmation along the sphere curve:
        let k_near = dlp_kernel_sphere_oracle(&pts[0], &pts[1], tans[1], speeds[1]).unwrap();
        let k_near2 = dlp_kernel_sphere_oracle(&pts[0], &pts[2], tans[2], speeds[2]).unwrap();
        // Latitude circles have constant kernel; diagonal equals it.
        assert!((k_near - k_near2).abs() < 1e-12);
        assert!((diag - k_near).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_on_random_geometries() {
        let ell = make_plane_ellipse(c(1.1, -0.4), 0.7, 0.4, 0.6, 48).unwrap();
        let (pts, tans, speeds) = sphere_side_nodes(ell.nodes(), ell.d_nodes());
        for i in (0..48).step_by(5) {
            for j in 0..48 {
                if i == j {
                    continue;
                }
                let plane = dlp_kernel(ell.nodes()[i], ell.nodes()[j], ell.d_nodes()[j]);
                let oracle =
                    dlp_kernel_sphere_oracle(&pts[i], &pts[j], tans[j], speeds[j]).unwrap();
                assert!((plane - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_direct_equator_boundary() {
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        let cur = make_cap_circle(&ctr, PI / 2.0, 32).unwrap();
        let dom =
            orient_and_validate(IslandDomain::with_default_anchors(vec![cur]).unwrap()).unwrap();
        let sigma = vec![1.0; 32];
        let vals = dlp_apply_direct(&dom, &sigma, DlpTargets::BoundaryNodes).unwrap();
        for v in vals {
            assert!((v - 0.5).abs() < 1e-13);
        }
    }

    #[test]
    fn apply_direct_zero_density() {
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        let cur = make_cap_circle(&ctr, PI / 3.0, 32).unwrap();
        let dom =
            orient_and_validate(IslandDomain::with_default_anchors(vec![cur]).unwrap()).unwrap();
        let sigma = vec![0.0; 32];
        let pts = [c(0.0, 0.0), c(0.3, -0.2)];
        let vals = dlp_apply_direct(&dom, &sigma, DlpTargets::Points(&pts)).unwrap();
        assert!(vals.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn apply_direct_rejects_near_node_target() {
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        let cur = make_cap_circle(&ctr, PI / 2.0, 32).unwrap();
        let node0 = cur.nodes()[0];
        let dom =
            orient_and_validate(IslandDomain::with_default_anchors(vec![cur]).unwrap()).unwrap();
        let sigma = vec![1.0; 32];
        let pts = [node0 + c(1e-12, 0.0)];
        assert!(matches!(
            dlp_apply_direct(&dom, &sigma, DlpTargets::Points(&pts)),
            Err(KernelError::TargetOnBoundary { index: 0, .. })
        ));
    }

    #[test]
    fn constant_density_identity_single_island() {
        // sigma = 1 on the boundary of a north cap: interior limit must be
        // 1 + D with D the correction contour value.
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        let n = 64;
        let cur = make_cap_circle(&ctr, PI / 4.0, n).unwrap();
        let dom =
            orient_and_validate(IslandDomain::with_default_anchors(vec![cur]).unwrap()).unwrap();
        let h = 2.0 * PI / n as f64;
        let d1: f64 = -CANONICAL.sign_correction * h / (2.0 * PI)
            * dom.curves()[0]
                .nodes()
                .iter()
                .zip(dom.curves()[0].d_nodes())
                .map(|(&z, &dz)| correction_weight(z, dz))
                .sum::<f64>();
        let sigma = vec![1.0; n];
        // Deep inside the plane curve (the solution-domain side for the
        // north-pole island): value 1 + D1.
        let inside = dlp_apply_direct(&dom, &sigma, DlpTargets::Points(&[c(0.0, 0.0)])).unwrap();
        assert!((inside[0] - (1.0 + d1)).abs() < 1e-12);
        // Outside: D1.
        let far = dlp_apply_direct(&dom, &sigma, DlpTargets::Points(&[c(9.0, 0.0)])).unwrap();
        assert!((far[0] - d1).abs() < 1e-10);
        // On the boundary: 1/2 + (1/2 + D1) from the interior-limit mode.
        let bdry = dlp_apply_direct(&dom, &sigma, DlpTargets::BoundaryNodes).unwrap();
        for v in bdry {
            assert!((v - (1.0 + d1)).abs() < 1e-12);
        }
    }
}
