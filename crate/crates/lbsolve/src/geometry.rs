//! Sphere and plane geometry: stereographic projection, smooth closed
//! boundary curves, and validated multi-island domains.
//!
//! Every curve is a 2*pi-periodic parametrization sampled at N equispaced
//! parameter values alpha_j = 2*pi*j/N. A curve stores the projected nodes
//! xi_j, the parameter derivatives dxi_j = dxi/dalpha (not premultiplied by
//! the mesh width), and the signed plane curvatures kappa_j.
//!
//! Orientation convention: a validated domain has the solution region on the
//! left of every curve. The curve bounding the island that covers the north
//! pole (whose projected island side is the unbounded part of the plane) is
//! traversed counterclockwise; every other island boundary is traversed
//! clockwise. This is the convention under which the interior limit of the
//! double layer potential equals `sigma/2` plus the principal-value integral.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use thiserror::Error;

/// A point of the stereographic plane, stored as a complex number.
pub type PlanePoint = Complex64;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point is off the unit sphere (|x|^2 - 1 = {0:.3e})")]
    OffSphere(f64),
    #[error("stereographic projection is singular at the north pole (1 - x3 = {0:.3e})")]
    NorthPoleSingular(f64),
    #[error("cap radius {0} must lie in (0, pi) away from the endpoints")]
    DegenerateCap(f64),
    #[error("cap boundary passes through the north pole (gap {0:.3e})")]
    CapThroughPole(f64),
    #[error("ellipse semi-axes must be positive (a = {a}, b = {b})")]
    DegenerateEllipse { a: f64, b: f64 },
    #[error("need at least {min} nodes, got {got}")]
    TooFewNodes { got: usize, min: usize },
    #[error("node count {0} must be even for spectral differentiation")]
    OddNodeCount(usize),
    #[error("curve parametrization has near-zero speed at node {0}")]
    ZeroSpeed(usize),
    #[error("polyline has {0} vertices; at least 16 are required")]
    TooFewVertices(usize),
    #[error("polyline is self-intersecting (segments {0} and {1})")]
    SelfIntersecting(usize, usize),
    #[error("islands {0} and {1} overlap")]
    OverlappingIslands(usize, usize),
    #[error("anchor of island {0} lies outside the island")]
    AnchorOutsideIsland(usize),
    #[error("{0} anchors supplied for {1} islands")]
    AnchorCount(usize, usize),
    #[error("polyline parse error at line {line}: {msg}")]
    PolylineParse { line: usize, msg: String },
    #[error("geometry contains a non-finite coordinate")]
    NonFinite,
}

// ---------------------------------------------------------------------------
// Points and projection
// ---------------------------------------------------------------------------

/// A point on the unit sphere in Cartesian coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl SpherePoint {
    /// Builds a sphere point, requiring `x1^2 + x2^2 + x3^2 = 1` to 1e-12.
    pub fn new(x1: f64, x2: f64, x3: f64) -> Result<Self, GeometryError> {
        let r2 = x1 * x1 + x2 * x2 + x3 * x3;
        if !r2.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if (r2 - 1.0).abs() > 1e-12 {
            return Err(GeometryError::OffSphere(r2 - 1.0));
        }
        Ok(Self { x1, x2, x3 })
    }

    /// Normalizes an arbitrary nonzero vector onto the sphere.
    pub fn normalized(x1: f64, x2: f64, x3: f64) -> Result<Self, GeometryError> {
        let r = (x1 * x1 + x2 * x2 + x3 * x3).sqrt();
        if !r.is_finite() || r < 1e-300 {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { x1: x1 / r, x2: x2 / r, x3: x3 / r })
    }

    /// Point at polar angle `theta` (0 at the north pole) and azimuth `phi`.
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        Self { x1: phi.cos() * theta.sin(), x2: phi.sin() * theta.sin(), x3: theta.cos() }
    }

    pub fn theta(&self) -> f64 {
        self.x3.clamp(-1.0, 1.0).acos()
    }

    pub fn phi(&self) -> f64 {
        self.x2.atan2(self.x1)
    }

    pub fn dot(&self, o: &SpherePoint) -> f64 {
        self.x1 * o.x1 + self.x2 * o.x2 + self.x3 * o.x3
    }

    /// Euclidean (chord) distance in R^3.
    pub fn chord_distance(&self, o: &SpherePoint) -> f64 {
        let d1 = self.x1 - o.x1;
        let d2 = self.x2 - o.x2;
        let d3 = self.x3 - o.x3;
        (d1 * d1 + d2 * d2 + d3 * d3).sqrt()
    }

    /// Geodesic distance on the unit sphere.
    pub fn geodesic_distance(&self, o: &SpherePoint) -> f64 {
        self.dot(o).clamp(-1.0, 1.0).acos()
    }
}

/// Stereographic projection from the north pole,
/// `xi = (x1 + i x2) / (1 - x3)`.
///
/// The south pole maps to the origin and the equator to the unit circle.
/// Fails within 1e-13 of the north pole, which maps to infinity.
pub fn stereo_project(p: &SpherePoint) -> Result<PlanePoint, GeometryError> {
    let denom = 1.0 - p.x3;
    if denom <= 1e-13 {
        return Err(GeometryError::NorthPoleSingular(denom));
    }
    if p.x3 > 0.0 {
        // Near the pole 1 - x3 cancels; on the unit sphere
        // (1 - x3)(1 + x3) = x1^2 + x2^2 gives a stable equivalent.
        let r2 = p.x1 * p.x1 + p.x2 * p.x2;
        let scale = (1.0 + p.x3) / r2;
        Ok(Complex64::new(p.x1 * scale, p.x2 * scale))
    } else {
        Ok(Complex64::new(p.x1 / denom, p.x2 / denom))
    }
}

/// Inverse stereographic projection.
///
/// `x1 = (xi + conj(xi))/(1 + |xi|^2)`, `x2 = (xi - conj(xi))/(i (1 + |xi|^2))`,
/// `x3 = (|xi|^2 - 1)/(1 + |xi|^2)`, so that `stereo_project` round-trips:
/// the origin returns the south pole and large `|xi|` approaches the north pole.
pub fn stereo_inverse(xi: PlanePoint) -> SpherePoint {
    let s = 1.0 + xi.norm_sqr();
    SpherePoint {
        x1: 2.0 * xi.re / s,
        x2: 2.0 * xi.im / s,
        x3: (xi.norm_sqr() - 1.0) / s,
    }
}

/// Velocity of the sphere-side image of a plane curve: given `xi(alpha)` and
/// `dxi/dalpha`, returns `dx/dalpha` in R^3.
pub fn sphere_velocity(xi: PlanePoint, dxi: PlanePoint) -> [f64; 3] {
    let s = 1.0 + xi.norm_sqr();
    let ds = 2.0 * (xi.conj() * dxi).re;
    let x1 = 2.0 * xi.re;
    let x2 = 2.0 * xi.im;
    let x3 = xi.norm_sqr() - 1.0;
    [
        (2.0 * dxi.re * s - x1 * ds) / (s * s),
        (2.0 * dxi.im * s - x2 * ds) / (s * s),
        (ds * s - x3 * ds) / (s * s),
    ]
}

// ---------------------------------------------------------------------------
// Spectral differentiation
// ---------------------------------------------------------------------------

/// Spectral derivatives of equispaced samples of a smooth closed curve.
///
/// Returns the parameter derivatives `dxi_j` and signed curvatures
/// `kappa_j = Im(conj(xi') xi'') / |xi'|^3`; kappa is +1 everywhere on a
/// counterclockwise unit circle. N must be even.
pub fn curve_derivatives(
    nodes: &[PlanePoint],
) -> Result<(Vec<PlanePoint>, Vec<f64>), GeometryError> {
    let n = nodes.len();
    if n < 4 {
        return Err(GeometryError::TooFewNodes { got: n, min: 4 });
    }
    if n % 2 != 0 {
        return Err(GeometryError::OddNodeCount(n));
    }
    if nodes.iter().any(|z| !z.is_finite()) {
        return Err(GeometryError::NonFinite);
    }

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut hat: Vec<Complex64> = nodes.to_vec();
    fft.process(&mut hat);

    // Wavenumber for FFT bin m; the Nyquist bin is dropped from odd-order
    // derivatives.
    let wavenum = |m: usize| -> f64 {
        if m < n / 2 {
            m as f64
        } else if m == n / 2 {
            0.0
        } else {
            m as f64 - n as f64
        }
    };

    let mut d1: Vec<Complex64> = (0..n)
        .map(|m| hat[m] * Complex64::new(0.0, wavenum(m)) / n as f64)
        .collect();
    let mut d2: Vec<Complex64> = (0..n)
        .map(|m| {
            let k = if m == n / 2 { -(n as f64) / 2.0 } else { wavenum(m) };
            hat[m] * Complex64::new(-k * k, 0.0) / n as f64
        })
        .collect();
    ifft.process(&mut d1);
    ifft.process(&mut d2);

    let max_speed = d1.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    let mut curv = Vec::with_capacity(n);
    for j in 0..n {
        let sp = d1[j].norm();
        if sp < 1e-12 * max_speed {
            return Err(GeometryError::ZeroSpeed(j));
        }
        curv.push((d1[j].conj() * d2[j]).im / (sp * sp * sp));
    }
    Ok((d1, curv))
}

// ---------------------------------------------------------------------------
// Boundary curves
// ---------------------------------------------------------------------------

/// Sign of the enclosed plane area.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Counterclockwise: positive enclosed area.
    Positive,
    /// Clockwise: negative enclosed area.
    Negative,
}

/// One closed island contour in the stereographic plane, sampled at N
/// equispaced parameter nodes.
#[derive(Debug, Clone)]
pub struct BoundaryCurve {
    nodes: Vec<PlanePoint>,
    d_nodes: Vec<PlanePoint>,
    curvatures: Vec<f64>,
    orientation: Orientation,
}

impl BoundaryCurve {
    /// Builds a curve from node samples alone, computing derivatives and
    /// curvatures spectrally.
    pub fn from_nodes(nodes: Vec<PlanePoint>) -> Result<Self, GeometryError> {
        let (d_nodes, curvatures) = curve_derivatives(&nodes)?;
        Ok(Self::from_parts(nodes, d_nodes, curvatures))
    }

    /// Builds a curve from analytically known derivatives.
    pub fn from_parts(
        nodes: Vec<PlanePoint>,
        d_nodes: Vec<PlanePoint>,
        curvatures: Vec<f64>,
    ) -> Self {
        assert_eq!(nodes.len(), d_nodes.len());
        assert_eq!(nodes.len(), curvatures.len());
        let mut c = Self { nodes, d_nodes, curvatures, orientation: Orientation::Positive };
        c.orientation =
            if c.signed_area() >= 0.0 { Orientation::Positive } else { Orientation::Negative };
        c
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[PlanePoint] {
        &self.nodes
    }

    pub fn d_nodes(&self) -> &[PlanePoint] {
        &self.d_nodes
    }

    pub fn curvatures(&self) -> &[f64] {
        &self.curvatures
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// Signed enclosed area via the spectral trapezoid rule on
    /// `(1/2) Im oint conj(xi) dxi`.
    pub fn signed_area(&self) -> f64 {
        let h = 2.0 * PI / self.n_nodes() as f64;
        0.5 * h
            * self
                .nodes
                .iter()
                .zip(&self.d_nodes)
                .map(|(z, dz)| (z.conj() * dz).im)
                .sum::<f64>()
    }

    /// Reverses the traversal direction in place, keeping node 0 first.
    pub fn reverse(&mut self) {
        let n = self.n_nodes();
        let perm: Vec<usize> = (0..n).map(|j| (n - j) % n).collect();
        self.nodes = perm.iter().map(|&j| self.nodes[j]).collect();
        self.d_nodes = perm.iter().map(|&j| -self.d_nodes[j]).collect();
        self.curvatures = perm.iter().map(|&j| -self.curvatures[j]).collect();
        self.orientation = match self.orientation {
            Orientation::Positive => Orientation::Negative,
            Orientation::Negative => Orientation::Positive,
        };
    }

    /// Winding number of the sampled polygon around `p` (counterclockwise
    /// positive). Reliable for points a node spacing or more away.
    pub fn winding_number(&self, p: PlanePoint) -> i32 {
        let mut w = 0i32;
        let n = self.n_nodes();
        for j in 0..n {
            let a = self.nodes[j];
            let b = self.nodes[(j + 1) % n];
            if a.im <= p.im {
                if b.im > p.im && cross(b - a, p - a) > 0.0 {
                    w += 1;
                }
            } else if b.im <= p.im && cross(b - a, p - a) < 0.0 {
                w -= 1;
            }
        }
        w
    }

    /// True if `p` lies strictly inside the closed curve.
    pub fn encloses(&self, p: PlanePoint) -> bool {
        self.winding_number(p) != 0
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for z in &self.nodes {
            xmin = xmin.min(z.re);
            xmax = xmax.max(z.re);
            ymin = ymin.min(z.im);
            ymax = ymax.max(z.im);
        }
        (xmin, xmax, ymin, ymax)
    }
}

fn cross(a: PlanePoint, b: PlanePoint) -> f64 {
    a.re * b.im - a.im * b.re
}

/// Boundary circle of a spherical cap, projected to the plane.
///
/// `center` is the cap center on the sphere and `radius` its geodesic
/// half-angle. Node positions, parameter derivatives and curvatures are
/// analytic. The curve is oriented by the domain convention: positive
/// (counterclockwise) when the cap covers the north pole, negative
/// otherwise.
pub fn make_cap_circle(
    center: &SpherePoint,
    radius: f64,
    n: usize,
) -> Result<BoundaryCurve, GeometryError> {
    if !(radius > 1e-6 && radius < PI - 1e-6) {
        return Err(GeometryError::DegenerateCap(radius));
    }
    if n < 4 {
        return Err(GeometryError::TooFewNodes { got: n, min: 4 });
    }
    if n % 2 != 0 {
        return Err(GeometryError::OddNodeCount(n));
    }
    // Polar angle of the cap center; the boundary stays at angular distance
    // `radius` from it, so it hits the pole iff |theta_c - radius| = 0.
    let theta_c = center.theta();
    let gap = (theta_c - radius).abs();
    if gap < 1e-9 {
        return Err(GeometryError::CapThroughPole(gap));
    }
    let contains_pole = theta_c < radius;

    // Orthonormal frame (u, v) perpendicular to the center direction.
    let c = [center.x1, center.x2, center.x3];
    let mut u = [-c[1], c[0], 0.0];
    let un = (u[0] * u[0] + u[1] * u[1]).sqrt();
    if un < 1e-12 {
        u = [1.0, 0.0, 0.0];
    } else {
        u = [u[0] / un, u[1] / un, 0.0];
    }
    let v = [
        c[1] * u[2] - c[2] * u[1],
        c[2] * u[0] - c[0] * u[2],
        c[0] * u[1] - c[1] * u[0],
    ];

    let (sr, cr) = (radius.sin(), radius.cos());
    let mut nodes = Vec::with_capacity(n);
    let mut d_nodes = Vec::with_capacity(n);
    let mut curvatures = Vec::with_capacity(n);
    for j in 0..n {
        let a = 2.0 * PI * j as f64 / n as f64;
        let (sa, ca) = (a.sin(), a.cos());
        // x(a) = cos r * c + sin r (cos a * u + sin a * v), with derivatives
        // x' and x'' analytic in a.
        let comp = |i: usize| cr * c[i] + sr * (ca * u[i] + sa * v[i]);
        let dcomp = |i: usize| sr * (-sa * u[i] + ca * v[i]);
        let ddcomp = |i: usize| sr * (-ca * u[i] - sa * v[i]);
        let (x1, x2, x3) = (comp(0), comp(1), comp(2));
        let (dx1, dx2, dx3) = (dcomp(0), dcomp(1), dcomp(2));
        let (ddx1, ddx2, ddx3) = (ddcomp(0), ddcomp(1), ddcomp(2));

        let s = 1.0 - x3;
        if s <= 1e-13 {
            return Err(GeometryError::NorthPoleSingular(s));
        }
        let w = Complex64::new(x1, x2);
        let dw = Complex64::new(dx1, dx2);
        let ddw = Complex64::new(ddx1, ddx2);
        let xi = w / s;
        // xi = w/s with s = 1 - x3: quotient-rule derivatives in alpha.
        let dxi = dw / s + w * dx3 / (s * s);
        let ddxi = ddw / s + 2.0 * dw * dx3 / (s * s) + w * ddx3 / (s * s)
            + 2.0 * w * dx3 * dx3 / (s * s * s);
        let speed = dxi.norm();
        nodes.push(xi);
        d_nodes.push(dxi);
        curvatures.push((dxi.conj() * ddxi).im / (speed * speed * speed));
    }
    let mut curve = BoundaryCurve::from_parts(nodes, d_nodes, curvatures);
    let want = if contains_pole { Orientation::Positive } else { Orientation::Negative };
    if curve.orientation() != want {
        curve.reverse();
    }
    Ok(curve)
}

/// Ellipse in the stereographic plane:
/// `xi(a) = center + e^{i rot} (a_semi cos a + i b_semi sin a)`.
///
/// Nodes, derivatives, and curvatures are analytic; the parametrization is
/// counterclockwise as written (curvature `a b / (a^2 sin^2 + b^2 cos^2)^{3/2}`).
/// Domain validation flips interior islands to the clockwise convention.
pub fn make_plane_ellipse(
    center: PlanePoint,
    a_semi: f64,
    b_semi: f64,
    rotation: f64,
    n: usize,
) -> Result<BoundaryCurve, GeometryError> {
    if !(a_semi > 0.0 && b_semi > 0.0) {
        return Err(GeometryError::DegenerateEllipse { a: a_semi, b: b_semi });
    }
    if n < 4 {
        return Err(GeometryError::TooFewNodes { got: n, min: 4 });
    }
    if n % 2 != 0 {
        return Err(GeometryError::OddNodeCount(n));
    }
    let rot = Complex64::from_polar(1.0, rotation);
    let mut nodes = Vec::with_capacity(n);
    let mut d_nodes = Vec::with_capacity(n);
    let mut curvatures = Vec::with_capacity(n);
    for j in 0..n {
        let a = 2.0 * PI * j as f64 / n as f64;
        let (sa, ca) = (a.sin(), a.cos());
        nodes.push(center + rot * Complex64::new(a_semi * ca, b_semi * sa));
        d_nodes.push(rot * Complex64::new(-a_semi * sa, b_semi * ca));
        let denom = a_semi * a_semi * sa * sa + b_semi * b_semi * ca * ca;
        curvatures.push(a_semi * b_semi / denom.powf(1.5));
    }
    Ok(BoundaryCurve::from_parts(nodes, d_nodes, curvatures))
}

// ---------------------------------------------------------------------------
// Polyline ingestion
// ---------------------------------------------------------------------------

/// A closed polyline given in the plane or on the sphere.
#[derive(Debug, Clone)]
pub enum Polyline {
    Plane(Vec<PlanePoint>),
    Sphere(Vec<SpherePoint>),
}

/// Parses a polyline from plain text: one vertex per line, either `x y`
/// (plane) or `x1 x2 x3` (sphere). Blank lines and lines starting with `#`
/// are skipped. The polyline is closed implicitly.
pub fn read_polyline(text: &str) -> Result<Polyline, GeometryError> {
    let mut plane: Vec<PlanePoint> = Vec::new();
    let mut sphere: Vec<SpherePoint> = Vec::new();
    let mut ncols = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| GeometryError::PolylineParse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if ncols == 0 {
            ncols = vals.len();
        }
        if vals.len() != ncols || !(ncols == 2 || ncols == 3) {
            return Err(GeometryError::PolylineParse {
                line: lineno + 1,
                msg: format!("expected {} columns, got {}", ncols.max(2), vals.len()),
            });
        }
        if ncols == 2 {
            plane.push(Complex64::new(vals[0], vals[1]));
        } else {
            sphere.push(SpherePoint::new(vals[0], vals[1], vals[2]).map_err(|e| {
                GeometryError::PolylineParse { line: lineno + 1, msg: e.to_string() }
            })?);
        }
    }
    if ncols == 3 {
        Ok(Polyline::Sphere(sphere))
    } else {
        Ok(Polyline::Plane(plane))
    }
}

/// Smooths and resamples a closed polyline into a boundary curve.
///
/// The polyline is resampled at uniform arclength, low-pass filtered to the
/// lowest `ceil(2N/3)` Fourier modes, and evaluated at N equispaced
/// parameter values; derivatives and curvatures come from
/// [`curve_derivatives`] on the resampled nodes.
pub fn resample_polyline(input: &Polyline, n: usize) -> Result<BoundaryCurve, GeometryError> {
    let verts: Vec<PlanePoint> = match input {
        Polyline::Plane(v) => v.clone(),
        Polyline::Sphere(v) => {
            v.iter().map(stereo_project).collect::<Result<Vec<_>, _>>()?
        }
    };
    let nv = verts.len();
    if nv < 16 {
        return Err(GeometryError::TooFewVertices(nv));
    }
    if n < 8 {
        return Err(GeometryError::TooFewNodes { got: n, min: 8 });
    }
    if n % 2 != 0 {
        return Err(GeometryError::OddNodeCount(n));
    }
    if let Some((i, j)) = polyline_self_intersection(&verts) {
        return Err(GeometryError::SelfIntersecting(i, j));
    }

    // Cumulative arclength of the closed polygon.
    let mut cum = Vec::with_capacity(nv + 1);
    cum.push(0.0);
    for i in 0..nv {
        let seg = (verts[(i + 1) % nv] - verts[i]).norm();
        cum.push(cum[i] + seg);
    }
    let total = cum[nv];
    if total <= 0.0 {
        return Err(GeometryError::NonFinite);
    }

    // Dense uniform-arclength resampling by linear interpolation.
    let k = (4 * n.max(nv)).next_power_of_two();
    let mut dense: Vec<Complex64> = Vec::with_capacity(k);
    let mut seg = 0usize;
    for i in 0..k {
        let s = total * i as f64 / k as f64;
        while seg + 1 < nv && cum[seg + 1] < s {
            seg += 1;
        }
        let t = (s - cum[seg]) / (cum[seg + 1] - cum[seg]).max(1e-300);
        dense.push(verts[seg] * (1.0 - t) + verts[(seg + 1) % nv] * t);
    }

    // Low-pass: keep ceil(2N/3) modes in total, symmetric about zero.
    let kept = (2 * n).div_ceil(3);
    let kc = kept.saturating_sub(1) / 2;
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(k).process(&mut dense);
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..=kc {
        spec[m] = dense[m] / k as f64;
        if m > 0 {
            spec[n - m] = dense[k - m] / k as f64;
        }
    }
    planner.plan_fft_inverse(n).process(&mut spec);

    BoundaryCurve::from_nodes(spec)
}

/// Finds a proper self-intersection between non-adjacent segments, if any,
/// using a uniform spatial hash over segments.
fn polyline_self_intersection(verts: &[PlanePoint]) -> Option<(usize, usize)> {
    let nv = verts.len();
    let seg = |i: usize| (verts[i], verts[(i + 1) % nv]);
    let mut maxlen = 0.0f64;
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for i in 0..nv {
        let (a, b) = seg(i);
        maxlen = maxlen.max((b - a).norm());
        xmin = xmin.min(a.re);
        xmax = xmax.max(a.re);
        ymin = ymin.min(a.im);
        ymax = ymax.max(a.im);
    }
    let cell = maxlen.max((xmax - xmin).max(ymax - ymin) * 1e-6).max(1e-300);
    let key = |p: PlanePoint| -> (i64, i64) {
        (((p.re - xmin) / cell).floor() as i64, ((p.im - ymin) / cell).floor() as i64)
    };
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    for i in 0..nv {
        let (a, b) = seg(i);
        let (k0, k1) = (key(a), key(b));
        for gx in k0.0.min(k1.0)..=k0.0.max(k1.0) {
            for gy in k0.1.min(k1.1)..=k0.1.max(k1.1) {
                grid.entry((gx, gy)).or_default().push(i);
            }
        }
    }
    let mut checked: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    for i in 0..nv {
        let (a, b) = seg(i);
        let (k0, k1) = (key(a), key(b));
        for gx in (k0.0.min(k1.0) - 1)..=(k0.0.max(k1.0) + 1) {
            for gy in (k0.1.min(k1.1) - 1)..=(k0.1.max(k1.1) + 1) {
                let Some(cands) = grid.get(&(gx, gy)) else { continue };
                for &j in cands {
                    if j <= i {
                        continue;
                    }
                    // Skip cyclically adjacent segments: they share a vertex.
                    if j == i + 1 || (i == 0 && j == nv - 1) {
                        continue;
                    }
                    if !checked.insert((i, j)) {
                        continue;
                    }
                    let (c, d) = seg(j);
                    if segments_intersect(a, b, c, d) {
                        return Some((i, j));
                    }
                }
            }
        }
    }
    None
}

fn segments_intersect(a: PlanePoint, b: PlanePoint, c: PlanePoint, d: PlanePoint) -> bool {
    let d1 = cross(b - a, c - a);
    let d2 = cross(b - a, d - a);
    let d3 = cross(d - c, a - c);
    let d4 = cross(d - c, b - c);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: PlanePoint, q: PlanePoint, r: PlanePoint| -> bool {
        cross(q - p, r - p) == 0.0
            && r.re >= p.re.min(q.re)
            && r.re <= p.re.max(q.re)
            && r.im >= p.im.min(q.im)
            && r.im <= p.im.max(q.im)
    };
    on(a, b, c) || on(a, b, d) || on(c, d, a) || on(c, d, b)
}

// ---------------------------------------------------------------------------
// Domains
// ---------------------------------------------------------------------------

/// The M-island geometry: projected island contours plus one interior anchor
/// point per island for the singular sources.
///
/// After [`orient_and_validate`], curve 0 is the contour of the island
/// covering the north pole when one exists (its island side is then the
/// unbounded part of the plane), curves are canonically oriented, and the
/// anchors are verified to lie inside their islands.
#[derive(Debug, Clone)]
pub struct IslandDomain {
    curves: Vec<BoundaryCurve>,
    anchors: Vec<PlanePoint>,
    north_pole_island: Option<usize>,
    validated: bool,
}

impl IslandDomain {
    /// Assembles a domain from curves and explicit anchors (one per island).
    pub fn new(
        curves: Vec<BoundaryCurve>,
        anchors: Vec<PlanePoint>,
    ) -> Result<Self, GeometryError> {
        if anchors.len() != curves.len() {
            return Err(GeometryError::AnchorCount(anchors.len(), curves.len()));
        }
        Ok(Self { curves, anchors, north_pole_island: None, validated: false })
    }

    /// Assembles a domain with default anchors: each anchor is the plane
    /// image of the island's node centroid direction on the sphere, with a
    /// fallback away from the projection singularity for islands whose
    /// centroid is at the north pole.
    pub fn with_default_anchors(curves: Vec<BoundaryCurve>) -> Result<Self, GeometryError> {
        let anchors = curves.iter().map(default_anchor).collect::<Result<Vec<_>, _>>()?;
        Self::new(curves, anchors)
    }

    pub fn n_islands(&self) -> usize {
        self.curves.len()
    }

    pub fn curves(&self) -> &[BoundaryCurve] {
        &self.curves
    }

    pub fn anchors(&self) -> &[PlanePoint] {
        &self.anchors
    }

    /// Index of the curve whose island covers the north pole, when one does.
    /// Always 0 after validation. `None` flags the permitted-but-unusual
    /// configuration in which the projected domain is unbounded.
    pub fn north_pole_island(&self) -> Option<usize> {
        self.north_pole_island
    }

    pub fn is_validated(&self) -> bool {
        self.validated
    }

    /// Total node count over all curves.
    pub fn total_nodes(&self) -> usize {
        self.curves.iter().map(BoundaryCurve::n_nodes).sum()
    }

    /// All nodes, curve-major.
    pub fn all_nodes(&self) -> impl Iterator<Item = PlanePoint> + '_ {
        self.curves.iter().flat_map(|c| c.nodes().iter().copied())
    }

    /// True if `p` lies in the solution region (outside every island).
    pub fn contains_plane_point(&self, p: PlanePoint) -> bool {
        for (k, c) in self.curves.iter().enumerate() {
            let inside = c.encloses(p);
            let island_is_interior = self.north_pole_island != Some(k);
            if island_is_interior && inside {
                return false;
            }
            if !island_is_interior && !inside {
                return false;
            }
        }
        true
    }

    /// Index of the island containing `p`, if any.
    pub fn island_containing(&self, p: PlanePoint) -> Option<usize> {
        for (k, c) in self.curves.iter().enumerate() {
            let inside = c.encloses(p);
            let island_is_interior = self.north_pole_island != Some(k);
            if island_is_interior == inside {
                return Some(k);
            }
        }
        None
    }
}

fn default_anchor(curve: &BoundaryCurve) -> Result<PlanePoint, GeometryError> {
    let mut m = [0.0f64; 3];
    for &z in curve.nodes() {
        let p = stereo_inverse(z);
        m[0] += p.x1;
        m[1] += p.x2;
        m[2] += p.x3;
    }
    let r = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
    let degenerate = r <= 1e-9 * curve.n_nodes() as f64;
    if !degenerate {
        let c = SpherePoint { x1: m[0] / r, x2: m[1] / r, x3: m[2] / r };
        if let Ok(xi) = stereo_project(&c) {
            return Ok(xi);
        }
        // Centroid numerically at the north pole: the island surrounds it.
        let rmax = curve.nodes().iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let dir = curve.nodes()[0] / curve.nodes()[0].norm().max(1e-300);
        return Ok(dir * (2.0 * rmax));
    }
    // Hemisphere-like contour: the sphere centroid vanishes and either side
    // could be the island. Take the side implied by the current orientation
    // (counterclockwise means the island is the unbounded side).
    if curve.orientation() == Orientation::Positive {
        let rmax = curve.nodes().iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let dir = curve.nodes()[0] / curve.nodes()[0].norm().max(1e-300);
        Ok(dir * (2.0 * rmax))
    } else {
        let mean = curve.nodes().iter().sum::<Complex64>() / curve.n_nodes() as f64;
        Ok(mean)
    }
}

/// Reorients, reorders, and validates an island domain.
///
/// - every pair of curves must be disjoint (bounding boxes, then segment
///   tests);
/// - at most one curve may enclose all the others; it is moved to index 0
///   and marks the north-pole island. Nested islands are rejected;
/// - curves are flipped to the canonical orientation (north-pole island
///   counterclockwise, interior islands clockwise);
/// - each anchor must lie strictly inside its island (winding number).
///
/// Idempotent. A domain with no north-pole island is permitted and flagged
/// via [`IslandDomain::north_pole_island`] returning `None`.
pub fn orient_and_validate(domain: IslandDomain) -> Result<IslandDomain, GeometryError> {
    let IslandDomain { mut curves, mut anchors, .. } = domain;
    let m = curves.len();
    if m == 0 {
        return Err(GeometryError::TooFewNodes { got: 0, min: 1 });
    }
    for c in &curves {
        if c.nodes().iter().any(|z| !z.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
    }

    // Pairwise disjointness.
    for i in 0..m {
        let bi = curves[i].bbox();
        for j in (i + 1)..m {
            let bj = curves[j].bbox();
            let boxes_overlap =
                bi.0 <= bj.1 && bj.0 <= bi.1 && bi.2 <= bj.3 && bj.2 <= bi.3;
            if boxes_overlap && curves_intersect(&curves[i], &curves[j]) {
                return Err(GeometryError::OverlappingIslands(i, j));
            }
        }
    }

    // Containment: encl[i][j] = curve i strictly encloses curve j.
    let encloses: Vec<Vec<bool>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| i != j && curves[i].encloses(curves[j].nodes()[0]))
                .collect()
        })
        .collect();

    // An island whose anchor sits outside its own contour is the unbounded
    // kind: it covers the north pole, and its contour must enclose every
    // other contour. At most one island can be of that kind, and no other
    // containments are allowed (islands are pairwise disjoint on the sphere).
    let mut north: Option<usize> = None;
    for k in 0..m {
        if curves[k].encloses(anchors[k]) {
            continue;
        }
        let encloses_all = (0..m).all(|j| j == k || encloses[k][j]);
        if !encloses_all {
            return Err(GeometryError::AnchorOutsideIsland(k));
        }
        if let Some(prev) = north {
            return Err(GeometryError::OverlappingIslands(prev, k));
        }
        north = Some(k);
    }
    for i in 0..m {
        for j in 0..m {
            if encloses[i][j] && north != Some(i) {
                // A bounded island enclosing another contour: nested islands.
                return Err(GeometryError::OverlappingIslands(i, j));
            }
        }
    }

    // Move the north-pole island's curve to index 0.
    let north = if let Some(idx) = north {
        if idx != 0 {
            curves.swap(0, idx);
            anchors.swap(0, idx);
        }
        Some(0usize)
    } else {
        None
    };

    // Canonical orientations.
    for (k, c) in curves.iter_mut().enumerate() {
        let want = if north == Some(k) { Orientation::Positive } else { Orientation::Negative };
        if c.orientation() != want {
            c.reverse();
        }
    }

    // Anchors must not stray into a different island.
    for (k, &a) in anchors.iter().enumerate() {
        for (j, c) in curves.iter().enumerate() {
            if j == k {
                continue;
            }
            let in_other = if north == Some(j) { !c.encloses(a) } else { c.encloses(a) };
            if in_other {
                return Err(GeometryError::AnchorOutsideIsland(k));
            }
        }
    }

    Ok(IslandDomain { curves, anchors, north_pole_island: north, validated: true })
}

fn curves_intersect(a: &BoundaryCurve, b: &BoundaryCurve) -> bool {
    let na = a.n_nodes();
    let nb = b.n_nodes();
    for i in 0..na {
        let (p1, p2) = (a.nodes()[i], a.nodes()[(i + 1) % na]);
        for j in 0..nb {
            let (q1, q2) = (b.nodes()[j], b.nodes()[(j + 1) % nb]);
            if segments_intersect(p1, p2, q1, q2) {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn projection_fixed_points() {
        let south = SpherePoint::new(0.0, 0.0, -1.0).unwrap();
        assert!(stereo_project(&south).unwrap().norm() < 1e-15);
        let eq = SpherePoint::new(1.0, 0.0, 0.0).unwrap();
        assert!((stereo_project(&eq).unwrap() - c(1.0, 0.0)).norm() < 1e-15);
        let north = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        assert!(matches!(stereo_project(&north), Err(GeometryError::NorthPoleSingular(_))));
    }

    #[test]
    fn inverse_fixed_points() {
        let p = stereo_inverse(c(0.0, 0.0));
        assert!((p.x3 + 1.0).abs() < 1e-15);
        let p = stereo_inverse(c(1.0, 0.0));
        assert!((p.x1 - 1.0).abs() < 1e-15 && p.x3.abs() < 1e-15);
        let p = stereo_inverse(c(0.0, 1.0));
        assert!((p.x2 - 1.0).abs() < 1e-15 && p.x3.abs() < 1e-15);
    }

    #[test]
    fn projection_round_trip() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let z: f64 = rng.random_range(-1.0..0.999);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let r = (1.0 - z * z).sqrt();
            let p = SpherePoint::new(r * phi.cos(), r * phi.sin(), z).unwrap();
            let q = stereo_inverse(stereo_project(&p).unwrap());
            assert!(p.chord_distance(&q) < 1e-12);
        }
        for _ in 0..1000 {
            let xi = c(rng.random_range(-1e6..1e6), rng.random_range(-1e6..1e6));
            let back = stereo_project(&stereo_inverse(xi)).unwrap();
            assert!((back - xi).norm() <= 1e-12 * xi.norm().max(1.0));
        }
    }

    #[test]
    fn unit_sphere_invariant_enforced() {
        assert!(SpherePoint::new(1.0, 1.0, 1.0).is_err());
        assert!(SpherePoint::new(1.0 + 1e-10, 0.0, 0.0).is_err());
    }

    #[test]
    fn spectral_derivatives_circle() {
        let n = 64;
        let nodes: Vec<Complex64> =
            (0..n).map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64)).collect();
        let (d, k) = curve_derivatives(&nodes).unwrap();
        for j in 0..n {
            let expect = Complex64::new(0.0, 1.0) * nodes[j];
            assert!((d[j] - expect).norm() < 1e-12);
            assert!((k[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_derivatives_clockwise_flips_curvature() {
        let n = 64;
        let nodes: Vec<Complex64> =
            (0..n).map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64)).collect();
        let (_, k) = curve_derivatives(&nodes).unwrap();
        for j in 0..n {
            assert!((k[j] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipse_curvature_analytic() {
        let cur = make_plane_ellipse(c(0.0, 0.0), 2.0, 1.0, 0.0, 64).unwrap();
        assert!((cur.curvatures()[0] - 2.0).abs() < 1e-14);
        // Spectral route agrees with the analytic one once resolved.
        let (_, k) = curve_derivatives(cur.nodes()).unwrap();
        assert!((k[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn ellipse_curvature_exact_spectrally() {
        // A plane ellipse is a degree-1 trigonometric polynomial, so the
        // spectral route reproduces the analytic curvature at machine
        // precision for any N.
        for n in [8usize, 16, 64] {
            let cur = make_plane_ellipse(c(0.0, 0.0), 2.0, 1.0, 0.0, n).unwrap();
            let (_, k) = curve_derivatives(cur.nodes()).unwrap();
            for (a, b) in cur.curvatures().iter().zip(&k) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn curvature_spectral_convergence_offset_cap() {
        // The projection of an offset cap has an infinite spectrum with
        // geometric decay: error should drop by 10x or more per doubling
        // until it plateaus near machine precision.
        let ctr = SpherePoint::from_angles(1.2, 0.3);
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let cur = make_cap_circle(&ctr, 0.5, n).unwrap();
            let (_, k) = curve_derivatives(cur.nodes()).unwrap();
            let err = cur
                .curvatures()
                .iter()
                .zip(&k)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        assert!(errs[1] * 10.0 <= errs[0], "{errs:?}");
        assert!(errs[2] * 10.0 <= errs[1], "{errs:?}");
    }

    #[test]
    fn ellipse_four_nodes() {
        let cur = make_plane_ellipse(c(0.0, 0.0), 1.0, 1.0, 0.0, 4).unwrap();
        let want = [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)];
        for (a, b) in cur.nodes().iter().zip(&want) {
            assert!((a - b).norm() < 1e-15);
        }
        for k in cur.curvatures() {
            assert!((k - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(
            make_plane_ellipse(c(0.0, 0.0), 0.0, 1.0, 0.0, 16),
            Err(GeometryError::DegenerateEllipse { .. })
        ));
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        assert!(matches!(make_cap_circle(&ctr, 0.0, 16), Err(GeometryError::DegenerateCap(_))));
        assert!(matches!(make_cap_circle(&ctr, PI, 16), Err(GeometryError::DegenerateCap(_))));
    }

    #[test]
    fn equatorial_cap_is_unit_circle() {
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        let cur = make_cap_circle(&ctr, PI / 2.0, 64).unwrap();
        for z in cur.nodes() {
            assert!((z.norm() - 1.0).abs() < 1e-14);
        }
        // North-pole cap: counterclockwise.
        assert_eq!(cur.orientation(), Orientation::Positive);
    }

    #[test]
    fn cap_matches_projected_analytic_samples() {
        let ctr = SpherePoint::new(0.0, 0.0, 1.0).unwrap();
        let n = 32;
        let cur = make_cap_circle(&ctr, PI / 4.0, n).unwrap();
        let r = 1.0 / (PI / 8.0).tan();
        for (j, z) in cur.nodes().iter().enumerate() {
            let a = 2.0 * PI * j as f64 / n as f64;
            let p = SpherePoint::from_angles(PI / 4.0, a);
            let expect = stereo_project(&p).unwrap();
            assert!((z - expect).norm() < 1e-14, "node {j}");
            assert!((z.norm() - r).abs() < 1e-13);
        }
        // Analytic derivatives agree with the spectral route.
        let (d, k) = curve_derivatives(cur.nodes()).unwrap();
        for j in 0..n {
            assert!((d[j] - cur.d_nodes()[j]).norm() < 1e-10);
            assert!((k[j] - cur.curvatures()[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn offset_cap_projects_to_circle() {
        let ctr = SpherePoint::from_angles(1.1, 0.4);
        let cur = make_cap_circle(&ctr, 0.5, 128).unwrap();
        // Spherical circles project to plane circles: fit center/radius from
        // three nodes and check the rest.
        let (a, b, c3) = (cur.nodes()[0], cur.nodes()[40], cur.nodes()[90]);
        let d = 2.0 * (a.re * (b.im - c3.im) + b.re * (c3.im - a.im) + c3.re * (a.im - b.im));
        let ux = (a.norm_sqr() * (b.im - c3.im)
            + b.norm_sqr() * (c3.im - a.im)
            + c3.norm_sqr() * (a.im - b.im))
            / d;
        let uy = (a.norm_sqr() * (c3.re - b.re)
            + b.norm_sqr() * (a.re - c3.re)
            + c3.norm_sqr() * (b.re - a.re))
            / d;
        let ctr_fit = Complex64::new(ux, uy);
        let r_fit = (a - ctr_fit).norm();
        for z in cur.nodes() {
            assert!(((z - ctr_fit).norm() - r_fit).abs() < 1e-10);
        }
    }

    #[test]
    fn cap_through_pole_rejected() {
        let ctr = SpherePoint::from_angles(0.5, 0.0);
        assert!(matches!(make_cap_circle(&ctr, 0.5, 32), Err(GeometryError::CapThroughPole(_))));
    }

    #[test]
    fn resample_regular_polygon() {
        let nv = 64;
        let verts: Vec<Complex64> = (0..nv)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / nv as f64))
            .collect();
        let cur = resample_polyline(&Polyline::Plane(verts), 64).unwrap();
        for z in cur.nodes() {
            assert!((z.norm() - 1.0).abs() < 1e-3);
        }
        for k in cur.curvatures() {
            assert!((k - 1.0).abs() < 2e-2);
        }
    }

    #[test]
    fn resample_rejects_bad_input() {
        let few: Vec<Complex64> = (0..8)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / 8.0))
            .collect();
        assert!(matches!(
            resample_polyline(&Polyline::Plane(few), 32),
            Err(GeometryError::TooFewVertices(8))
        ));
        // Figure eight.
        let mut fig8: Vec<Complex64> = Vec::new();
        for j in 0..32 {
            let t = 2.0 * PI * j as f64 / 32.0;
            fig8.push(Complex64::new(t.sin(), (2.0 * t).sin()));
        }
        assert!(matches!(
            resample_polyline(&Polyline::Plane(fig8), 32),
            Err(GeometryError::SelfIntersecting(..))
        ));
    }

    #[test]
    fn read_polyline_formats() {
        let p = read_polyline("0 0\n1 0\n1 1\n0 1\n").unwrap();
        assert!(matches!(p, Polyline::Plane(ref v) if v.len() == 4));
        let s = read_polyline("# comment\n1 0 0\n0 1 0\n0 0 -1\n").unwrap();
        assert!(matches!(s, Polyline::Sphere(ref v) if v.len() == 3));
        assert!(read_polyline("1 nope\n").is_err());
    }

    fn two_cap_domain(n: usize) -> IslandDomain {
        let north = make_cap_circle(&SpherePoint::new(0.0, 0.0, 1.0).unwrap(), PI / 4.0, n).unwrap();
        let south = make_cap_circle(&SpherePoint::new(0.0, 0.0, -1.0).unwrap(), PI / 4.0, n).unwrap();
        IslandDomain::with_default_anchors(vec![north, south]).unwrap()
    }

    #[test]
    fn validate_two_caps() {
        let dom = orient_and_validate(two_cap_domain(32)).unwrap();
        assert_eq!(dom.north_pole_island(), Some(0));
        assert_eq!(dom.curves()[0].orientation(), Orientation::Positive);
        assert_eq!(dom.curves()[1].orientation(), Orientation::Negative);
        // Anchors: island 0 is the outside of curve 0, island 1 the inside of curve 1.
        assert!(!dom.curves()[0].encloses(dom.anchors()[0]));
        assert!(dom.curves()[1].encloses(dom.anchors()[1]));
    }

    #[test]
    fn validate_is_idempotent() {
        let dom = orient_and_validate(two_cap_domain(32)).unwrap();
        let again = orient_and_validate(dom.clone()).unwrap();
        for (a, b) in dom.curves().iter().zip(again.curves()) {
            for (x, y) in a.nodes().iter().zip(b.nodes()) {
                assert_eq!(x, y);
            }
        }
        assert_eq!(dom.north_pole_island(), again.north_pole_island());
    }

    #[test]
    fn validate_reorders_north_pole_island_first() {
        let north = make_cap_circle(&SpherePoint::new(0.0, 0.0, 1.0).unwrap(), PI / 4.0, 32).unwrap();
        let south = make_cap_circle(&SpherePoint::new(0.0, 0.0, -1.0).unwrap(), PI / 4.0, 32).unwrap();
        let dom = IslandDomain::with_default_anchors(vec![south, north]).unwrap();
        let dom = orient_and_validate(dom).unwrap();
        assert_eq!(dom.north_pole_island(), Some(0));
        // Curve 0 is now the big projected circle.
        assert!(dom.curves()[0].nodes()[0].norm() > dom.curves()[1].nodes()[0].norm());
    }

    #[test]
    fn validate_rejects_overlap() {
        let a = make_plane_ellipse(c(0.0, 0.0), 1.0, 1.0, 0.0, 32).unwrap();
        let b = make_plane_ellipse(c(1.0, 0.0), 1.0, 1.0, 0.0, 32).unwrap();
        let dom = IslandDomain::with_default_anchors(vec![a, b]).unwrap();
        assert!(matches!(
            orient_and_validate(dom),
            Err(GeometryError::OverlappingIslands(0, 1))
        ));
    }

    #[test]
    fn validate_rejects_bad_anchor() {
        let a = make_plane_ellipse(c(0.0, 0.0), 1.0, 1.0, 0.0, 32).unwrap();
        let b = make_plane_ellipse(c(3.0, 0.0), 1.0, 1.0, 0.0, 32).unwrap();
        let dom = IslandDomain::new(vec![a, b], vec![c(0.0, 0.0), c(5.5, 0.0)]).unwrap();
        assert!(matches!(
            orient_and_validate(dom),
            Err(GeometryError::AnchorOutsideIsland(1))
        ));
    }

    #[test]
    fn flagged_mode_without_north_pole_island() {
        let a = make_plane_ellipse(c(-2.0, 0.0), 0.5, 0.3, 0.0, 32).unwrap();
        let b = make_plane_ellipse(c(2.0, 0.0), 0.5, 0.3, 0.1, 32).unwrap();
        let dom = orient_and_validate(IslandDomain::with_default_anchors(vec![a, b]).unwrap())
            .unwrap();
        assert_eq!(dom.north_pole_island(), None);
        for cur in dom.curves() {
            assert_eq!(cur.orientation(), Orientation::Negative);
        }
        assert!(dom.contains_plane_point(c(0.0, 0.0)));
        assert!(!dom.contains_plane_point(c(-2.0, 0.0)));
    }

    #[test]
    fn validate_rejects_nested_islands() {
        let inner = make_plane_ellipse(c(0.0, 0.0), 0.3, 0.2, 0.0, 32).unwrap();
        let mid = make_plane_ellipse(c(0.0, 0.0), 1.0, 0.8, 0.0, 32).unwrap();
        let outer = make_plane_ellipse(c(0.0, 0.0), 4.0, 3.5, 0.0, 32).unwrap();
        let dom = IslandDomain::with_default_anchors(vec![inner, mid, outer]).unwrap();
        assert!(matches!(orient_and_validate(dom), Err(GeometryError::OverlappingIslands(..))));
    }
}
