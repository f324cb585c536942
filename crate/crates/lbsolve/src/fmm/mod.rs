//! Adaptive-quadtree fast multipole method for Cauchy sums
//! `v_i = sum_j q_j / (xi_i - xi_j)` with complex charges.
//!
//! Multipole expansions use the `sum_m a_m / (xi - c)^{m+1}` convention and
//! local expansions `sum_m b_m (xi - c)^m`. Coefficients are stored scaled
//! by powers of the box half-width, which keeps every translation bounded
//! regardless of tree depth; stereographically clustered node sets routinely
//! need 16-22 levels and must not underflow.
//!
//! The evaluation is deterministic: interaction lists and reduction orders
//! are fixed at build time, and parallelism only splits across independent
//! outputs.

mod tree;

pub use tree::QuadTree;

use crate::geometry::PlanePoint;
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FmmError {
    #[error("no points supplied")]
    EmptyPoints,
    #[error("points contain a non-finite coordinate")]
    NonFinitePoint,
    #[error("tolerance must be positive and below 1")]
    BadTolerance(f64),
    #[error("charge count {got} does not match point count {want}")]
    ChargeCount { got: usize, want: usize },
    #[error("target {target} coincides exactly with source {source_index}")]
    TargetEqualsSource { target: usize, source_index: usize },
    #[error("no evaluation has run yet")]
    NoRun,
}

/// Tuning knobs of the fast multipole evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FmmConfig {
    /// Requested relative accuracy of the far field.
    pub epsilon: f64,
    /// Split boxes holding more points than this.
    pub leaf_capacity: usize,
    /// Hard depth limit of the quadtree.
    pub max_depth: usize,
}

impl Default for FmmConfig {
    fn default() -> Self {
        Self { epsilon: 1e-14, leaf_capacity: 30, max_depth: 30 }
    }
}

/// Diagnostic counters of a completed evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FmmStats {
    /// Deepest tree level used (root = 0).
    pub levels_used: usize,
    pub boxes: usize,
    /// (leaf, neighbor-leaf) pairs evaluated directly.
    pub near_pairs: usize,
    /// Multipole/local interaction pairs (V, W and X lists).
    pub far_pairs: usize,
    pub time: Duration,
}

/// Expansion order for a requested tolerance: `ceil(log2(1/eps)) + 2`,
/// capped at 60.
pub fn expansion_order(epsilon: f64) -> usize {
    let p = (1.0 / epsilon).log2().ceil() as i64 + 2;
    p.clamp(4, 60) as usize
}

/// Reusable FMM plan: tree, interaction lists, and expansion tables for a
/// fixed point set.
pub struct CauchyFmm {
    tree: QuadTree,
    points: Vec<PlanePoint>,
    n_sources: usize,
    p: usize,
    binom: Vec<f64>,
    last_stats: Mutex<Option<FmmStats>>,
}

impl CauchyFmm {
    /// Plan for sums over one point set (targets are the sources).
    pub fn for_sources(points: &[PlanePoint], cfg: &FmmConfig) -> Result<Self, FmmError> {
        Self::new_impl(points.to_vec(), points.len(), cfg)
    }

    /// Plan with separate targets: the tree covers sources and targets
    /// jointly, and only target values are returned by [`Self::evaluate_at`].
    pub fn with_targets(
        sources: &[PlanePoint],
        targets: &[PlanePoint],
        cfg: &FmmConfig,
    ) -> Result<Self, FmmError> {
        let mut pts = Vec::with_capacity(sources.len() + targets.len());
        pts.extend_from_slice(sources);
        pts.extend_from_slice(targets);
        Self::new_impl(pts, sources.len(), cfg)
    }

    fn new_impl(
        points: Vec<PlanePoint>,
        n_sources: usize,
        cfg: &FmmConfig,
    ) -> Result<Self, FmmError> {
        if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
            return Err(FmmError::BadTolerance(cfg.epsilon));
        }
        let tree = QuadTree::build(&points, cfg.leaf_capacity, cfg.max_depth)?;
        let p = expansion_order(cfg.epsilon);
        // Pascal table up to C(2p+1, .), all entries exactly representable.
        let np = 2 * p + 2;
        let mut binom = vec![0.0f64; np * np];
        for n in 0..np {
            binom[n * np] = 1.0;
            for k in 1..=n {
                binom[n * np + k] = binom[(n - 1) * np + k - 1]
                    + if k <= n - 1 { binom[(n - 1) * np + k] } else { 0.0 };
            }
        }
        Ok(Self { tree, points, n_sources, p, binom, last_stats: Mutex::new(None) })
    }

    pub fn tree(&self) -> &QuadTree {
        &self.tree
    }

    pub fn order(&self) -> usize {
        self.p
    }

    /// Counters of the most recent evaluation.
    pub fn stats(&self) -> Result<FmmStats, FmmError> {
        self.last_stats.lock().unwrap().ok_or(FmmError::NoRun)
    }

    /// `v_i = sum_{j != i} q_j / (xi_i - xi_j)` over the source set.
    pub fn evaluate_self(&self, charges: &[Complex64]) -> Result<Vec<Complex64>, FmmError> {
        assert_eq!(self.n_sources, self.points.len(), "plan was built with separate targets");
        self.run(charges)
    }

    /// Values at the plan's targets: `v_t = sum_j q_j / (xi_t - xi_j)`.
    pub fn evaluate_at(&self, charges: &[Complex64]) -> Result<Vec<Complex64>, FmmError> {
        let vals = self.run(charges)?;
        Ok(vals[self.n_sources..].to_vec())
    }

    fn run(&self, charges: &[Complex64]) -> Result<Vec<Complex64>, FmmError> {
        if charges.len() != self.n_sources {
            return Err(FmmError::ChargeCount { got: charges.len(), want: self.n_sources });
        }
        let t0 = Instant::now();
        let npts = self.points.len();
        let p = self.p;

        // Charges aligned with the full point array; appended targets carry
        // zero charge and vanish from all expansions.
        let mut q_full = vec![Complex64::new(0.0, 0.0); npts];
        q_full[..self.n_sources].copy_from_slice(charges);

        let nb = self.tree.boxes.len();
        let mut multipole = vec![Complex64::new(0.0, 0.0); nb * p];

        // Upward pass: P2M at leaves, M2M towards the root.
        for level in (0..self.tree.level_boxes.len()).rev() {
            let level_ids = &self.tree.level_boxes[level];
            let slices: Vec<(u32, Vec<Complex64>)> = level_ids
                .par_iter()
                .map(|&b| {
                    let node = &self.tree.boxes[b as usize];
                    let mut acc = vec![Complex64::new(0.0, 0.0); p];
                    if node.leaf {
                        self.p2m(node, &q_full, &mut acc);
                    } else {
                        for &c in &node.children {
                            if c != tree::NONE {
                                let child = &self.tree.boxes[c as usize];
                                let src = &multipole[c as usize * p..(c as usize + 1) * p];
                                self.m2m(child, node, src, &mut acc);
                            }
                        }
                    }
                    (b, acc)
                })
                .collect();
            for (b, acc) in slices {
                multipole[b as usize * p..(b as usize + 1) * p].copy_from_slice(&acc);
            }
        }

        // Downward pass: L2L from the parent, M2L from the V list, P2L from
        // the X list.
        let mut local = vec![Complex64::new(0.0, 0.0); nb * p];
        for level in 0..self.tree.level_boxes.len() {
            let level_ids = &self.tree.level_boxes[level];
            let slices: Vec<(u32, Vec<Complex64>)> = level_ids
                .par_iter()
                .map(|&b| {
                    let node = &self.tree.boxes[b as usize];
                    let mut acc = vec![Complex64::new(0.0, 0.0); p];
                    if node.parent != tree::NONE {
                        let parent = &self.tree.boxes[node.parent as usize];
                        let src =
                            &local[node.parent as usize * p..(node.parent as usize + 1) * p];
                        self.l2l(parent, node, src, &mut acc);
                    }
                    for &v in &node.v_list {
                        let other = &self.tree.boxes[v as usize];
                        let src = &multipole[v as usize * p..(v as usize + 1) * p];
                        self.m2l(other, node, src, &mut acc);
                    }
                    for &x in &node.x_list {
                        let coarse = &self.tree.boxes[x as usize];
                        self.p2l(coarse, node, &q_full, &mut acc);
                    }
                    (b, acc)
                })
                .collect();
            for (b, acc) in slices {
                local[b as usize * p..(b as usize + 1) * p].copy_from_slice(&acc);
            }
        }

        // Leaf evaluation: L2P + M2P over the W list + direct P2P over the
        // U list.
        let leaf_ids: Vec<u32> =
            (0..nb as u32).filter(|&b| self.tree.boxes[b as usize].leaf).collect();
        let per_leaf: Result<Vec<(u32, Vec<Complex64>)>, FmmError> = leaf_ids
            .par_iter()
            .map(|&b| {
                let node = &self.tree.boxes[b as usize];
                let own = &self.tree.perm[node.start as usize..node.end as usize];
                let mut vals = vec![Complex64::new(0.0, 0.0); own.len()];
                let loc = &local[b as usize * p..(b as usize + 1) * p];
                for (slot, &pi) in own.iter().enumerate() {
                    let t = self.points[pi as usize];
                    // L2P by Horner on z = (t - c)/r.
                    let z = (t - node.center) / node.half;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for m in (0..p).rev() {
                        acc = acc * z + loc[m];
                    }
                    // M2P from separated finer boxes.
                    for &w in &node.w_list {
                        let other = &self.tree.boxes[w as usize];
                        let mult = &multipole[w as usize * p..(w as usize + 1) * p];
                        let v = other.half / (t - other.center);
                        let mut s = Complex64::new(0.0, 0.0);
                        for m in (0..p).rev() {
                            s = (s + mult[m]) * v;
                        }
                        acc += s / other.half;
                    }
                    // Direct neighbors.
                    for &u in &node.u_list {
                        let nbr = &self.tree.boxes[u as usize];
                        for &pj in &self.tree.perm[nbr.start as usize..nbr.end as usize] {
                            if pj as usize >= self.n_sources || pj == pi {
                                continue;
                            }
                            let q = q_full[pj as usize];
                            let d = t - self.points[pj as usize];
                            if d.re == 0.0 && d.im == 0.0 && pi as usize >= self.n_sources {
                                return Err(FmmError::TargetEqualsSource {
                                    target: pi as usize - self.n_sources,
                                    source_index: pj as usize,
                                });
                            }
                            if q.re != 0.0 || q.im != 0.0 {
                                acc += q / d;
                            }
                        }
                    }
                    vals[slot] = acc;
                }
                Ok((b, vals))
            })
            .collect();

        let mut out = vec![Complex64::new(0.0, 0.0); npts];
        for (b, vals) in per_leaf? {
            let node = &self.tree.boxes[b as usize];
            for (slot, &pi) in
                self.tree.perm[node.start as usize..node.end as usize].iter().enumerate()
            {
                out[pi as usize] = vals[slot];
            }
        }
        *self.last_stats.lock().unwrap() = Some(FmmStats {
            levels_used: self.tree.levels_used(),
            boxes: self.tree.n_boxes(),
            near_pairs: self.tree.near_pair_count(),
            far_pairs: self.tree.far_pair_count(),
            time: t0.elapsed(),
        });
        Ok(out)
    }

    /// Scaled multipole of a leaf: `a_m = sum_j q_j ((s_j - c)/r)^m`.
    fn p2m(&self, node: &tree::BoxNode, q: &[Complex64], acc: &mut [Complex64]) {
        for &pi in &self.tree.perm[node.start as usize..node.end as usize] {
            let qi = q[pi as usize];
            if qi.re == 0.0 && qi.im == 0.0 {
                continue;
            }
            let u = (self.points[pi as usize] - node.center) / node.half;
            let mut upow = Complex64::new(1.0, 0.0);
            for a in acc.iter_mut() {
                *a += qi * upow;
                upow *= u;
            }
        }
    }

    /// Shift a child multipole to the parent center:
    /// `a'_n = sum_{m<=n} C(n,m) delta^{n-m} rho^m a_m` with
    /// `delta = (c_child - c_parent)/r_parent`, `rho = r_child/r_parent`.
    fn m2m(
        &self,
        child: &tree::BoxNode,
        parent: &tree::BoxNode,
        src: &[Complex64],
        acc: &mut [Complex64],
    ) {
        let p = self.p;
        let np = 2 * p + 2;
        let delta = (child.center - parent.center) / parent.half;
        let rho = child.half / parent.half;
        let mut scaled = Vec::with_capacity(p);
        let mut rp = 1.0;
        for &s in src.iter() {
            scaled.push(s * rp);
            rp *= rho;
        }
        let mut dpow = vec![Complex64::new(1.0, 0.0); p];
        for m in 1..p {
            dpow[m] = dpow[m - 1] * delta;
        }
        for n in 0..p {
            let mut s = Complex64::new(0.0, 0.0);
            for m in 0..=n {
                s += self.binom[n * np + m] * dpow[n - m] * scaled[m];
            }
            acc[n] += s;
        }
    }

    /// Convert a separated same-level multipole to a local expansion:
    /// `b_n = (-1)^n / r * sum_m C(m+n, n) a_m u^{-(m+n+1)}`, `u = d/r`.
    fn m2l(
        &self,
        source: &tree::BoxNode,
        target: &tree::BoxNode,
        src: &[Complex64],
        acc: &mut [Complex64],
    ) {
        let p = self.p;
        let np = 2 * p + 2;
        debug_assert_eq!(source.level, target.level);
        let u = (target.center - source.center) / source.half;
        let iu = 1.0 / u;
        let mut iup = vec![Complex64::new(0.0, 0.0); 2 * p + 1];
        iup[0] = Complex64::new(1.0, 0.0);
        for k in 1..=2 * p {
            iup[k] = iup[k - 1] * iu;
        }
        let inv_r = 1.0 / source.half;
        let mut sign = 1.0;
        for n in 0..p {
            let mut s = Complex64::new(0.0, 0.0);
            for m in 0..p {
                s += self.binom[(m + n) * np + n] * src[m] * iup[m + n + 1];
            }
            acc[n] += s * (sign * inv_r);
            sign = -sign;
        }
    }

    /// Direct source-to-local for coarse leaves in the X list:
    /// `b_n += -q / r * ((s - c)/r)^{-(n+1)}`.
    fn p2l(
        &self,
        coarse: &tree::BoxNode,
        target: &tree::BoxNode,
        q: &[Complex64],
        acc: &mut [Complex64],
    ) {
        for &pi in &self.tree.perm[coarse.start as usize..coarse.end as usize] {
            let qi = q[pi as usize];
            if qi.re == 0.0 && qi.im == 0.0 {
                continue;
            }
            let w = target.half / (self.points[pi as usize] - target.center);
            let mut wp = w;
            for a in acc.iter_mut() {
                *a -= qi * wp / target.half;
                wp *= w;
            }
        }
    }

    /// Shift the parent local expansion to a child:
    /// `b'_n = rho^n sum_{m>=n} C(m,n) delta^{m-n} b_m`.
    fn l2l(
        &self,
        parent: &tree::BoxNode,
        child: &tree::BoxNode,
        src: &[Complex64],
        acc: &mut [Complex64],
    ) {
        let p = self.p;
        let np = 2 * p + 2;
        let delta = (child.center - parent.center) / parent.half;
        let rho = child.half / parent.half;
        let mut dpow = vec![Complex64::new(1.0, 0.0); p];
        for m in 1..p {
            dpow[m] = dpow[m - 1] * delta;
        }
        let mut rp = 1.0;
        for n in 0..p {
            let mut s = Complex64::new(0.0, 0.0);
            for m in n..p {
                s += self.binom[m * np + n] * dpow[m - n] * src[m];
            }
            acc[n] += s * rp;
            rp *= rho;
        }
    }
}

/// One-shot Cauchy sum over a single point set, excluding the self term:
/// `v_i = sum_{j != i} q_j / (xi_i - xi_j)`.
pub fn cauchy_sum_self(
    points: &[PlanePoint],
    charges: &[Complex64],
    cfg: &FmmConfig,
) -> Result<(Vec<Complex64>, FmmStats), FmmError> {
    let plan = CauchyFmm::for_sources(points, cfg)?;
    let vals = plan.evaluate_self(charges)?;
    let stats = plan.stats()?;
    Ok((vals, stats))
}

/// One-shot Cauchy sum at separate targets.
pub fn cauchy_sum(
    sources: &[PlanePoint],
    charges: &[Complex64],
    targets: &[PlanePoint],
    cfg: &FmmConfig,
) -> Result<(Vec<Complex64>, FmmStats), FmmError> {
    let plan = CauchyFmm::with_targets(sources, targets, cfg)?;
    let vals = plan.evaluate_at(charges)?;
    let stats = plan.stats()?;
    Ok((vals, stats))
}

/// Builds just the spatial hierarchy (diagnostics, reuse).
pub fn build_tree(
    points: &[PlanePoint],
    leaf_capacity: usize,
    max_depth: usize,
) -> Result<QuadTree, FmmError> {
    QuadTree::build(points, leaf_capacity, max_depth)
}

/// Direct O(N^2) reference sum, self term excluded.
pub fn direct_sum_self(points: &[PlanePoint], charges: &[Complex64]) -> Vec<Complex64> {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..points.len() {
                if j != i {
                    acc += charges[j] / (points[i] - points[j]);
                }
            }
            acc
        })
        .collect()
}

/// Scale used for relative FMM error: `sum_j |q_j|` divided by the root box
/// half-width, a robust magnitude for values of the sum.
pub fn error_scale(points: &[PlanePoint], charges: &[Complex64]) -> f64 {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for p in points {
        xmin = xmin.min(p.re);
        xmax = xmax.max(p.re);
        ymin = ymin.min(p.im);
        ymax = ymax.max(p.im);
    }
    let half = (0.5 * (xmax - xmin).max(ymax - ymin)).max(1e-300);
    charges.iter().map(|q| q.norm()).sum::<f64>() / half
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn random_points(n: usize, seed: u64) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Complex64> =
            (0..n).map(|_| Complex64::new(rng.random::<f64>(), rng.random::<f64>())).collect();
        let q: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        (pts, q)
    }

    #[test]
    fn single_charge() {
        let pts = vec![Complex64::new(0.0, 0.0)];
        let q = vec![Complex64::new(1.0, 0.0)];
        let targets = vec![Complex64::new(2.0, 0.0)];
        let (vals, _) = cauchy_sum(&pts, &q, &targets, &FmmConfig::default()).unwrap();
        assert!((vals[0] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn matches_direct_sum_small() {
        for seed in 0..3u64 {
            let (pts, q) = random_points(700, seed);
            let cfg = FmmConfig { leaf_capacity: 12, ..FmmConfig::default() };
            let (vals, _) = cauchy_sum_self(&pts, &q, &cfg).unwrap();
            let direct = direct_sum_self(&pts, &q);
            let scale = error_scale(&pts, &q);
            for (a, b) in vals.iter().zip(&direct) {
                assert!((a - b).norm() / scale < 1e-13, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn matches_direct_sum_clustered() {
        // Geometric shells force deep trees and W/X interactions.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut pts = Vec::new();
        for k in 0..18 {
            let r = 10.0 * 0.55f64.powi(k);
            for _ in 0..30 {
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                pts.push(Complex64::from_polar(r, a));
            }
        }
        let q: Vec<Complex64> = (0..pts.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let cfg = FmmConfig { leaf_capacity: 6, ..FmmConfig::default() };
        let (vals, stats) = cauchy_sum_self(&pts, &q, &cfg).unwrap();
        assert!(stats.levels_used > 6, "levels {}", stats.levels_used);
        let direct = direct_sum_self(&pts, &q);
        let scale = error_scale(&pts, &q);
        for (a, b) in vals.iter().zip(&direct) {
            // Near-coincident pairs make |v| huge; compare relative to the
            // larger of the value and the global scale.
            assert!((a - b).norm() / b.norm().max(scale) < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn separate_targets_match_direct() {
        let (pts, q) = random_points(500, 11);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let targets: Vec<Complex64> = (0..200)
            .map(|_| Complex64::new(rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5)))
            .collect();
        let cfg = FmmConfig { leaf_capacity: 10, ..FmmConfig::default() };
        let (vals, _) = cauchy_sum(&pts, &q, &targets, &cfg).unwrap();
        let scale = error_scale(&pts, &q);
        for (t, v) in targets.iter().zip(&vals) {
            let mut acc = Complex64::new(0.0, 0.0);
            for (p, qq) in pts.iter().zip(&q) {
                acc += qq / (t - p);
            }
            assert!((v - acc).norm() / scale < 1e-13);
        }
    }

    #[test]
    fn target_equals_source_rejected() {
        let (pts, q) = random_points(100, 21);
        let targets = vec![pts[17]];
        let res = cauchy_sum(&pts, &q, &targets, &FmmConfig::default());
        assert!(matches!(res, Err(FmmError::TargetEqualsSource { target: 0, source_index: 17 })));
    }

    #[test]
    fn linearity_and_translation_invariance() {
        let (pts, q1) = random_points(400, 31);
        let (_, q2) = random_points(400, 32);
        let cfg = FmmConfig { leaf_capacity: 15, ..FmmConfig::default() };
        let plan = CauchyFmm::for_sources(&pts, &cfg).unwrap();
        let a = Complex64::new(0.7, -0.3);
        let combo: Vec<Complex64> = q1.iter().zip(&q2).map(|(x, y)| a * x + y).collect();
        let v_combo = plan.evaluate_self(&combo).unwrap();
        let v1 = plan.evaluate_self(&q1).unwrap();
        let v2 = plan.evaluate_self(&q2).unwrap();
        let scale = error_scale(&pts, &combo);
        for i in 0..pts.len() {
            assert!((v_combo[i] - (a * v1[i] + v2[i])).norm() / scale < 1e-13);
        }
        // Shift everything by a constant: identical sums.
        let shift = Complex64::new(3.25, -1.5);
        let shifted: Vec<Complex64> = pts.iter().map(|p| p + shift).collect();
        let (v_shift, _) = cauchy_sum_self(&shifted, &q1, &cfg).unwrap();
        for i in 0..pts.len() {
            assert!((v_shift[i] - v1[i]).norm() / scale.max(1.0) < 1e-12);
        }
    }

    #[test]
    fn order_from_tolerance() {
        assert_eq!(expansion_order(1e-14), 49);
        assert_eq!(expansion_order(1e-3), 12);
        assert_eq!(expansion_order(1e-300), 60);
    }

    #[test]
    fn stats_require_a_run() {
        let (pts, q) = random_points(50, 41);
        let plan = CauchyFmm::for_sources(&pts, &FmmConfig::default()).unwrap();
        assert!(matches!(plan.stats(), Err(FmmError::NoRun)));
        plan.evaluate_self(&q).unwrap();
        let s = plan.stats().unwrap();
        assert!(s.boxes >= 1);
    }
}
