//! Adaptive quadtree over plane points, with the interaction lists of the
//! adaptive fast multipole method.
//!
//! Boxes are addressed by (level, ix, iy) integer coordinates; adjacency
//! tests are exact integer-interval tests, so trees may go arbitrarily deep
//! (stereographic projection routinely forces 16-22 levels). Empty boxes
//! are pruned. Each box owns a contiguous range of the point permutation.

use crate::geometry::PlanePoint;
use num_complex::Complex64;

pub(crate) const NONE: u32 = u32::MAX;

#[derive(Debug)]
pub(crate) struct BoxNode {
    pub center: Complex64,
    pub half: f64,
    pub level: u32,
    pub ix: u64,
    pub iy: u64,
    pub parent: u32,
    pub children: [u32; 4],
    pub start: u32,
    pub end: u32,
    pub leaf: bool,
    /// Same-level adjacent boxes.
    pub colleagues: Vec<u32>,
    /// Same-level non-adjacent children of the parent's colleagues (M2L).
    pub v_list: Vec<u32>,
    /// Adjacent leaves of any level, including self (P2P); leaves only.
    pub u_list: Vec<u32>,
    /// Separated finer descendants of colleagues (M2P); leaves only.
    pub w_list: Vec<u32>,
    /// Coarse leaves whose points feed this box's local expansion (P2L).
    pub x_list: Vec<u32>,
}

/// Adaptive spatial hierarchy over a point set.
#[derive(Debug)]
pub struct QuadTree {
    pub(crate) boxes: Vec<BoxNode>,
    /// Point indices, permuted so each box owns `perm[start..end]`.
    pub(crate) perm: Vec<u32>,
    /// Box ids grouped by level.
    pub(crate) level_boxes: Vec<Vec<u32>>,
    duplicate_overflow: bool,
}

impl QuadTree {
    /// Builds the tree: leaves hold at most `leaf_capacity` points unless at
    /// `max_depth`. Returns the hierarchy with interaction lists populated.
    pub fn build(
        points: &[PlanePoint],
        leaf_capacity: usize,
        max_depth: usize,
    ) -> Result<QuadTree, crate::fmm::FmmError> {
        use crate::fmm::FmmError;
        if points.is_empty() {
            return Err(FmmError::EmptyPoints);
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(FmmError::NonFinitePoint);
        }
        let cap = leaf_capacity.max(1);

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
        // Root square with a 5% margin.
        let half = (0.5 * (xmax - xmin).max(ymax - ymin) * 1.05).max(1e-300);
        let center = Complex64::new(0.5 * (xmin + xmax), 0.5 * (ymin + ymax));

        let mut tree = QuadTree {
            boxes: vec![BoxNode {
                center,
                half,
                level: 0,
                ix: 0,
                iy: 0,
                parent: NONE,
                children: [NONE; 4],
                start: 0,
                end: points.len() as u32,
                leaf: true,
                colleagues: Vec::new(),
                v_list: Vec::new(),
                u_list: Vec::new(),
                w_list: Vec::new(),
                x_list: Vec::new(),
            }],
            perm: (0..points.len() as u32).collect(),
            level_boxes: vec![vec![0u32]],
            duplicate_overflow: false,
        };

        tree.split_recursive(0, points, cap, max_depth);
        tree.build_colleagues_and_v();
        tree.build_u_w_x();
        Ok(tree)
    }

    /// Deepest level index in use; a root-only tree reports 0.
    pub fn levels_used(&self) -> usize {
        self.level_boxes.len() - 1
    }

    pub fn n_boxes(&self) -> usize {
        self.boxes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.boxes.iter().filter(|b| b.leaf).count()
    }

    /// True when some leaf at `max_depth` still exceeded the capacity
    /// (typically many exactly coincident points). The box holds them all.
    pub fn duplicate_overflow(&self) -> bool {
        self.duplicate_overflow
    }

    pub(crate) fn near_pair_count(&self) -> usize {
        self.boxes.iter().filter(|b| b.leaf).map(|b| b.u_list.len()).sum()
    }

    pub(crate) fn far_pair_count(&self) -> usize {
        self.boxes
            .iter()
            .map(|b| b.v_list.len() + b.w_list.len() + b.x_list.len())
            .sum()
    }

    fn split_recursive(&mut self, b: u32, points: &[PlanePoint], cap: usize, max_depth: usize) {
        let (start, end, level, center, half, ix, iy) = {
            let node = &self.boxes[b as usize];
            (node.start, node.end, node.level, node.center, node.half, node.ix, node.iy)
        };
        let count = (end - start) as usize;
        if count <= cap {
            return;
        }
        if level as usize >= max_depth || half < 1e-280 {
            self.duplicate_overflow = true;
            return;
        }

        // Stable counting partition of perm[start..end] into quadrants
        // (qx, qy) with qx = re >= cx, qy = im >= cy.
        let mut buckets: [Vec<u32>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for &pi in &self.perm[start as usize..end as usize] {
            let p = points[pi as usize];
            let q = (p.re >= center.re) as usize + 2 * ((p.im >= center.im) as usize);
            buckets[q].push(pi);
        }
        let mut offset = start;
        self.boxes[b as usize].leaf = false;
        for (q, bucket) in buckets.iter().enumerate() {
            if bucket.is_empty() {
                continue;
            }
            let qx = (q & 1) as f64;
            let qy = ((q >> 1) & 1) as f64;
            let child_center = Complex64::new(
                center.re + (qx - 0.5) * half,
                center.im + (qy - 0.5) * half,
            );
            let cid = self.boxes.len() as u32;
            self.boxes.push(BoxNode {
                center: child_center,
                half: 0.5 * half,
                level: level + 1,
                ix: 2 * ix + (q & 1) as u64,
                iy: 2 * iy + ((q >> 1) & 1) as u64,
                parent: b,
                children: [NONE; 4],
                start: offset,
                end: offset + bucket.len() as u32,
                leaf: true,
                colleagues: Vec::new(),
                v_list: Vec::new(),
                u_list: Vec::new(),
                w_list: Vec::new(),
                x_list: Vec::new(),
            });
            self.perm[offset as usize..(offset as usize + bucket.len())].copy_from_slice(bucket);
            self.boxes[b as usize].children[q] = cid;
            if self.level_boxes.len() <= (level + 1) as usize {
                self.level_boxes.push(Vec::new());
            }
            self.level_boxes[(level + 1) as usize].push(cid);
            offset += bucket.len() as u32;
            self.split_recursive(cid, points, cap, max_depth);
        }
    }

    fn same_level_adjacent(&self, a: u32, b: u32) -> bool {
        let (pa, pb) = (&self.boxes[a as usize], &self.boxes[b as usize]);
        pa.ix.abs_diff(pb.ix) <= 1 && pa.iy.abs_diff(pb.iy) <= 1
    }

    /// Adjacency between boxes of possibly different levels; exact integer
    /// interval intersection at the finer scale.
    fn adjacent(&self, a: u32, b: u32) -> bool {
        let (pa, pb) = (&self.boxes[a as usize], &self.boxes[b as usize]);
        let (fine, coarse) = if pa.level >= pb.level { (pa, pb) } else { (pb, pa) };
        let shift = fine.level - coarse.level;
        let c0x = coarse.ix << shift;
        let c1x = (coarse.ix + 1) << shift;
        let c0y = coarse.iy << shift;
        let c1y = (coarse.iy + 1) << shift;
        fine.ix + 1 >= c0x && fine.ix <= c1x && fine.iy + 1 >= c0y && fine.iy <= c1y
    }

    fn build_colleagues_and_v(&mut self) {
        for level in 1..self.level_boxes.len() {
            for bi in 0..self.level_boxes[level].len() {
                let b = self.level_boxes[level][bi];
                let parent = self.boxes[b as usize].parent;
                let mut colleagues = Vec::new();
                let mut v_list = Vec::new();
                // Candidates: children of the parent and of its colleagues.
                let mut cands: Vec<u32> = Vec::with_capacity(36);
                for &pc in std::iter::once(&parent)
                    .chain(self.boxes[parent as usize].colleagues.iter())
                {
                    for &c in &self.boxes[pc as usize].children {
                        if c != NONE && c != b {
                            cands.push(c);
                        }
                    }
                }
                for c in cands {
                    if self.same_level_adjacent(b, c) {
                        colleagues.push(c);
                    } else {
                        v_list.push(c);
                    }
                }
                self.boxes[b as usize].colleagues = colleagues;
                self.boxes[b as usize].v_list = v_list;
            }
        }
    }

    fn build_u_w_x(&mut self) {
        let nb = self.boxes.len();
        for b in 0..nb as u32 {
            if !self.boxes[b as usize].leaf {
                continue;
            }
            self.boxes[b as usize].u_list.push(b);
            let colleagues = self.boxes[b as usize].colleagues.clone();
            for c in colleagues {
                if self.boxes[c as usize].leaf {
                    // Same-level neighbor; the symmetric pass adds b to c.
                    self.boxes[b as usize].u_list.push(c);
                } else {
                    self.descend_for_u_w(b, c);
                }
            }
        }
    }

    /// Walks down from an adjacent internal box `c`, splitting its
    /// descendants into adjacent leaves (P2P, both directions) and
    /// separated boxes (M2P for `b`, dually P2L for the descendant).
    fn descend_for_u_w(&mut self, b: u32, c: u32) {
        let children = self.boxes[c as usize].children;
        for d in children {
            if d == NONE {
                continue;
            }
            if self.adjacent(b, d) {
                if self.boxes[d as usize].leaf {
                    self.boxes[b as usize].u_list.push(d);
                    self.boxes[d as usize].u_list.push(b);
                } else {
                    self.descend_for_u_w(b, d);
                }
            } else {
                self.boxes[b as usize].w_list.push(d);
                self.boxes[d as usize].x_list.push(b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    #[test]
    fn single_point_tree() {
        let t = QuadTree::build(&[Complex64::new(0.3, -0.2)], 30, 30).unwrap();
        assert_eq!(t.levels_used(), 0);
        assert_eq!(t.n_boxes(), 1);
        assert!(t.boxes[0].leaf);
    }

    #[test]
    fn uniform_points_depth_and_capacity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Complex64> = (0..10_000)
            .map(|_| Complex64::new(rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let t = QuadTree::build(&pts, 30, 30).unwrap();
        for b in &t.boxes {
            if b.leaf {
                assert!((b.end - b.start) as usize <= 30);
            }
        }
        // log4(10000/30) ~ 4.2; allow +-2.
        assert!(t.levels_used() >= 3 && t.levels_used() <= 7, "{}", t.levels_used());
        // Every point in exactly one leaf.
        let mut seen = vec![false; pts.len()];
        for b in &t.boxes {
            if !b.leaf {
                continue;
            }
            for &pi in &t.perm[b.start as usize..b.end as usize] {
                assert!(!seen[pi as usize]);
                seen[pi as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn clustered_points_go_deep() {
        // Geometric shells toward the origin alongside far-away points,
        // the shape stereographic projection produces near a pole.
        let mut pts = Vec::new();
        for k in 0..24 {
            let r = 10.0 * 0.5f64.powi(k);
            for j in 0..20 {
                let a = 0.31 * j as f64 + 0.05 * k as f64;
                pts.push(Complex64::from_polar(r, a));
            }
        }
        for i in 0..40 {
            pts.push(Complex64::from_polar(300.0, 0.1 * i as f64));
        }
        let t = QuadTree::build(&pts, 8, 40).unwrap();
        assert!(t.levels_used() > 10, "levels {}", t.levels_used());
        assert!(!t.duplicate_overflow());
    }

    #[test]
    fn coincident_points_overflow_reported() {
        let pts = vec![Complex64::new(0.5, 0.5); 40];
        let t = QuadTree::build(&pts, 8, 12).unwrap();
        assert!(t.duplicate_overflow());
        let leaf_with_all = t.boxes.iter().find(|b| b.leaf && b.end - b.start == 40);
        assert!(leaf_with_all.is_some());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            QuadTree::build(&[], 30, 30),
            Err(crate::fmm::FmmError::EmptyPoints)
        ));
    }
}
