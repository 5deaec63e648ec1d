//! BSP tree construction, rate-distortion pruning and rendering.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fitting::{accumulate_moments, best_split_in_set, fit_plane, MomentVector, PlaneFit};
use crate::geometry::{
    balanced_region_candidates, split_unchecked, AngleGrid, CandidateSet, QuantizedLine, Region,
};
use crate::raster::GrayImage;

/// Stopping rules for tree construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildParams {
    /// Smallest child a split may produce, in pixels.
    pub partition_limit: usize,
    /// Regions with fewer pixels are never split.
    pub min_domain_pixels: usize,
    /// A region whose plane fit error is at most this is not split.
    pub error_threshold: f64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            partition_limit: 64,
            min_domain_pixels: 64,
            error_threshold: 0.0,
        }
    }
}

impl BuildParams {
    pub fn with_limit(partition_limit: usize) -> Self {
        Self {
            partition_limit,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.partition_limit == 0 || self.min_domain_pixels == 0 {
            return Err(Error::InvalidParam(
                "partition limit and minimum domain must be at least 1 pixel".into(),
            ));
        }
        if !(self.error_threshold >= 0.0) {
            return Err(Error::InvalidParam("error threshold must be >= 0".into()));
        }
        Ok(())
    }

    /// Smallest child a split may produce.
    pub fn min_child_pixels(&self) -> usize {
        self.partition_limit
    }

    /// Smallest region that can be split at all.
    pub fn split_threshold(&self) -> usize {
        self.partition_limit
            .saturating_mul(2)
            .max(self.min_domain_pixels)
    }

    /// Lines a region may be split by, judged from geometry alone: every
    /// candidate leaving at least [`min_child_pixels`](Self::min_child_pixels)
    /// on each side. Empty when the region is too small.
    pub fn split_options(&self, region: &Region, grid: &AngleGrid) -> CandidateSet {
        if region.pixel_count() < self.split_threshold() {
            CandidateSet::default()
        } else {
            balanced_region_candidates(region, grid, self.min_child_pixels())
        }
    }
}

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeKind {
    Leaf,
    Internal {
        line: QuantizedLine,
        /// First (negative side) and second child.
        children: [NodeId; 2],
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub pixel_count: usize,
    /// Size of the region's candidate list under the build's split rule
    /// (zero when a split is ruled out by geometry).
    pub split_options: usize,
    /// Always present on leaves. Encoder-side trees also carry the fit of
    /// every internal region.
    pub fit: Option<PlaneFit>,
    /// Encoder side only.
    pub moments: Option<MomentVector>,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }
}

/// A binary space partition of one tile. Nodes are stored in preorder
/// (first child before second) with the root at index 0.
#[derive(Clone, Debug, PartialEq)]
pub struct BspTree {
    pub nodes: Vec<Node>,
}

impl BspTree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Internal { children, .. } = node.kind {
                for c in children {
                    depth[c] = depth[id] + 1;
                }
            }
        }
        depth.into_iter().max().unwrap_or(0)
    }

    /// Visits every node in preorder together with its region.
    pub fn walk_regions<F>(&self, root: Region, grid: &AngleGrid, mut visit: F) -> Result<()>
    where
        F: FnMut(NodeId, &Node, &Region) -> Result<()>,
    {
        let mut stack = vec![(0usize, root)];
        while let Some((id, region)) = stack.pop() {
            let node = self
                .nodes
                .get(id)
                .ok_or_else(|| Error::InvalidParam(format!("dangling node {id}")))?;
            visit(id, node, &region)?;
            if let NodeKind::Internal { line, children } = node.kind {
                let (first, second) = split_unchecked(&region, &line, grid);
                stack.push((children[1], second));
                stack.push((children[0], first));
            }
        }
        Ok(())
    }

    /// Checks the structural invariants against the tile geometry: preorder
    /// layout, every line a member of its region's candidate list, every
    /// leaf carrying a finite fit, and leaves partitioning the tile.
    pub fn validate(&self, width: u32, height: u32, params: &BuildParams) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if self.nodes.is_empty() {
            return bad("empty tree".into());
        }
        let internal = self.internal_count();
        if self.nodes.len() != 2 * internal + 1 {
            return bad(format!(
                "{} nodes for {internal} internal",
                self.nodes.len()
            ));
        }
        let grid = AngleGrid::for_dims(width, height);
        let mut expected_next = 0usize;
        let mut covered = 0usize;
        let mut end_of = vec![0usize; self.nodes.len()];
        // Preorder: the first child directly follows its parent.
        for (id, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Internal { children, .. } = node.kind {
                if children[0] != id + 1
                    || children[1] <= children[0]
                    || children[1] >= self.nodes.len()
                {
                    return bad(format!("node {id} children out of preorder"));
                }
            }
        }
        for id in (0..self.nodes.len()).rev() {
            end_of[id] = match self.nodes[id].kind {
                NodeKind::Leaf => id + 1,
                NodeKind::Internal { children, .. } => {
                    if end_of[children[0]] != children[1] {
                        return bad(format!("node {id} second child misplaced"));
                    }
                    end_of[children[1]]
                }
            };
        }
        if end_of[0] != self.nodes.len() {
            return bad("unreachable nodes".into());
        }
        self.walk_regions(Region::tile(width, height), &grid, |id, node, region| {
            if id != expected_next {
                return bad(format!("visited node {id}, expected {expected_next}"));
            }
            expected_next += 1;
            if node.pixel_count != region.pixel_count() {
                return bad(format!("node {id} pixel count mismatch"));
            }
            match node.kind {
                NodeKind::Leaf => {
                    let fit = node
                        .fit
                        .ok_or_else(|| Error::InvalidParam(format!("leaf {id} has no fit")))?;
                    if ![fit.a, fit.b, fit.c].iter().all(|v| v.is_finite()) {
                        return bad(format!("leaf {id} has a non-finite fit"));
                    }
                    covered += region.pixel_count();
                }
                NodeKind::Internal { line, .. } => {
                    let options = params.split_options(region, &grid);
                    if !options.contains(&line) {
                        return bad(format!("node {id} line is not a candidate"));
                    }
                }
            }
            Ok(())
        })?;
        if covered != (width as usize) * (height as usize) {
            return bad("leaves do not cover the tile".into());
        }
        Ok(())
    }
}

/// Tree-construction accounting for one tile.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BuildStats {
    pub tile: usize,
    /// Regions examined (one per node).
    pub iterations: usize,
    /// Internal nodes.
    pub lines_drawn: usize,
    pub elapsed_secs: f64,
}

/// Recursively partitions `tile`, first child before second.
///
/// A region is split iff its own fit error exceeds `params.error_threshold`
/// and some candidate line leaves at least `params.min_child_pixels()` on
/// each side; the split is such a candidate minimizing the summed child
/// errors.
pub fn build_tree(
    tile: &GrayImage,
    params: &BuildParams,
    grid: &AngleGrid,
) -> Result<(BspTree, BuildStats)> {
    params.validate()?;
    if tile.width() == 0 || tile.height() == 0 {
        return Err(Error::InvalidParam("empty tile".into()));
    }
    let start = Instant::now();
    let mut nodes: Vec<Node> = Vec::new();
    // (region, parent slot to patch with this node's id)
    let mut stack: Vec<(Region, Option<(NodeId, usize)>)> =
        vec![(Region::tile(tile.width(), tile.height()), None)];
    while let Some((region, parent)) = stack.pop() {
        let id = nodes.len();
        if let Some((p, slot)) = parent {
            if let NodeKind::Internal { children, .. } = &mut nodes[p].kind {
                children[slot] = id;
            }
        }
        let moments = accumulate_moments(&region.pixels, tile)?;
        let fit = fit_plane(&moments)?;
        let options = params.split_options(&region, grid);
        let mut node = Node {
            pixel_count: region.pixel_count(),
            split_options: options.len(),
            fit: Some(fit),
            moments: Some(moments),
            kind: NodeKind::Leaf,
        };
        let choice = if options.is_empty() || fit.sse <= params.error_threshold {
            None
        } else {
            best_split_in_set(&region, &options, tile, grid)?
        };
        if let Some(choice) = choice {
            node.kind = NodeKind::Internal {
                line: choice.line,
                children: [id + 1, usize::MAX],
            };
            let (first, second) = split_unchecked(&region, &choice.line, grid);
            stack.push((second, Some((id, 1))));
            stack.push((first, Some((id, 0))));
        }
        nodes.push(node);
    }
    let tree = BspTree { nodes };
    let lines_drawn = tree.internal_count();
    let stats = BuildStats {
        tile: 0,
        iterations: tree.len(),
        lines_drawn,
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    Ok((tree, stats))
}

/// Per-node rate and distortion estimates driving [`prune_tree`].
pub trait RateModel {
    /// Bits spent if `node` is coded as a leaf.
    fn leaf_bits(&self, tree: &BspTree, node: NodeId) -> f64;

    /// Bits spent on `node` itself when it is coded as an internal node
    /// (structure flag and line index, excluding its children).
    fn split_bits(&self, tree: &BspTree, node: NodeId) -> f64;

    /// Squared error if `node` is coded as a leaf.
    fn leaf_distortion(&self, tree: &BspTree, node: NodeId) -> f64 {
        tree.nodes[node].fit.map_or(f64::INFINITY, |f| f.sse)
    }
}

/// Fixed per-leaf payload plus one structure bit where a split is possible
/// and a `⌈log₂ n⌉`-bit line index.
#[derive(Clone, Copy, Debug)]
pub struct FixedRateModel {
    pub leaf_payload_bits: f64,
}

impl RateModel for FixedRateModel {
    fn leaf_bits(&self, tree: &BspTree, node: NodeId) -> f64 {
        structure_bits(&tree.nodes[node]) + self.leaf_payload_bits
    }

    fn split_bits(&self, tree: &BspTree, node: NodeId) -> f64 {
        let n = &tree.nodes[node];
        structure_bits(n) + f64::from(index_bits(n.split_options))
    }
}

pub(crate) fn structure_bits(node: &Node) -> f64 {
    if node.split_options > 0 {
        1.0
    } else {
        0.0
    }
}

/// Fixed width of a line index into a list of `count` candidates.
pub fn index_bits(count: usize) -> u32 {
    if count <= 1 {
        0
    } else {
        usize::BITS - (count - 1).leading_zeros()
    }
}

/// Bottom-up Lagrangian pruning. An internal node collapses into a leaf
/// (keeping its own region fit) when
/// `leaf distortion − subtree distortion < λ · (subtree bits − leaf bits)`,
/// with the subtree already pruned.
pub fn prune_tree(tree: &BspTree, lambda: f64, model: &dyn RateModel) -> BspTree {
    let n = tree.len();
    let mut collapse = vec![false; n];
    let mut dist = vec![0.0f64; n];
    let mut bits = vec![0.0f64; n];
    for id in (0..n).rev() {
        let leaf_d = model.leaf_distortion(tree, id);
        let leaf_r = model.leaf_bits(tree, id);
        match tree.nodes[id].kind {
            NodeKind::Leaf => {
                dist[id] = leaf_d;
                bits[id] = leaf_r;
            }
            NodeKind::Internal {
                children: [c0, c1], ..
            } => {
                let sub_d = dist[c0] + dist[c1];
                let sub_r = bits[c0] + bits[c1] + model.split_bits(tree, id);
                let has_fit = tree.nodes[id].fit.is_some();
                if has_fit && leaf_d - sub_d < lambda * (sub_r - leaf_r) {
                    collapse[id] = true;
                    dist[id] = leaf_d;
                    bits[id] = leaf_r;
                } else {
                    dist[id] = sub_d;
                    bits[id] = sub_r;
                }
            }
        }
    }
    rebuild(tree, &collapse)
}

/// Copies `tree` in preorder, turning every node flagged in `collapse`
/// into a leaf.
pub(crate) fn rebuild(tree: &BspTree, collapse: &[bool]) -> BspTree {
    let mut nodes: Vec<Node> = Vec::with_capacity(tree.len());
    let mut stack: Vec<(NodeId, Option<(NodeId, usize)>)> = vec![(0, None)];
    while let Some((old, parent)) = stack.pop() {
        let id = nodes.len();
        if let Some((p, slot)) = parent {
            if let NodeKind::Internal { children, .. } = &mut nodes[p].kind {
                children[slot] = id;
            }
        }
        let mut node = tree.nodes[old].clone();
        match node.kind {
            NodeKind::Internal { line, children } if !collapse[old] => {
                stack.push((children[1], Some((id, 1))));
                stack.push((children[0], Some((id, 0))));
                node.kind = NodeKind::Internal {
                    line,
                    children: [id + 1, usize::MAX],
                };
            }
            _ => node.kind = NodeKind::Leaf,
        }
        nodes.push(node);
    }
    BspTree { nodes }
}

/// Evaluates each leaf plane at its pixels, rounding half up and clamping
/// to `[0, 255]`.
pub fn render(tree: &BspTree, width: u32, height: u32) -> Result<GrayImage> {
    let grid = AngleGrid::for_dims(width, height);
    let mut out = GrayImage::new(width, height);
    tree.walk_regions(Region::tile(width, height), &grid, |id, node, region| {
        if node.is_leaf() {
            let fit = node
                .fit
                .ok_or_else(|| Error::InvalidParam(format!("leaf {id} has no fit")))?;
            for p in &region.pixels {
                out.set(
                    p.x,
                    p.y,
                    render_value(fit.eval(f64::from(p.x), f64::from(p.y))),
                );
            }
        }
        Ok(())
    })?;
    Ok(out)
}

#[inline]
pub fn render_value(v: f64) -> u8 {
    let r = (v + 0.5).floor();
    if r.is_nan() {
        0
    } else {
        r.clamp(0.0, 255.0) as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy(width: u32, height: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(width, height, |x, y| {
            let base = if x + y < width { 40 } else { 200 };
            (base + rng.gen_range(0..20) + x) as u8
        })
    }

    fn build(img: &GrayImage, params: BuildParams) -> (BspTree, BuildStats) {
        build_tree(
            img,
            &params,
            &AngleGrid::for_dims(img.width(), img.height()),
        )
        .unwrap()
    }

    #[test]
    fn constant_tile_is_a_single_leaf() {
        let img = GrayImage::filled(32, 32, 90);
        let (tree, stats) = build(&img, BuildParams::with_limit(16));
        assert_eq!(tree.len(), 1);
        assert_eq!(stats.iterations, 1);
        assert_eq!(stats.lines_drawn, 0);
        assert_eq!(tree.root().fit.unwrap().c, 90.0);
    }

    #[test]
    fn iterations_count_examined_regions() {
        let img = noisy(32, 32, 1);
        for limit in [1000, 512, 200, 64] {
            let (tree, stats) = build(&img, BuildParams::with_limit(limit));
            assert_eq!(stats.iterations, 2 * stats.lines_drawn + 1);
            assert_eq!(stats.iterations, tree.len());
            tree.validate(32, 32, &BuildParams::with_limit(limit))
                .unwrap();
        }
    }

    #[test]
    fn leaves_respect_the_stop_rule() {
        let img = noisy(32, 24, 2);
        let params = BuildParams::with_limit(100);
        let (tree, _) = build(&img, params);
        assert!(tree.internal_count() > 0);
        for node in &tree.nodes {
            assert!(node.pixel_count >= 100 || node.pixel_count == 32 * 24);
            match node.kind {
                NodeKind::Leaf => assert!(
                    node.pixel_count < 200
                        || node.split_options == 0
                        || node.fit.unwrap().sse <= params.error_threshold
                ),
                NodeKind::Internal { children, .. } => {
                    assert!(node.pixel_count >= 200);
                    assert!(children.iter().all(|&c| tree.nodes[c].pixel_count >= 100));
                }
            }
        }
    }

    #[test]
    fn error_threshold_stops_early() {
        let img = noisy(32, 32, 3);
        let (full, _) = build(&img, BuildParams::with_limit(64));
        let loose = BuildParams {
            error_threshold: f64::MAX,
            ..BuildParams::with_limit(64)
        };
        let (stopped, _) = build(&img, loose);
        assert!(full.len() > 1);
        assert_eq!(stopped.len(), 1);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let img = GrayImage::filled(8, 8, 0);
        let grid = AngleGrid::for_dims(8, 8);
        let params = BuildParams {
            partition_limit: 0,
            ..BuildParams::default()
        };
        assert!(build_tree(&img, &params, &grid).is_err());
    }

    #[test]
    fn render_examples() {
        let single = BspTree {
            nodes: vec![Node {
                pixel_count: 16,
                split_options: 0,
                fit: Some(PlaneFit::constant(7.0)),
                moments: None,
                kind: NodeKind::Leaf,
            }],
        };
        assert_eq!(render(&single, 4, 4).unwrap(), GrayImage::filled(4, 4, 7));

        let mut plane = single.clone();
        plane.nodes[0].fit = Some(PlaneFit {
            a: 2.0,
            b: 3.0,
            c: 1.0,
            sse: 0.0,
            degenerate: false,
        });
        let img = render(&plane, 8, 8).unwrap();
        assert_eq!(img.get(5, 4), 23);
        assert_eq!(render_value(300.2), 255);
        assert_eq!(render_value(-3.0), 0);
        assert_eq!(render_value(2.5), 3);
        assert_eq!(render_value(2.4999), 2);
    }

    #[test]
    fn leaves_partition_the_tile() {
        let img = noisy(24, 16, 4);
        let (tree, _) = build(&img, BuildParams::with_limit(32));
        let grid = AngleGrid::for_dims(24, 16);
        let mut seen = vec![0u8; 24 * 16];
        tree.walk_regions(Region::tile(24, 16), &grid, |_, node, region| {
            if node.is_leaf() {
                for p in &region.pixels {
                    seen[(p.y * 24 + p.x) as usize] += 1;
                }
            }
            Ok(())
        })
        .unwrap();
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn index_width() {
        assert_eq!(index_bits(0), 0);
        assert_eq!(index_bits(1), 0);
        assert_eq!(index_bits(2), 1);
        assert_eq!(index_bits(100), 7);
        assert_eq!(index_bits(128), 7);
        assert_eq!(index_bits(129), 8);
    }

    #[test]
    fn pruning_extremes() {
        let img = noisy(32, 32, 5);
        let (tree, _) = build(&img, BuildParams::with_limit(64));
        assert!(tree.len() > 3);
        let model = FixedRateModel {
            leaf_payload_bits: 20.0,
        };
        assert_eq!(prune_tree(&tree, 0.0, &model), tree);
        let collapsed = prune_tree(&tree, f64::INFINITY, &model);
        assert_eq!(collapsed.len(), 1);
        assert_eq!(collapsed.root().fit, tree.root().fit);
        let mid = prune_tree(&tree, 50.0, &model);
        assert!(mid.len() <= tree.len());
        mid.validate(32, 32, &BuildParams::with_limit(64)).unwrap();
    }
}
