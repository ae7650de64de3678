//! Cluster trees, level-wise direction families and directed block trees.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::geometry::{bounding_box, Box3, Point3};
use crate::{Error, Result};

/// Node of a [`ClusterTree`].
#[derive(Clone, Debug)]
pub struct Cluster {
    /// Sorted point indices.
    pub indices: Vec<usize>,
    pub bbox: Box3,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    pub level: usize,
}

impl Cluster {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

/// Arena-allocated cluster tree; node `0` is the root.
#[derive(Clone, Debug)]
pub struct ClusterTree {
    pub nodes: Vec<Cluster>,
    levels: Vec<Vec<usize>>,
}

impl ClusterTree {
    pub const ROOT: usize = 0;

    pub fn node(&self, id: usize) -> &Cluster {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.nodes[Self::ROOT].size()
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Cluster ids on each level, root level first.
    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&t| self.nodes[t].is_leaf())
    }

    /// Largest number of children of any cluster.
    pub fn max_children(&self) -> usize {
        self.nodes.iter().map(|c| c.children.len()).max().unwrap_or(0)
    }

    /// Ids in an order where every parent precedes its children.
    pub fn top_down(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.iter().flatten().copied()
    }

    /// Ids in an order where every child precedes its parent.
    pub fn bottom_up(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.iter().rev().flatten().copied()
    }

    /// For every child of `t`, the positions of its indices inside the
    /// index list of `t`.
    pub fn child_positions(&self, t: usize) -> Vec<Vec<usize>> {
        let parent = &self.nodes[t].indices;
        self.nodes[t]
            .children
            .iter()
            .map(|&child| {
                self.nodes[child]
                    .indices
                    .iter()
                    .map(|i| parent.binary_search(i).expect("child index lies in parent"))
                    .collect()
            })
            .collect()
    }
}

/// Builds a geometrically balanced binary cluster tree by halving the
/// bounding box along its longest axis until at most `leaf_size` points
/// remain. When the midpoint leaves one side empty the points are split at
/// the median instead.
pub fn build_cluster_tree(points: &[Point3], leaf_size: usize) -> Result<ClusterTree> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if leaf_size == 0 {
        return Err(Error::InvalidParameter("leaf size must be at least 1".into()));
    }
    let mut nodes = Vec::new();
    let mut stack = vec![((0..points.len()).collect::<Vec<_>>(), None::<usize>, 0usize)];
    // depth-first with explicit stack; children get their ids when pushed
    while let Some((indices, parent, level)) = stack.pop() {
        let bbox = bounding_box(indices.iter().map(|&i| &points[i]))?;
        let id = nodes.len();
        nodes.push(Cluster { indices, bbox, children: Vec::new(), parent, level });
        if let Some(p) = parent {
            let siblings: &mut Vec<usize> = &mut nodes[p].children;
            siblings.push(id);
        }
        if nodes[id].size() <= leaf_size {
            continue;
        }
        let (left, right) = split(points, &nodes[id].indices, &bbox);
        // right pushed first so that the left child is numbered first
        stack.push((right, Some(id), level + 1));
        stack.push((left, Some(id), level + 1));
    }
    // children were appended in pop order: left then right
    let depth = nodes.iter().map(|c| c.level).max().unwrap_or(0) + 1;
    let mut levels = vec![Vec::new(); depth];
    for (id, c) in nodes.iter().enumerate() {
        levels[c.level].push(id);
    }
    Ok(ClusterTree { nodes, levels })
}

fn split(points: &[Point3], indices: &[usize], bbox: &Box3) -> (Vec<usize>, Vec<usize>) {
    let axis = bbox.longest_axis();
    let mid = bbox.center().coord(axis);
    let (left, right): (Vec<usize>, Vec<usize>) = indices.iter().partition(|&&i| points[i].coord(axis) < mid);
    if !left.is_empty() && !right.is_empty() {
        return (left, right);
    }
    let mut sorted = indices.to_vec();
    sorted.sort_by(|&a, &b| points[a].coord(axis).total_cmp(&points[b].coord(axis)).then(a.cmp(&b)));
    let right = sorted.split_off(sorted.len() / 2);
    let mut left = sorted;
    let mut right = right;
    left.sort_unstable();
    right.sort_unstable();
    (left, right)
}

/// Admissibility parameters `η₁` (distance), `η₂` (direction) and `η₃`
/// (plane wave) together with the wave number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Admissibility {
    pub kappa: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
}

impl Admissibility {
    pub fn new(kappa: f64) -> Self {
        Admissibility { kappa, eta1: 1.0, eta2: 1.0, eta3: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("wave number must be finite and >= 0, got {}", self.kappa)));
        }
        for (name, eta) in [("eta1", self.eta1), ("eta2", self.eta2), ("eta3", self.eta3)] {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {eta}")));
            }
        }
        Ok(())
    }
}

/// Directions shared by all clusters of one level: either `{0}`
/// (`subdivision == 0`) or projected cell centers of a cube surface whose
/// faces are split into `subdivision²` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet {
    pub subdivision: usize,
    pub directions: Vec<Point3>,
}

impl DirectionSet {
    pub fn zero() -> Self {
        DirectionSet { subdivision: 0, directions: vec![Point3::ORIGIN] }
    }

    pub fn cube(subdivision: usize) -> Self {
        assert!(subdivision > 0);
        let u = subdivision;
        let mut directions = Vec::with_capacity(6 * u * u);
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                for i in 0..u {
                    for j in 0..u {
                        let a = -1.0 + (2 * i + 1) as f64 / u as f64;
                        let b = -1.0 + (2 * j + 1) as f64 / u as f64;
                        let p = match axis {
                            0 => Point3::new(sign, a, b),
                            1 => Point3::new(a, sign, b),
                            _ => Point3::new(a, b, sign),
                        };
                        directions.push(p.normalized().expect("cube cell center is nonzero"));
                    }
                }
            }
        }
        DirectionSet { subdivision, directions }
    }

    pub fn is_zero(&self) -> bool {
        self.subdivision == 0
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Upper bound for the distance of any unit vector to its nearest
    /// direction.
    pub fn mesh_width(&self) -> f64 {
        if self.is_zero() {
            f64::INFINITY
        } else {
            2.0 / self.subdivision as f64
        }
    }

    /// Index of the direction closest to `v`, lowest index on ties.
    pub fn nearest(&self, v: &Point3) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, d) in self.directions.iter().enumerate() {
            let dist = d.distance(v);
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        best
    }
}

/// Level-wise direction family with the child map `dirchil`.
#[derive(Clone, Debug)]
pub struct DirectionFamily {
    sets: Vec<DirectionSet>,
    /// `child_map[l][c]` is the direction on level `l + 1` closest to
    /// direction `c` on level `l`.
    child_map: Vec<Vec<usize>>,
}

impl DirectionFamily {
    pub fn level(&self, level: usize) -> &DirectionSet {
        &self.sets[level]
    }

    pub fn direction(&self, level: usize, c: usize) -> Point3 {
        self.sets[level].directions[c]
    }

    pub fn num_levels(&self) -> usize {
        self.sets.len()
    }

    /// `dirchil(t', c)` for a child `t'` on level `parent_level + 1` and a
    /// parent direction `c`.
    pub fn child_direction(&self, parent_level: usize, c: usize) -> usize {
        self.child_map[parent_level][c]
    }

    /// Whether clusters on the two levels share their direction set.
    pub fn compatible(&self, level_a: usize, level_b: usize) -> bool {
        self.sets[level_a].subdivision == self.sets[level_b].subdivision
    }
}

/// Chooses the direction sets level by level: `{0}` when `κ·diam ≤ η₂`,
/// otherwise the coarsest power-of-two cube subdivision whose mesh width
/// is at most `η₂ / (κ·diam)`, where `diam` is the largest cluster diameter
/// on the level.
pub fn build_directions(tree: &ClusterTree, kappa: f64, eta2: f64) -> Result<DirectionFamily> {
    if !(kappa >= 0.0) || !(eta2 > 0.0) {
        return Err(Error::InvalidParameter("need kappa >= 0 and eta2 > 0".into()));
    }
    let mut cache: BTreeMap<usize, DirectionSet> = BTreeMap::new();
    let sets: Vec<DirectionSet> = tree
        .levels()
        .iter()
        .map(|ids| {
            let diam = ids.iter().map(|&t| tree.node(t).bbox.diam()).fold(0.0, f64::max);
            let u = required_subdivision(kappa * diam, eta2);
            cache.entry(u).or_insert_with(|| if u == 0 { DirectionSet::zero() } else { DirectionSet::cube(u) }).clone()
        })
        .collect();
    let child_map = sets
        .windows(2)
        .map(|pair| pair[0].directions.iter().map(|c| pair[1].nearest(c)).collect())
        .collect();
    Ok(DirectionFamily { sets, child_map })
}

fn required_subdivision(kappa_diam: f64, eta2: f64) -> usize {
    if kappa_diam <= eta2 {
        return 0;
    }
    let width = eta2 / kappa_diam;
    let mut u = 1;
    while 2.0 / (u as f64) > width {
        u *= 2;
    }
    u
}

/// Outcome of the admissibility test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmissibilityTest {
    pub admissible: bool,
    /// Best direction for the pair of boxes; `None` when the cheaper
    /// conditions already fail or the box centers coincide.
    pub direction: Option<usize>,
}

/// Checks the three directional admissibility conditions
///
/// * `κ max(diam τ, diam σ)² ≤ η₃ dist(τ, σ)`
/// * `κ |z/|z| - c| max(diam τ, diam σ) ≤ η₂`, `z` the difference of centers
/// * `max(diam τ, diam σ) ≤ η₁ dist(τ, σ)`
///
/// with `c` the direction in `set` closest to `z/|z|`.
pub fn is_admissible(tau: &Box3, sigma: &Box3, params: &Admissibility, set: &DirectionSet) -> AdmissibilityTest {
    let reject = AdmissibilityTest { admissible: false, direction: None };
    let dist = tau.dist(sigma);
    let diam = tau.diam().max(sigma.diam());
    if dist <= 0.0 {
        return reject;
    }
    if params.kappa * diam * diam > params.eta3 * dist || diam > params.eta1 * dist {
        return reject;
    }
    let Some(z) = (tau.center() - sigma.center()).normalized() else {
        return reject;
    };
    let c = set.nearest(&z);
    let deviation = z.distance(&set.directions[c]);
    AdmissibilityTest { admissible: params.kappa * deviation * diam <= params.eta2, direction: Some(c) }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockKind {
    Admissible { direction: usize },
    Inadmissible,
    Subdivided(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct BlockNode {
    pub row: usize,
    pub col: usize,
    pub kind: BlockKind,
}

/// Admissible leaf `(t, s)` with its direction `c = dirblock(t, s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdmissibleBlock {
    pub row: usize,
    pub col: usize,
    pub direction: usize,
}

/// Which cluster of a block a basis belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Row,
    Col,
}

impl Side {
    pub fn cluster(self, block: &AdmissibleBlock) -> usize {
        match self {
            Side::Row => block.row,
            Side::Col => block.col,
        }
    }

    pub fn partner(self, block: &AdmissibleBlock) -> usize {
        match self {
            Side::Row => block.col,
            Side::Col => block.row,
        }
    }
}

pub type PairKey = (usize, usize);

/// Block tree whose admissible leaves carry a direction.
#[derive(Clone, Debug)]
pub struct DirectedBlockTree {
    pub nodes: Vec<BlockNode>,
    pub admissible: Vec<AdmissibleBlock>,
    pub inadmissible: Vec<(usize, usize)>,
    /// `R_tc`: admissible block ids with row cluster `t` and direction `c`.
    row_sets: BTreeMap<PairKey, Vec<usize>>,
    /// `C_sc`: admissible block ids with column cluster `s` and direction `c`.
    col_sets: BTreeMap<PairKey, Vec<usize>>,
    /// Every `(t, c)` that needs a basis, closed under `dirchil`.
    active: Vec<Vec<usize>>,
}

impl DirectedBlockTree {
    /// `R_tc` as admissible block ids.
    pub fn row_set(&self, t: usize, c: usize) -> &[usize] {
        self.row_sets.get(&(t, c)).map_or(&[], Vec::as_slice)
    }

    /// `C_sc` as admissible block ids.
    pub fn col_set(&self, s: usize, c: usize) -> &[usize] {
        self.col_sets.get(&(s, c)).map_or(&[], Vec::as_slice)
    }

    pub fn side_set(&self, side: Side, t: usize, c: usize) -> &[usize] {
        match side {
            Side::Row => self.row_set(t, c),
            Side::Col => self.col_set(t, c),
        }
    }

    /// Directions of cluster `t` that carry a basis, ascending.
    pub fn active_directions(&self, t: usize) -> &[usize] {
        &self.active[t]
    }

    pub fn active_pairs(&self) -> impl Iterator<Item = PairKey> + '_ {
        self.active.iter().enumerate().flat_map(|(t, dirs)| dirs.iter().map(move |&c| (t, c)))
    }

    pub fn num_active_pairs(&self) -> usize {
        self.active.iter().map(Vec::len).sum()
    }

    pub fn is_active(&self, t: usize, c: usize) -> bool {
        self.active[t].binary_search(&c).is_ok()
    }

    /// Per-level statistics as CSV:
    /// `level,clusters,directions,admissible,inadmissible`, blocks counted
    /// on the level of their row cluster.
    pub fn statistics_csv(&self, tree: &ClusterTree, family: &DirectionFamily) -> String {
        let mut out = String::from("level,clusters,directions,admissible,inadmissible\n");
        for (level, ids) in tree.levels().iter().enumerate() {
            let adm = self.admissible.iter().filter(|b| tree.node(b.row).level == level).count();
            let inadm = self.inadmissible.iter().filter(|b| tree.node(b.0).level == level).count();
            let _ = writeln!(out, "{level},{},{},{adm},{inadm}", ids.len(), family.level(level).len());
        }
        out
    }
}

/// Recursive block subdivision from `(root, root)`. A block becomes an
/// admissible leaf when both clusters share a direction set and pass
/// [`is_admissible`], an inadmissible leaf when both clusters are leaves,
/// and is split otherwise. A leaf cluster acts as its own only child when
/// its partner can still be split.
pub fn build_block_tree(tree: &ClusterTree, family: &DirectionFamily, params: &Admissibility) -> Result<DirectedBlockTree> {
    params.validate()?;
    let mut nodes: Vec<BlockNode> = Vec::new();
    let mut admissible = Vec::new();
    let mut inadmissible = Vec::new();
    let mut stack = vec![(ClusterTree::ROOT, ClusterTree::ROOT, None::<usize>)];
    while let Some((t, s, parent)) = stack.pop() {
        let id = nodes.len();
        let (ct, cs) = (tree.node(t), tree.node(s));
        let kind = if family.compatible(ct.level, cs.level) {
            let test = is_admissible(&ct.bbox, &cs.bbox, params, family.level(ct.level));
            match (test.admissible, test.direction) {
                (true, Some(direction)) => Some(BlockKind::Admissible { direction }),
                _ => None,
            }
        } else {
            None
        };
        let kind = kind.unwrap_or_else(|| {
            if ct.is_leaf() && cs.is_leaf() {
                BlockKind::Inadmissible
            } else {
                BlockKind::Subdivided(Vec::new())
            }
        });
        match &kind {
            BlockKind::Admissible { direction } => admissible.push(AdmissibleBlock { row: t, col: s, direction: *direction }),
            BlockKind::Inadmissible => inadmissible.push((t, s)),
            BlockKind::Subdivided(_) => {
                let rows = if ct.is_leaf() { vec![t] } else { ct.children.clone() };
                let cols = if cs.is_leaf() { vec![s] } else { cs.children.clone() };
                for &r in rows.iter().rev() {
                    for &c in cols.iter().rev() {
                        stack.push((r, c, Some(id)));
                    }
                }
            }
        }
        nodes.push(BlockNode { row: t, col: s, kind });
        if let Some(p) = parent {
            if let BlockKind::Subdivided(children) = &mut nodes[p].kind {
                children.push(id);
            }
        }
    }

    let mut row_sets: BTreeMap<PairKey, Vec<usize>> = BTreeMap::new();
    let mut col_sets: BTreeMap<PairKey, Vec<usize>> = BTreeMap::new();
    let mut seeds: BTreeSet<PairKey> = BTreeSet::new();
    for (id, b) in admissible.iter().enumerate() {
        row_sets.entry((b.row, b.direction)).or_default().push(id);
        col_sets.entry((b.col, b.direction)).or_default().push(id);
        seeds.insert((b.row, b.direction));
        seeds.insert((b.col, b.direction));
    }
    let mut active: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); tree.len()];
    for (t, c) in seeds {
        active[t].insert(c);
    }
    for t in tree.top_down() {
        let node = tree.node(t);
        let dirs: Vec<usize> = active[t].iter().copied().collect();
        for &child in &node.children {
            for &c in &dirs {
                active[child].insert(family.child_direction(node.level, c));
            }
        }
    }
    let active = active.into_iter().map(|s| s.into_iter().collect()).collect();
    Ok(DirectedBlockTree { nodes, admissible, inadmissible, row_sets, col_sets, active })
}

/// `R*_tc` (row side) or its column analogue as sets of admissible block
/// ids: the blocks attached to `(t, c)` plus everything inherited from parent
/// directions `c⁺` with `dirchil(t, c⁺) = c`.
pub fn extended_sets(
    tree: &ClusterTree,
    family: &DirectionFamily,
    blocks: &DirectedBlockTree,
    side: Side,
) -> BTreeMap<PairKey, BTreeSet<usize>> {
    let mut out: BTreeMap<PairKey, BTreeSet<usize>> = BTreeMap::new();
    for t in tree.top_down() {
        for &c in blocks.active_directions(t) {
            out.insert((t, c), blocks.side_set(side, t, c).iter().copied().collect());
        }
        if let Some(parent) = tree.node(t).parent {
            let plevel = tree.node(parent).level;
            for &cp in blocks.active_directions(parent) {
                let c = family.child_direction(plevel, cp);
                let inherited: Vec<usize> = out[&(parent, cp)].iter().copied().collect();
                out.entry((t, c)).or_default().extend(inherited);
            }
        }
    }
    out
}

/// `R*_tc` as admissible block ids.
pub fn extended_row_sets(tree: &ClusterTree, family: &DirectionFamily, blocks: &DirectedBlockTree) -> BTreeMap<PairKey, BTreeSet<usize>> {
    extended_sets(tree, family, blocks, Side::Row)
}

/// Everything derived from a point set that the matrix representations
/// share: cluster tree, directions and block tree.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    pub points: Vec<Point3>,
    pub tree: ClusterTree,
    pub directions: DirectionFamily,
    pub blocks: DirectedBlockTree,
    pub params: Admissibility,
}

impl Hierarchy {
    pub fn build(points: Vec<Point3>, leaf_size: usize, params: Admissibility) -> Result<Self> {
        params.validate()?;
        let tree = build_cluster_tree(&points, leaf_size)?;
        let directions = build_directions(&tree, params.kappa, params.eta2)?;
        let blocks = build_block_tree(&tree, &directions, &params)?;
        Ok(Hierarchy { points, tree, directions, blocks, params })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn direction_of(&self, t: usize, c: usize) -> Point3 {
        self.directions.direction(self.tree.node(t).level, c)
    }

    /// `dirchil(child, c)` for a direction `c` of the parent of `child`.
    pub fn dirchil(&self, child: usize, c: usize) -> usize {
        let parent = self.tree.node(child).parent.expect("dirchil needs a non-root cluster");
        self.directions.child_direction(self.tree.node(parent).level, c)
    }
}
