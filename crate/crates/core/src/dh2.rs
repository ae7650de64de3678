//! Directional H²-matrices: nested cluster bases, coupling matrices on
//! admissible leaves and dense nearfield blocks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::geometry::Point3;
use crate::kernel::{chebyshev_rule, coupling_matrix, leaf_matrix, transfer_matrix, HelmholtzKernel, InterpRule};
use crate::linalg::{bytes, CMat, CVec};
use crate::tree::{Hierarchy, PairKey};
use crate::{Error, Result};

/// Largest `n` for which dense reconstructions are allowed.
pub const DENSE_LIMIT: usize = 16384;

/// Directional cluster basis with variable ranks.
///
/// `leaf[(t, c)]` holds the basis of a leaf cluster, `transfer[(t', c)]`
/// the transfer matrix from direction `c` of the parent of `t'` to
/// direction `dirchil(t', c)` of `t'`.
#[derive(Clone, Debug, Default)]
pub struct ClusterBasis {
    pub leaf: BTreeMap<PairKey, CMat>,
    pub transfer: BTreeMap<PairKey, CMat>,
    pub ranks: BTreeMap<PairKey, usize>,
}

impl ClusterBasis {
    pub fn rank(&self, t: usize, c: usize) -> usize {
        self.ranks.get(&(t, c)).copied().unwrap_or(0)
    }

    pub fn leaf_matrix(&self, t: usize, c: usize) -> Result<&CMat> {
        self.leaf.get(&(t, c)).ok_or(Error::MissingBasis { cluster: t, direction: c })
    }

    /// Transfer matrix of child `t` for parent direction `c`.
    pub fn transfer_matrix(&self, t: usize, c: usize) -> Result<&CMat> {
        self.transfer.get(&(t, c)).ok_or(Error::MissingBasis { cluster: t, direction: c })
    }

    pub fn leaf_bytes(&self) -> usize {
        self.leaf.values().map(bytes).sum()
    }

    pub fn transfer_bytes(&self) -> usize {
        self.transfer.values().map(bytes).sum()
    }

    /// Transfer matrices of all children of `t` for direction `c`, stacked
    /// in child order.
    pub fn stacked_transfer(&self, h: &Hierarchy, t: usize, c: usize) -> Result<CMat> {
        let blocks = h
            .tree
            .node(t)
            .children
            .iter()
            .map(|&child| self.transfer_matrix(child, c).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::linalg::stack_rows(&blocks, self.rank(t, c)))
    }
}

/// Explicit basis matrix of `(t, c)` with rows ordered like the index list
/// of `t`, expanded through the transfer matrices.
pub fn expand_basis(h: &Hierarchy, basis: &ClusterBasis, t: usize, c: usize) -> Result<CMat> {
    let node = h.tree.node(t);
    if node.is_leaf() {
        return basis.leaf_matrix(t, c).cloned();
    }
    let mut out = CMat::zeros(node.size(), basis.rank(t, c));
    for (&child, positions) in node.children.iter().zip(h.tree.child_positions(t)) {
        let part = expand_basis(h, basis, child, h.dirchil(child, c))? * basis.transfer_matrix(child, c)?;
        for (row, &p) in positions.iter().enumerate() {
            out.row_mut(p).copy_from(&part.row(row));
        }
    }
    Ok(out)
}

/// Byte counts per storage category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StorageReport {
    pub leaf: usize,
    pub transfer: usize,
    pub coupling: usize,
    pub nearfield: usize,
    pub weights: Option<usize>,
}

impl StorageReport {
    /// Leaf, transfer and coupling bytes.
    pub fn farfield(&self) -> usize {
        self.leaf + self.transfer + self.coupling
    }

    /// Everything except attached weights.
    pub fn matrix(&self) -> usize {
        self.farfield() + self.nearfield
    }

    pub fn with_weights(mut self, weights: usize) -> Self {
        self.weights = Some(weights);
        self
    }

    /// CSV with header `category,bytes`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,bytes\n");
        for (name, value) in [("leaf", self.leaf), ("transfer", self.transfer), ("coupling", self.coupling), ("nearfield", self.nearfield)] {
            let _ = writeln!(out, "{name},{value}");
        }
        if let Some(w) = self.weights {
            let _ = writeln!(out, "weights,{w}");
        }
        out
    }
}

/// Directional H²-matrix. `couplings` is aligned with
/// `hierarchy.blocks.admissible`, `nearfield` with
/// `hierarchy.blocks.inadmissible`. Row and column basis may be the same
/// allocation.
#[derive(Clone, Debug)]
pub struct DH2Matrix {
    pub hierarchy: Arc<Hierarchy>,
    pub row_basis: Arc<ClusterBasis>,
    pub col_basis: Arc<ClusterBasis>,
    pub couplings: Vec<CMat>,
    pub nearfield: Vec<CMat>,
}

/// Interpolation rules of order `m` on every cluster box.
pub fn cluster_rules(h: &Hierarchy, order: usize) -> Result<Vec<InterpRule>> {
    h.tree.nodes.iter().map(|c| chebyshev_rule(&c.bbox, order)).collect()
}

/// Directional interpolation basis of order `m` for every active
/// `(t, c)`.
pub fn interpolation_basis(h: &Hierarchy, rules: &[InterpRule]) -> ClusterBasis {
    let kernel = HelmholtzKernel::new(h.params.kappa);
    let mut basis = ClusterBasis::default();
    for t in h.tree.top_down() {
        let node = h.tree.node(t);
        for &c in h.blocks.active_directions(t) {
            let dir = h.direction_of(t, c);
            basis.ranks.insert((t, c), rules[t].rank());
            if node.is_leaf() {
                basis.leaf.insert((t, c), leaf_matrix(&h.points, &node.indices, &rules[t], &kernel, &dir));
            }
            for &child in &node.children {
                let child_dir = h.direction_of(child, h.dirchil(child, c));
                basis.transfer.insert((child, c), transfer_matrix(&rules[child], &child_dir, &rules[t], &dir, &kernel));
            }
        }
    }
    basis
}

/// Exact kernel matrix entries for `rows × cols`, zero where points
/// coincide.
pub fn kernel_block(points: &[Point3], kernel: &HelmholtzKernel, rows: &[usize], cols: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), cols.len(), |i, j| kernel.eval_or_zero(&points[rows[i]], &points[cols[j]]))
}

/// Assembles the directional interpolation approximation of order `m` of
/// the kernel matrix on the hierarchy's points.
pub fn assemble_dh2(hierarchy: Arc<Hierarchy>, order: usize) -> Result<DH2Matrix> {
    let h = &*hierarchy;
    let kernel = HelmholtzKernel::new(h.params.kappa);
    let rules = cluster_rules(h, order)?;
    let basis = Arc::new(interpolation_basis(h, &rules));
    let couplings = h
        .blocks
        .admissible
        .iter()
        .map(|b| coupling_matrix(&rules[b.row], &rules[b.col], &kernel, &h.direction_of(b.row, b.direction)))
        .collect::<Result<Vec<_>>>()?;
    let nearfield = h
        .blocks
        .inadmissible
        .iter()
        .map(|&(t, s)| kernel_block(&h.points, &kernel, &h.tree.node(t).indices, &h.tree.node(s).indices))
        .collect();
    Ok(DH2Matrix { hierarchy, row_basis: basis.clone(), col_basis: basis, couplings, nearfield })
}

fn gather(x: &CVec, indices: &[usize]) -> CVec {
    CVec::from_iterator(indices.len(), indices.iter().map(|&i| x[i]))
}

fn scatter_add(y: &mut CVec, indices: &[usize], v: &CVec) {
    for (&i, value) in indices.iter().zip(v.iter()) {
        y[i] += value;
    }
}

impl DH2Matrix {
    pub fn n(&self) -> usize {
        self.hierarchy.n()
    }

    pub fn shares_basis(&self) -> bool {
        Arc::ptr_eq(&self.row_basis, &self.col_basis)
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &CVec) -> Result<CVec> {
        self.apply(x, false)
    }

    /// `y = A* x`.
    pub fn matvec_adjoint(&self, x: &CVec) -> Result<CVec> {
        self.apply(x, true)
    }

    fn apply(&self, x: &CVec, adjoint: bool) -> Result<CVec> {
        let h = &*self.hierarchy;
        if x.len() != h.n() {
            return Err(Error::DimensionMismatch { expected: h.n(), got: x.len() });
        }
        let (in_basis, out_basis) = if adjoint { (&*self.row_basis, &*self.col_basis) } else { (&*self.col_basis, &*self.row_basis) };

        // forward transformation, children first
        let mut xhat: BTreeMap<PairKey, CVec> = BTreeMap::new();
        for t in h.tree.bottom_up() {
            let node = h.tree.node(t);
            let xt = node.is_leaf().then(|| gather(x, &node.indices));
            for &c in h.blocks.active_directions(t) {
                let coeff = match &xt {
                    Some(xt) => in_basis.leaf_matrix(t, c)?.ad_mul(xt),
                    None => {
                        let mut acc = CVec::zeros(in_basis.rank(t, c));
                        for &child in &node.children {
                            acc += in_basis.transfer_matrix(child, c)?.ad_mul(&xhat[&(child, h.dirchil(child, c))]);
                        }
                        acc
                    }
                };
                xhat.insert((t, c), coeff);
            }
        }

        let mut yhat: BTreeMap<PairKey, CVec> =
            h.blocks.active_pairs().map(|(t, c)| ((t, c), CVec::zeros(out_basis.rank(t, c)))).collect();
        for (b, s) in h.blocks.admissible.iter().zip(&self.couplings) {
            if adjoint {
                let v = s.ad_mul(&xhat[&(b.row, b.direction)]);
                *yhat.get_mut(&(b.col, b.direction)).expect("active pair") += v;
            } else {
                let v = s * &xhat[&(b.col, b.direction)];
                *yhat.get_mut(&(b.row, b.direction)).expect("active pair") += v;
            }
        }

        // backward transformation, parents first
        let mut y = CVec::zeros(h.n());
        for t in h.tree.top_down() {
            let node = h.tree.node(t);
            for &c in h.blocks.active_directions(t) {
                let coeff = yhat[&(t, c)].clone();
                if node.is_leaf() {
                    scatter_add(&mut y, &node.indices, &(out_basis.leaf_matrix(t, c)? * coeff));
                } else {
                    for &child in &node.children {
                        let v = out_basis.transfer_matrix(child, c)? * &coeff;
                        *yhat.get_mut(&(child, h.dirchil(child, c))).expect("active pair") += v;
                    }
                }
            }
        }

        for (&(t, s), block) in h.blocks.inadmissible.iter().zip(&self.nearfield) {
            let (rows, cols) = (&h.tree.node(t).indices, &h.tree.node(s).indices);
            if adjoint {
                scatter_add(&mut y, cols, &block.ad_mul(&gather(x, rows)));
            } else {
                scatter_add(&mut y, rows, &(block * gather(x, cols)));
            }
        }
        Ok(y)
    }

    /// Dense `V_tc S_ts V_sc*` of admissible block `b`.
    pub fn admissible_block_dense(&self, b: usize) -> Result<CMat> {
        let h = &*self.hierarchy;
        let block = h.blocks.admissible[b];
        let vt = expand_basis(h, &self.row_basis, block.row, block.direction)?;
        let vs = expand_basis(h, &self.col_basis, block.col, block.direction)?;
        Ok(vt * &self.couplings[b] * vs.adjoint())
    }

    pub fn to_dense(&self) -> Result<CMat> {
        let h = &*self.hierarchy;
        let n = h.n();
        if n > DENSE_LIMIT {
            return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
        }
        let mut out = CMat::zeros(n, n);
        let mut place = |rows: &[usize], cols: &[usize], m: &CMat| {
            for (j, &cj) in cols.iter().enumerate() {
                for (i, &ri) in rows.iter().enumerate() {
                    out[(ri, cj)] = m[(i, j)];
                }
            }
        };
        for (b, block) in h.blocks.admissible.iter().enumerate() {
            let dense = self.admissible_block_dense(b)?;
            place(&h.tree.node(block.row).indices, &h.tree.node(block.col).indices, &dense);
        }
        for (&(t, s), block) in h.blocks.inadmissible.iter().zip(&self.nearfield) {
            place(&h.tree.node(t).indices, &h.tree.node(s).indices, block);
        }
        Ok(out)
    }

    pub fn storage_report(&self) -> StorageReport {
        let mut report = StorageReport {
            leaf: self.row_basis.leaf_bytes(),
            transfer: self.row_basis.transfer_bytes(),
            coupling: self.couplings.iter().map(bytes).sum(),
            nearfield: self.nearfield.iter().map(bytes).sum(),
            weights: None,
        };
        if !self.shares_basis() {
            report.leaf += self.col_basis.leaf_bytes();
            report.transfer += self.col_basis.transfer_bytes();
        }
        report
    }
}

/// Dense kernel matrix with zero diagonal.
pub fn dense_kernel_matrix(points: &[Point3], kappa: f64) -> Result<CMat> {
    let n = points.len();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
    }
    let all: Vec<usize> = (0..n).collect();
    Ok(kernel_block(points, &HelmholtzKernel::new(kappa), &all, &all))
}
