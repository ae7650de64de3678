//! Algebraic recompression: adaptive isometric cluster bases built from
//! weighted SVDs, projected coupling matrices and dense verification of
//! the error bounds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dh2::{expand_basis, ClusterBasis, DH2Matrix};
use crate::linalg::{left_svd, random_vector, spectral_norm, stack_rows, submatrix, thin_qr_r, truncation_rank, CMat, CVec};
use crate::tree::{Hierarchy, PairKey, Side};
use crate::weights::{
    approx_weights, basis_weights, block_norm, floor_omega, level_factor, norm_estimates, oriented_coupling, weight_bytes, weight_storage_csv,
    WeightMap, Weighting,
};
use crate::{Error, Result};

/// Largest `n` accepted by the dense verification routines.
pub const VERIFY_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorMode {
    /// `σ_{k+1} ≤ ε` on the unweighted total weights.
    Absolute,
    /// Blocks scaled by `ω⁻¹` so that every block satisfies
    /// `‖G| - QQ*G|‖₂ ≤ ε ‖G|‖₂`.
    BlockRelative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationControl {
    pub eps: f64,
    pub mode: ErrorMode,
    pub max_rank: Option<usize>,
}

impl TruncationControl {
    pub fn new(eps: f64, mode: ErrorMode) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter("truncation tolerance must be positive".into()));
        }
        Ok(TruncationControl { eps, mode, max_rank: None })
    }

    pub fn with_max_rank(mut self, max_rank: usize) -> Self {
        self.max_rank = Some(max_rank);
        self
    }

    /// Smallest rank with `σ_{k+1} ≤ ε`, capped by `max_rank`.
    pub fn rank(&self, sigma: &[f64]) -> usize {
        let k = truncation_rank(sigma, self.eps);
        self.max_rank.map_or(k, |cap| k.min(cap))
    }
}

/// Weights feeding the total weights of one basis construction.
#[derive(Clone, Copy, Debug)]
pub struct WeightInput<'a> {
    /// `R_sc` or `R̂_sc` of the partner clusters.
    pub partner: &'a WeightMap,
    /// Factor of the cluster itself used for `ω`: `R_tc` for exact block
    /// norms, `N_tc` for estimated ones. Only read in block-relative mode.
    pub own: &'a WeightMap,
}

/// Adaptive cluster basis with the basis change `T_tc = Q_tc* V_tc` and
/// the singular values seen at every `(t, c)`.
#[derive(Clone, Debug, Default)]
pub struct AdaptiveBasis {
    pub basis: ClusterBasis,
    pub change: BTreeMap<PairKey, CMat>,
    pub spectra: BTreeMap<PairKey, Vec<f64>>,
    /// Rank `k` of the input basis.
    pub input_rank: BTreeMap<PairKey, usize>,
}

impl AdaptiveBasis {
    /// `Q̂_tc`: the leaf basis, or the children's transfer matrices stacked.
    pub fn coefficient_basis(&self, h: &Hierarchy, t: usize, c: usize) -> Result<CMat> {
        if h.tree.node(t).is_leaf() {
            self.basis.leaf_matrix(t, c).cloned()
        } else {
            self.basis.stacked_transfer(h, t, c)
        }
    }

    /// Per-pair ranks and spectra as CSV:
    /// `cluster,direction,level,size,k,k_tc,sigma_k,sigma_k1`, where
    /// `sigma_k` is the last kept and `sigma_k1` the first dropped singular
    /// value (0 if there is none).
    pub fn rank_report_csv(&self, h: &Hierarchy) -> String {
        let mut out = String::from("cluster,direction,level,size,k,k_tc,sigma_k,sigma_k1\n");
        for (&(t, c), sigma) in &self.spectra {
            let k_tc = self.basis.rank(t, c);
            let kept = if k_tc > 0 { sigma[k_tc - 1] } else { 0.0 };
            let dropped = sigma.get(k_tc).copied().unwrap_or(0.0);
            let node = h.tree.node(t);
            let _ = writeln!(out, "{t},{c},{},{},{},{k_tc},{kept:e},{dropped:e}", node.level, node.size(), self.input_rank[&(t, c)]);
        }
        out
    }
}

/// Builds an adaptive basis for the rows (`Side::Row`) or columns
/// (`Side::Col`) of `a`. With `symmetric` set both orientations of every
/// block enter the total weights and the result serves rows and columns;
/// this requires a shared input basis.
pub fn build_adaptive_basis(a: &DH2Matrix, side: Side, symmetric: bool, weights: WeightInput<'_>, ctrl: &TruncationControl) -> Result<AdaptiveBasis> {
    if symmetric && !a.shares_basis() {
        return Err(Error::InvalidParameter("symmetric total weights need a shared input basis".into()));
    }
    let h = &*a.hierarchy;
    let input = match side {
        Side::Row => &*a.row_basis,
        Side::Col => &*a.col_basis,
    };
    let sides: Vec<Side> = if symmetric { vec![Side::Row, Side::Col] } else { vec![side] };
    let omegas: BTreeMap<Side, Vec<f64>> = sides
        .iter()
        .map(|&o| {
            let w = match ctrl.mode {
                ErrorMode::Absolute => vec![1.0; a.couplings.len()],
                ErrorMode::BlockRelative => {
                    let factor = level_factor(h);
                    h.blocks
                        .admissible
                        .iter()
                        .zip(&a.couplings)
                        .map(|(b, s)| floor_omega(block_norm(b, s, o, weights.own, weights.partner) / factor))
                        .collect()
                }
            };
            (o, w)
        })
        .collect();
    let inherit = match ctrl.mode {
        ErrorMode::Absolute => 1.0,
        ErrorMode::BlockRelative => level_factor(h),
    };
    let builder = Builder { a, input, sides, omegas, inherit, weights, ctrl };
    let mut out = AdaptiveBasis::default();
    builder.visit(crate::tree::ClusterTree::ROOT, &BTreeMap::new(), &mut out)?;
    Ok(out)
}

struct Builder<'a> {
    a: &'a DH2Matrix,
    input: &'a ClusterBasis,
    sides: Vec<Side>,
    omegas: BTreeMap<Side, Vec<f64>>,
    inherit: f64,
    weights: WeightInput<'a>,
    ctrl: &'a TruncationControl,
}

impl Builder<'_> {
    /// Total weight `Z_tc` from the blocks attached to `(t, c)` and the
    /// parent's total weights.
    fn total_weight(&self, t: usize, c: usize, parent_z: &BTreeMap<usize, CMat>) -> Result<CMat> {
        let h = &*self.a.hierarchy;
        let k = self.input.rank(t, c);
        let mut parts = Vec::new();
        for &side in &self.sides {
            for &b in h.blocks.side_set(side, t, c) {
                let block = &h.blocks.admissible[b];
                let p = &self.weights.partner[&(side.partner(block), c)];
                let m = oriented_coupling(&self.a.couplings[b], side);
                let scale = Complex64::from(1.0 / self.omegas[&side][b]);
                parts.push(p * m.adjoint() * scale);
            }
        }
        for (&cp, z) in parent_z {
            if h.dirchil(t, cp) == c {
                parts.push(z * self.input.transfer_matrix(t, cp)?.adjoint() * Complex64::from(self.inherit));
            }
        }
        Ok(thin_qr_r(stack_rows(&parts, k)))
    }

    fn visit(&self, t: usize, parent_z: &BTreeMap<usize, CMat>, out: &mut AdaptiveBasis) -> Result<()> {
        let h = &*self.a.hierarchy;
        let node = h.tree.node(t);
        let mut z = BTreeMap::new();
        for &c in h.blocks.active_directions(t) {
            z.insert(c, self.total_weight(t, c, parent_z)?);
        }
        for &child in &node.children {
            self.visit(child, &z, out)?;
        }
        for &c in h.blocks.active_directions(t) {
            let vhat = if node.is_leaf() {
                self.input.leaf_matrix(t, c)?.clone()
            } else {
                let parts = node
                    .children
                    .iter()
                    .map(|&child| Ok(&out.change[&(child, h.dirchil(child, c))] * self.input.transfer_matrix(child, c)?))
                    .collect::<Result<Vec<_>>>()?;
                stack_rows(&parts, self.input.rank(t, c))
            };
            let svd = left_svd(&(&vhat * z[&c].adjoint()));
            let k = self.ctrl.rank(&svd.sigma);
            let qhat = svd.truncated_u(k);
            out.change.insert((t, c), qhat.ad_mul(&vhat));
            if node.is_leaf() {
                out.basis.leaf.insert((t, c), qhat);
            } else {
                let mut offset = 0;
                for &child in &node.children {
                    let rows = out.basis.rank(child, h.dirchil(child, c));
                    out.basis.transfer.insert((child, c), qhat.rows(offset, rows).into_owned());
                    offset += rows;
                }
            }
            out.basis.ranks.insert((t, c), k);
            out.input_rank.insert((t, c), self.input.rank(t, c));
            out.spectra.insert((t, c), svd.sigma);
        }
        Ok(())
    }
}

/// All total weights `Z_tc` of one side, computed top-down. Meant for
/// inspection; the basis construction keeps only those on the current
/// path of the recursion.
pub fn total_weights(a: &DH2Matrix, side: Side, symmetric: bool, weights: WeightInput<'_>, ctrl: &TruncationControl) -> Result<WeightMap> {
    let h = &*a.hierarchy;
    let input = match side {
        Side::Row => &*a.row_basis,
        Side::Col => &*a.col_basis,
    };
    let sides: Vec<Side> = if symmetric { vec![Side::Row, Side::Col] } else { vec![side] };
    let omegas = sides.iter().map(|&o| (o, vec![1.0; a.couplings.len()])).collect();
    let builder = Builder { a, input, sides, omegas, inherit: 1.0, weights, ctrl };
    let mut out = WeightMap::new();
    for t in h.tree.top_down() {
        let parent_z: BTreeMap<usize, CMat> = match h.tree.node(t).parent {
            Some(p) => h.blocks.active_directions(p).iter().map(|&cp| (cp, out[&(p, cp)].clone())).collect(),
            None => BTreeMap::new(),
        };
        for &c in h.blocks.active_directions(t) {
            let z = builder.total_weight(t, c, &parent_z)?;
            out.insert((t, c), z);
        }
    }
    Ok(out)
}

/// Replaces the bases of `a` by the adaptive ones and projects the
/// coupling matrices, `S̃_ts = T_tc S_ts T_sc*`. Passing the same basis for
/// rows and columns yields a matrix with a shared basis.
pub fn project_couplings(a: &DH2Matrix, row: &Arc<AdaptiveBasis>, col: &Arc<AdaptiveBasis>) -> Result<DH2Matrix> {
    fn change(basis: &AdaptiveBasis, t: usize, c: usize) -> Result<&CMat> {
        basis.change.get(&(t, c)).ok_or(Error::MissingBasis { cluster: t, direction: c })
    }
    let h = &*a.hierarchy;
    let couplings = h
        .blocks
        .admissible
        .iter()
        .zip(&a.couplings)
        .map(|(b, s)| Ok(change(row, b.row, b.direction)? * s * change(col, b.col, b.direction)?.adjoint()))
        .collect::<Result<Vec<_>>>()?;
    let row_basis = Arc::new(row.basis.clone());
    let col_basis = if Arc::ptr_eq(row, col) { row_basis.clone() } else { Arc::new(col.basis.clone()) };
    Ok(DH2Matrix { hierarchy: a.hierarchy.clone(), row_basis, col_basis, couplings, nearfield: a.nearfield.clone() })
}

/// Which basis weights drive the construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightMode {
    Exact,
    /// Compressed weights with accuracy `eps_w`; block-relative runs use
    /// norm estimates with `k_norm` rows for `ω`.
    Compressed { eps_w: f64, k_norm: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecompressOptions {
    pub ctrl: TruncationControl,
    pub weights: WeightMode,
    pub symmetric: bool,
}

/// Result of [`recompress`] with the weight storage it needed.
#[derive(Clone, Debug)]
pub struct Recompressed {
    pub matrix: DH2Matrix,
    pub row: Arc<AdaptiveBasis>,
    pub col: Arc<AdaptiveBasis>,
    /// Bytes of the weights used by the construction.
    pub weight_bytes: usize,
    /// Bytes the exact basis weights take.
    pub full_weight_bytes: usize,
    pub norm_estimate_bytes: usize,
    /// Per-level weight storage, see [`weight_storage_csv`].
    pub weight_storage_csv: String,
}

/// Full recompression of an interpolation matrix with a shared basis.
pub fn recompress(a: &DH2Matrix, opts: &RecompressOptions) -> Result<Recompressed> {
    if !a.shares_basis() {
        return Err(Error::InvalidParameter("recompression expects a shared input basis".into()));
    }
    let h = &*a.hierarchy;
    let blockrel = opts.ctrl.mode == ErrorMode::BlockRelative;
    let (partner, own, full_level, norms) = match opts.weights {
        WeightMode::Exact => {
            let r = basis_weights(h, &a.row_basis)?;
            (r.clone(), r.clone(), crate::weights::level_bytes(h, &r), None)
        }
        WeightMode::Compressed { eps_w, k_norm } => {
            let norms = norm_estimates(h, &a.row_basis, k_norm)?;
            let weighting = if blockrel { Weighting::BlockRelative(&norms) } else { Weighting::Unweighted };
            let cw = approx_weights(a, eps_w, weighting)?;
            (cw.r_hat, norms.clone(), cw.full_level_bytes, Some(norms))
        }
    };
    let input = WeightInput { partner: &partner, own: &own };
    let row = Arc::new(build_adaptive_basis(a, Side::Row, opts.symmetric, input, &opts.ctrl)?);
    let col = if opts.symmetric { row.clone() } else { Arc::new(build_adaptive_basis(a, Side::Col, false, input, &opts.ctrl)?) };
    let matrix = project_couplings(a, &row, &col)?;
    let norm_estimate_bytes = norms.as_ref().map_or(0, weight_bytes);
    Ok(Recompressed {
        matrix,
        weight_storage_csv: weight_storage_csv(h, &full_level, &partner, norms.as_ref()),
        row,
        col,
        weight_bytes: weight_bytes(&partner),
        full_weight_bytes: full_level.iter().sum(),
        norm_estimate_bytes,
    })
}

fn check_size(h: &Hierarchy) -> Result<()> {
    if h.n() > VERIFY_LIMIT {
        return Err(Error::TooLarge { n: h.n(), limit: VERIFY_LIMIT });
    }
    Ok(())
}

/// `G|_{t'×s}` for a descendant `t'` of `t`, cut from `G|_{t×s}`.
fn restrict_rows(h: &Hierarchy, t: usize, sub: usize, g: &CMat) -> CMat {
    let parent = &h.tree.node(t).indices;
    let rows: Vec<usize> = h.tree.node(sub).indices.iter().map(|i| parent.binary_search(i).expect("descendant index")).collect();
    let cols: Vec<usize> = (0..g.ncols()).collect();
    submatrix(g, &rows, &cols)
}

/// `Ĝ_{t'sc'}`: `G|_{t'×s}` on leaves, `U_{t'c'}* G|_{t'×s}` otherwise.
fn projected_block(h: &Hierarchy, basis: &ClusterBasis, t: usize, c: usize, g_t: &CMat) -> Result<CMat> {
    let node = h.tree.node(t);
    if node.is_leaf() {
        return Ok(g_t.clone());
    }
    let parts = node
        .children
        .iter()
        .map(|&child| {
            let q = expand_basis(h, basis, child, h.dirchil(child, c))?;
            Ok(q.ad_mul(&restrict_rows(h, t, child, g_t)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(stack_rows(&parts, g_t.ncols()))
}

/// `U_tc`: the expanded bases of the children of `t` side by side, rows
/// ordered like the index list of `t`.
fn children_basis(h: &Hierarchy, basis: &ClusterBasis, t: usize, c: usize) -> Result<CMat> {
    let node = h.tree.node(t);
    let mut parts = Vec::new();
    for (&child, positions) in node.children.iter().zip(h.tree.child_positions(t)) {
        parts.push((positions, expand_basis(h, basis, child, h.dirchil(child, c))?));
    }
    let width = parts.iter().map(|p| p.1.ncols()).sum();
    let mut u = CMat::zeros(node.size(), width);
    let mut offset = 0;
    for (positions, q) in &parts {
        for (row, &p) in positions.iter().enumerate() {
            u.view_mut((p, offset), (1, q.ncols())).copy_from(&q.row(row));
        }
        offset += q.ncols();
    }
    Ok(u)
}

/// Outcome of [`verify_error_representation`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ErrorRepresentationReport {
    pub blocks: usize,
    pub vectors: usize,
    /// Largest `|lhs - rhs| / max(lhs, tiny)`.
    pub max_relative_mismatch: f64,
    /// Largest `|<e₁, e₂>| / (‖e₁‖ ‖e₂‖)` of the two error terms of one
    /// refinement step.
    pub max_orthogonality: f64,
}

/// Checks `‖(G - QQ*G)x‖² = Σ_{desc(t,c)} ‖(Ĝ - Q̂Q̂*Ĝ)x‖²` on the given
/// admissible blocks of `a` for `vectors` random `x` each.
pub fn verify_error_representation(a: &DH2Matrix, adaptive: &AdaptiveBasis, blocks: &[usize], vectors: usize, seed: u64) -> Result<ErrorRepresentationReport> {
    let h = &*a.hierarchy;
    check_size(h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ErrorRepresentationReport { blocks: blocks.len(), vectors, ..Default::default() };
    for &b in blocks {
        let block = h.blocks.admissible[b];
        let (t, c) = (block.row, block.direction);
        let g = a.admissible_block_dense(b)?;
        let q = expand_basis(h, &adaptive.basis, t, c)?;
        let residual = &g - &q * q.ad_mul(&g);

        // every descendant with its restricted block and Ĝ, Q̂
        let mut terms = Vec::new();
        let mut stack = vec![(t, c)];
        while let Some((u, d)) = stack.pop() {
            let g_u = restrict_rows(h, t, u, &g);
            let ghat = projected_block(h, &adaptive.basis, u, d, &g_u)?;
            let qhat = adaptive.coefficient_basis(h, u, d)?;
            terms.push(&ghat - &qhat * qhat.ad_mul(&ghat));
            for &child in &h.tree.node(u).children {
                stack.push((child, h.dirchil(child, d)));
            }
        }

        // the two terms of the first refinement step
        let node = h.tree.node(t);
        let split = if node.is_leaf() {
            None
        } else {
            let u = children_basis(h, &adaptive.basis, t, c)?;
            let qhat = adaptive.coefficient_basis(h, t, c)?;
            let ug = u.ad_mul(&g);
            let first = &g - &u * &ug;
            let second = &u * (&ug - &qhat * qhat.ad_mul(&ug));
            Some((first, second))
        };

        for _ in 0..vectors {
            let x: CVec = random_vector(g.ncols(), &mut rng);
            let lhs = (&residual * &x).norm_squared();
            let rhs: f64 = terms.iter().map(|e| (e * &x).norm_squared()).sum();
            let mismatch = (lhs - rhs).abs() / lhs.max(f64::MIN_POSITIVE);
            if lhs > 0.0 || rhs > 0.0 {
                report.max_relative_mismatch = report.max_relative_mismatch.max(mismatch);
            }
            if let Some((first, second)) = &split {
                let y: CVec = random_vector(g.ncols(), &mut rng);
                let (e1, e2) = (first * &x, second * &y);
                let denom = e1.norm() * e2.norm();
                if denom > 0.0 {
                    report.max_orthogonality = report.max_orthogonality.max(e1.dotc(&e2).norm() / denom);
                }
            }
        }
    }
    Ok(report)
}

/// Blockwise errors seen by [`verify_stability`].
#[derive(Clone, Copy, Debug, Default)]
pub struct BlockStability {
    pub block: usize,
    /// `‖H| - G|‖₂ / ‖H|‖₂`.
    pub input_error: f64,
    /// `‖G| - QQ*G|‖₂ / ‖G|‖₂`.
    pub projection_error: f64,
    /// `‖H| - QQ*H|‖₂ / ‖H|‖₂`.
    pub result_error: f64,
    /// Largest violation of `‖(H - QQ*H)x‖ ≤ ‖(G - QQ*G)x‖ + ‖(H - G)x‖`
    /// over the sampled `x`, relative to the right-hand side.
    pub triangle_violation: f64,
}

impl BlockStability {
    /// `ε = max(input_error, projection_error)`.
    pub fn eps(&self) -> f64 {
        self.input_error.max(self.projection_error)
    }

    /// `ε(2 + ε)`.
    pub fn bound(&self) -> f64 {
        let eps = self.eps();
        eps * (2.0 + eps)
    }
}

/// Compares the projection of the exact matrix `exact` with that of the
/// approximation `a` on every admissible block, using the row basis
/// `adaptive` built from `a`.
pub fn verify_stability(exact: &CMat, a: &DH2Matrix, adaptive: &AdaptiveBasis, vectors: usize, seed: u64) -> Result<Vec<BlockStability>> {
    let h = &*a.hierarchy;
    check_size(h)?;
    if exact.shape() != (h.n(), h.n()) {
        return Err(Error::DimensionMismatch { expected: h.n(), got: exact.nrows() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(h.blocks.admissible.len());
    for (b, block) in h.blocks.admissible.iter().enumerate() {
        let g = a.admissible_block_dense(b)?;
        let hb = submatrix(exact, &h.tree.node(block.row).indices, &h.tree.node(block.col).indices);
        let q = expand_basis(h, &adaptive.basis, block.row, block.direction)?;
        let rg = &g - &q * q.ad_mul(&g);
        let rh = &hb - &q * q.ad_mul(&hb);
        let diff = &hb - &g;
        let norm_h = spectral_norm(&hb);
        let norm_g = spectral_norm(&g);
        let mut violation: f64 = 0.0;
        for _ in 0..vectors {
            let x = random_vector(g.ncols(), &mut rng);
            let lhs = (&rh * &x).norm();
            let rhs = (&rg * &x).norm() + (&diff * &x).norm();
            violation = violation.max((lhs - rhs) / rhs.max(f64::MIN_POSITIVE));
        }
        out.push(BlockStability {
            block: b,
            input_error: spectral_norm(&diff) / floor_omega(norm_h),
            projection_error: spectral_norm(&rg) / floor_omega(norm_g),
            result_error: spectral_norm(&rh) / floor_omega(norm_h),
            triangle_violation: violation,
        });
    }
    Ok(out)
}
