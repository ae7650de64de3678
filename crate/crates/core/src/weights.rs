//! Basis weights, norm estimates, block-relative scaling and compressed
//! basis weights.
//!
//! All weights are keyed by active `(cluster, direction)` pairs and have `k`
//! columns, `k` being the rank of the cluster basis they describe.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dh2::{ClusterBasis, DH2Matrix};
use crate::linalg::{bytes, left_svd, spectral_norm, stack_rows, thin_qr_r, truncation_rank, CMat};
use crate::tree::{AdmissibleBlock, Hierarchy, PairKey, Side};
use crate::{Error, Result};

pub type WeightMap = BTreeMap<PairKey, CMat>;

pub fn weight_bytes(map: &WeightMap) -> usize {
    map.values().map(bytes).sum()
}

/// Bytes of `map` per cluster level.
pub fn level_bytes(h: &Hierarchy, map: &WeightMap) -> Vec<usize> {
    let mut out = vec![0; h.tree.depth()];
    for (&(t, _), m) in map {
        out[h.tree.node(t).level] += bytes(m);
    }
    out
}

/// Triangular factor `R_tc` of `(t, c)` given the factors of the children:
/// QR of `V_tc` on leaves, QR of the stacked `R_{t'c'} E_{t'c}` otherwise.
fn weight_step(h: &Hierarchy, basis: &ClusterBasis, t: usize, c: usize, r: &WeightMap) -> Result<CMat> {
    let node = h.tree.node(t);
    if node.is_leaf() {
        return Ok(thin_qr_r(basis.leaf_matrix(t, c)?.clone()));
    }
    let parts = node
        .children
        .iter()
        .map(|&child| Ok(&r[&(child, h.dirchil(child, c))] * basis.transfer_matrix(child, c)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(thin_qr_r(stack_rows(&parts, basis.rank(t, c))))
}

/// Basis weights `R_tc` with `V_tc = Q_tc R_tc` for every active pair.
pub fn basis_weights(h: &Hierarchy, basis: &ClusterBasis) -> Result<WeightMap> {
    let mut r = WeightMap::new();
    for t in h.tree.bottom_up() {
        for &c in h.blocks.active_directions(t) {
            let w = weight_step(h, basis, t, c, &r)?;
            r.insert((t, c), w);
        }
    }
    Ok(r)
}

/// Calls `visit(t, c, R_tc)` bottom-up while keeping only the factors that
/// a parent still needs. Returns the largest number of bytes of factors
/// held at once.
fn stream_weights(h: &Hierarchy, basis: &ClusterBasis, mut visit: impl FnMut(usize, usize, &CMat) -> Result<()>) -> Result<usize> {
    let mut r = WeightMap::new();
    let (mut live, mut peak) = (0, 0);
    for t in h.tree.bottom_up() {
        for &c in h.blocks.active_directions(t) {
            let w = weight_step(h, basis, t, c, &r)?;
            visit(t, c, &w)?;
            live += bytes(&w);
            peak = peak.max(live);
            r.insert((t, c), w);
        }
        for &child in &h.tree.node(t).children {
            for &c in h.blocks.active_directions(child) {
                if let Some(w) = r.remove(&(child, c)) {
                    live -= bytes(&w);
                }
            }
        }
    }
    Ok(peak)
}

/// Norm estimation matrices `N_tc = U* R_tc` with `U` the leading
/// `k_norm` left singular vectors of `R_tc`.
pub fn norm_estimates(h: &Hierarchy, basis: &ClusterBasis, k_norm: usize) -> Result<WeightMap> {
    if k_norm == 0 {
        return Err(Error::InvalidParameter("k_norm must be at least 1".into()));
    }
    let mut out = WeightMap::new();
    stream_weights(h, basis, |t, c, r| {
        let svd = left_svd(r);
        let keep = k_norm.min(svd.sigma.len());
        out.insert((t, c), svd.truncated_u(keep).adjoint() * r);
        Ok(())
    })?;
    Ok(out)
}

/// `√(m+1)` for a tree whose clusters have at most `m` children.
pub fn level_factor(h: &Hierarchy) -> f64 {
    ((h.tree.max_children() + 1) as f64).sqrt()
}

/// Replaces a vanishing weight by the smallest positive normal number.
pub fn floor_omega(omega: f64) -> f64 {
    if omega > 0.0 {
        omega
    } else {
        f64::MIN_POSITIVE
    }
}

/// The coupling matrix of block `b` as seen from `side`: `S` for the row
/// cluster, `S*` for the column cluster.
pub fn oriented_coupling(s: &CMat, side: Side) -> CMat {
    match side {
        Side::Row => s.clone(),
        Side::Col => s.adjoint(),
    }
}

/// `‖F S P*‖₂` for the block `b` seen from `side`: `F` is the factor of the
/// cluster on `side` from `own`, `P` the partner's factor from `partner`.
pub fn block_norm(b: &AdmissibleBlock, s: &CMat, side: Side, own: &WeightMap, partner: &WeightMap) -> f64 {
    let f = &own[&(side.cluster(b), b.direction)];
    let p = &partner[&(side.partner(b), b.direction)];
    spectral_norm(&(f * oriented_coupling(s, side) * p.adjoint()))
}

/// Block-relative weights `ω_ts = ‖F S P*‖₂ / √(m+1)` of every admissible
/// block at its owning cluster on `side`.
///
/// With `own` the exact basis weights the numerator is `‖G|_{t×s}‖₂`; with
/// norm estimates it is a lower bound.
pub fn block_relative_omegas(a: &DH2Matrix, side: Side, own: &WeightMap, partner: &WeightMap) -> Vec<f64> {
    let h = &*a.hierarchy;
    let factor = level_factor(h);
    h.blocks
        .admissible
        .iter()
        .zip(&a.couplings)
        .map(|(b, s)| floor_omega(block_norm(b, s, side, own, partner) / factor))
        .collect()
}

/// Weights `ω_{t's}` on every `(t', c') ∈ desc(t, c)` of an admissible
/// block, starting from `ω_ts` at the owner and dividing by `√(m+1)` per
/// level.
pub fn descendant_omegas(h: &Hierarchy, t: usize, c: usize, omega: f64) -> BTreeMap<PairKey, f64> {
    let factor = level_factor(h);
    let mut out = BTreeMap::new();
    let mut stack = vec![(t, c, omega)];
    while let Some((t, c, w)) = stack.pop() {
        out.insert((t, c), w);
        for &child in &h.tree.node(t).children {
            stack.push((child, h.dirchil(child, c), w / factor));
        }
    }
    out
}

/// Scaling used when compressing the basis weights.
#[derive(Clone, Copy, Debug)]
pub enum Weighting<'a> {
    /// Products are preserved to absolute accuracy `ε_w`.
    Unweighted,
    /// Products of block `b` are preserved to `ω_b ε_w` with
    /// `ω_b = ‖N_tc S R_sc*‖₂ / ‖N_tc‖₂`, `N` the norm estimates.
    BlockRelative(&'a WeightMap),
}

/// Compressed basis weights `R̂_sc = Q̃_sc* R_sc` for a matrix with a shared
/// row and column basis.
#[derive(Clone, Debug)]
pub struct CompressedWeights {
    pub r_hat: WeightMap,
    /// The isometries `Q̃_sc`, so that `R̃_sc = Q̃_sc R̂_sc`.
    pub q_tilde: WeightMap,
    pub eps: f64,
    /// Bytes the exact weights would have taken per level.
    pub full_level_bytes: Vec<usize>,
    /// Largest number of bytes of exact weights held at the same time.
    pub peak_full_bytes: usize,
    /// Singular values of every `W_sc`.
    pub spectra: BTreeMap<PairKey, Vec<f64>>,
}

impl CompressedWeights {
    pub fn bytes(&self) -> usize {
        weight_bytes(&self.r_hat)
    }

    pub fn full_bytes(&self) -> usize {
        self.full_level_bytes.iter().sum()
    }
}

/// One block product entering `W_sc` for cluster `s`: the block id, the
/// side on which `s` appears and the coupling matrix oriented so that the
/// product is `R_sc M*`.
pub fn weight_products(a: &DH2Matrix, s: usize, c: usize) -> Vec<(usize, Side, CMat)> {
    let blocks = &a.hierarchy.blocks;
    let mut out = Vec::new();
    // s as column cluster: R_sc S_ts*
    for &b in blocks.col_set(s, c) {
        out.push((b, Side::Col, a.couplings[b].clone()));
    }
    // s as row cluster: R_sc S_st, i.e. M = S_st*
    for &b in blocks.row_set(s, c) {
        out.push((b, Side::Row, a.couplings[b].adjoint()));
    }
    out
}

/// `ω_b` for the product of block `b` with the weight of the cluster on
/// `weight_side`: `‖N S R*‖₂ / ‖N‖₂` taken from the opposite cluster.
fn product_omega(a: &DH2Matrix, b: usize, weight_side: Side, r: &CMat, norms: &WeightMap) -> f64 {
    let block = a.hierarchy.blocks.admissible[b];
    let other = match weight_side {
        Side::Col => Side::Row,
        Side::Row => Side::Col,
    };
    let n = &norms[&(other.cluster(&block), block.direction)];
    let s = oriented_coupling(&a.couplings[b], other);
    floor_omega(spectral_norm(&(n * s * r.adjoint())) / floor_omega(spectral_norm(n)))
}

/// Compresses the basis weights so that every product `R_sc M*` with a
/// coupling matrix of a block containing `s` is kept to accuracy `ε_w`
/// (or `ω ε_w`). Both block orientations enter `W_sc`, so the result serves
/// row and column basis construction alike. Exact weights of children are
/// discarded once their parent has been processed.
pub fn approx_weights(a: &DH2Matrix, eps_w: f64, weighting: Weighting<'_>) -> Result<CompressedWeights> {
    if !a.shares_basis() {
        return Err(Error::InvalidParameter("compressed weights need a shared row and column basis".into()));
    }
    if !(eps_w >= 0.0) {
        return Err(Error::InvalidParameter("eps_w must be non-negative".into()));
    }
    let h = &*a.hierarchy;
    let mut r_hat = WeightMap::new();
    let mut q_tilde = WeightMap::new();
    let mut spectra = BTreeMap::new();
    let mut full_level_bytes = vec![0; h.tree.depth()];
    let peak = stream_weights(h, &a.row_basis, |t, c, r| {
        full_level_bytes[h.tree.node(t).level] += bytes(r);
        let products = weight_products(a, t, c);
        let k = r.ncols();
        let (q, sigma) = if products.is_empty() {
            (CMat::zeros(r.nrows(), 0), Vec::new())
        } else {
            let parts: Vec<CMat> = products
                .iter()
                .map(|(b, side, m)| {
                    let scale = match weighting {
                        Weighting::Unweighted => 1.0,
                        Weighting::BlockRelative(norms) => 1.0 / product_omega(a, *b, *side, r, norms),
                    };
                    (m * r.adjoint()) * num_complex::Complex64::from(scale)
                })
                .collect();
            // W* stacked; W = R [M_1* ... M_p*]
            let w = stack_rows(&parts, r.nrows()).adjoint();
            let svd = left_svd(&w);
            let keep = truncation_rank(&svd.sigma, eps_w);
            (svd.truncated_u(keep), svd.sigma)
        };
        r_hat.insert((t, c), if q.ncols() == 0 { CMat::zeros(0, k) } else { q.ad_mul(r) });
        q_tilde.insert((t, c), q);
        spectra.insert((t, c), sigma);
        Ok(())
    })?;
    Ok(CompressedWeights { r_hat, q_tilde, eps: eps_w, full_level_bytes, peak_full_bytes: peak, spectra })
}

/// Per-level weight storage as CSV with header
/// `level,direction_count,full_weight_bytes,compressed_weight_bytes,norm_estimate_bytes`.
pub fn weight_storage_csv(h: &Hierarchy, full: &[usize], compressed: &WeightMap, norms: Option<&WeightMap>) -> String {
    let compressed = level_bytes(h, compressed);
    let norms = norms.map(|n| level_bytes(h, n)).unwrap_or_else(|| vec![0; h.tree.depth()]);
    let mut out = String::from("level,direction_count,full_weight_bytes,compressed_weight_bytes,norm_estimate_bytes\n");
    for level in 0..h.tree.depth() {
        let _ = writeln!(
            out,
            "{level},{},{},{},{}",
            h.directions.level(level).len(),
            full.get(level).copied().unwrap_or(0),
            compressed[level],
            norms[level]
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dh2::{assemble_dh2, expand_basis};
    use crate::geometry::random_sphere_points;
    use crate::linalg::{singular_values, thin_qr};
    use crate::tree::Admissibility;
    use std::sync::Arc;

    fn matrix(n: usize, leaf: usize, kappa: f64, order: usize, seed: u64) -> DH2Matrix {
        let pts = random_sphere_points(n, seed).points;
        let h = Hierarchy::build(pts, leaf, Admissibility::new(kappa)).unwrap();
        assemble_dh2(Arc::new(h), order).unwrap()
    }

    fn same_spectrum(a: &[f64], b: &[f64], tol: f64) {
        let scale = a.first().copied().unwrap_or(0.0).max(1.0);
        for i in 0..a.len().max(b.len()) {
            let (x, y) = (a.get(i).copied().unwrap_or(0.0), b.get(i).copied().unwrap_or(0.0));
            assert!((x - y).abs() <= tol * scale, "{i}: {x} vs {y}");
        }
    }

    #[test]
    fn basis_weight_spectra_match_expanded_basis() {
        let a = matrix(300, 10, 4.0, 2, 1);
        let h = &*a.hierarchy;
        assert!(h.tree.depth() >= 3);
        let r = basis_weights(h, &a.row_basis).unwrap();
        for (t, c) in h.blocks.active_pairs() {
            let v = expand_basis(h, &a.row_basis, t, c).unwrap();
            let rr = &r[&(t, c)];
            assert_eq!(rr.ncols(), 8);
            assert!(rr.nrows() <= 8);
            same_spectrum(&singular_values(rr), &singular_values(&v), 1e-10);
        }
    }

    #[test]
    fn isometric_leaf_gives_unit_spectrum() {
        let a = matrix(200, 40, 0.0, 2, 2);
        let h = &*a.hierarchy;
        let mut basis = (*a.row_basis).clone();
        for v in basis.leaf.values_mut() {
            *v = thin_qr(v.clone()).0;
        }
        let r = basis_weights(h, &basis).unwrap();
        for (&(t, c), v) in &basis.leaf {
            let sigma = singular_values(&r[&(t, c)]);
            assert_eq!(sigma.len(), v.ncols());
            assert!(sigma.iter().all(|s| (s - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn norm_estimates_bound_block_norms() {
        let a = matrix(300, 10, 4.0, 3, 3);
        let h = &*a.hierarchy;
        let r = basis_weights(h, &a.row_basis).unwrap();
        let n1 = norm_estimates(h, &a.row_basis, 1).unwrap();
        let nk = norm_estimates(h, &a.row_basis, 27).unwrap();
        for (t, c) in h.blocks.active_pairs() {
            let v = expand_basis(h, &a.row_basis, t, c).unwrap();
            let norm_v = spectral_norm(&v);
            assert_eq!(n1[&(t, c)].nrows(), 1);
            assert!((spectral_norm(&n1[&(t, c)]) - norm_v).abs() <= 1e-10 * norm_v);
        }
        for (id, (b, s)) in h.blocks.admissible.iter().zip(&a.couplings).enumerate() {
            let exact = block_norm(b, s, Side::Row, &r, &r);
            let dense = spectral_norm(&a.admissible_block_dense(id).unwrap());
            assert!((exact - dense).abs() <= 1e-10 * dense);
            assert!(block_norm(b, s, Side::Row, &n1, &r) <= exact * (1.0 + 1e-12));
            assert!((block_norm(b, s, Side::Row, &nk, &r) - exact).abs() <= 1e-10 * exact);
        }
        assert!(norm_estimates(h, &a.row_basis, 0).is_err());
    }

    #[test]
    fn omega_recursion_and_geometric_sum() {
        let a = matrix(400, 8, 4.0, 2, 4);
        let h = &*a.hierarchy;
        assert_eq!(h.tree.max_children(), 2);
        let r = basis_weights(h, &a.row_basis).unwrap();
        let omegas = block_relative_omegas(&a, Side::Row, &r, &r);
        let mut checked = false;
        for (id, b) in h.blocks.admissible.iter().enumerate() {
            let norm = block_norm(b, &a.couplings[id], Side::Row, &r, &r);
            assert!((omegas[id] - norm / 3f64.sqrt()).abs() <= 1e-14 * norm);
            let desc = descendant_omegas(h, b.row, b.direction, omegas[id]);
            for (&(t, c), &w) in &desc {
                if let Some(p) = h.tree.node(t).parent {
                    if t != b.row {
                        let cp = desc.keys().find(|&&(pt, pc)| pt == p && h.dirchil(t, pc) == c).unwrap();
                        assert!((desc[cp] / 3f64.sqrt() - w).abs() <= 1e-15 * desc[cp]);
                    }
                }
            }
            let sum: f64 = desc.values().map(|w| w * w).sum();
            assert!(sum <= norm * norm * (1.0 + 1e-12));
            checked |= desc.len() > 3;
        }
        assert!(checked);
        assert_eq!(floor_omega(0.0), f64::MIN_POSITIVE);
    }

    fn product_residuals(a: &DH2Matrix, full: &WeightMap, cw: &CompressedWeights) -> Vec<(usize, Side, f64)> {
        let mut out = Vec::new();
        for (&(s, c), r) in full {
            let rhat = &cw.r_hat[&(s, c)];
            for (b, side, m) in weight_products(a, s, c) {
                // R̃ M* = Q̃ Q̃* R M*
                let exact = r * m.adjoint();
                let q = projector(r, rhat);
                out.push((b, side, spectral_norm(&(&exact - &q * &exact))));
            }
        }
        out
    }

    // Q̃ recovered from R̂ = Q̃* R by solving the least-squares problem
    // Q̃* = R̂ R⁺ on the range of R.
    fn projector(r: &CMat, rhat: &CMat) -> CMat {
        if rhat.nrows() == 0 {
            return CMat::zeros(r.nrows(), r.nrows());
        }
        let pinv = r.clone().pseudo_inverse(1e-13).unwrap();
        let qt = rhat * pinv;
        let (q, _) = thin_qr(qt.adjoint());
        &q * q.adjoint()
    }

    #[test]
    fn compressed_weights_keep_products() {
        let a = matrix(400, 12, 4.0, 3, 5);
        let h = &*a.hierarchy;
        let full = basis_weights(h, &a.row_basis).unwrap();
        let eps = 1e-4;
        let cw = approx_weights(&a, eps, Weighting::Unweighted).unwrap();
        assert_eq!(cw.full_bytes(), weight_bytes(&full));
        assert!(cw.peak_full_bytes < cw.full_bytes());
        for (b, _, res) in product_residuals(&a, &full, &cw) {
            assert!(res <= eps * (1.0 + 1e-8), "block {b}: {res}");
        }
        for (key, rhat) in &cw.r_hat {
            let r = &full[key];
            assert!(rhat.nrows() <= r.nrows());
            assert!(spectral_norm(rhat) <= spectral_norm(r) + 1e-12);
        }
    }

    #[test]
    fn weighted_compression_is_block_relative() {
        let a = matrix(400, 12, 4.0, 3, 6);
        let h = &*a.hierarchy;
        let full = basis_weights(h, &a.row_basis).unwrap();
        let norms = norm_estimates(h, &a.row_basis, 1).unwrap();
        let eps = 1e-3;
        let cw = approx_weights(&a, eps, Weighting::BlockRelative(&norms)).unwrap();
        for (&(s, c), r) in &full {
            let q = projector(r, &cw.r_hat[&(s, c)]);
            for (b, side, m) in weight_products(&a, s, c) {
                let omega = product_omega(&a, b, side, r, &norms);
                let exact = r * m.adjoint();
                let res = spectral_norm(&(&exact - &q * &exact));
                assert!(res <= omega * eps * (1.0 + 1e-8), "block {b}: {res} vs {}", omega * eps);
            }
        }
    }

    #[test]
    fn zero_tolerance_is_lossless_and_bytes_are_monotone() {
        let a = matrix(300, 12, 4.0, 2, 7);
        let h = &*a.hierarchy;
        let full = basis_weights(h, &a.row_basis).unwrap();
        let cw = approx_weights(&a, 0.0, Weighting::Unweighted).unwrap();
        for (b, _, res) in product_residuals(&a, &full, &cw) {
            assert!(res <= 1e-12, "block {b}: {res}");
        }
        for (key, sigma) in &cw.spectra {
            assert_eq!(cw.r_hat[key].nrows(), sigma.iter().filter(|&&s| s > 0.0).count());
        }
        let sizes: Vec<usize> = [1e-8, 1e-6, 1e-4, 1e-2].iter().map(|&e| approx_weights(&a, e, Weighting::Unweighted).unwrap().bytes()).collect();
        assert!(sizes.windows(2).all(|w| w[1] <= w[0]), "{sizes:?}");
        assert!(sizes[3] < sizes[0]);
    }

    #[test]
    fn unused_pairs_get_empty_weights() {
        let a = matrix(300, 12, 4.0, 2, 8);
        let h = &*a.hierarchy;
        let cw = approx_weights(&a, 1e-4, Weighting::Unweighted).unwrap();
        for (&(s, c), rhat) in &cw.r_hat {
            if h.blocks.col_set(s, c).is_empty() && h.blocks.row_set(s, c).is_empty() {
                assert_eq!(rhat.shape(), (0, 8));
            }
        }
    }

    #[test]
    fn storage_csv_has_one_row_per_level() {
        let a = matrix(300, 12, 4.0, 2, 9);
        let h = &*a.hierarchy;
        let norms = norm_estimates(h, &a.row_basis, 1).unwrap();
        let cw = approx_weights(&a, 1e-4, Weighting::Unweighted).unwrap();
        let csv = weight_storage_csv(h, &cw.full_level_bytes, &cw.r_hat, Some(&norms));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "level,direction_count,full_weight_bytes,compressed_weight_bytes,norm_estimate_bytes");
        assert_eq!(lines.len(), h.tree.depth() + 1);
        let total: usize = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, cw.bytes());
    }
}
