//! Dense complex linear algebra shared by the compression algorithms.
//!
//! Everything is thin: QR factors keep `min(rows, cols)` rows, and the SVD
//! helpers only ever return left singular vectors, since right singular
//! vectors never enter the basis construction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Bytes occupied by the entries of a complex matrix.
pub fn bytes(m: &CMat) -> usize {
    m.len() * std::mem::size_of::<Complex64>()
}

/// Thin Householder factorization `a = q r`, `q` isometric with
/// `min(rows, cols)` columns.
pub fn thin_qr(a: CMat) -> (CMat, CMat) {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return (CMat::zeros(rows, 0), CMat::zeros(0, cols));
    }
    let qr = a.qr();
    (qr.q(), qr.r())
}

/// Triangular factor of the thin Householder factorization.
pub fn thin_qr_r(a: CMat) -> CMat {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return CMat::zeros(rows.min(cols), cols);
    }
    a.qr().r()
}

/// Left singular vectors and singular values in descending order.
#[derive(Clone, Debug)]
pub struct LeftSvd {
    pub u: CMat,
    pub sigma: Vec<f64>,
}

impl LeftSvd {
    /// Keeps the leading `rank` columns of `u`.
    pub fn truncated_u(&self, rank: usize) -> CMat {
        self.u.columns(0, rank).into_owned()
    }
}

/// Left singular vectors of `a`. Wide matrices are first reduced to a square
/// factor with the same left singular vectors through a QR factorization of
/// the adjoint.
pub fn left_svd(a: &CMat) -> LeftSvd {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return LeftSvd {
            u: CMat::zeros(rows, 0),
            sigma: Vec::new(),
        };
    }
    let svd = if cols > rows {
        let r = thin_qr_r(a.adjoint());
        r.adjoint().svd(true, false)
    } else {
        a.clone().svd(true, false)
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u_all = svd.u.expect("left singular vectors requested");
    let u = CMat::from_fn(rows, order.len(), |i, j| u_all[(i, order[j])]);
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    LeftSvd { u, sigma }
}

/// Singular values in descending order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    // shrink to the small dimension first, the spectrum is unchanged
    let small = if rows > 2 * cols {
        thin_qr_r(a.clone())
    } else if cols > 2 * rows {
        thin_qr_r(a.adjoint())
    } else {
        a.clone()
    };
    let mut s: Vec<f64> = small.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn spectral_norm(a: &CMat) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Smallest rank `k` with `sigma[k] <= eps`, where `sigma` is sorted in
/// descending order and a rank equal to `sigma.len()` drops nothing.
pub fn truncation_rank(sigma: &[f64], eps: f64) -> usize {
    sigma.iter().take_while(|&&s| s > eps).count()
}

/// Stacks matrices with a common column count on top of each other.
pub fn stack_rows(blocks: &[CMat], cols: usize) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut offset = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.rows_mut(offset, b.nrows()).copy_from(b);
        offset += b.nrows();
    }
    out
}

/// Largest entry of `|q* q - I|`.
pub fn isometry_defect(q: &CMat) -> f64 {
    let g = q.adjoint() * q;
    let mut worst: f64 = 0.0;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

/// Gathers the submatrix `a[rows, cols]`.
pub fn submatrix(a: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

pub fn random_vector(n: usize, rng: &mut impl Rng) -> CVec {
    CVec::from_fn(n, |_, _| {
        Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
    })
}

/// Spectral norm of an operator given by its action and the action of its
/// adjoint, estimated by power iteration on `A* A`.
///
/// Stops once the estimate changes by less than `rel_tol` relative or after
/// `max_iter` steps. The estimate is a lower bound that converges from below.
pub fn power_norm<F, G>(n: usize, apply: F, apply_adjoint: G, max_iter: usize, rel_tol: f64, seed: u64) -> f64
where
    F: Fn(&CVec) -> CVec,
    G: Fn(&CVec) -> CVec,
{
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = random_vector(n, &mut rng);
    let nx = x.norm();
    x /= Complex64::from(nx);
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let y = apply(&x);
        let norm_y = y.norm();
        if norm_y == 0.0 {
            return estimate;
        }
        let z = apply_adjoint(&y);
        let norm_z = z.norm();
        let previous = estimate;
        estimate = norm_y;
        if norm_z == 0.0 {
            break;
        }
        x = z / Complex64::from(norm_z);
        if (estimate - previous).abs() <= rel_tol * estimate {
            break;
        }
    }
    estimate
}

/// Spectral norm of a dense matrix by power iteration.
pub fn dense_norm2(a: &CMat, seed: u64) -> f64 {
    power_norm(a.ncols(), |x| a * x, |y| a.adjoint() * y, 500, 1e-10, seed)
}
