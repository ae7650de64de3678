//! Helmholtz kernel evaluation and tensor Chebyshev interpolation.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::geometry::{Box3, Point3};
use crate::linalg::CMat;
use crate::{Error, Result};

/// Fundamental solution `g(x, y) = exp(iκ|x-y|) / (4π|x-y|)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HelmholtzKernel {
    pub kappa: f64,
}

impl HelmholtzKernel {
    pub fn new(kappa: f64) -> Self {
        HelmholtzKernel { kappa }
    }

    pub fn eval(&self, x: &Point3, y: &Point3) -> Result<Complex64> {
        self.eval_directional(x, y, &Point3::ORIGIN)
    }

    /// Modified kernel `g_c(x, y) = exp(iκ(|x-y| - <c, x-y>)) / (4π|x-y|)`;
    /// the plane wave in direction `c` has been divided out.
    pub fn eval_directional(&self, x: &Point3, y: &Point3, c: &Point3) -> Result<Complex64> {
        let z = *x - *y;
        let r = z.norm();
        if r == 0.0 {
            return Err(Error::SingularKernel);
        }
        Ok(Complex64::from_polar(1.0 / (4.0 * PI * r), self.kappa * (r - c.dot(&z))))
    }

    /// Kernel with the singular diagonal replaced by zero.
    pub fn eval_or_zero(&self, x: &Point3, y: &Point3) -> Complex64 {
        self.eval(x, y).unwrap_or_default()
    }

    /// Plane wave `exp(iκ<c, x>)`.
    pub fn plane_wave(&self, c: &Point3, x: &Point3) -> Complex64 {
        Complex64::from_polar(1.0, self.kappa * c.dot(x))
    }
}

/// Tensor Chebyshev interpolation of order `m` per axis on a box.
///
/// Interpolation points are numbered `ν = i₀ + m i₁ + m² i₂`. An axis of
/// zero width collapses all its nodes onto the single coordinate; the
/// Lagrange factor for that axis is then `1` for the first node and `0` for
/// the others.
#[derive(Clone, Debug)]
pub struct InterpRule {
    order: usize,
    nodes: [Vec<f64>; 3],
    degenerate: [bool; 3],
    weights: Vec<f64>,
}

/// Chebyshev points of the first kind `cos((2j+1)π / 2m)` on `[-1, 1]`.
pub fn chebyshev_nodes(m: usize) -> Vec<f64> {
    (0..m).map(|j| ((2 * j + 1) as f64 * PI / (2 * m) as f64).cos()).collect()
}

pub fn chebyshev_rule(bbox: &Box3, m: usize) -> Result<InterpRule> {
    if m == 0 {
        return Err(Error::InvalidParameter("interpolation order must be at least 1".into()));
    }
    let reference = chebyshev_nodes(m);
    let nodes = std::array::from_fn(|axis| {
        let (lo, hi) = (bbox.lower.coord(axis), bbox.upper.coord(axis));
        reference.iter().map(|&x| 0.5 * (lo + hi) + 0.5 * (hi - lo) * x).collect::<Vec<_>>()
    });
    let degenerate = std::array::from_fn(|axis| bbox.width(axis) <= 0.0);
    // barycentric weights for first-kind Chebyshev points, any common factor
    // cancels
    let weights = (0..m)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * ((2 * j + 1) as f64 * PI / (2 * m) as f64).sin()
        })
        .collect();
    Ok(InterpRule { order: m, nodes, degenerate, weights })
}

impl InterpRule {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of interpolation points `m³`.
    pub fn rank(&self) -> usize {
        self.order.pow(3)
    }

    pub fn point(&self, nu: usize) -> Point3 {
        let m = self.order;
        let (i0, i1, i2) = (nu % m, (nu / m) % m, nu / (m * m));
        Point3::new(self.nodes[0][i0], self.nodes[1][i1], self.nodes[2][i2])
    }

    pub fn points(&self) -> Vec<Point3> {
        (0..self.rank()).map(|nu| self.point(nu)).collect()
    }

    /// One-dimensional Lagrange polynomials of `axis` evaluated at `x`, in
    /// barycentric form.
    pub fn lagrange_axis(&self, axis: usize, x: f64) -> Vec<f64> {
        let m = self.order;
        let mut out = vec![0.0; m];
        if self.degenerate[axis] {
            out[0] = 1.0;
            return out;
        }
        let nodes = &self.nodes[axis];
        if let Some(hit) = nodes.iter().position(|&xi| xi == x) {
            out[hit] = 1.0;
            return out;
        }
        let mut denom = 0.0;
        for j in 0..m {
            let v = self.weights[j] / (x - nodes[j]);
            out[j] = v;
            denom += v;
        }
        for v in &mut out {
            *v /= denom;
        }
        out
    }

    /// All `m³` tensor Lagrange polynomials at `x`.
    pub fn lagrange(&self, x: &Point3) -> Vec<f64> {
        let m = self.order;
        let lx = self.lagrange_axis(0, x.x);
        let ly = self.lagrange_axis(1, x.y);
        let lz = self.lagrange_axis(2, x.z);
        let mut out = Vec::with_capacity(m * m * m);
        for c in &lz {
            for b in &ly {
                for a in &lx {
                    out.push(a * b * c);
                }
            }
        }
        out
    }
}

/// Leaf matrix `v_{iν} = exp(iκ<c, x_i>) ℓ_ν(x_i)` for the points `indices`.
pub fn leaf_matrix(points: &[Point3], indices: &[usize], rule: &InterpRule, kernel: &HelmholtzKernel, c: &Point3) -> CMat {
    let mut v = CMat::zeros(indices.len(), rule.rank());
    for (row, &i) in indices.iter().enumerate() {
        let phase = kernel.plane_wave(c, &points[i]);
        for (nu, l) in rule.lagrange(&points[i]).into_iter().enumerate() {
            v[(row, nu)] = phase * l;
        }
    }
    v
}

/// Transfer matrix `e_{ν'ν} = exp(iκ<c - c', ξ'_ν'>) ℓ_ν(ξ'_ν')` expressing the
/// parent basis (rule `parent`, direction `c`) in the child basis (rule
/// `child`, direction `c'`).
pub fn transfer_matrix(child: &InterpRule, child_dir: &Point3, parent: &InterpRule, parent_dir: &Point3, kernel: &HelmholtzKernel) -> CMat {
    let shift = *parent_dir - *child_dir;
    let mut e = CMat::zeros(child.rank(), parent.rank());
    for nu_child in 0..child.rank() {
        let xi = child.point(nu_child);
        let phase = kernel.plane_wave(&shift, &xi);
        for (nu, l) in parent.lagrange(&xi).into_iter().enumerate() {
            e[(nu_child, nu)] = phase * l;
        }
    }
    e
}

/// Coupling matrix `s_{νμ} = g_c(ξ_{τ,ν}, ξ_{σ,μ})`.
pub fn coupling_matrix(row: &InterpRule, col: &InterpRule, kernel: &HelmholtzKernel, c: &Point3) -> Result<CMat> {
    let xs = row.points();
    let ys = col.points();
    let mut s = CMat::zeros(xs.len(), ys.len());
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in ys.iter().enumerate() {
            s[(i, j)] = kernel.eval_directional(x, y, c)?;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_sphere_points;
    use crate::linalg::{CVec, ONE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box() -> Box3 {
        Box3::new(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0)).unwrap()
    }

    fn some_box(lo: [f64; 3], hi: [f64; 3]) -> Box3 {
        Box3::new(Point3::new(lo[0], lo[1], lo[2]), Point3::new(hi[0], hi[1], hi[2])).unwrap()
    }

    fn random_in(b: &Box3, rng: &mut impl Rng) -> Point3 {
        Point3::new(
            b.lower.x + rng.random::<f64>() * b.width(0),
            b.lower.y + rng.random::<f64>() * b.width(1),
            b.lower.z + rng.random::<f64>() * b.width(2),
        )
    }

    #[test]
    fn kernel_values() {
        let k0 = HelmholtzKernel::new(0.0);
        let x = Point3::new(1.0, 0.0, 0.0);
        let v = k0.eval(&x, &Point3::ORIGIN).unwrap();
        assert!((v - Complex64::new(1.0 / (4.0 * PI), 0.0)).norm() < 1e-16);

        let k4 = HelmholtzKernel::new(4.0);
        let v = k4.eval(&x, &Point3::ORIGIN).unwrap();
        let expected = Complex64::new(4f64.cos(), 4f64.sin()) / (4.0 * PI);
        assert!((v - expected).norm() < 1e-15);

        assert!(matches!(k4.eval(&x, &x), Err(Error::SingularKernel)));
        assert!(k4.eval_directional(&x, &x, &x).is_err());
    }

    #[test]
    fn kernel_symmetry_and_modulus() {
        let k = HelmholtzKernel::new(7.0);
        let pts = random_sphere_points(200, 3).points;
        let c = Point3::new(1.0, 2.0, -1.0).normalized().unwrap();
        for pair in pts.chunks(2) {
            let (x, y) = (pair[0], pair[1]);
            assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
            let modulus = 1.0 / (4.0 * PI * x.distance(&y));
            assert!((k.eval_directional(&x, &y, &c).unwrap().norm() - modulus).abs() < 1e-14 * modulus);
            assert!((k.eval(&x, &y).unwrap().norm() - modulus).abs() < 1e-14 * modulus);
        }
    }

    #[test]
    fn directional_kernel_identities() {
        let k = HelmholtzKernel::new(5.0);
        let x = Point3::new(0.3, -0.2, 0.9);
        let y = Point3::new(-0.5, 0.4, 0.1);
        assert_eq!(k.eval_directional(&x, &y, &Point3::ORIGIN).unwrap(), k.eval(&x, &y).unwrap());

        // unit separation parallel to c: phase cancels
        let c = Point3::new(0.0, 0.6, 0.8);
        let v = k.eval_directional(&(y + c), &y, &c).unwrap();
        assert!((v - Complex64::new(1.0 / (4.0 * PI), 0.0)).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts = random_sphere_points(90, 5).points;
        for triple in pts.chunks(3) {
            let c = triple[2];
            let (x, y) = (triple[0], triple[1]);
            let rebuilt = k.plane_wave(&c, &x) * k.eval_directional(&x, &y, &c).unwrap() * k.plane_wave(&c, &y).conj();
            assert!((rebuilt - k.eval(&x, &y).unwrap()).norm() < 1e-14);
            let _ = rng.random::<f64>();
        }
    }

    #[test]
    fn order_one_rule_is_center() {
        let b = some_box([0.0, 1.0, 2.0], [1.0, 3.0, 2.5]);
        let rule = chebyshev_rule(&b, 1).unwrap();
        assert_eq!(rule.rank(), 1);
        assert_eq!(rule.point(0), b.center());
        assert!(chebyshev_rule(&b, 0).is_err());
    }

    #[test]
    fn order_three_nodes() {
        let rule = chebyshev_rule(&unit_box(), 3).unwrap();
        let h = 3f64.sqrt() / 2.0;
        let expected = [h, 0.0, -h];
        for (got, want) in rule.nodes[0].iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn lagrange_cardinality_and_partition() {
        let b = some_box([0.1, -0.4, 2.0], [0.7, 0.5, 2.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in 1..=8 {
            let rule = chebyshev_rule(&b, m).unwrap();
            for mu in 0..rule.rank() {
                let l = rule.lagrange(&rule.point(mu));
                for (nu, v) in l.iter().enumerate() {
                    let want = if nu == mu { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-12);
                }
            }
            for _ in 0..20 {
                let x = random_in(&b, &mut rng);
                let sum: f64 = rule.lagrange(&x).iter().sum();
                assert!((sum - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn linear_functions_are_reproduced() {
        let b = some_box([0.0, 0.0, 0.0], [2.0, 1.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in 2..6 {
            let rule = chebyshev_rule(&b, m).unwrap();
            let values: Vec<f64> = rule.points().iter().map(|p| p.x).collect();
            for _ in 0..10 {
                let x = random_in(&b, &mut rng);
                let interp: f64 = rule.lagrange(&x).iter().zip(&values).map(|(l, v)| l * v).sum();
                assert!((interp - x.x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_axis_collapses() {
        let b = some_box([0.0, 1.0, 0.0], [1.0, 1.0, 1.0]);
        let rule = chebyshev_rule(&b, 3).unwrap();
        assert!(rule.points().iter().all(|p| p.y == 1.0));
        let x = Point3::new(0.3, 1.0, 0.6);
        let sum: f64 = rule.lagrange(&x).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leaf_matrix_rows() {
        let pts = random_sphere_points(30, 6).points;
        let idx: Vec<usize> = (0..30).collect();
        let b = crate::geometry::bounding_box(&pts).unwrap();
        let k = HelmholtzKernel::new(3.0);

        let constant = leaf_matrix(&pts, &idx, &chebyshev_rule(&b, 1).unwrap(), &HelmholtzKernel::new(0.0), &Point3::ORIGIN);
        assert!(constant.iter().all(|v| (*v - ONE).norm() < 1e-15));

        let c = Point3::new(0.0, 0.0, 1.0);
        let v = leaf_matrix(&pts, &idx, &chebyshev_rule(&b, 3).unwrap(), &k, &c);
        for (row, &i) in idx.iter().enumerate() {
            let sum: Complex64 = v.row(row).iter().sum();
            assert!((sum - k.plane_wave(&c, &pts[i])).norm() < 1e-10);
        }

        // trilinear polynomial reproduced with m = 2
        let rule = chebyshev_rule(&b, 2).unwrap();
        let p = |q: &Point3| 1.0 + 2.0 * q.x - q.y * q.z + 0.5 * q.x * q.y * q.z;
        let v = leaf_matrix(&pts, &idx, &rule, &HelmholtzKernel::new(0.0), &Point3::ORIGIN);
        let coeff = CVec::from_iterator(rule.rank(), rule.points().iter().map(|q| Complex64::from(p(q))));
        let got = v * coeff;
        for (row, &i) in idx.iter().enumerate() {
            assert!((got[row] - Complex64::from(p(&pts[i]))).norm() < 1e-12);
        }
    }

    #[test]
    fn transfer_identity_on_same_box() {
        let b = some_box([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        let rule = chebyshev_rule(&b, 3).unwrap();
        let c = Point3::new(0.0, 1.0, 0.0);
        let e = transfer_matrix(&rule, &c, &rule, &c, &HelmholtzKernel::new(5.0));
        assert!((e - CMat::identity(27, 27)).norm() < 1e-12);
    }

    #[test]
    fn transfer_exact_for_polynomials_without_oscillation() {
        let parent = some_box([0.0, 0.0, 0.0], [2.0, 1.0, 1.0]);
        let child = some_box([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        let k = HelmholtzKernel::new(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Point3> = (0..20).map(|_| random_in(&child, &mut rng)).collect();
        let idx: Vec<usize> = (0..pts.len()).collect();
        for m in 2..5 {
            let pr = chebyshev_rule(&parent, m).unwrap();
            let cr = chebyshev_rule(&child, m).unwrap();
            let v_parent = leaf_matrix(&pts, &idx, &pr, &k, &Point3::ORIGIN);
            let v_child = leaf_matrix(&pts, &idx, &cr, &k, &Point3::ORIGIN);
            let e = transfer_matrix(&cr, &Point3::ORIGIN, &pr, &Point3::ORIGIN, &k);
            assert!((v_parent - v_child * e).norm() < 1e-11);
        }
    }

    #[test]
    fn nested_expansion_converges() {
        let parent = some_box([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        let child = some_box([0.0, 0.0, 0.0], [0.5, 1.0, 1.0]);
        let k = HelmholtzKernel::new(4.0);
        let c = Point3::new(1.0, 0.0, 0.0);
        let c_child = Point3::new(1.0, 0.1, 0.0).normalized().unwrap();
        let y = Point3::new(-8.0, 0.5, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point3> = (0..40).map(|_| random_in(&child, &mut rng)).collect();
        let idx: Vec<usize> = (0..pts.len()).collect();
        let exact = CVec::from_iterator(pts.len(), pts.iter().map(|x| k.eval(x, &y).unwrap()));
        let errors: Vec<f64> = (2..=6)
            .map(|m| {
                let pr = chebyshev_rule(&parent, m).unwrap();
                let cr = chebyshev_rule(&child, m).unwrap();
                let coeff = CVec::from_iterator(pr.rank(), pr.points().iter().map(|xi| k.eval_directional(xi, &y, &c).unwrap() * k.plane_wave(&c, &y).conj()));
                let nested = leaf_matrix(&pts, &idx, &cr, &k, &c_child) * transfer_matrix(&cr, &c_child, &pr, &c, &k);
                (nested * coeff - &exact).norm() / exact.norm()
            })
            .collect();
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
        assert!(errors[4] < 1e-4, "{errors:?}");
    }

    #[test]
    fn coupling_matrix_values() {
        let a = some_box([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        let b = some_box([3.0, 3.0, 3.0], [4.0, 4.0, 4.0]);
        let k = HelmholtzKernel::new(4.0);
        let c = (a.center() - b.center()).normalized().unwrap();
        let s = coupling_matrix(&chebyshev_rule(&a, 1).unwrap(), &chebyshev_rule(&b, 1).unwrap(), &k, &c).unwrap();
        assert_eq!(s.shape(), (1, 1));
        assert!((s[(0, 0)] - k.eval_directional(&a.center(), &b.center(), &c).unwrap()).norm() < 1e-16);

        let s = coupling_matrix(&chebyshev_rule(&a, 4).unwrap(), &chebyshev_rule(&b, 4).unwrap(), &k, &c).unwrap();
        let bound = 1.0 / (4.0 * PI * a.dist(&b));
        assert!(s.iter().all(|v| v.norm().is_finite() && v.norm() <= bound * (1.0 + 1e-12)));

        assert!(coupling_matrix(&chebyshev_rule(&a, 2).unwrap(), &chebyshev_rule(&a, 2).unwrap(), &k, &c).is_err());
    }

    #[test]
    fn blockwise_interpolation_converges() {
        let a = some_box([0.0, 0.0, 0.0], [0.5, 0.5, 0.5]);
        let b = some_box([2.0, 0.2, 0.1], [2.5, 0.7, 0.6]);
        let k = HelmholtzKernel::new(4.0);
        let c = (a.center() - b.center()).normalized().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let xs: Vec<Point3> = (0..25).map(|_| random_in(&a, &mut rng)).collect();
        let ys: Vec<Point3> = (0..25).map(|_| random_in(&b, &mut rng)).collect();
        let idx: Vec<usize> = (0..25).collect();
        let g = CMat::from_fn(25, 25, |i, j| k.eval(&xs[i], &ys[j]).unwrap());
        let errors: Vec<f64> = (1..=5)
            .map(|m| {
                let (ra, rb) = (chebyshev_rule(&a, m).unwrap(), chebyshev_rule(&b, m).unwrap());
                let va = leaf_matrix(&xs, &idx, &ra, &k, &c);
                let vb = leaf_matrix(&ys, &idx, &rb, &k, &c);
                let s = coupling_matrix(&ra, &rb, &k, &c).unwrap();
                (&g - va * s * vb.adjoint()).norm() / g.norm()
            })
            .collect();
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
        assert!(errors[4] < 1e-4);
    }
}
