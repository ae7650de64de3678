//! Points, axis-parallel boxes and sphere point clouds.

use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    /// Unit vector in the same direction, `None` for the zero vector.
    pub fn normalized(&self) -> Option<Point3> {
        let n = self.norm();
        (n > 0.0).then(|| *self * (1.0 / n))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn from_fn(mut f: impl FnMut(usize) -> f64) -> Point3 {
        Point3::new(f(0), f(1), f(2))
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Axis-parallel box `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3 {
    pub lower: Point3,
    pub upper: Point3,
}

impl Box3 {
    pub fn new(lower: Point3, upper: Point3) -> Result<Self> {
        if (0..3).any(|a| lower.coord(a) > upper.coord(a)) {
            return Err(Error::InvalidParameter(format!(
                "box lower corner {lower:?} exceeds upper corner {upper:?}"
            )));
        }
        Ok(Box3 { lower, upper })
    }

    /// Length of the diagonal.
    pub fn diam(&self) -> f64 {
        (self.upper - self.lower).norm()
    }

    /// Euclidean distance between the boxes, zero if they intersect.
    pub fn dist(&self, other: &Box3) -> f64 {
        Point3::from_fn(|a| {
            let gap_above = other.lower.coord(a) - self.upper.coord(a);
            let gap_below = self.lower.coord(a) - other.upper.coord(a);
            gap_above.max(gap_below).max(0.0)
        })
        .norm()
    }

    pub fn center(&self) -> Point3 {
        (self.lower + self.upper) * 0.5
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper.coord(axis) - self.lower.coord(axis)
    }

    pub fn longest_axis(&self) -> usize {
        let mut best = 0;
        for axis in 1..3 {
            if self.width(axis) > self.width(best) {
                best = axis;
            }
        }
        best
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|a| self.lower.coord(a) <= p.coord(a) && p.coord(a) <= self.upper.coord(a))
    }
}

/// Minimal box containing all points.
pub fn bounding_box<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Result<Box3> {
    let mut it = points.into_iter();
    let first = *it.next().ok_or(Error::EmptyPointSet)?;
    let (mut lower, mut upper) = (first, first);
    for p in it {
        lower = Point3::from_fn(|a| lower.coord(a).min(p.coord(a)));
        upper = Point3::from_fn(|a| upper.coord(a).max(p.coord(a)));
    }
    Ok(Box3 { lower, upper })
}

/// Points on the unit sphere together with the parameters that produced them.
#[derive(Clone, Debug)]
pub struct SpherePointSet {
    pub points: Vec<Point3>,
    pub subdivision: usize,
    pub seed: Option<u64>,
}

impl SpherePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Refines each face of the double pyramid `|x|+|y|+|z| = 1` into `m²`
/// triangles and projects the triangle centroids to the unit sphere,
/// giving `8 m²` points.
pub fn make_sphere_cloud(m: usize) -> Result<SpherePointSet> {
    if m == 0 {
        return Err(Error::InvalidParameter("sphere subdivision must be at least 1".into()));
    }
    let axes = [Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0), Point3::new(0.0, 0.0, 1.0)];
    let mut points = Vec::with_capacity(8 * m * m);
    for octant in 0..8 {
        let sign = |bit: usize| if octant & (1 << bit) == 0 { 1.0 } else { -1.0 };
        let a = axes[0] * sign(0);
        let b = axes[1] * sign(1);
        let c = axes[2] * sign(2);
        let h = 1.0 / m as f64;
        let vertex = |i: usize, j: usize| a + (b - a) * (i as f64 * h) + (c - a) * (j as f64 * h);
        let mut push = |p: Point3, q: Point3, r: Point3| {
            let centroid = (p + q + r) * (1.0 / 3.0);
            points.push(centroid.normalized().expect("centroid of a face triangle is nonzero"));
        };
        for i in 0..m {
            for j in 0..m - i {
                push(vertex(i, j), vertex(i + 1, j), vertex(i, j + 1));
                if i + j + 2 <= m {
                    push(vertex(i + 1, j), vertex(i + 1, j + 1), vertex(i, j + 1));
                }
            }
        }
    }
    Ok(SpherePointSet { points, subdivision: m, seed: None })
}

/// `n` independent uniformly distributed points on the unit sphere.
pub fn random_sphere_points(n: usize, seed: u64) -> SpherePointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| loop {
            let p = Point3::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0);
            let r = p.norm();
            if r > 1e-3 && r <= 1.0 {
                break p * (1.0 / r);
            }
        })
        .collect();
    SpherePointSet { points, subdivision: 0, seed: Some(seed) }
}

/// Writes one `x y z` triple per line.
pub fn write_xyz(mut out: impl Write, points: &[Point3]) -> Result<()> {
    for p in points {
        writeln!(out, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// Reads whitespace separated `x y z` triples, skipping blank lines and
/// lines starting with `#`.
pub fn read_xyz(input: impl BufRead) -> Result<Vec<Point3>> {
    let mut points = Vec::new();
    for (number, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values = trimmed
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: number + 1, message: e.to_string() })?;
        if values.len() != 3 {
            return Err(Error::Parse {
                line: number + 1,
                message: format!("expected 3 coordinates, found {}", values.len()),
            });
        }
        let p = Point3::new(values[0], values[1], values[2]);
        if !p.is_finite() {
            return Err(Error::Parse { line: number + 1, message: "non-finite coordinate".into() });
        }
        points.push(p);
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_cube(offset: f64) -> Box3 {
        Box3::new(Point3::new(offset, offset, offset), Point3::new(offset + 1.0, offset + 1.0, offset + 1.0)).unwrap()
    }

    #[test]
    fn sphere_cloud_sizes() {
        assert_eq!(make_sphere_cloud(16).unwrap().len(), 2048);
        assert_eq!(make_sphere_cloud(4).unwrap().len(), 128);
        assert!(make_sphere_cloud(0).is_err());
    }

    #[test]
    fn base_pyramid_has_one_point_per_octant() {
        let cloud = make_sphere_cloud(1).unwrap();
        assert_eq!(cloud.len(), 8);
        let mut octants: Vec<_> = cloud
            .points
            .iter()
            .map(|p| (p.x > 0.0, p.y > 0.0, p.z > 0.0))
            .collect();
        octants.sort();
        octants.dedup();
        assert_eq!(octants.len(), 8);
        let s = 1.0 / 3f64.sqrt();
        for p in &cloud.points {
            assert!((p.x.abs() - s).abs() < 1e-15);
        }
    }

    #[test]
    fn sphere_points_on_unit_sphere() {
        for m in [1, 4, 7] {
            for p in make_sphere_cloud(m).unwrap().points {
                assert!((p.norm() - 1.0).abs() < 1e-12);
            }
        }
        for p in random_sphere_points(100, 3).points {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_points_distinct() {
        let mut pts = make_sphere_cloud(6).unwrap().points;
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z)));
        assert!(pts.windows(2).all(|w| w[0].distance(&w[1]) > 1e-6));
    }

    #[test]
    fn bounding_box_examples() {
        let b = bounding_box(&[Point3::ORIGIN, Point3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(b.lower, Point3::ORIGIN);
        assert_eq!(b.upper, Point3::new(1.0, 2.0, 3.0));

        let p = Point3::new(0.5, -1.0, 2.0);
        let single = bounding_box(&[p]).unwrap();
        assert_eq!(single.diam(), 0.0);
        assert_eq!(single.lower, p);

        assert!(matches!(bounding_box(&[]), Err(Error::EmptyPointSet)));
    }

    #[test]
    fn bounding_box_is_minimal() {
        let pts = random_sphere_points(100, 11).points;
        let b = bounding_box(&pts).unwrap();
        assert!(pts.iter().all(|p| b.contains(p)));
        for axis in 0..3 {
            let mut lower = b.lower;
            let mut upper = b.upper;
            match axis {
                0 => {
                    lower.x += 1e-9;
                    upper.x -= 1e-9
                }
                1 => {
                    lower.y += 1e-9;
                    upper.y -= 1e-9
                }
                _ => {
                    lower.z += 1e-9;
                    upper.z -= 1e-9
                }
            }
            let shrunk_low = Box3 { lower, upper: b.upper };
            let shrunk_up = Box3 { lower: b.lower, upper };
            assert!(pts.iter().any(|p| !shrunk_low.contains(p)));
            assert!(pts.iter().any(|p| !shrunk_up.contains(p)));
        }
    }

    #[test]
    fn diam_and_dist() {
        let a = unit_cube(0.0);
        let b = unit_cube(3.0);
        assert!((a.dist(&b) - 2.0 * 3f64.sqrt()).abs() < 1e-15);
        assert!((b.dist(&a) - 2.0 * 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.dist(&a), 0.0);
        assert!((a.diam() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn xyz_round_trip_and_errors() {
        let pts = random_sphere_points(10, 5).points;
        let mut buf = Vec::new();
        write_xyz(&mut buf, &pts).unwrap();
        let back = read_xyz(buf.as_slice()).unwrap();
        assert_eq!(back, pts);
        assert!(read_xyz("1 2\n".as_bytes()).is_err());
        assert!(read_xyz("1 2 x\n".as_bytes()).is_err());
        assert_eq!(read_xyz("# header\n\n1 2 3\n".as_bytes()).unwrap().len(), 1);
    }

    fn arb_box() -> impl Strategy<Value = Box3> {
        (prop::array::uniform3(-5.0..5.0f64), prop::array::uniform3(0.0..3.0f64)).prop_map(|(l, w)| {
            let lower = Point3::new(l[0], l[1], l[2]);
            Box3 { lower, upper: lower + Point3::new(w[0], w[1], w[2]) }
        })
    }

    proptest! {
        #[test]
        fn box_distance_bounds_point_distance(a in arb_box(), b in arb_box(), s in prop::array::uniform6(0.0..1.0f64)) {
            let lerp = |bx: &Box3, t: [f64; 3]| Point3::from_fn(|k| bx.lower.coord(k) + t[k] * bx.width(k));
            let p = lerp(&a, [s[0], s[1], s[2]]);
            let q = lerp(&b, [s[3], s[4], s[5]]);
            prop_assert!(a.dist(&b) <= p.distance(&q) + 1e-12);
            prop_assert!(a.dist(&b) <= a.center().distance(&b.center()) + 1e-12);
            prop_assert!((a.dist(&b) - b.dist(&a)).abs() < 1e-15);
        }

        #[test]
        fn pairwise_distance_bounded_by_box_diam(seed in 0u64..1000, n in 1usize..40) {
            let pts = random_sphere_points(n, seed).points;
            let d = bounding_box(&pts).unwrap().diam();
            for p in &pts {
                for q in &pts {
                    prop_assert!(p.distance(q) <= d + 1e-12);
                }
            }
        }
    }
}
