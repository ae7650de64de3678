//! Experiment driver: builds a point cloud, assembles the directional
//! interpolation matrix, recompresses it and reports errors and storage as
//! CSV rows.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use dh2::dh2::{assemble_dh2, DH2Matrix};
use dh2::geometry::{make_sphere_cloud, random_sphere_points, Point3};
use dh2::kernel::HelmholtzKernel;
use dh2::linalg::{power_norm, CVec};
use dh2::recompress::{recompress, ErrorMode, RecompressOptions, TruncationControl, WeightMode, VERIFY_LIMIT};
use dh2::tree::{Admissibility, Hierarchy};
use num_complex::Complex64;

/// Point count the growing wave number is referred to.
pub const GROWING_REFERENCE_N: usize = 2048;

pub const CSV_HEADER: &str = "n,kappa,order,leaf_size,eps,eps_w,weights,error_mode,symmetric,\
admissible_blocks,inadmissible_blocks,max_rank,error_method,interp_rel_error,recomp_rel_error,\
leaf_bytes,transfer_bytes,coupling_bytes,nearfield_bytes,recomp_leaf_bytes,recomp_transfer_bytes,\
recomp_coupling_bytes,full_weight_bytes,weight_bytes,norm_estimate_bytes,\
time_geometry_s,time_tree_s,time_assemble_s,time_recompress_s,time_verify_s";

/// Number of leading CSV columns that do not depend on wall-clock time.
pub const DETERMINISTIC_COLUMNS: usize = 25;

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dh2::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DriverError>;

#[derive(Clone, Debug, PartialEq)]
pub enum PointSource {
    /// `8 m²` projected cube-surface points.
    Mesh(usize),
    /// Uniformly random points on the unit sphere.
    Random(usize),
    /// Explicit points, e.g. read from an xyz file.
    Given(Vec<Point3>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightChoice {
    Exact,
    Compressed,
}

impl WeightChoice {
    fn name(self) -> &'static str {
        match self {
            WeightChoice::Exact => "exact",
            WeightChoice::Compressed => "compressed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub points: PointSource,
    pub kappa: f64,
    /// Scale `kappa` by `√(n / GROWING_REFERENCE_N)`.
    pub kappa_growing: bool,
    pub order: usize,
    pub eta: [f64; 3],
    pub leaf_size: usize,
    pub eps: f64,
    pub eps_w: f64,
    pub k_norm: usize,
    pub weights: WeightChoice,
    pub error_mode: ErrorMode,
    pub symmetric: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            points: PointSource::Mesh(16),
            kappa: 4.0,
            kappa_growing: false,
            order: 3,
            eta: [1.0, 1.0, 1.0],
            leaf_size: 32,
            eps: 1e-4,
            eps_w: 1e-5,
            k_norm: 1,
            weights: WeightChoice::Exact,
            error_mode: ErrorMode::BlockRelative,
            symmetric: false,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DriverError::Config(msg.to_string()));
        if self.order < 1 {
            return bad("order must be at least 1");
        }
        if !(self.eps > 0.0) || !(self.eps_w > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.leaf_size < 1 {
            return bad("leaf size must be at least 1");
        }
        if self.k_norm < 1 {
            return bad("knorm must be at least 1");
        }
        match &self.points {
            PointSource::Mesh(0) | PointSource::Random(0) => return bad("point count must be positive"),
            PointSource::Given(p) if p.is_empty() => return bad("point set is empty"),
            _ => {}
        }
        self.admissibility(1).validate()?;
        Ok(())
    }

    pub fn make_points(&self) -> Result<Vec<Point3>> {
        Ok(match &self.points {
            PointSource::Mesh(m) => make_sphere_cloud(*m)?.points,
            PointSource::Random(n) => random_sphere_points(*n, self.seed).points,
            PointSource::Given(p) => p.clone(),
        })
    }

    pub fn effective_kappa(&self, n: usize) -> f64 {
        if self.kappa_growing {
            self.kappa * (n as f64 / GROWING_REFERENCE_N as f64).sqrt()
        } else {
            self.kappa
        }
    }

    pub fn admissibility(&self, n: usize) -> Admissibility {
        Admissibility { kappa: self.effective_kappa(n), eta1: self.eta[0], eta2: self.eta[1], eta3: self.eta[2] }
    }

    pub fn recompress_options(&self) -> Result<RecompressOptions> {
        let ctrl = TruncationControl::new(self.eps, self.error_mode)?;
        let weights = match self.weights {
            WeightChoice::Exact => WeightMode::Exact,
            WeightChoice::Compressed => WeightMode::Compressed { eps_w: self.eps_w, k_norm: self.k_norm },
        };
        Ok(RecompressOptions { ctrl, weights, symmetric: self.symmetric })
    }
}

/// How the relative errors were measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ErrorMethod {
    /// Power iteration against the assembled dense kernel matrix.
    Dense,
    /// Power iteration with kernel matvecs evaluated on the fly.
    Sampled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub geometry: f64,
    pub tree: f64,
    pub assemble: f64,
    pub recompress: f64,
    pub verify: f64,
}

/// One CSV row of [`run_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub n: usize,
    pub kappa: f64,
    pub order: usize,
    pub leaf_size: usize,
    pub eps: f64,
    pub eps_w: Option<f64>,
    pub weights: WeightChoice,
    pub error_mode: ErrorMode,
    pub symmetric: bool,
    pub admissible_blocks: usize,
    pub inadmissible_blocks: usize,
    pub max_rank: usize,
    pub error_method: ErrorMethod,
    pub interp_rel_error: f64,
    pub recomp_rel_error: f64,
    pub leaf_bytes: usize,
    pub transfer_bytes: usize,
    pub coupling_bytes: usize,
    pub nearfield_bytes: usize,
    pub recomp_leaf_bytes: usize,
    pub recomp_transfer_bytes: usize,
    pub recomp_coupling_bytes: usize,
    pub full_weight_bytes: usize,
    pub weight_bytes: usize,
    pub norm_estimate_bytes: usize,
    pub timings: Timings,
}

impl RunRow {
    pub fn original_bytes(&self) -> usize {
        self.leaf_bytes + self.transfer_bytes + self.coupling_bytes
    }

    pub fn recompressed_bytes(&self) -> usize {
        self.recomp_leaf_bytes + self.recomp_transfer_bytes + self.recomp_coupling_bytes
    }

    pub fn to_csv(&self) -> String {
        let t = &self.timings;
        format!(
            "{},{},{},{},{:e},{},{},{},{},{},{},{},{},{:e},{:e},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.n,
            self.kappa,
            self.order,
            self.leaf_size,
            self.eps,
            self.eps_w.map(|e| format!("{e:e}")).unwrap_or_default(),
            self.weights.name(),
            match self.error_mode {
                ErrorMode::Absolute => "abs",
                ErrorMode::BlockRelative => "blockrel",
            },
            self.symmetric,
            self.admissible_blocks,
            self.inadmissible_blocks,
            self.max_rank,
            match self.error_method {
                ErrorMethod::Dense => "dense",
                ErrorMethod::Sampled => "sampled",
            },
            self.interp_rel_error,
            self.recomp_rel_error,
            self.leaf_bytes,
            self.transfer_bytes,
            self.coupling_bytes,
            self.nearfield_bytes,
            self.recomp_leaf_bytes,
            self.recomp_transfer_bytes,
            self.recomp_coupling_bytes,
            self.full_weight_bytes,
            self.weight_bytes,
            self.norm_estimate_bytes,
            t.geometry,
            t.tree,
            t.assemble,
            t.recompress,
            t.verify,
        )
    }
}

/// Drops the timing columns of a CSV line.
pub fn deterministic_part(line: &str) -> String {
    line.split(',').take(DETERMINISTIC_COLUMNS).collect::<Vec<_>>().join(",")
}

/// `y = G x` with the kernel evaluated on the fly, zero diagonal.
pub fn kernel_matvec(points: &[Point3], kappa: f64, x: &CVec) -> CVec {
    let kernel = HelmholtzKernel { kappa };
    CVec::from_fn(points.len(), |i, _| {
        points.iter().zip(x.iter()).map(|(y, &xj)| kernel.eval_or_zero(&points[i], y) * xj).sum::<Complex64>()
    })
}

fn apply(a: &DH2Matrix, x: &CVec, adjoint: bool) -> CVec {
    if adjoint { a.matvec_adjoint(x) } else { a.matvec(x) }.expect("vector length matches the matrix")
}

/// Relative spectral errors `‖A - G‖₂ / ‖G‖₂` against the assembled dense
/// kernel matrix.
pub fn dense_relative_errors(points: &[Point3], kappa: f64, approximations: &[&DH2Matrix], seed: u64) -> Result<Vec<f64>> {
    let n = points.len();
    let g = dh2::dh2::dense_kernel_matrix(points, kappa)?;
    let norm = power_norm(n, |x| &g * x, |y| g.ad_mul(y), 100, 1e-6, seed);
    Ok(approximations
        .iter()
        .map(|a| power_norm(n, |x| apply(a, x, false) - &g * x, |y| apply(a, y, true) - g.ad_mul(y), 100, 1e-6, seed + 1) / norm)
        .collect())
}

/// Like [`dense_relative_errors`] but with kernel matvecs evaluated on the
/// fly and fewer power iterations.
pub fn sampled_relative_errors(points: &[Point3], kappa: f64, approximations: &[&DH2Matrix], seed: u64) -> Vec<f64> {
    let n = points.len();
    // The kernel is complex symmetric, so G* y = conj(G conj(y)).
    let g = |x: &CVec| kernel_matvec(points, kappa, x);
    let gh = |y: &CVec| kernel_matvec(points, kappa, &y.conjugate()).conjugate();
    let norm = power_norm(n, g, gh, 20, 1e-4, seed);
    approximations
        .iter()
        .map(|a| power_norm(n, |x| apply(a, x, false) - g(x), |y| apply(a, y, true) - gh(y), 20, 1e-4, seed + 1) / norm)
        .collect()
}

/// Dense errors up to `VERIFY_LIMIT` points, sampled ones beyond.
pub fn relative_errors(points: &[Point3], kappa: f64, approximations: &[&DH2Matrix], seed: u64) -> Result<(Vec<f64>, ErrorMethod)> {
    if points.len() <= VERIFY_LIMIT {
        Ok((dense_relative_errors(points, kappa, approximations, seed)?, ErrorMethod::Dense))
    } else {
        Ok((sampled_relative_errors(points, kappa, approximations, seed), ErrorMethod::Sampled))
    }
}

/// Intermediate products of one run, kept for further checks.
pub struct Experiment {
    pub row: RunRow,
    pub original: DH2Matrix,
    pub recompressed: dh2::recompress::Recompressed,
}

pub fn run_experiment_full(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let clock = Instant::now();
    let points = cfg.make_points()?;
    let n = points.len();
    let geometry = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let hierarchy = Arc::new(Hierarchy::build(points, cfg.leaf_size, cfg.admissibility(n))?);
    let tree = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let original = assemble_dh2(hierarchy.clone(), cfg.order)?;
    let assemble = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let recompressed = recompress(&original, &cfg.recompress_options()?)?;
    let recompress_time = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let kappa = cfg.effective_kappa(n);
    let (errors, error_method) = relative_errors(&hierarchy.points, kappa, &[&original, &recompressed.matrix], cfg.seed)?;
    let verify = clock.elapsed().as_secs_f64();

    let before = original.storage_report();
    let after = recompressed.matrix.storage_report();
    let max_rank = recompressed.row.basis.ranks.values().chain(recompressed.col.basis.ranks.values()).copied().max().unwrap_or(0);
    let row = RunRow {
        n,
        kappa,
        order: cfg.order,
        leaf_size: cfg.leaf_size,
        eps: cfg.eps,
        eps_w: (cfg.weights == WeightChoice::Compressed).then_some(cfg.eps_w),
        weights: cfg.weights,
        error_mode: cfg.error_mode,
        symmetric: cfg.symmetric,
        admissible_blocks: hierarchy.blocks.admissible.len(),
        inadmissible_blocks: hierarchy.blocks.inadmissible.len(),
        max_rank,
        error_method,
        interp_rel_error: errors[0],
        recomp_rel_error: errors[1],
        leaf_bytes: before.leaf,
        transfer_bytes: before.transfer,
        coupling_bytes: before.coupling,
        nearfield_bytes: before.nearfield,
        recomp_leaf_bytes: after.leaf,
        recomp_transfer_bytes: after.transfer,
        recomp_coupling_bytes: after.coupling,
        full_weight_bytes: recompressed.full_weight_bytes,
        weight_bytes: recompressed.weight_bytes,
        norm_estimate_bytes: recompressed.norm_estimate_bytes,
        timings: Timings { geometry, tree, assemble, recompress: recompress_time, verify },
    };
    Ok(Experiment { row, original, recompressed })
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunRow> {
    Ok(run_experiment_full(cfg)?.row)
}

/// Runs `base` for every combination of orders and weight tolerances.
pub fn run_sweep(base: &RunConfig, orders: &[usize], eps_weights: &[f64]) -> Result<Vec<RunRow>> {
    let eps_weights: &[f64] = if base.weights == WeightChoice::Exact { &eps_weights[..eps_weights.len().min(1)] } else { eps_weights };
    let mut rows = Vec::new();
    for &order in orders {
        for &eps_w in eps_weights {
            rows.push(run_experiment(&RunConfig { order, eps_w, ..base.clone() })?);
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[RunRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for row in rows {
        let _ = writeln!(out, "{}", row.to_csv());
    }
    out
}

pub const COMPARE_HEADER: &str = "quantity,a,b,b_minus_a";

/// Side-by-side comparison of two runs on the same geometry.
pub fn compare_modes(a: &RunConfig, b: &RunConfig) -> Result<String> {
    if a.points != b.points || a.make_points()? != b.make_points()? {
        return Err(DriverError::Config("compared runs must use the same geometry".into()));
    }
    let (ra, rb) = (run_experiment(a)?, run_experiment(b)?);
    Ok(compare_rows(&ra, &rb))
}

pub fn compare_rows(a: &RunRow, b: &RunRow) -> String {
    let mut out = format!("{COMPARE_HEADER}\n");
    let quantities: [(&str, fn(&RunRow) -> f64); 10] = [
        ("kappa", |r| r.kappa),
        ("admissible_blocks", |r| r.admissible_blocks as f64),
        ("max_rank", |r| r.max_rank as f64),
        ("interp_rel_error", |r| r.interp_rel_error),
        ("recomp_rel_error", |r| r.recomp_rel_error),
        ("original_bytes", |r| r.original_bytes() as f64),
        ("recompressed_bytes", |r| r.recompressed_bytes() as f64),
        ("full_weight_bytes", |r| r.full_weight_bytes as f64),
        ("weight_bytes", |r| r.weight_bytes as f64),
        ("norm_estimate_bytes", |r| r.norm_estimate_bytes as f64),
    ];
    for (name, get) in quantities {
        let (x, y) = (get(a), get(b));
        let _ = writeln!(out, "{name},{x:e},{y:e},{:e}", y - x);
    }
    out
}
