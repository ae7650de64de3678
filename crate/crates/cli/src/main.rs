use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dh2::geometry::{read_xyz, write_xyz};
use dh2::recompress::ErrorMode;
use dh2_cli::{compare_rows, run_experiment, run_sweep, to_csv, DriverError, PointSource, RunConfig, WeightChoice};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Weights {
    Exact,
    Compressed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Abs,
    Blockrel,
}

/// Recompress directional H² approximations of the Helmholtz kernel on a
/// sphere and report errors and storage as CSV.
#[derive(Debug, Parser)]
#[command(name = "dh2", version)]
struct Args {
    /// Mesh subdivision; the cloud has 8·m² points.
    #[arg(long, default_value_t = 16, conflicts_with_all = ["n", "points"])]
    mesh_m: usize,
    /// Use n random points on the sphere instead of the mesh.
    #[arg(long)]
    n: Option<usize>,
    /// Read points from an xyz file instead.
    #[arg(long, conflicts_with = "n")]
    points: Option<PathBuf>,
    /// Write the point cloud used to an xyz file.
    #[arg(long)]
    save_points: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    kappa: f64,
    /// Scale kappa with sqrt(n / 2048).
    #[arg(long)]
    kappa_growing: bool,
    /// Interpolation orders, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    order: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    eta1: f64,
    #[arg(long, default_value_t = 1.0)]
    eta2: f64,
    #[arg(long, default_value_t = 1.0)]
    eta3: f64,
    #[arg(long, default_value_t = 32)]
    leafsize: usize,
    /// Truncation tolerance.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Weight compression tolerances, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1e-5")]
    eps_weights: Vec<f64>,
    /// Rows of the norm estimates.
    #[arg(long, default_value_t = 1)]
    knorm: usize,
    #[arg(long, value_enum, default_value = "exact")]
    weights: Weights,
    #[arg(long, value_enum, default_value = "blockrel")]
    error_mode: Mode,
    /// Build one basis for rows and columns.
    #[arg(long)]
    symmetric_weights: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also run the other weight mode for the first order and tolerance and
    /// write a comparison CSV here.
    #[arg(long)]
    compare_out: Option<PathBuf>,
}

fn config(args: &Args) -> Result<RunConfig, DriverError> {
    let points = match (&args.points, args.n) {
        (Some(path), _) => PointSource::Given(read_xyz(BufReader::new(File::open(path)?))?),
        (None, Some(n)) => PointSource::Random(n),
        (None, None) => PointSource::Mesh(args.mesh_m),
    };
    if args.order.is_empty() || args.eps_weights.is_empty() {
        return Err(DriverError::Config("order and eps-weights lists must not be empty".into()));
    }
    let cfg = RunConfig {
        points,
        kappa: args.kappa,
        kappa_growing: args.kappa_growing,
        order: args.order[0],
        eta: [args.eta1, args.eta2, args.eta3],
        leaf_size: args.leafsize,
        eps: args.eps,
        eps_w: args.eps_weights[0],
        k_norm: args.knorm,
        weights: match args.weights {
            Weights::Exact => WeightChoice::Exact,
            Weights::Compressed => WeightChoice::Compressed,
        },
        error_mode: match args.error_mode {
            Mode::Abs => ErrorMode::Absolute,
            Mode::Blockrel => ErrorMode::BlockRelative,
        },
        symmetric: args.symmetric_weights,
        seed: args.seed,
    };
    for &order in &args.order {
        RunConfig { order, ..cfg.clone() }.validate()?;
    }
    for &eps_w in &args.eps_weights {
        RunConfig { eps_w, ..cfg.clone() }.validate()?;
    }
    Ok(cfg)
}

fn write_output(path: Option<&PathBuf>, text: &str) -> Result<(), DriverError> {
    match path {
        Some(path) => File::create(path)?.write_all(text.as_bytes())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(args: &Args) -> Result<(), DriverError> {
    let cfg = config(args)?;
    if let Some(path) = &args.save_points {
        write_xyz(File::create(path)?, &cfg.make_points()?)?;
    }
    let rows = run_sweep(&cfg, &args.order, &args.eps_weights)?;
    write_output(args.out.as_ref(), &to_csv(&rows))?;
    if let Some(path) = &args.compare_out {
        let other = RunConfig {
            weights: match cfg.weights {
                WeightChoice::Exact => WeightChoice::Compressed,
                WeightChoice::Compressed => WeightChoice::Exact,
            },
            ..cfg.clone()
        };
        write_output(Some(path), &compare_rows(&rows[0], &run_experiment(&other)?))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ DriverError::Config(_)) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
