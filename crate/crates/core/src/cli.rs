//! The `mrc-denoise` command line.
//!
//! Exit status: 0 on success, 2 for usage errors (bad flags, unreadable or
//! malformed files, invalid parameters), 3 for numeric failures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::adapt::{
    denoise_global, denoise_local, trace_csv, AdaptConfig, AdaptResult, GlobalConfig, GlobalSolver, LocalSolver,
    NoiseSpec,
};
use crate::calibrate::{calibrate_delta, verify_gumbel, Calibration, FamilySpec};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{self, PgmDepth, PgmMapping};
use crate::mrc::estimate_sigma;
use crate::noise_sim::{add_gaussian_noise, add_poisson_noise, render_phantom, PhantomSpec};
use crate::partition::WedgeDictionary;
use crate::solvers::SolverConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "mrc-denoise", version, about = "Multiresolution-criterion image denoising")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Denoise an image (PGM or CSV) and write the reconstruction, diffusivity, residuals and trace.
    Denoise(DenoiseArgs),
    /// Simulate the threshold parameter delta for white noise.
    Calibrate(CalibrateArgs),
    /// Compare the normalized dyadic scan maximum with the Gumbel law.
    VerifyGumbel(GumbelArgs),
    /// Render a phantom and add noise.
    Simulate(SimulateArgs),
    /// Extract one row of one or more images as CSV columns.
    Rowcut(RowcutArgs),
    /// Print the robust noise level estimate of an image.
    EstimateSigma(EstimateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Homdiff,
    Inhomdiff,
    TvGlobal,
    TvLocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Noise {
    Gaussian,
    Poisson,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("threshold").required(true).args(["delta", "calibration", "alpha"]))]
pub struct DenoiseArgs {
    /// Input image (.csv for floats, otherwise binary PGM).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Output directory (created if missing).
    #[arg(short, long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "inhomdiff")]
    pub method: Method,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub noise: Noise,
    /// Noise standard deviation; estimated from the data when omitted.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Threshold parameter.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Calibration file written by `calibrate`.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Calibrate on the fly at this level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Simulations for on-the-fly calibration.
    #[arg(long, default_value_t = 1000, requires = "alpha")]
    pub sims: usize,
    #[arg(long, default_value_t = 1)]
    pub min_side: usize,
    /// Reduce on whole squares only.
    #[arg(long)]
    pub no_wedges: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Starting diffusivity (default: grid side).
    #[arg(long)]
    pub a_init: Option<f64>,
    /// Reduction factor of the global schedule.
    #[arg(long, default_value_t = 0.8)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 0.9)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Relative residual tolerance of the linear solves.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 200_000)]
    pub max_sweeps: usize,
    /// TV smoothing parameter (default: 1e-3 times the data range).
    #[arg(long)]
    pub tv_beta: Option<f64>,
    /// Noise-free image; adds MSE figures to the summary.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(short, long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub sims: usize,
    #[arg(long, default_value_t = 1)]
    pub min_side: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct GumbelArgs {
    #[arg(short, long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: u32,
    #[arg(long, default_value_t = 1000)]
    pub sims: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the normalized maxima, one per line.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Grid side of the built-in phantom.
    #[arg(short, long, default_value_t = 256, conflicts_with = "phantom")]
    pub n: usize,
    /// Phantom description file.
    #[arg(long)]
    pub phantom: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub noise: Noise,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Intensity range the phantom is mapped to for Poisson noise.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [50.0, 100.0])]
    pub intensity: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct RowcutArgs {
    /// Row index, 0-based from the top.
    #[arg(long)]
    pub row: usize,
    /// Written to stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[arg(short, long)]
    pub input: PathBuf,
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Denoise(a) => cmd_denoise(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::VerifyGumbel(a) => cmd_verify_gumbel(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Rowcut(a) => cmd_rowcut(a),
        Command::EstimateSigma(a) => cmd_estimate_sigma(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.parse().map_err(|e: Error| Error::format(path, e.to_string()))
}

/// Threshold parameter and a description of where it came from.
fn resolve_delta(a: &DenoiseArgs, n: usize) -> Result<(f64, String)> {
    if let Some(d) = a.delta {
        return Ok((d, "given".into()));
    }
    if let Some(path) = &a.calibration {
        let cal = read_calibration(path)?;
        if cal.n != n {
            return Err(Error::invalid(format!(
                "calibration is for n = {}, image side is {n}",
                cal.n
            )));
        }
        if cal.family.min_side != a.min_side {
            return Err(Error::invalid(format!(
                "calibration uses min_side = {}, run uses {}",
                cal.family.min_side, a.min_side
            )));
        }
        return Ok((cal.delta, format!("calibration {}", path.display())));
    }
    let alpha = a.alpha.ok_or_else(|| Error::invalid("no threshold source"))?;
    let cal = calibrate_delta(n, FamilySpec::dyadic(a.min_side), alpha, a.sims, a.seed)?;
    Ok((
        cal.delta,
        format!("simulated alpha={alpha} sims={} seed={}", a.sims, a.seed),
    ))
}

fn noise_spec(noise: Noise, sigma: Option<f64>) -> Result<NoiseSpec> {
    match (noise, sigma) {
        (Noise::Poisson, Some(_)) => Err(Error::invalid("--sigma does not apply to Poisson noise")),
        (Noise::Poisson, None) => Ok(NoiseSpec::Poisson),
        (Noise::Gaussian, s) => Ok(NoiseSpec::Gaussian { sigma: s }),
    }
}

fn cmd_denoise(a: &DenoiseArgs) -> Result<()> {
    let input = io::read_image(&a.input)?;
    let y = &input.grid;
    let n = y.side()?;
    let (delta, delta_source) = resolve_delta(a, n)?;
    let noise = noise_spec(a.noise, a.sigma)?;
    let solver = SolverConfig {
        tol: a.tol,
        max_sweeps: a.max_sweeps,
        tv_beta: a.tv_beta,
        ..SolverConfig::default()
    };
    let result = match a.method {
        Method::Homdiff | Method::TvGlobal => {
            let cfg = GlobalConfig {
                a_init: a.a_init,
                gamma: a.gamma,
                delta,
                min_side: a.min_side,
                noise,
                solver,
                ..GlobalConfig::default()
            };
            let s = if a.method == Method::Homdiff {
                GlobalSolver::HomogeneousDiffusion
            } else {
                GlobalSolver::Tv
            };
            denoise_global(y, s, &cfg)?
        }
        Method::Inhomdiff | Method::TvLocal => {
            let cfg = AdaptConfig {
                a_init: a.a_init,
                lambda_min: a.lambda_min,
                lambda_max: a.lambda_max,
                delta,
                max_outer_iters: a.max_iters,
                use_wedges: !a.no_wedges,
                min_side: a.min_side,
                noise,
                wedges: WedgeDictionary::default(),
                solver,
                ..AdaptConfig::default()
            };
            let s = if a.method == Method::Inhomdiff {
                LocalSolver::InhomogeneousDiffusion
            } else {
                LocalSolver::Tv
            };
            denoise_local(y, s, &cfg)?
        }
    };
    let truth = match &a.truth {
        Some(p) => {
            let t = io::read_image(p)?.grid;
            y.ensure_same_shape(&t)?;
            Some(t)
        }
        None => None,
    };

    create_dir(&a.out_dir)?;
    let out = |name: &str| a.out_dir.join(name);
    io::write_csv(&out("denoised.csv"), &result.fhat)?;
    // a PGM input keeps its own sample scale so outputs compare sample for sample
    let image_mapping = match input.maxval {
        Some(m) => {
            let side = io::sidecar_path(&a.input);
            if side.exists() {
                let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
                text.parse::<PgmMapping>()
                    .map_err(|e| Error::format(&side, e.to_string()))?
            } else {
                PgmMapping::identity(m)
            }
        }
        None => PgmMapping::min_max(&result.fhat, PgmDepth::Sixteen),
    };
    io::write_pgm(&out("denoised.pgm"), &result.fhat, &image_mapping)?;
    io::write_csv(&out("diffusivity.csv"), result.a.grid())?;
    io::write_pgm_scaled(&out("diffusivity.pgm"), result.a.grid(), PgmDepth::Eight)?;
    io::write_csv(&out("residuals.csv"), &result.residuals)?;
    io::write_pgm_scaled(&out("residuals.pgm"), &result.residuals, PgmDepth::Eight)?;
    io::write_atomic(&out("trace.csv"), trace_csv(&result.trace).as_bytes())?;
    let summary = summary_text(a, &result, delta, &delta_source, y, truth.as_ref())?;
    io::write_atomic(&out("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn summary_text(
    a: &DenoiseArgs,
    r: &AdaptResult,
    delta: f64,
    delta_source: &str,
    y: &Grid,
    truth: Option<&Grid>,
) -> Result<String> {
    let mut s = String::new();
    let method = a
        .method
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    let sigma_source = match (a.noise, a.sigma) {
        (Noise::Poisson, _) => "poisson",
        (_, Some(_)) => "given",
        (_, None) => "estimated",
    };
    let _ = writeln!(s, "method = {method}");
    let _ = writeln!(s, "sigma = {:?}", r.sigma);
    let _ = writeln!(s, "sigma_source = {sigma_source}");
    let _ = writeln!(s, "delta = {delta:?}");
    let _ = writeln!(s, "delta_source = {delta_source}");
    let _ = writeln!(s, "threshold = {:?}", r.threshold);
    let _ = writeln!(s, "iterations = {}", r.iterations());
    let _ = writeln!(s, "termination = {:?}", r.termination);
    let _ = writeln!(s, "final_m_n = {:?}", r.final_m_n());
    let _ = writeln!(s, "a_min = {:?}", r.a.grid().min());
    let _ = writeln!(s, "a_max = {:?}", r.a.grid().max());
    if let Some(t) = truth {
        let before = y.mse(t)?;
        let after = r.fhat.mse(t)?;
        let _ = writeln!(s, "mse_input = {before:?}");
        let _ = writeln!(s, "mse_output = {after:?}");
        let _ = writeln!(s, "mse_reduction = {:?}", before - after);
    }
    Ok(s)
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let cal = calibrate_delta(a.n, FamilySpec::dyadic(a.min_side), a.alpha, a.sims, a.seed)?;
    io::write_atomic(&a.output, cal.to_string().as_bytes())?;
    println!("delta = {:?}", cal.delta);
    Ok(())
}

fn cmd_verify_gumbel(a: &GumbelArgs) -> Result<()> {
    let report = verify_gumbel(a.n, a.dim, a.sims, a.seed)?;
    io::write_atomic(&a.output, report.to_string().as_bytes())?;
    if let Some(path) = &a.samples {
        let mut text = String::new();
        for v in report.normalized() {
            let _ = writeln!(text, "{v:?}");
        }
        io::write_atomic(path, text.as_bytes())?;
    }
    print!("{report}");
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let spec = match &a.phantom {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<PhantomSpec>()
                .map_err(|e| Error::format(p, e.to_string()))?
        }
        None => PhantomSpec::standard(a.n),
    };
    let truth = render_phantom(&spec)?;
    let (truth, noisy) = match a.noise {
        Noise::Gaussian => {
            let y = add_gaussian_noise(&truth, a.sigma, a.seed)?;
            (truth, y)
        }
        Noise::Poisson => {
            let (lo, hi) = (a.intensity[0], a.intensity[1]);
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::invalid(format!("need 0 < LO <= HI, got [{lo}, {hi}]")));
            }
            let span = spec.hi - spec.lo;
            let scale = if span > 0.0 { (hi - lo) / span } else { 0.0 };
            let intensity = truth.map(|v| lo + (v - spec.lo) * scale)?;
            let y = add_poisson_noise(&intensity, a.seed)?;
            (intensity, y)
        }
    };
    create_dir(&a.out_dir)?;
    let out = |name: &str| a.out_dir.join(name);
    io::write_atomic(&out("phantom.txt"), spec.to_string().as_bytes())?;
    io::write_csv(&out("truth.csv"), &truth)?;
    io::write_csv(&out("noisy.csv"), &noisy)?;
    io::write_pgm_scaled(&out("truth.pgm"), &truth, PgmDepth::Sixteen)?;
    io::write_pgm_scaled(&out("noisy.pgm"), &noisy, PgmDepth::Sixteen)?;
    Ok(())
}

/// One column per image plus the column index, for the given row.
pub fn rowcut(images: &[(String, Grid)], row: usize) -> Result<String> {
    let cols = images.first().map_or(0, |(_, g)| g.cols());
    for (name, g) in images {
        if row >= g.rows() {
            return Err(Error::invalid(format!(
                "row {row} out of range for {name} with {} rows",
                g.rows()
            )));
        }
        if g.cols() != cols {
            return Err(Error::invalid(format!(
                "{name} has {} columns, expected {cols}",
                g.cols()
            )));
        }
    }
    let mut s = String::from("col");
    for (name, _) in images {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for j in 0..cols {
        let _ = write!(s, "{j}");
        for (_, g) in images {
            let _ = write!(s, ",{}", g[(row, j)]);
        }
        s.push('\n');
    }
    Ok(s)
}

fn cmd_rowcut(a: &RowcutArgs) -> Result<()> {
    let mut images = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        let name = p
            .file_stem()
            .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        images.push((name, io::read_image(p)?.grid));
    }
    let text = rowcut(&images, a.row)?;
    match &a.output {
        Some(path) => io::write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_estimate_sigma(a: &EstimateArgs) -> Result<()> {
    let y = io::read_image(&a.input)?.grid;
    println!("{:?}", estimate_sigma(&y)?);
    Ok(())
}
