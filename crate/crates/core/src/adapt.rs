//! Data-driven choice of the diffusivity, globally or per pixel.
//!
//! Both strategies start from heavy smoothing and reduce the diffusivity
//! until the residuals pass the multiresolution criterion. The local variant
//! reduces it only on the squares (or wedges) where the criterion fails,
//! smallest scales first.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mrc::{self, estimate_sigma, log_n2, normalize_poisson, ResidualSums};
use crate::partition::{wedges_from_lines, LineCut, PartitionFamily, WedgeDictionary};
use crate::solvers::{solve_inhomogeneous_diffusion_from, solve_tv_traced, DiffusivityField, SolverConfig};

/// How residuals are normalized before the scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseSpec {
    /// Gaussian noise; `None` estimates sigma from the data.
    Gaussian { sigma: Option<f64> },
    /// Poisson counts; residuals are divided by `sqrt(fhat)` every iteration.
    Poisson,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Gaussian { sigma: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocalSolver {
    InhomogeneousDiffusion,
    Tv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlobalSolver {
    HomogeneousDiffusion,
    Tv,
}

#[derive(Clone, Debug)]
pub struct AdaptConfig {
    /// Starting diffusivity; `None` uses the grid side.
    pub a_init: Option<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Diffusivities below this are set to zero and frozen; `None` uses `1e-8 * a_init`.
    pub a_floor: Option<f64>,
    pub delta: f64,
    pub max_outer_iters: usize,
    pub use_wedges: bool,
    pub min_side: usize,
    pub noise: NoiseSpec,
    pub wedges: WedgeDictionary,
    pub solver: SolverConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            a_init: None,
            lambda_min: 0.5,
            lambda_max: 0.9,
            a_floor: None,
            delta: 2.0,
            max_outer_iters: 1000,
            use_wedges: true,
            min_side: 1,
            noise: NoiseSpec::default(),
            wedges: WedgeDictionary::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn with_delta(delta: f64) -> Self {
        AdaptConfig {
            delta,
            ..AdaptConfig::default()
        }
    }

    fn resolved(&self, n: usize) -> Result<(f64, f64)> {
        let a_init = self.a_init.unwrap_or(n as f64);
        let a_floor = self.a_floor.unwrap_or(1e-8 * a_init);
        if !(a_init > a_floor && a_floor > 0.0 && a_init.is_finite()) {
            return Err(Error::invalid(format!(
                "need a_init > a_floor > 0, got a_init = {a_init}, a_floor = {a_floor}"
            )));
        }
        if !(0.0 < self.lambda_min && self.lambda_min <= self.lambda_max && self.lambda_max < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < lambda_min <= lambda_max < 1, got [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be positive, got {}", self.delta)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("max_outer_iters must be positive"));
        }
        Ok((a_init, a_floor))
    }
}

/// One pass of the adaptation loop.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub violations: usize,
    /// Squares on which the diffusivity was reduced whole.
    pub reduced_squares: usize,
    /// Squares on which a wedge was reduced instead.
    pub reduced_wedges: usize,
    pub a_min: f64,
    pub a_median: f64,
    pub a_max: f64,
    /// Scan statistic of the (normalized) residuals.
    pub m_n: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "iteration,violations,reduced_squares,reduced_wedges,a_min,a_median,a_max,m_n";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:?},{:?},{:?},{:?}",
            self.iteration,
            self.violations,
            self.reduced_squares,
            self.reduced_wedges,
            self.a_min,
            self.a_median,
            self.a_max,
            self.m_n
        )
    }
}

/// Trace as CSV with a header line.
pub fn trace_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::from(IterationRecord::CSV_HEADER);
    out.push('\n');
    for rec in trace {
        let _ = writeln!(out, "{}", rec.csv_line());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// The last scan found no violations.
    Clean,
    /// `max_outer_iters` ran out; the last estimate still violates.
    MaxIterations,
    /// Even the smallest global diffusivity violated; the data itself is returned.
    Interpolant,
}

#[derive(Clone, Debug)]
pub struct AdaptResult {
    pub fhat: Grid,
    pub a: DiffusivityField,
    pub trace: Vec<IterationRecord>,
    /// Noise level used for the threshold (1 for Poisson).
    pub sigma: f64,
    pub threshold: f64,
    /// Residuals of `fhat` after noise normalization.
    pub residuals: Grid,
    pub termination: Termination,
}

impl AdaptResult {
    pub fn is_clean(&self) -> bool {
        self.termination != Termination::MaxIterations
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn final_m_n(&self) -> f64 {
        self.trace.last().map_or(0.0, |r| r.m_n)
    }
}

struct Criterion {
    family: PartitionFamily,
    noise: NoiseSpec,
    sigma: f64,
    bound: f64,
    norm_mn: f64,
}

impl Criterion {
    fn new(y: &Grid, min_side: usize, noise: NoiseSpec, delta: f64) -> Result<Self> {
        let n = y.side()?;
        if n < 2 {
            return Err(Error::invalid("adaptation needs n >= 2"));
        }
        let sigma = match noise {
            NoiseSpec::Gaussian { sigma: Some(s) } => {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::invalid(format!("sigma must be positive, got {s}")));
                }
                s
            }
            // a zero estimate (noise-free data) makes every nonzero residual a violation
            NoiseSpec::Gaussian { sigma: None } => estimate_sigma(y)?,
            NoiseSpec::Poisson => 1.0,
        };
        Ok(Criterion {
            family: PartitionFamily::dyadic(n, min_side)?,
            noise,
            sigma,
            bound: sigma * (delta * log_n2(n)).sqrt(),
            norm_mn: (2.0 * log_n2(n)).sqrt(),
        })
    }

    fn residuals(&self, y: &Grid, fhat: &Grid) -> Result<Grid> {
        match self.noise {
            NoiseSpec::Gaussian { .. } => y.zip_map(fhat, |a, b| a - b),
            NoiseSpec::Poisson => Ok(normalize_poisson(y, fhat)?.grid),
        }
    }
}

fn a_summary(a: &Grid) -> (f64, f64, f64) {
    let mut v = a.as_slice().to_vec();
    (a.min(), mrc::median(&mut v), a.max())
}

/// Finds the largest global diffusivity `a_init * gamma^k` whose
/// reconstruction passes the criterion.
#[derive(Clone, Debug)]
pub struct GlobalConfig {
    pub a_init: Option<f64>,
    pub gamma: f64,
    pub a_floor: Option<f64>,
    pub delta: f64,
    pub min_side: usize,
    pub noise: NoiseSpec,
    pub solver: SolverConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            a_init: None,
            gamma: 0.8,
            a_floor: None,
            delta: 2.0,
            min_side: 1,
            noise: NoiseSpec::default(),
            solver: SolverConfig::default(),
        }
    }
}

pub fn denoise_global(y: &Grid, solver: GlobalSolver, cfg: &GlobalConfig) -> Result<AdaptResult> {
    let n = y.side()?;
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1), got {}", cfg.gamma)));
    }
    if !(cfg.delta > 0.0) {
        return Err(Error::invalid(format!("delta must be positive, got {}", cfg.delta)));
    }
    let a_init = cfg.a_init.unwrap_or(n as f64);
    let a_floor = cfg.a_floor.unwrap_or(1e-8 * a_init);
    if !(a_init > a_floor && a_floor > 0.0) {
        return Err(Error::invalid("need a_init > a_floor > 0"));
    }
    let crit = Criterion::new(y, cfg.min_side, cfg.noise, cfg.delta)?;
    let mut trace = Vec::new();
    let mut a = a_init;
    let mut previous: Option<Grid> = None;
    while a >= a_floor {
        let field = DiffusivityField::constant(n, n, a)?;
        let fhat = match solver {
            GlobalSolver::HomogeneousDiffusion => {
                solve_inhomogeneous_diffusion_from(y, &field, &cfg.solver, previous.as_ref())?
            }
            GlobalSolver::Tv => solve_tv_traced(y, &field, &cfg.solver, previous.as_ref())?.0,
        };
        let residuals = crit.residuals(y, &fhat)?;
        let sums = ResidualSums::new(&residuals);
        let violations = mrc::scan_sums(&sums, &crit.family, crit.bound).len();
        trace.push(IterationRecord {
            iteration: trace.len() + 1,
            violations,
            reduced_squares: 0,
            reduced_wedges: 0,
            a_min: a,
            a_median: a,
            a_max: a,
            m_n: mrc::max_abs_from_sums(&sums, &crit.family) / crit.norm_mn,
        });
        if violations == 0 {
            return Ok(AdaptResult {
                fhat,
                a: field,
                trace,
                sigma: crit.sigma,
                threshold: crit.bound,
                residuals,
                termination: Termination::Clean,
            });
        }
        previous = Some(fhat);
        a *= cfg.gamma;
    }
    // the data interpolates itself: all residuals vanish
    Ok(AdaptResult {
        fhat: y.clone(),
        a: DiffusivityField::constant(n, n, 0.0)?,
        trace,
        sigma: crit.sigma,
        threshold: crit.bound,
        residuals: Grid::zeros(n, n)?,
        termination: Termination::Interpolant,
    })
}

/// For each square, whether some strict dyadic subsquare violates.
fn violating_below(family: &PartitionFamily, violating: &[bool]) -> Vec<bool> {
    // smallest scales come first, so children are settled before parents
    let mut below = vec![false; family.len()];
    for sq in family.squares() {
        if let Some(children) = family.children(sq.id) {
            below[sq.id] = children.iter().any(|&c| violating[c] || below[c]);
        }
    }
    below
}

/// Locally adaptive reconstruction.
///
/// Each iteration solves with the current diffusivity field, scans the
/// residuals over all dyadic squares and, for every violating square without
/// a violating dyadic subsquare, multiplies the diffusivity by
/// `clamp(threshold / |omega|, lambda_min, lambda_max)` on that square, or on
/// its worst wedge when some wedge of it also violates. The first estimate
/// whose scan is clean is returned.
pub fn denoise_local(y: &Grid, solver: LocalSolver, cfg: &AdaptConfig) -> Result<AdaptResult> {
    let n = y.side()?;
    let (a_init, a_floor) = cfg.resolved(n)?;
    let crit = Criterion::new(y, cfg.min_side, cfg.noise, cfg.delta)?;
    let family = &crit.family;

    let mut lines: HashMap<usize, Vec<Arc<LineCut>>> = HashMap::new();
    if cfg.use_wedges {
        for level in family.min_level().max(1)..=family.max_level() {
            let side = 1usize << level;
            lines.insert(side, cfg.wedges.lines_for_side(side));
        }
    }

    let mut a = DiffusivityField::constant(n, n, a_init)?;
    let mut frozen = vec![false; n * n];
    let mut fhat: Option<Grid> = None;
    let mut trace = Vec::new();

    for iteration in 1..=cfg.max_outer_iters {
        let current = match solver {
            LocalSolver::InhomogeneousDiffusion => {
                solve_inhomogeneous_diffusion_from(y, &a, &cfg.solver, fhat.as_ref())?
            }
            LocalSolver::Tv => {
                // zero (frozen) weights pin the data; keep the TV weight admissible
                let weights = DiffusivityField::new(a.grid().map(|v| v.max(a_floor))?)?;
                solve_tv_traced(y, &weights, &cfg.solver, fhat.as_ref())?.0
            }
        };
        let residuals = crit.residuals(y, &current)?;
        let sums = ResidualSums::new(&residuals);
        let coeffs = mrc::square_coefficients(&sums, family);
        let violating: Vec<bool> = coeffs.iter().map(|w| w.abs() > crit.bound).collect();
        let violations = violating.iter().filter(|&&v| v).count();
        let m_n = coeffs.iter().fold(0.0f64, |m, w| m.max(w.abs())) / crit.norm_mn;
        let (a_min, a_median, a_max) = a_summary(a.grid());
        let mut record = IterationRecord {
            iteration,
            violations,
            reduced_squares: 0,
            reduced_wedges: 0,
            a_min,
            a_median,
            a_max,
            m_n,
        };

        if violations == 0 {
            trace.push(record);
            return Ok(AdaptResult {
                fhat: current,
                a,
                trace,
                sigma: crit.sigma,
                threshold: crit.bound,
                residuals,
                termination: Termination::Clean,
            });
        }

        let below = violating_below(family, &violating);

        let mut reductions: Vec<(Vec<(usize, usize)>, f64)> = Vec::new();
        for sq in family.squares() {
            if !violating[sq.id] || below[sq.id] {
                continue;
            }
            let mut chosen = None;
            if let Some(side_lines) = lines.get(&sq.side()) {
                let mut best: Option<(f64, usize)> = None;
                let wedges = wedges_from_lines(sq, side_lines);
                for w in &wedges {
                    let omega = sums.wedge_coefficient(w);
                    // strict comparison keeps the lowest id on ties
                    if omega.abs() > crit.bound && best.is_none_or(|(b, _)| omega.abs() > b) {
                        best = Some((omega.abs(), w.id));
                    }
                }
                if let Some((omega, id)) = best {
                    chosen = Some((wedges[id].pixels().collect(), omega));
                }
            }
            match chosen {
                Some(region) => {
                    record.reduced_wedges += 1;
                    reductions.push(region);
                }
                None => {
                    record.reduced_squares += 1;
                    let r = sq.rect();
                    let pixels = (r.top..=r.bottom)
                        .flat_map(|i| (r.left..=r.right).map(move |j| (i, j)))
                        .collect();
                    reductions.push((pixels, coeffs[sq.id].abs()));
                }
            }
        }

        let values = a.values_mut();
        for (pixels, omega) in reductions {
            let lambda = (crit.bound / omega).clamp(cfg.lambda_min, cfg.lambda_max);
            for (i, j) in pixels {
                let p = i * n + j;
                if frozen[p] {
                    continue;
                }
                values[p] *= lambda;
                if values[p] < a_floor {
                    values[p] = 0.0;
                    frozen[p] = true;
                }
            }
        }
        trace.push(record);
        fhat = Some(current);
    }

    let fhat = fhat.expect("at least one iteration ran");
    let residuals = crit.residuals(y, &fhat)?;
    Ok(AdaptResult {
        fhat,
        a,
        trace,
        sigma: crit.sigma,
        threshold: crit.bound,
        residuals,
        termination: Termination::MaxIterations,
    })
}
