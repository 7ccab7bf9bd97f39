//! Reconstructions for a given (global or per-pixel) regularization parameter.
//!
//! Diffusion solves `f - a * lap(f) = y` pointwise, where `lap` is the
//! five-point Laplacian with reflecting boundaries: a missing neighbour is
//! dropped from the stencil and the centre weight shrinks with it. The
//! system is strictly diagonally dominant for `a >= 0`, so lexicographic
//! Gauss-Seidel converges.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Nonnegative per-pixel diffusivity.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusivityField(Grid);

impl DiffusivityField {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some(k) = grid.as_slice().iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(format!(
                "diffusivity must be nonnegative, got {} at ({}, {})",
                grid.as_slice()[k],
                k / grid.cols(),
                k % grid.cols()
            )));
        }
        Ok(DiffusivityField(grid))
    }

    pub fn constant(rows: usize, cols: usize, a: f64) -> Result<Self> {
        DiffusivityField::new(Grid::filled(rows, cols, a)?)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Stop when `||y - A f|| <= tol * ||y||`.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Smoothing of the TV term; `None` picks `1e-3 * (max y - min y)`.
    pub tv_beta: Option<f64>,
    pub tv_outer_iters: usize,
    /// Gauss-Seidel sweeps per lagged-diffusivity step. The inner system is
    /// only a majorizer, so it is solved inexactly.
    pub tv_inner_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_sweeps: 200_000,
            tv_beta: None,
            tv_outer_iters: 50,
            tv_inner_sweeps: 200,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::invalid(format!(
                "solver tol must lie in (0, 1), got {}",
                self.tol
            )));
        }
        if self.max_sweeps == 0 || self.tv_outer_iters == 0 || self.tv_inner_sweeps == 0 {
            return Err(Error::invalid("solver iteration limits must be positive"));
        }
        if let Some(beta) = self.tv_beta {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::invalid(format!("tv_beta must be positive, got {beta}")));
            }
        }
        Ok(())
    }
}

/// A sparse system `diag_p f_p - sum_q w_pq f_q = y_p` on the grid graph,
/// with `w` stored per horizontal and vertical edge.
struct EdgeSystem {
    rows: usize,
    cols: usize,
    // scale of pixel p applied to all of its edges
    scale: Vec<f64>,
    // weight of edge (i, j)-(i, j+1), rows x (cols - 1)
    horizontal: Vec<f64>,
    // weight of edge (i, j)-(i+1, j), (rows - 1) x cols
    vertical: Vec<f64>,
}

impl EdgeSystem {
    fn diffusion(a: &Grid) -> Self {
        let (rows, cols) = a.shape();
        EdgeSystem {
            rows,
            cols,
            scale: a.as_slice().to_vec(),
            horizontal: vec![1.0; rows * cols.saturating_sub(1)],
            vertical: vec![1.0; rows.saturating_sub(1) * cols],
        }
    }

    /// Neighbour weights `(w_up, w_down, w_left, w_right)` of pixel `(i, j)`,
    /// zero where the neighbour is missing.
    #[inline]
    fn weights(&self, i: usize, j: usize) -> [f64; 4] {
        let c = self.cols;
        [
            if i > 0 { self.vertical[(i - 1) * c + j] } else { 0.0 },
            if i + 1 < self.rows {
                self.vertical[i * c + j]
            } else {
                0.0
            },
            if j > 0 {
                self.horizontal[i * (c - 1) + j - 1]
            } else {
                0.0
            },
            if j + 1 < c {
                self.horizontal[i * (c - 1) + j]
            } else {
                0.0
            },
        ]
    }

    #[inline]
    fn neighbours(f: &[f64], cols: usize, i: usize, j: usize, w: &[f64; 4]) -> f64 {
        let p = i * cols + j;
        let mut s = 0.0;
        if w[0] != 0.0 {
            s += w[0] * f[p - cols];
        }
        if w[1] != 0.0 {
            s += w[1] * f[p + cols];
        }
        if w[2] != 0.0 {
            s += w[2] * f[p - 1];
        }
        if w[3] != 0.0 {
            s += w[3] * f[p + 1];
        }
        s
    }

    /// `A f` for row `p`: `(1 + s_p sum w) f_p - s_p sum w f_q`.
    fn apply_row(&self, f: &[f64], i: usize, j: usize) -> f64 {
        let p = i * self.cols + j;
        let w = self.weights(i, j);
        let s = self.scale[p];
        let deg: f64 = w.iter().sum();
        (1.0 + s * deg) * f[p] - s * Self::neighbours(f, self.cols, i, j, &w)
    }

    fn residual_norm(&self, f: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let r = y[i * self.cols + j] - self.apply_row(f, i, j);
                acc += r * r;
            }
        }
        acc.sqrt()
    }

    fn sweep(&self, f: &mut [f64], y: &[f64]) {
        let c = self.cols;
        if self.rows < 3 || c < 3 {
            self.sweep_rows(f, y, 0, self.rows);
            return;
        }
        self.sweep_rows(f, y, 0, 1);
        for i in 1..self.rows - 1 {
            self.sweep_border(f, y, i, 0);
            let hrow = &self.horizontal[i * (c - 1)..(i + 1) * (c - 1)];
            let up = &self.vertical[(i - 1) * c..i * c];
            let down = &self.vertical[i * c..(i + 1) * c];
            for j in 1..c - 1 {
                let p = i * c + j;
                let s = self.scale[p];
                if s == 0.0 {
                    f[p] = y[p];
                    continue;
                }
                let (wu, wd, wl, wr) = (up[j], down[j], hrow[j - 1], hrow[j]);
                let nb = wu * f[p - c] + wd * f[p + c] + wl * f[p - 1] + wr * f[p + 1];
                f[p] = (y[p] + s * nb) / (1.0 + s * (wu + wd + wl + wr));
            }
            self.sweep_border(f, y, i, c - 1);
        }
        self.sweep_rows(f, y, self.rows - 1, self.rows);
    }

    /// Gauss-Seidel update of one pixel through the general stencil.
    #[inline]
    fn sweep_border(&self, f: &mut [f64], y: &[f64], i: usize, j: usize) {
        let c = self.cols;
        let p = i * c + j;
        let s = self.scale[p];
        if s == 0.0 {
            f[p] = y[p];
            return;
        }
        let w = self.weights(i, j);
        let deg: f64 = w.iter().sum();
        f[p] = (y[p] + s * Self::neighbours(f, c, i, j, &w)) / (1.0 + s * deg);
    }

    fn sweep_rows(&self, f: &mut [f64], y: &[f64], from: usize, to: usize) {
        for i in from..to {
            for j in 0..self.cols {
                self.sweep_border(f, y, i, j);
            }
        }
    }

    /// Gauss-Seidel from `f`, in place, until the relative residual reaches
    /// `tol` or `cap` sweeps ran. Returns the sweeps done and the final
    /// relative residual.
    fn iterate(&self, f: &mut [f64], y: &[f64], tol: f64, cap: usize) -> (usize, f64) {
        const CHECK_EVERY: usize = 4;
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if ynorm > 0.0 { ynorm } else { 1.0 };
        let mut res = self.residual_norm(f, y) / scale;
        let mut sweeps = 0;
        while res > tol && sweeps < cap && res.is_finite() {
            self.sweep(f, y);
            sweeps += 1;
            if sweeps % CHECK_EVERY == 0 || sweeps == cap {
                res = self.residual_norm(f, y) / scale;
            }
        }
        (sweeps, res)
    }

    fn solve(&self, f: &mut [f64], y: &[f64], cfg: &SolverConfig) -> Result<usize> {
        let (sweeps, residual) = self.iterate(f, y, cfg.tol, cfg.max_sweeps);
        if residual <= cfg.tol {
            Ok(sweeps)
        } else {
            Err(Error::NotConverged { sweeps, residual })
        }
    }
}

/// `f = L_a y`: the one-step inhomogeneous diffusion of `y` with diffusivity `a`.
pub fn solve_inhomogeneous_diffusion(y: &Grid, a: &DiffusivityField, cfg: &SolverConfig) -> Result<Grid> {
    solve_inhomogeneous_diffusion_from(y, a, cfg, None)
}

/// As [`solve_inhomogeneous_diffusion`], starting Gauss-Seidel from `initial`
/// (defaults to `y`).
pub fn solve_inhomogeneous_diffusion_from(
    y: &Grid,
    a: &DiffusivityField,
    cfg: &SolverConfig,
    initial: Option<&Grid>,
) -> Result<Grid> {
    cfg.validate()?;
    y.ensure_same_shape(a.grid())?;
    let mut f = match initial {
        Some(g) => {
            g.ensure_same_shape(y)?;
            g.clone()
        }
        None => y.clone(),
    };
    let system = EdgeSystem::diffusion(a.grid());
    system.solve(f.as_mut_slice(), y.as_slice(), cfg)?;
    Grid::from_vec(y.rows(), y.cols(), f.into_vec())
}

/// Diffusion with one global diffusivity.
pub fn solve_homogeneous_diffusion(y: &Grid, a: f64, cfg: &SolverConfig) -> Result<Grid> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("diffusivity must be nonnegative, got {a}")));
    }
    solve_inhomogeneous_diffusion(y, &DiffusivityField::constant(y.rows(), y.cols(), a)?, cfg)
}

/// Default TV smoothing scale for data `y`.
pub fn default_tv_beta(y: &Grid) -> f64 {
    let range = y.max() - y.min();
    if range > 0.0 {
        1e-3 * range
    } else {
        1e-3
    }
}

/// `sum ((g - y) / a)^2 + sum sqrt(|grad g|^2 + beta^2)` with forward differences.
pub fn tv_objective(g: &Grid, y: &Grid, a: &DiffusivityField, beta: f64) -> Result<f64> {
    g.ensure_same_shape(y)?;
    g.ensure_same_shape(a.grid())?;
    let (rows, cols) = g.shape();
    let gs = g.as_slice();
    let mut total = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let p = i * cols + j;
            let d = (gs[p] - y.as_slice()[p]) / a.grid().as_slice()[p];
            total += d * d + grad_magnitude(gs, rows, cols, i, j, beta);
        }
    }
    Ok(total)
}

#[inline]
fn grad_magnitude(g: &[f64], rows: usize, cols: usize, i: usize, j: usize, beta: f64) -> f64 {
    let p = i * cols + j;
    let dy = if i + 1 < rows { g[p + cols] - g[p] } else { 0.0 };
    let dx = if j + 1 < cols { g[p + 1] - g[p] } else { 0.0 };
    (dx * dx + dy * dy + beta * beta).sqrt()
}

/// Per-iteration record of the TV fixed point.
#[derive(Clone, Debug, PartialEq)]
pub struct TvTrace {
    /// Objective at the start and after each outer iteration.
    pub objective: Vec<f64>,
    pub beta: f64,
}

/// Smoothed TV reconstruction with pixelwise weight `a`.
pub fn solve_tv(y: &Grid, a: &DiffusivityField, cfg: &SolverConfig) -> Result<Grid> {
    solve_tv_traced(y, a, cfg, None).map(|(g, _)| g)
}

/// Lagged-diffusivity iteration for the smoothed TV problem.
///
/// Each outer step freezes `w_p = 1 / (2 sqrt(|grad g_p|^2 + beta^2))` at the
/// current iterate and runs Gauss-Seidel, starting from that iterate, on the
/// quadratic `sum ((g - y)/a)^2 + sum_p w_p |grad g_p|^2`. The quadratic
/// majorizes the objective and touches it at the current iterate, and every
/// Gauss-Seidel update minimizes it in one coordinate, so the objective never
/// increases.
pub fn solve_tv_traced(
    y: &Grid,
    a: &DiffusivityField,
    cfg: &SolverConfig,
    initial: Option<&Grid>,
) -> Result<(Grid, TvTrace)> {
    cfg.validate()?;
    y.ensure_same_shape(a.grid())?;
    let floor = a.grid().min();
    if !(floor > 0.0) {
        return Err(Error::invalid(format!(
            "TV weights must be positive, got minimum {floor}"
        )));
    }
    let beta = cfg.tv_beta.unwrap_or_else(|| default_tv_beta(y));
    let (rows, cols) = y.shape();
    let mut g = match initial {
        Some(g0) => {
            g0.ensure_same_shape(y)?;
            g0.clone()
        }
        None => y.clone(),
    };
    let a2: Vec<f64> = a.grid().as_slice().iter().map(|v| v * v).collect();
    let mut objective = vec![tv_objective(&g, y, a, beta)?];
    for _ in 0..cfg.tv_outer_iters {
        let gs = g.as_slice();
        let lagged: Vec<f64> = (0..rows * cols)
            .map(|p| 0.5 / grad_magnitude(gs, rows, cols, p / cols, p % cols, beta))
            .collect();
        // the difference anchored at p carries p's lagged weight
        let horizontal = (0..rows * cols.saturating_sub(1))
            .map(|e| lagged[(e / (cols - 1)) * cols + e % (cols - 1)])
            .collect();
        let vertical = lagged[..rows.saturating_sub(1) * cols].to_vec();
        let system = EdgeSystem {
            rows,
            cols,
            scale: a2.clone(),
            horizontal,
            vertical,
        };
        let (_, residual) = system.iterate(g.as_mut_slice(), y.as_slice(), cfg.tol, cfg.tv_inner_sweeps);
        if !residual.is_finite() {
            return Err(Error::NotConverged {
                sweeps: cfg.tv_inner_sweeps,
                residual,
            });
        }
        let prev = *objective.last().expect("nonempty");
        let cur = tv_objective(&g, y, a, beta)?;
        objective.push(cur);
        if prev - cur <= cfg.tol * prev.abs() {
            break;
        }
    }
    let g = Grid::from_vec(rows, cols, g.into_vec())?;
    Ok((g, TvTrace { objective, beta }))
}

/// Smoothed TV with one global weight.
pub fn solve_tv_global(y: &Grid, a: f64, cfg: &SolverConfig) -> Result<Grid> {
    solve_tv(y, &DiffusivityField::constant(y.rows(), y.cols(), a)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(rows, cols, |_, _| rng.random_range(lo..hi)).unwrap()
    }

    #[test]
    fn zero_diffusivity_is_identity() {
        let y = random(8, 8, -1.0, 1.0, 1);
        let f = solve_homogeneous_diffusion(&y, 0.0, &SolverConfig::default()).unwrap();
        assert_eq!(f, y);
        let a = DiffusivityField::constant(8, 8, 0.0).unwrap();
        assert_eq!(
            solve_inhomogeneous_diffusion(&y, &a, &SolverConfig::default()).unwrap(),
            y
        );
    }

    #[test]
    fn constants_are_fixed_points() {
        let y = Grid::filled(9, 7, 2.5).unwrap();
        let a = DiffusivityField::new(random(9, 7, 0.0, 5.0, 2)).unwrap();
        let f = solve_inhomogeneous_diffusion(&y, &a, &SolverConfig::default()).unwrap();
        assert!(f.max_abs_diff(&y).unwrap() < 1e-12);
    }

    #[test]
    fn mass_is_preserved() {
        let y = random(16, 16, 0.0, 5.0, 3);
        let cfg = SolverConfig {
            tol: 1e-12,
            ..SolverConfig::default()
        };
        for a in [0.5, 3.0, 20.0] {
            let f = solve_homogeneous_diffusion(&y, a, &cfg).unwrap();
            assert!((f.sum() - y.sum()).abs() <= 1e-8 * y.sum().abs());
        }
    }

    #[test]
    fn variance_decreases_with_diffusivity() {
        let y = random(32, 32, -2.0, 2.0, 4);
        let cfg = SolverConfig {
            tol: 1e-9,
            ..SolverConfig::default()
        };
        let vars: Vec<f64> = [0.1, 1.0, 10.0, 40.0]
            .iter()
            .map(|&a| solve_homogeneous_diffusion(&y, a, &cfg).unwrap().variance())
            .collect();
        assert!(vars.windows(2).all(|w| w[1] <= w[0]), "{vars:?}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = Grid::zeros(4, 4).unwrap();
        assert!(DiffusivityField::new(Grid::filled(4, 4, -1.0).unwrap()).is_err());
        assert!(solve_homogeneous_diffusion(&y, -1.0, &SolverConfig::default()).is_err());
        let a = DiffusivityField::constant(4, 5, 1.0).unwrap();
        assert!(solve_inhomogeneous_diffusion(&y, &a, &SolverConfig::default()).is_err());
        let bad = SolverConfig {
            tol: 0.0,
            ..SolverConfig::default()
        };
        assert!(solve_homogeneous_diffusion(&y, 1.0, &bad).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let y = random(16, 16, 0.0, 1.0, 5);
        let cfg = SolverConfig {
            tol: 1e-12,
            max_sweeps: 3,
            ..SolverConfig::default()
        };
        let err = solve_homogeneous_diffusion(&y, 100.0, &cfg).unwrap_err();
        match err {
            Error::NotConverged { sweeps, residual } => {
                assert_eq!(sweeps, 3);
                assert!(residual > 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let y = random(16, 16, 0.0, 1.0, 6);
        let a = DiffusivityField::new(random(16, 16, 0.0, 5.0, 7)).unwrap();
        let cfg = SolverConfig {
            tol: 1e-12,
            ..SolverConfig::default()
        };
        let cold = solve_inhomogeneous_diffusion(&y, &a, &cfg).unwrap();
        let start = Grid::filled(16, 16, 0.5).unwrap();
        let warm = solve_inhomogeneous_diffusion_from(&y, &a, &cfg, Some(&start)).unwrap();
        assert!(cold.max_abs_diff(&warm).unwrap() < 1e-9);
    }

    #[test]
    fn tv_constant_data() {
        let y = Grid::filled(8, 8, 1.7).unwrap();
        let a = DiffusivityField::constant(8, 8, 3.0).unwrap();
        let f = solve_tv(&y, &a, &SolverConfig::default()).unwrap();
        assert!(f.max_abs_diff(&y).unwrap() < 1e-12);
    }

    #[test]
    fn tv_tiny_weight_reproduces_data() {
        let y = random(32, 32, 0.0, 5.0, 8);
        let a = DiffusivityField::constant(32, 32, 1e-4).unwrap();
        let f = solve_tv(&y, &a, &SolverConfig::default()).unwrap();
        let rel = f.zip_map(&y, |p, q| p - q).unwrap().l2_norm() / y.l2_norm();
        assert!(rel <= 1e-3, "{rel}");
    }

    #[test]
    fn tv_objective_nonincreasing() {
        let y = random(24, 24, 0.0, 5.0, 9);
        let a = DiffusivityField::new(random(24, 24, 0.5, 3.0, 10)).unwrap();
        let (_, trace) = solve_tv_traced(&y, &a, &SolverConfig::default(), None).unwrap();
        assert!(trace.objective.len() > 2);
        assert!(
            trace.objective.windows(2).all(|w| w[1] <= w[0]),
            "{:?}",
            trace.objective
        );
    }

    #[test]
    fn tv_rejects_zero_weight() {
        let y = Grid::zeros(4, 4).unwrap();
        let a = DiffusivityField::constant(4, 4, 0.0).unwrap();
        assert!(solve_tv(&y, &a, &SolverConfig::default()).is_err());
    }
}
