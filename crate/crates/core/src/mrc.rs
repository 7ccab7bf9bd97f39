//! Multiresolution coefficients and the criterion built on them.
//!
//! For a subset `P` of pixels the coefficient is
//! `omega_P = sum_{P} r / sqrt(#P)`, which is `N(0, sigma^2)` when the
//! residuals `r` are white noise. A reconstruction passes the criterion when
//! `|omega_P| <= sigma * sqrt(delta * ln(n^2))` for every `P` in the family.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, RowPrefix, SummedAreaTable};
use crate::partition::{DyadicSquare, PartitionFamily, Wedge};

/// `Phi^{-1}(0.75)`, the upper quartile of the standard normal.
pub const NORMAL_UPPER_QUARTILE: f64 = 0.674_489_750_196_081_7;

/// Smallest predicted intensity for which Poisson residuals are treated as Gaussian.
pub const INTENSITY_FLOOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    Gaussian {
        sigma: f64,
    },
    /// Residuals are scaled by `fhat^{-1/2}` and have unit variance.
    Poisson,
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => sigma,
            NoiseModel::Poisson => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Residuals {
    pub grid: Grid,
    pub noise: NoiseModel,
}

impl Residuals {
    /// `r = y - fhat` under Gaussian noise of level `sigma`.
    pub fn gaussian(y: &Grid, fhat: &Grid, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Residuals {
            grid: y.zip_map(fhat, |a, b| a - b)?,
            noise: NoiseModel::Gaussian { sigma },
        })
    }

    pub fn sigma(&self) -> f64 {
        self.noise.sigma()
    }
}

/// Variance-stabilized residuals `(y - fhat) / sqrt(fhat)` for Poisson data.
pub fn normalize_poisson(y: &Grid, fhat: &Grid) -> Result<Residuals> {
    y.ensure_same_shape(fhat)?;
    let cols = fhat.cols();
    if let Some(k) = fhat.as_slice().iter().position(|&v| v < INTENSITY_FLOOR) {
        return Err(Error::IntensityTooSmall {
            row: k / cols,
            col: k % cols,
            value: fhat.as_slice()[k],
            floor: INTENSITY_FLOOR,
        });
    }
    Ok(Residuals {
        grid: y.zip_map(fhat, |obs, pred| (obs - pred) / pred.sqrt())?,
        noise: NoiseModel::Poisson,
    })
}

/// Noise level from the median absolute second-order mixed difference.
///
/// The difference `y[i][j] - y[i-1][j] - y[i][j-1] + y[i-1][j-1]` annihilates
/// affine images and has variance `4 sigma^2` under white noise.
pub fn estimate_sigma(y: &Grid) -> Result<f64> {
    if y.rows() < 2 || y.cols() < 2 {
        return Err(Error::invalid("sigma estimation needs at least a 2x2 grid"));
    }
    let mut diffs = Vec::with_capacity((y.rows() - 1) * (y.cols() - 1));
    for i in 1..y.rows() {
        let (prev, cur) = (y.row(i - 1), y.row(i));
        for j in 1..y.cols() {
            diffs.push((cur[j] - prev[j] - cur[j - 1] + prev[j - 1]).abs());
        }
    }
    Ok(median(&mut diffs) / (2.0 * NORMAL_UPPER_QUARTILE))
}

/// Median; for an even count, the mean of the two central order statistics.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    assert!(n > 0, "median of empty sample");
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

/// The acceptance bound `sigma * sqrt(delta * ln(n^2))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    pub sigma: f64,
    pub delta: f64,
    pub n: usize,
}

impl Threshold {
    pub fn new(sigma: f64, delta: f64, n: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be positive, got {delta}")));
        }
        if n < 2 {
            return Err(Error::invalid("threshold needs n >= 2"));
        }
        Ok(Threshold { sigma, delta, n })
    }

    pub fn value(&self) -> f64 {
        self.sigma * (self.delta * log_n2(self.n)).sqrt()
    }
}

/// `ln(n^2)`.
pub fn log_n2(n: usize) -> f64 {
    2.0 * (n as f64).ln()
}

/// A subset of the scan family.
#[derive(Clone, Copy, Debug)]
pub enum Subset<'a> {
    Square(&'a DyadicSquare),
    Wedge(&'a Wedge),
}

/// Fast subset sums of one residual field.
#[derive(Clone, Debug)]
pub struct ResidualSums {
    sat: SummedAreaTable,
    prefix: RowPrefix,
}

impl ResidualSums {
    pub fn new(residuals: &Grid) -> Self {
        ResidualSums {
            sat: SummedAreaTable::new(residuals),
            prefix: RowPrefix::new(residuals),
        }
    }

    pub fn sat(&self) -> &SummedAreaTable {
        &self.sat
    }

    pub fn prefix(&self) -> &RowPrefix {
        &self.prefix
    }

    #[inline]
    pub fn square_coefficient(&self, sq: &DyadicSquare) -> f64 {
        self.sat.rect_sum_unchecked(sq.rect()) / sq.side() as f64
    }

    pub fn wedge_coefficient(&self, w: &Wedge) -> f64 {
        w.sum(&self.prefix) / (w.pixel_count as f64).sqrt()
    }

    /// `omega_P` for a square or wedge.
    pub fn coefficient(&self, subset: Subset<'_>) -> Result<f64> {
        match subset {
            Subset::Square(sq) => {
                let r = sq.rect();
                if r.bottom >= self.sat.rows() || r.right >= self.sat.cols() {
                    return Err(Error::RectOutOfBounds);
                }
                Ok(self.square_coefficient(sq))
            }
            Subset::Wedge(w) if w.pixel_count == 0 => Err(Error::EmptySubset),
            Subset::Wedge(w) => Ok(self.wedge_coefficient(w)),
        }
    }
}

/// A square whose coefficient exceeds the threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation {
    pub square_id: usize,
    pub omega: f64,
    pub pixel_count: usize,
}

/// All coefficients of the family, indexed by square id.
pub fn square_coefficients(sums: &ResidualSums, family: &PartitionFamily) -> Vec<f64> {
    family
        .squares()
        .par_iter()
        .map(|sq| sums.square_coefficient(sq))
        .collect()
}

/// Violating squares, smallest first and by id within a scale.
pub fn scan(residuals: &Grid, family: &PartitionFamily, threshold: &Threshold) -> Result<Vec<Violation>> {
    check_family(residuals, family)?;
    let sums = ResidualSums::new(residuals);
    Ok(scan_sums(&sums, family, threshold.value()))
}

pub(crate) fn scan_sums(sums: &ResidualSums, family: &PartitionFamily, bound: f64) -> Vec<Violation> {
    // family order is already (scale, id)
    family
        .squares()
        .par_iter()
        .filter_map(|sq| {
            let omega = sums.square_coefficient(sq);
            (omega.abs() > bound).then_some(Violation {
                square_id: sq.id,
                omega,
                pixel_count: sq.pixel_count(),
            })
        })
        .collect()
}

fn check_family(residuals: &Grid, family: &PartitionFamily) -> Result<()> {
    let n = residuals.side()?;
    if n != family.n() {
        return Err(Error::ShapeMismatch {
            left: residuals.shape(),
            right: (family.n(), family.n()),
        });
    }
    Ok(())
}

/// `max_P |omega_P|` over the family.
pub fn max_abs_coefficient(residuals: &Grid, family: &PartitionFamily) -> Result<f64> {
    check_family(residuals, family)?;
    Ok(max_abs_from_sums(&ResidualSums::new(residuals), family))
}

pub(crate) fn max_abs_from_sums(sums: &ResidualSums, family: &PartitionFamily) -> f64 {
    family
        .squares()
        .par_iter()
        .map(|sq| sums.square_coefficient(sq).abs())
        .reduce(|| 0.0, f64::max)
}

/// The scan statistic `M_n = max_P |omega_P| / sqrt(2 ln n^2)`.
pub fn statistic_mn(residuals: &Grid, family: &PartitionFamily) -> Result<f64> {
    if family.is_empty() {
        return Err(Error::invalid("empty family"));
    }
    let n = residuals.side()?;
    if n < 2 {
        return Err(Error::invalid("M_n needs n >= 2"));
    }
    Ok(max_abs_coefficient(residuals, family)? / (2.0 * log_n2(n)).sqrt())
}

/// Whether `g` lies in the multiresolution confidence region around `y`.
pub fn in_confidence_region(g: &Grid, y: &Grid, sigma: f64, tau: f64, family: &PartitionFamily) -> Result<bool> {
    let residuals = y.zip_map(g, |a, b| a - b)?;
    let bound = Threshold::new(sigma, tau, family.n())?.value();
    Ok(max_abs_coefficient(&residuals, family)? <= bound)
}
