//! Monte-Carlo calibration of the criterion and checks of its extreme-value
//! theory on dyadic families.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mrc::{log_n2, max_abs_from_sums, ResidualSums};
use crate::noise_sim::{sim_rng, standard_normal_grid};
use crate::partition::{DyadicSquare, PartitionFamily};

/// Normalizing constants for the maximum of `N` standard Gaussians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GumbelNormalizers {
    pub count: f64,
    pub a: f64,
    pub b: f64,
}

/// `a_N = sqrt(2 ln N) + (-ln ln N / 2 - ln(2 sqrt(pi))) / sqrt(2 ln N)`,
/// `b_N = 1 / sqrt(2 ln N)`.
pub fn gumbel_normalizers(count: u64) -> Result<GumbelNormalizers> {
    if count < 3 {
        return Err(Error::invalid(format!("Gumbel normalizers need N >= 3, got {count}")));
    }
    gumbel_normalizers_real(count as f64)
}

/// [`gumbel_normalizers`] for real `N > e`.
pub fn gumbel_normalizers_real(count: f64) -> Result<GumbelNormalizers> {
    if !(count > std::f64::consts::E) {
        return Err(Error::invalid(format!("Gumbel normalizers need N > e, got {count}")));
    }
    let root = (2.0 * count.ln()).sqrt();
    let correction = -0.5 * count.ln().ln() - (2.0 * std::f64::consts::PI.sqrt()).ln();
    Ok(GumbelNormalizers {
        count,
        a: root + correction / root,
        b: 1.0 / root,
    })
}

/// Standard Gumbel CDF `exp(-e^{-x})`.
pub fn gumbel_cdf(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

/// Kolmogorov distance between the sample's ECDF and a continuous CDF.
pub fn kolmogorov_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / k) - f).max(f - i as f64 / k)
        })
        .fold(0.0, f64::max)
}

/// Smallest sample value whose ECDF reaches `p`.
pub fn quantile_higher(sample: &[f64], p: f64) -> f64 {
    assert!(!sample.is_empty(), "quantile of empty sample");
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((p * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(sorted.len()) - 1]
}

/// The scan family a calibration was computed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FamilySpec {
    pub min_side: usize,
}

impl FamilySpec {
    pub fn dyadic(min_side: usize) -> Self {
        FamilySpec { min_side }
    }

    pub fn build(&self, n: usize) -> Result<PartitionFamily> {
        PartitionFamily::dyadic(n, self.min_side)
    }

    pub fn descriptor(&self) -> String {
        format!("dyadic-squares/min_side={}", self.min_side)
    }

    /// FNV-1a of the descriptor; identifies the family in calibration files.
    pub fn hash(&self) -> u64 {
        self.descriptor().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// A simulated threshold parameter `delta` and the inputs that reproduce it.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub alpha: f64,
    pub n: usize,
    pub family: FamilySpec,
    pub delta: f64,
    pub sims: usize,
    pub seed: u64,
}

/// Per-simulation `max_P |omega_P|` for white noise on an `n x n` grid.
pub fn simulate_max_coefficients(n: usize, family: &PartitionFamily, sims: usize, seed: u64) -> Vec<f64> {
    (0..sims)
        .into_par_iter()
        .map(|s| {
            let mut rng = sim_rng(seed, s as u64);
            let z = standard_normal_grid(n, n, &mut rng);
            max_abs_from_sums(&ResidualSums::new(&z), family)
        })
        .collect()
}

/// Chooses `delta` so that white noise violates the criterion with
/// probability about `alpha`: `delta = q_{1-alpha}(max |omega|)^2 / ln n^2`.
pub fn calibrate_delta(n: usize, family: FamilySpec, alpha: f64, sims: usize, seed: u64) -> Result<Calibration> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if sims < 100 {
        return Err(Error::invalid(format!(
            "calibration needs at least 100 simulations, got {sims}"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("calibration needs n >= 2"));
    }
    let fam = family.build(n)?;
    let maxima = simulate_max_coefficients(n, &fam, sims, seed);
    let q = quantile_higher(&maxima, 1.0 - alpha);
    Ok(Calibration {
        alpha,
        n,
        family,
        delta: q * q / log_n2(n),
        sims,
        seed,
    })
}

impl fmt::Display for Calibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "alpha = {:?}", self.alpha)?;
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "family = {}", self.family.descriptor())?;
        writeln!(f, "family_hash = {:016x}", self.family.hash())?;
        writeln!(f, "min_side = {}", self.family.min_side)?;
        writeln!(f, "delta = {:?}", self.delta)?;
        writeln!(f, "sims = {}", self.sims)?;
        writeln!(f, "seed = {}", self.seed)
    }
}

impl FromStr for Calibration {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("calibration line without '=': {line:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: FromStr>(fields: &std::collections::HashMap<String, String>, key: &str) -> Result<T> {
            fields
                .get(key)
                .ok_or_else(|| Error::invalid(format!("calibration is missing {key:?}")))?
                .parse()
                .map_err(|_| Error::invalid(format!("calibration has a malformed {key:?}")))
        }
        let family = FamilySpec::dyadic(get(&fields, "min_side")?);
        if let Some(hash) = fields.get("family_hash") {
            if u64::from_str_radix(hash, 16).ok() != Some(family.hash()) {
                return Err(Error::invalid("calibration family_hash does not match its family"));
            }
        }
        let cal = Calibration {
            alpha: get(&fields, "alpha")?,
            n: get(&fields, "n")?,
            family,
            delta: get(&fields, "delta")?,
            sims: get(&fields, "sims")?,
            seed: get(&fields, "seed")?,
        };
        if !(cal.delta > 0.0 && cal.delta.is_finite()) {
            return Err(Error::invalid("calibration delta must be positive"));
        }
        Ok(cal)
    }
}

/// Berman's bound on how far the CDF of the maximum of a correlated standard
/// Gaussian vector can exceed that of an independent one at level `u`.
pub fn berman_bound(cov: &[Vec<f64>], u: f64) -> Result<f64> {
    let n = cov.len();
    if cov.iter().any(|row| row.len() != n) {
        return Err(Error::invalid("covariance matrix must be square"));
    }
    let mut total = 0.0;
    for (i, row) in cov.iter().enumerate() {
        for (j, &rho) in row.iter().enumerate().skip(i + 1) {
            if rho.abs() >= 1.0 {
                return Err(Error::DegenerateCorrelation { i, j, rho });
            }
            if rho != 0.0 {
                total += rho.abs() / (1.0 - rho * rho).sqrt() * (-u * u / (1.0 + rho)).exp();
            }
        }
    }
    Ok(total / (2.0 * std::f64::consts::PI))
}

/// Correlation of the coefficients of two dyadic squares under white noise:
/// `#(P1 ∩ P2) / sqrt(#P1 #P2)`.
pub fn dyadic_covariance(p1: &DyadicSquare, p2: &DyadicSquare) -> f64 {
    let (a, b) = (p1.rect(), p2.rect());
    let rows = (a.bottom.min(b.bottom) + 1).saturating_sub(a.top.max(b.top));
    let cols = (a.right.min(b.right) + 1).saturating_sub(a.left.max(b.left));
    let overlap = (rows * cols) as f64;
    overlap / ((p1.pixel_count() as f64) * (p2.pixel_count() as f64)).sqrt()
}

/// Sparsity of the coefficient covariance of a dyadic family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceReport {
    pub subsets: usize,
    /// Ordered pairs `(P, P')`, diagonal included, with nonzero covariance.
    pub nonzero_pairs: u64,
    pub max_off_diagonal: f64,
}

/// Counts correlated pairs via the containment index.
///
/// Two dyadic squares overlap only if one contains the other, so the nonzero
/// pairs are the diagonal plus each square paired with each of its ancestors,
/// in both orders.
pub fn check_sparsity(family: &PartitionFamily) -> CovarianceReport {
    let mut nested = 0u64;
    let mut max_rho: f64 = 0.0;
    for sq in family.squares() {
        let mut cur = sq.id;
        while let Some(up) = family.parent(cur) {
            nested += 1;
            max_rho = max_rho.max(dyadic_covariance(sq, family.square(up)));
            cur = up;
        }
    }
    CovarianceReport {
        subsets: family.len(),
        nonzero_pairs: family.len() as u64 + 2 * nested,
        max_off_diagonal: max_rho,
    }
}

/// Dyadic cells of `{0..n-1}^d` for `d` in {1, 2}: the intervals or squares
/// of side `2^k`, `k = 0..=floor(log2 n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DyadicCell {
    pub level: u32,
    pub origin: [usize; 2],
    pub dim: u32,
}

impl DyadicCell {
    pub fn size(&self) -> usize {
        1 << (self.dim * self.level)
    }

    fn overlap(&self, other: &DyadicCell) -> usize {
        (0..self.dim as usize)
            .map(|k| {
                let (a0, a1) = (self.origin[k], self.origin[k] + (1 << self.level));
                let (b0, b1) = (other.origin[k], other.origin[k] + (1 << other.level));
                a1.min(b1).saturating_sub(a0.max(b0))
            })
            .product()
    }

    pub fn covariance(&self, other: &DyadicCell) -> f64 {
        self.overlap(other) as f64 / ((self.size() * other.size()) as f64).sqrt()
    }
}

pub fn dyadic_cells(n: usize, dim: u32) -> Result<Vec<DyadicCell>> {
    if !(1..=2).contains(&dim) {
        return Err(Error::invalid(format!("dimension must be 1 or 2, got {dim}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let max_level = usize::BITS - 1 - n.leading_zeros();
    let mut cells = Vec::new();
    for level in 0..=max_level {
        let m = n >> level;
        let side = 1usize << level;
        let second = if dim == 2 { m } else { 1 };
        for a in 0..m {
            for b in 0..second {
                cells.push(DyadicCell {
                    level,
                    origin: [a * side, b * side],
                    dim,
                });
            }
        }
    }
    Ok(cells)
}

/// Number of dyadic cells of `{0..n-1}^d`.
pub fn dyadic_cell_count(n: usize, dim: u32) -> u64 {
    let max_level = usize::BITS - 1 - n.leading_zeros();
    (0..=max_level).map(|k| ((n >> k) as u64).pow(dim)).sum()
}

/// `max over dyadic cells of |sum| / sqrt(#cell)` for one field, by repeated
/// pairwise (d = 1) or 2x2 (d = 2) aggregation.
pub fn dyadic_max_abs(values: &[f64], n: usize, dim: u32) -> f64 {
    let mut cur = values.to_vec();
    let mut m = n;
    let mut size = 1usize;
    let mut best: f64 = 0.0;
    loop {
        let scale = (size as f64).sqrt();
        best = best.max(cur.iter().map(|v| v.abs()).fold(0.0, f64::max) / scale);
        let next_m = m / 2;
        if next_m == 0 {
            break;
        }
        cur = if dim == 1 {
            (0..next_m).map(|i| cur[2 * i] + cur[2 * i + 1]).collect()
        } else {
            let mut out = Vec::with_capacity(next_m * next_m);
            for i in 0..next_m {
                for j in 0..next_m {
                    let r0 = 2 * i * m;
                    let r1 = (2 * i + 1) * m;
                    out.push(cur[r0 + 2 * j] + cur[r0 + 2 * j + 1] + cur[r1 + 2 * j] + cur[r1 + 2 * j + 1]);
                }
            }
            out
        };
        m = next_m;
        size <<= dim;
    }
    best
}

/// Empirical check of the Gumbel limit for the dyadic scan maximum.
#[derive(Clone, Debug)]
pub struct GumbelReport {
    pub n: usize,
    pub dim: u32,
    pub sims: usize,
    pub seed: u64,
    pub normalizers: GumbelNormalizers,
    /// Kolmogorov distance of `(M - a_N) / b_N` to `exp(-e^{-x})`, `N = #cells`.
    pub distance: f64,
    /// The same with `N = 2 #cells`, which accounts for taking absolute values.
    pub distance_two_sided: f64,
    /// Raw maxima `M'_N`, in simulation order.
    pub maxima: Vec<f64>,
}

impl GumbelReport {
    pub fn normalized(&self) -> Vec<f64> {
        let g = self.normalizers;
        self.maxima.iter().map(|m| (m - g.a) / g.b).collect()
    }
}

pub fn verify_gumbel(n: usize, dim: u32, sims: usize, seed: u64) -> Result<GumbelReport> {
    if sims < 500 {
        return Err(Error::invalid(format!(
            "Gumbel verification needs at least 500 simulations, got {sims}"
        )));
    }
    if !(1..=2).contains(&dim) {
        return Err(Error::invalid(format!("dimension must be 1 or 2, got {dim}")));
    }
    if n < 2 {
        return Err(Error::invalid("n must be at least 2"));
    }
    let count = dyadic_cell_count(n, dim);
    let cells_per_field = n.pow(dim);
    let maxima: Vec<f64> = (0..sims)
        .into_par_iter()
        .map(|s| {
            let mut rng = sim_rng(seed, s as u64);
            let z = if dim == 1 {
                standard_normal_grid(1, cells_per_field, &mut rng)
            } else {
                standard_normal_grid(n, n, &mut rng)
            };
            dyadic_max_abs(z.as_slice(), n, dim)
        })
        .collect();
    let normalizers = gumbel_normalizers(count)?;
    let two_sided = gumbel_normalizers(2 * count)?;
    let distance = kolmogorov_distance(
        &maxima
            .iter()
            .map(|m| (m - normalizers.a) / normalizers.b)
            .collect::<Vec<_>>(),
        gumbel_cdf,
    );
    let distance_two_sided = kolmogorov_distance(
        &maxima
            .iter()
            .map(|m| (m - two_sided.a) / two_sided.b)
            .collect::<Vec<_>>(),
        gumbel_cdf,
    );
    Ok(GumbelReport {
        n,
        dim,
        sims,
        seed,
        normalizers,
        distance,
        distance_two_sided,
        maxima,
    })
}

impl fmt::Display for GumbelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "dim = {}", self.dim)?;
        writeln!(f, "sims = {}", self.sims)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "subsets = {}", self.normalizers.count)?;
        writeln!(f, "a_N = {:?}", self.normalizers.a)?;
        writeln!(f, "b_N = {:?}", self.normalizers.b)?;
        writeln!(f, "ks_distance = {:?}", self.distance)?;
        writeln!(f, "ks_distance_two_sided = {:?}", self.distance_two_sided)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizers_at_ten() {
        let g = gumbel_normalizers(10).unwrap();
        assert!((g.a - 1.36192).abs() < 1e-5, "{}", g.a);
        assert!((g.b - 0.46599).abs() < 1e-5, "{}", g.b);
        assert!(gumbel_normalizers(2).is_err());
    }

    #[test]
    fn normalizer_b_at_e_squared() {
        let g = gumbel_normalizers_real(std::f64::consts::E.powi(2)).unwrap();
        assert!((g.b - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normalizers_monotone() {
        let mut prev = gumbel_normalizers(10).unwrap();
        let mut n = 10u64;
        while n < 1_000_000 {
            n = n * 11 / 10 + 1;
            let g = gumbel_normalizers(n).unwrap();
            assert!(g.a > prev.a && g.b < prev.b);
            prev = g;
        }
    }

    #[test]
    fn berman_examples() {
        let id = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(berman_bound(&id, 1.0).unwrap(), 0.0);
        let cov = vec![vec![1.0, 0.5], vec![0.5, 1.0]];
        let b = berman_bound(&cov, 2.0).unwrap();
        assert!((b - 0.006385).abs() < 5e-7, "{b}");
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            let v = berman_bound(&cov, 0.1 * k as f64).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        let bad = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(
            berman_bound(&bad, 1.0),
            Err(Error::DegenerateCorrelation { .. })
        ));
    }

    #[test]
    fn covariance_cases() {
        let fam = PartitionFamily::dyadic(8, 1).unwrap();
        let big = fam.level(2)[0];
        let quarter = fam.level(1)[0];
        let apart = fam.level(1)[3];
        assert_eq!(dyadic_covariance(&big, &big), 1.0);
        assert_eq!(dyadic_covariance(&quarter, &big), 0.5);
        assert_eq!(dyadic_covariance(&big, &quarter), 0.5);
        assert_eq!(dyadic_covariance(&quarter, &apart), 0.0);
        for p in fam.squares() {
            for q in fam.squares() {
                if p.id != q.id {
                    assert!(dyadic_covariance(p, q) <= std::f64::consts::FRAC_1_SQRT_2);
                }
            }
        }
    }

    #[test]
    fn sparsity_brute_force() {
        let fam = PartitionFamily::dyadic(4, 1).unwrap();
        let report = check_sparsity(&fam);
        let mut count = 0u64;
        let mut max_rho: f64 = 0.0;
        for p in fam.squares() {
            for q in fam.squares() {
                let c = dyadic_covariance(p, q);
                if c != 0.0 {
                    count += 1;
                }
                if p.id != q.id {
                    max_rho = max_rho.max(c);
                }
            }
        }
        assert_eq!(report.subsets, 21);
        assert_eq!(report.nonzero_pairs, count);
        assert_eq!(report.max_off_diagonal, max_rho);
    }

    #[test]
    fn cell_aggregation_matches_brute_force() {
        let mut rng = sim_rng(3, 0);
        for (n, dim) in [(16, 1), (8, 2), (6, 2), (12, 1)] {
            let len = if dim == 1 { n } else { n * n };
            let z = standard_normal_grid(1, len, &mut rng);
            let v = z.as_slice();
            let cells = dyadic_cells(n, dim).unwrap();
            assert_eq!(cells.len() as u64, dyadic_cell_count(n, dim));
            let brute = cells
                .iter()
                .map(|c| {
                    let s = 1usize << c.level;
                    let mut sum = 0.0;
                    for a in c.origin[0]..c.origin[0] + s {
                        if dim == 1 {
                            sum += v[a];
                        } else {
                            for b in c.origin[1]..c.origin[1] + s {
                                sum += v[a * n + b];
                            }
                        }
                    }
                    sum.abs() / (c.size() as f64).sqrt()
                })
                .fold(0.0, f64::max);
            assert!((dyadic_max_abs(v, n, dim) - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_convention() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(quantile_higher(&s, 0.95), 19.0);
        assert_eq!(quantile_higher(&s, 0.951), 20.0);
        assert_eq!(quantile_higher(&s, 0.5), 10.0);
    }

    #[test]
    fn calibration_text_round_trip() {
        let cal = Calibration {
            alpha: 0.05,
            n: 64,
            family: FamilySpec::dyadic(1),
            delta: 2.123456789012345,
            sims: 200,
            seed: 42,
        };
        let parsed: Calibration = cal.to_string().parse().unwrap();
        assert_eq!(parsed, cal);
        let tampered = cal.to_string().replace("min_side = 1", "min_side = 2");
        assert!(tampered.parse::<Calibration>().is_err());
    }

    #[test]
    fn calibration_deterministic_and_monotone() {
        let fam = FamilySpec::dyadic(1);
        let a = calibrate_delta(32, fam, 0.05, 200, 5).unwrap();
        assert_eq!(a, calibrate_delta(32, fam, 0.05, 200, 5).unwrap());
        let b = calibrate_delta(32, fam, 0.2, 200, 5).unwrap();
        assert!(b.delta <= a.delta);
        assert!(calibrate_delta(32, fam, 0.05, 99, 5).is_err());
        assert!(calibrate_delta(32, fam, 1.0, 200, 5).is_err());
    }

    #[test]
    fn kolmogorov_of_exact_quantiles_is_small() {
        let k = 1000;
        let sample: Vec<f64> = (0..k)
            .map(|i| {
                let p = (i as f64 + 0.5) / k as f64;
                -(-p.ln()).ln()
            })
            .collect();
        assert!(kolmogorov_distance(&sample, gumbel_cdf) <= 0.5 / k as f64 + 1e-12);
    }
}
