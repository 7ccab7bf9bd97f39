//! Test phantoms and seeded noise.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Generator for simulation `index` of a run seeded with `seed`.
///
/// Each simulation owns a ChaCha stream, so results do not depend on the
/// order in which simulations are executed.
pub fn sim_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Standard normal samples, row-major.
pub fn standard_normal_grid<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Grid {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Grid::from_vec(rows, cols, data).expect("normal samples are finite")
}

/// `y = f + sigma * Z` with `Z` standard normal white noise.
pub fn add_gaussian_noise(f: &Grid, sigma: f64, seed: u64) -> Result<Grid> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be nonnegative, got {sigma}")));
    }
    let mut rng = sim_rng(seed, 0);
    let z = standard_normal_grid(f.rows(), f.cols(), &mut rng);
    f.zip_map(&z, |a, b| a + sigma * b)
}

/// Independent Poisson counts with means `f`.
pub fn add_poisson_noise(f: &Grid, seed: u64) -> Result<Grid> {
    let mut rng = sim_rng(seed, 0);
    let mut data = Vec::with_capacity(f.len());
    for &lambda in f.as_slice() {
        if !(lambda > 0.0) {
            return Err(Error::invalid(format!(
                "Poisson intensity must be positive, got {lambda}"
            )));
        }
        let dist = Poisson::new(lambda).map_err(|e| Error::invalid(e.to_string()))?;
        data.push(dist.sample(&mut rng));
    }
    Grid::from_vec(f.rows(), f.cols(), data)
}

/// A phantom feature. Coordinates are fractions of the image side, so the
/// same spec renders at any resolution.
#[derive(Clone, Debug, PartialEq)]
pub enum Feature {
    /// Filled disc; pixels whose centers lie within `radius` take `level`.
    Disc { cy: f64, cx: f64, radius: f64, level: f64 },
    /// Linear ramp inside a box, from `from` at the left edge to `to` at the right.
    Ramp {
        top: f64,
        left: f64,
        bottom: f64,
        right: f64,
        from: f64,
        to: f64,
    },
    /// `rows x cols` grid of discs whose radii shrink geometrically by `shrink`.
    Dots {
        top: f64,
        left: f64,
        size: f64,
        rows: usize,
        cols: usize,
        radius: f64,
        shrink: f64,
        level: f64,
    },
    /// Sinusoidal grooves: `base - depth * (1 - cos(2 pi periods t)) / 2` across the box.
    Valleys {
        top: f64,
        left: f64,
        bottom: f64,
        right: f64,
        periods: f64,
        base: f64,
        depth: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub n: usize,
    pub background: f64,
    pub lo: f64,
    pub hi: f64,
    /// Drawn in order; later features overwrite earlier ones.
    pub features: Vec<Feature>,
}

impl PhantomSpec {
    pub fn empty(n: usize, lo: f64, hi: f64, background: f64) -> Self {
        PhantomSpec {
            n,
            background,
            lo,
            hi,
            features: Vec::new(),
        }
    }

    /// A large disc upper left, ramp valleys lower left, a 3x3 array of
    /// shrinking dots lower right, and a linear ramp upper right, over a
    /// constant background. Values lie in `[0, 5]`.
    pub fn standard(n: usize) -> Self {
        PhantomSpec {
            n,
            background: 1.0,
            lo: 0.0,
            hi: 5.0,
            features: vec![
                Feature::Disc {
                    cy: 0.27,
                    cx: 0.27,
                    radius: 0.2,
                    level: 4.0,
                },
                Feature::Ramp {
                    top: 0.1,
                    left: 0.58,
                    bottom: 0.42,
                    right: 0.9,
                    from: 0.0,
                    to: 3.0,
                },
                Feature::Valleys {
                    top: 0.58,
                    left: 0.08,
                    bottom: 0.92,
                    right: 0.44,
                    periods: 3.0,
                    base: 3.0,
                    depth: 3.0,
                },
                Feature::Dots {
                    top: 0.58,
                    left: 0.58,
                    size: 0.34,
                    rows: 3,
                    cols: 3,
                    radius: 0.045,
                    shrink: 0.8,
                    level: 5.0,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("phantom side must be positive"));
        }
        if !(self.lo <= self.hi) {
            return Err(Error::invalid("phantom range must satisfy lo <= hi"));
        }
        Ok(())
    }
}

/// Renders the phantom, clamping into `[lo, hi]`.
pub fn render_phantom(spec: &PhantomSpec) -> Result<Grid> {
    spec.validate()?;
    let n = spec.n;
    let nf = n as f64;
    let mut img = Grid::filled(n, n, spec.background)?;
    let centre = |k: usize| (k as f64 + 0.5) / nf;
    for feature in &spec.features {
        match *feature {
            Feature::Disc { cy, cx, radius, level } => paint_disc(&mut img, cy, cx, radius, level),
            Feature::Ramp {
                top,
                left,
                bottom,
                right,
                from,
                to,
            } => {
                for i in 0..n {
                    for j in 0..n {
                        let (y, x) = (centre(i), centre(j));
                        if (top..bottom).contains(&y) && (left..right).contains(&x) {
                            let t = (x - left) / (right - left);
                            img[(i, j)] = from + t * (to - from);
                        }
                    }
                }
            }
            Feature::Valleys {
                top,
                left,
                bottom,
                right,
                periods,
                base,
                depth,
            } => {
                for i in 0..n {
                    for j in 0..n {
                        let (y, x) = (centre(i), centre(j));
                        if (top..bottom).contains(&y) && (left..right).contains(&x) {
                            let t = (x - left) / (right - left);
                            let phase = (2.0 * std::f64::consts::PI * periods * t).cos();
                            img[(i, j)] = base - depth * 0.5 * (1.0 - phase);
                        }
                    }
                }
            }
            Feature::Dots {
                top,
                left,
                size,
                rows,
                cols,
                radius,
                shrink,
                level,
            } => {
                let mut r = radius;
                for a in 0..rows {
                    for b in 0..cols {
                        let cy = top + (a as f64 + 0.5) * size / rows as f64;
                        let cx = left + (b as f64 + 0.5) * size / cols as f64;
                        paint_disc(&mut img, cy, cx, r, level);
                        r *= shrink;
                    }
                }
            }
        }
    }
    let (lo, hi) = (spec.lo, spec.hi);
    img.map(|v| v.clamp(lo, hi))
}

fn paint_disc(img: &mut Grid, cy: f64, cx: f64, radius: f64, level: f64) {
    let n = img.rows();
    let nf = n as f64;
    for i in 0..n {
        for j in 0..n {
            let dy = (i as f64 + 0.5) / nf - cy;
            let dx = (j as f64 + 0.5) / nf - cx;
            if dy * dy + dx * dx <= radius * radius {
                img[(i, j)] = level;
            }
        }
    }
}

// Text format: one directive per line, `#` comments.
//
//   size 256
//   range 0 5
//   background 1
//   disc <cy> <cx> <radius> <level>
//   ramp <top> <left> <bottom> <right> <from> <to>
//   dots <top> <left> <size> <rows> <cols> <radius> <shrink> <level>
//   valleys <top> <left> <bottom> <right> <periods> <base> <depth>

impl FromStr for PhantomSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut spec = PhantomSpec::empty(0, 0.0, 5.0, 0.0);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::invalid(format!("phantom line {}: {msg}", lineno + 1));
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or_default();
            let nums: Vec<f64> = words
                .map(|w| w.parse::<f64>().map_err(|_| bad(&format!("bad number {w:?}"))))
                .collect::<Result<_>>()?;
            let want = |k: usize| {
                if nums.len() == k {
                    Ok(())
                } else {
                    Err(bad(&format!("{key} expects {k} values, got {}", nums.len())))
                }
            };
            let count = |v: f64| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(bad(&format!("{v} is not a count")))
                }
            };
            match key {
                "size" => {
                    want(1)?;
                    spec.n = count(nums[0])?;
                }
                "range" => {
                    want(2)?;
                    spec.lo = nums[0];
                    spec.hi = nums[1];
                }
                "background" => {
                    want(1)?;
                    spec.background = nums[0];
                }
                "disc" => {
                    want(4)?;
                    spec.features.push(Feature::Disc {
                        cy: nums[0],
                        cx: nums[1],
                        radius: nums[2],
                        level: nums[3],
                    });
                }
                "ramp" => {
                    want(6)?;
                    spec.features.push(Feature::Ramp {
                        top: nums[0],
                        left: nums[1],
                        bottom: nums[2],
                        right: nums[3],
                        from: nums[4],
                        to: nums[5],
                    });
                }
                "dots" => {
                    want(8)?;
                    spec.features.push(Feature::Dots {
                        top: nums[0],
                        left: nums[1],
                        size: nums[2],
                        rows: count(nums[3])?,
                        cols: count(nums[4])?,
                        radius: nums[5],
                        shrink: nums[6],
                        level: nums[7],
                    });
                }
                "valleys" => {
                    want(7)?;
                    spec.features.push(Feature::Valleys {
                        top: nums[0],
                        left: nums[1],
                        bottom: nums[2],
                        right: nums[3],
                        periods: nums[4],
                        base: nums[5],
                        depth: nums[6],
                    });
                }
                other => return Err(bad(&format!("unknown directive {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for PhantomSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "size {}", self.n)?;
        writeln!(f, "range {} {}", self.lo, self.hi)?;
        writeln!(f, "background {}", self.background)?;
        for feature in &self.features {
            match feature {
                Feature::Disc { cy, cx, radius, level } => writeln!(f, "disc {cy} {cx} {radius} {level}")?,
                Feature::Ramp {
                    top,
                    left,
                    bottom,
                    right,
                    from,
                    to,
                } => writeln!(f, "ramp {top} {left} {bottom} {right} {from} {to}")?,
                Feature::Dots {
                    top,
                    left,
                    size,
                    rows,
                    cols,
                    radius,
                    shrink,
                    level,
                } => writeln!(f, "dots {top} {left} {size} {rows} {cols} {radius} {shrink} {level}")?,
                Feature::Valleys {
                    top,
                    left,
                    bottom,
                    right,
                    periods,
                    base,
                    depth,
                } => writeln!(f, "valleys {top} {left} {bottom} {right} {periods} {base} {depth}")?,
            }
        }
        Ok(())
    }
}
