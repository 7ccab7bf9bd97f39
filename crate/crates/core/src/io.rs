//! Image and table files: binary PGM (P5) and plain float CSV.
//!
//! Every writer goes through [`write_atomic`], so a reader never sees a
//! half-written file.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Sample depth of a P5 file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    pub fn maxval(self) -> u16 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }

    fn for_maxval(maxval: u16) -> Self {
        if maxval < 256 {
            PgmDepth::Eight
        } else {
            PgmDepth::Sixteen
        }
    }
}

/// Affine map between grid values and PGM samples:
/// `value = lo + (hi - lo) * sample / maxval`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgmMapping {
    pub lo: f64,
    pub hi: f64,
    pub maxval: u16,
}

impl PgmMapping {
    /// Samples are the values themselves.
    pub fn identity(maxval: u16) -> Self {
        PgmMapping {
            lo: 0.0,
            hi: maxval as f64,
            maxval,
        }
    }

    /// Stretches `[min, max]` of `grid` over the full sample range.
    pub fn min_max(grid: &Grid, depth: PgmDepth) -> Self {
        PgmMapping {
            lo: grid.min(),
            hi: grid.max(),
            maxval: depth.maxval(),
        }
    }

    pub fn depth(&self) -> PgmDepth {
        PgmDepth::for_maxval(self.maxval)
    }

    /// Nearest sample, clamped to `[0, maxval]`. A degenerate range maps to 0.
    pub fn quantize(&self, v: f64) -> u16 {
        let span = self.hi - self.lo;
        if span <= 0.0 {
            return 0;
        }
        let s = ((v - self.lo) / span * self.maxval as f64).round();
        s.clamp(0.0, self.maxval as f64) as u16
    }

    pub fn value(&self, sample: u16) -> f64 {
        self.lo + (self.hi - self.lo) * sample as f64 / self.maxval as f64
    }
}

impl fmt::Display for PgmMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# value = lo + (hi - lo) * sample / maxval")?;
        writeln!(f, "lo = {}", self.lo)?;
        writeln!(f, "hi = {}", self.hi)?;
        writeln!(f, "maxval = {}", self.maxval)
    }
}

impl FromStr for PgmMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mut lo, mut hi, mut maxval) = (None, None, None);
        for line in s.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad mapping line: {line}")))?;
            let v = v.trim();
            let bad = |_| Error::invalid(format!("bad mapping value: {line}"));
            match k.trim() {
                "lo" => lo = Some(v.parse::<f64>().map_err(bad)?),
                "hi" => hi = Some(v.parse::<f64>().map_err(bad)?),
                "maxval" => {
                    maxval = Some(
                        v.parse::<u16>()
                            .map_err(|_| Error::invalid(format!("bad maxval: {v}")))?,
                    )
                }
                other => return Err(Error::invalid(format!("unknown mapping key: {other}"))),
            }
        }
        match (lo, hi, maxval) {
            (Some(lo), Some(hi), Some(maxval)) if maxval > 0 => Ok(PgmMapping { lo, hi, maxval }),
            _ => Err(Error::invalid("mapping needs lo, hi and a positive maxval")),
        }
    }
}

/// Where the mapping of `path` is recorded: `<path>.map`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".map");
    PathBuf::from(s)
}

pub fn encode_pgm(grid: &Grid, mapping: &PgmMapping) -> Vec<u8> {
    let header = format!("P5\n{} {}\n{}\n", grid.cols(), grid.rows(), mapping.maxval);
    let wide = mapping.depth() == PgmDepth::Sixteen;
    let mut out = Vec::with_capacity(header.len() + grid.len() * if wide { 2 } else { 1 });
    out.extend_from_slice(header.as_bytes());
    for &v in grid.as_slice() {
        let s = mapping.quantize(v);
        if wide {
            out.extend_from_slice(&s.to_be_bytes());
        } else {
            out.push(s as u8);
        }
    }
    out
}

/// Parses a P5 image into raw sample values and the declared maxval.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(Grid, u16), String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(format!("expected P5, found {magic:?}"));
    }
    let mut number = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what}: {t:?}"))
    };
    let cols = number("width")?;
    let rows = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let wide = maxval > 255;
    let need = rows * cols * if wide { 2 } else { 1 };
    let raster = bytes.get(pos..pos + need).ok_or("truncated raster")?;
    let data: Vec<f64> = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64).collect()
    };
    if data.iter().any(|&v| v > maxval as f64) {
        return Err(format!("sample exceeds maxval {maxval}"));
    }
    let grid = Grid::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
    Ok((grid, maxval as u16))
}

/// Reads a P5 file. Values are the raw samples; see [`read_pgm_mapped`]
/// to undo a recorded mapping.
pub fn read_pgm(path: &Path) -> Result<(Grid, u16)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|m| Error::format(path, m))
}

/// Reads a P5 file and applies its sidecar mapping when one exists.
pub fn read_pgm_mapped(path: &Path) -> Result<Grid> {
    let (grid, maxval) = read_pgm(path)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(grid);
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let mapping: PgmMapping = text.parse().map_err(|e: Error| Error::format(&side, e.to_string()))?;
    if mapping.maxval != maxval {
        return Err(Error::format(
            &side,
            format!("maxval {} does not match image maxval {maxval}", mapping.maxval),
        ));
    }
    grid.map(|s| mapping.value(s as u16))
}

/// Writes `grid` as P5 under `mapping` and records the mapping in the sidecar.
pub fn write_pgm(path: &Path, grid: &Grid, mapping: &PgmMapping) -> Result<()> {
    write_atomic(path, &encode_pgm(grid, mapping))?;
    write_atomic(&sidecar_path(path), mapping.to_string().as_bytes())
}

/// Writes `grid` stretched from `[min, max]` to the full sample range.
pub fn write_pgm_scaled(path: &Path, grid: &Grid, depth: PgmDepth) -> Result<PgmMapping> {
    let mapping = PgmMapping::min_max(grid, depth);
    write_pgm(path, grid, &mapping)?;
    Ok(mapping)
}

/// Row-major, one line per row, `,` between values. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn encode_csv(grid: &Grid) -> String {
    let mut out = String::with_capacity(grid.len() * 20);
    for i in 0..grid.rows() {
        for (j, v) in grid.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str) -> std::result::Result<Grid, String> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format!("line {}: bad number {:?}", k + 1, field.trim()))?;
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => return Err(format!("line {}: {width} fields, expected {c}", k + 1)),
            _ => {}
        }
        rows += 1;
    }
    Grid::from_vec(rows, cols.unwrap_or(0), data).map_err(|e| e.to_string())
}

pub fn read_csv(path: &Path) -> Result<Grid> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_csv(&text).map_err(|m| Error::format(path, m))
}

pub fn write_csv(path: &Path, grid: &Grid) -> Result<()> {
    write_atomic(path, encode_csv(grid).as_bytes())
}

/// Input image as found on disk.
#[derive(Clone, Debug)]
pub struct Image {
    pub grid: Grid,
    /// Set when read from a PGM file.
    pub maxval: Option<u16>,
}

/// Reads a `.csv` file as floats or anything else as P5 (sidecar mapping
/// applied when present).
pub fn read_image(path: &Path) -> Result<Image> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        return Ok(Image {
            grid: read_csv(path)?,
            maxval: None,
        });
    }
    let (_, maxval) = read_pgm(path)?;
    Ok(Image {
        grid: read_pgm_mapped(path)?,
        maxval: Some(maxval),
    })
}
