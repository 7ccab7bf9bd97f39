//! Dense real-valued grids and summed-area tables.
//!
//! Storage is row-major with zero-based indices; row 0 is the top row of an
//! image file. Pixel `(i, j)` here corresponds to the sampling point
//! `x = ((i + 1) / n, (j + 1) / n)` of the regression model.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// A dense `rows x cols` grid of finite `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    /// Builds a grid from row-major data, rejecting NaN and infinities.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyGrid { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                rows,
                cols,
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: k / cols,
                col: k % cols,
                value: data[k],
            });
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged rows"));
        }
        Grid::from_vec(r, c, rows.concat())
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Grid::from_vec(rows, cols, vec![value; rows * cols])
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Grid::filled(rows, cols, 0.0)
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Grid::from_vec(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Side length of a square grid, or [`Error::NotSquare`].
    pub fn side(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (i < self.rows && j < self.cols).then(|| self.data[i * self.cols + j])
    }

    pub fn ensure_same_shape(&self, other: &Grid) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            })
        }
    }

    /// Applies `f` pixelwise. The result is validated for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Grid> {
        Grid::from_vec(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Combines two equally shaped grids pixelwise.
    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Grid::from_vec(self.rows, self.cols, data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Sample variance with denominator `len - 1` (zero for a single pixel).
    pub fn variance(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean squared difference to another grid of the same shape.
    pub fn mse(&self, other: &Grid) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(s / self.len() as f64)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Grid) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.rows && j < self.cols, "pixel ({i}, {j}) out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        assert!(i < self.rows && j < self.cols, "pixel ({i}, {j}) out of bounds");
        &mut self.data[i * self.cols + j]
    }
}

/// Inclusive pixel rectangle `[top, bottom] x [left, right]`, zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Rect {
    pub fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Rect {
            top,
            bottom,
            left,
            right,
        }
    }

    pub fn pixel(i: usize, j: usize) -> Self {
        Rect::new(i, i, j, j)
    }

    pub fn height(&self) -> usize {
        self.bottom + 1 - self.top
    }

    pub fn width(&self) -> usize {
        self.right + 1 - self.left
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.top..=self.bottom).contains(&i) && (self.left..=self.right).contains(&j)
    }
}

/// Cumulative sums `R[i][j] = sum of source[k][l] for k <= i, l <= j`.
///
/// Stored with a leading zero row and column so the four-corner formula needs
/// no boundary indicators.
#[derive(Clone, Debug)]
pub struct SummedAreaTable {
    rows: usize,
    cols: usize,
    // (rows + 1) x (cols + 1), row-major
    table: Vec<f64>,
}

impl SummedAreaTable {
    /// Builds the table in a single row-major pass.
    pub fn new(source: &Grid) -> Self {
        let (rows, cols) = source.shape();
        let stride = cols + 1;
        let mut table = vec![0.0; (rows + 1) * stride];
        for i in 0..rows {
            let mut running = 0.0;
            for j in 0..cols {
                running += source.data[i * cols + j];
                table[(i + 1) * stride + j + 1] = table[i * stride + j + 1] + running;
            }
        }
        SummedAreaTable { rows, cols, table }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Cumulative sum up to and including pixel `(i, j)`.
    pub fn cumulative(&self, i: usize, j: usize) -> f64 {
        self.table[(i + 1) * (self.cols + 1) + j + 1]
    }

    pub fn total(&self) -> f64 {
        self.cumulative(self.rows - 1, self.cols - 1)
    }

    /// Sum over an inclusive rectangle.
    pub fn rect_sum(&self, rect: Rect) -> Result<f64> {
        if rect.top > rect.bottom || rect.left > rect.right || rect.bottom >= self.rows || rect.right >= self.cols {
            return Err(Error::RectOutOfBounds);
        }
        Ok(self.rect_sum_unchecked(rect))
    }

    #[inline]
    pub(crate) fn rect_sum_unchecked(&self, r: Rect) -> f64 {
        let s = self.cols + 1;
        let t = &self.table;
        t[(r.bottom + 1) * s + r.right + 1] - t[r.top * s + r.right + 1] - t[(r.bottom + 1) * s + r.left]
            + t[r.top * s + r.left]
    }

    /// The table as a `rows x cols` grid (without the zero border).
    pub fn to_grid(&self) -> Grid {
        Grid::from_fn(self.rows, self.cols, |i, j| self.cumulative(i, j))
            .expect("cumulative sums of a finite grid are finite")
    }
}

/// Per-row prefix sums, used for sets that are a contiguous run in each row.
#[derive(Clone, Debug)]
pub struct RowPrefix {
    cols: usize,
    // rows x (cols + 1)
    prefix: Vec<f64>,
}

impl RowPrefix {
    pub fn new(source: &Grid) -> Self {
        let (rows, cols) = source.shape();
        let mut prefix = vec![0.0; rows * (cols + 1)];
        for i in 0..rows {
            let base = i * (cols + 1);
            for j in 0..cols {
                prefix[base + j + 1] = prefix[base + j] + source.data[i * cols + j];
            }
        }
        RowPrefix { cols, prefix }
    }

    /// Sum of `source[row][start..end]` (half-open).
    #[inline]
    pub fn run_sum(&self, row: usize, start: usize, end: usize) -> f64 {
        let base = row * (self.cols + 1);
        self.prefix[base + end] - self.prefix[base + start]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(rows: &[&[f64]]) -> Grid {
        Grid::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_field_table() {
        let sat = SummedAreaTable::new(&Grid::zeros(2, 2).unwrap());
        assert_eq!(sat.to_grid(), Grid::zeros(2, 2).unwrap());
    }

    #[test]
    fn small_table_by_hand() {
        let sat = SummedAreaTable::new(&g(&[&[1.0, 2.0], &[3.0, 4.0]]));
        assert_eq!(sat.to_grid(), g(&[&[1.0, 3.0], &[4.0, 10.0]]));
        assert_eq!(sat.rect_sum(Rect::new(0, 1, 0, 1)).unwrap(), 10.0);
        assert_eq!(sat.total(), 10.0);
    }

    #[test]
    fn point_mass_prefix_is_one_everywhere() {
        let mut src = Grid::zeros(5, 4).unwrap();
        src[(0, 0)] = 1.0;
        let sat = SummedAreaTable::new(&src);
        assert!(sat.to_grid().as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_pixel_rect() {
        let src = g(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let sat = SummedAreaTable::new(&src);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(sat.rect_sum(Rect::pixel(i, j)).unwrap(), src[(i, j)]);
            }
        }
    }

    #[test]
    fn rect_out_of_bounds() {
        let sat = SummedAreaTable::new(&Grid::zeros(3, 3).unwrap());
        let err = sat.rect_sum(Rect::new(0, 3, 0, 0)).unwrap_err();
        assert_eq!(err.to_string(), "rect out of bounds");
        assert!(sat.rect_sum(Rect::new(2, 1, 0, 0)).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Grid::from_vec(1, 2, vec![0.0, f64::NAN]),
            Err(Error::NonFinite { row: 0, col: 1, .. })
        ));
        assert!(Grid::from_vec(0, 2, vec![]).is_err());
        assert!(Grid::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn row_prefix_runs() {
        let src = g(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let rp = RowPrefix::new(&src);
        assert_eq!(rp.run_sum(1, 0, 3), 15.0);
        assert_eq!(rp.run_sum(0, 1, 2), 2.0);
        assert_eq!(rp.run_sum(0, 2, 2), 0.0);
    }
}
