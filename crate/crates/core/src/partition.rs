//! The scan family: dyadic squares, and wedges obtained by cutting a dyadic
//! square with a straight line.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Rect, RowPrefix};

/// A grid-aligned square with side `2^level`, anchored at a multiple of its side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DyadicSquare {
    pub id: usize,
    pub level: u32,
    pub top: usize,
    pub left: usize,
}

impl DyadicSquare {
    pub fn side(&self) -> usize {
        1 << self.level
    }

    pub fn pixel_count(&self) -> usize {
        1 << (2 * self.level)
    }

    pub fn rect(&self) -> Rect {
        let s = self.side();
        Rect::new(self.top, self.top + s - 1, self.left, self.left + s - 1)
    }

    pub fn contains_pixel(&self, i: usize, j: usize) -> bool {
        self.rect().contains(i, j)
    }

    /// Whether `other` lies inside `self` (including equality).
    pub fn contains(&self, other: &DyadicSquare) -> bool {
        let (a, b) = (self.rect(), other.rect());
        a.top <= b.top && a.left <= b.left && b.bottom <= a.bottom && b.right <= a.right
    }

    pub fn intersects(&self, other: &DyadicSquare) -> bool {
        let (a, b) = (self.rect(), other.rect());
        a.top <= b.bottom && b.top <= a.bottom && a.left <= b.right && b.left <= a.right
    }
}

/// All dyadic squares of an `n x n` grid with sides in `[min_side, 2^floor(log2 n)]`.
///
/// Squares are stored smallest level first and row-major within a level; a
/// square's id is its position in that order.
#[derive(Clone, Debug)]
pub struct PartitionFamily {
    n: usize,
    min_level: u32,
    max_level: u32,
    // index of the first square of each level, relative to min_level
    level_offsets: Vec<usize>,
    squares: Vec<DyadicSquare>,
}

impl PartitionFamily {
    /// Enumerates the dyadic squares of an `n x n` grid.
    pub fn dyadic(n: usize, min_side: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("grid side must be positive"));
        }
        if !min_side.is_power_of_two() {
            return Err(Error::invalid(format!("min_side {min_side} is not a power of two")));
        }
        if min_side > n {
            return Err(Error::invalid(format!("min_side {min_side} exceeds grid side {n}")));
        }
        let min_level = min_side.trailing_zeros();
        let max_level = usize::BITS - 1 - n.leading_zeros();
        let mut squares = Vec::new();
        let mut level_offsets = Vec::new();
        for level in min_level..=max_level {
            level_offsets.push(squares.len());
            let side = 1usize << level;
            let per_row = n / side;
            for bi in 0..per_row {
                for bj in 0..per_row {
                    squares.push(DyadicSquare {
                        id: squares.len(),
                        level,
                        top: bi * side,
                        left: bj * side,
                    });
                }
            }
        }
        Ok(PartitionFamily {
            n,
            min_level,
            max_level,
            level_offsets,
            squares,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn min_side(&self) -> usize {
        1 << self.min_level
    }

    pub fn min_level(&self) -> u32 {
        self.min_level
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn len(&self) -> usize {
        self.squares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.squares.is_empty()
    }

    pub fn squares(&self) -> &[DyadicSquare] {
        &self.squares
    }

    pub fn square(&self, id: usize) -> &DyadicSquare {
        &self.squares[id]
    }

    pub fn level(&self, level: u32) -> &[DyadicSquare] {
        if level < self.min_level || level > self.max_level {
            return &[];
        }
        let k = (level - self.min_level) as usize;
        let end = self.level_offsets.get(k + 1).copied().unwrap_or(self.squares.len());
        &self.squares[self.level_offsets[k]..end]
    }

    fn id_at(&self, level: u32, bi: usize, bj: usize) -> usize {
        let per_row = self.n >> level;
        self.level_offsets[(level - self.min_level) as usize] + bi * per_row + bj
    }

    /// The four squares one level down that tile `id`, if that level is in the family.
    pub fn children(&self, id: usize) -> Option<[usize; 4]> {
        let sq = self.squares[id];
        if sq.level == self.min_level {
            return None;
        }
        let child = sq.level - 1;
        let (bi, bj) = (sq.top >> child, sq.left >> child);
        Some([
            self.id_at(child, bi, bj),
            self.id_at(child, bi, bj + 1),
            self.id_at(child, bi + 1, bj),
            self.id_at(child, bi + 1, bj + 1),
        ])
    }

    /// The square one level up containing `id`, if it exists.
    pub fn parent(&self, id: usize) -> Option<usize> {
        let sq = self.squares[id];
        if sq.level == self.max_level {
            return None;
        }
        let up = sq.level + 1;
        let (bi, bj) = (sq.top >> up, sq.left >> up);
        // squares overhanging a non-power-of-two grid are absent
        if bi >= self.n >> up || bj >= self.n >> up {
            return None;
        }
        Some(self.id_at(up, bi, bj))
    }

    /// Ids of the squares containing pixel `(i, j)`, smallest first.
    pub fn squares_containing(&self, i: usize, j: usize) -> Vec<usize> {
        (self.min_level..=self.max_level)
            .filter_map(|level| {
                let (bi, bj) = (i >> level, j >> level);
                let per_row = self.n >> level;
                (bi < per_row && bj < per_row).then(|| self.id_at(level, bi, bj))
            })
            .collect()
    }
}

/// Which side of a cutting line a wedge lies on.
///
/// `Above` is the strictly positive side of the oriented line; for a horizontal
/// line that is the upper part of the square. Pixels whose centers lie exactly
/// on the line belong to `Below`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WedgeSide {
    Above,
    Below,
}

/// The finite set of lines used to cut each dyadic square.
#[derive(Clone, Debug, PartialEq)]
pub struct WedgeDictionary {
    /// Line angles in degrees, measured from the horizontal.
    pub angles_deg: Vec<f64>,
    /// Wedges (and their complements) with fewer pixels are dropped.
    pub min_pixels: usize,
}

impl Default for WedgeDictionary {
    /// Eight angles in steps of 22.5 degrees, wedges of at least four pixels.
    fn default() -> Self {
        WedgeDictionary {
            angles_deg: (0..8).map(|k| 22.5 * k as f64).collect(),
            min_pixels: 4,
        }
    }
}

impl WedgeDictionary {
    /// Horizontal and vertical cuts only, keeping every nonempty wedge.
    pub fn axis_aligned() -> Self {
        WedgeDictionary {
            angles_deg: vec![0.0, 90.0],
            min_pixels: 1,
        }
    }

    pub fn empty() -> Self {
        WedgeDictionary {
            angles_deg: Vec::new(),
            min_pixels: 1,
        }
    }

    /// Rasterizes every admissible line for a square of the given side.
    pub fn lines_for_side(&self, side: usize) -> Vec<Arc<LineCut>> {
        if side < 2 {
            return Vec::new();
        }
        // odd count so the central cut is always present
        let offsets = side.div_ceil(2) | 1;
        let mut lines = Vec::new();
        for (angle_index, &deg) in self.angles_deg.iter().enumerate() {
            let (sin, cos) = snapped_sin_cos(deg);
            // the square's corners project onto [-h, h]
            let h = 0.5 * side as f64 * (sin.abs() + cos.abs());
            for offset_index in 0..offsets {
                let t = h * (2.0 * (offset_index + 1) as f64 / (offsets + 1) as f64 - 1.0);
                let cut = LineCut::rasterize(side, sin, cos, t, angle_index, offset_index);
                let above = cut.above_count();
                let below = side * side - above;
                if above >= self.min_pixels.max(1) && below >= self.min_pixels.max(1) {
                    lines.push(Arc::new(cut));
                }
            }
        }
        lines
    }
}

fn snapped_sin_cos(deg: f64) -> (f64, f64) {
    let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
    // a line and its reverse are the same cut; keep sin >= 0
    let rad = deg.rem_euclid(180.0).to_radians();
    (snap(rad.sin()), snap(rad.cos()))
}

/// A rasterized line through a `side x side` square.
///
/// In local row `r` the `Above` part is the column run `[starts[r], side)` and
/// `Below` is `[0, starts[r])`.
#[derive(Clone, Debug, PartialEq)]
pub struct LineCut {
    pub side: usize,
    pub angle_index: usize,
    pub offset_index: usize,
    sin: f64,
    cos: f64,
    offset: f64,
    starts: Vec<usize>,
}

impl LineCut {
    fn rasterize(side: usize, sin: f64, cos: f64, offset: f64, angle_index: usize, offset_index: usize) -> Self {
        let mut cut = LineCut {
            side,
            angle_index,
            offset_index,
            sin,
            cos,
            offset,
            starts: Vec::with_capacity(side),
        };
        for r in 0..side {
            let start = if sin == 0.0 {
                if cut.is_above(r, 0) {
                    0
                } else {
                    side
                }
            } else {
                // above iff sin*u > offset + cos*v, and sin > 0 for angles in (0, 180)
                let half = side as f64 / 2.0;
                let v = r as f64 + 0.5 - half;
                let bound = (offset + cos * v) / sin + half - 0.5;
                let mut c = (bound.floor() + 1.0).clamp(0.0, side as f64) as usize;
                while c > 0 && cut.is_above(r, c - 1) {
                    c -= 1;
                }
                while c < side && !cut.is_above(r, c) {
                    c += 1;
                }
                c
            };
            cut.starts.push(start);
        }
        cut
    }

    /// Pointwise side test for local pixel `(r, c)`.
    pub fn is_above(&self, r: usize, c: usize) -> bool {
        let half = self.side as f64 / 2.0;
        let u = c as f64 + 0.5 - half;
        let v = r as f64 + 0.5 - half;
        self.sin * u - self.cos * v > self.offset
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn above_count(&self) -> usize {
        self.starts.iter().map(|&s| self.side - s).sum()
    }
}

/// One side of a line cutting a dyadic square.
#[derive(Clone, Debug)]
pub struct Wedge {
    /// Position within the parent's wedge list; unique per parent.
    pub id: usize,
    pub parent: DyadicSquare,
    pub line: Arc<LineCut>,
    pub side: WedgeSide,
    pub pixel_count: usize,
}

impl Wedge {
    /// Half-open column run (absolute columns) of this wedge in local row `r`.
    pub fn row_run(&self, r: usize) -> (usize, usize) {
        let s = self.line.starts[r];
        let left = self.parent.left;
        match self.side {
            WedgeSide::Above => (left + s, left + self.line.side),
            WedgeSide::Below => (left, left + s),
        }
    }

    pub fn contains_pixel(&self, i: usize, j: usize) -> bool {
        if !self.parent.contains_pixel(i, j) {
            return false;
        }
        let above = self.line.is_above(i - self.parent.top, j - self.parent.left);
        above == (self.side == WedgeSide::Above)
    }

    /// Absolute pixel coordinates covered by the wedge.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.line.side).flat_map(move |r| {
            let (a, b) = self.row_run(r);
            (a..b).map(move |j| (self.parent.top + r, j))
        })
    }

    /// Sum of the source grid over the wedge, one row run per row.
    pub fn sum(&self, prefix: &RowPrefix) -> f64 {
        (0..self.line.side)
            .map(|r| {
                let (a, b) = self.row_run(r);
                prefix.run_sum(self.parent.top + r, a, b)
            })
            .sum()
    }
}

/// All admissible wedges of `square`, in (angle, offset, side) order.
pub fn enumerate_wedges(square: &DyadicSquare, dict: &WedgeDictionary) -> Vec<Wedge> {
    wedges_from_lines(square, &dict.lines_for_side(square.side()))
}

/// Wedges of `square` from pre-rasterized lines of matching side.
pub fn wedges_from_lines(square: &DyadicSquare, lines: &[Arc<LineCut>]) -> Vec<Wedge> {
    let total = square.pixel_count();
    let mut out = Vec::with_capacity(2 * lines.len());
    for line in lines {
        debug_assert_eq!(line.side, square.side());
        let above = line.above_count();
        for (side, count) in [(WedgeSide::Above, above), (WedgeSide::Below, total - above)] {
            out.push(Wedge {
                id: out.len(),
                parent: *square,
                line: Arc::clone(line),
                side,
                pixel_count: count,
            });
        }
    }
    out
}

/// Sum of residuals over a wedge via per-row prefix sums.
pub fn wedge_sum(prefix: &RowPrefix, wedge: &Wedge) -> f64 {
    wedge.sum(prefix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, SummedAreaTable};

    #[test]
    fn root_only() {
        let fam = PartitionFamily::dyadic(8, 8).unwrap();
        assert_eq!(fam.len(), 1);
        assert_eq!(fam.squares()[0].side(), 8);
    }

    #[test]
    fn counts_small() {
        assert_eq!(PartitionFamily::dyadic(4, 1).unwrap().len(), 21);
        assert_eq!(PartitionFamily::dyadic(256, 1).unwrap().len(), 87381);
    }

    #[test]
    fn closed_form_counts_for_powers_of_two() {
        for e in 0..=8u32 {
            let n = 1usize << e;
            let fam = PartitionFamily::dyadic(n, 1).unwrap();
            let expected: usize = (0..=e).map(|k| (n >> k) * (n >> k)).sum();
            assert_eq!(fam.len(), expected, "n = {n}");
            assert!((fam.len() as f64) <= 4.0 / 3.0 * (n * n) as f64 + 1.0);
        }
    }

    #[test]
    fn non_power_of_two_drops_overhang() {
        let fam = PartitionFamily::dyadic(6, 1).unwrap();
        // 36 + 9 + 1
        assert_eq!(fam.len(), 46);
        for sq in fam.squares() {
            assert!(sq.rect().bottom < 6 && sq.rect().right < 6);
        }
        assert_eq!(fam.parent(fam.level(1)[2].id), None);
    }

    #[test]
    fn min_side_errors() {
        assert!(PartitionFamily::dyadic(4, 8).is_err());
        assert!(PartitionFamily::dyadic(4, 3).is_err());
        assert!(PartitionFamily::dyadic(0, 1).is_err());
    }

    #[test]
    fn ordering_is_smallest_scale_first() {
        let fam = PartitionFamily::dyadic(16, 2).unwrap();
        assert!(fam.squares().windows(2).all(|w| w[0].level <= w[1].level));
        assert!(fam.squares().iter().enumerate().all(|(k, s)| s.id == k));
    }

    #[test]
    fn containment_index_matches_geometry() {
        let fam = PartitionFamily::dyadic(16, 1).unwrap();
        for p in fam.squares() {
            let listed: Vec<usize> = fam.children(p.id).map(|c| c.to_vec()).unwrap_or_default();
            for q in fam.squares() {
                let is_child = q.level + 1 == p.level && p.contains(q);
                assert_eq!(listed.contains(&q.id), is_child, "{p:?} {q:?}");
            }
            if let Some(c) = fam.children(p.id) {
                assert!(c.iter().all(|&c| fam.parent(c) == Some(p.id)));
            }
        }
    }

    #[test]
    fn squares_containing_pixel() {
        let fam = PartitionFamily::dyadic(8, 1).unwrap();
        let ids = fam.squares_containing(5, 2);
        assert_eq!(ids.len(), 4);
        for id in ids {
            assert!(fam.square(id).contains_pixel(5, 2));
        }
    }

    #[test]
    fn axis_aligned_two_by_two() {
        let sq = DyadicSquare {
            id: 0,
            level: 1,
            top: 0,
            left: 0,
        };
        let wedges = enumerate_wedges(&sq, &WedgeDictionary::axis_aligned());
        assert_eq!(wedges.len(), 4);
        let sets: Vec<Vec<(usize, usize)>> = wedges.iter().map(|w| w.pixels().collect()).collect();
        assert!(sets.contains(&vec![(0, 0), (0, 1)]));
        assert!(sets.contains(&vec![(1, 0), (1, 1)]));
        assert!(sets.contains(&vec![(0, 1), (1, 1)]));
        assert!(sets.contains(&vec![(0, 0), (1, 0)]));
    }

    #[test]
    fn empty_dictionary_and_single_pixel() {
        let sq = DyadicSquare {
            id: 0,
            level: 3,
            top: 0,
            left: 0,
        };
        assert!(enumerate_wedges(&sq, &WedgeDictionary::empty()).is_empty());
        let px = DyadicSquare { level: 0, ..sq };
        assert!(enumerate_wedges(&px, &WedgeDictionary::default()).is_empty());
    }

    #[test]
    fn default_dictionary_pairs_partition_the_square() {
        let sq = DyadicSquare {
            id: 0,
            level: 3,
            top: 8,
            left: 16,
        };
        let wedges = enumerate_wedges(&sq, &WedgeDictionary::default());
        assert!(!wedges.is_empty());
        for pair in wedges.chunks(2) {
            assert_eq!(pair[0].pixel_count + pair[1].pixel_count, 64);
            assert!(pair.iter().all(|w| w.pixel_count >= 4));
            assert_eq!(pair[0].pixels().count(), pair[0].pixel_count);
            for (i, j) in sq.rect_pixels() {
                assert!(pair[0].contains_pixel(i, j) ^ pair[1].contains_pixel(i, j));
            }
        }
        // at most 8 angles x 5 offsets, two sides each
        assert!(wedges.len() <= 80);
    }

    #[test]
    fn horizontal_wedge_is_half_rectangle() {
        let grid = Grid::from_fn(8, 8, |i, j| (i * 8 + j) as f64 * 0.37 - 3.0).unwrap();
        let sat = SummedAreaTable::new(&grid);
        let prefix = RowPrefix::new(&grid);
        let sq = DyadicSquare {
            id: 0,
            level: 2,
            top: 4,
            left: 0,
        };
        let lines = WedgeDictionary::axis_aligned().lines_for_side(4);
        let horizontal = lines
            .iter()
            .find(|l| l.angle_index == 0 && l.offset_index == 1)
            .unwrap();
        let wedges = wedges_from_lines(&sq, std::slice::from_ref(horizontal));
        let top = sat.rect_sum(Rect::new(4, 5, 0, 3)).unwrap();
        let bottom = sat.rect_sum(Rect::new(6, 7, 0, 3)).unwrap();
        assert!((wedge_sum(&prefix, &wedges[0]) - top).abs() < 1e-12);
        assert!((wedge_sum(&prefix, &wedges[1]) - bottom).abs() < 1e-12);
    }

    #[test]
    fn rasterized_runs_match_pointwise_predicate() {
        let dict = WedgeDictionary {
            angles_deg: (0..16).map(|k| 11.25 * k as f64).collect(),
            min_pixels: 1,
        };
        for side in [2, 4, 8, 16, 32] {
            for line in dict.lines_for_side(side) {
                for r in 0..side {
                    for c in 0..side {
                        assert_eq!(line.is_above(r, c), c >= line.starts()[r]);
                    }
                }
            }
        }
    }

    impl DyadicSquare {
        fn rect_pixels(&self) -> Vec<(usize, usize)> {
            let r = self.rect();
            (r.top..=r.bottom)
                .flat_map(|i| (r.left..=r.right).map(move |j| (i, j)))
                .collect()
        }
    }
}
