//! Minimal bounding box over an attention grid.
//!
//! Given a non-negative grid `G` and a mass fraction `tau`, find the box `B`
//! of smallest area with `sum(G[B]) >= tau * sum(G)`. Grids are small (14x14
//! for the usual attention resolution) so every box is examined through a
//! summed-area table, in order of increasing area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl AttentionMap {
    /// `values` is row-major with `rows * cols` finite, non-negative entries.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimension { rows, cols });
        }
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidAttention(format!("entry {v} is negative or not finite")));
        }
        Ok(AttentionMap { rows, cols, values })
    }

    pub fn from_rows(grid: &[Vec<f64>]) -> Result<Self> {
        let rows = grid.len();
        let cols = grid.first().map_or(0, Vec::len);
        if let Some(bad) = grid.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                got: bad.len(),
            });
        }
        Self::new(rows, cols, grid.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.values.iter().map(|v| v * factor).collect())
    }
}

/// Inclusive grid box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn new(top: usize, left: usize, bottom: usize, right: usize) -> Self {
        debug_assert!(top <= bottom && left <= right);
        BoundingBox {
            top,
            left,
            bottom,
            right,
        }
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..=self.bottom).contains(&row) && (self.left..=self.right).contains(&col)
    }

    pub fn covers(&self, other: &BoundingBox) -> bool {
        self.top <= other.top
            && self.left <= other.left
            && self.bottom >= other.bottom
            && self.right >= other.right
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    tau: f64,
}

impl CropConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidTau(tau));
        }
        Ok(CropConfig { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig { tau: DEFAULT_TAU }
    }
}

/// Number of distinct boxes on an `m x n` grid: `m n (m+1) (n+1) / 4`.
pub fn num_bboxes(m: usize, n: usize) -> Result<u64> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDimension { rows: m, cols: n });
    }
    let (m, n) = (m as u64, n as u64);
    // m(m+1) and n(n+1) are each even, so the division is exact.
    Ok((m * (m + 1) / 2) * (n * (n + 1) / 2))
}

/// Summed-area table with a zero guard row and column.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    rows: usize,
    cols: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    pub fn new(map: &AttentionMap) -> Self {
        let (rows, cols) = (map.rows, map.cols);
        let stride = cols + 1;
        let mut table = vec![0.0; (rows + 1) * stride];
        for r in 0..rows {
            let mut row_sum = 0.0;
            for c in 0..cols {
                row_sum += map.get(r, c);
                table[(r + 1) * stride + c + 1] = table[r * stride + c + 1] + row_sum;
            }
        }
        IntegralImage { rows, cols, table }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.table[r * (self.cols + 1) + c]
    }

    #[inline]
    pub fn box_sum(&self, b: &BoundingBox) -> f64 {
        self.at(b.bottom + 1, b.right + 1) - self.at(b.top, b.right + 1) - self.at(b.bottom + 1, b.left)
            + self.at(b.top, b.left)
    }

    pub fn total(&self) -> f64 {
        self.at(self.rows, self.cols)
    }
}

pub fn integral_image(map: &AttentionMap) -> IntegralImage {
    IntegralImage::new(map)
}

/// Smallest-area box holding at least `tau` of the total mass. Ties between
/// equal areas go to the lexicographically smallest `(top, left, bottom, right)`.
///
/// Mass comparisons are `>=` on the summed-area values with no epsilon.
pub fn min_enclosing_box(map: &AttentionMap, config: &CropConfig) -> Result<BoundingBox> {
    let sat = IntegralImage::new(map);
    let total = sat.total();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    let (m, n) = (map.rows, map.cols);
    if config.tau == 1.0 {
        return Ok(support_box(map));
    }
    let target = config.tau * total;

    for area in 1..=m * n {
        // For a fixed (top, left), bottom grows with height, so scanning heights
        // in ascending order visits candidates in lexicographic order.
        let heights: Vec<usize> = (1..=m.min(area))
            .filter(|h| area % h == 0 && area / h <= n)
            .collect();
        if heights.is_empty() {
            continue;
        }
        for top in 0..m {
            for left in 0..n {
                for &h in &heights {
                    let w = area / h;
                    if top + h > m || left + w > n {
                        continue;
                    }
                    let b = BoundingBox::new(top, left, top + h - 1, left + w - 1);
                    if sat.box_sum(&b) >= target {
                        return Ok(b);
                    }
                }
            }
        }
    }
    // The full grid always qualifies since tau <= 1; only reachable if the
    // summed-area table lost precision on the last subtraction.
    Ok(BoundingBox::new(0, 0, m - 1, n - 1))
}

/// Tightest box around the non-zero cells. With `tau = 1` this is the answer,
/// computed without floating-point sums.
fn support_box(map: &AttentionMap) -> BoundingBox {
    let (mut top, mut left, mut bottom, mut right) = (usize::MAX, usize::MAX, 0, 0);
    for r in 0..map.rows {
        for c in 0..map.cols {
            if map.get(r, c) > 0.0 {
                top = top.min(r);
                bottom = bottom.max(r);
                left = left.min(c);
                right = right.max(c);
            }
        }
    }
    BoundingBox::new(top, left, bottom, right)
}
