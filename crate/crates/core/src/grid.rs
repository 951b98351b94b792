//! Uniform quantization grids and round-to-nearest.

use half::f16;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Traversal order of the weight matrix. Determines the order in which the
/// autoregressive entropy model sees the symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScanOrder {
    RowMajor,
    ColumnMajor,
}

impl ScanOrder {
    pub const ALL: [ScanOrder; 2] = [ScanOrder::RowMajor, ScanOrder::ColumnMajor];

    pub fn as_str(self) -> &'static str {
        match self {
            ScanOrder::RowMajor => "row",
            ScanOrder::ColumnMajor => "column",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ScanOrder::RowMajor => 0,
            ScanOrder::ColumnMajor => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScanOrder::RowMajor),
            1 => Some(ScanOrder::ColumnMajor),
            _ => None,
        }
    }

    /// Row-major flat positions of an `rows × cols` matrix in scan order.
    pub fn positions(self, rows: usize, cols: usize) -> impl Iterator<Item = (usize, usize)> {
        let total = rows * cols;
        (0..total).map(move |t| match self {
            ScanOrder::RowMajor => (t / cols, t % cols),
            ScanOrder::ColumnMajor => (t % rows, t / rows),
        })
    }
}

impl std::str::FromStr for ScanOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" | "row-major" | "rowMajor" => Ok(ScanOrder::RowMajor),
            "column" | "col" | "column-major" | "columnMajor" => Ok(ScanOrder::ColumnMajor),
            _ => Err(Error::InvalidArgument(format!("unknown scan order '{s}'"))),
        }
    }
}

/// Step used when the source matrix is all zeros. Every entry maps to the zero
/// level then; f16 rounding lifts it to the smallest positive subnormal.
const DEGENERATE_STEP: f64 = 1e-12;

/// `k` equally spaced levels `(i − k/2) · step`, always containing 0.
///
/// The step is kept as a 16-bit float so the file header can carry it and the
/// decoder rebuilds exactly the same levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    size: usize,
    scale_bits: u16,
    step: f64,
    levels: Vec<f64>,
}

impl Grid {
    /// Rebuilds a grid from its serialized form.
    pub fn from_scale_bits(size: usize, scale_bits: u16) -> Result<Self> {
        if size < 2 || size > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "grid size must be in [2, {}], got {size}",
                u16::MAX
            )));
        }
        let step = f16::from_bits(scale_bits).to_f64();
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid step must be positive and finite, got {step}"
            )));
        }
        let offset = (size / 2) as f64;
        let levels = (0..size).map(|i| (i as f64 - offset) * step).collect();
        Ok(Self {
            size,
            scale_bits,
            step,
            levels,
        })
    }

    /// Rounds `step` to the nearest representable positive 16-bit float.
    pub fn with_step(size: usize, step: f64) -> Result<Self> {
        Self::from_scale_bits(size, step_to_f16_bits(step))
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn scale_bits(&self) -> u16 {
        self.scale_bits
    }

    #[inline]
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    #[inline]
    pub fn level(&self, index: u32) -> f64 {
        self.levels[index as usize]
    }

    /// Index of the level equal to zero.
    #[inline]
    pub fn zero_index(&self) -> usize {
        self.size / 2
    }

    /// Nearest level; ties go to the smaller magnitude, then to the negative one.
    #[inline]
    pub fn nearest_index(&self, value: f64) -> u32 {
        let t = value / self.step + self.zero_index() as f64;
        let last = self.size - 1;
        let lo = if t <= 0.0 {
            0
        } else {
            (t.floor() as usize).min(last)
        };
        let hi = (lo + 1).min(last);
        let e_lo = (value - self.levels[lo]).powi(2);
        let e_hi = (value - self.levels[hi]).powi(2);
        let pick = if e_hi < e_lo || (e_hi == e_lo && prefer(self.levels[hi], self.levels[lo])) {
            hi
        } else {
            lo
        };
        pick as u32
    }
}

/// Tie-break between two candidate levels `a` and `b`: smaller |g| wins, then
/// the negative one.
#[inline]
pub(crate) fn prefer(a: f64, b: f64) -> bool {
    a.abs() < b.abs() || (a.abs() == b.abs() && a < b)
}

fn step_to_f16_bits(step: f64) -> u16 {
    let h = f16::from_f64(step);
    if h.is_infinite() || h.is_nan() {
        f16::MAX.to_bits()
    } else if h.to_f64() <= 0.0 {
        f16::from_bits(1).to_bits()
    } else {
        h.to_bits()
    }
}

/// Grid spanning `±‖W‖_∞`. Odd `k` is symmetric about zero; even `k` drops the
/// top level, giving `{−k/2 … k/2−1} · step` with `step = ‖W‖_∞ / (k/2)`.
pub fn build_grid(weights: &DenseMatrix, k: usize) -> Result<Grid> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("grid size must be >= 2, got {k}")));
    }
    let max_abs = weights.max_abs();
    let half_span = if k % 2 == 1 { (k - 1) / 2 } else { k / 2 };
    let step = if max_abs > 0.0 {
        max_abs / half_span as f64
    } else {
        DEGENERATE_STEP
    };
    Grid::with_step(k, step)
}

/// Grid indices of a matrix, row-major, plus the grid and the scan order the
/// symbols will be coded in.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub rows: usize,
    pub cols: usize,
    pub indices: Vec<u32>,
    pub grid: Grid,
    pub scan_order: ScanOrder,
}

impl QuantizedLayer {
    pub fn new(
        rows: usize,
        cols: usize,
        indices: Vec<u32>,
        grid: Grid,
        scan_order: ScanOrder,
    ) -> Result<Self> {
        if indices.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} indices for a {rows}x{cols} layer",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= grid.size()) {
            return Err(Error::InvalidArgument(format!(
                "index {bad} outside grid of size {}",
                grid.size()
            )));
        }
        Ok(Self {
            rows,
            cols,
            indices,
            grid,
            scan_order,
        })
    }

    pub fn dequantize(&self) -> DenseMatrix {
        let data = self.indices.iter().map(|&i| self.grid.level(i)).collect();
        DenseMatrix::new(self.rows, self.cols, data).expect("grid levels are finite")
    }

    /// Symbols in the order the entropy coder consumes them.
    pub fn symbols_in_scan_order(&self) -> Vec<u32> {
        self.scan_order
            .positions(self.rows, self.cols)
            .map(|(i, j)| self.indices[i * self.cols + j])
            .collect()
    }

    /// Inverse of [`symbols_in_scan_order`](Self::symbols_in_scan_order).
    pub fn from_scan_symbols(
        rows: usize,
        cols: usize,
        symbols: &[u32],
        grid: Grid,
        scan_order: ScanOrder,
    ) -> Result<Self> {
        if symbols.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} symbols for a {rows}x{cols} layer",
                symbols.len()
            )));
        }
        let mut indices = vec![0; rows * cols];
        for ((i, j), &s) in scan_order.positions(rows, cols).zip(symbols) {
            indices[i * cols + j] = s;
        }
        Self::new(rows, cols, indices, grid, scan_order)
    }
}

/// Round-to-nearest baseline: each entry independently to its closest level.
pub fn round_to_nearest(weights: &DenseMatrix, grid: &Grid, scan_order: ScanOrder) -> QuantizedLayer {
    let indices = weights.data().iter().map(|&w| grid.nearest_index(w)).collect();
    QuantizedLayer {
        rows: weights.rows(),
        cols: weights.cols(),
        indices,
        grid: grid.clone(),
        scan_order,
    }
}
