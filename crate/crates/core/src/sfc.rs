//! Finite space-filling curves over pixel grids.
//!
//! Every curve is a bijection between the cells of a grid and the index range
//! `[0, H*W)`. Indices are zero-based. Coordinates are `(x, y)` with `x` the
//! column and `y` the row, origin at the top-left cell.
//!
//! Conventions:
//! - `Sweep`: row-major, `k = y*W + x`.
//! - `Scan`: serpentine, even rows left to right, odd rows right to left.
//! - `ZOrder`: Morton code with `x` on the even bits (bit 0 upward) and `y` on
//!   the odd bits.
//! - `Hilbert`: starts at `(0, 0)`; the order-1 curve visits
//!   `(0,0), (0,1), (1,1), (1,0)` and the full curve ends at `(W-1, 0)`.
//! - `SweepInSweep(s)`: `s x s` blocks in row-major block order, row-major
//!   inside each block. One block holds `s*s` consecutive indices.
//!
//! `ZOrder` and `Hilbert` reject anything but square power-of-two grids. Pad
//! before serializing if the image does not fit.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurveKind {
    Sweep,
    Scan,
    ZOrder,
    Hilbert,
    /// Blocked sweep with square blocks of the given side.
    SweepInSweep(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Self {
        Grid { height, width }
    }

    pub fn square(side: usize) -> Self {
        Grid::new(side, side)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// A cubic grid for the 3D Hilbert curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid3 {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
}

impl Grid3 {
    pub fn cube(side: usize) -> Self {
        Grid3 {
            height: side,
            width: side,
            depth: side,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.depth
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CurveKind {
    /// Checks that this curve is defined on `grid`.
    pub fn validate(&self, grid: Grid) -> Result<()> {
        if grid.height == 0 || grid.width == 0 {
            return Err(Error::InvalidGrid(format!("{grid} grid has no cells")));
        }
        match *self {
            CurveKind::Sweep | CurveKind::Scan => Ok(()),
            CurveKind::ZOrder | CurveKind::Hilbert => {
                if grid.height != grid.width || !grid.width.is_power_of_two() {
                    Err(Error::InvalidGrid(format!(
                        "{self} needs a square power-of-two grid, got {grid}"
                    )))
                } else {
                    Ok(())
                }
            }
            CurveKind::SweepInSweep(side) => {
                if side == 0 || !grid.height.is_multiple_of(side) || !grid.width.is_multiple_of(side) {
                    Err(Error::InvalidGrid(format!(
                        "slice side {side} must divide both sides of {grid}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Pixels per slice when this curve drives slice embedding: `s*s` for
    /// `SweepInSweep(s)`, `None` for curves without a natural slice length.
    pub fn natural_slice_len(&self) -> Option<usize> {
        match *self {
            CurveKind::SweepInSweep(side) => Some(side * side),
            _ => None,
        }
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurveKind::Sweep => f.write_str("sweep"),
            CurveKind::Scan => f.write_str("scan"),
            CurveKind::ZOrder => f.write_str("zorder"),
            CurveKind::Hilbert => f.write_str("hilbert"),
            CurveKind::SweepInSweep(s) => write!(f, "sis:{s}"),
        }
    }
}

impl FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "sweep" => Ok(CurveKind::Sweep),
            "scan" => Ok(CurveKind::Scan),
            "zorder" | "z-order" | "morton" => Ok(CurveKind::ZOrder),
            "hilbert" => Ok(CurveKind::Hilbert),
            other => {
                let side = other
                    .strip_prefix("sis:")
                    .and_then(|v| v.parse::<usize>().ok())
                    .filter(|&v| v > 0)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "unknown curve {s:?}; expected sweep, scan, zorder, hilbert or sis:<side>"
                        ))
                    })?;
                Ok(CurveKind::SweepInSweep(side))
            }
        }
    }
}

impl serde::Serialize for CurveKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for CurveKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_point(grid: Grid, x: usize, y: usize) -> Result<()> {
    if x >= grid.width || y >= grid.height {
        return Err(Error::OutOfBounds(format!(
            "cell ({x}, {y}) outside {grid} grid"
        )));
    }
    Ok(())
}

fn check_index(len: usize, k: usize) -> Result<()> {
    if k >= len {
        return Err(Error::OutOfBounds(format!(
            "index {k} outside [0, {len})"
        )));
    }
    Ok(())
}

/// Maps cell `(x, y)` to its position along the curve.
pub fn curve_index(kind: CurveKind, grid: Grid, x: usize, y: usize) -> Result<usize> {
    kind.validate(grid)?;
    check_point(grid, x, y)?;
    let w = grid.width;
    Ok(match kind {
        CurveKind::Sweep => y * w + x,
        CurveKind::Scan => {
            if y.is_multiple_of(2) {
                y * w + x
            } else {
                y * w + (w - 1 - x)
            }
        }
        CurveKind::ZOrder => morton_encode(x as u64, y as u64) as usize,
        CurveKind::Hilbert => hilbert_xy_to_d(w as u64, x as u64, y as u64) as usize,
        CurveKind::SweepInSweep(s) => {
            let blocks_per_row = w / s;
            let block = (y / s) * blocks_per_row + x / s;
            block * s * s + (y % s) * s + x % s
        }
    })
}

/// Inverse of [`curve_index`].
pub fn curve_point(kind: CurveKind, grid: Grid, k: usize) -> Result<(usize, usize)> {
    kind.validate(grid)?;
    check_index(grid.len(), k)?;
    let w = grid.width;
    Ok(match kind {
        CurveKind::Sweep => (k % w, k / w),
        CurveKind::Scan => {
            let y = k / w;
            let r = k % w;
            if y.is_multiple_of(2) {
                (r, y)
            } else {
                (w - 1 - r, y)
            }
        }
        CurveKind::ZOrder => {
            let (x, y) = morton_decode(k as u64);
            (x as usize, y as usize)
        }
        CurveKind::Hilbert => {
            let (x, y) = hilbert_d_to_xy(w as u64, k as u64);
            (x as usize, y as usize)
        }
        CurveKind::SweepInSweep(s) => {
            let area = s * s;
            let block = k / area;
            let within = k % area;
            let blocks_per_row = w / s;
            let bx = block % blocks_per_row;
            let by = block / blocks_per_row;
            (bx * s + within % s, by * s + within / s)
        }
    })
}

/// The full traversal: entry `k` is the cell visited at step `k`.
pub fn curve_order(kind: CurveKind, grid: Grid) -> Result<Vec<(usize, usize)>> {
    kind.validate(grid)?;
    (0..grid.len()).map(|k| curve_point(kind, grid, k)).collect()
}

fn spread_bits(mut v: u64) -> u64 {
    v &= 0x0000_0000_ffff_ffff;
    v = (v | (v << 16)) & 0x0000_ffff_0000_ffff;
    v = (v | (v << 8)) & 0x00ff_00ff_00ff_00ff;
    v = (v | (v << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    v = (v | (v << 2)) & 0x3333_3333_3333_3333;
    (v | (v << 1)) & 0x5555_5555_5555_5555
}

fn compact_bits(mut v: u64) -> u64 {
    v &= 0x5555_5555_5555_5555;
    v = (v | (v >> 1)) & 0x3333_3333_3333_3333;
    v = (v | (v >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    v = (v | (v >> 4)) & 0x00ff_00ff_00ff_00ff;
    v = (v | (v >> 8)) & 0x0000_ffff_0000_ffff;
    (v | (v >> 16)) & 0x0000_0000_ffff_ffff
}

fn morton_encode(x: u64, y: u64) -> u64 {
    spread_bits(x) | (spread_bits(y) << 1)
}

fn morton_decode(code: u64) -> (u64, u64) {
    (compact_bits(code), compact_bits(code >> 1))
}

fn hilbert_rotate(n: u64, x: &mut u64, y: &mut u64, rx: u64, ry: u64) {
    if ry == 0 {
        if rx == 1 {
            *x = n - 1 - *x;
            *y = n - 1 - *y;
        }
        std::mem::swap(x, y);
    }
}

fn hilbert_xy_to_d(n: u64, mut x: u64, mut y: u64) -> u64 {
    let mut d = 0;
    let mut s = n / 2;
    while s > 0 {
        let rx = u64::from(x & s > 0);
        let ry = u64::from(y & s > 0);
        d += s * s * ((3 * rx) ^ ry);
        hilbert_rotate(n, &mut x, &mut y, rx, ry);
        s /= 2;
    }
    d
}

fn hilbert_d_to_xy(n: u64, d: u64) -> (u64, u64) {
    let (mut x, mut y) = (0, 0);
    let mut t = d;
    let mut s = 1;
    while s < n {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        hilbert_rotate(s, &mut x, &mut y, rx, ry);
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

fn validate_3d(grid: Grid3) -> Result<u32> {
    let side = grid.width;
    if side == 0 || grid.height != side || grid.depth != side || !side.is_power_of_two() {
        return Err(Error::InvalidGrid(format!(
            "3D hilbert needs a cubic power-of-two grid, got {}x{}x{}",
            grid.height, grid.width, grid.depth
        )));
    }
    Ok(side.trailing_zeros())
}

// Skilling's transposed-index form: bit j of axis i is bit (j*3 + 2 - i) of
// the Hilbert index.
fn axes_to_transpose(axes: &mut [u64; 3], bits: u32) {
    let m = 1u64 << (bits - 1);
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if axes[i] & q != 0 {
                axes[0] ^= p;
            } else {
                let t = (axes[0] ^ axes[i]) & p;
                axes[0] ^= t;
                axes[i] ^= t;
            }
        }
        q >>= 1;
    }
    for i in 1..3 {
        axes[i] ^= axes[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if axes[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for a in axes.iter_mut() {
        *a ^= t;
    }
}

fn transpose_to_axes(x: &mut [u64; 3], bits: u32) {
    let n = 2u64 << (bits - 1);
    let t = x[2] >> 1;
    for i in (1..3).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    let mut q = 2;
    while q != n {
        let p = q - 1;
        for i in (0..3).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}

/// 3D Hilbert index of voxel `(x, y, z)`; starts at the origin.
pub fn curve_index_3d(grid: Grid3, x: usize, y: usize, z: usize) -> Result<usize> {
    let bits = validate_3d(grid)?;
    if x >= grid.width || y >= grid.height || z >= grid.depth {
        return Err(Error::OutOfBounds(format!(
            "voxel ({x}, {y}, {z}) outside {}^3 grid",
            grid.width
        )));
    }
    if bits == 0 {
        return Ok(0);
    }
    let mut axes = [x as u64, y as u64, z as u64];
    axes_to_transpose(&mut axes, bits);
    let mut d = 0u64;
    for j in (0..bits).rev() {
        for a in axes {
            d = (d << 1) | ((a >> j) & 1);
        }
    }
    Ok(d as usize)
}

/// Inverse of [`curve_index_3d`].
pub fn curve_point_3d(grid: Grid3, k: usize) -> Result<(usize, usize, usize)> {
    let bits = validate_3d(grid)?;
    check_index(grid.len(), k)?;
    if bits == 0 {
        return Ok((0, 0, 0));
    }
    let mut axes = [0u64; 3];
    let d = k as u64;
    for j in 0..bits {
        for (i, a) in axes.iter_mut().enumerate() {
            let bit = (d >> (j * 3 + 2 - i as u32)) & 1;
            *a |= bit << j;
        }
    }
    transpose_to_axes(&mut axes, bits);
    Ok((axes[0] as usize, axes[1] as usize, axes[2] as usize))
}

/// A dense `H x W x C` image in row-major, channel-last order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Image<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.height, self.width)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }
}

/// Pixels listed in curve order, `len x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSequence<T> {
    pub kind: CurveKind,
    pub grid: Grid,
    pub channels: usize,
    pub values: Vec<T>,
}

impl<T> PixelSequence<T> {
    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.channels).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattens `image` along `kind`: row `k` of the output is the pixel at
/// `curve_point(k)`.
pub fn serialize<T: Copy>(image: &Image<T>, kind: CurveKind) -> Result<PixelSequence<T>> {
    let grid = image.grid();
    let order = curve_order(kind, grid)?;
    let mut values = Vec::with_capacity(image.data.len());
    for (x, y) in order {
        values.extend_from_slice(image.pixel(x, y));
    }
    Ok(PixelSequence {
        kind,
        grid,
        channels: image.channels,
        values,
    })
}

/// Exact inverse of [`serialize`].
pub fn deserialize<T: Copy + Default>(
    seq: &PixelSequence<T>,
    kind: CurveKind,
    grid: Grid,
) -> Result<Image<T>> {
    kind.validate(grid)?;
    let c = seq.channels;
    let expected = grid.len() * c;
    if seq.values.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: seq.values.len(),
        });
    }
    let mut data = vec![T::default(); expected];
    for (k, px) in seq.values.chunks_exact(c.max(1)).enumerate().take(grid.len()) {
        let (x, y) = curve_point(kind, grid, k)?;
        let start = (y * grid.width + x) * c;
        data[start..start + c].copy_from_slice(px);
    }
    Image::new(grid.height, grid.width, c, data)
}

/// Gather table: `table[k]` is the row-major pixel offset visited at step `k`.
/// Lets batch pipelines serialize without per-pixel validation.
pub fn gather_table(kind: CurveKind, grid: Grid) -> Result<Vec<usize>> {
    Ok(curve_order(kind, grid)?
        .into_iter()
        .map(|(x, y)| y * grid.width + x)
        .collect())
}

/// Mean Manhattan distance between the cells of consecutive indices.
pub fn locality_score(kind: CurveKind, grid: Grid) -> Result<f64> {
    kind.validate(grid)?;
    if grid.len() < 2 {
        return Err(Error::InvalidGrid(format!(
            "locality needs at least two cells, got {grid}"
        )));
    }
    let order = curve_order(kind, grid)?;
    let total: usize = order
        .windows(2)
        .map(|w| w[0].0.abs_diff(w[1].0) + w[0].1.abs_diff(w[1].1))
        .sum();
    Ok(total as f64 / (order.len() - 1) as f64)
}
