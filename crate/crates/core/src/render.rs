//! Polyline rasterization of curve traversals.

use crate::error::Result;
use crate::pnm::RgbImage;
use crate::sfc::{curve_order, curve_point_3d, CurveKind, Grid, Grid3};

const BACKGROUND: [u8; 3] = [255, 255, 255];

/// Blue at the start of the curve, red at the end.
fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [
        (255.0 * t).round() as u8,
        (64.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8,
        (255.0 * (1.0 - t)).round() as u8,
    ]
}

/// Draws the traversal of `grid` with each cell `cell_px` pixels wide.
pub fn render_2d(kind: CurveKind, grid: Grid, cell_px: usize) -> Result<RgbImage> {
    let order = curve_order(kind, grid)?;
    let cell = cell_px.max(1) as i64;
    let mut img = RgbImage::filled(grid.width * cell as usize, grid.height * cell as usize, BACKGROUND);
    let center = |(x, y): (usize, usize)| (x as i64 * cell + cell / 2, y as i64 * cell + cell / 2);
    let steps = order.len().saturating_sub(1).max(1) as f64;
    for (k, w) in order.windows(2).enumerate() {
        img.line(center(w[0]), center(w[1]), ramp(k as f64 / steps));
    }
    if let Some(&start) = order.first() {
        let (cx, cy) = center(start);
        for dy in -1..=1 {
            for dx in -1..=1 {
                img.put(cx + dx, cy + dy, [0, 0, 0]);
            }
        }
    }
    Ok(img)
}

/// Isometric projection of the 3D Hilbert traversal onto a square canvas.
pub fn render_hilbert_3d(side: usize, canvas_px: usize) -> Result<RgbImage> {
    let grid = Grid3::cube(side);
    let points = (0..grid.len())
        .map(|k| curve_point_3d(grid, k))
        .collect::<Result<Vec<_>>>()?;
    let (c, s) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
    let project = |(x, y, z): (usize, usize, usize)| {
        let (x, y, z) = (x as f64, y as f64, z as f64);
        ((x - z) * c, (x + z) * s - y)
    };
    let projected: Vec<(f64, f64)> = points.iter().copied().map(project).collect();
    let (mut min_u, mut max_u, mut min_v, mut max_v) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(u, v) in &projected {
        min_u = min_u.min(u);
        max_u = max_u.max(u);
        min_v = min_v.min(v);
        max_v = max_v.max(v);
    }
    let canvas = canvas_px.max(16);
    let margin = canvas as f64 * 0.05;
    let span = (max_u - min_u).max(max_v - min_v).max(1e-9);
    let scale = (canvas as f64 - 2.0 * margin) / span;
    let to_px = |(u, v): (f64, f64)| {
        (
            (margin + (u - min_u) * scale).round() as i64,
            (margin + (v - min_v) * scale).round() as i64,
        )
    };
    let mut img = RgbImage::filled(canvas, canvas, BACKGROUND);
    let steps = projected.len().saturating_sub(1).max(1) as f64;
    for (k, w) in projected.windows(2).enumerate() {
        img.line(to_px(w[0]), to_px(w[1]), ramp(k as f64 / steps));
    }
    Ok(img)
}
