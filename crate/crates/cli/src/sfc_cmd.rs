use std::path::PathBuf;
use std::time::Instant;

use clap::Subcommand;
use eat_core::pnm::write_ppm;
use eat_core::render::{render_2d, render_hilbert_3d};
use eat_core::sfc::{curve_index, curve_point, deserialize, serialize, Image};
use eat_core::{CurveKind, Grid};

use crate::{CliError, CliResult, Global, Table};

#[derive(Debug, Subcommand)]
pub enum SfcCommand {
    /// Draw a curve traversal as a binary PPM.
    Render {
        /// sweep, scan, zorder, hilbert or sis:<side>
        #[arg(long)]
        curve: CurveKind,
        /// Grid side in cells.
        #[arg(long)]
        size: usize,
        /// Isometric view of the 3D Hilbert curve.
        #[arg(long = "3d")]
        three_d: bool,
        /// Pixels per grid cell (2D) or canvas side (3D).
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exhaustive index/point and serialize/deserialize roundtrips.
    Check {
        #[arg(long, default_value_t = 64)]
        max_size: usize,
    },
}

pub fn run(cmd: SfcCommand, g: &Global) -> CliResult {
    match cmd {
        SfcCommand::Render {
            curve,
            size,
            three_d,
            scale,
            out,
        } => {
            let img = if three_d {
                if curve != CurveKind::Hilbert {
                    return Err(CliError::Invalid(format!("--3d supports only --curve hilbert, got {curve}")));
                }
                render_hilbert_3d(size, scale.unwrap_or(512))?
            } else {
                render_2d(curve, Grid::square(size), scale.unwrap_or(16))?
            };
            write_ppm(&out, &img)?;
            g.progress(format!("wrote {} ({}x{})", out.display(), img.width, img.height));
            Ok(())
        }
        SfcCommand::Check { max_size } => check(max_size, g),
    }
}

#[derive(Default)]
struct Tally {
    grids: usize,
    cells: usize,
    failures: usize,
}

fn roundtrip(kind: CurveKind, grid: Grid) -> usize {
    let mut failures = 0;
    let mut seen = vec![false; grid.len()];
    for k in 0..grid.len() {
        match curve_point(kind, grid, k) {
            Ok((x, y)) => {
                let repeat = std::mem::replace(&mut seen[y * grid.width + x], true);
                if repeat || curve_index(kind, grid, x, y).ok() != Some(k) {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let data: Vec<u32> = (0..grid.len() as u32).collect();
    let ok = Image::new(grid.height, grid.width, 1, data).ok().is_some_and(|img| {
        serialize(&img, kind)
            .and_then(|seq| deserialize(&seq, kind, grid))
            .is_ok_and(|back| back == img)
    });
    failures + usize::from(!ok)
}

fn check(max_size: usize, g: &Global) -> CliResult {
    if max_size == 0 {
        return Err(CliError::Invalid("--max-size must be at least 1".into()));
    }
    let start = Instant::now();
    let mut families: Vec<(String, Vec<(CurveKind, Grid)>)> = Vec::new();
    let all_grids = || (1..=max_size).flat_map(|h| (1..=max_size).map(move |w| Grid::new(h, w)));
    for kind in [CurveKind::Sweep, CurveKind::Scan] {
        families.push((kind.to_string(), all_grids().map(|gr| (kind, gr)).collect()));
    }
    for kind in [CurveKind::ZOrder, CurveKind::Hilbert] {
        let squares = (1..)
            .map(|p| 1usize << p)
            .take_while(|&s| s <= max_size)
            .map(|s| (kind, Grid::square(s)))
            .collect();
        families.push((kind.to_string(), squares));
    }
    for s in [2, 4, 8] {
        let kind = CurveKind::SweepInSweep(s);
        let grids = all_grids()
            .filter(|gr| gr.height % s == 0 && gr.width % s == 0)
            .map(|gr| (kind, gr))
            .collect();
        families.push((kind.to_string(), grids));
    }
    let mut table = Table::new(["curve", "grids", "cells", "failures", "status"]);
    let mut total_failures = 0;
    for (name, cases) in families {
        let mut t = Tally::default();
        for (kind, grid) in cases {
            t.grids += 1;
            t.cells += grid.len();
            t.failures += roundtrip(kind, grid);
        }
        total_failures += t.failures;
        let status = if t.failures == 0 { "pass" } else { "FAIL" };
        table.row([name, t.grids.to_string(), t.cells.to_string(), t.failures.to_string(), status.into()]);
    }
    print!("{}", table.render(g.format));
    g.progress(format!("checked in {:.2}s", start.elapsed().as_secs_f64()));
    if total_failures > 0 {
        return Err(CliError::Invalid(format!("{total_failures} roundtrip failures")));
    }
    Ok(())
}
