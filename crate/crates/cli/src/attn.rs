use std::fmt::Write;
use std::path::PathBuf;

use clap::Subcommand;
use eat_core::checkpoint;
use eat_core::diff::Tape;
use eat_core::head::{AttentionMaps, AttentionRecorder};
use eat_core::pnm::{pgm_bytes, read_pnm};
use eat_core::sfc::curve_order;

use crate::train_cmd::write_file;
use crate::{CliError, CliResult, Global};

#[derive(Debug, Subcommand)]
pub enum AttnCommand {
    /// Write the task-head attention maps of one image as PGMs and a CSV.
    Dump {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grayscale P5 image matching the checkpoint's input size.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Spreads per-token weights over the pixels each token covers, scaled so
/// the largest weight is white.
fn token_map_to_pixels(weights: &[f64], pixel_token: &[usize]) -> Vec<u8> {
    let peak = weights.iter().copied().fold(0.0f64, f64::max);
    pixel_token
        .iter()
        .map(|&t| {
            if peak > 0.0 {
                (255.0 * weights[t] / peak).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn run(cmd: AttnCommand, g: &Global) -> CliResult {
    let AttnCommand::Dump {
        checkpoint: ckpt,
        input,
        out_dir,
    } = cmd;
    let model = checkpoint::load::<f32>(&ckpt)?.model;
    let cfg = &model.cfg;
    let img = read_pnm(&input)?;
    if img.channels != cfg.channels || img.width != cfg.image_size || img.height != cfg.image_size {
        return Err(CliError::Invalid(format!(
            "{} is {}x{} with {} channel(s); {} expects {}x{} with {}",
            input.display(),
            img.width,
            img.height,
            img.channels,
            ckpt.display(),
            cfg.image_size,
            cfg.image_size,
            cfg.channels
        )));
    }
    let pixels: Vec<f32> = img.data.iter().map(|&b| b as f32 / 255.0).collect();
    let mut tape = Tape::inference();
    let mut recorder = AttentionRecorder::new();
    let logits = model.forward(&mut tape, &pixels, Some(&mut recorder))?;
    let prediction = eat_core::model::argmax_rows(tape.value(logits))[0];
    let maps = recorder.head_maps(&tape, 0)?;

    // token covering each pixel, in row-major pixel order
    let grid = cfg.grid();
    let mut pixel_token = vec![0usize; grid.len()];
    for (k, (x, y)) in curve_order(cfg.sfc_mode, grid)?.into_iter().enumerate() {
        pixel_token[y * grid.width + x] = k / cfg.slice_len;
    }

    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let side = cfg.image_size;
    let mut csv = String::from("layer,head,query,token,weight\n");
    let mut written = 0;
    let AttentionMaps {
        layers, heads, queries, ..
    } = maps;
    for layer in 0..layers {
        let mean = maps.head_mean(layer);
        let per_head = (0..heads).map(|h| (h.to_string(), maps.map(layer, h).to_vec()));
        for (label, map) in per_head.chain(std::iter::once(("mean".to_string(), mean))) {
            for q in 0..queries {
                let row = &map[q * maps.keys..(q + 1) * maps.keys];
                for (t, w) in row.iter().enumerate() {
                    writeln!(csv, "{layer},{label},{q},{t},{w:e}").expect("string write");
                }
                let suffix = if queries > 1 { format!("_q{q}") } else { String::new() };
                let path = out_dir.join(format!("layer{layer}_head{label}{suffix}.pgm"));
                write_file(&path, &pgm_bytes(side, side, &token_map_to_pixels(row, &pixel_token)))?;
                written += 1;
            }
        }
    }
    write_file(&out_dir.join("attention.csv"), csv.as_bytes())?;
    g.progress(format!(
        "predicted class {prediction}; wrote {written} maps and attention.csv to {}",
        out_dir.display()
    ));
    Ok(())
}
