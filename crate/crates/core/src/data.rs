//! IDX image and label files.
//!
//! An IDX file starts with two zero bytes, a dtype byte (`0x08` for unsigned
//! bytes) and a dimension count, followed by big-endian `u32` sizes and the
//! raw data.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Grayscale images with one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxDataset {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// `count x height x width` bytes, row-major.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub images_path: PathBuf,
    pub labels_path: PathBuf,
}

struct IdxArray {
    dims: Vec<usize>,
    data: Vec<u8>,
    count_offset: u64,
}

fn parse_idx(bytes: &[u8], path: &Path, ndims: u8) -> Result<IdxArray> {
    let magic = bytes.get(..4).ok_or_else(|| Error::TruncatedFile {
        path: path.into(),
        offset: bytes.len() as u64,
        reason: "file shorter than the 4-byte magic".into(),
    })?;
    if magic[0] != 0 || magic[1] != 0 || magic[2] != 0x08 || magic[3] != ndims {
        return Err(Error::BadMagic {
            path: path.into(),
            offset: 0,
            found: magic.to_vec(),
        });
    }
    let mut dims = Vec::with_capacity(ndims as usize);
    for i in 0..ndims as usize {
        let at = 4 + 4 * i;
        let b = bytes.get(at..at + 4).ok_or_else(|| Error::TruncatedFile {
            path: path.into(),
            offset: bytes.len() as u64,
            reason: format!("header ends before dimension {i}"),
        })?;
        dims.push(u32::from_be_bytes(b.try_into().expect("four bytes")) as usize);
    }
    let start = 4 + 4 * ndims as usize;
    let len: usize = dims.iter().product();
    let data = bytes.get(start..start + len).ok_or_else(|| Error::TruncatedFile {
        path: path.into(),
        offset: bytes.len() as u64,
        reason: format!("dimensions {dims:?} need {len} data bytes from byte {start}"),
    })?;
    Ok(IdxArray {
        dims,
        data: data.to_vec(),
        count_offset: 4,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an image file (`ndims = 3`) and a label file (`ndims = 1`).
pub fn parse_idx_pair(
    image_bytes: &[u8],
    images_path: &Path,
    label_bytes: &[u8],
    labels_path: &Path,
) -> Result<IdxDataset> {
    let images = parse_idx(image_bytes, images_path, 3)?;
    let labels = parse_idx(label_bytes, labels_path, 1)?;
    if images.dims[0] != labels.dims[0] {
        return Err(Error::CountMismatch {
            path: labels_path.into(),
            offset: labels.count_offset,
            images: images.dims[0],
            labels: labels.dims[0],
        });
    }
    Ok(IdxDataset {
        count: images.dims[0],
        height: images.dims[1],
        width: images.dims[2],
        images: images.data,
        labels: labels.data,
        images_path: images_path.into(),
        labels_path: labels_path.into(),
    })
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxDataset> {
    parse_idx_pair(&read(images_path)?, images_path, &read(labels_path)?, labels_path)
}

/// Conventional file names of the digit corpus inside `dir`.
pub fn digit_paths(dir: &Path, split_train: bool) -> (PathBuf, PathBuf) {
    let prefix = if split_train { "train" } else { "t10k" };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

impl IdxDataset {
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.images[i * n..(i + 1) * n]
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m as usize + 1)
    }

    /// The first `n` examples.
    pub fn truncated(&self, n: usize) -> IdxDataset {
        let n = n.min(self.count);
        let px = self.height * self.width;
        IdxDataset {
            count: n,
            images: self.images[..n * px].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    /// Centers every image on a `side x side` zero canvas; extra padding
    /// goes to the bottom and right.
    pub fn padded(&self, side: usize) -> Result<IdxDataset> {
        if side < self.height || side < self.width {
            return Err(Error::InvalidConfig(format!(
                "--pad-to {side} is smaller than the {}x{} images",
                self.height, self.width
            )));
        }
        let (top, left) = ((side - self.height) / 2, (side - self.width) / 2);
        let mut images = vec![0u8; self.count * side * side];
        for i in 0..self.count {
            let src = self.image(i);
            let dst = &mut images[i * side * side..(i + 1) * side * side];
            for y in 0..self.height {
                let row = (top + y) * side + left;
                dst[row..row + self.width].copy_from_slice(&src[y * self.width..(y + 1) * self.width]);
            }
        }
        Ok(IdxDataset {
            height: side,
            width: side,
            images,
            ..self.clone()
        })
    }

    /// Pixels of examples `range` scaled to `[0, 1]`.
    pub fn pixels(&self, indices: &[usize]) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend(self.image(i).iter().map(|&b| b as f32 / 255.0));
        }
        out
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i] as usize).collect()
    }
}
