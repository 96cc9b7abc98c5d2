//! IDX image/label files (big-endian headers, unsigned byte payloads).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{one_hot, Dataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
const CLASSES: usize = 10;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: file ends at offset {offset} inside the header")))
}

/// Decodes an image file and a label file already in memory.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: bad magic 0x{magic:08x} at offset 0, expected 0x{IMAGES_MAGIC:08x}"
        )));
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let pixels = rows * cols;
    let expected = 16 + n * pixels;
    if images.len() < expected {
        return Err(Error::Format(format!(
            "images: payload truncated at offset {}, expected {expected} bytes",
            images.len()
        )));
    }

    let magic = be_u32(labels, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: bad magic 0x{magic:08x} at offset 0, expected 0x{LABELS_MAGIC:08x}"
        )));
    }
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    if n_labels != n {
        return Err(Error::Format(format!(
            "labels: count {n_labels} at offset 4 does not match {n} images"
        )));
    }
    if labels.len() < 8 + n {
        return Err(Error::Format(format!(
            "labels: payload truncated at offset {}, expected {} bytes",
            labels.len(),
            8 + n
        )));
    }
    if n == 0 || pixels == 0 {
        return Err(Error::Format("images: empty image set".into()));
    }

    let inputs: Vec<f64> = images[16..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    let label_bytes = &labels[8..8 + n];
    if let Some(pos) = label_bytes.iter().position(|&l| usize::from(l) >= CLASSES) {
        return Err(Error::Format(format!(
            "labels: value {} at offset {} is not a digit",
            label_bytes[pos],
            8 + pos
        )));
    }
    let classes: Vec<usize> = label_bytes.iter().map(|&l| usize::from(l)).collect();
    Dataset::new(
        Matrix::from_vec(n, pixels, inputs)?,
        one_hot(&classes, CLASSES)?,
        "idx",
    )
}

/// Loads an IDX image/label pair; files ending in `.gz` are decompressed.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_file(images_path.as_ref())?;
    let labels = read_file(labels_path.as_ref())?;
    let mut ds = parse_idx(&images, &labels)?;
    ds.name = images_path.as_ref().display().to_string();
    Ok(ds)
}

/// Serializes `n` images of `rows×cols` bytes as an IDX image file.
pub fn encode_idx_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
