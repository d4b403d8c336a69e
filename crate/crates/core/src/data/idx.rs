//! IDX (MNIST-style) image/label files.
//!
//! Images open with `00 00 08 03`, then big-endian u32 count, rows, cols and
//! one unsigned byte per pixel. Labels open with `00 00 08 01`, then a
//! big-endian u32 count and one byte per label.

use std::fs;
use std::path::Path;

use super::Example;
use crate::error::{Error, Result};

const IMAGE_MAGIC: [u8; 4] = [0x00, 0x00, 0x08, 0x03];
const LABEL_MAGIC: [u8; 4] = [0x00, 0x00, 0x08, 0x01];

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Example>> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<usize> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize)
        .ok_or_else(|| Error::Format(format!("{what} header truncated")))
}

/// Pixels are scaled to `[0, 1]` by dividing by 255.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Vec<Example>> {
    if images.get(..4) != Some(&IMAGE_MAGIC[..]) {
        return Err(Error::Format("image file lacks IDX magic 00 00 08 03".into()));
    }
    if labels.get(..4) != Some(&LABEL_MAGIC[..]) {
        return Err(Error::Format("label file lacks IDX magic 00 00 08 01".into()));
    }
    let n_images = be_u32(images, 4, "image")?;
    let rows = be_u32(images, 8, "image")?;
    let cols = be_u32(images, 12, "image")?;
    let n_labels = be_u32(labels, 4, "label")?;
    if n_images != n_labels {
        return Err(Error::Format(format!(
            "{n_images} images but {n_labels} labels"
        )));
    }
    let pixels = rows * cols;
    let body = &images[16..];
    if body.len() < n_images * pixels {
        return Err(Error::Format(format!(
            "image data truncated: {} bytes for {n_images} images of {pixels} pixels",
            body.len()
        )));
    }
    let label_body = &labels[8..];
    if label_body.len() < n_labels {
        return Err(Error::Format("label data truncated".into()));
    }
    Ok(body
        .chunks_exact(pixels.max(1))
        .take(n_images)
        .zip(label_body)
        .map(|(px, &l)| {
            Example::labeled(px.iter().map(|&b| f64::from(b) / 255.0).collect(), l.into())
        })
        .collect())
}
