use std::path::Path;

use super::LabeledImage;
use crate::error::{Error, IdxError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, path: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            IdxError::Truncated {
                path: path.to_string(),
                needed: at + 4,
                found: bytes.len(),
            }
            .into()
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &str) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(IdxError::WrongMagic {
            path: path.to_string(),
            expected,
            found,
        }
        .into());
    }
    Ok(())
}

fn ensure_len(bytes: &[u8], needed: usize, path: &str) -> Result<()> {
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            path: path.to_string(),
            needed,
            found: bytes.len(),
        }
        .into());
    }
    Ok(())
}

/// Parses an IDX image file and its label file from memory.
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    images_name: &str,
    labels_name: &str,
) -> Result<Vec<LabeledImage>> {
    check_magic(images, IMAGES_MAGIC, images_name)?;
    check_magic(labels, LABELS_MAGIC, labels_name)?;
    let n_img = be_u32(images, 4, images_name)? as usize;
    let rows = be_u32(images, 8, images_name)? as usize;
    let cols = be_u32(images, 12, images_name)? as usize;
    let n_lab = be_u32(labels, 4, labels_name)? as usize;
    if n_img != n_lab {
        return Err(IdxError::CountMismatch {
            images: n_img,
            labels: n_lab,
        }
        .into());
    }
    let px = rows * cols;
    ensure_len(images, 16 + n_img * px, images_name)?;
    ensure_len(labels, 8 + n_lab, labels_name)?;
    Ok((0..n_img)
        .map(|i| LabeledImage {
            rows,
            cols,
            pixels: images[16 + i * px..16 + (i + 1) * px]
                .iter()
                .map(|&b| b as f32 / 255.0)
                .collect(),
            label: labels[8 + i] as u32,
        })
        .collect())
}

/// Loads an IDX image/label file pair; pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<LabeledImage>> {
    let images = std::fs::read(images_path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", images_path.display()),
        ))
    })?;
    let labels = std::fs::read(labels_path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", labels_path.display()),
        ))
    })?;
    parse_idx(
        &images,
        &labels,
        &images_path.display().to_string(),
        &labels_path.display().to_string(),
    )
}

/// Serializes images and labels as an IDX pair (pixels re-quantized to u8).
pub fn encode_idx(images: &[LabeledImage]) -> (Vec<u8>, Vec<u8>) {
    let (rows, cols) = images.first().map(|i| (i.rows, i.cols)).unwrap_or((0, 0));
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut lab = Vec::with_capacity(8 + images.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(images.len() as u32).to_be_bytes());
    for im in images {
        img.extend(im.pixels.iter().map(|&p| quantize(p)));
        lab.push(im.label as u8);
    }
    (img, lab)
}

pub(crate) fn quantize(p: f32) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

/// File names of the canonical MNIST distribution.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Loads the MNIST training and test splits from `root`.
pub fn load_mnist(root: &Path) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let train = load_idx(&root.join(MNIST_FILES[0]), &root.join(MNIST_FILES[1]))?;
    let test = load_idx(&root.join(MNIST_FILES[2]), &root.join(MNIST_FILES[3]))?;
    Ok((train, test))
}
