//! IDX (MNIST) ingestion: big-endian headers, unsigned-byte payloads.
//! Parsing is bit-exact: re-serializing a parsed set reproduces the source
//! files byte for byte.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};
use dsn_core::Image;
use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct MnistSet {
    pub images: Vec<Image>,
    pub labels: Vec<u8>,
    pub split: Split,
}

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: offset {offset}: expected {expected}, found {found}")]
    Format {
        path: String,
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("{images} images but {labels} labels")]
    LengthMismatch { images: usize, labels: usize },
    #[error("label {label} outside 0..=9")]
    LabelRange { label: u8 },
}

fn fmt_err(path: &Path, offset: usize, expected: String, found: String) -> IdxError {
    IdxError::Format {
        path: path.display().to_string(),
        offset,
        expected,
        found,
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_be_u32(path: &Path, data: &[u8], offset: usize) -> Result<u32, IdxError> {
    let end = offset + 4;
    if data.len() < end {
        return Err(fmt_err(
            path,
            offset,
            format!("{end} header bytes"),
            format!("{} bytes total", data.len()),
        ));
    }
    Ok(BigEndian::read_u32(&data[offset..end]))
}

pub fn read_idx_images(path: &Path) -> Result<Vec<Image>, IdxError> {
    let data = read_file(path)?;
    let magic = read_be_u32(path, &data, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(fmt_err(
            path,
            0,
            format!("magic 0x{IMAGE_MAGIC:08x}"),
            format!("0x{magic:08x}"),
        ));
    }
    let count = read_be_u32(path, &data, 4)? as usize;
    let rows = read_be_u32(path, &data, 8)? as usize;
    let cols = read_be_u32(path, &data, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if data.len() != expected {
        return Err(fmt_err(
            path,
            16,
            format!("{expected} bytes for {count} images of {rows}x{cols}"),
            format!("{} bytes", data.len()),
        ));
    }
    Ok(data[16..]
        .chunks_exact(rows * cols)
        .map(|px| {
            Image::from_values(cols, rows, px.iter().map(|&b| b as f64 / 255.0).collect())
        })
        .collect())
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, IdxError> {
    let data = read_file(path)?;
    let magic = read_be_u32(path, &data, 0)?;
    if magic != LABEL_MAGIC {
        return Err(fmt_err(
            path,
            0,
            format!("magic 0x{LABEL_MAGIC:08x}"),
            format!("0x{magic:08x}"),
        ));
    }
    let count = read_be_u32(path, &data, 4)? as usize;
    let expected = 8 + count;
    if data.len() != expected {
        return Err(fmt_err(
            path,
            8,
            format!("{expected} bytes for {count} labels"),
            format!("{} bytes", data.len()),
        ));
    }
    Ok(data[8..].to_vec())
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<MnistSet, IdxError> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(IdxError::LengthMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l > 9) {
        return Err(IdxError::LabelRange { label });
    }
    Ok(MnistSet {
        images,
        labels,
        split,
    })
}

pub fn write_idx_images(images: &[Image], path: &Path) -> Result<(), IdxError> {
    let (rows, cols) = images
        .first()
        .map(|i| (i.height, i.width))
        .unwrap_or((0, 0));
    let mut data = Vec::with_capacity(16 + images.len() * rows * cols);
    data.write_u32::<BigEndian>(IMAGE_MAGIC).unwrap();
    data.write_u32::<BigEndian>(images.len() as u32).unwrap();
    data.write_u32::<BigEndian>(rows as u32).unwrap();
    data.write_u32::<BigEndian>(cols as u32).unwrap();
    for img in images {
        data.extend(img.values.iter().map(|&v| (v * 255.0).round() as u8));
    }
    fs::write(path, data).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_idx_labels(labels: &[u8], path: &Path) -> Result<(), IdxError> {
    let mut data = Vec::with_capacity(8 + labels.len());
    data.write_u32::<BigEndian>(LABEL_MAGIC).unwrap();
    data.write_u32::<BigEndian>(labels.len() as u32).unwrap();
    data.extend_from_slice(labels);
    fs::write(path, data).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })
}
