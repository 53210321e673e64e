//! Binary PGM (P5, maxval 255). Intensities map linearly between the byte
//! range and [0, 1]; a write/read cycle reproduces the bytes exactly.

use std::fs;
use std::path::Path;

use dsn_core::Image;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: offset {offset}: {message}")]
    Format {
        path: String,
        offset: usize,
        message: String,
    },
}

fn fmt_err(path: &Path, offset: usize, message: impl Into<String>) -> PgmError {
    PgmError::Format {
        path: path.display().to_string(),
        offset,
        message: message.into(),
    }
}

pub fn write_pgm(image: &Image, path: &Path) -> Result<(), PgmError> {
    let mut data = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    data.extend(
        image
            .values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, data).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_pgm(path: &Path) -> Result<Image, PgmError> {
    let data = fs::read(path).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(fmt_err(path, 0, "expected magic P5"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and # comments between header fields
        loop {
            match data.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while data.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_digit() => break,
                Some(&b) => {
                    return Err(fmt_err(path, pos, format!("unexpected byte 0x{b:02x}")))
                }
                None => return Err(fmt_err(path, pos, "truncated header")),
            }
        }
        let start = pos;
        while data.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&data[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| fmt_err(path, start, "numeric header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(fmt_err(path, pos, format!("maxval {maxval}, only 255 supported")));
    }
    // exactly one whitespace byte separates the header from the payload
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(fmt_err(path, pos, "missing header terminator")),
    }
    let expected = width * height;
    let payload = &data[pos..];
    if payload.len() != expected {
        return Err(fmt_err(
            path,
            pos,
            format!("expected {expected} pixel bytes, found {}", payload.len()),
        ));
    }
    let values = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Image::from_values(width, height, values))
}
