//! Minimal netpbm support: binary PGM (P5) in, binary PBM (P4) out.
//! Only what the pipeline needs; maxval is pinned to 255.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::raster::{BitGrid, GrayImage};

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected magic {expected}, found {found:?}")]
    BadMagic {
        path: String,
        expected: &'static str,
        found: String,
    },
    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: String, reason: String },
    #[error("{path}: unsupported maxval {maxval} (only 255)")]
    UnsupportedMaxval { path: String, maxval: u64 },
    #[error("{path}: pixel data truncated: need {need} bytes, have {have}")]
    Truncated { path: String, need: usize, have: usize },
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Pulls the next whitespace-delimited token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

fn parse_dim(path: &Path, tok: Option<&[u8]>, what: &str) -> Result<usize, PnmError> {
    let tok = tok.ok_or_else(|| PnmError::BadHeader {
        path: display(path),
        reason: format!("missing {what}"),
    })?;
    let s = std::str::from_utf8(tok).map_err(|_| PnmError::BadHeader {
        path: display(path),
        reason: format!("{what} is not ASCII"),
    })?;
    let v: usize = s.parse().map_err(|_| PnmError::BadHeader {
        path: display(path),
        reason: format!("{what} {s:?} is not a number"),
    })?;
    if v == 0 {
        return Err(PnmError::BadHeader {
            path: display(path),
            reason: format!("{what} is zero"),
        });
    }
    Ok(v)
}

/// Read a binary PGM (P5) file with maxval 255.
///
/// ASCII PGM (P2) and the other netpbm magics are rejected with a
/// distinct error so the CLI can name the actual problem.
pub fn read_pgm(path: &Path) -> Result<GrayImage, PnmError> {
    let bytes = fs::read(path).map_err(|source| PnmError::Io { path: display(path), source })?;
    let mut pos = 0;
    let magic = next_token(&bytes, &mut pos).ok_or_else(|| PnmError::BadHeader {
        path: display(path),
        reason: "empty file".into(),
    })?;
    if magic != b"P5" {
        return Err(PnmError::BadMagic {
            path: display(path),
            expected: "P5",
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let width = parse_dim(path, next_token(&bytes, &mut pos), "width")?;
    let height = parse_dim(path, next_token(&bytes, &mut pos), "height")?;
    let maxval = parse_dim(path, next_token(&bytes, &mut pos), "maxval")? as u64;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval { path: display(path), maxval });
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height;
    let have = bytes.len().saturating_sub(pos.min(bytes.len()));
    if have < need {
        return Err(PnmError::Truncated { path: display(path), need, have });
    }
    let data = bytes[pos..pos + need].to_vec();
    Ok(GrayImage::new(width, height, data))
}

/// Write a binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), PnmError> {
    crate::fsutil::write_atomic(path, &pgm_bytes(img))
        .map_err(|source| PnmError::Io { path: display(path), source })
}

/// Encode as binary PGM (P5), maxval 255.
pub fn pgm_bytes(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + img.pixels().len());
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height()).expect("vec write");
    out.extend_from_slice(img.pixels());
    out
}

/// Write a binary PBM (P4); bit 1 = true (ridge/foreground).
pub fn write_pbm(path: &Path, grid: &BitGrid) -> Result<(), PnmError> {
    crate::fsutil::write_atomic(path, &pbm_bytes(grid))
        .map_err(|source| PnmError::Io { path: display(path), source })
}

/// Encode as binary PBM (P4); true maps to bit 1, rows padded to bytes.
pub fn pbm_bytes(grid: &BitGrid) -> Vec<u8> {
    let row_bytes = grid.width().div_ceil(8);
    let mut out = Vec::with_capacity(32 + row_bytes * grid.height());
    write!(out, "P4\n{} {}\n", grid.width(), grid.height()).expect("vec write");
    for y in 0..grid.height() {
        let mut row = vec![0u8; row_bytes];
        for x in 0..grid.width() {
            if grid.get(x, y) {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

/// Read a binary PBM (P4); bit 1 maps to true.
pub fn read_pbm(path: &Path) -> Result<BitGrid, PnmError> {
    let bytes = fs::read(path).map_err(|source| PnmError::Io { path: display(path), source })?;
    let mut pos = 0;
    let magic = next_token(&bytes, &mut pos).ok_or_else(|| PnmError::BadHeader {
        path: display(path),
        reason: "empty file".into(),
    })?;
    if magic != b"P4" {
        return Err(PnmError::BadMagic {
            path: display(path),
            expected: "P4",
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let width = parse_dim(path, next_token(&bytes, &mut pos), "width")?;
    let height = parse_dim(path, next_token(&bytes, &mut pos), "height")?;
    pos += 1;
    let row_bytes = width.div_ceil(8);
    let need = row_bytes * height;
    let have = bytes.len().saturating_sub(pos.min(bytes.len()));
    if have < need {
        return Err(PnmError::Truncated { path: display(path), need, have });
    }
    let mut grid = BitGrid::new(width, height);
    for y in 0..height {
        let row = &bytes[pos + y * row_bytes..pos + (y + 1) * row_bytes];
        for x in 0..width {
            if row[x / 8] & (0x80 >> (x % 8)) != 0 {
                grid.set(x, y, true);
            }
        }
    }
    Ok(grid)
}
