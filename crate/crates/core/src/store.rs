//! Text persistence: minutiae files, transform lines, ParamList files,
//! ground-truth transform files, and the fused-template bundle. Every
//! writer goes through the atomic temp-file path, so readers never observe
//! partial content.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::fsutil::write_atomic;
use crate::geometry::{ParamEntry, ParamList, SimilarityTransform};
use crate::minutiae::{Minutia, MinutiaKind, MinutiaeSet};
use crate::pnm::{self, PnmError};
use crate::raster::BitGrid;
use crate::synthesis::MeanFingerprint;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> StoreError {
    StoreError::Parse { path: path.display().to_string(), line, reason: reason.into() }
}

/// `MINUTIAE v1 <count>` header, then `x y kind angle_deg` per minutia
/// with kind T or B and the angle printed to 2 decimals.
pub fn minutiae_text(set: &MinutiaeSet) -> String {
    let mut out = format!("MINUTIAE v1 {}\n", set.len());
    for m in set.iter() {
        writeln!(out, "{} {} {} {:.2}", m.x, m.y, m.kind.letter(), m.angle_deg).expect("string");
    }
    out
}

pub fn write_minutiae(path: &Path, set: &MinutiaeSet) -> Result<(), StoreError> {
    write_atomic(path, minutiae_text(set).as_bytes()).map_err(|e| io_err(path, e))
}

pub fn read_minutiae(path: &Path) -> Result<MinutiaeSet, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let mut head = header.split_whitespace();
    if head.next() != Some("MINUTIAE") || head.next() != Some("v1") {
        return Err(parse_err(path, 1, "expected `MINUTIAE v1 <count>`"));
    }
    let count: usize = head
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(path, 1, "bad count"))?;
    let mut items = Vec::with_capacity(count);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let bad = || parse_err(path, idx + 1, "expected `x y kind angle_deg`");
        let x: i64 = tok.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let y: i64 = tok.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let kind = tok
            .next()
            .and_then(|t| {
                let mut chars = t.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => MinutiaKind::from_letter(c),
                    _ => None,
                }
            })
            .ok_or_else(|| parse_err(path, idx + 1, "kind must be T or B"))?;
        let angle_deg: f64 = tok.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        if tok.next().is_some() {
            return Err(parse_err(path, idx + 1, "trailing tokens"));
        }
        items.push(Minutia { x, y, kind, angle_deg });
    }
    if items.len() != count {
        return Err(parse_err(path, 1, format!("header says {count}, found {}", items.len())));
    }
    Ok(MinutiaeSet::from_vec(items))
}

/// `TRANSFORM v1 s theta tx ty`, six decimal places each.
pub fn transform_line(t: &SimilarityTransform) -> String {
    format!("TRANSFORM v1 {:.6} {:.6} {:.6} {:.6}", t.s, t.theta_deg, t.tx, t.ty)
}

/// Parse the remainder of a line after any id prefix has been consumed.
fn parse_transform_tokens<'a>(
    mut tok: impl Iterator<Item = &'a str>,
) -> Option<SimilarityTransform> {
    if tok.next() != Some("TRANSFORM") || tok.next() != Some("v1") {
        return None;
    }
    let mut next = || tok.next().and_then(|t| t.parse::<f64>().ok());
    Some(SimilarityTransform::new(next()?, next()?, next()?, next()?))
}

pub fn parse_transform_line(line: &str) -> Option<SimilarityTransform> {
    parse_transform_tokens(line.split_whitespace())
}

/// One line per entry: `id TRANSFORM v1 s theta tx ty fitness` for aligned
/// templates, `id FAILED <reason>` otherwise. Ids must be whitespace-free.
pub fn param_list_text(params: &ParamList) -> String {
    let mut out = String::new();
    for e in &params.entries {
        debug_assert!(!e.id().contains(char::is_whitespace));
        match e {
            ParamEntry::Aligned { id, transform, fitness } => {
                writeln!(out, "{id} {} {fitness}", transform_line(transform)).expect("string");
            }
            ParamEntry::Failed { id, reason } => {
                writeln!(out, "{id} FAILED {reason}").expect("string");
            }
        }
    }
    out
}

pub fn write_param_list(path: &Path, params: &ParamList) -> Result<(), StoreError> {
    write_atomic(path, param_list_text(params).as_bytes()).map_err(|e| io_err(path, e))
}

pub fn read_param_list(path: &Path) -> Result<ParamList, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let id = tok.next().expect("non-empty line").to_string();
        let mut rest = tok.peekable();
        match rest.peek().copied() {
            Some("TRANSFORM") => {
                let transform = parse_transform_tokens(rest.by_ref())
                    .ok_or_else(|| parse_err(path, idx + 1, "bad transform"))?;
                let fitness: u32 = rest
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(path, idx + 1, "missing fitness"))?;
                entries.push(ParamEntry::Aligned { id, transform, fitness });
            }
            Some("FAILED") => {
                rest.next();
                let reason = rest.collect::<Vec<_>>().join(" ");
                entries.push(ParamEntry::Failed { id, reason });
            }
            _ => return Err(parse_err(path, idx + 1, "expected TRANSFORM or FAILED")),
        }
    }
    Ok(ParamList { entries })
}

/// Ground truth for one synthetic finger: `impression TRANSFORM v1 ...`
/// per line, sorted by impression number.
pub fn truth_text(entries: &[(u32, SimilarityTransform)]) -> String {
    let mut out = String::new();
    for (imp, t) in entries {
        writeln!(out, "{imp} {}", transform_line(t)).expect("string");
    }
    out
}

pub fn write_truth(path: &Path, entries: &[(u32, SimilarityTransform)]) -> Result<(), StoreError> {
    write_atomic(path, truth_text(entries).as_bytes()).map_err(|e| io_err(path, e))
}

pub fn read_truth(path: &Path) -> Result<Vec<(u32, SimilarityTransform)>, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let imp: u32 = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(path, idx + 1, "bad impression number"))?;
        let t = parse_transform_tokens(tok)
            .ok_or_else(|| parse_err(path, idx + 1, "bad transform"))?;
        out.push((imp, t));
    }
    Ok(out)
}

const MEANF_SKELETON: &str = "skeleton.pbm";
const MEANF_MINUTIAE: &str = "minutiae.txt";
const MEANF_PARAMS: &str = "params.txt";
const MEANF_MANIFEST: &str = "manifest.txt";

/// Persist a fused template as a bundle directory: skeleton PBM, minutiae
/// file, ParamList file, and a one-line manifest
/// `MEANF v1 base=<id> templates=<n> seed=<seed>`. All four files are
/// staged in a temp directory first, so a failed write leaves no bundle.
pub fn write_meanf(dir: &Path, mf: &MeanFingerprint) -> Result<(), StoreError> {
    let name = dir
        .file_name()
        .ok_or_else(|| io_err(dir, std::io::Error::other("bundle path has no name")))?;
    let stage = dir.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::create_dir_all(&stage).map_err(|e| io_err(&stage, e))?;
    let result = (|| -> Result<(), StoreError> {
        pnm::write_pbm(&stage.join(MEANF_SKELETON), &mf.skeleton)?;
        write_minutiae(&stage.join(MEANF_MINUTIAE), &mf.minutiae)?;
        write_param_list(&stage.join(MEANF_PARAMS), &mf.params)?;
        let manifest = format!(
            "MEANF v1 base={} templates={} seed={}\n",
            mf.base_id,
            mf.params.entries.len() + 1,
            mf.seed
        );
        write_atomic(&stage.join(MEANF_MANIFEST), manifest.as_bytes())
            .map_err(|e| io_err(&stage.join(MEANF_MANIFEST), e))?;
        if dir.exists() {
            for f in [MEANF_SKELETON, MEANF_MINUTIAE, MEANF_PARAMS, MEANF_MANIFEST] {
                fs::rename(stage.join(f), dir.join(f)).map_err(|e| io_err(dir, e))?;
            }
            fs::remove_dir_all(&stage).map_err(|e| io_err(&stage, e))?;
        } else {
            fs::rename(&stage, dir).map_err(|e| io_err(dir, e))?;
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&stage);
    }
    result
}

/// Load a bundle written by `write_meanf`. The fingerprint-area mask is not
/// part of the bundle format; it is reconstructed as the full canvas, which
/// is all downstream matching needs.
pub fn read_meanf(dir: &Path) -> Result<MeanFingerprint, StoreError> {
    let manifest_path = dir.join(MEANF_MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let line = text.lines().next().unwrap_or("");
    let mut tok = line.split_whitespace();
    if tok.next() != Some("MEANF") || tok.next() != Some("v1") {
        return Err(parse_err(&manifest_path, 1, "expected `MEANF v1 ...`"));
    }
    let mut base_id = None;
    let mut templates = None;
    let mut seed = None;
    for kv in tok {
        match kv.split_once('=') {
            Some(("base", v)) => base_id = Some(v.to_string()),
            Some(("templates", v)) => templates = v.parse::<usize>().ok(),
            Some(("seed", v)) => seed = v.parse::<u64>().ok(),
            _ => return Err(parse_err(&manifest_path, 1, format!("bad field `{kv}`"))),
        }
    }
    let base_id = base_id.ok_or_else(|| parse_err(&manifest_path, 1, "missing base="))?;
    let templates = templates.ok_or_else(|| parse_err(&manifest_path, 1, "missing templates="))?;
    let seed = seed.ok_or_else(|| parse_err(&manifest_path, 1, "missing seed="))?;
    let skeleton = pnm::read_pbm(&dir.join(MEANF_SKELETON))?;
    let minutiae = read_minutiae(&dir.join(MEANF_MINUTIAE))?;
    let params = read_param_list(&dir.join(MEANF_PARAMS))?;
    if params.entries.len() + 1 != templates {
        return Err(parse_err(
            &manifest_path,
            1,
            format!("manifest says {templates} templates, params file has {}", params.entries.len()),
        ));
    }
    let mask = BitGrid::filled(skeleton.width(), skeleton.height(), true);
    Ok(MeanFingerprint { base_id, skeleton, mask, minutiae, params, seed })
}
