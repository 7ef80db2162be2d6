//! FVC-style evaluation: dataset ingestion, the minutiae match score,
//! genuine/impostor protocols, and GAR/FAR threshold sweeps. Every score
//! draws its GA seed from (protocol seed, finger ids, impression ids), so
//! reports are bit-identical regardless of thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::alignment::{ga_align, GAConfig, RefineMode};
use crate::geometry::SimilarityTransform;
use crate::minutiae::MinutiaeSet;
use crate::pnm::{self, PnmError};
use crate::raster::GrayImage;
use crate::seeds::derive_seed;
use crate::synthesis::{
    synthesize, FingerprintTemplate, MeanFingerprint, PreprocessParams, SynthesisError,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no usable `<finger>_<impression>.pgm` files in {0}")]
    EmptyDb(String),
    #[error("impostor sampling needs at least 2 fingers, got {0}")]
    NeedTwoFingers(usize),
    #[error("pairs mode needs a finger with at least 2 impressions")]
    NoGenuinePairs,
    #[error("finger {finger}: {source}")]
    Synthesis {
        finger: u32,
        #[source]
        source: SynthesisError,
    },
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One database image, named `<finger>_<impression>.pgm` on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DbEntry {
    pub finger: u32,
    pub impression: u32,
    pub image: GrayImage,
}

/// Load an FVC-layout directory. Files whose names do not parse as
/// `<finger>_<impression>.pgm` with finger >= 1 and impression in 1..=8 are
/// skipped and reported in the returned warning list; non-PGM files are
/// ignored outright. Entries come back sorted by (finger, impression).
pub fn ingest_db(dir: &Path) -> Result<(Vec<DbEntry>, Vec<String>), EvalError> {
    let read = std::fs::read_dir(dir)
        .map_err(|source| EvalError::Io { path: dir.display().to_string(), source })?;
    let mut names: Vec<String> = Vec::new();
    for entry in read {
        let entry = entry.map_err(|source| EvalError::Io { path: dir.display().to_string(), source })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") {
            names.push(name);
        }
    }
    names.sort();
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for name in names {
        let stem = name.trim_end_matches(".pgm");
        let parsed = stem.split_once('_').and_then(|(f, i)| {
            Some((f.parse::<u32>().ok()?, i.parse::<u32>().ok()?))
        });
        let Some((finger, impression)) = parsed else {
            warnings.push(format!("{name}: name does not parse as <finger>_<impression>.pgm, skipped"));
            continue;
        };
        if finger < 1 {
            warnings.push(format!("{name}: finger must be >= 1, skipped"));
            continue;
        }
        if !(1..=8).contains(&impression) {
            warnings.push(format!("{name}: impression {impression} outside 1..=8, skipped"));
            continue;
        }
        let image = pnm::read_pgm(&dir.join(&name))?;
        entries.push(DbEntry { finger, impression, image });
    }
    if entries.is_empty() {
        return Err(EvalError::EmptyDb(dir.display().to_string()));
    }
    entries.sort_by_key(|e| (e.finger, e.impression));
    Ok((entries, warnings))
}

/// Normalized matcher output: `score = matched / max(sizes)`, zero when
/// either side is empty (or too thin for the aligner to run at all).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchScore {
    pub score: f64,
    pub matched: usize,
    pub query_size: usize,
    pub ref_size: usize,
    pub transform: Option<SimilarityTransform>,
}

fn set_score(query: &MinutiaeSet, reference: &MinutiaeSet, cfg: &GAConfig) -> MatchScore {
    let (q, r) = (query.len(), reference.len());
    let empty = MatchScore { score: 0.0, matched: 0, query_size: q, ref_size: r, transform: None };
    if q < 2 || r < 2 {
        return empty;
    }
    match ga_align(query, reference, cfg) {
        Ok(res) => MatchScore {
            score: res.fitness as f64 / q.max(r) as f64,
            matched: res.fitness as usize,
            query_size: q,
            ref_size: r,
            transform: Some(res.transform),
        },
        Err(_) => empty,
    }
}

/// Align the query template onto the fused reference and normalize the
/// matched count by the larger minutiae set.
pub fn match_score(meanf: &MeanFingerprint, query: &FingerprintTemplate, cfg: &GAConfig) -> MatchScore {
    set_score(&query.minutiae, &meanf.minutiae, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GenuineMode {
    /// Score each impression against its finger's fused template.
    #[default]
    MeanF,
    /// Score all same-finger impression pairs (i < j).
    Pairs,
}

impl GenuineMode {
    pub fn name(self) -> &'static str {
        match self {
            GenuineMode::MeanF => "meanf",
            GenuineMode::Pairs => "pairs",
        }
    }
}

/// Evaluation protocol knobs. Impostor pairs are sampled cross-finger with
/// replacement from a seeded stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Protocol {
    pub genuine_mode: GenuineMode,
    pub impostor_pairs: usize,
    pub r: f64,
    pub refine_mode: RefineMode,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            genuine_mode: GenuineMode::MeanF,
            impostor_pairs: 1000,
            r: 3.0,
            // The literal refine formulas hold only under pure translation;
            // the two-point mode stays exact for rotated or scaled fits, so
            // fusion defaults to it. The matcher itself never refines.
            refine_mode: RefineMode::Exact,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub gar: f64,
    pub far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub seed: u64,
    pub fingers: usize,
    pub genuine_mode: GenuineMode,
}

impl EvalReport {
    /// First sweep row whose FAR is within budget; because both curves are
    /// non-increasing this is also the row of highest GAR among them.
    pub fn operating_point_at(&self, max_far: f64) -> Option<SweepRow> {
        self.rows.iter().copied().find(|r| r.far <= max_far)
    }
}

fn fraction_at_least(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

/// 101 rows over thresholds 0.00..=1.00 step 0.01. GAR and FAR are survival
/// fractions, hence non-increasing in the threshold by construction.
pub fn sweep_rows(genuine: &[f64], impostor: &[f64]) -> Vec<SweepRow> {
    (0..=100)
        .map(|i| {
            let threshold = i as f64 / 100.0;
            SweepRow {
                threshold,
                gar: fraction_at_least(genuine, threshold),
                far: fraction_at_least(impostor, threshold),
            }
        })
        .collect()
}

/// Run the full protocol: preprocess every entry, fuse one template per
/// finger, score genuine and impostor pairs, and sweep thresholds.
pub fn evaluate(entries: &[DbEntry], cfg: &GAConfig, protocol: &Protocol) -> Result<EvalReport, EvalError> {
    if entries.is_empty() {
        return Err(EvalError::EmptyDb("<memory>".into()));
    }
    let templates: Vec<(u32, u32, FingerprintTemplate)> = entries
        .par_iter()
        .map(|e| {
            let id = format!("{}_{}", e.finger, e.impression);
            (e.finger, e.impression, FingerprintTemplate::from_image(&id, &e.image, &PreprocessParams::default()))
        })
        .collect();

    let mut by_finger: BTreeMap<u32, Vec<(u32, FingerprintTemplate)>> = BTreeMap::new();
    for (f, i, tpl) in templates {
        by_finger.entry(f).or_default().push((i, tpl));
    }
    let finger_ids: Vec<u32> = by_finger.keys().copied().collect();
    if protocol.impostor_pairs > 0 && finger_ids.len() < 2 {
        return Err(EvalError::NeedTwoFingers(finger_ids.len()));
    }

    let meanfs: BTreeMap<u32, MeanFingerprint> = finger_ids
        .par_iter()
        .map(|&f| {
            let tpls: Vec<FingerprintTemplate> =
                by_finger[&f].iter().map(|(_, t)| t.clone()).collect();
            let mut c = *cfg;
            c.seed = derive_seed(protocol.seed, "synthesize", &[f as u64]);
            synthesize(&tpls, &c, protocol.r, protocol.refine_mode)
                .map(|mf| (f, mf))
                .map_err(|source| EvalError::Synthesis { finger: f, source })
        })
        .collect::<Result<_, _>>()?;

    // (query set, reference set, per-pair seed) jobs, assembled serially so
    // sampling never depends on scheduling.
    let mut genuine_jobs: Vec<(MinutiaeSet, MinutiaeSet, u64)> = Vec::new();
    match protocol.genuine_mode {
        GenuineMode::MeanF => {
            for (&f, tpls) in &by_finger {
                for (i, tpl) in tpls {
                    genuine_jobs.push((
                        tpl.minutiae.clone(),
                        meanfs[&f].minutiae.clone(),
                        derive_seed(protocol.seed, "genuine", &[f as u64, *i as u64]),
                    ));
                }
            }
        }
        GenuineMode::Pairs => {
            for (&f, tpls) in &by_finger {
                for a in 0..tpls.len() {
                    for b in (a + 1)..tpls.len() {
                        genuine_jobs.push((
                            tpls[b].1.minutiae.clone(),
                            tpls[a].1.minutiae.clone(),
                            derive_seed(
                                protocol.seed,
                                "genuine-pair",
                                &[f as u64, tpls[a].0 as u64, tpls[b].0 as u64],
                            ),
                        ));
                    }
                }
            }
            if genuine_jobs.is_empty() {
                return Err(EvalError::NoGenuinePairs);
            }
        }
    }

    let mut impostor_jobs: Vec<(MinutiaeSet, MinutiaeSet, u64)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(protocol.seed, "impostor-sample", &[]));
    for k in 0..protocol.impostor_pairs {
        let a = finger_ids[rng.random_range(0..finger_ids.len())];
        let b = loop {
            let b = finger_ids[rng.random_range(0..finger_ids.len())];
            if b != a {
                break b;
            }
        };
        let seed = derive_seed(protocol.seed, "impostor", &[k as u64]);
        let query = {
            let tpls = &by_finger[&b];
            &tpls[rng.random_range(0..tpls.len())].1.minutiae
        };
        let reference = match protocol.genuine_mode {
            GenuineMode::MeanF => &meanfs[&a].minutiae,
            GenuineMode::Pairs => {
                let tpls = &by_finger[&a];
                &tpls[rng.random_range(0..tpls.len())].1.minutiae
            }
        };
        impostor_jobs.push((query.clone(), reference.clone(), seed));
    }

    let score_all = |jobs: &[(MinutiaeSet, MinutiaeSet, u64)]| -> Vec<f64> {
        jobs.par_iter()
            .map(|(q, r, seed)| {
                let mut c = *cfg;
                c.seed = *seed;
                set_score(q, r, &c).score
            })
            .collect()
    };
    let genuine = score_all(&genuine_jobs);
    let impostor = score_all(&impostor_jobs);
    let rows = sweep_rows(&genuine, &impostor);
    Ok(EvalReport {
        genuine,
        impostor,
        rows,
        seed: protocol.seed,
        fingers: finger_ids.len(),
        genuine_mode: protocol.genuine_mode,
    })
}

/// `threshold,gar,far` header plus one row per sweep threshold, fixed
/// decimal widths so equal reports serialize to identical bytes.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("threshold,gar,far\n");
    for row in &report.rows {
        writeln!(out, "{:.2},{:.6},{:.6}", row.threshold, row.gar, row.far).expect("string");
    }
    out
}

/// One JSON object per line: protocol counts, seed, score means, and the
/// best operating point with FAR <= 0.05.
pub fn report_summary_jsonl(report: &EvalReport) -> String {
    let mean = |v: &[f64]| {
        if v.is_empty() {
            serde_json::Value::Null
        } else {
            serde_json::json!(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let op = report.operating_point_at(0.05).map(|r| {
        serde_json::json!({ "threshold": r.threshold, "gar": r.gar, "far": r.far })
    });
    let record = serde_json::json!({
        "seed": report.seed,
        "fingers": report.fingers,
        "genuine_mode": report.genuine_mode.name(),
        "genuine_count": report.genuine.len(),
        "impostor_count": report.impostor.len(),
        "mean_genuine": mean(&report.genuine),
        "mean_impostor": mean(&report.impostor),
        "operating_point_far_0.05": op,
    });
    format!("{record}\n")
}

pub fn write_report(csv_path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    crate::fsutil::write_atomic(csv_path, report_csv(report).as_bytes())
        .map_err(|source| EvalError::Io { path: csv_path.display().to_string(), source })?;
    let summary_path = csv_path.with_extension("summary.jsonl");
    crate::fsutil::write_atomic(summary_path.as_path(), report_summary_jsonl(report).as_bytes())
        .map_err(|source| EvalError::Io { path: summary_path.display().to_string(), source })
}
