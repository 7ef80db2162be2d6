//! Transform search between two minutiae sets: a seeded genetic algorithm
//! over the legal parameter box, followed by a two-correspondence
//! refinement of the winning transform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    angle_diff_deg, dist, fold_deg, SimilarityTransform, PARAM_BOX,
};
use crate::minutiae::MinutiaeSet;
use crate::raster;
use crate::seeds::derive_seed;
use crate::synthesis::FingerprintTemplate;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("alignment needs at least 2 minutiae per side, got {query} vs {reference}")]
    TooFewMinutiae { query: usize, reference: usize },
    #[error("refinement anchors coincide")]
    CoincidentAnchors,
    #[error("cannot choose a mean template from an empty list")]
    NoTemplates,
}

/// Search parameters. The defaults are the working point used throughout:
/// population 500, 15 generations, mutation 0.1, crossover 0.8, distance
/// threshold 10 px.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GAConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation_p: f64,
    pub crossover_p: f64,
    pub t_d: f64,
    pub angle_tol_deg: f64,
    pub seed: u64,
}

impl Default for GAConfig {
    fn default() -> Self {
        GAConfig {
            population: 500,
            generations: 15,
            mutation_p: 0.1,
            crossover_p: 0.8,
            t_d: 10.0,
            angle_tol_deg: 15.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub transform: SimilarityTransform,
    /// Matched-minutiae count of the returned transform.
    pub fitness: u32,
    pub generations_run: usize,
    /// Best-ever fitness recorded after each generation.
    pub generation_best: Vec<u32>,
}

/// How the GA winner is polished into the final transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefineMode {
    /// The four literal sign-carrying formulas (see `refine`).
    #[default]
    Paper,
    /// Closed-form two-point solution (see `exact_two_point`).
    Exact,
}

/// Greedy one-to-one assignment under `t`: query minutiae in stored order
/// each claim the nearest unclaimed reference minutia of the same kind
/// within `t_d` pixels and `angle_tol_deg` degrees (angles compared after
/// transport through the rotation). Ties break to the lowest reference
/// index.
pub struct Matching {
    /// (query index, reference index) pairs in claim order.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of matched pair distances; tie-break key for the GA.
    pub dist_sum: f64,
}

pub fn greedy_match(
    t: &SimilarityTransform,
    query: &MinutiaeSet,
    reference: &MinutiaeSet,
    t_d: f64,
    angle_tol_deg: f64,
) -> Matching {
    let mut claimed = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let mut dist_sum = 0.0;
    for (qi, q) in query.iter().enumerate() {
        let moved = t.apply(q.x as f64, q.y as f64);
        let moved_angle = fold_deg(q.angle_deg - t.theta_deg);
        let mut best: Option<(usize, f64)> = None;
        for (ri, r) in reference.iter().enumerate() {
            if claimed[ri] || r.kind != q.kind {
                continue;
            }
            let d = dist(moved, (r.x as f64, r.y as f64));
            if d >= t_d || angle_diff_deg(moved_angle, r.angle_deg) >= angle_tol_deg {
                continue;
            }
            // Strict < keeps the lowest reference index on exact ties.
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((ri, d));
            }
        }
        if let Some((ri, d)) = best {
            claimed[ri] = true;
            pairs.push((qi, ri));
            dist_sum += d;
        }
    }
    Matching { pairs, dist_sum }
}

/// Matched-minutiae count of `t` (the GA's objective).
pub fn fitness(
    t: &SimilarityTransform,
    query: &MinutiaeSet,
    reference: &MinutiaeSet,
    t_d: f64,
    angle_tol_deg: f64,
) -> u32 {
    greedy_match(t, query, reference, t_d, angle_tol_deg).pairs.len() as u32
}

// Chromosome layout, most significant field first: s 8 bits, theta 8,
// tx 9, ty 9 = 34 bits, each field linearly quantized over its range.
const S_BITS: u32 = 8;
const THETA_BITS: u32 = 8;
const TX_BITS: u32 = 9;
const TY_BITS: u32 = 9;
const TOTAL_BITS: u32 = S_BITS + THETA_BITS + TX_BITS + TY_BITS;
const CHROM_MASK: u64 = (1 << TOTAL_BITS) - 1;

fn unquantize(q: u64, bits: u32, (lo, hi): (f64, f64)) -> f64 {
    lo + (q as f64 / ((1u64 << bits) - 1) as f64) * (hi - lo)
}

fn decode(chrom: u64) -> SimilarityTransform {
    let s_q = (chrom >> (THETA_BITS + TX_BITS + TY_BITS)) & ((1 << S_BITS) - 1);
    let th_q = (chrom >> (TX_BITS + TY_BITS)) & ((1 << THETA_BITS) - 1);
    let tx_q = (chrom >> TY_BITS) & ((1 << TX_BITS) - 1);
    let ty_q = chrom & ((1 << TY_BITS) - 1);
    SimilarityTransform {
        s: unquantize(s_q, S_BITS, PARAM_BOX.s),
        theta_deg: unquantize(th_q, THETA_BITS, PARAM_BOX.theta_deg),
        tx: unquantize(tx_q, TX_BITS, PARAM_BOX.tx),
        ty: unquantize(ty_q, TY_BITS, PARAM_BOX.ty),
    }
}

/// GA score: matched count first; equal counts are ordered by proximity,
/// the summed distance from each transformed query minutia to its nearest
/// same-kind reference minutia. The count is the objective; the proximity
/// key exists because an integer count is flat almost everywhere (zero
/// off the basin, constant on the matched plateau), which would leave
/// tournament selection nothing to prefer and the search would stall at
/// whatever edge of the plateau it first touched.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Score {
    matched: u32,
    proximity: f64,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        self.matched > other.matched
            || (self.matched == other.matched && self.proximity < other.proximity)
    }
}

/// Sum over query minutiae of the distance to the nearest same-kind
/// reference minutia under `t`. Queries whose kind is absent from the
/// reference contribute a fixed penalty.
fn proximity(t: &SimilarityTransform, query: &MinutiaeSet, reference: &MinutiaeSet) -> f64 {
    const NO_KIND_PENALTY: f64 = 1000.0;
    query
        .iter()
        .map(|q| {
            let moved = t.apply(q.x as f64, q.y as f64);
            reference
                .iter()
                .filter(|r| r.kind == q.kind)
                .map(|r| dist(moved, (r.x as f64, r.y as f64)))
                .fold(f64::INFINITY, f64::min)
                .min(NO_KIND_PENALTY)
        })
        .sum()
}

/// Search the parameter box for the transform mapping `query` onto
/// `reference`.
///
/// Generational GA: tournament selection of size 3, single-point
/// crossover with probability `crossover_p`, per-bit mutation
/// `mutation_p / 34`, elitism of 1 (the best-ever individual re-enters
/// each generation). Deterministic for a given config.
pub fn ga_align(
    query: &MinutiaeSet,
    reference: &MinutiaeSet,
    cfg: &GAConfig,
) -> Result<AlignmentResult, AlignError> {
    if query.len() < 2 || reference.len() < 2 {
        return Err(AlignError::TooFewMinutiae {
            query: query.len(),
            reference: reference.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval = |chrom: u64| {
        let t = decode(chrom);
        let m = greedy_match(&t, query, reference, cfg.t_d, cfg.angle_tol_deg);
        Score { matched: m.pairs.len() as u32, proximity: proximity(&t, query, reference) }
    };

    let mut pop: Vec<u64> =
        (0..cfg.population).map(|_| rng.random::<u64>() & CHROM_MASK).collect();
    let mut scores: Vec<Score> = pop.iter().map(|&c| eval(c)).collect();

    let (mut best_chrom, mut best_score) = (pop[0], scores[0]);
    for (&c, &sc) in pop.iter().zip(&scores).skip(1) {
        if sc.better_than(&best_score) {
            (best_chrom, best_score) = (c, sc);
        }
    }

    let mut generation_best = Vec::with_capacity(cfg.generations);
    let pm_bit = cfg.mutation_p / TOTAL_BITS as f64;
    for _ in 0..cfg.generations {
        let mut next = Vec::with_capacity(cfg.population);
        next.push(best_chrom); // elitism
        while next.len() < cfg.population {
            let pa = tournament(&mut rng, &pop, &scores);
            let pb = tournament(&mut rng, &pop, &scores);
            let (mut ca, mut cb) = if rng.random::<f64>() < cfg.crossover_p {
                crossover(&mut rng, pa, pb)
            } else {
                (pa, pb)
            };
            mutate(&mut rng, &mut ca, pm_bit);
            mutate(&mut rng, &mut cb, pm_bit);
            next.push(ca);
            if next.len() < cfg.population {
                next.push(cb);
            }
        }
        pop = next;
        scores = pop.iter().map(|&c| eval(c)).collect();
        for (&c, &sc) in pop.iter().zip(&scores) {
            if sc.better_than(&best_score) {
                (best_chrom, best_score) = (c, sc);
            }
        }
        generation_best.push(best_score.matched);
    }

    let transform = decode(best_chrom);
    debug_assert!(transform.validate_range().is_ok());
    Ok(AlignmentResult {
        transform,
        fitness: best_score.matched,
        generations_run: cfg.generations,
        generation_best,
    })
}

fn tournament(rng: &mut ChaCha8Rng, pop: &[u64], scores: &[Score]) -> u64 {
    let mut winner = rng.random_range(0..pop.len());
    for _ in 0..2 {
        let c = rng.random_range(0..pop.len());
        if scores[c].better_than(&scores[winner]) {
            winner = c;
        }
    }
    pop[winner]
}

fn crossover(rng: &mut ChaCha8Rng, a: u64, b: u64) -> (u64, u64) {
    let point = rng.random_range(1..TOTAL_BITS);
    let low = (1u64 << point) - 1;
    ((a & !low) | (b & low), (b & !low) | (a & low))
}

fn mutate(rng: &mut ChaCha8Rng, chrom: &mut u64, pm_bit: f64) {
    for bit in 0..TOTAL_BITS {
        if rng.random::<f64>() < pm_bit {
            *chrom ^= 1 << bit;
        }
    }
}

/// Index of the largest-area template (ties to the lowest index): the
/// fused fingerprint grows from this one.
pub fn choose_mean(templates: &[FingerprintTemplate]) -> Result<usize, AlignError> {
    templates
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            raster::area(&a.mask)
                .cmp(&raster::area(&b.mask))
                .then(ib.cmp(ia)) // reversed: prefer the earlier index
        })
        .map(|(i, _)| i)
        .ok_or(AlignError::NoTemplates)
}

/// Anchor pairs for refinement: among the pairs greedy-matched under `t`,
/// the two whose query points lie farthest apart. A = query anchor 1,
/// B = query anchor 2, C and D their matched reference minutiae. None
/// when fewer than two matches exist or all matches coincide.
#[allow(clippy::type_complexity)]
pub fn select_correspondences(
    query: &MinutiaeSet,
    reference: &MinutiaeSet,
    t: &SimilarityTransform,
    t_d: f64,
    angle_tol_deg: f64,
) -> Option<((f64, f64), (f64, f64), (f64, f64), (f64, f64))> {
    let m = greedy_match(t, query, reference, t_d, angle_tol_deg);
    if m.pairs.len() < 2 {
        return None;
    }
    let q = query.as_slice();
    let r = reference.as_slice();
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..m.pairs.len() {
        for j in i + 1..m.pairs.len() {
            let a = q[m.pairs[i].0];
            let b = q[m.pairs[j].0];
            let d = dist((a.x as f64, a.y as f64), (b.x as f64, b.y as f64));
            // Strict > keeps the earliest pair on ties.
            if best.map_or(true, |(bd, _, _)| d > bd) {
                best = Some((d, i, j));
            }
        }
    }
    let (d, i, j) = best?;
    if d == 0.0 {
        return None;
    }
    let (aq, ar) = (q[m.pairs[i].0], r[m.pairs[i].1]);
    let (bq, br) = (q[m.pairs[j].0], r[m.pairs[j].1]);
    Some((
        (aq.x as f64, aq.y as f64),
        (bq.x as f64, bq.y as f64),
        (ar.x as f64, ar.y as f64),
        (br.x as f64, br.y as f64),
    ))
}

fn sign_of(v: f64) -> f64 {
    if v < 0.0 { -1.0 } else { 1.0 }
}

/// The literal two-correspondence update: each parameter gets its
/// magnitude from the anchors and its sign from the old value (sign(0)
/// counts as +):
///
///   s  = sign(s_old)  * |CD| / |AB|
///   th = sign(th_old) * angle between AB and CD, folded to [0, 180]
///   tx = sign(tx_old) * |x_A - x_C|
///   ty = sign(ty_old) * |y_A - y_C|
///
/// The result is clamped into the parameter box. Note the translation
/// rule compares raw coordinates and ignores rotation and scale entirely;
/// `exact_two_point` is the principled alternative.
pub fn refine(
    old: &SimilarityTransform,
    a: (f64, f64),
    b: (f64, f64),
    c: (f64, f64),
    d: (f64, f64),
) -> Result<SimilarityTransform, AlignError> {
    let ab = dist(a, b);
    if ab == 0.0 {
        return Err(AlignError::CoincidentAnchors);
    }
    let dir_ab = (b.1 - a.1).atan2(b.0 - a.0).to_degrees();
    let dir_cd = (d.1 - c.1).atan2(d.0 - c.0).to_degrees();
    let raw = SimilarityTransform {
        s: sign_of(old.s) * dist(c, d) / ab,
        theta_deg: sign_of(old.theta_deg) * angle_diff_deg(dir_cd, dir_ab),
        tx: sign_of(old.tx) * (a.0 - c.0).abs(),
        ty: sign_of(old.ty) * (a.1 - c.1).abs(),
    };
    Ok(PARAM_BOX.clamp(&raw))
}

/// The unique similarity mapping A to C and B to D. Not clamped: this is
/// the closed-form answer, range handling is the caller's business.
pub fn exact_two_point(
    a: (f64, f64),
    b: (f64, f64),
    c: (f64, f64),
    d: (f64, f64),
) -> Result<SimilarityTransform, AlignError> {
    let ab = dist(a, b);
    if ab == 0.0 {
        return Err(AlignError::CoincidentAnchors);
    }
    let dir_ab = (b.1 - a.1).atan2(b.0 - a.0);
    let dir_cd = (d.1 - c.1).atan2(d.0 - c.0);
    let s = dist(c, d) / ab;
    let theta_deg = fold_deg((dir_cd - dir_ab).to_degrees());
    let rot = SimilarityTransform { s, theta_deg, tx: 0.0, ty: 0.0 };
    let (rax, ray) = rot.apply(a.0, a.1);
    Ok(SimilarityTransform { s, theta_deg, tx: c.0 - rax, ty: c.1 - ray })
}

/// Align every non-mean template onto the mean one: GA search, then
/// refinement through the selected anchor pair (GA transform kept when no
/// anchors exist). One entry per template in input order; a template that
/// cannot be aligned is recorded as failed, not dropped.
///
/// Each template gets its own RNG stream derived from (seed, id), so the
/// list is identical no matter how many threads run the alignments.
pub fn build_param_list(
    templates: &[FingerprintTemplate],
    mean_index: usize,
    cfg: &GAConfig,
    mode: RefineMode,
) -> crate::geometry::ParamList {
    let jobs: Vec<(usize, &FingerprintTemplate)> = templates
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != mean_index)
        .collect();
    let mean = &templates[mean_index];
    let entries: Vec<crate::geometry::ParamEntry> = jobs
        .par_iter()
        .map(|&(_, tmpl)| {
            let mut sub = *cfg;
            sub.seed = derive_seed(cfg.seed, "ga-align", &[id_key(&tmpl.id)]);
            align_one(tmpl, mean, &sub, mode)
        })
        .collect();
    crate::geometry::ParamList { entries }
}

fn id_key(id: &str) -> u64 {
    // Stable digest of the template id for seed derivation.
    derive_seed(0x1d, id, &[])
}

fn align_one(
    tmpl: &FingerprintTemplate,
    mean: &FingerprintTemplate,
    cfg: &GAConfig,
    mode: RefineMode,
) -> crate::geometry::ParamEntry {
    let result = match ga_align(&tmpl.minutiae, &mean.minutiae, cfg) {
        Ok(r) => r,
        Err(e) => {
            return crate::geometry::ParamEntry::Failed {
                id: tmpl.id.clone(),
                reason: e.to_string(),
            }
        }
    };
    let anchors = select_correspondences(
        &tmpl.minutiae,
        &mean.minutiae,
        &result.transform,
        cfg.t_d,
        cfg.angle_tol_deg,
    );
    let transform = match anchors {
        Some((a, b, c, d)) => match mode {
            RefineMode::Paper => refine(&result.transform, a, b, c, d)
                .unwrap_or(result.transform),
            RefineMode::Exact => exact_two_point(a, b, c, d)
                .map(|t| PARAM_BOX.clamp(&t))
                .unwrap_or(result.transform),
        },
        None => result.transform,
    };
    // Report the fitness of the transform actually recorded.
    let final_fitness =
        fitness(&transform, &tmpl.minutiae, &mean.minutiae, cfg.t_d, cfg.angle_tol_deg);
    crate::geometry::ParamEntry::Aligned { id: tmpl.id.clone(), transform, fitness: final_fitness }
}
