//! Building the mean fingerprint: transport every aligned template into
//! the base template's frame, fuse ridge pixels and minutiae, reconnect
//! ridges broken by transport, and re-validate minutiae.

use thiserror::Error;

use crate::alignment::{build_param_list, choose_mean, GAConfig, RefineMode};
use crate::geometry::{dist, ParamEntry, ParamList, SimilarityTransform};
use crate::minutiae::{crossing_number, extract_minutiae, MinutiaKind, MinutiaeSet};
use crate::raster::{self, BitGrid, GrayImage, Mask, Skeleton, NEIGHBORS8_ROW_MAJOR};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("no templates to synthesize")]
    NoTemplates,
    #[error("every alignment failed")]
    AllAlignmentsFailed,
}

/// One preprocessed impression: fingerprint-area mask, thinned ridge
/// skeleton, and the minutiae extracted from it.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintTemplate {
    pub id: String,
    pub mask: Mask,
    pub skeleton: Skeleton,
    pub minutiae: MinutiaeSet,
}

/// Knobs of the image-to-template pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessParams {
    pub segment_block: usize,
    pub var_threshold: f64,
    pub binarize_block: usize,
    pub border_margin: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            segment_block: 16,
            var_threshold: 100.0,
            binarize_block: 16,
            border_margin: 8,
        }
    }
}

impl FingerprintTemplate {
    /// Full preprocessing: segment, binarize, thin, extract minutiae.
    pub fn from_image(id: &str, img: &GrayImage, p: &PreprocessParams) -> FingerprintTemplate {
        let mask = raster::segment(img, p.segment_block, p.var_threshold);
        let bin = raster::binarize(img, &mask, p.binarize_block);
        let skeleton = raster::thin(&bin);
        let minutiae = extract_minutiae(&skeleton, &mask, p.border_margin);
        FingerprintTemplate { id: id.to_string(), mask, skeleton, minutiae }
    }
}

/// The fused template, grown from the largest-area impression.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFingerprint {
    pub base_id: String,
    pub skeleton: Skeleton,
    pub mask: Mask,
    pub minutiae: MinutiaeSet,
    pub params: ParamList,
    pub seed: u64,
}

/// True when some set pixel of `grid` lies within Euclidean distance `r`
/// of (x, y) (strict).
fn has_true_within(grid: &BitGrid, x: i64, y: i64, r: f64) -> bool {
    let reach = r.ceil() as i64;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dx * dx + dy * dy) as f64) < r * r && grid.get_i(x + dx, y + dy) {
                return true;
            }
        }
    }
    false
}

/// Nearest set pixel within distance `r` of (x, y); row-major wins ties.
fn nearest_true_within(grid: &BitGrid, x: i64, y: i64, r: f64) -> Option<(usize, usize)> {
    let reach = r.ceil() as i64;
    let mut best: Option<(f64, usize, usize)> = None;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 >= r * r || !grid.get_i(x + dx, y + dy) {
                continue;
            }
            // Strict < keeps the first (row-major) pixel on distance ties.
            if best.map_or(true, |(bd, _, _)| d2 < bd) {
                best = Some((d2, (x + dx) as usize, (y + dy) as usize));
            }
        }
    }
    best.map(|(_, px, py)| (px, py))
}

/// Set one skeleton pixel, growing the mask by the 3x3 footprint around
/// it. Returns true if the pixel was newly set.
fn fill_pixel(mean: &mut MeanFingerprint, x: i64, y: i64) -> bool {
    if !mean.skeleton.in_bounds(x, y) || mean.skeleton.get(x as usize, y as usize) {
        return false;
    }
    mean.skeleton.set(x as usize, y as usize, true);
    for dy in -1..=1 {
        for dx in -1..=1 {
            if mean.mask.in_bounds(x + dx, y + dy) {
                mean.mask.set((x + dx) as usize, (y + dy) as usize, true);
            }
        }
    }
    true
}

/// Transport `tmpl`'s ridge pixels through `t` and fill those farther
/// than `r` from every existing mean ridge pixel. Candidates are
/// collected against the pre-call skeleton and filled afterwards in one
/// pass, so fills within one template never suppress each other.
/// Returns the number of pixels added.
pub fn add_ridges(
    mean: &mut MeanFingerprint,
    tmpl: &FingerprintTemplate,
    t: &SimilarityTransform,
    r: f64,
) -> usize {
    let mut candidates = Vec::new();
    for (x, y) in tmpl.skeleton.iter_true() {
        let (mx, my) = t.apply_round(x as f64, y as f64);
        if mean.skeleton.in_bounds(mx, my) && !has_true_within(&mean.skeleton, mx, my, r) {
            candidates.push((mx, my));
        }
    }
    let mut added = 0;
    for (x, y) in candidates {
        if fill_pixel(mean, x, y) {
            added += 1;
        }
    }
    added
}

/// Walk the template ridge outward from `start` (each true 8-neighbour
/// of `start` opens one walk), mapping every visited pixel through `t`.
/// A walk remembers only its previous pixel, prefers the lowest row-major
/// continuation, stops after pushing a pixel that lands within `r` of an
/// existing mean ridge pixel, and is capped at 512 steps.
pub fn trace_connected(
    tmpl_skeleton: &Skeleton,
    start: (usize, usize),
    t: &SimilarityTransform,
    mean_skeleton: &Skeleton,
    r: f64,
) -> Vec<(i64, i64)> {
    assert!(tmpl_skeleton.get(start.0, start.1), "trace start must be a ridge pixel");
    let start = (start.0 as i64, start.1 as i64);
    let mut out = Vec::new();
    for (dx, dy) in NEIGHBORS8_ROW_MAJOR {
        let m = (start.0 + dx, start.1 + dy);
        if !tmpl_skeleton.get_i(m.0, m.1) {
            continue;
        }
        let mut prev = start;
        let mut current = m;
        for _ in 0..512 {
            let mapped = t.apply_round(current.0 as f64, current.1 as f64);
            out.push(mapped);
            if has_true_within(mean_skeleton, mapped.0, mapped.1, r) {
                break;
            }
            let next = NEIGHBORS8_ROW_MAJOR.iter().find_map(|&(dx, dy)| {
                let n = (current.0 + dx, current.1 + dy);
                (n != prev && tmpl_skeleton.get_i(n.0, n.1)).then_some(n)
            });
            match next {
                Some(n) => {
                    prev = current;
                    current = n;
                }
                None => break,
            }
        }
    }
    out
}

/// Row-major list of skeleton endpoints (CN = 1 pixels).
pub fn endpoints(sk: &Skeleton) -> Vec<(usize, usize)> {
    sk.iter_true().filter(|&(x, y)| crossing_number(sk, x, y) == 1).collect()
}

/// Reconnect ridges broken by transport: every mean-skeleton endpoint is
/// mapped back into each template; if it lands within `r` of a template
/// ridge, the ridge is traced from there and the mapped pixels filled in.
/// Passes repeat until one adds nothing (at most 8).
pub fn join_ridges(
    mean: &mut MeanFingerprint,
    templates: &[FingerprintTemplate],
    params: &ParamList,
    r: f64,
) {
    let aligned: Vec<(&FingerprintTemplate, SimilarityTransform)> = params
        .entries
        .iter()
        .filter_map(|e| match e {
            ParamEntry::Aligned { id, transform, .. } => {
                templates.iter().find(|t| t.id == *id).map(|t| (t, *transform))
            }
            ParamEntry::Failed { .. } => None,
        })
        .collect();
    for _pass in 0..8 {
        let mut added = 0usize;
        for &(tmpl, t) in &aligned {
            let back = t.invert().expect("in-range transform is invertible");
            for (kx, ky) in endpoints(&mean.skeleton) {
                let (bx, by) = back.apply_round(kx as f64, ky as f64);
                let Some(k2) = nearest_true_within(&tmpl.skeleton, bx, by, r) else {
                    continue;
                };
                for (px, py) in trace_connected(&tmpl.skeleton, k2, &t, &mean.skeleton, r) {
                    if fill_pixel(mean, px, py) {
                        added += 1;
                    }
                }
            }
        }
        if added == 0 {
            return;
        }
    }
}

/// Transport `tmpl`'s minutiae through `t` and append each one unless an
/// existing same-kind mean minutia lies within `t_d` pixels. Minutiae are
/// processed in row-major order and each accepted one takes part in the
/// dedup check for the rest.
pub fn merge_minutiae(
    mean: &mut MeanFingerprint,
    tmpl: &FingerprintTemplate,
    t: &SimilarityTransform,
    t_d: f64,
) {
    for m in &tmpl.minutiae.transformed(t) {
        let close_same_kind = mean.minutiae.iter().any(|e| {
            e.kind == m.kind
                && dist((e.x as f64, e.y as f64), (m.x as f64, m.y as f64)) < t_d
        });
        if !close_same_kind {
            mean.minutiae.insert(*m);
        }
    }
}

/// Drop minutiae the fused skeleton no longer supports: terminations must
/// sit on a true pixel with CN = 1, bifurcations on a true pixel with
/// CN >= 3 (a CN = 2 pixel is an ordinary ridge interior, not a minutia).
pub fn validate_minutiae(mean: &mut MeanFingerprint) {
    let sk = mean.skeleton.clone();
    mean.minutiae.retain(|m| {
        if !sk.in_bounds(m.x, m.y) || !sk.get(m.x as usize, m.y as usize) {
            return false;
        }
        let cn = crossing_number(&sk, m.x as usize, m.y as usize);
        match m.kind {
            MinutiaKind::Termination => cn == 1,
            MinutiaKind::Bifurcation => cn >= 3,
        }
    });
}

/// The full fusion pipeline: choose the largest-area base, align every
/// other template onto it, fuse ridges, heal breaks, merge minutiae, and
/// validate. Deterministic for a given seed regardless of worker count.
pub fn synthesize(
    templates: &[FingerprintTemplate],
    cfg: &GAConfig,
    r: f64,
    mode: RefineMode,
) -> Result<MeanFingerprint, SynthesisError> {
    let mean_idx = choose_mean(templates).map_err(|_| SynthesisError::NoTemplates)?;
    let params = build_param_list(templates, mean_idx, cfg, mode);
    if !params.entries.is_empty()
        && params.entries.iter().all(|e| matches!(e, ParamEntry::Failed { .. }))
    {
        return Err(SynthesisError::AllAlignmentsFailed);
    }
    let base = &templates[mean_idx];
    let mut mean = MeanFingerprint {
        base_id: base.id.clone(),
        skeleton: base.skeleton.clone(),
        mask: base.mask.clone(),
        minutiae: base.minutiae.clone(),
        params: params.clone(),
        seed: cfg.seed,
    };
    for entry in &params.entries {
        let ParamEntry::Aligned { id, transform, .. } = entry else { continue };
        if let Some(tmpl) = templates.iter().find(|t| t.id == *id) {
            add_ridges(&mut mean, tmpl, transform, r);
        }
    }
    join_ridges(&mut mean, templates, &params, r);
    for entry in &params.entries {
        let ParamEntry::Aligned { id, transform, .. } = entry else { continue };
        if let Some(tmpl) = templates.iter().find(|t| t.id == *id) {
            merge_minutiae(&mut mean, tmpl, transform, cfg.t_d);
        }
    }
    validate_minutiae(&mut mean);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minutiae::Minutia;

    fn grid(rows: &[&str]) -> BitGrid {
        let height = rows.len();
        let width = rows[0].len();
        let mut g = BitGrid::new(width, height);
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                if c == '#' {
                    g.set(x, y, true);
                }
            }
        }
        g
    }

    fn mean_from_skeleton(sk: &Skeleton) -> MeanFingerprint {
        MeanFingerprint {
            base_id: "base".into(),
            skeleton: sk.clone(),
            mask: BitGrid::filled(sk.width(), sk.height(), true),
            minutiae: MinutiaeSet::new(),
            params: ParamList::default(),
            seed: 0,
        }
    }

    fn template_from_skeleton(id: &str, sk: &Skeleton) -> FingerprintTemplate {
        let mask = BitGrid::filled(sk.width(), sk.height(), true);
        let minutiae = extract_minutiae(sk, &mask, 0);
        FingerprintTemplate { id: id.into(), mask, skeleton: sk.clone(), minutiae }
    }

    fn identity() -> SimilarityTransform {
        SimilarityTransform::identity()
    }

    /// Horizontal-lines fixture with 8 well-separated terminations.
    fn lines_template(id: &str) -> FingerprintTemplate {
        let mut sk = BitGrid::new(100, 100);
        for &y in &[15usize, 40, 65, 90] {
            for x in 15..85 {
                sk.set(x, y, true);
            }
        }
        template_from_skeleton(id, &sk)
    }

    #[test]
    fn add_ridges_own_source_under_identity_adds_nothing() {
        let tmpl = lines_template("a");
        let mut mean = mean_from_skeleton(&tmpl.skeleton);
        let before = mean.skeleton.clone();
        assert_eq!(add_ridges(&mut mean, &tmpl, &identity(), 3.0), 0);
        assert_eq!(mean.skeleton, before);
    }

    #[test]
    fn add_ridges_respects_the_dedup_radius() {
        // Mean ridge along y=5. Template pixels land at distance 2
        // (suppressed: 2 < 3) and distance 5 (added).
        let mut mean_sk = BitGrid::new(30, 30);
        for x in 2..13 {
            mean_sk.set(x, 5, true);
        }
        let mut mean = mean_from_skeleton(&mean_sk);
        let mut tmpl_sk = BitGrid::new(30, 30);
        tmpl_sk.set(6, 7, true); // d=2 from (6,5)
        tmpl_sk.set(6, 10, true); // d=5 from (6,5)
        let tmpl = template_from_skeleton("t", &tmpl_sk);
        let added = add_ridges(&mut mean, &tmpl, &identity(), 3.0);
        assert_eq!(added, 1);
        assert!(!mean.skeleton.get(6, 7));
        assert!(mean.skeleton.get(6, 10));
        // Brute-force check of the distance rule for both candidates.
        for (x, y, expect) in [(6i64, 7i64, true), (6, 10, false)] {
            let within = mean_sk
                .iter_true()
                .any(|(mx, my)| dist((mx as f64, my as f64), (x as f64, y as f64)) < 3.0);
            assert_eq!(within, expect);
        }
    }

    #[test]
    fn add_ridges_is_two_phase_within_a_template() {
        // Two candidates 2 px apart, both far from the mean ridge: a
        // sequential fill would suppress the second; both must land.
        let mut mean_sk = BitGrid::new(40, 40);
        mean_sk.set(2, 2, true);
        let mut mean = mean_from_skeleton(&mean_sk);
        let mut tmpl_sk = BitGrid::new(40, 40);
        tmpl_sk.set(20, 20, true);
        tmpl_sk.set(22, 20, true);
        let tmpl = template_from_skeleton("t", &tmpl_sk);
        assert_eq!(add_ridges(&mut mean, &tmpl, &identity(), 3.0), 2);
        assert!(mean.skeleton.get(20, 20) && mean.skeleton.get(22, 20));
    }

    #[test]
    fn add_ridges_is_idempotent_per_template() {
        let base = lines_template("base");
        let moved = {
            let mut sk = BitGrid::new(100, 100);
            for &y in &[27usize, 52, 77] {
                for x in 10..90 {
                    sk.set(x, y, true);
                }
            }
            template_from_skeleton("m", &sk)
        };
        let mut mean = mean_from_skeleton(&base.skeleton);
        let first = add_ridges(&mut mean, &moved, &identity(), 3.0);
        assert!(first > 0);
        let snapshot = mean.skeleton.clone();
        assert_eq!(add_ridges(&mut mean, &moved, &identity(), 3.0), 0);
        assert_eq!(mean.skeleton, snapshot);
    }

    #[test]
    fn add_ridges_grows_mask_around_fills() {
        let mut mean = mean_from_skeleton(&BitGrid::new(30, 30));
        mean.mask = BitGrid::new(30, 30); // start with an empty mask
        let mut tmpl_sk = BitGrid::new(30, 30);
        tmpl_sk.set(10, 10, true);
        let tmpl = template_from_skeleton("t", &tmpl_sk);
        assert_eq!(add_ridges(&mut mean, &tmpl, &identity(), 3.0), 1);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                assert!(mean.mask.get_i(10 + dx, 10 + dy));
            }
        }
        assert!(!mean.mask.get(8, 10));
    }

    #[test]
    fn add_ridges_drops_out_of_bounds_targets() {
        let mut mean = mean_from_skeleton(&BitGrid::new(20, 20));
        let mut tmpl_sk = BitGrid::new(20, 20);
        tmpl_sk.set(15, 15, true);
        let tmpl = template_from_skeleton("t", &tmpl_sk);
        let shift = SimilarityTransform::new(1.0, 0.0, 10.0, 10.0);
        assert_eq!(add_ridges(&mut mean, &tmpl, &shift, 3.0), 0);
    }

    #[test]
    fn trace_from_isolated_pixel_is_empty() {
        let mut sk = BitGrid::new(10, 10);
        sk.set(5, 5, true);
        let mean_sk = BitGrid::new(10, 10);
        assert!(trace_connected(&sk, (5, 5), &identity(), &mean_sk, 3.0).is_empty());
    }

    #[test]
    fn trace_walks_a_clear_ridge_to_its_end() {
        // 10-px ridge, start at its left end, mean empty: the walk visits
        // the other 9 pixels.
        let mut sk = BitGrid::new(20, 5);
        for x in 3..13 {
            sk.set(x, 2, true);
        }
        let mean_sk = BitGrid::new(20, 5);
        let got = trace_connected(&sk, (3, 2), &identity(), &mean_sk, 3.0);
        let want: Vec<(i64, i64)> = (4..13).map(|x| (x, 2)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn trace_stops_when_it_reaches_the_mean_ridge() {
        // Mean has a vertical ridge at x=8; walking right from (2,2) the
        // 4th visited pixel (6,2) is the first strictly within r=3 of it
        // ((5,2) sits at exactly 3.0, which does not count).
        let mut sk = BitGrid::new(20, 5);
        for x in 2..13 {
            sk.set(x, 2, true);
        }
        let mut mean_sk = BitGrid::new(20, 5);
        for y in 0..5 {
            mean_sk.set(8, y, true);
        }
        let got = trace_connected(&sk, (2, 2), &identity(), &mean_sk, 3.0);
        assert_eq!(got, vec![(3, 2), (4, 2), (5, 2), (6, 2)]);
    }

    #[test]
    fn trace_branches_explore_both_directions() {
        let mut sk = BitGrid::new(20, 5);
        for x in 2..9 {
            sk.set(x, 2, true);
        }
        let mean_sk = BitGrid::new(20, 5);
        let got = trace_connected(&sk, (5, 2), &identity(), &mean_sk, 3.0);
        // Left walk first (row-major neighbour order), then right walk.
        assert_eq!(got, vec![(4, 2), (3, 2), (2, 2), (6, 2), (7, 2), (8, 2)]);
    }

    #[test]
    fn join_ridges_closes_a_two_px_gap() {
        // Mean ridge with a 2-px gap; the template spans it.
        let mut mean_sk = BitGrid::new(30, 9);
        for x in 2..10 {
            mean_sk.set(x, 4, true);
        }
        for x in 12..20 {
            mean_sk.set(x, 4, true);
        }
        let mut tmpl_sk = BitGrid::new(30, 9);
        for x in 2..20 {
            tmpl_sk.set(x, 4, true);
        }
        let tmpl = template_from_skeleton("t", &tmpl_sk);
        let mut mean = mean_from_skeleton(&mean_sk);
        let params = ParamList {
            entries: vec![ParamEntry::Aligned {
                id: "t".into(),
                transform: identity(),
                fitness: 0,
            }],
        };
        let before = endpoints(&mean.skeleton).len();
        assert_eq!(before, 4);
        join_ridges(&mut mean, &[tmpl], &params, 3.0);
        assert!(mean.skeleton.get(10, 4) && mean.skeleton.get(11, 4));
        let after = endpoints(&mean.skeleton).len();
        assert_eq!(after, 2);
    }

    #[test]
    fn join_ridges_closes_a_three_px_gap_across_passes() {
        let mut mean_sk = BitGrid::new(30, 9);
        for x in 2..10 {
            mean_sk.set(x, 4, true);
        }
        for x in 13..20 {
            mean_sk.set(x, 4, true);
        }
        let mut tmpl_sk = BitGrid::new(30, 9);
        for x in 2..20 {
            tmpl_sk.set(x, 4, true);
        }
        let tmpl = template_from_skeleton("t", &tmpl_sk);
        let mut mean = mean_from_skeleton(&mean_sk);
        let params = ParamList {
            entries: vec![ParamEntry::Aligned {
                id: "t".into(),
                transform: identity(),
                fitness: 0,
            }],
        };
        let before = endpoints(&mean.skeleton).len();
        join_ridges(&mut mean, &[tmpl], &params, 3.0);
        let after = endpoints(&mean.skeleton).len();
        for x in 10..13 {
            assert!(mean.skeleton.get(x, 4), "gap pixel ({x},4) not filled");
        }
        assert!(after <= before);
        assert_eq!(after, 2);
    }

    #[test]
    fn join_ridges_leaves_endpoint_free_skeletons_alone() {
        // A closed ring has no CN=1 pixels.
        let ring = grid(&[".###.", "#...#", "#...#", ".###."]);
        let mut tmpl_sk = BitGrid::new(5, 4);
        for x in 0..5 {
            tmpl_sk.set(x, 1, true);
        }
        let tmpl = template_from_skeleton("t", &tmpl_sk);
        let mut mean = mean_from_skeleton(&ring);
        let params = ParamList {
            entries: vec![ParamEntry::Aligned {
                id: "t".into(),
                transform: identity(),
                fitness: 0,
            }],
        };
        join_ridges(&mut mean, &[tmpl], &params, 3.0);
        assert_eq!(mean.skeleton, ring);
    }

    #[test]
    fn join_ridges_skips_endpoints_missing_the_template() {
        // The endpoint back-maps far away from every template pixel.
        let mut mean_sk = BitGrid::new(30, 30);
        for x in 2..10 {
            mean_sk.set(x, 4, true);
        }
        let mut tmpl_sk = BitGrid::new(30, 30);
        for x in 2..10 {
            tmpl_sk.set(x, 25, true);
        }
        let tmpl = template_from_skeleton("t", &tmpl_sk);
        let mut mean = mean_from_skeleton(&mean_sk);
        let params = ParamList {
            entries: vec![ParamEntry::Aligned {
                id: "t".into(),
                transform: identity(),
                fitness: 0,
            }],
        };
        join_ridges(&mut mean, &[tmpl], &params, 3.0);
        assert_eq!(mean.skeleton, mean_sk);
    }

    #[test]
    fn merge_minutiae_kind_gated_dedup() {
        let mk = |x, y, kind, angle_deg| Minutia { x, y, kind, angle_deg };
        let mut mean = mean_from_skeleton(&BitGrid::new(60, 60));
        mean.minutiae.insert(mk(20, 20, MinutiaKind::Termination, 0.0));
        let mut tmpl_sk = BitGrid::new(60, 60);
        tmpl_sk.set(23, 20, true);
        tmpl_sk.set(50, 50, true);
        tmpl_sk.set(20, 20, true);
        let tmpl = FingerprintTemplate {
            id: "t".into(),
            mask: BitGrid::filled(60, 60, true),
            skeleton: tmpl_sk,
            minutiae: MinutiaeSet::from_vec(vec![
                // Distance 3 from the existing termination: suppressed.
                mk(23, 20, MinutiaKind::Termination, 10.0),
                // Empty area: added.
                mk(50, 50, MinutiaKind::Termination, 10.0),
                // Same position as existing, other kind: added.
                mk(20, 20, MinutiaKind::Bifurcation, 10.0),
            ]),
        };
        merge_minutiae(&mut mean, &tmpl, &identity(), 10.0);
        assert_eq!(mean.minutiae.len(), 3);
        assert!(!mean.minutiae.contains(23, 20, MinutiaKind::Termination));
        assert!(mean.minutiae.contains(50, 50, MinutiaKind::Termination));
        assert!(mean.minutiae.contains(20, 20, MinutiaKind::Bifurcation));
    }

    #[test]
    fn merge_minutiae_transports_positions_and_angles() {
        let mut mean = mean_from_skeleton(&BitGrid::new(60, 60));
        let mut tmpl_sk = BitGrid::new(60, 60);
        tmpl_sk.set(10, 0, true);
        let tmpl = FingerprintTemplate {
            id: "t".into(),
            mask: BitGrid::filled(60, 60, true),
            skeleton: tmpl_sk,
            minutiae: MinutiaeSet::from_vec(vec![Minutia {
                x: 10,
                y: 0,
                kind: MinutiaKind::Termination,
                angle_deg: 30.0,
            }]),
        };
        // Quarter turn in pixel space: (10,0) -> (0,10); stored angles
        // shift by minus theta: 30 - 90 = -60.
        let quarter = SimilarityTransform::new(1.0, 90.0, 0.0, 0.0);
        merge_minutiae(&mut mean, &tmpl, &quarter, 10.0);
        assert_eq!(mean.minutiae.len(), 1);
        let got = mean.minutiae.as_slice()[0];
        assert_eq!((got.x, got.y), (0, 10));
        assert!((got.angle_deg - (-60.0)).abs() <= 1e-9);
    }

    #[test]
    fn validate_minutiae_enforces_cn_rules() {
        // Line from x=2..=12 at y=4, plus a fork pixel making (8,4) a
        // bifurcation.
        let mut sk = BitGrid::new(20, 9);
        for x in 2..13 {
            sk.set(x, 4, true);
        }
        // Downward stem under (8,4): its neighbours (7,4), (9,4), (8,5)
        // give CN = 3.
        sk.set(8, 5, true);
        sk.set(8, 6, true);
        let mut mean = mean_from_skeleton(&sk);
        let mk = |x, y, kind| Minutia { x, y, kind, angle_deg: 0.0 };
        // True endpoint: kept.
        mean.minutiae.insert(mk(2, 4, MinutiaKind::Termination));
        // Interior pixel claimed as termination (as if the ridge grew
        // over it): removed.
        mean.minutiae.insert(mk(6, 4, MinutiaKind::Termination));
        // Bifurcation with CN=3: kept.
        mean.minutiae.insert(mk(8, 4, MinutiaKind::Bifurcation));
        // Interior pixel claimed as bifurcation: removed.
        mean.minutiae.insert(mk(5, 4, MinutiaKind::Bifurcation));
        // Pixel that is false on the skeleton: removed.
        mean.minutiae.insert(mk(15, 2, MinutiaKind::Termination));
        validate_minutiae(&mut mean);
        assert_eq!(mean.minutiae.len(), 2);
        assert!(mean.minutiae.contains(2, 4, MinutiaKind::Termination));
        assert!(mean.minutiae.contains(8, 4, MinutiaKind::Bifurcation));
        for m in &mean.minutiae {
            let cn = crossing_number(&mean.skeleton, m.x as usize, m.y as usize);
            match m.kind {
                MinutiaKind::Termination => assert_eq!(cn, 1),
                MinutiaKind::Bifurcation => assert!(cn >= 3),
            }
        }
    }

    #[test]
    fn synthesize_single_template_is_bit_identical() {
        let tmpl = lines_template("only");
        let mean = synthesize(&[tmpl.clone()], &GAConfig::default(), 3.0, RefineMode::Paper)
            .unwrap();
        assert_eq!(mean.base_id, "only");
        assert_eq!(mean.skeleton, tmpl.skeleton);
        assert_eq!(mean.minutiae, tmpl.minutiae);
        assert!(mean.params.entries.is_empty());
    }

    #[test]
    fn synthesize_identity_copies_add_nothing() {
        let tmpl = lines_template("base");
        let copies = vec![
            FingerprintTemplate { id: "a".into(), ..tmpl.clone() },
            FingerprintTemplate { id: "b".into(), ..tmpl.clone() },
            FingerprintTemplate { id: "c".into(), ..tmpl.clone() },
        ];
        let mean = synthesize(&copies, &GAConfig::default(), 3.0, RefineMode::Paper).unwrap();
        assert_eq!(mean.base_id, "a");
        assert_eq!(mean.skeleton, tmpl.skeleton);
        assert_eq!(mean.minutiae, tmpl.minutiae);
    }

    #[test]
    fn synthesize_never_removes_base_ridge_pixels() {
        let base = lines_template("base");
        let shifted = {
            let mut sk = BitGrid::new(100, 100);
            for &y in &[15usize, 40, 65, 90] {
                for x in 15..85 {
                    sk.set(x, y.saturating_sub(3).max(1), true);
                }
            }
            template_from_skeleton("shifted", &sk)
        };
        let mean =
            synthesize(&[base.clone(), shifted], &GAConfig::default(), 3.0, RefineMode::Paper)
                .unwrap();
        for (x, y) in base.skeleton.iter_true() {
            assert!(mean.skeleton.get(x, y), "base pixel ({x},{y}) was removed");
        }
    }

    #[test]
    fn synthesize_error_paths() {
        assert!(matches!(
            synthesize(&[], &GAConfig::default(), 3.0, RefineMode::Paper),
            Err(SynthesisError::NoTemplates)
        ));
        let base = lines_template("base");
        let mut broke = lines_template("broke");
        broke.minutiae = MinutiaeSet::from_vec(vec![Minutia {
            x: 5,
            y: 5,
            kind: MinutiaKind::Termination,
            angle_deg: 0.0,
        }]);
        // Make the base the chosen mean by giving it the bigger mask.
        broke.mask = BitGrid::new(100, 100);
        assert!(matches!(
            synthesize(&[base, broke], &GAConfig::default(), 3.0, RefineMode::Paper),
            Err(SynthesisError::AllAlignmentsFailed)
        ));
    }

    #[test]
    fn synthesize_is_deterministic() {
        let base = lines_template("base");
        let other = {
            let mut sk = BitGrid::new(100, 100);
            for &y in &[18usize, 43, 68] {
                for x in 12..88 {
                    sk.set(x, y, true);
                }
            }
            template_from_skeleton("other", &sk)
        };
        let cfg = GAConfig::default();
        let a = synthesize(&[base.clone(), other.clone()], &cfg, 3.0, RefineMode::Paper).unwrap();
        let b = synthesize(&[base, other], &cfg, 3.0, RefineMode::Paper).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validated_minutiae_always_satisfy_cn_rules_after_fusion() {
        // The moved template's lines overhang the base's, so fusion adds
        // overhang segments, healing reconnects them, and transported end
        // minutiae can land on now-interior pixels for validate to prune.
        let base = lines_template("base");
        let moved = {
            let mut sk = BitGrid::new(100, 100);
            for &y in &[22usize, 47, 72] {
                for x in 8..90 {
                    sk.set(x, y, true);
                }
            }
            template_from_skeleton("moved", &sk)
        };
        let mean =
            synthesize(&[base, moved], &GAConfig::default(), 3.0, RefineMode::Paper).unwrap();
        for m in &mean.minutiae {
            assert!(mean.skeleton.get(m.x as usize, m.y as usize));
            let cn = crossing_number(&mean.skeleton, m.x as usize, m.y as usize);
            match m.kind {
                MinutiaKind::Termination => assert_eq!(cn, 1),
                MinutiaKind::Bifurcation => assert!(cn >= 3),
            }
        }
    }
}
