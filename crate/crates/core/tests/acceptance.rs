//! Release gate: each test checks one criterion end to end and prints a
//! single summary line on success. Budgets are asserted, not aspirational.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ridgefuse::alignment::{exact_two_point, ga_align, select_correspondences, GAConfig, RefineMode};
use ridgefuse::evaluation::{evaluate, ingest_db, report_csv, GenuineMode, Protocol};
use ridgefuse::geometry::{ParamEntry, ParamList, SimilarityTransform, PARAM_BOX};
use ridgefuse::minutiae::{crossing_number, MinutiaKind};
use ridgefuse::raster::BitGrid;
use ridgefuse::seeds::derive_seed;
use ridgefuse::synthesis::{
    add_ridges, endpoints, join_ridges, synthesize, FingerprintTemplate, MeanFingerprint,
    PreprocessParams,
};
use ridgefuse::synthgen::{gen_db, gen_impression, gen_master, DbParams, NoiseParams};

fn sample_in_box(rng: &mut ChaCha8Rng) -> SimilarityTransform {
    SimilarityTransform {
        s: rng.random_range(PARAM_BOX.s.0..=PARAM_BOX.s.1),
        theta_deg: rng.random_range(PARAM_BOX.theta_deg.0..=PARAM_BOX.theta_deg.1),
        tx: rng.random_range(PARAM_BOX.tx.0..=PARAM_BOX.tx.1),
        ty: rng.random_range(PARAM_BOX.ty.0..=PARAM_BOX.ty.1),
    }
}

#[test]
fn transform_round_trips_are_exact() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let t = sample_in_box(&mut rng);
        let p = (rng.random_range(-200.0..400.0), rng.random_range(-200.0..400.0));
        let q = t.apply(p.0, p.1);
        let back = t.invert().expect("in-range transforms are invertible");
        let p2 = back.apply(q.0, q.1);
        assert!(
            (p2.0 - p.0).abs() <= 1e-9 && (p2.1 - p.1).abs() <= 1e-9,
            "invert(apply) drifted: {p:?} -> {p2:?} under {t:?}"
        );

        let a = (rng.random_range(0.0..300.0), rng.random_range(0.0..300.0));
        let b = (a.0 + rng.random_range(20.0..120.0), a.1 + rng.random_range(20.0..120.0));
        let (c, d) = (t.apply(a.0, a.1), t.apply(b.0, b.1));
        let (c, d) = ((c.0, c.1), (d.0, d.1));
        let rec = exact_two_point(a, b, c, d).expect("distinct anchors");
        for (got, want) in [
            (rec.s, t.s),
            (rec.theta_deg, t.theta_deg),
            (rec.tx, t.tx),
            (rec.ty, t.ty),
        ] {
            assert!((got - want).abs() <= 1e-9, "two-point drifted: {rec:?} vs {t:?}");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "round-trip suite took {elapsed:?}");
    println!("PASS transform round-trips: 1000/1000 within 1e-9 in {elapsed:?}");
}

#[test]
fn alignment_recovers_known_transforms() {
    let master = gen_master(288, 384, 10, 42).unwrap();
    // Transported ridge pixels at negative coordinates would be clipped, so
    // sample transforms whose pattern stays inside the first quadrant. The
    // map is affine, so checking the pattern's corner points suffices.
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (i64::MAX, i64::MAX, 0i64, 0i64);
    for (x, y) in master.skeleton.iter_true() {
        min_x = min_x.min(x as i64);
        min_y = min_y.min(y as i64);
        max_x = max_x.max(x as i64);
        max_y = max_y.max(y as i64);
    }
    let corners = [
        (min_x as f64, min_y as f64),
        (min_x as f64, max_y as f64),
        (max_x as f64, min_y as f64),
        (max_x as f64, max_y as f64),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut recovered = 0;
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..20u64 {
        let truth = loop {
            let t = sample_in_box(&mut rng);
            if corners.iter().all(|&(x, y)| {
                let (qx, qy) = t.apply(x, y);
                qx >= 2.0 && qy >= 2.0
            }) {
                break t;
            }
        };
        let imp = gen_impression(&master, &truth, &NoiseParams::clean(), 100 + k).unwrap();
        let cfg = GAConfig { seed: derive_seed(42, "acceptance-align", &[k]), ..GAConfig::default() };
        let started = Instant::now();
        let res = ga_align(&master.minutiae, &imp.minutiae, &cfg).unwrap();
        let refined = select_correspondences(
            &master.minutiae,
            &imp.minutiae,
            &res.transform,
            cfg.t_d,
            cfg.angle_tol_deg,
        )
        .and_then(|(a, b, c, d)| exact_two_point(a, b, c, d).ok())
        .map(|t| PARAM_BOX.clamp(&t))
        .unwrap_or(res.transform);
        let elapsed = started.elapsed();
        assert!(elapsed.as_secs_f64() < 60.0, "alignment {k} took {elapsed:?}");
        let ds = (refined.s - truth.s).abs();
        let dth = (refined.theta_deg - truth.theta_deg).abs();
        let dt = (refined.tx - truth.tx).hypot(refined.ty - truth.ty);
        worst = (worst.0.max(ds), worst.1.max(dth), worst.2.max(dt));
        if ds <= 0.02 && dth <= 2.0 && dt <= 3.0 {
            recovered += 1;
        }
    }
    assert!(recovered >= 18, "only {recovered}/20 transforms recovered");
    println!(
        "PASS alignment recovery: {recovered}/20 within tolerance, worst ds {:.4} dtheta {:.3} dt {:.2}",
        worst.0, worst.1, worst.2
    );
}

fn mean_from(base: &FingerprintTemplate) -> MeanFingerprint {
    MeanFingerprint {
        base_id: base.id.clone(),
        skeleton: base.skeleton.clone(),
        mask: base.mask.clone(),
        minutiae: base.minutiae.clone(),
        params: ParamList::default(),
        seed: 0,
    }
}

/// Erase a 3-px run starting at a skeleton pixel, walking to the first set
/// 8-neighbour each step.
fn break_gap(sk: &mut BitGrid, start: (usize, usize)) {
    const RING: [(i64, i64); 8] =
        [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
    let (mut x, mut y) = start;
    for _ in 0..3 {
        sk.set(x, y, false);
        let Some((nx, ny)) = RING.iter().find_map(|&(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            (nx >= 0
                && ny >= 0
                && (nx as usize) < sk.width()
                && (ny as usize) < sk.height()
                && sk.get(nx as usize, ny as usize))
            .then_some((nx as usize, ny as usize))
        }) else {
            return;
        };
        (x, y) = (nx, ny);
    }
}

#[test]
fn fusion_invariants_hold_on_the_fixture_suite() {
    let start = Instant::now();
    let master = gen_master(288, 384, 10, 42).unwrap();
    let shift = SimilarityTransform { s: 1.0, theta_deg: 0.0, tx: 15.0, ty: -8.0 };
    let turned = SimilarityTransform { s: 1.05, theta_deg: 12.0, tx: 20.0, ty: -15.0 };
    let imp_shift = gen_impression(&master, &shift, &NoiseParams::clean(), 1).unwrap();
    let noise = NoiseParams { dropout: 0.02, ridge_breaks: 2, crop: None };
    let imp_noise =
        gen_impression(&master, &SimilarityTransform::identity(), &noise, 2).unwrap();

    // add_ridges applied twice with the same arguments adds nothing new.
    let fixtures = [
        (&master, SimilarityTransform::identity()),
        (&imp_shift, shift.invert().unwrap()),
        (&imp_noise, SimilarityTransform::identity()),
        (&master, turned),
    ];
    for (tmpl, t) in &fixtures {
        let mut mean = mean_from(&master);
        add_ridges(&mut mean, tmpl, t, 3.0);
        let after_first = mean.skeleton.clone();
        let second = add_ridges(&mut mean, tmpl, t, 3.0);
        assert_eq!(second, 0, "second add_ridges pass added pixels");
        assert_eq!(mean.skeleton, after_first);
    }

    // A single template synthesizes to itself, bit for bit.
    let solo = synthesize(&[master.clone()], &GAConfig::default(), 3.0, RefineMode::Exact).unwrap();
    assert_eq!(solo.base_id, master.id);
    assert_eq!(solo.skeleton, master.skeleton);
    assert_eq!(solo.mask, master.mask);
    assert_eq!(solo.minutiae, master.minutiae);

    // Every post-validation minutia sits on a pixel whose crossing number
    // matches its kind.
    let fused = synthesize(
        &[master.clone(), imp_shift.clone(), imp_noise.clone()],
        &GAConfig::default(),
        3.0,
        RefineMode::Exact,
    )
    .unwrap();
    let mut checked = 0;
    for m in fused.minutiae.iter() {
        let cn = crossing_number(&fused.skeleton, m.x as usize, m.y as usize);
        let want = match m.kind {
            MinutiaKind::Termination => 1,
            MinutiaKind::Bifurcation => 3,
        };
        assert_eq!(cn, want, "minutia at ({}, {}) has crossing number {cn}", m.x, m.y);
        checked += 1;
    }

    // join_ridges never increases the endpoint count on gap fixtures.
    let pixels: Vec<(usize, usize)> = master.skeleton.iter_true().collect();
    for starts in [[900, 2900, 4900], [1500, 3500, 5500]] {
        let mut broken = master.skeleton.clone();
        for idx in starts {
            break_gap(&mut broken, pixels[idx % pixels.len()]);
        }
        let mut mean = mean_from(&master);
        mean.skeleton = broken;
        let params = ParamList {
            entries: vec![ParamEntry::Aligned {
                id: master.id.clone(),
                transform: SimilarityTransform::identity(),
                fitness: 0,
            }],
        };
        let before = endpoints(&mean.skeleton).len();
        join_ridges(&mut mean, std::slice::from_ref(&master), &params, 3.0);
        let after = endpoints(&mean.skeleton).len();
        assert!(after <= before, "join_ridges raised endpoints {before} -> {after}");
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "fusion suite took {elapsed:?}");
    println!("PASS fusion invariants: {checked} minutiae validated, suite in {elapsed:?}");
}

#[test]
fn degenerate_identical_copies_add_nothing() {
    let master = gen_master(288, 384, 10, 42).unwrap();
    let copies: Vec<FingerprintTemplate> = (0..8)
        .map(|i| {
            let mut c = master.clone();
            c.id = format!("{}-{i}", master.id);
            c
        })
        .collect();
    let fused = synthesize(&copies, &GAConfig::default(), 3.0, RefineMode::Exact).unwrap();
    assert_eq!(fused.skeleton, master.skeleton, "ridge pixels were added");
    assert_eq!(fused.minutiae, master.minutiae, "minutiae were added");
    println!(
        "PASS degenerate pipeline: 8 identical copies fused to the base, {} minutiae unchanged",
        fused.minutiae.len()
    );
}

#[test]
fn seeded_db_reaches_the_accept_bar() {
    let start = Instant::now();
    let params = DbParams {
        noise: NoiseParams { dropout: 0.05, ridge_breaks: 3, crop: None },
        ..DbParams::default()
    };
    let dir = tempfile::tempdir().unwrap();
    gen_db(dir.path(), &params).unwrap();
    let (entries, warnings) = ingest_db(dir.path()).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(entries.len(), 80);
    let protocol = Protocol { impostor_pairs: 200, ..Protocol::default() };
    let report = evaluate(&entries, &GAConfig::default(), &protocol).unwrap();

    for w in report.rows.windows(2) {
        assert!(w[1].gar <= w[0].gar, "GAR rose from {:?} to {:?}", w[0], w[1]);
        assert!(w[1].far <= w[0].far, "FAR rose from {:?} to {:?}", w[0], w[1]);
    }
    let op = report
        .rows
        .iter()
        .find(|row| row.gar >= 0.95 && row.far <= 0.05)
        .unwrap_or_else(|| panic!("no threshold with GAR >= 0.95 and FAR <= 0.05: {:?}", report.rows));
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 900.0, "evaluation took {elapsed:?}");
    println!(
        "PASS evaluation protocol: threshold {:.2} GAR {:.3} FAR {:.3}, 10x8 db in {elapsed:?}",
        op.threshold, op.gar, op.far
    );
}

#[test]
fn full_scale_accounting_holds() {
    let params = DbParams { fingers: 100, ..DbParams::default() };
    let dir = tempfile::tempdir().unwrap();
    gen_db(dir.path(), &params).unwrap();
    let (entries, warnings) = ingest_db(dir.path()).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(entries.len(), 800, "100 fingers x 8 impressions");

    let mut by_finger: BTreeMap<u32, Vec<&ridgefuse::evaluation::DbEntry>> = BTreeMap::new();
    for e in &entries {
        by_finger.entry(e.finger).or_default().push(e);
    }
    assert_eq!(by_finger.len(), 100);

    // The accounting is the point here, not GA quality: a small search
    // keeps 100 fusions of 7 alignments each affordable.
    let cfg = GAConfig { population: 64, generations: 4, ..GAConfig::default() };
    let per_finger: Vec<usize> = by_finger
        .par_iter()
        .map(|(finger, group)| {
            let templates: Vec<FingerprintTemplate> = group
                .iter()
                .map(|e| {
                    FingerprintTemplate::from_image(
                        &format!("{}_{}", e.finger, e.impression),
                        &e.image,
                        &PreprocessParams::default(),
                    )
                })
                .collect();
            let mut sub = cfg;
            sub.seed = derive_seed(42, "acceptance-count", &[*finger as u64]);
            let mf = synthesize(&templates, &sub, 3.0, RefineMode::Exact).unwrap();
            mf.params.entries.len()
        })
        .collect();
    assert_eq!(per_finger.len(), 100, "one synthesis per finger");
    assert!(per_finger.iter().all(|&n| n == 7), "each fusion aligns the 7 non-base impressions");
    let total: usize = per_finger.iter().sum();
    println!("PASS full-scale accounting: 800 entries, 100 fusions, {total} alignments");
}

#[test]
fn reports_are_independent_of_parallelism() {
    let params = DbParams { fingers: 3, impressions: 3, ..DbParams::default() };
    let dir = tempfile::tempdir().unwrap();
    gen_db(dir.path(), &params).unwrap();
    let (entries, _) = ingest_db(dir.path()).unwrap();
    let cfg = GAConfig::default();
    let protocol = Protocol {
        genuine_mode: GenuineMode::MeanF,
        impostor_pairs: 30,
        ..Protocol::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| evaluate(&entries, &cfg, &protocol).unwrap())
    };
    let (one, four) = (run(1), run(4));
    assert_eq!(report_csv(&one), report_csv(&four), "thread count changed the report");
    assert_eq!(one.genuine, four.genuine);
    assert_eq!(one.impostor, four.impostor);
    println!("PASS determinism: 1-thread and 4-thread reports are byte-identical");
}
