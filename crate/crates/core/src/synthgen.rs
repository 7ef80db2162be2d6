//! Procedural fixtures: ring-pattern masters with seeded ridge features,
//! damaged impressions under known in-box transforms, and gray renders
//! that survive a round trip through the preprocessing pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{angle_diff_deg, OutOfRange, SimilarityTransform};
use crate::minutiae::{extract_minutiae, MinutiaKind, DEFAULT_BORDER_MARGIN};
use crate::raster::{self, BitGrid, GrayImage, Skeleton, RING8};
use crate::synthesis::FingerprintTemplate;

#[derive(Debug, Error, PartialEq)]
pub enum SynthGenError {
    #[error("ridge period {0} is below thinning resolution (need >= 3)")]
    PeriodTooSmall(u32),
    #[error("canvas {width}x{height} too small for a ridge pattern of period {period}")]
    CanvasTooSmall { width: usize, height: usize, period: u32 },
    #[error("pattern yielded {terminations} terminations and {bifurcations} bifurcations, need 20 of each")]
    TooFewMinutiae { terminations: usize, bifurcations: usize },
    #[error("impression transform outside the search box: {0}")]
    TransformOutOfRange(OutOfRange),
    #[error("dropout probability {0} outside [0, 1]")]
    BadDropout(f64),
}

/// Damage applied to an impression after transport. `crop` keeps only the
/// pixels inside the rectangle (output canvas coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub dropout: f64,
    pub ridge_breaks: usize,
    pub crop: Option<CropRect>,
}

impl NoiseParams {
    pub fn clean() -> NoiseParams {
        NoiseParams { dropout: 0.0, ridge_breaks: 0, crop: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRect {
    pub x0: i64,
    pub y0: i64,
    pub width: i64,
    pub height: i64,
}

impl CropRect {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }
}

/// Minimum pixel distance kept between any two inserted features so their
/// minutiae never compete inside the matcher's distance threshold.
const FEATURE_MIN_SEP: f64 = 20.0;

/// Gray levels for `render_skeleton`. One dark ridge pixel in an otherwise
/// uniform 16x16 block already lifts the block variance past the segmenter
/// threshold, so every ridge-bearing block survives segmentation.
const RIDGE_GRAY: u8 = 40;
const VALLEY_GRAY: u8 = 245;

/// Concentric-ring master print. Rings sit at multiples of `ridge_period`;
/// seeded angular gaps cut each feature ring (two terminations per gap) and
/// short radial spurs grow outward from it (one bifurcation at the root, one
/// termination at the tip). Features stay 12 px clear of the innermost and
/// outermost rings so their minutiae survive a segment-derived mask too.
pub fn gen_master(
    width: usize,
    height: usize,
    ridge_period: u32,
    seed: u64,
) -> Result<FingerprintTemplate, SynthGenError> {
    if ridge_period < 3 {
        return Err(SynthGenError::PeriodTooSmall(ridge_period));
    }
    let p = ridge_period as i64;
    // Tips stay p - spur_len px away from the next ring outward; at the
    // default period 10 that is 5 px, far enough that the renderer's
    // one-pixel dilation never fuses them into it.
    let spur_len = (p - 5).max(2);
    let (cx, cy) = ((width / 2) as i64, (height / 2) as i64);
    let r_limit = (width.min(height) / 2) as i64 - 12 - spur_len;
    let radii: Vec<i64> = (3..).map(|k| k * p).take_while(|&r| r <= r_limit).collect();
    let too_small = SynthGenError::CanvasTooSmall { width, height, period: ridge_period };
    if radii.len() < 5 {
        return Err(too_small);
    }
    let (r_first, r_last) = (radii[0], *radii.last().unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = BitGrid::new(width, height);
    let mut features: Vec<(f64, f64)> = Vec::new();
    let center = (cx as f64, cy as f64);

    for &r in &radii {
        let mut ring = circle_pixels(cx, cy, r);
        // Feature rings keep a 12 px (one extraction window) moat to the
        // pattern boundary on both sides.
        if r - 12 >= r_first && r + spur_len + 12 <= r_last {
            for _ in 0..2 {
                try_gap(&mut ring, center, r as f64, &mut features, &mut rng);
            }
            for _ in 0..4 {
                try_spur(&ring, center, spur_len, &mut features, &mut rng, &mut grid);
            }
        }
        for &(x, y) in &ring {
            grid.set(x as usize, y as usize, true);
        }
    }

    let skeleton = raster::thin(&grid);
    let mask = BitGrid::filled(width, height, true);
    let minutiae = extract_minutiae(&skeleton, &mask, DEFAULT_BORDER_MARGIN);
    let terminations = minutiae.iter().filter(|m| m.kind == MinutiaKind::Termination).count();
    let bifurcations = minutiae.len() - terminations;
    if terminations < 20 || bifurcations < 20 {
        return Err(SynthGenError::TooFewMinutiae { terminations, bifurcations });
    }
    Ok(FingerprintTemplate { id: format!("synth-{seed}"), mask, skeleton, minutiae })
}

/// Cut an 8 px arc out of `ring` at a seeded angle, provided both fresh
/// endpoints clear every already-placed feature by `FEATURE_MIN_SEP`.
fn try_gap(
    ring: &mut Vec<(i64, i64)>,
    center: (f64, f64),
    radius: f64,
    features: &mut Vec<(f64, f64)>,
    rng: &mut ChaCha8Rng,
) {
    let half_deg = (4.0 / radius).to_degrees();
    for _ in 0..12 {
        let phi = rng.random_range(-180.0..180.0);
        let ends = [point_at(center, radius, phi - half_deg), point_at(center, radius, phi + half_deg)];
        if ends.iter().any(|e| too_close(*e, features)) {
            continue;
        }
        ring.retain(|&(x, y)| {
            angle_diff_deg(pixel_angle(center, x, y), phi) >= half_deg
        });
        features.extend_from_slice(&ends);
        return;
    }
}

/// Grow a radial spur of `spur_len` pixels outward from the ring pixel
/// nearest a seeded angle. The root pixel becomes a bifurcation, the tip a
/// termination.
fn try_spur(
    ring: &[(i64, i64)],
    center: (f64, f64),
    spur_len: i64,
    features: &mut Vec<(f64, f64)>,
    rng: &mut ChaCha8Rng,
    grid: &mut BitGrid,
) {
    for _ in 0..12 {
        let phi = rng.random_range(-180.0..180.0);
        let Some(&(ax, ay)) = ring
            .iter()
            .min_by(|&&(x1, y1), &&(x2, y2)| {
                angle_diff_deg(pixel_angle(center, x1, y1), phi)
                    .total_cmp(&angle_diff_deg(pixel_angle(center, x2, y2), phi))
            })
        else {
            return;
        };
        let (ux, uy) = {
            let (dx, dy) = (ax as f64 - center.0, ay as f64 - center.1);
            let n = dx.hypot(dy);
            (dx / n, dy / n)
        };
        let tip = (
            (ax as f64 + spur_len as f64 * ux).round() as i64,
            (ay as f64 + spur_len as f64 * uy).round() as i64,
        );
        let anchors = [(ax as f64, ay as f64), (tip.0 as f64, tip.1 as f64)];
        if anchors.iter().any(|a| too_close(*a, features)) {
            continue;
        }
        for (x, y) in line_pixels((ax, ay), tip) {
            grid.set(x as usize, y as usize, true);
        }
        features.extend_from_slice(&anchors);
        return;
    }
}

fn too_close(p: (f64, f64), features: &[(f64, f64)]) -> bool {
    features.iter().any(|f| (p.0 - f.0).hypot(p.1 - f.1) < FEATURE_MIN_SEP)
}

fn point_at(center: (f64, f64), radius: f64, angle_deg: f64) -> (f64, f64) {
    let r = angle_deg.to_radians();
    (center.0 + radius * r.cos(), center.1 + radius * r.sin())
}

fn pixel_angle(center: (f64, f64), x: i64, y: i64) -> f64 {
    (y as f64 - center.1).atan2(x as f64 - center.0).to_degrees()
}

/// Midpoint circle: 1-px-wide, 8-connected, deduplicated.
fn circle_pixels(cx: i64, cy: i64, r: i64) -> Vec<(i64, i64)> {
    let mut pts = Vec::new();
    let (mut x, mut y, mut d) = (r, 0i64, 1 - r);
    while y <= x {
        for &(px, py) in &[(x, y), (y, x), (-y, x), (-x, y), (-x, -y), (-y, -x), (y, -x), (x, -y)] {
            pts.push((cx + px, cy + py));
        }
        y += 1;
        if d < 0 {
            d += 2 * y + 1;
        } else {
            x -= 1;
            d += 2 * (y - x) + 1;
        }
    }
    pts.sort_unstable();
    pts.dedup();
    pts
}

/// Bresenham segment including both endpoints.
fn line_pixels(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut pts = Vec::new();
    loop {
        pts.push((x, y));
        if (x, y) == b {
            return pts;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Damaged impression of `master` under a known transform: transport every
/// skeleton pixel by `apply_round`, bridge images of 8-adjacent pixel pairs
/// so scaling and rotation cannot tear ridges, re-thin, then crop, drop
/// pixels, erase 3-px ridge breaks, and re-extract minutiae. The output
/// canvas grows past the master's only where transported pixels overflow it
/// (negative coordinates stay clipped), so an identity transport reproduces
/// the master exactly.
pub fn gen_impression(
    master: &FingerprintTemplate,
    t: &SimilarityTransform,
    noise: &NoiseParams,
    seed: u64,
) -> Result<FingerprintTemplate, SynthGenError> {
    t.validate_range().map_err(SynthGenError::TransformOutOfRange)?;
    if !(0.0..=1.0).contains(&noise.dropout) {
        return Err(SynthGenError::BadDropout(noise.dropout));
    }

    let (mut max_x, mut max_y) = (0i64, 0i64);
    for (x, y) in master.skeleton.iter_true() {
        let (tx, ty) = t.apply_round(x as f64, y as f64);
        max_x = max_x.max(tx);
        max_y = max_y.max(ty);
    }
    let w_out = master.skeleton.width().max((max_x + 9) as usize);
    let h_out = master.skeleton.height().max((max_y + 9) as usize);

    let mut grid = BitGrid::new(w_out, h_out);
    let set_clipped = |p: (i64, i64), g: &mut BitGrid| {
        if p.0 >= 0 && p.1 >= 0 && (p.0 as usize) < w_out && (p.1 as usize) < h_out {
            g.set(p.0 as usize, p.1 as usize, true);
        }
    };
    for (x, y) in master.skeleton.iter_true() {
        let a = t.apply_round(x as f64, y as f64);
        set_clipped(a, &mut grid);
        // Forward half of the 8-neighbourhood; the other half is covered
        // when the neighbour takes its own turn.
        for (dx, dy) in [(1i64, 0i64), (1, 1), (0, 1), (-1, 1)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if master.skeleton.get_i(nx, ny) {
                let b = t.apply_round(nx as f64, ny as f64);
                for p in line_pixels(a, b) {
                    set_clipped(p, &mut grid);
                }
            }
        }
    }

    let mut sk = raster::thin(&grid);
    if let Some(c) = noise.crop {
        for y in 0..h_out {
            for x in 0..w_out {
                if sk.get(x, y) && !c.contains(x as i64, y as i64) {
                    sk.set(x, y, false);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if noise.dropout > 0.0 {
        let pixels: Vec<(usize, usize)> = sk.iter_true().collect();
        for (x, y) in pixels {
            if rng.random::<f64>() < noise.dropout {
                sk.set(x, y, false);
            }
        }
    }
    for _ in 0..noise.ridge_breaks {
        let pixels: Vec<(usize, usize)> = sk.iter_true().collect();
        if pixels.is_empty() {
            break;
        }
        let (mut x, mut y) = pixels[rng.random_range(0..pixels.len())];
        sk.set(x, y, false);
        // Walk the ridge erasing two more pixels.
        for _ in 0..2 {
            let Some((nx, ny)) = RING8
                .iter()
                .map(|&(dx, dy)| (x as i64 + dx, y as i64 + dy))
                .find(|&(nx, ny)| sk.get_i(nx, ny))
            else {
                break;
            };
            (x, y) = (nx as usize, ny as usize);
            sk.set(x, y, false);
        }
    }

    let mask = BitGrid::filled(w_out, h_out, true);
    let minutiae = extract_minutiae(&sk, &mask, DEFAULT_BORDER_MARGIN);
    Ok(FingerprintTemplate {
        id: format!("{}-imp-{seed}", master.id),
        mask,
        skeleton: sk,
        minutiae,
    })
}

#[derive(Debug, Error)]
pub enum GenDbError {
    #[error(transparent)]
    Gen(#[from] SynthGenError),
    #[error(transparent)]
    Pnm(#[from] crate::pnm::PnmError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parameters for a synthetic database. Impressions move by seeded pure
/// translations of at most `max_shift` pixels per axis; rotation and scale
/// stay at identity so both correspondence-refinement modes remain exact on
/// the generated data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbParams {
    pub fingers: u32,
    pub impressions: u32,
    pub width: usize,
    pub height: usize,
    pub ridge_period: u32,
    pub max_shift: f64,
    pub noise: NoiseParams,
    pub seed: u64,
}

impl Default for DbParams {
    fn default() -> Self {
        DbParams {
            fingers: 10,
            impressions: 8,
            width: 288,
            height: 384,
            // Period 10 keeps rendered spurs long enough to survive
            // re-thinning (len 5) while staying 5 px clear of the next ring.
            ridge_period: 10,
            max_shift: 12.0,
            noise: NoiseParams::clean(),
            seed: 42,
        }
    }
}

/// Write `<finger>_<impression>.pgm` renders plus `<finger>_truth.txt`
/// ground-truth transforms for every finger. Masters vary per finger via
/// derived seeds; a master draw that lands under the minutiae floor retries
/// with a salted seed so generation stays deterministic.
pub fn gen_db(dir: &std::path::Path, p: &DbParams) -> Result<(), GenDbError> {
    use crate::seeds::derive_seed;
    std::fs::create_dir_all(dir)
        .map_err(|source| GenDbError::Io { path: dir.display().to_string(), source })?;
    for f in 1..=p.fingers {
        let master = (0..6)
            .find_map(|attempt| {
                let seed = derive_seed(p.seed, "master", &[f as u64, attempt]);
                gen_master(p.width, p.height, p.ridge_period, seed).ok()
            })
            .ok_or_else(|| {
                // Re-run the first attempt to surface its error.
                let seed = derive_seed(p.seed, "master", &[f as u64, 0]);
                match gen_master(p.width, p.height, p.ridge_period, seed) {
                    Err(e) => GenDbError::Gen(e),
                    Ok(_) => unreachable!("first attempt succeeded on retry"),
                }
            })?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, "transforms", &[f as u64]));
        let mut truth = Vec::new();
        for k in 1..=p.impressions {
            let t = SimilarityTransform::new(
                1.0,
                0.0,
                rng.random_range(-p.max_shift..=p.max_shift),
                rng.random_range(-p.max_shift..=p.max_shift),
            );
            let imp_seed = derive_seed(p.seed, "impression", &[f as u64, k as u64]);
            let imp = gen_impression(&master, &t, &p.noise, imp_seed)?;
            let img = render_skeleton(&imp.skeleton);
            crate::pnm::write_pgm(&dir.join(format!("{f}_{k}.pgm")), &img)?;
            truth.push((k, t));
        }
        crate::store::write_truth(&dir.join(format!("{f}_truth.txt")), &truth)?;
    }
    Ok(())
}

/// Paint each skeleton pixel as a dark 3x3 stamp on a light background.
/// The dilation closes any single dropped pixel (every 8-neighbour's stamp
/// covers it), so only dropout runs of 3+ pixels or deliberate 3-px breaks
/// survive re-thinning. Masters keep spur tips 5 px clear of the next ring,
/// which a one-pixel dilation on each side cannot bridge.
pub fn render_skeleton(sk: &Skeleton) -> GrayImage {
    let mut img = GrayImage::filled(sk.width(), sk.height(), VALLEY_GRAY);
    for (x, y) in sk.iter_true() {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (px, py) = (x as i64 + dx, y as i64 + dy);
                if px >= 0
                    && py >= 0
                    && (px as usize) < sk.width()
                    && (py as usize) < sk.height()
                {
                    img.set(px as usize, py as usize, RIDGE_GRAY);
                }
            }
        }
    }
    img
}
