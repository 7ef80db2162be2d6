//! Pixel grids and the image-to-skeleton preprocessing steps: foreground
//! segmentation, local-mean binarization, and thinning to unit-width ridges.
//!
//! Coordinate convention used by every module: origin at the top-left,
//! `x` = column growing rightward, `y` = row growing downward.

use std::path::Path;

use crate::pnm;

/// 8-bit grayscale image, row-major, 0 = black.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert_eq!(data.len(), width * height, "pixel buffer length mismatch");
        GrayImage { width, height, data }
    }

    /// Uniform image of a single intensity.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }
}

/// Row-major grid of booleans. Serves as the fingerprint-area mask
/// (`Mask`), the binarized ridge map (`BinaryRaster`), and the thinned
/// unit-width ridge map (`Skeleton`); the aliases document intent, the
/// invariants are enforced by the operations that produce each kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGrid {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

/// Grid of booleans marking the fingerprint area.
pub type Mask = BitGrid;
/// Ridge/valley map: true = ridge pixel, only inside the mask.
pub type BinaryRaster = BitGrid;
/// Unit-width ridge map: no 2x2 block of four true pixels.
pub type Skeleton = BitGrid;

impl BitGrid {
    pub fn new(width: usize, height: usize) -> Self {
        BitGrid { width, height, bits: vec![false; width * height] }
    }

    pub fn filled(width: usize, height: usize, v: bool) -> Self {
        BitGrid { width, height, bits: vec![v; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.bits[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as false.
    pub fn get_i(&self, x: i64, y: i64) -> bool {
        if self.in_bounds(x, y) {
            self.bits[y as usize * self.width + x as usize]
        } else {
            false
        }
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.bits[y * self.width + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True pixels in row-major order.
    pub fn iter_true(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn raw_bits(&self) -> &[bool] {
        &self.bits
    }
}

/// 8-neighbour offsets in ring order N, NE, E, SE, S, SW, W, NW
/// (the P2..P9 order used by crossing-number and thinning rules).
pub const RING8: [(i64, i64); 8] =
    [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

/// 8-neighbour offsets in row-major order; walk tie-breaks use this.
pub const NEIGHBORS8_ROW_MAJOR: [(i64, i64); 8] =
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

fn ring_values(grid: &BitGrid, x: i64, y: i64) -> [bool; 8] {
    let mut out = [false; 8];
    for (i, (dx, dy)) in RING8.iter().enumerate() {
        out[i] = grid.get_i(x + dx, y + dy);
    }
    out
}

/// Number of 0-to-1 transitions around the 8-neighbour ring.
fn ring_transitions(n: &[bool; 8]) -> u32 {
    let mut t = 0;
    for i in 0..8 {
        if !n[i] && n[(i + 1) % 8] {
            t += 1;
        }
    }
    t
}

/// Load a binary PGM (P5, maxval 255) as a grayscale image.
pub fn load_image(path: &Path) -> Result<GrayImage, pnm::PnmError> {
    pnm::read_pgm(path)
}

/// Mark the fingerprint area: a block is foreground iff its intensity
/// variance is at least `var_threshold`. The mask is per-pixel (blocks
/// expanded); edge blocks may be partial.
pub fn segment(img: &GrayImage, block: usize, var_threshold: f64) -> Mask {
    assert!(block >= 4, "segmentation block must be at least 4 px");
    let mut mask = BitGrid::new(img.width(), img.height());
    let mut by = 0;
    while by < img.height() {
        let bh = block.min(img.height() - by);
        let mut bx = 0;
        while bx < img.width() {
            let bw = block.min(img.width() - bx);
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for y in by..by + bh {
                for x in bx..bx + bw {
                    let v = img.get(x, y) as f64;
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let n = (bw * bh) as f64;
            let mean = sum / n;
            let var = sum_sq / n - mean * mean;
            if var >= var_threshold {
                for y in by..by + bh {
                    for x in bx..bx + bw {
                        mask.set(x, y, true);
                    }
                }
            }
            bx += block;
        }
        by += block;
    }
    mask
}

/// Binarize against the local block mean: inside the mask a pixel is a
/// ridge iff its intensity is strictly below the mean of its block;
/// outside the mask everything is false.
pub fn binarize(img: &GrayImage, mask: &Mask, block: usize) -> BinaryRaster {
    assert_eq!(
        (mask.width(), mask.height()),
        (img.width(), img.height()),
        "mask dimensions must match the image"
    );
    let mut out = BitGrid::new(img.width(), img.height());
    let mut by = 0;
    while by < img.height() {
        let bh = block.min(img.height() - by);
        let mut bx = 0;
        while bx < img.width() {
            let bw = block.min(img.width() - bx);
            let mut sum = 0.0f64;
            for y in by..by + bh {
                for x in bx..bx + bw {
                    sum += img.get(x, y) as f64;
                }
            }
            let mean = sum / (bw * bh) as f64;
            for y in by..by + bh {
                for x in bx..bx + bw {
                    if mask.get(x, y) && (img.get(x, y) as f64) < mean {
                        out.set(x, y, true);
                    }
                }
            }
            bx += block;
        }
        by += block;
    }
    out
}

/// Thin ridges to unit width: Zhang-Suen two-subiteration thinning run to
/// convergence, followed by a connectivity-preserving sweep that clears
/// any remaining 2x2 blocks.
///
/// Note the classic endpoint behaviour: the flat ends of a thick bar
/// erode by up to half the bar width, so a thinned line may span slightly
/// fewer columns than the input region.
pub fn thin(bin: &BinaryRaster) -> Skeleton {
    let mut sk = bin.clone();
    loop {
        let a = zhang_suen_subiteration(&mut sk, SubIteration::First);
        let b = zhang_suen_subiteration(&mut sk, SubIteration::Second);
        if a == 0 && b == 0 {
            break;
        }
    }
    clear_two_by_two_blocks(&mut sk);
    sk
}

#[derive(Clone, Copy)]
enum SubIteration {
    First,
    Second,
}

fn zhang_suen_subiteration(grid: &mut BitGrid, step: SubIteration) -> usize {
    let mut marks = Vec::new();
    for (x, y) in grid.iter_true() {
        let (xi, yi) = (x as i64, y as i64);
        let n = ring_values(grid, xi, yi);
        let b = n.iter().filter(|&&v| v).count();
        if !(2..=6).contains(&b) || ring_transitions(&n) != 1 {
            continue;
        }
        // Ring order is N, NE, E, SE, S, SW, W, NW = P2..P9.
        let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
        let ok = match step {
            SubIteration::First => !(p2 && p4 && p6) && !(p4 && p6 && p8),
            SubIteration::Second => !(p2 && p4 && p8) && !(p2 && p6 && p8),
        };
        if ok {
            marks.push((x, y));
        }
    }
    for &(x, y) in &marks {
        grid.set(x, y, false);
    }
    marks.len()
}

/// Remove one 8-simple pixel from each remaining 2x2 all-true block,
/// repeating until stable. A pixel is 8-simple when its true neighbours
/// form a single arc around the ring, so deleting it cannot split the
/// component. Blocks with no simple pixel (crossing diagonals) are left
/// alone: connectivity wins over unit width there.
fn clear_two_by_two_blocks(grid: &mut BitGrid) {
    loop {
        let mut removed = false;
        for y in 0..grid.height().saturating_sub(1) {
            for x in 0..grid.width().saturating_sub(1) {
                if !(grid.get(x, y)
                    && grid.get(x + 1, y)
                    && grid.get(x, y + 1)
                    && grid.get(x + 1, y + 1))
                {
                    continue;
                }
                for (cx, cy) in [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)] {
                    let n = ring_values(grid, cx as i64, cy as i64);
                    if ring_transitions(&n) == 1 {
                        grid.set(cx, cy, false);
                        removed = true;
                        break;
                    }
                }
            }
        }
        if !removed {
            return;
        }
    }
}

/// Count of true pixels.
pub fn area(mask: &Mask) -> usize {
    mask.count_ones()
}

/// First 2x2 all-true block, if any (exhaustive scan).
pub fn find_two_by_two_block(grid: &BitGrid) -> Option<(usize, usize)> {
    for y in 0..grid.height().saturating_sub(1) {
        for x in 0..grid.width().saturating_sub(1) {
            if grid.get(x, y)
                && grid.get(x + 1, y)
                && grid.get(x, y + 1)
                && grid.get(x + 1, y + 1)
            {
                return Some((x, y));
            }
        }
    }
    None
}
