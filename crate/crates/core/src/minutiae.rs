//! Minutiae extraction from a thinned skeleton: crossing numbers classify
//! ridge endings and bifurcations, short ridge traces give each minutia a
//! tangent angle.

use crate::geometry::{angle_diff_deg, fold_deg, SimilarityTransform};
use crate::raster::{Mask, Skeleton, RING8};

pub const DEFAULT_TRACE_LEN: usize = 5;
pub const DEFAULT_BORDER_MARGIN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MinutiaKind {
    Termination,
    Bifurcation,
}

impl MinutiaKind {
    pub fn letter(self) -> char {
        match self {
            MinutiaKind::Termination => 'T',
            MinutiaKind::Bifurcation => 'B',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'T' => Some(MinutiaKind::Termination),
            'B' => Some(MinutiaKind::Bifurcation),
            _ => None,
        }
    }
}

/// A ridge ending or bifurcation. `angle_deg` is the ridge tangent in
/// degrees, counter-clockwise-positive (math convention, y flipped),
/// folded into (-180, 180].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minutia {
    pub x: i64,
    pub y: i64,
    pub kind: MinutiaKind,
    pub angle_deg: f64,
}

impl Minutia {
    fn order_key(&self) -> (i64, i64, MinutiaKind) {
        (self.y, self.x, self.kind)
    }
}

/// Minutiae in row-major order. At most one minutia per (x, y, kind);
/// a termination and a bifurcation may legitimately coexist at one pixel
/// after fusion maps several impressions onto the same spot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinutiaeSet {
    items: Vec<Minutia>,
}

impl MinutiaeSet {
    pub fn new() -> Self {
        MinutiaeSet { items: Vec::new() }
    }

    /// Sorts row-major; on (x, y, kind) collisions the earliest input wins.
    pub fn from_vec(mut items: Vec<Minutia>) -> Self {
        // Stable sort keeps first-come-first-kept semantics for dedup.
        items.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        items.dedup_by_key(|m| m.order_key());
        MinutiaeSet { items }
    }

    /// Insert keeping order; returns false (and changes nothing) when a
    /// minutia with the same position and kind is already present.
    pub fn insert(&mut self, m: Minutia) -> bool {
        match self.items.binary_search_by(|probe| probe.order_key().cmp(&m.order_key())) {
            Ok(_) => false,
            Err(idx) => {
                self.items.insert(idx, m);
                true
            }
        }
    }

    pub fn contains(&self, x: i64, y: i64, kind: MinutiaKind) -> bool {
        self.items
            .binary_search_by(|probe| probe.order_key().cmp(&(y, x, kind)))
            .is_ok()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Minutia> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[Minutia] {
        &self.items
    }

    pub fn retain(&mut self, f: impl FnMut(&Minutia) -> bool) {
        self.items.retain(f);
    }

    /// Map every minutia through `t`: positions rounded to pixels, angles
    /// carried along with the rotation.
    ///
    /// Stored angles live in the y-up math frame while `t` rotates the
    /// y-down pixel plane, so a rotation by theta shifts stored angles by
    /// minus theta. Position collisions after rounding collapse to the
    /// row-major-first minutia.
    pub fn transformed(&self, t: &SimilarityTransform) -> MinutiaeSet {
        let items = self
            .items
            .iter()
            .map(|m| {
                let (x, y) = t.apply_round(m.x as f64, m.y as f64);
                Minutia { x, y, kind: m.kind, angle_deg: fold_deg(m.angle_deg - t.theta_deg) }
            })
            .collect();
        MinutiaeSet::from_vec(items)
    }
}

impl<'a> IntoIterator for &'a MinutiaeSet {
    type Item = &'a Minutia;
    type IntoIter = std::slice::Iter<'a, Minutia>;
    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Crossing number at `p`: half the sum of absolute differences around
/// the 8-neighbour ring, i.e. the number of distinct ridge branches
/// leaving the pixel. Out-of-image neighbours count as background.
pub fn crossing_number(sk: &Skeleton, x: usize, y: usize) -> u32 {
    let (xi, yi) = (x as i64, y as i64);
    let mut cn = 0;
    for i in 0..8 {
        let (dx0, dy0) = RING8[i];
        let (dx1, dy1) = RING8[(i + 1) % 8];
        let a = sk.get_i(xi + dx0, yi + dy0) as u32;
        let b = sk.get_i(xi + dx1, yi + dy1) as u32;
        cn += a.abs_diff(b);
    }
    cn / 2
}

/// True when every pixel within Chebyshev distance `margin` of (x, y) is
/// inside the mask; image borders count as outside.
fn clears_border(mask: &Mask, x: usize, y: usize, margin: usize) -> bool {
    let m = margin as i64;
    let (xi, yi) = (x as i64, y as i64);
    for dy in -m..=m {
        for dx in -m..=m {
            if !mask.get_i(xi + dx, yi + dy) {
                return false;
            }
        }
    }
    true
}

/// Scan the skeleton row-major and report CN=1 pixels as terminations and
/// CN=3 pixels as bifurcations, skipping anything within `border_margin`
/// of the mask boundary.
pub fn extract_minutiae(sk: &Skeleton, mask: &Mask, border_margin: usize) -> MinutiaeSet {
    let mut items = Vec::new();
    for (x, y) in sk.iter_true() {
        let kind = match crossing_number(sk, x, y) {
            1 => MinutiaKind::Termination,
            3 => MinutiaKind::Bifurcation,
            _ => continue,
        };
        if !clears_border(mask, x, y, border_margin) {
            continue;
        }
        let (angle_deg, _degraded) = minutia_angle(sk, (x, y), DEFAULT_TRACE_LEN);
        items.push(Minutia { x: x as i64, y: y as i64, kind, angle_deg });
    }
    MinutiaeSet::from_vec(items)
}

/// The true-neighbour arcs around `p`: maximal runs of set pixels in the
/// cyclic 8-ring, each reported by its first pixel. One arc per ridge
/// branch leaving `p`.
fn branch_starts(sk: &Skeleton, x: i64, y: i64) -> Vec<(i64, i64)> {
    let ring: Vec<bool> = RING8.iter().map(|(dx, dy)| sk.get_i(x + dx, y + dy)).collect();
    let Some(first_gap) = ring.iter().position(|&v| !v) else {
        return Vec::new(); // fully surrounded: no distinct branches
    };
    let mut starts = Vec::new();
    let mut prev = false;
    for k in 0..8 {
        let i = (first_gap + k) % 8;
        if ring[i] && !prev {
            starts.push((x + RING8[i].0, y + RING8[i].1));
        }
        prev = ring[i];
    }
    starts
}

/// Walk one branch from `p` through `start`, at most `trace_len` steps.
/// Returns the end pixel and the number of steps actually taken.
fn trace_branch(
    sk: &Skeleton,
    p: (i64, i64),
    start: (i64, i64),
    trace_len: usize,
) -> ((i64, i64), usize) {
    let mut visited = vec![p, start];
    let mut current = start;
    let mut steps = 1;
    'walk: while steps < trace_len {
        for (dx, dy) in RING8 {
            let next = (current.0 + dx, current.1 + dy);
            if sk.get_i(next.0, next.1) && !visited.contains(&next) {
                visited.push(next);
                current = next;
                steps += 1;
                continue 'walk;
            }
        }
        break;
    }
    (current, steps)
}

fn direction_deg(p: (i64, i64), end: (i64, i64)) -> f64 {
    // y negated: angles are counter-clockwise-positive over the image.
    ((p.1 - end.1) as f64).atan2((end.0 - p.0) as f64).to_degrees()
}

/// Ridge tangent angle at a minutia, in degrees in (-180, 180].
///
/// Terminations trace their single branch. Bifurcations trace all
/// branches and report the one most opposed to the mean direction of the
/// others: that branch is the ridge the fork grows out of.
///
/// Returns (angle, degraded); traces shorter than 2 px yield angle 0 with
/// the degraded flag set.
pub fn minutia_angle(sk: &Skeleton, p: (usize, usize), trace_len: usize) -> (f64, bool) {
    let pi = (p.0 as i64, p.1 as i64);
    let starts = branch_starts(sk, pi.0, pi.1);
    if starts.is_empty() {
        return (0.0, true);
    }
    let traces: Vec<((i64, i64), usize)> =
        starts.iter().map(|&s| trace_branch(sk, pi, s, trace_len)).collect();
    if traces.len() == 1 {
        let (end, steps) = traces[0];
        if steps < 2 {
            return (0.0, true);
        }
        return (fold_deg(direction_deg(pi, end)), false);
    }
    // Several branches: score each against the circular mean of the rest.
    let angles: Vec<f64> = traces.iter().map(|&(end, _)| direction_deg(pi, end)).collect();
    let mut best = 0;
    let mut best_opposition = -1.0;
    for i in 0..angles.len() {
        let (mut sx, mut sy) = (0.0, 0.0);
        for (j, a) in angles.iter().enumerate() {
            if j != i {
                sx += a.to_radians().cos();
                sy += a.to_radians().sin();
            }
        }
        let mean = sy.atan2(sx).to_degrees();
        let opposition = angle_diff_deg(angles[i], mean);
        if opposition > best_opposition {
            best_opposition = opposition;
            best = i;
        }
    }
    if traces[best].1 < 2 {
        return (0.0, true);
    }
    (fold_deg(angles[best]), false)
}
