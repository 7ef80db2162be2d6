//! Planar similarity transforms (scale, rotation, translation) in pixel
//! coordinates, plus the parameter search box used by the alignment step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("similarity with zero scale has no inverse")]
    SingularTransform,
}

/// First parameter (in s, theta, tx, ty order) outside its range.
#[derive(Debug, Error, PartialEq)]
pub enum OutOfRange {
    #[error("scale {0} outside [{lo}, {hi}]", lo = PARAM_BOX.s.0, hi = PARAM_BOX.s.1)]
    S(f64),
    #[error("rotation {0} deg outside [{lo}, {hi}]", lo = PARAM_BOX.theta_deg.0, hi = PARAM_BOX.theta_deg.1)]
    Theta(f64),
    #[error("tx {0} outside [{lo}, {hi}]", lo = PARAM_BOX.tx.0, hi = PARAM_BOX.tx.1)]
    Tx(f64),
    #[error("ty {0} outside [{lo}, {hi}]", lo = PARAM_BOX.ty.0, hi = PARAM_BOX.ty.1)]
    Ty(f64),
}

/// Similarity transform `y = s * R(theta) * x + t`, with
/// `R = [[cos, -sin], [sin, cos]]` acting on pixel coordinates
/// (x right, y down) and `theta` in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub s: f64,
    pub theta_deg: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub fn new(s: f64, theta_deg: f64, tx: f64, ty: f64) -> Self {
        SimilarityTransform { s, theta_deg, tx, ty }
    }

    pub fn identity() -> Self {
        SimilarityTransform { s: 1.0, theta_deg: 0.0, tx: 0.0, ty: 0.0 }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let r = self.theta_deg.to_radians();
        let (sin, cos) = r.sin_cos();
        (
            self.s * (cos * x - sin * y) + self.tx,
            self.s * (sin * x + cos * y) + self.ty,
        )
    }

    /// Apply and round each coordinate to the nearest integer pixel.
    pub fn apply_round(&self, x: f64, y: f64) -> (i64, i64) {
        let (fx, fy) = self.apply(x, y);
        (fx.round() as i64, fy.round() as i64)
    }

    /// `a.compose(b)` is "b first, then a":
    /// `a.compose(b).apply(p) == a.apply(b.apply(p))`.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        let (tx, ty) = self.apply(other.tx, other.ty);
        SimilarityTransform {
            s: self.s * other.s,
            theta_deg: self.theta_deg + other.theta_deg,
            tx,
            ty,
        }
    }

    /// Exact inverse: `invert(t).compose(t)` is the identity.
    pub fn invert(&self) -> Result<SimilarityTransform, GeometryError> {
        if self.s == 0.0 {
            return Err(GeometryError::SingularTransform);
        }
        let r = (-self.theta_deg).to_radians();
        let (sin, cos) = r.sin_cos();
        let inv_s = 1.0 / self.s;
        Ok(SimilarityTransform {
            s: inv_s,
            theta_deg: -self.theta_deg,
            tx: -inv_s * (cos * self.tx - sin * self.ty),
            ty: -inv_s * (sin * self.tx + cos * self.ty),
        })
    }

    /// Check the default parameter box, reporting the first violation in
    /// s, theta, tx, ty order. Boundaries are inclusive.
    pub fn validate_range(&self) -> Result<(), OutOfRange> {
        let b = PARAM_BOX;
        if !(b.s.0..=b.s.1).contains(&self.s) {
            return Err(OutOfRange::S(self.s));
        }
        if !(b.theta_deg.0..=b.theta_deg.1).contains(&self.theta_deg) {
            return Err(OutOfRange::Theta(self.theta_deg));
        }
        if !(b.tx.0..=b.tx.1).contains(&self.tx) {
            return Err(OutOfRange::Tx(self.tx));
        }
        if !(b.ty.0..=b.ty.1).contains(&self.ty) {
            return Err(OutOfRange::Ty(self.ty));
        }
        Ok(())
    }
}

/// Inclusive parameter ranges the alignment search explores. Transforms
/// between impressions of one finger are expected to fall inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBox {
    pub s: (f64, f64),
    pub theta_deg: (f64, f64),
    pub tx: (f64, f64),
    pub ty: (f64, f64),
}

/// Default search box: near-unit scale, rotation within 30 degrees,
/// translations covering a 300x300 sensor overlap.
pub const PARAM_BOX: ParamBox = ParamBox {
    s: (0.97, 1.2),
    theta_deg: (-30.0, 30.0),
    tx: (-114.0, 152.0),
    ty: (-128.0, 156.0),
};

impl ParamBox {
    pub fn contains(&self, t: &SimilarityTransform) -> bool {
        self.s.0 <= t.s
            && t.s <= self.s.1
            && self.theta_deg.0 <= t.theta_deg
            && t.theta_deg <= self.theta_deg.1
            && self.tx.0 <= t.tx
            && t.tx <= self.tx.1
            && self.ty.0 <= t.ty
            && t.ty <= self.ty.1
    }

    /// Clamp each parameter into its range.
    pub fn clamp(&self, t: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            s: t.s.clamp(self.s.0, self.s.1),
            theta_deg: t.theta_deg.clamp(self.theta_deg.0, self.theta_deg.1),
            tx: t.tx.clamp(self.tx.0, self.tx.1),
            ty: t.ty.clamp(self.ty.0, self.ty.1),
        }
    }
}

/// Outcome of aligning one template onto the mean template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamEntry {
    Aligned { id: String, transform: SimilarityTransform, fitness: u32 },
    Failed { id: String, reason: String },
}

impl ParamEntry {
    pub fn id(&self) -> &str {
        match self {
            ParamEntry::Aligned { id, .. } | ParamEntry::Failed { id, .. } => id,
        }
    }
}

/// One alignment entry per non-mean template, in template input order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamList {
    pub entries: Vec<ParamEntry>,
}

impl ParamList {
    pub fn get(&self, id: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.id() == id)
    }
}

/// Euclidean distance between two points.
pub fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

/// Normalize an angle in degrees into [0, 360).
pub fn normalize_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    // rem_euclid can return 360.0 when a is a tiny negative number.
    if r >= 360.0 { 0.0 } else { r }
}

/// Fold an angle in degrees into (-180, 180].
pub fn fold_deg(a: f64) -> f64 {
    let r = normalize_deg(a);
    if r > 180.0 { r - 360.0 } else { r }
}

/// Cyclic angular difference in degrees, in [0, 180].
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let d = (normalize_deg(a) - normalize_deg(b)).abs();
    if d > 180.0 { 360.0 - d } else { d }
}
