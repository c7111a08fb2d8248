//! Box algebra, projective transforms and robust homography fitting.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid bounding box [{x}, {y}, {w}, {h}]")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("point maps to infinity (w = {0:e})")]
    PointAtInfinity(f64),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("homography is singular")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned box `[x, y, w, h]` in pixels, origin top-left, y downward.
///
/// Width and height are strictly positive and every coordinate is finite.
/// Serialized as a four-element array; integral values are written as
/// integers so annotation files keep integer pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let ok = [x, y, w, h].iter().all(|v| v.is_finite()) && w > 0.0 && h > 0.0;
        if ok {
            Ok(Self { x, y, w, h })
        } else {
            Err(GeometryError::InvalidBox { x, y, w, h })
        }
    }

    /// Builds a box from its left/top/right/bottom edges.
    pub fn from_edges(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self, GeometryError> {
        Self::new(left, top, right - left, bottom - top)
    }

    /// Smallest box containing all points; `None` for empty or degenerate sets.
    pub fn enclosing(points: impl IntoIterator<Item = Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut l, mut t, mut r, mut b) = (first.x, first.y, first.x, first.y);
        for p in it {
            l = l.min(p.x);
            t = t.min(p.y);
            r = r.max(p.x);
            b = b.max(p.y);
        }
        Self::from_edges(l, t, r, b).ok()
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn right(&self) -> f64 {
        self.x + self.w
    }
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
    pub fn top_right(&self) -> Point {
        Point::new(self.right(), self.y)
    }
    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x, self.y),
            Point::new(self.right(), self.y),
            Point::new(self.right(), self.bottom()),
            Point::new(self.x, self.bottom()),
        ]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        Self::from_edges(
            self.x.max(other.x),
            self.y.max(other.y),
            self.right().min(other.right()),
            self.bottom().min(other.bottom()),
        )
        .ok()
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        Self {
            x: self.x.min(other.x),
            y: self.y.min(other.y),
            w: self.right().max(other.right()) - self.x.min(other.x),
            h: self.bottom().max(other.bottom()) - self.y.min(other.y),
        }
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.intersection_area(other) > 0.0
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x && p.x <= self.right() && p.y >= self.y && p.y <= self.bottom()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BoundingBox {
        Self { x: self.x + dx, y: self.y + dy, ..*self }
    }

    pub fn scale(&self, s: f64) -> BoundingBox {
        Self { x: self.x * s, y: self.y * s, w: self.w * s, h: self.h * s }
    }

    /// Grows the box by `frac` of its size on every side.
    pub fn dilate(&self, frac: f64) -> BoundingBox {
        let dx = self.w * frac;
        let dy = self.h * frac;
        Self { x: self.x - dx, y: self.y - dy, w: self.w + 2.0 * dx, h: self.h + 2.0 * dy }
    }

    /// Clips to `[0,width]×[0,height]`; `None` if nothing remains.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BoundingBox> {
        Self::from_edges(
            self.x.clamp(0.0, width),
            self.y.clamp(0.0, height),
            self.right().clamp(0.0, width),
            self.bottom().clamp(0.0, height),
        )
        .ok()
    }

    /// Integer pixel range `(x0, y0, x1, y1)` (exclusive end) of pixels whose
    /// centers lie inside the box, clipped to an image of the given size.
    pub fn pixel_span(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let lo = |v: f64, max: usize| ((v - 0.5).ceil().max(0.0) as usize).min(max);
        let hi = |v: f64, max: usize| ((v - 0.5).floor() + 1.0).clamp(0.0, max as f64) as usize;
        let x0 = lo(self.x, width);
        let y0 = lo(self.y, height);
        let x1 = hi(self.right(), width).max(x0);
        let y1 = hi(self.bottom(), height).max(y0);
        (x0, y0, x1, y1)
    }
}

fn write_coord<S: serde::ser::SerializeSeq>(seq: &mut S, v: f64) -> Result<(), S::Error> {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        seq.serialize_element(&(v as i64))
    } else {
        seq.serialize_element(&v)
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = serializer.serialize_seq(Some(4))?;
        for v in self.to_array() {
            write_coord(&mut seq, v)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(deserializer)?;
        BoundingBox::new(x, y, w, h).map_err(D::Error::custom)
    }
}

/// Intersection over union using continuous box area.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    // Edge-difference areas keep iou(a, a) exactly 1.
    let area = |b: &BoundingBox| (b.right() - b.x) * (b.bottom() - b.y);
    let union = area(a) + area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A pair of matched points; a fitted model maps `src` onto `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: Point,
    pub dst: Point,
}

impl Correspondence {
    pub fn new(src: Point, dst: Point) -> Self {
        Self { src, dst }
    }
}

const W_EPS: f64 = 1e-12;

/// 3×3 projective transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]] }
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self { m: [[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]] }
    }

    /// Validates invertibility and rescales so that `m[2][2] == 1` when possible.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        let mat = to_na(&m);
        let norm = mat.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(GeometryError::Singular);
        }
        let unit = mat / norm;
        if unit.determinant().abs() < W_EPS {
            return Err(GeometryError::Singular);
        }
        let scaled = if mat[(2, 2)].abs() > W_EPS * norm { mat / mat[(2, 2)] } else { unit };
        Ok(Self { m: from_na(&scaled) })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        to_na(&self.m)
    }

    pub fn apply(&self, p: Point) -> Result<Point, GeometryError> {
        let m = &self.m;
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        if w.abs() < W_EPS {
            return Err(GeometryError::PointAtInfinity(w));
        }
        Ok(Point::new(
            (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
            (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w,
        ))
    }

    pub fn inverse(&self) -> Result<Homography, GeometryError> {
        let inv = self.matrix().try_inverse().ok_or(GeometryError::Singular)?;
        Homography::from_matrix(from_na(&inv))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Homography, GeometryError> {
        Homography::from_matrix(from_na(&(self.matrix() * other.matrix())))
    }

    /// Bounding box of the transformed corners of `b`.
    pub fn map_box(&self, b: &BoundingBox) -> Result<BoundingBox, GeometryError> {
        let pts = b.corners().iter().map(|p| self.apply(*p)).collect::<Result<Vec<_>, _>>()?;
        BoundingBox::enclosing(pts).ok_or_else(|| GeometryError::DegenerateConfiguration("box collapsed".into()))
    }

    pub fn reprojection_error(&self, c: &Correspondence) -> f64 {
        match self.apply(c.src) {
            Ok(p) => p.distance(&c.dst),
            Err(_) => f64::INFINITY,
        }
    }
}

fn to_na(m: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2])
}

fn from_na(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// Translate to the centroid and scale the mean distance to √2.
fn normalizer(pts: impl Iterator<Item = Point> + Clone) -> Matrix3<f64> {
    let n = pts.clone().count() as f64;
    let cx = pts.clone().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.clone().map(|p| p.y).sum::<f64>() / n;
    let mean = pts.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    let s = if mean > 1e-15 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Least-squares projective fit by the normalized direct linear transform.
pub fn estimate_homography_dlt(corrs: &[Correspondence]) -> Result<Homography, GeometryError> {
    if corrs.len() < 4 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "need at least 4 correspondences, got {}",
            corrs.len()
        )));
    }
    if corrs.iter().any(|c| ![c.src.x, c.src.y, c.dst.x, c.dst.y].iter().all(|v| v.is_finite())) {
        return Err(GeometryError::DegenerateConfiguration("non-finite coordinate".into()));
    }
    let ts = normalizer(corrs.iter().map(|c| c.src));
    let td = normalizer(corrs.iter().map(|c| c.dst));

    // Pad to at least 9 rows so the SVD yields a full 9×9 right basis.
    let rows = (2 * corrs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in corrs.iter().enumerate() {
        let s = ts * Vector3::new(c.src.x, c.src.y, 1.0);
        let d = td * Vector3::new(c.dst.x, c.dst.y, 1.0);
        let (x, y) = (s[0], s[1]);
        let (u, v) = (d[0], d[1]);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| GeometryError::DegenerateConfiguration("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut idx: Vec<usize> = (0..sv.len()).collect();
    idx.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, second) = (idx[0], idx[1]);
    let largest = sv[idx[idx.len() - 1]];
    if sv[second] <= 1e-10 * largest {
        return Err(GeometryError::DegenerateConfiguration("design matrix is rank-deficient".into()));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| GeometryError::DegenerateConfiguration("normalization".into()))?;
    let full = td_inv * hn * ts;
    Homography::from_matrix(from_na(&full))
        .map_err(|_| GeometryError::DegenerateConfiguration("fitted transform is singular".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    /// Reprojection error below which a correspondence counts as inlier.
    pub inlier_px: f64,
    pub iters: usize,
    /// A model is reported only when strictly more inliers than this are found.
    pub min_inliers: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { inlier_px: 1.5, iters: 1000, min_inliers: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub homography: Homography,
    /// Indices into the input correspondences, ascending.
    pub inliers: Vec<usize>,
}

fn collinear(a: Point, b: Point, c: Point) -> bool {
    let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let scale = (b.x - a.x).hypot(b.y - a.y) * (c.x - a.x).hypot(c.y - a.y);
    cross.abs() <= 1e-9 * scale.max(1e-12)
}

fn sample_is_degenerate(pts: &[Point]) -> bool {
    (0..4).any(|skip| {
        let tri: Vec<Point> = (0..4).filter(|&k| k != skip).map(|k| pts[k]).collect();
        collinear(tri[0], tri[1], tri[2])
    })
}

fn inliers_of(h: &Homography, corrs: &[Correspondence], px: f64) -> Vec<usize> {
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| h.reprojection_error(c) < px)
        .map(|(i, _)| i)
        .collect()
}

/// Robust homography fit. Returns `None` ("pages do not correspond") when
/// the best consensus set has `min_inliers` or fewer members.
pub fn ransac_homography<R: Rng + ?Sized>(
    corrs: &[Correspondence],
    params: &RansacParams,
    rng: &mut R,
) -> Option<RansacFit> {
    if corrs.len() < 4 || corrs.len() <= params.min_inliers {
        return None;
    }
    let mut best: Option<(Homography, Vec<usize>)> = None;
    for _ in 0..params.iters {
        let pick = sample(rng, corrs.len(), 4).into_vec();
        let subset: Vec<Correspondence> = pick.iter().map(|&i| corrs[i]).collect();
        let srcs: Vec<Point> = subset.iter().map(|c| c.src).collect();
        let dsts: Vec<Point> = subset.iter().map(|c| c.dst).collect();
        if sample_is_degenerate(&srcs) || sample_is_degenerate(&dsts) {
            continue;
        }
        let Ok(h) = estimate_homography_dlt(&subset) else { continue };
        let inl = inliers_of(&h, corrs, params.inlier_px);
        if best.as_ref().map_or(true, |(_, b)| inl.len() > b.len()) {
            best = Some((h, inl));
        }
    }
    let (h, inl) = best?;
    if inl.len() <= params.min_inliers {
        return None;
    }
    let subset: Vec<Correspondence> = inl.iter().map(|&i| corrs[i]).collect();
    let (h, inl) = match estimate_homography_dlt(&subset) {
        Ok(refit) => {
            let refit_inl = inliers_of(&refit, corrs, params.inlier_px);
            if refit_inl.len() >= inl.len() {
                (refit, refit_inl)
            } else {
                (h, inl)
            }
        }
        Err(_) => (h, inl),
    };
    (inl.len() > params.min_inliers).then_some(RansacFit { homography: h, inliers: inl })
}
