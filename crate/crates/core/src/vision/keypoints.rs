//! Harris corners with normalized-patch descriptors, and ratio-test matching.
//!
//! This is a plain stand-in for a learned or scale-invariant feature; it is
//! sufficient for pages that differ by a mild projective warp.

use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use crate::geometry::{Correspondence, Point};

pub const PATCH: usize = 16;
pub const DEFAULT_MAX_KEYPOINTS: usize = 500;
const HARRIS_K: f32 = 0.04;
const NMS_RADIUS: isize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub pos: Point,
    pub response: f32,
    /// Mean/variance normalized patch, L2-normalized; length `PATCH * PATCH`.
    pub descriptor: Vec<f32>,
}

fn harris_response(img: &GrayImage) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    let px = |x: isize, y: isize| img.get_clamped(x, y) as f32;
    let n = w * h;
    let (mut ixx, mut iyy, mut ixy) = (vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n]);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            // scaled down to keep the 4th-power response in f32 range
            let (gx, gy) = (gx / 8.0, gy / 8.0);
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let window = |buf: &[f32], x: usize, y: usize| {
        let mut acc = 0.0;
        for dy in -2..=2isize {
            for dx in -2..=2isize {
                let cx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let cy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                acc += buf[cy * w + cx];
            }
        }
        acc
    };
    let mut r = vec![0.0f32; n];
    for y in 0..h {
        for x in 0..w {
            let (a, b, c) = (window(&ixx, x, y), window(&iyy, x, y), window(&ixy, x, y));
            let tr = a + b;
            r[y * w + x] = a * b - c * c - HARRIS_K * tr * tr;
        }
    }
    r
}

fn describe(img: &GrayImage, x: usize, y: usize) -> Option<Vec<f32>> {
    let half = PATCH / 2;
    let mut patch = Vec::with_capacity(PATCH * PATCH);
    for yy in y - half..y + half {
        for xx in x - half..x + half {
            patch.push(img.get(xx, yy) as f32);
        }
    }
    let n = patch.len() as f32;
    let mean = patch.iter().sum::<f32>() / n;
    let var = patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    if var < 1e-6 {
        return None;
    }
    let sd = var.sqrt();
    patch.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    let norm = patch.iter().map(|v| v * v).sum::<f32>().sqrt();
    patch.iter_mut().for_each(|v| *v /= norm);
    Some(patch)
}

/// Strongest Harris corners (at most `max_kp`) whose descriptor patch fits
/// inside the image. Ordered by descending response, then raster position.
pub fn detect_keypoints(img: &GrayImage, max_kp: usize) -> Vec<Keypoint> {
    let (w, h) = (img.width(), img.height());
    let half = PATCH / 2;
    if w <= PATCH || h <= PATCH || max_kp == 0 {
        return Vec::new();
    }
    let r = harris_response(img);
    let max_r = r.iter().copied().fold(0.0f32, f32::max);
    if max_r <= 0.0 {
        return Vec::new();
    }
    let threshold = 0.01 * max_r;
    let mut found = Vec::new();
    for y in half..=h - half {
        for x in half..=w - half {
            let v = r[y * w + x];
            if v <= threshold {
                continue;
            }
            // Plateau ties go to the first pixel in raster order.
            let mut is_max = true;
            'nbhd: for dy in -NMS_RADIUS..=NMS_RADIUS {
                for dx in -NMS_RADIUS..=NMS_RADIUS {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let nv = r[ny as usize * w + nx as usize];
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if nv > v || (earlier && nv == v) {
                        is_max = false;
                        break 'nbhd;
                    }
                }
            }
            if is_max {
                found.push((v, x, y));
            }
        }
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    let mut out = Vec::new();
    for (v, x, y) in found {
        if out.len() == max_kp {
            break;
        }
        if let Some(descriptor) = describe(img, x, y) {
            out.push(Keypoint { pos: Point::new(x as f64, y as f64), response: v, descriptor });
        }
    }
    out
}

fn dist2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest-neighbour matches from `a` into `b` passing the ratio test
/// `d1 < ratio * d2`. Each correspondence maps an `a` position to a `b` position.
pub fn match_descriptors(a: &[Keypoint], b: &[Keypoint], ratio: f32) -> Vec<Correspondence> {
    assert!(ratio > 0.0 && ratio <= 1.0, "ratio must lie in (0, 1]");
    let mut out = Vec::new();
    for ka in a {
        let mut best = (f32::INFINITY, usize::MAX);
        let mut second = f32::INFINITY;
        for (j, kb) in b.iter().enumerate() {
            let d = dist2(&ka.descriptor, &kb.descriptor);
            if d < best.0 {
                second = best.0;
                best = (d, j);
            } else if d < second {
                second = d;
            }
        }
        if best.1 == usize::MAX {
            continue;
        }
        if best.0.sqrt() < ratio * second.sqrt() {
            out.push(Correspondence::new(ka.pos, b[best.1].pos));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn blocks(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = GrayImage::filled(w, h, 255);
        for _ in 0..25 {
            let (x0, y0) = (rng.gen_range(0..w - 10), rng.gen_range(0..h - 10));
            let (bw, bh) = (rng.gen_range(6..30), rng.gen_range(6..30));
            let v = rng.gen_range(0..200);
            for y in y0..(y0 + bh).min(h) {
                for x in x0..(x0 + bw).min(w) {
                    img.set(x, y, v);
                }
            }
        }
        img
    }

    #[test]
    fn uniform_has_no_keypoints() {
        assert!(detect_keypoints(&GrayImage::filled(64, 64, 90), 500).is_empty());
    }

    #[test]
    fn l_corner_is_found() {
        let img = GrayImage::from_fn(80, 80, |x, y| if x >= 30 && y >= 30 { 0 } else { 255 });
        let kps = detect_keypoints(&img, 10);
        assert!(kps.iter().any(|k| k.pos.distance(&Point::new(30.0, 30.0)) <= 2.0), "{:?}", kps.iter().map(|k| k.pos).collect::<Vec<_>>());
        for k in &kps {
            let n: f32 = k.descriptor.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-4);
            assert_eq!(k.descriptor.len(), PATCH * PATCH);
        }
    }

    #[test]
    fn translation_mode_offset() {
        let base = blocks(1, 200, 160);
        let (tx, ty) = (7usize, 3usize);
        let moved = GrayImage::from_fn(200, 160, |x, y| {
            if x >= tx && y >= ty {
                base.get(x - tx, y - ty)
            } else {
                255
            }
        });
        let a = detect_keypoints(&base, 300);
        let b = detect_keypoints(&moved, 300);
        let matches = match_descriptors(&a, &b, 0.8);
        let mut votes: HashMap<(i64, i64), usize> = HashMap::new();
        for m in &matches {
            *votes.entry(((m.dst.x - m.src.x) as i64, (m.dst.y - m.src.y) as i64)).or_default() += 1;
        }
        let mode = votes.iter().max_by_key(|(_, c)| **c).map(|(k, _)| *k).unwrap();
        assert_eq!(mode, (7, 3));
    }

    #[test]
    fn translation_equivariance_away_from_borders() {
        let base = blocks(4, 220, 180);
        let moved = GrayImage::from_fn(220, 180, |x, y| if x >= 5 && y >= 2 { base.get(x - 5, y - 2) } else { 255 });
        let a = detect_keypoints(&base, 1000);
        let b = detect_keypoints(&moved, 1000);
        let interior = |p: &Point| p.x > 30.0 && p.y > 30.0 && p.x < 180.0 && p.y < 140.0;
        for k in a.iter().filter(|k| interior(&k.pos)) {
            let target = Point::new(k.pos.x + 5.0, k.pos.y + 2.0);
            assert!(b.iter().any(|q| q.pos.distance(&target) <= 1.0), "missing {:?}", k.pos);
        }
    }

    #[test]
    fn identical_sets_match_twins() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut img = blocks(2, 160, 160);
        // per-pixel noise so no two patches coincide exactly
        for y in 0..160 {
            for x in 0..160 {
                let v = img.get(x, y).saturating_sub(rng.gen_range(0..12));
                img.set(x, y, v);
            }
        }
        let kps = detect_keypoints(&img, 100);
        assert!(kps.len() > 5);
        let m = match_descriptors(&kps, &kps, 0.8);
        assert_eq!(m.len(), kps.len());
        assert!(m.iter().all(|c| c.src == c.dst));
        assert!(match_descriptors(&[], &kps, 0.8).is_empty());
    }

    #[test]
    fn ratio_test_survives_distractors() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let unit = |rng: &mut ChaCha8Rng| {
            let v: Vec<f32> = (0..PATCH * PATCH).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let a: Vec<Keypoint> = (0..10)
            .map(|i| Keypoint { pos: Point::new(i as f64, 0.0), response: 1.0, descriptor: unit(&mut rng) })
            .collect();
        let mut b = a.clone();
        for i in 0..10 {
            b.push(Keypoint { pos: Point::new(100.0 + i as f64, 5.0), response: 1.0, descriptor: unit(&mut rng) });
        }
        let m = match_descriptors(&a, &b, 0.8);
        let true_matches = m.iter().filter(|c| c.src == c.dst).count();
        assert!(true_matches >= 8);
    }
}
