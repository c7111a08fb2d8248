//! Pairing pages of two editions of a volume and warping one onto the other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{ransac_homography, Homography, RansacParams};
use crate::vision::{detect_keypoints, match_descriptors, BinaryMask, GrayImage, Keypoint, DEFAULT_MAX_KEYPOINTS};

/// Side of the square thumbnail behind [`global_descriptor`].
pub const THUMB: usize = 32;

/// Whole-page descriptor used for retrieval. Vectors are compared by L2
/// distance.
pub trait DescriptorProvider: Send + Sync {
    fn describe(&self, img: &GrayImage) -> Vec<f32>;
}

/// The default provider: [`global_descriptor`].
#[derive(Debug, Default, Clone, Copy)]
pub struct ThumbnailDescriptor;

impl DescriptorProvider for ThumbnailDescriptor {
    fn describe(&self, img: &GrayImage) -> Vec<f32> {
        global_descriptor(img)
    }
}

/// Area-averaged resize to an arbitrary size; every output pixel is the mean
/// of the input area it covers.
pub fn resize_area(img: &GrayImage, out_w: usize, out_h: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let weights = |n_in: usize, n_out: usize| -> Vec<Vec<(usize, f64)>> {
        let step = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let (a, b) = (o as f64 * step, (o + 1) as f64 * step);
                let mut v = Vec::new();
                let mut i = a.floor() as usize;
                while (i as f64) < b && i < n_in {
                    let cover = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                    if cover > 0.0 {
                        v.push((i, cover / step));
                    }
                    i += 1;
                }
                v
            })
            .collect()
    };
    let (wx, wy) = (weights(w, out_w), weights(h, out_h));
    let mut out = vec![0.0; out_w * out_h];
    for (oy, ry) in wy.iter().enumerate() {
        for (ox, rx) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(y, fy) in ry {
                for &(x, fx) in rx {
                    acc += fy * fx * img.get(x, y) as f64;
                }
            }
            out[oy * out_w + ox] = acc;
        }
    }
    out
}

/// 32×32 area-averaged thumbnail, mean-subtracted and L2-normalized.
/// A constant image maps to the zero vector.
pub fn global_descriptor(img: &GrayImage) -> Vec<f32> {
    let mut v = resize_area(img, THUMB, THUMB);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-9 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    v.into_iter().map(|x| x as f32).collect()
}

pub fn descriptor_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    pub ratio: f32,
    pub ransac: RansacParams,
    pub max_keypoints: usize,
    pub seed: u64,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            ratio: 0.8,
            ransac: RansacParams { inlier_px: 3.0, iters: 1000, min_inliers: 50 },
            max_keypoints: DEFAULT_MAX_KEYPOINTS,
            seed: 0,
        }
    }
}

/// A verified correspondence between source page `src` and target page
/// `dst`. The homography maps target-page coordinates onto the source page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PagePair {
    pub src: usize,
    pub dst: usize,
    pub homography: Homography,
    pub inliers: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Pairing {
    pub pairs: Vec<PagePair>,
    pub unmatched_src: Vec<usize>,
    pub unmatched_dst: Vec<usize>,
    pub warnings: Vec<String>,
}

impl Pairing {
    pub fn pair_for_src(&self, src: usize) -> Option<&PagePair> {
        self.pairs.iter().find(|p| p.src == src)
    }
}

/// Retrieval plus geometric verification of a single source page against a
/// chosen target page.
pub fn verify_pair(
    src_kp: &[Keypoint],
    dst_kp: &[Keypoint],
    params: &AlignParams,
    rng_seed: u64,
) -> Option<(Homography, usize)> {
    let corrs = match_descriptors(dst_kp, src_kp, params.ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    ransac_homography(&corrs, &params.ransac, &mut rng).map(|fit| (fit.homography, fit.inliers.len()))
}

/// For each source page, retrieves the nearest target page by descriptor and
/// keeps the pair when a homography with more than `min_inliers` inliers
/// explains the keypoint matches.
pub fn pair_pages(src: &[GrayImage], dst: &[GrayImage], params: &AlignParams) -> Pairing {
    pair_pages_with(src, dst, params, &ThumbnailDescriptor)
}

pub fn pair_pages_with(
    src: &[GrayImage],
    dst: &[GrayImage],
    params: &AlignParams,
    provider: &dyn DescriptorProvider,
) -> Pairing {
    let dst_desc: Vec<Vec<f32>> = dst.iter().map(|d| provider.describe(d)).collect();
    let mut dst_kp: Vec<Option<Vec<Keypoint>>> = vec![None; dst.len()];
    let mut pairing = Pairing::default();
    for (si, s) in src.iter().enumerate() {
        let sd = provider.describe(s);
        let nearest = (0..dst.len()).min_by(|&a, &b| {
            descriptor_distance(&sd, &dst_desc[a]).total_cmp(&descriptor_distance(&sd, &dst_desc[b])).then(a.cmp(&b))
        });
        let Some(di) = nearest else {
            pairing.unmatched_src.push(si);
            continue;
        };
        let skp = detect_keypoints(s, params.max_keypoints);
        let dkp = dst_kp[di].get_or_insert_with(|| detect_keypoints(&dst[di], params.max_keypoints));
        let seed = params.seed ^ (si as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        match verify_pair(&skp, dkp, params, seed) {
            Some((homography, inliers)) => {
                if let Some(prev) = pairing.pairs.iter().find(|p| p.dst == di) {
                    pairing.warnings.push(format!(
                        "target page {di} verified for source pages {} and {si}",
                        prev.src
                    ));
                }
                pairing.pairs.push(PagePair { src: si, dst: di, homography, inliers });
            }
            None => pairing.unmatched_src.push(si),
        }
    }
    pairing.unmatched_dst = (0..dst.len()).filter(|d| pairing.pairs.iter().all(|p| p.dst != *d)).collect();
    pairing
}

/// Warps a target page into source-page coordinates (`width × height`) by
/// inverse mapping with bilinear sampling. Samples outside the target page
/// are white.
pub fn warp_page(homography: &Homography, dst_img: &GrayImage, width: usize, height: usize) -> GrayImage {
    let Ok(inv) = homography.inverse() else {
        return GrayImage::filled(width, height, 255);
    };
    let m = inv.m;
    let (sw, sh) = (dst_img.width() as f64, dst_img.height() as f64);
    GrayImage::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let wz = m[2][0] * xf + m[2][1] * yf + m[2][2];
        if wz.abs() < 1e-12 {
            return 255;
        }
        let u = (m[0][0] * xf + m[0][1] * yf + m[0][2]) / wz;
        let v = (m[1][0] * xf + m[1][1] * yf + m[1][2]) / wz;
        if !(u >= 0.0 && v >= 0.0 && u <= sw - 1.0 && v <= sh - 1.0) {
            return 255;
        }
        bilinear(dst_img, u, v)
    })
}

fn bilinear(img: &GrayImage, u: f64, v: f64) -> u8 {
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let p = |x: usize, y: usize| img.get(x, y) as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
}

/// Source-page bubble masks reused as text regions on the warped target
/// page, clipped to a `width × height` page.
pub fn transfer_regions(src_masks: &[BinaryMask], width: usize, height: usize) -> Vec<BinaryMask> {
    src_masks
        .iter()
        .map(|m| {
            BinaryMask::from_fn(width, height, |x, y| x < m.width() && y < m.height() && m.get(x, y))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use rand::Rng;

    fn textured(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = GrayImage::filled(w, h, 240);
        for _ in 0..60 {
            let (x0, y0) = (rng.gen_range(0..w - 12), rng.gen_range(0..h - 12));
            let (bw, bh) = (rng.gen_range(6..40), rng.gen_range(6..40));
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
    fn descriptor_identical_and_inverted() {
        let img = textured(1, 90, 130);
        let a = global_descriptor(&img);
        assert_eq!(a.len(), 1024);
        assert_eq!(descriptor_distance(&a, &global_descriptor(&img)), 0.0);
        let inv = global_descriptor(&img.invert());
        assert!((descriptor_distance(&a, &inv) - 2.0).abs() < 1e-5);
    }

    #[test]
    fn area_resize_preserves_mean() {
        let img = textured(2, 100, 70);
        let small = resize_area(&img, 32, 32);
        let m_in = img.data().iter().map(|&v| v as f64).sum::<f64>() / 7000.0;
        let m_out = small.iter().sum::<f64>() / 1024.0;
        assert!((m_in - m_out).abs() < 1e-9);
        let exact = resize_area(&GrayImage::from_fn(64, 64, |x, _| (x / 2 * 8) as u8), 32, 32);
        assert_eq!(exact[5], 40.0);
    }

    #[test]
    fn warp_identity_is_exact() {
        let img = textured(3, 60, 50);
        assert_eq!(warp_page(&Homography::identity(), &img, 60, 50), img);
    }

    #[test]
    fn warp_translation() {
        let img = GrayImage::from_fn(40, 30, |x, y| (x * 5 + y) as u8);
        let out = warp_page(&Homography::translation(5.0, 0.0), &img, 40, 30);
        for y in 0..30 {
            for x in 0..40 {
                let want = if x >= 5 { img.get(x - 5, y) } else { 255 };
                assert_eq!(out.get(x, y), want);
            }
        }
    }

    #[test]
    fn warp_perspective_matches_rendering() {
        // a smooth analytic scene rendered in both frames
        let scene = |x: f64, y: f64| 128.0 + 60.0 * (x / 9.0).sin() * (y / 11.0).cos();
        let h = Homography::from_matrix([[1.02, 0.01, -3.0], [-0.015, 0.99, 2.0], [2e-5, -1e-5, 1.0]]).unwrap();
        let inv = h.inverse().unwrap();
        let (w, hh) = (120, 100);
        let dst = GrayImage::from_fn(w, hh, |x, y| {
            let p = h.apply(Point::new(x as f64, y as f64)).unwrap();
            scene(p.x, p.y).round() as u8
        });
        let out = warp_page(&h, &dst, w, hh);
        let mut err = 0.0;
        let mut n = 0.0;
        for y in 10..hh - 10 {
            for x in 10..w - 10 {
                let q = inv.apply(Point::new(x as f64, y as f64)).unwrap();
                if q.x >= 0.0 && q.y >= 0.0 && q.x <= (w - 1) as f64 && q.y <= (hh - 1) as f64 {
                    err += (out.get(x, y) as f64 - scene(x as f64, y as f64)).abs();
                    n += 1.0;
                }
            }
        }
        assert!(err / n < 2.0, "{}", err / n);
    }

    #[test]
    fn transfer_identity_and_clip() {
        let m = BinaryMask::from_fn(30, 20, |x, y| x > 3 && y > 2);
        assert_eq!(transfer_regions(&[m.clone()], 30, 20), vec![m.clone()]);
        let small = &transfer_regions(&[m.clone()], 10, 10)[0];
        assert_eq!((small.width(), small.height()), (10, 10));
        assert_eq!(small.count(), 6 * 7);
    }

    fn shifted(img: &GrayImage, tx: usize, ty: usize) -> GrayImage {
        GrayImage::from_fn(img.width(), img.height(), |x, y| {
            if x >= tx && y >= ty {
                img.get(x - tx, y - ty)
            } else {
                240
            }
        })
    }

    #[test]
    fn duplicate_volumes_pair_with_identity() {
        let vol: Vec<GrayImage> = (0..3).map(|i| textured(10 + i, 180, 240)).collect();
        let p = pair_pages(&vol, &vol, &AlignParams::default());
        assert_eq!(p.pairs.len(), 3);
        for pair in &p.pairs {
            assert_eq!(pair.src, pair.dst);
            let q = pair.homography.apply(Point::new(90.0, 120.0)).unwrap();
            assert!(q.distance(&Point::new(90.0, 120.0)) < 1.0);
        }
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn shifted_pages_recover_translation_and_ignore_covers() {
        let src: Vec<GrayImage> = (0..3).map(|i| textured(20 + i, 180, 240)).collect();
        let mut dst: Vec<GrayImage> = src.iter().map(|s| shifted(s, 4, 2)).collect();
        dst.insert(0, GrayImage::from_fn(180, 240, |x, y| ((x / 30 + y / 30) % 2 * 200) as u8));
        dst.reverse();
        let p = pair_pages(&src, &dst, &AlignParams::default());
        assert_eq!(p.pairs.len(), 3);
        for pair in &p.pairs {
            assert_eq!(dst[pair.dst], shifted(&src[pair.src], 4, 2));
            // target coordinates map onto the source by subtracting the shift
            let q = pair.homography.apply(Point::new(100.0, 100.0)).unwrap();
            assert!(q.distance(&Point::new(96.0, 98.0)) < 1.0, "{q:?}");
        }
        assert_eq!(p.unmatched_dst, vec![3]);
    }

    #[test]
    fn unrelated_pages_do_not_pair() {
        let src: Vec<GrayImage> = (0..2).map(|i| textured(30 + i, 180, 240)).collect();
        let dst: Vec<GrayImage> = (0..2).map(|i| textured(40 + i, 180, 240)).collect();
        let p = pair_pages(&src, &dst, &AlignParams::default());
        assert!(p.pairs.is_empty());
        assert_eq!(p.unmatched_src, vec![0, 1]);
    }

    #[test]
    fn verify_rejects_few_matches() {
        let kp = |x: f64| Keypoint { pos: Point::new(x, x * 0.5), response: 1.0, descriptor: vec![x as f32; 4] };
        let a: Vec<Keypoint> = (0..10).map(|i| kp(i as f64)).collect();
        assert!(verify_pair(&a, &a, &AlignParams::default(), 0).is_none());
    }
}
