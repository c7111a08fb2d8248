//! Canny edge detection.

use super::image::{BinaryMask, GrayImage};

/// Default hysteresis thresholds on `[0,255]` intensities.
pub const CANNY_LOW: f32 = 50.0;
pub const CANNY_HIGH: f32 = 150.0;

const SIGMA: f64 = 1.4;

fn gaussian_kernel() -> [f32; 5] {
    let mut k = [0.0f64; 5];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| (v / sum) as f32)
}

/// Separable 5×5 Gaussian blur (σ = 1.4) with replicated borders.
pub fn gaussian_blur(img: &GrayImage) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    let k = gaussian_kernel();
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * img.get_clamped(x as isize + i as isize - 2, y as isize) as f32;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y as isize + i as isize - 2).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Sobel derivatives and gradient magnitude of a float raster.
pub struct Gradient {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f32>,
    pub gy: Vec<f32>,
    pub magnitude: Vec<f32>,
}

pub fn sobel(values: &[f32], width: usize, height: usize) -> Gradient {
    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, width as isize - 1) as usize;
        let cy = y.clamp(0, height as isize - 1) as usize;
        values[cy * width + cx]
    };
    let n = width * height;
    let (mut gx, mut gy, mut magnitude) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * width + x as usize;
            gx[i] = dx;
            gy[i] = dy;
            magnitude[i] = dx.hypot(dy);
        }
    }
    Gradient { width, height, gx, gy, magnitude }
}

/// Gradient-direction local maxima, comparing against the magnitude
/// interpolated one pixel forward and backward along the gradient. Ties keep
/// the pixel on the negative side so two-pixel plateaus thin to one line.
pub fn non_maximum_suppression(g: &Gradient) -> Vec<f32> {
    let (w, h) = (g.width, g.height);
    let mag = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            g.magnitude[y as usize * w + x as usize]
        }
    };
    let sample = |x: f32, y: f32| {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let top = mag(xi, yi) * (1.0 - fx) + mag(xi + 1, yi) * fx;
        let bottom = mag(xi, yi + 1) * (1.0 - fx) + mag(xi + 1, yi + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    };
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = g.magnitude[i];
            if m <= 0.0 {
                continue;
            }
            let (ux, uy) = (g.gx[i] / m, g.gy[i] / m);
            let (xf, yf) = (x as f32, y as f32);
            let before = sample(xf - ux, yf - uy);
            let after = sample(xf + ux, yf + uy);
            if m > before && m >= after {
                out[i] = m;
            }
        }
    }
    out
}

/// Canny detector: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression and double-threshold hysteresis (8-connected).
pub fn canny_edges(img: &GrayImage, low: f32, high: f32) -> BinaryMask {
    assert!(0.0 <= low && low <= high, "canny thresholds must satisfy 0 <= low <= high");
    let (w, h) = (img.width(), img.height());
    let blurred = gaussian_blur(img);
    let grad = sobel(&blurred, w, h);
    let thin = non_maximum_suppression(&grad);

    let mut edges = BinaryMask::new(w, h);
    let mut stack = Vec::new();
    for (i, &m) in thin.iter().enumerate() {
        if m > 0.0 && m >= high {
            edges.set(i % w, i / w, true);
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                let j = ny * w + nx;
                if !edges.get(nx, ny) && thin[j] > 0.0 && thin[j] >= low {
                    edges.set(nx, ny, true);
                    stack.push(j);
                }
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel();
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(k[0], k[4]);
        assert_eq!(k[1], k[3]);
    }

    #[test]
    fn uniform_image_has_no_edges() {
        let img = GrayImage::filled(40, 30, 128);
        assert!(canny_edges(&img, CANNY_LOW, CANNY_HIGH).is_empty());
    }

    #[test]
    fn vertical_step_gives_single_line() {
        let step = 20;
        let img = GrayImage::from_fn(40, 30, |x, _| if x < step { 0 } else { 255 });
        let edges = canny_edges(&img, CANNY_LOW, CANNY_HIGH);
        let mut columns = vec![0usize; 40];
        for y in 0..30 {
            for x in 0..40 {
                if edges.get(x, y) {
                    columns[x] += 1;
                }
            }
        }
        let used: Vec<usize> = (0..40).filter(|&x| columns[x] > 0).collect();
        assert_eq!(used.len(), 1, "{columns:?}");
        assert!(used[0].abs_diff(step) <= 1);
        assert_eq!(columns[used[0]], 30);
    }

    #[test]
    fn circle_perimeter() {
        let (cx, cy, r) = (50.0f64, 50.0f64, 30.0f64);
        let img = GrayImage::from_fn(100, 100, |x, y| {
            let d = (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy);
            if d <= r {
                0
            } else {
                255
            }
        });
        let n = canny_edges(&img, CANNY_LOW, CANNY_HIGH).count() as f64;
        let perimeter = 2.0 * std::f64::consts::PI * r;
        assert!((n - perimeter).abs() / perimeter <= 0.15, "{n} vs {perimeter}");
    }

    fn random_image(seed: &[u8]) -> GrayImage {
        // blocky image so there are real edges
        GrayImage::from_fn(24, 20, |x, y| seed[(y / 4) * 6 + x / 4])
    }

    proptest! {
        #[test]
        fn edges_are_nms_maxima_and_monotone(
            seed in proptest::collection::vec(any::<u8>(), 30),
            low in 0.0f32..200.0,
            span in 0.0f32..300.0,
            bump in 0.0f32..300.0,
        ) {
            let img = random_image(&seed);
            let high = low + span;
            let edges = canny_edges(&img, low, high);
            let thin = non_maximum_suppression(&sobel(&gaussian_blur(&img), 24, 20));
            for (i, &e) in edges.bits().iter().enumerate() {
                if e {
                    prop_assert!(thin[i] > 0.0);
                }
            }
            let fewer = canny_edges(&img, low, high + bump);
            prop_assert_eq!(fewer.and_not(&edges).count(), 0);
        }
    }
}
