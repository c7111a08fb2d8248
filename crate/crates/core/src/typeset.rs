//! Removing source text from a bubble and lettering the translation at the
//! largest font size that fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::vision::{BinaryMask, GrayImage};

/// Smallest font size (px) a plan will use.
pub const MIN_FONT_SIZE: u32 = 6;
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypesetError {
    #[error("region mask is empty")]
    EmptyMask,
    #[error("nothing to letter")]
    EmptyText,
    #[error("rasterizer {name} failed: {message}")]
    RasterizerFailure { name: String, message: String },
}

/// Character advances and line spacing, in em units.
pub trait GlyphMetrics: Send + Sync {
    fn advance(&self, c: char) -> f64;
    fn line_height(&self) -> f64;
}

/// Half-em advance for single-byte characters, full em otherwise, and a
/// line height of 1.2 em.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct DefaultMetrics;

impl GlyphMetrics for DefaultMetrics {
    fn advance(&self, c: char) -> f64 {
        if c.len_utf8() == 1 {
            0.5
        } else {
            1.0
        }
    }

    fn line_height(&self) -> f64 {
        1.2
    }
}

/// Replaces text pixels inside a bubble.
pub trait Cleaner: Send + Sync {
    fn name(&self) -> &str;
    fn clean(&self, img: &GrayImage, line_boxes: &[BoundingBox], mask: &BinaryMask) -> GrayImage;
}

/// Fills every line box (within the mask) with the median intensity of the
/// rest of the mask.
#[derive(Debug, Default, Clone, Copy)]
pub struct FlatFillCleaner;

impl Cleaner for FlatFillCleaner {
    fn name(&self) -> &str {
        "flat"
    }

    fn clean(&self, img: &GrayImage, line_boxes: &[BoundingBox], mask: &BinaryMask) -> GrayImage {
        clean_text(img, line_boxes, mask)
    }
}

fn in_any_box(boxes: &[BoundingBox], x: usize, y: usize) -> bool {
    let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
    boxes.iter().any(|b| cx >= b.x() && cx < b.right() && cy >= b.y() && cy < b.bottom())
}

/// Flat-fill cleaning with [`FlatFillCleaner`]'s rule.
pub fn clean_text(img: &GrayImage, line_boxes: &[BoundingBox], mask: &BinaryMask) -> GrayImage {
    let mut out = img.clone();
    if line_boxes.is_empty() {
        return out;
    }
    let (w, h) = (img.width().min(mask.width()), img.height().min(mask.height()));
    let mut hist = [0usize; 256];
    let mut targets = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            if in_any_box(line_boxes, x, y) {
                targets.push((x, y));
            } else {
                hist[img.get(x, y) as usize] += 1;
            }
        }
    }
    let fill = median_of_histogram(&hist).unwrap_or(255);
    for (x, y) in targets {
        out.set(x, y, fill);
    }
    out
}

/// Lower median of a 256-bin histogram.
fn median_of_histogram(hist: &[usize; 256]) -> Option<u8> {
    let total: usize = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let want = (total + 1) / 2;
    let mut seen = 0;
    for (v, &c) in hist.iter().enumerate() {
        seen += c;
        if seen >= want {
            return Some(v as u8);
        }
    }
    None
}

/// Largest axis-aligned rectangle of set pixels, by the largest-rectangle-
/// in-histogram method over per-row column heights. Among equal areas the
/// one found first (top-most bottom row, then left-most) is returned.
pub fn inscribed_rect(mask: &BinaryMask) -> Result<BoundingBox, TypesetError> {
    let (w, h) = (mask.width(), mask.height());
    let mut heights = vec![0usize; w];
    let mut best: Option<(usize, usize, usize, usize, usize)> = None;
    let mut stack: Vec<usize> = Vec::with_capacity(w + 1);
    for y in 0..h {
        for (x, hgt) in heights.iter_mut().enumerate() {
            *hgt = if mask.get(x, y) { *hgt + 1 } else { 0 };
        }
        stack.clear();
        for x in 0..=w {
            let cur = if x < w { heights[x] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] <= cur {
                    break;
                }
                stack.pop();
                let hh = heights[top];
                let left = stack.last().map_or(0, |&l| l + 1);
                let area = hh * (x - left);
                if best.map_or(true, |b| area > b.0) {
                    best = Some((area, left, y + 1 - hh, x - left, hh));
                }
            }
            stack.push(x);
        }
    }
    match best {
        Some((area, x, y, bw, bh)) if area > 0 => {
            Ok(BoundingBox::new(x as f64, y as f64, bw as f64, bh as f64).expect("positive rectangle"))
        }
        _ => Err(TypesetError::EmptyMask),
    }
}

fn text_width(s: &str, size: f64, metrics: &dyn GlyphMetrics) -> f64 {
    s.chars().map(|c| metrics.advance(c) * size).sum()
}

/// Greedy line breaking at whitespace, breaking inside a word only when the
/// word alone is wider than `max_width`. `None` if a single character does
/// not fit.
pub fn wrap_text(text: &str, size: f64, max_width: f64, metrics: &dyn GlyphMetrics) -> Option<Vec<String>> {
    let mut lines: Vec<String> = Vec::new();
    let mut cur = String::new();
    let fits = |s: &str| text_width(s, size, metrics) <= max_width + EPS;
    for word in text.split_whitespace() {
        let candidate = if cur.is_empty() { word.to_string() } else { format!("{cur} {word}") };
        if fits(&candidate) {
            cur = candidate;
            continue;
        }
        if !cur.is_empty() {
            lines.push(std::mem::take(&mut cur));
        }
        if fits(word) {
            cur = word.to_string();
            continue;
        }
        for c in word.chars() {
            let mut next = cur.clone();
            next.push(c);
            if fits(&next) {
                cur = next;
            } else {
                if cur.is_empty() {
                    return None;
                }
                lines.push(std::mem::take(&mut cur));
                if !fits(&c.to_string()) {
                    return None;
                }
                cur.push(c);
            }
        }
    }
    if !cur.is_empty() {
        lines.push(cur);
    }
    Some(lines)
}

/// Whether `text` wrapped at font size `size` fits a `width × height` box.
pub fn fits(text: &str, size: u32, width: f64, height: f64, metrics: &dyn GlyphMetrics) -> bool {
    let s = size as f64;
    match wrap_text(text, s, width, metrics) {
        Some(lines) => lines.len() as f64 * metrics.line_height() * s <= height + EPS,
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedLine {
    pub text: String,
    /// Left edge of the first glyph.
    pub x: f64,
    /// Top of the line box.
    pub top: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetteringPlan {
    pub font_size: u32,
    pub line_height: f64,
    pub lines: Vec<PlannedLine>,
    /// The feasible area: the region's largest inscribed rectangle.
    pub rect: BoundingBox,
    /// Set when the text does not fit even at [`MIN_FONT_SIZE`].
    pub overflow: bool,
}

impl LetteringPlan {
    /// Em box of every visible glyph: `(char, box)`, in drawing order. The em
    /// box is centered vertically in its line box.
    pub fn glyph_cells(&self, metrics: &dyn GlyphMetrics) -> Vec<(char, BoundingBox)> {
        let s = self.font_size as f64;
        let pad = (self.line_height - s) / 2.0;
        let mut out = Vec::new();
        for line in &self.lines {
            let mut x = line.x;
            for c in line.text.chars() {
                let adv = metrics.advance(c) * s;
                if !c.is_whitespace() {
                    out.push((c, BoundingBox::new(x, line.top + pad, adv, s).expect("positive glyph")));
                }
                x += adv;
            }
        }
        out
    }
}

fn layout_lines(lines: Vec<String>, size: u32, rect: &BoundingBox, metrics: &dyn GlyphMetrics) -> Vec<PlannedLine> {
    let s = size as f64;
    let lh = metrics.line_height() * s;
    let block = lh * lines.len() as f64;
    let top = rect.y() + (rect.h() - block) / 2.0;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            let width = text_width(&text, s, metrics);
            PlannedLine { x: rect.x() + (rect.w() - width) / 2.0, top: top + i as f64 * lh, width, text }
        })
        .collect()
}

/// Largest integer font size in `[MIN_FONT_SIZE, rect height]` at which the
/// wrapped text fits the mask's inscribed rectangle, found by binary search.
pub fn plan_lettering(text: &str, mask: &BinaryMask, metrics: &dyn GlyphMetrics) -> Result<LetteringPlan, TypesetError> {
    if text.trim().is_empty() {
        return Err(TypesetError::EmptyText);
    }
    let rect = inscribed_rect(mask)?;
    let (lo, hi) = (MIN_FONT_SIZE, rect.h() as u32);
    let feasible = |s: u32| fits(text, s, rect.w(), rect.h(), metrics);
    let size = if hi < lo || !feasible(lo) {
        None
    } else {
        let (mut good, mut bad) = (lo, hi + 1);
        while bad - good > 1 {
            let mid = good + (bad - good) / 2;
            if feasible(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Some(good)
    };
    let (font_size, overflow) = match size {
        Some(s) => (s, false),
        None => (MIN_FONT_SIZE, true),
    };
    let s = font_size as f64;
    let lines = match wrap_text(text, s, rect.w(), metrics) {
        Some(l) => l,
        None => text.split_whitespace().map(str::to_string).collect(),
    };
    Ok(LetteringPlan {
        font_size,
        line_height: metrics.line_height() * s,
        lines: layout_lines(lines, font_size, &rect, metrics),
        rect,
        overflow,
    })
}

/// Draws planned glyphs into an image; must not touch pixels outside `mask`.
pub trait Rasterizer: Send + Sync {
    fn name(&self) -> &str;
    fn draw(
        &self,
        img: &mut GrayImage,
        plan: &LetteringPlan,
        mask: &BinaryMask,
        metrics: &dyn GlyphMetrics,
    ) -> Result<(), TypesetError>;
}

/// Draws each glyph as a filled rectangle over its em box, font-free and
/// deterministic.
#[derive(Debug, Clone, Copy)]
pub struct BoxGlyphRasterizer {
    pub ink: u8,
}

impl Default for BoxGlyphRasterizer {
    fn default() -> Self {
        Self { ink: 0 }
    }
}

impl Rasterizer for BoxGlyphRasterizer {
    fn name(&self) -> &str {
        "box"
    }

    fn draw(
        &self,
        img: &mut GrayImage,
        plan: &LetteringPlan,
        mask: &BinaryMask,
        metrics: &dyn GlyphMetrics,
    ) -> Result<(), TypesetError> {
        let (w, h) = (img.width().min(mask.width()), img.height().min(mask.height()));
        for (_, cell) in plan.glyph_cells(metrics) {
            let (x0, y0, x1, y1) = cell.pixel_span(w, h);
            for y in y0..y1 {
                for x in x0..x1 {
                    if mask.get(x, y) {
                        img.set(x, y, self.ink);
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn render_lettering(
    img: &GrayImage,
    plan: &LetteringPlan,
    mask: &BinaryMask,
    rasterizer: &dyn Rasterizer,
    metrics: &dyn GlyphMetrics,
) -> Result<GrayImage, TypesetError> {
    let mut out = img.clone();
    rasterizer.draw(&mut out, plan, mask, metrics)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn rect_mask(w: usize, h: usize, r: BoundingBox) -> BinaryMask {
        BinaryMask::from_box(w, h, &r)
    }

    /// Every rectangle of set pixels, checked pixel by pixel.
    fn brute_max_area(m: &BinaryMask) -> usize {
        let (w, h) = (m.width(), m.height());
        let mut best = 0;
        for y0 in 0..h {
            for x0 in 0..w {
                for y1 in y0 + 1..=h {
                    for x1 in x0 + 1..=w {
                        let full = (y0..y1).all(|y| (x0..x1).all(|x| m.get(x, y)));
                        if full {
                            best = best.max((x1 - x0) * (y1 - y0));
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn inscribed_solid_rect() {
        let m = rect_mask(50, 60, bx(7., 9., 20., 30.));
        assert_eq!(inscribed_rect(&m).unwrap(), bx(7., 9., 20., 30.));
    }

    #[test]
    fn inscribed_l_shape() {
        let m = BinaryMask::from_fn(20, 20, |x, y| (x < 10 && y < 20) || (x < 20 && y >= 10));
        let r = inscribed_rect(&m).unwrap();
        assert_eq!(r.area(), 200.0);
        assert_eq!(brute_max_area(&m), 200);
    }

    #[test]
    fn inscribed_single_pixel_and_empty() {
        let mut m = BinaryMask::new(5, 5);
        m.set(3, 2, true);
        assert_eq!(inscribed_rect(&m).unwrap(), bx(3., 2., 1., 1.));
        assert_eq!(inscribed_rect(&BinaryMask::new(4, 4)), Err(TypesetError::EmptyMask));
    }

    #[test]
    fn ab_in_square() {
        let m = rect_mask(100, 100, bx(0., 0., 100., 100.));
        let p = plan_lettering("AB", &m, &DefaultMetrics).unwrap();
        assert_eq!(p.font_size, 83);
        assert!(!p.overflow);
        let brute = (MIN_FONT_SIZE..=100).filter(|&s| fits("AB", s, 100., 100., &DefaultMetrics)).max();
        assert_eq!(brute, Some(83));
    }

    #[test]
    fn single_char_square() {
        for side in [12usize, 30, 61, 100] {
            let m = rect_mask(side, side, bx(0., 0., side as f64, side as f64));
            let p = plan_lettering("x", &m, &DefaultMetrics).unwrap();
            assert_eq!(p.font_size, (side as f64 / 1.2).floor() as u32);
        }
    }

    #[test]
    fn long_text_overflows() {
        let m = rect_mask(20, 20, bx(0., 0., 14., 14.));
        let p = plan_lettering(&"word ".repeat(40), &m, &DefaultMetrics).unwrap();
        assert!(p.overflow);
        assert_eq!(p.font_size, MIN_FONT_SIZE);
    }

    #[test]
    fn wraps_at_spaces_then_characters() {
        let lines = wrap_text("aa bb cc", 10.0, 24.0, &DefaultMetrics).unwrap();
        assert_eq!(lines, vec!["aa", "bb", "cc"]);
        let lines = wrap_text("abcdefg", 10.0, 20.0, &DefaultMetrics).unwrap();
        assert_eq!(lines, vec!["abcd", "efg"]);
        assert!(wrap_text("漢", 10.0, 5.0, &DefaultMetrics).is_none());
    }

    #[test]
    fn clean_white_bubble() {
        let mask = rect_mask(40, 40, bx(5., 5., 30., 30.));
        let mut img = GrayImage::filled(40, 40, 90);
        img.fill_box(&bx(5., 5., 30., 30.), 255);
        img.fill_box(&bx(15., 10., 6., 20.), 0);
        let out = clean_text(&img, &[bx(14., 9., 8., 22.)], &mask);
        for y in 0..40 {
            for x in 0..40 {
                if mask.get(x, y) {
                    assert_eq!(out.get(x, y), 255);
                } else {
                    assert_eq!(out.get(x, y), img.get(x, y));
                }
            }
        }
        assert_eq!(clean_text(&img, &[], &mask), img);
    }

    #[test]
    fn clean_textured_bubble() {
        let mask = BinaryMask::from_fn(50, 50, |x, y| (x as i32 - 25).pow(2) + (y as i32 - 25).pow(2) < 400);
        let img = GrayImage::from_fn(50, 50, |x, y| ((x * 7 + y * 3) % 60 + 150) as u8);
        let line = bx(20., 10., 10., 30.);
        let out = clean_text(&img, &[line], &mask);
        let mut rest: Vec<u8> = Vec::new();
        for y in 0..50 {
            for x in 0..50 {
                if mask.get(x, y) && !in_any_box(&[line], x, y) {
                    rest.push(img.get(x, y));
                }
            }
        }
        rest.sort();
        let med = rest[(rest.len() + 1) / 2 - 1];
        for y in 0..50 {
            for x in 0..50 {
                if mask.get(x, y) && in_any_box(&[line], x, y) {
                    assert_eq!(out.get(x, y), med);
                } else {
                    assert_eq!(out.get(x, y), img.get(x, y));
                }
            }
        }
    }

    #[test]
    fn box_rasterizer_draws_two_cells() {
        let m = rect_mask(100, 100, bx(0., 0., 100., 100.));
        let p = plan_lettering("AB", &m, &DefaultMetrics).unwrap();
        let cells = p.glyph_cells(&DefaultMetrics);
        assert_eq!(cells.len(), 2);
        for (_, c) in &cells {
            assert!(c.x() >= p.rect.x() - 1e-9 && c.right() <= p.rect.right() + 1e-9);
            assert!(c.y() >= p.rect.y() - 1e-9 && c.bottom() <= p.rect.bottom() + 1e-9);
        }
        let img = GrayImage::filled(100, 100, 255);
        let out = render_lettering(&img, &p, &m, &BoxGlyphRasterizer::default(), &DefaultMetrics).unwrap();
        let dark = out.data().iter().filter(|&&v| v == 0).count();
        let expected: usize = cells
            .iter()
            .map(|(_, c)| {
                let (x0, y0, x1, y1) = c.pixel_span(100, 100);
                (x1 - x0) * (y1 - y0)
            })
            .sum();
        assert_eq!(dark, expected);
        let empty = LetteringPlan { lines: Vec::new(), ..p };
        assert_eq!(render_lettering(&img, &empty, &m, &BoxGlyphRasterizer::default(), &DefaultMetrics).unwrap(), img);
    }

    proptest! {
        #[test]
        fn inscribed_matches_brute_force(bits in proptest::collection::vec(any::<bool>(), 49)) {
            let m = BinaryMask::from_bits(7, 7, bits).unwrap();
            let best = brute_max_area(&m);
            match inscribed_rect(&m) {
                Ok(r) => {
                    prop_assert_eq!(r.area() as usize, best);
                    let (x0, y0, x1, y1) = r.pixel_span(7, 7);
                    prop_assert!((y0..y1).all(|y| (x0..x1).all(|x| m.get(x, y))));
                }
                Err(_) => prop_assert_eq!(best, 0),
            }
        }

        #[test]
        fn plan_is_maximal(words in proptest::collection::vec("[a-z]{1,8}", 1..6), w in 10usize..80, h in 10usize..80) {
            let text = words.join(" ");
            let m = rect_mask(90, 90, bx(3., 4., w as f64, h as f64));
            let p = plan_lettering(&text, &m, &DefaultMetrics).unwrap();
            let brute = (MIN_FONT_SIZE..=h as u32).filter(|&s| fits(&text, s, w as f64, h as f64, &DefaultMetrics)).max();
            match brute {
                Some(b) => {
                    prop_assert_eq!(p.font_size, b);
                    prop_assert!(!p.overflow);
                }
                None => prop_assert!(p.overflow),
            }
        }

        #[test]
        fn plan_translates_with_mask(dx in 0usize..20, dy in 0usize..20, w in 10usize..50) {
            let a = rect_mask(100, 100, bx(5., 5., w as f64, 30.));
            let b = rect_mask(100, 100, bx(5. + dx as f64, 5. + dy as f64, w as f64, 30.));
            let pa = plan_lettering("hello there", &a, &DefaultMetrics).unwrap();
            let pb = plan_lettering("hello there", &b, &DefaultMetrics).unwrap();
            prop_assert_eq!(pa.font_size, pb.font_size);
            for (la, lb) in pa.lines.iter().zip(&pb.lines) {
                prop_assert!((lb.x - la.x - dx as f64).abs() < 1e-9);
                prop_assert!((lb.top - la.top - dy as f64).abs() < 1e-9);
            }
        }

        #[test]
        fn lettering_stays_in_mask(r in 8usize..30, text in "[a-z ]{1,30}") {
            let mask = BinaryMask::from_fn(70, 70, |x, y| (x as i64 - 35).pow(2) + (y as i64 - 35).pow(2) < (r * r) as i64);
            prop_assume!(!text.trim().is_empty());
            let img = GrayImage::from_fn(70, 70, |x, y| ((x + y) % 200 + 50) as u8);
            let p = plan_lettering(&text, &mask, &DefaultMetrics).unwrap();
            let out = render_lettering(&img, &p, &mask, &BoxGlyphRasterizer::default(), &DefaultMetrics).unwrap();
            for y in 0..70 {
                for x in 0..70 {
                    if !mask.get(x, y) {
                        prop_assert_eq!(out.get(x, y), img.get(x, y));
                    }
                }
            }
        }
    }
}
