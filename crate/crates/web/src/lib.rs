//! Browser bindings for the interactive demo page. Every function returns a
//! JSON string.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use manga_layout::bubble::{detect_text_lines_in_mask, estimate_bubble_mask, split_connected_bubble, Cut, Orientation};
use manga_layout::geometry::BoundingBox;
use manga_layout::layout::{estimate_reading_order, strip_order};
use manga_layout::synth::{generate_layout_page, Ellipse, LayoutSpec};
use manga_layout::typeset::{plan_lettering, DefaultMetrics};
use manga_layout::vision::{BinaryMask, GrayImage};

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("demo output serializes")
}

#[derive(Serialize)]
struct OrderedFrame {
    bbox: BoundingBox,
    rank: usize,
}

#[derive(Serialize)]
struct OrderedText {
    bbox: BoundingBox,
    order: Option<usize>,
    truth: Option<usize>,
    scene: Option<usize>,
}

#[derive(Serialize)]
struct OrderDemo {
    width: u32,
    height: u32,
    frames: Vec<OrderedFrame>,
    texts: Vec<OrderedText>,
    correct: bool,
    irregular: bool,
}

/// A random layout with its estimated frame ranks and text order next to
/// the generator's ground truth.
#[wasm_bindgen]
pub fn reading_order(seed: u32) -> String {
    let spec = LayoutSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let truth = generate_layout_page(&mut rng, &spec, "demo");
    let Ok((pred, fo)) = estimate_reading_order(&strip_order(&truth)) else {
        return to_json(&serde_json::json!({ "error": "page has no frames" }));
    };
    let texts: Vec<OrderedText> = pred
        .texts
        .iter()
        .zip(&truth.texts)
        .map(|(p, t)| OrderedText { bbox: p.bbox, order: p.order, truth: t.order, scene: p.scene })
        .collect();
    let correct = texts.iter().all(|t| t.order == t.truth);
    to_json(&OrderDemo {
        width: spec.width,
        height: spec.height,
        frames: pred.frames.iter().map(|f| OrderedFrame { bbox: f.bbox, rank: f.order.unwrap_or(0) }).collect(),
        texts,
        correct,
        irregular: fo.irregular,
    })
}

#[derive(Serialize)]
struct SplitDemo {
    width: usize,
    height: usize,
    /// Grayscale page, row-major.
    pixels: Vec<u8>,
    /// Paragraph index + 1 per pixel, 0 outside every paragraph.
    labels: Vec<u8>,
    lines: Vec<BoundingBox>,
    groups: Vec<Vec<usize>>,
    cuts: Vec<Cut>,
    no_separating_cut: bool,
    error: Option<String>,
}

const SPLIT_W: usize = 240;
const SPLIT_H: usize = 260;

fn fill_ellipse(img: &mut GrayImage, e: &Ellipse, v: u8) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                img.set(x, y, v);
            }
        }
    }
}

fn glyph_column(img: &mut GrayImage, right: f64, top: f64, glyphs: usize) {
    for g in 0..glyphs {
        let b = BoundingBox::new(right - 12.0, top + g as f64 * 15.0, 12.0, 12.0).expect("glyph box");
        img.fill_box(&b, 20);
        let inner = BoundingBox::new(b.x() + 4.0, b.y() + 4.0, 4.0, 4.0).expect("glyph counter");
        img.fill_box(&inner, 235);
    }
}

/// A two-lobe bubble whose lower lobe is shifted by `dx` and whose text
/// blocks are `gap` pixels apart; returns its paragraph split.
#[wasm_bindgen]
pub fn bubble_split(dx: f64, gap: f64, upper_columns: u32, lower_columns: u32) -> String {
    let (cu, cl) = (upper_columns.clamp(1, 4) as usize, lower_columns.clamp(1, 4) as usize);
    let gap = gap.clamp(20.0, 80.0);
    let block_h = 42.0;
    let cx = SPLIT_W as f64 / 2.0;
    let top = 40.0;
    let upper = Ellipse { cx, cy: top + block_h / 2.0, rx: 18.0 * cu as f64 / 2.0 * 1.5 + 14.0, ry: block_h / 2.0 * 1.5 + 6.0 };
    let lower_cy = upper.cy + block_h + gap;
    let lower = Ellipse { cx: cx + dx.clamp(-40.0, 40.0), cy: lower_cy, rx: 18.0 * cl as f64 / 2.0 * 1.5 + 14.0, ry: upper.ry };
    let reach = ((lower.cy - upper.cy) / 0.85 - upper.ry - lower.ry).max(0.0) / 2.0;
    let (upper, lower) = (Ellipse { ry: upper.ry + reach, ..upper }, Ellipse { ry: lower.ry + reach, ..lower });

    let mut img = GrayImage::from_fn(SPLIT_W, SPLIT_H, |x, y| 150 + ((x * 7 + y * 3) % 40) as u8);
    for e in [&upper, &lower] {
        fill_ellipse(&mut img, &e.grown(2.5), 0);
    }
    for e in [&upper, &lower] {
        fill_ellipse(&mut img, e, 255);
    }
    for (e, cols) in [(&upper, cu), (&lower, cl)] {
        let w = cols as f64 * 18.0 - 6.0;
        for c in 0..cols {
            glyph_column(&mut img, (e.cx + w / 2.0).round() - c as f64 * 18.0, (e.cy - block_h / 2.0).round(), 3);
        }
    }

    let bbox = BoundingBox::new(0.0, 0.0, SPLIT_W as f64, SPLIT_H as f64).expect("page box");
    let outer = upper.grown(2.5).bbox().union(&lower.grown(2.5).bbox()).intersection(&bbox).unwrap_or(bbox);
    let mut demo = SplitDemo {
        width: SPLIT_W,
        height: SPLIT_H,
        pixels: img.data().to_vec(),
        labels: vec![0; SPLIT_W * SPLIT_H],
        lines: Vec::new(),
        groups: Vec::new(),
        cuts: Vec::new(),
        no_separating_cut: false,
        error: None,
    };
    let mask = match estimate_bubble_mask(&img, &outer) {
        Ok(m) => m,
        Err(e) => {
            demo.error = Some(e.to_string());
            return to_json(&demo);
        }
    };
    demo.lines = detect_text_lines_in_mask(&img, &mask, Orientation::Vertical);
    match split_connected_bubble(&mask, &demo.lines) {
        Ok(split) => {
            for (k, p) in split.paragraphs.iter().enumerate() {
                for (i, &b) in p.bits().iter().enumerate() {
                    if b {
                        demo.labels[i] = (k + 1).min(255) as u8;
                    }
                }
            }
            demo.groups = split.line_groups;
            demo.cuts = split.cuts;
            demo.no_separating_cut = split.no_separating_cut;
        }
        Err(e) => demo.error = Some(e.to_string()),
    }
    to_json(&demo)
}

#[derive(Serialize)]
struct LetterDemo {
    width: usize,
    height: usize,
    mask: Vec<u8>,
    font_size: Option<u32>,
    overflow: bool,
    rect: Option<BoundingBox>,
    glyphs: Vec<BoundingBox>,
    lines: Vec<String>,
    error: Option<String>,
}

/// Fits `text` into an elliptical bubble of the given size.
#[wasm_bindgen]
pub fn fit_lettering(text: &str, width: u32, height: u32) -> String {
    let (w, h) = (width.clamp(20, 400) as usize, height.clamp(20, 400) as usize);
    let e = Ellipse { cx: w as f64 / 2.0, cy: h as f64 / 2.0, rx: w as f64 / 2.0 - 1.0, ry: h as f64 / 2.0 - 1.0 };
    let mask = BinaryMask::from_fn(w, h, |x, y| e.contains(x as f64 + 0.5, y as f64 + 0.5));
    let mut demo = LetterDemo {
        width: w,
        height: h,
        mask: mask.bits().iter().map(|&b| u8::from(b)).collect(),
        font_size: None,
        overflow: false,
        rect: None,
        glyphs: Vec::new(),
        lines: Vec::new(),
        error: None,
    };
    match plan_lettering(text, &mask, &DefaultMetrics) {
        Ok(plan) => {
            demo.font_size = Some(plan.font_size);
            demo.overflow = plan.overflow;
            demo.rect = Some(plan.rect);
            demo.glyphs = plan.glyph_cells(&DefaultMetrics).into_iter().map(|(_, b)| b).collect();
            demo.lines = plan.lines.iter().map(|l| l.text.clone()).collect();
        }
        Err(e) => demo.error = Some(e.to_string()),
    }
    to_json(&demo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reading_order_matches_truth() {
        for seed in 0..20 {
            let v: serde_json::Value = serde_json::from_str(&reading_order(seed)).unwrap();
            assert_eq!(v["correct"], true, "seed {seed}");
        }
    }

    #[test]
    fn two_lobes_make_two_paragraphs() {
        let v: serde_json::Value = serde_json::from_str(&bubble_split(10.0, 40.0, 2, 3)).unwrap();
        assert!(v["error"].is_null(), "{}", v["error"]);
        assert_eq!(v["groups"].as_array().unwrap().len(), 2);
        assert_eq!(v["no_separating_cut"], false);
        assert_eq!(v["lines"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn lettering_fits() {
        let v: serde_json::Value = serde_json::from_str(&fit_lettering("hello manga world", 160, 100)).unwrap();
        assert!(v["font_size"].as_u64().unwrap() >= 6);
        assert_eq!(v["overflow"], false);
        let empty: serde_json::Value = serde_json::from_str(&fit_lettering("", 160, 100)).unwrap();
        assert!(empty["error"].is_string());
    }
}
