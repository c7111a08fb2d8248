//! Synthetic data with known ground truth: nested panel layouts and
//! bilingual volumes (vertical source text, horizontal target text, a mild
//! perspective change between editions and extra cover pages).

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::warp_page;
use crate::corpus::{to_jsonl, ParallelRecord};
use crate::geometry::{BoundingBox, Homography};
use crate::hashing::derive_seed;
use crate::page::{save_page_annotations, write_manifest, FrameBox, Page, PageError, TextUnit};
use crate::vision::{BinaryMask, GrayImage};

const KANA: &str = "あいうえおかきくけこさしすせそたちつてとなにぬねのはひふへほまみむめもやゆよらりるれろわをん";
const WORDS: &[&str] = &[
    "I", "you", "we", "it", "is", "was", "not", "the", "a", "this", "that", "what", "why", "now", "here", "there",
    "come", "go", "wait", "run", "look", "stop", "home", "school", "friend", "time", "again", "never", "always",
    "sorry", "thanks", "really", "okay", "yes", "no", "who", "are", "me", "with", "today", "night", "fine", "so",
    "late", "hurry", "up", "can", "will", "see", "know",
];
const TAG_POOL: &[&str] = &["1GIRL", "1BOY", "2GIRLS", "SMILE", "OUTDOORS", "INDOORS", "NIGHT", "ANGRY", "SOLO"];

/// Parameters of generated panel layouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub width: u32,
    pub height: u32,
    pub margin: f64,
    /// Empty space between neighbouring frames.
    pub gutter: f64,
    pub max_depth: usize,
    pub min_frame: f64,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self { width: 400, height: 560, margin: 12.0, gutter: 8.0, max_depth: 3, min_frame: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Rows(Vec<Node>),
    Columns(Vec<Node>),
    Leaf(BoundingBox),
}

/// A generated layout; frames are stored in shuffled order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLayout {
    pub frames: Vec<BoundingBox>,
    /// Frame indices in the order they were generated to be read.
    pub order: Vec<usize>,
}

fn split_sizes(rng: &mut ChaCha8Rng, total: f64, n: usize, min: f64) -> Vec<f64> {
    let spare = total - min * n as f64;
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| (min + spare * w / sum).floor()).collect()
}

fn gen_node(rng: &mut ChaCha8Rng, region: BoundingBox, depth: usize, spec: &LayoutSpec, root: bool) -> Node {
    let can_rows = region.h() >= 2.0 * spec.min_frame;
    let can_cols = region.w() >= 2.0 * spec.min_frame;
    if depth == 0 || (!can_rows && !can_cols) || (!root && rng.gen_bool(0.3)) {
        return Node::Leaf(region);
    }
    let rows = if can_rows && can_cols { rng.gen_bool(0.5) } else { can_rows };
    let extent = if rows { region.h() } else { region.w() };
    let max_n = ((extent / spec.min_frame) as usize).clamp(2, 3);
    let n = rng.gen_range(2..=max_n);
    let sizes = split_sizes(rng, extent, n, spec.min_frame);
    let mut at = if rows { region.y() } else { region.x() };
    let mut children = Vec::new();
    for (i, s) in sizes.iter().enumerate() {
        let len = if i + 1 == n { (if rows { region.bottom() } else { region.right() }) - at } else { *s };
        let sub = if rows {
            BoundingBox::new(region.x(), at, region.w(), len)
        } else {
            BoundingBox::new(at, region.y(), len, region.h())
        }
        .expect("positive region");
        children.push(gen_node(rng, sub, depth - 1, spec, false));
        at += len;
    }
    if rows {
        Node::Rows(children)
    } else {
        // columns are read right to left
        children.reverse();
        Node::Columns(children)
    }
}

fn leaves(node: &Node, out: &mut Vec<BoundingBox>) {
    match node {
        Node::Rows(c) | Node::Columns(c) => c.iter().for_each(|n| leaves(n, out)),
        Node::Leaf(b) => out.push(*b),
    }
}

fn inset(b: &BoundingBox, d: f64) -> BoundingBox {
    BoundingBox::from_edges(b.x() + d, b.y() + d, b.right() - d, b.bottom() - d).expect("frame larger than gutter")
}

/// Number of groups the intervals fall into when touching or overlapping
/// intervals are merged.
fn interval_groups(mut iv: Vec<(f64, f64)>) -> usize {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups = 0;
    let mut reach = f64::NEG_INFINITY;
    for (s, e) in iv {
        if s >= reach + 1.0 || groups == 0 {
            groups += 1;
        }
        reach = reach.max(e);
    }
    groups
}

/// A column node whose frames leave a common horizontal band free (or a row
/// node with a common vertical band) would be read differently from how it
/// was generated; such layouts are rejected.
fn ambiguous(node: &Node, gutter: f64) -> bool {
    let frames_of = |n: &Node| {
        let mut v = Vec::new();
        leaves(n, &mut v);
        v.into_iter().map(|b| inset(&b, gutter / 2.0)).collect::<Vec<_>>()
    };
    match node {
        Node::Leaf(_) => false,
        Node::Columns(c) => {
            let f = frames_of(node);
            interval_groups(f.iter().map(|b| (b.y(), b.bottom())).collect()) > 1 || c.iter().any(|n| ambiguous(n, gutter))
        }
        Node::Rows(c) => {
            let f = frames_of(node);
            interval_groups(f.iter().map(|b| (b.x(), b.right())).collect()) > 1 || c.iter().any(|n| ambiguous(n, gutter))
        }
    }
}

/// A random nested row/column layout whose reading order is fixed by
/// construction.
pub fn generate_layout(rng: &mut ChaCha8Rng, spec: &LayoutSpec) -> GeneratedLayout {
    let page = BoundingBox::new(
        spec.margin - spec.gutter / 2.0,
        spec.margin - spec.gutter / 2.0,
        spec.width as f64 - 2.0 * spec.margin + spec.gutter,
        spec.height as f64 - 2.0 * spec.margin + spec.gutter,
    )
    .expect("page larger than margins");
    let tree = loop {
        let t = gen_node(rng, page, spec.max_depth, spec, true);
        if !ambiguous(&t, spec.gutter) {
            break t;
        }
    };
    let mut reading = Vec::new();
    leaves(&tree, &mut reading);
    let reading: Vec<BoundingBox> = reading.iter().map(|b| inset(b, spec.gutter / 2.0)).collect();
    let mut slots: Vec<usize> = (0..reading.len()).collect();
    slots.shuffle(rng);
    let mut frames = vec![reading[0]; reading.len()];
    for (k, &s) in slots.iter().enumerate() {
        frames[s] = reading[k];
    }
    GeneratedLayout { frames, order: slots }
}

/// Ground-truth text order: frame reading order, then distance from the
/// frame's top-right corner, then smaller y, then larger right edge.
fn truth_text_order(frames_rank: &[usize], frames: &[BoundingBox], texts: &[(BoundingBox, usize)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..texts.len()).collect();
    let key = |i: usize| {
        let (b, s) = texts[i];
        let f = frames[s];
        let d = ((b.right() - f.right()).powi(2) + (b.y() - f.y()).powi(2)).sqrt();
        (frames_rank[s], d, b.y(), -b.right(), i)
    };
    idx.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(ka.3.total_cmp(&kb.3))
            .then(ka.4.cmp(&kb.4))
    });
    let mut order = vec![0; texts.len()];
    for (pos, &i) in idx.iter().enumerate() {
        order[i] = pos;
    }
    order
}

/// A page of frames and text boxes (no pixels) with ground-truth frame
/// order, scenes and text order filled in.
pub fn generate_layout_page(rng: &mut ChaCha8Rng, spec: &LayoutSpec, id: &str) -> Page {
    let layout = generate_layout(rng, spec);
    let mut rank = vec![0; layout.frames.len()];
    for (pos, &f) in layout.order.iter().enumerate() {
        rank[f] = pos;
    }
    let mut page = Page::new(id, format!("{id}.png"), spec.width, spec.height);
    page.frames = layout
        .frames
        .iter()
        .zip(&rank)
        .map(|(b, &r)| FrameBox { order: Some(r), ..FrameBox::new(*b) })
        .collect();
    let mut texts = Vec::new();
    for (fi, f) in layout.frames.iter().enumerate() {
        for _ in 0..rng.gen_range(1..=3) {
            let (w, h) = (rng.gen_range(14.0..40.0f64).floor(), rng.gen_range(30.0..80.0f64).floor());
            let x = rng.gen_range(f.x() + 4.0..(f.right() - w - 4.0).max(f.x() + 5.0)).floor();
            let y = rng.gen_range(f.y() + 4.0..(f.bottom() - h - 4.0).max(f.y() + 5.0)).floor();
            let b = BoundingBox::new(x, y, w.min(f.right() - x - 1.0), h.min(f.bottom() - y - 1.0)).expect("inside frame");
            texts.push((b, fi));
        }
    }
    let order = truth_text_order(&rank, &layout.frames, &texts);
    page.texts = texts
        .iter()
        .zip(order)
        .map(|((b, s), o)| TextUnit { order: Some(o), scene: Some(*s), ..TextUnit::new(*b) })
        .collect();
    page
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        dx * dx + dy * dy <= 1.0
    }

    pub fn grown(&self, d: f64) -> Ellipse {
        Ellipse { rx: self.rx + d, ry: self.ry + d, ..*self }
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.cx - self.rx, self.cy - self.ry, 2.0 * self.rx, 2.0 * self.ry).expect("positive radii")
    }
}

/// Width of the dark outline drawn around bubbles.
pub const OUTLINE: f64 = 2.5;

/// A rendered bubble: one lobe per paragraph, and the text index of each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBubble {
    pub lobes: Vec<Ellipse>,
    pub texts: Vec<usize>,
}

impl SynthBubble {
    /// True interior (white area, including text) as a page mask.
    pub fn interior(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| {
            self.lobes.iter().any(|e| e.contains(x as f64 + 0.5, y as f64 + 0.5))
        })
    }

    /// Box around the outline.
    pub fn outer_box(&self) -> BoundingBox {
        self.lobes.iter().map(|e| e.grown(OUTLINE).bbox()).reduce(|a, b| a.union(&b)).expect("at least one lobe")
    }
}

/// One content page of a synthetic bilingual volume.
#[derive(Debug, Clone)]
pub struct SynthPage {
    /// Source-language annotation: frames with tags, bubble boxes, and texts
    /// with content, line boxes, scene and order.
    pub src: Page,
    pub src_image: GrayImage,
    /// Target-language annotation in target-page coordinates.
    pub dst: Page,
    pub dst_image: GrayImage,
    /// Maps source-page coordinates onto the target page.
    pub jitter: Homography,
    pub bubbles: Vec<SynthBubble>,
}

#[derive(Debug, Clone)]
pub struct SynthVolume {
    pub id: String,
    pub pages: Vec<SynthPage>,
    /// Extra target-only pages placed before the content pages.
    pub covers: Vec<(Page, GrayImage)>,
    pub truth: Vec<ParallelRecord>,
}

impl SynthVolume {
    /// Target pages in volume order: covers, then content pages.
    pub fn dst_pages(&self) -> Vec<(&Page, &GrayImage)> {
        self.covers.iter().map(|(p, i)| (p, i)).chain(self.pages.iter().map(|p| (&p.dst, &p.dst_image))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeSpec {
    pub pages: usize,
    pub seed: u64,
    pub covers: usize,
    pub layout: LayoutSpec,
    /// Apply a random perspective change to target pages.
    pub perspective: bool,
    /// Probability that a bubble holds two paragraphs.
    pub two_paragraph_rate: f64,
}

impl Default for VolumeSpec {
    fn default() -> Self {
        Self {
            pages: 20,
            seed: 7,
            covers: 2,
            layout: LayoutSpec { max_depth: 2, min_frame: 150.0, ..LayoutSpec::default() },
            perspective: true,
            two_paragraph_rate: 0.25,
        }
    }
}

const GLYPH: f64 = 12.0;
const GLYPH_STEP: f64 = 15.0;
const COLUMN_PITCH: f64 = 18.0;
const RUBY: f64 = 3.0;
const RUBY_GAP: f64 = 5.0;
const LATIN_W: f64 = 6.0;
const LATIN_H: f64 = 8.0;
const LATIN_STEP: f64 = 7.0;
const ROW_PITCH: f64 = 13.0;
/// Vertical space between the text blocks of a two-lobe bubble.
const PARAGRAPH_GAP: f64 = 28.0;
/// Lobe centre distance relative to the sum of their vertical radii.
const LOBE_OVERLAP: f64 = 0.85;

/// Laid-out paragraph, relative to its block's top-left corner.
#[derive(Debug, Clone)]
struct Paragraph {
    src: String,
    dst: String,
    columns: Vec<String>,
    ruby: bool,
    rows: Vec<String>,
    src_w: f64,
    src_h: f64,
    dst_w: f64,
    dst_h: f64,
}

fn random_paragraph(rng: &mut ChaCha8Rng, max_dst_h: Option<f64>) -> Paragraph {
    let kana: Vec<char> = KANA.chars().collect();
    let len = rng.gen_range(3..=12);
    let per_col = rng.gen_range(3..=5usize);
    let src: String = (0..len).map(|_| *kana.choose(rng).expect("kana")).collect();
    let chars: Vec<char> = src.chars().collect();
    let columns: Vec<String> = chars.chunks(per_col).map(|c| c.iter().collect()).collect();
    let ruby = rng.gen_bool(0.3);
    let src_w = columns.len() as f64 * COLUMN_PITCH - (COLUMN_PITCH - GLYPH);
    let src_h = per_col.min(len) as f64 * GLYPH_STEP - (GLYPH_STEP - GLYPH);

    let mut words: Vec<&str> = (0..rng.gen_range(2..=5)).map(|_| *WORDS.choose(rng).expect("words")).collect();
    loop {
        let wrap = (src_w + 40.0).max(70.0);
        let rows = wrap_latin(&words, wrap);
        let dst_w = rows.iter().map(|r| r.chars().count() as f64 * LATIN_STEP - (LATIN_STEP - LATIN_W)).fold(0.0, f64::max);
        let dst_h = rows.len() as f64 * ROW_PITCH - (ROW_PITCH - LATIN_H);
        if max_dst_h.map_or(true, |m| dst_h <= src_h.max(m)) || words.len() == 1 {
            return Paragraph { dst: words.join(" "), src, columns, ruby, rows, src_w, src_h, dst_w, dst_h };
        }
        words.pop();
    }
}

fn wrap_latin(words: &[&str], width: f64) -> Vec<String> {
    let fits = |s: &str| s.chars().count() as f64 * LATIN_STEP - (LATIN_STEP - LATIN_W) <= width;
    let mut rows: Vec<String> = Vec::new();
    let mut cur = String::new();
    for w in words {
        let cand = if cur.is_empty() { w.to_string() } else { format!("{cur} {w}") };
        if fits(&cand) || cur.is_empty() {
            cur = cand;
        } else {
            rows.push(std::mem::replace(&mut cur, w.to_string()));
        }
    }
    if !cur.is_empty() {
        rows.push(cur);
    }
    rows
}

impl Paragraph {
    fn half_extent(&self) -> (f64, f64) {
        let w = self.src_w.max(self.dst_w) + if self.ruby { 2.0 * (RUBY_GAP + RUBY) } else { 0.0 };
        (w / 2.0, self.src_h.max(self.dst_h) / 2.0)
    }

    fn ellipse_at(&self, cx: f64, cy: f64) -> Ellipse {
        let (a, b) = self.half_extent();
        Ellipse { cx, cy, rx: (a * std::f64::consts::SQRT_2 + 4.0).round(), ry: (b * std::f64::consts::SQRT_2 + 4.0).round() }
    }

    /// Main source block (without ruby) when centered at `(cx, cy)`.
    fn src_block(&self, cx: f64, cy: f64) -> BoundingBox {
        BoundingBox::new((cx - self.src_w / 2.0).round(), (cy - self.src_h / 2.0).round(), self.src_w, self.src_h)
            .expect("non-empty block")
    }

    fn dst_block(&self, cx: f64, cy: f64) -> BoundingBox {
        BoundingBox::new((cx - self.dst_w / 2.0).round(), (cy - self.dst_h / 2.0).round(), self.dst_w, self.dst_h)
            .expect("non-empty block")
    }

    /// Draws vertical columns right to left; returns the column boxes.
    fn draw_src(&self, img: &mut GrayImage, block: &BoundingBox) -> Vec<BoundingBox> {
        let mut lines = Vec::new();
        for (ci, col) in self.columns.iter().enumerate() {
            let x = block.right() - GLYPH - ci as f64 * COLUMN_PITCH;
            let n = col.chars().count();
            for g in 0..n {
                let gb = BoundingBox::new(x, block.y() + g as f64 * GLYPH_STEP, GLYPH, GLYPH).expect("glyph");
                draw_glyph(img, &gb);
            }
            lines.push(BoundingBox::new(x, block.y(), GLYPH, n as f64 * GLYPH_STEP - (GLYPH_STEP - GLYPH)).expect("line"));
            if ci == 0 && self.ruby {
                for g in 0..(n.min(3)) {
                    let rb = BoundingBox::new(x + GLYPH + RUBY_GAP, block.y() + 2.0 + g as f64 * 7.0, RUBY, RUBY).expect("ruby");
                    img.fill_box(&rb, 30);
                }
            }
        }
        lines
    }

    fn draw_dst(&self, img: &mut GrayImage, block: &BoundingBox) {
        for (ri, row) in self.rows.iter().enumerate() {
            let w = row.chars().count() as f64 * LATIN_STEP - (LATIN_STEP - LATIN_W);
            let x0 = (block.x() + (block.w() - w) / 2.0).round();
            for (ci, c) in row.chars().enumerate() {
                if c != ' ' {
                    let gb = BoundingBox::new(x0 + ci as f64 * LATIN_STEP, block.y() + ri as f64 * ROW_PITCH, LATIN_W, LATIN_H)
                        .expect("glyph");
                    img.fill_box(&gb, 25);
                }
            }
        }
    }
}

/// A box glyph with a light counter, so strokes have inner edges.
fn draw_glyph(img: &mut GrayImage, b: &BoundingBox) {
    img.fill_box(b, 20);
    let inner = BoundingBox::new(b.x() + 4.0, b.y() + 4.0, b.w() - 8.0, b.h() - 8.0).expect("glyph counter");
    img.fill_box(&inner, 235);
}

fn fill_ellipse(img: &mut GrayImage, e: &Ellipse, v: u8) {
    let b = e.bbox();
    let (x0, y0, x1, y1) = b.pixel_span(img.width(), img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                img.set(x, y, v);
            }
        }
    }
}

fn draw_art(rng: &mut ChaCha8Rng, img: &mut GrayImage, area: &BoundingBox, count: usize) {
    let base = rng.gen_range(170..=235u8);
    img.fill_box(area, base);
    for _ in 0..count {
        let w = rng.gen_range(8.0..(area.w() / 3.0).max(9.0)).floor();
        let h = rng.gen_range(8.0..(area.h() / 3.0).max(9.0)).floor();
        let x = rng.gen_range(area.x()..(area.right() - w).max(area.x() + 1.0)).floor();
        let y = rng.gen_range(area.y()..(area.bottom() - h).max(area.y() + 1.0)).floor();
        let v = rng.gen_range(10..=160u8);
        if let Ok(b) = BoundingBox::new(x, y, w, h) {
            if let Some(b) = b.intersection(area) {
                if rng.gen_bool(0.3) {
                    let e = Ellipse { cx: b.center().x, cy: b.center().y, rx: b.w() / 2.0, ry: b.h() / 2.0 };
                    fill_ellipse(img, &e, v);
                } else {
                    img.fill_box(&b, v);
                }
            }
        }
    }
}

fn draw_frame(img: &mut GrayImage, f: &BoundingBox) {
    img.fill_box(f, 0);
    let inner = inset(f, 2.0);
    img.fill_box(&inner, 255);
}

fn random_jitter(rng: &mut ChaCha8Rng) -> Homography {
    let mut u = |r: f64| rng.gen_range(-r..=r);
    Homography::from_matrix([
        [1.0 + u(0.015), u(0.015), u(6.0)],
        [u(0.015), 1.0 + u(0.015), u(6.0)],
        [u(1.5e-5), u(1.5e-5), 1.0],
    ])
    .expect("near-identity matrix is invertible")
}

struct PlacedParagraph {
    para: Paragraph,
    center: (f64, f64),
    frame: usize,
}

/// Generates one content page. `frame_tags` is filled per frame.
fn generate_page(rng: &mut ChaCha8Rng, spec: &VolumeSpec, volume: &str, index: usize) -> (SynthPage, Vec<ParallelRecord>) {
    let ls = spec.layout;
    let (w, h) = (ls.width as usize, ls.height as usize);
    let layout = generate_layout(rng, &ls);
    let mut rank = vec![0; layout.frames.len()];
    for (pos, &f) in layout.order.iter().enumerate() {
        rank[f] = pos;
    }

    let mut canvas = GrayImage::filled(w, h, 255);
    for f in &layout.frames {
        draw_frame(&mut canvas, f);
        let area = inset(f, 2.0);
        let n = (area.area() / 900.0) as usize;
        draw_art(rng, &mut canvas, &area, n.clamp(6, 40));
    }

    let mut bubbles: Vec<SynthBubble> = Vec::new();
    let mut placed: Vec<PlacedParagraph> = Vec::new();
    let mut taken: Vec<BoundingBox> = Vec::new();
    for (fi, f) in layout.frames.iter().enumerate() {
        let area = inset(f, 6.0);
        let want = if rng.gen_bool(0.4) { 2 } else { 1 };
        for _ in 0..want {
            let two = rng.gen_bool(spec.two_paragraph_rate);
            'attempt: for _ in 0..40 {
                let first = random_paragraph(rng, None);
                let mut paras = vec![first];
                if two {
                    let limit = paras[0].src_h;
                    paras.push(random_paragraph(rng, Some(limit)));
                    let cap = paras[1].src_h;
                    if paras[0].dst_h > paras[0].src_h.max(cap) {
                        continue 'attempt;
                    }
                    if paras[1].dst_h > paras[1].src_h {
                        continue 'attempt;
                    }
                }
                let e0 = paras[0].ellipse_at(0.0, 0.0);
                let mut lobes = vec![e0];
                if two {
                    let mut e1 = paras[1].ellipse_at(0.0, 0.0);
                    let dy = paras[0].half_extent().1 + paras[1].half_extent().1 + PARAGRAPH_GAP;
                    let grow = ((dy / LOBE_OVERLAP - e0.ry - e1.ry) / 2.0).max(0.0).ceil();
                    lobes[0].ry += grow;
                    e1.ry += grow;
                    let dx = rng.gen_range(-0.3..=0.3) * lobes[0].rx.min(e1.rx);
                    lobes.push(Ellipse { cx: dx.round(), cy: dy.round(), ..e1 });
                }
                let probe = SynthBubble { lobes: lobes.clone(), texts: Vec::new() }.outer_box();
                let (lo_x, hi_x) = (area.x() - probe.x(), area.right() - probe.right());
                let (lo_y, hi_y) = (area.y() - probe.y(), area.bottom() - probe.bottom());
                if hi_x <= lo_x || hi_y <= lo_y {
                    continue;
                }
                let ox = rng.gen_range(lo_x..hi_x).round();
                let oy = rng.gen_range(lo_y..hi_y).round();
                let moved: Vec<Ellipse> = lobes.iter().map(|e| Ellipse { cx: e.cx + ox, cy: e.cy + oy, ..*e }).collect();
                let outer = SynthBubble { lobes: moved.clone(), texts: Vec::new() }.outer_box();
                let guard = outer.dilate(0.15);
                if taken.iter().any(|t| t.intersects(&guard)) {
                    continue;
                }
                taken.push(outer);
                let mut texts = Vec::new();
                for (para, e) in paras.into_iter().zip(&moved) {
                    texts.push(placed.len());
                    placed.push(PlacedParagraph { para, center: (e.cx, e.cy), frame: fi });
                }
                bubbles.push(SynthBubble { lobes: moved, texts });
                break;
            }
        }
    }

    // Bubbles are drawn over the art on both editions.
    for b in &bubbles {
        for e in &b.lobes {
            fill_ellipse(&mut canvas, &e.grown(OUTLINE), 0);
        }
        for e in &b.lobes {
            fill_ellipse(&mut canvas, e, 255);
        }
    }
    let mut src_img = canvas.clone();
    let mut dst_clean = canvas;
    let mut src_texts: Vec<(BoundingBox, usize)> = Vec::new();
    let mut src_lines = Vec::new();
    let mut dst_blocks = Vec::new();
    for p in &placed {
        let sb = p.para.src_block(p.center.0, p.center.1);
        src_lines.push(p.para.draw_src(&mut src_img, &sb));
        src_texts.push((sb, p.frame));
        let db = p.para.dst_block(p.center.0, p.center.1);
        p.para.draw_dst(&mut dst_clean, &db);
        dst_blocks.push(db);
    }

    let mut frame_tags: Vec<BTreeSet<String>> = Vec::new();
    for _ in &layout.frames {
        let n = rng.gen_range(0..=2);
        frame_tags.push((0..n).map(|_| TAG_POOL.choose(rng).expect("tags").to_string()).collect());
    }

    let jitter = if spec.perspective { random_jitter(rng) } else { Homography::identity() };
    let dst_img = warp_page(&jitter, &dst_clean, w, h);

    let order = truth_text_order(&rank, &layout.frames, &src_texts);
    let id = format!("{volume}-{index:03}");
    let dst_id = format!("{volume}-t{index:03}");
    let mut src = Page::new(id.clone(), format!("{id}.png"), ls.width, ls.height);
    let mut dst = Page::new(dst_id.clone(), format!("{dst_id}.png"), ls.width, ls.height);
    for (fi, f) in layout.frames.iter().enumerate() {
        src.frames.push(FrameBox { bbox: *f, order: Some(rank[fi]), tags: frame_tags[fi].clone() });
        let mapped = jitter.map_box(f).expect("finite mapping");
        dst.frames.push(FrameBox { bbox: mapped, order: Some(rank[fi]), tags: frame_tags[fi].clone() });
    }
    src.bubbles = bubbles.iter().map(SynthBubble::outer_box).collect();
    dst.bubbles = src.bubbles.iter().map(|b| jitter.map_box(b).expect("finite mapping")).collect();
    let mut truth = Vec::new();
    for (i, p) in placed.iter().enumerate() {
        let (sb, scene) = src_texts[i];
        src.texts.push(TextUnit {
            content: Some(p.para.src.clone()),
            lines: src_lines[i].clone(),
            order: Some(order[i]),
            scene: Some(scene),
            ..TextUnit::new(sb)
        });
        dst.texts.push(TextUnit {
            content: Some(p.para.dst.clone()),
            order: Some(order[i]),
            scene: Some(scene),
            ..TextUnit::new(jitter.map_box(&dst_blocks[i]).expect("finite mapping"))
        });
        truth.push(ParallelRecord {
            src_box: sb,
            dst: p.para.dst.clone(),
            order: order[i],
            page: id.clone(),
            scene,
            src: p.para.src.clone(),
            tags: frame_tags[scene].iter().cloned().collect(),
            volume: volume.to_string(),
        });
    }
    truth.sort_by_key(|r| r.order);
    let page = SynthPage { src, src_image: src_img, dst, dst_image: dst_img, jitter, bubbles };
    (page, truth)
}

fn generate_cover(rng: &mut ChaCha8Rng, spec: &VolumeSpec, id: &str) -> (Page, GrayImage) {
    let (w, h) = (spec.layout.width, spec.layout.height);
    let mut img = GrayImage::filled(w as usize, h as usize, 255);
    let area = BoundingBox::new(0.0, 0.0, w as f64, h as f64).expect("page");
    draw_art(rng, &mut img, &area, 30);
    let title = BoundingBox::new(30.0, 30.0, w as f64 - 60.0, 60.0).expect("title");
    img.fill_box(&title, 250);
    for i in 0..8 {
        img.fill_box(&BoundingBox::new(50.0 + i as f64 * 36.0, 45.0, 28.0, 30.0).expect("title glyph"), 15);
    }
    (Page::new(id, format!("{id}.png"), w, h), img)
}

/// A deterministic synthetic bilingual volume.
pub fn generate_volume(spec: &VolumeSpec) -> SynthVolume {
    let id = format!("vol{}", spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "volume"));
    let mut pages = Vec::new();
    let mut truth = Vec::new();
    for i in 0..spec.pages {
        let (p, t) = generate_page(&mut rng, spec, &id, i);
        pages.push(p);
        truth.extend(t);
    }
    let covers = (0..spec.covers).map(|c| generate_cover(&mut rng, spec, &format!("{id}-cover{c}"))).collect();
    SynthVolume { id, pages, covers, truth }
}

/// Layout-only pages (frames and texts with ground-truth order).
pub fn generate_layout_pages(count: usize, seed: u64, spec: &LayoutSpec) -> Vec<Page> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "layouts"));
    (0..count).map(|i| generate_layout_page(&mut rng, spec, &format!("layout{seed}-{i:03}"))).collect()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PageError {
    PageError::Io { path: path.display().to_string(), source: std::io::Error::other(e.to_string()) }
}

/// Writes a volume as:
///
/// ```text
/// src/<id>.png, src/<id>.json    source pages and annotations
/// dst/<id>.png, dst/<id>.json    target pages (covers first)
/// src.txt, dst.txt               manifests
/// truth.jsonl                    ground-truth parallel records
/// ```
pub fn write_volume(vol: &SynthVolume, dir: &Path) -> Result<(), PageError> {
    for sub in ["src", "dst"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
    }
    let mut src_list = Vec::new();
    for p in &vol.pages {
        let img = dir.join("src").join(&p.src.image);
        p.src_image.save(&img).map_err(|e| io_err(&img, e))?;
        save_page_annotations(&p.src, &img.with_extension("json"))?;
        src_list.push(format!("src/{}", p.src.image));
    }
    let mut dst_list = Vec::new();
    for (page, image) in vol.dst_pages() {
        let img = dir.join("dst").join(&page.image);
        image.save(&img).map_err(|e| io_err(&img, e))?;
        save_page_annotations(page, &img.with_extension("json"))?;
        dst_list.push(format!("dst/{}", page.image));
    }
    write_manifest(&dir.join("src.txt"), &src_list)?;
    write_manifest(&dir.join("dst.txt"), &dst_list)?;
    let truth = dir.join("truth.jsonl");
    std::fs::write(&truth, to_jsonl(&vol.truth)).map_err(|e| io_err(&truth, e))
}

/// Writes layout pages as `<id>.json` files plus a `pages.txt` list.
pub fn write_layout_pages(pages: &[Page], dir: &Path) -> Result<(), PageError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut list = String::new();
    for p in pages {
        save_page_annotations(p, &dir.join(format!("{}.json", p.id)))?;
        list.push_str(&format!("{}.json\n", p.id));
    }
    let path = dir.join("pages.txt");
    std::fs::write(&path, list).map_err(|e| io_err(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layouts_are_gap_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let l = generate_layout(&mut rng, &LayoutSpec::default());
            let mut sorted = l.order.clone();
            sorted.sort();
            assert_eq!(sorted, (0..l.frames.len()).collect::<Vec<_>>());
            for (i, a) in l.frames.iter().enumerate() {
                assert!(a.x() >= 0.0 && a.right() <= 400.0 && a.bottom() <= 560.0);
                for b in &l.frames[i + 1..] {
                    assert!(!a.intersects(b));
                }
            }
        }
    }

    #[test]
    fn first_read_frame_touches_top_right() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let l = generate_layout(&mut rng, &LayoutSpec::default());
            let first = l.frames[l.order[0]];
            let top = l.frames.iter().map(|f| f.y()).fold(f64::INFINITY, f64::min);
            let right = l.frames.iter().map(|f| f.right()).fold(0.0, f64::max);
            assert_eq!(first.y(), top);
            assert_eq!(first.right(), right);
        }
    }

    #[test]
    fn volume_is_deterministic_and_consistent() {
        let spec = VolumeSpec { pages: 2, ..VolumeSpec::default() };
        let a = generate_volume(&spec);
        let b = generate_volume(&spec);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.pages[1].dst_image, b.pages[1].dst_image);
        assert_eq!(a.covers.len(), 2);
        assert_eq!(a.dst_pages().len(), 4);
        for p in &a.pages {
            assert_eq!(p.src.texts.len(), p.dst.texts.len());
            assert!(!p.src.texts.is_empty());
            let mut orders: Vec<usize> = p.src.texts.iter().map(|t| t.order.unwrap()).collect();
            orders.sort();
            assert_eq!(orders, (0..p.src.texts.len()).collect::<Vec<_>>());
            for t in &p.src.texts {
                assert!(t.text().chars().count() >= 3);
            }
        }
        let total: usize = a.pages.iter().map(|p| p.src.texts.len()).sum();
        assert_eq!(total, a.truth.len());
    }

    #[test]
    fn bubble_interiors_are_white() {
        let v = generate_volume(&VolumeSpec { pages: 1, perspective: false, ..VolumeSpec::default() });
        let p = &v.pages[0];
        let (w, h) = (p.src_image.width(), p.src_image.height());
        for b in &p.bubbles {
            let m = b.interior(w, h);
            let mut light = 0;
            for y in 0..h {
                for x in 0..w {
                    if m.get(x, y) && p.dst_image.get(x, y) == 255 {
                        light += 1;
                    }
                }
            }
            assert!(light as f64 > 0.6 * m.count() as f64);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn layout_pages_have_valid_truth(seed in 0u64..1000) {
            let pages = generate_layout_pages(2, seed, &LayoutSpec::default());
            for p in pages {
                let mut orders: Vec<usize> = p.texts.iter().map(|t| t.order.unwrap()).collect();
                orders.sort();
                prop_assert_eq!(orders, (0..p.texts.len()).collect::<Vec<_>>());
                for t in &p.texts {
                    let f = p.frames[t.scene.unwrap()].bbox;
                    prop_assert!(f.intersection_area(&t.bbox) == t.bbox.area());
                }
            }
        }
    }
}
