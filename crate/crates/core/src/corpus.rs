//! Parallel corpus extraction from paired pages, and its evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{transfer_regions, warp_page, PagePair, Pairing};
use crate::bubble::{detect_text_lines_in_mask, estimate_bubble_mask, split_connected_bubble, Orientation};
use crate::geometry::{iou, BoundingBox, Homography};
use crate::hashing::derive_seed;
use crate::layout::{assign_scenes, order_texts, predict_scene_tags, Tagger};
use crate::page::{FrameBox, Page, TextUnit};
use crate::vision::{BinaryMask, GrayImage};

/// Minimum box IoU for the fixture OCR to recognize an annotated text.
pub const FIXTURE_OCR_IOU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("OCR engine {engine}: {message}")]
    Ocr { engine: String, message: String },
    #[error("detector {engine}: {message}")]
    Detector { engine: String, message: String },
    #[error("page sets differ: {0}")]
    PageMismatch(String),
    #[error("corpus line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One aligned text pair. Field order is alphabetical so that the JSONL
/// encoding has sorted keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelRecord {
    #[serde(rename = "box")]
    pub src_box: BoundingBox,
    pub dst: String,
    pub order: usize,
    pub page: String,
    pub scene: usize,
    pub src: String,
    pub tags: Vec<String>,
    pub volume: String,
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[ParallelRecord]) -> Result<(), CorpusError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CorpusError::Format { line: 0, message: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(records: &[ParallelRecord]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<ParallelRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Format { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

/// A text region to recognize.
#[derive(Debug, Clone, Copy)]
pub struct OcrRequest<'a> {
    pub side: Side,
    /// The image the region refers to.
    pub image: &'a GrayImage,
    pub region: BoundingBox,
    pub mask: Option<&'a BinaryMask>,
    /// Maps region coordinates to the page's own coordinates when the image
    /// is a warped view of that page.
    pub to_native: Option<&'a Homography>,
    /// Annotation of the page in its own coordinates, when available.
    pub annotation: Option<&'a Page>,
}

impl OcrRequest<'_> {
    pub fn native_region(&self) -> Option<BoundingBox> {
        match self.to_native {
            None => Some(self.region),
            Some(h) => h.map_box(&self.region).ok(),
        }
    }
}

/// Text recognition. Must be deterministic.
pub trait OcrEngine: Send + Sync {
    fn name(&self) -> &str;
    fn recognize(&self, req: &OcrRequest<'_>) -> Result<String, CorpusError>;
}

/// Reads the annotated string of the text whose box best overlaps the
/// request region (IoU at least [`FIXTURE_OCR_IOU`]).
#[derive(Debug, Default, Clone, Copy)]
pub struct FixtureOcr;

impl OcrEngine for FixtureOcr {
    fn name(&self) -> &str {
        "fixture"
    }

    fn recognize(&self, req: &OcrRequest<'_>) -> Result<String, CorpusError> {
        let fail = |message: String| CorpusError::Ocr { engine: "fixture".into(), message };
        let page = req.annotation.ok_or_else(|| fail("no annotation for page".into()))?;
        let region = req.native_region().ok_or_else(|| fail("region maps to infinity".into()))?;
        let best = page
            .texts
            .iter()
            .filter(|t| t.content.is_some())
            .map(|t| (iou(&region, &t.bbox), t))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        match best {
            Some((score, t)) if score >= FIXTURE_OCR_IOU => Ok(t.text().to_string()),
            Some((score, _)) => Err(fail(format!("no annotated text on {} (best IoU {score:.2})", page.id))),
            None => Err(fail(format!("page {} has no annotated texts", page.id))),
        }
    }
}

/// Speech-bubble detection on a page image.
pub trait DetectorEngine: Send + Sync {
    fn name(&self) -> &str;
    /// Boxes within the page bounds.
    fn detect(&self, page: &Page, image: &GrayImage) -> Result<Vec<BoundingBox>, CorpusError>;
}

/// Returns the annotated bubble boxes, each edge moved by a seeded uniform
/// offset of at most `jitter` pixels.
#[derive(Debug, Default, Clone, Copy)]
pub struct FixtureDetector {
    pub jitter: f64,
    pub seed: u64,
}

impl DetectorEngine for FixtureDetector {
    fn name(&self) -> &str {
        "fixture"
    }

    fn detect(&self, page: &Page, image: &GrayImage) -> Result<Vec<BoundingBox>, CorpusError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &page.id));
        let (w, h) = (image.width() as f64, image.height() as f64);
        let mut out = Vec::new();
        for b in page.bubble_boxes() {
            let mut d = || if self.jitter > 0.0 { rng.gen_range(-self.jitter..=self.jitter) } else { 0.0 };
            let (l, t, r, btm) = (b.x() + d(), b.y() + d(), b.right() + d(), b.bottom() + d());
            if let Some(j) = BoundingBox::from_edges(l, t, r.max(l + 1.0), btm.max(t + 1.0)).ok().and_then(|j| j.clamp_to(w, h)) {
                out.push(j);
            }
        }
        Ok(out)
    }
}

/// A page of a volume: annotation (possibly just frames) and pixels.
#[derive(Debug, Clone)]
pub struct VolumePage {
    pub annotation: Page,
    pub image: GrayImage,
}

pub struct Engines<'a> {
    pub detector: &'a dyn DetectorEngine,
    pub ocr: &'a dyn OcrEngine,
    pub tagger: &'a dyn Tagger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageReport {
    pub page: String,
    pub records: usize,
    pub warnings: Vec<String>,
    /// Set when the whole page had to be skipped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Extraction {
    pub records: Vec<ParallelRecord>,
    pub pages: Vec<PageReport>,
    pub warnings: Vec<String>,
}

fn union_all(boxes: &[BoundingBox]) -> Option<BoundingBox> {
    boxes.iter().copied().reduce(|a, b| a.union(&b))
}

/// A text region found on a source page, with its region mask.
#[derive(Debug, Clone)]
pub struct Paragraph {
    pub mask: BinaryMask,
    pub lines: Vec<BoundingBox>,
    pub region: BoundingBox,
}

/// Bubble masks, text lines and paragraph splits for detected bubble boxes.
/// Failures of individual bubbles become warnings.
pub fn segment_paragraphs(image: &GrayImage, boxes: &[BoundingBox], warnings: &mut Vec<String>) -> Vec<Paragraph> {
    let mut out = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        let mask = match estimate_bubble_mask(image, b) {
            Ok(m) => m,
            Err(e) => {
                warnings.push(format!("bubble {bi}: {e}"));
                continue;
            }
        };
        let lines = detect_text_lines_in_mask(image, &mask, Orientation::Vertical);
        if lines.is_empty() {
            warnings.push(format!("bubble {bi}: no text lines"));
            continue;
        }
        let split = match split_connected_bubble(&mask, &lines) {
            Ok(s) => s,
            Err(e) => {
                warnings.push(format!("bubble {bi}: {e}"));
                continue;
            }
        };
        if split.no_separating_cut {
            warnings.push(format!("bubble {bi}: paragraphs could not be separated"));
        }
        for (pmask, group) in split.paragraphs.into_iter().zip(split.line_groups) {
            let plines: Vec<BoundingBox> = group.iter().map(|&i| lines[i]).collect();
            if let Some(region) = union_all(&plines) {
                out.push(Paragraph { mask: pmask, lines: plines, region });
            }
        }
    }
    out
}

fn extract_pair(
    volume: &str,
    pair: &PagePair,
    src: &VolumePage,
    dst: &VolumePage,
    engines: &Engines<'_>,
) -> Result<(Vec<ParallelRecord>, Vec<String>), String> {
    let mut warnings = Vec::new();
    let page = &src.annotation;
    let boxes = engines.detector.detect(page, &src.image).map_err(|e| e.to_string())?;
    let paragraphs = segment_paragraphs(&src.image, &boxes, &mut warnings);

    let (w, h) = (src.image.width(), src.image.height());
    let warped = warp_page(&pair.homography, &dst.image, w, h);
    let to_native = pair.homography.inverse().map_err(|e| e.to_string())?;
    let masks: Vec<BinaryMask> = paragraphs.iter().map(|p| p.mask.clone()).collect();
    let dst_masks = transfer_regions(&masks, w, h);

    let mut texts: Vec<(TextUnit, String)> = Vec::new();
    for (k, (para, dmask)) in paragraphs.iter().zip(&dst_masks).enumerate() {
        let dst_lines = detect_text_lines_in_mask(&warped, dmask, Orientation::Horizontal);
        let Some(dst_region) = union_all(&dst_lines) else {
            warnings.push(format!("region {k}: no target text lines"));
            continue;
        };
        let src_req = OcrRequest {
            side: Side::Source,
            image: &src.image,
            region: para.region,
            mask: Some(&para.mask),
            to_native: None,
            annotation: Some(&src.annotation),
        };
        let dst_req = OcrRequest {
            side: Side::Target,
            image: &warped,
            region: dst_region,
            mask: Some(dmask),
            to_native: Some(&to_native),
            annotation: Some(&dst.annotation),
        };
        let recognized = engines.ocr.recognize(&src_req).and_then(|s| Ok((s, engines.ocr.recognize(&dst_req)?)));
        match recognized {
            Ok((s, d)) if !s.trim().is_empty() => {
                let mut t = TextUnit::with_content(para.region, s);
                t.lines = para.lines.clone();
                texts.push((t, d));
            }
            Ok(_) => warnings.push(format!("region {k}: empty source text")),
            Err(e) => warnings.push(format!("region {k}: {e}")),
        }
    }
    if texts.is_empty() {
        return Ok((Vec::new(), warnings));
    }

    let mut ordered = Page { texts: texts.iter().map(|(t, _)| t.clone()).collect(), ..page.clone() };
    ordered.bubbles.clear();
    if ordered.frames.is_empty() {
        warnings.push("no frames; treating the page as one scene".into());
        let full = BoundingBox::new(0.0, 0.0, w as f64, h as f64).map_err(|e| e.to_string())?;
        ordered.frames.push(FrameBox::new(full));
    }
    let ordered = assign_scenes(&ordered).and_then(|p| order_texts(&p)).map_err(|e| e.to_string())?;
    let mut tag_cache: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut records = Vec::new();
    for (t, (_, dst_text)) in ordered.texts.iter().zip(&texts) {
        let scene = t.scene.expect("scenes assigned");
        let tags = match tag_cache.get(&scene) {
            Some(v) => v.clone(),
            None => {
                let v: Vec<String> = match predict_scene_tags(engines.tagger, &ordered, Some(&src.image), scene) {
                    Ok(s) => s.tags.into_iter().collect(),
                    Err(e) => {
                        warnings.push(format!("scene {scene}: {e}"));
                        Vec::new()
                    }
                };
                tag_cache.insert(scene, v.clone());
                v
            }
        };
        records.push(ParallelRecord {
            src_box: t.bbox,
            dst: dst_text.clone(),
            order: t.order.expect("order assigned"),
            page: page.id.clone(),
            scene,
            src: t.text().to_string(),
            tags,
            volume: volume.to_string(),
        });
    }
    records.sort_by_key(|r| r.order);
    Ok((records, warnings))
}

/// Builds parallel records for every verified page pair. Failures on one
/// page are reported and never stop the volume.
pub fn extract_corpus(
    volume: &str,
    src: &[VolumePage],
    dst: &[VolumePage],
    pairing: &Pairing,
    engines: &Engines<'_>,
) -> Extraction {
    let mut ex = Extraction::default();
    if pairing.pairs.is_empty() {
        ex.warnings.push("no verified page pairs; corpus is empty".into());
    }
    ex.warnings.extend(pairing.warnings.iter().cloned());
    let mut pairs: Vec<&PagePair> = pairing.pairs.iter().collect();
    pairs.sort_by_key(|p| (p.src, p.dst));
    for pair in pairs {
        let (Some(s), Some(d)) = (src.get(pair.src), dst.get(pair.dst)) else {
            ex.warnings.push(format!("pair {}-{} refers to a missing page", pair.src, pair.dst));
            continue;
        };
        let id = s.annotation.id.clone();
        match extract_pair(volume, pair, s, d, engines) {
            Ok((records, warnings)) => {
                ex.pages.push(PageReport { page: id, records: records.len(), warnings, error: None });
                ex.records.extend(records);
            }
            Err(e) => ex.pages.push(PageReport { page: id, records: 0, warnings: Vec::new(), error: Some(e) }),
        }
    }
    ex
}

/// `1 − levenshtein(a, b) / max(|a|, |b|)` over characters; two empty
/// strings are identical.
pub fn ned_similarity(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionScore {
    pub tau: f64,
    pub true_positives: usize,
    pub recall: f64,
    pub precision: f64,
}

/// Greedy one-to-one matching of extracted to truth records on the same
/// page. A pair qualifies when both the source and the target similarity
/// reach `tau`; qualifying pairs are taken in descending order of their
/// smaller similarity.
pub fn evaluate_extraction(extracted: &[ParallelRecord], truth: &[ParallelRecord], tau: f64) -> ExtractionScore {
    assert!(tau > 0.0 && tau <= 1.0, "tau must lie in (0, 1]");
    let mut by_page: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, t) in truth.iter().enumerate() {
        by_page.entry(t.page.as_str()).or_default().push(j);
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, e) in extracted.iter().enumerate() {
        for &j in by_page.get(e.page.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            let t = &truth[j];
            let s = ned_similarity(&e.src, &t.src).min(ned_similarity(&e.dst, &t.dst));
            if s >= tau {
                candidates.push((s, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_e, mut used_t) = (BTreeSet::new(), BTreeSet::new());
    let mut tp = 0;
    for (_, i, j) in candidates {
        if !used_e.contains(&i) && !used_t.contains(&j) {
            used_e.insert(i);
            used_t.insert(j);
            tp += 1;
        }
    }
    let ratio = |n: usize, d: usize| if d == 0 { 1.0 } else { n as f64 / d as f64 };
    ExtractionScore { tau, true_positives: tp, recall: ratio(tp, truth.len()), precision: ratio(tp, extracted.len()) }
}

/// Fraction of pages whose predicted text order equals the truth exactly.
/// Pages are matched by id.
pub fn evaluate_reading_order(predicted: &[Page], truth: &[Page]) -> Result<f64, CorpusError> {
    if predicted.len() != truth.len() {
        return Err(CorpusError::PageMismatch(format!("{} predicted vs {} truth pages", predicted.len(), truth.len())));
    }
    if truth.is_empty() {
        return Ok(1.0);
    }
    let pred: BTreeMap<&str, &Page> = predicted.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut correct = 0;
    for t in truth {
        let p = pred.get(t.id.as_str()).ok_or_else(|| CorpusError::PageMismatch(format!("page {} not predicted", t.id)))?;
        if p.texts.len() != t.texts.len() {
            return Err(CorpusError::PageMismatch(format!("page {} has a different number of texts", t.id)));
        }
        let same = p.texts.iter().zip(&t.texts).all(|(a, b)| a.order.is_some() && a.order == b.order);
        correct += usize::from(same);
    }
    Ok(correct as f64 / truth.len() as f64)
}
