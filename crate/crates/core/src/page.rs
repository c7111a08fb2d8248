//! Annotated page model and its file formats.
//!
//! A page annotation is one JSON document:
//!
//! ```json
//! {
//!   "schema": 1,
//!   "id": "p000",
//!   "image": "p000.png",
//!   "size": [400, 560],
//!   "frames": [{ "box": [10, 10, 180, 200], "tags": ["1GIRL"] }],
//!   "bubbles": [[30, 40, 60, 90]],
//!   "texts": [{ "box": [40, 50, 30, 70], "content": "...", "lines": [[40, 50, 12, 70]] }]
//! }
//! ```
//!
//! Coordinates are integer pixels, origin top-left. `order` and `scene`
//! appear on frames/texts once they have been estimated. `bubbles` is
//! optional and lists speech-bubble boxes when they differ from text boxes.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::vision::BinaryMask;

pub const SCHEMA_VERSION: u32 = 1;
/// Size of the semantic tag vocabulary used for scene tags.
pub const TAG_VOCABULARY_SIZE: usize = 512;

#[derive(Debug, Error)]
pub enum PageError {
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported schema version {0}")]
    Schema(u32),
    #[error("page {0} has no frames")]
    NoFrames(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PageError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PageError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    /// Semantic tags recorded for this frame, if any.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tags: BTreeSet<String>,
}

impl FrameBox {
    pub fn new(bbox: BoundingBox) -> Self {
        Self { bbox, order: None, tags: BTreeSet::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextUnit {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lines: Vec<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    /// Index of the frame this text belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<usize>,
    /// Pixel mask of the text region; not persisted in annotation files.
    #[serde(skip)]
    pub mask: Option<BinaryMask>,
}

impl TextUnit {
    pub fn new(bbox: BoundingBox) -> Self {
        Self { bbox, content: None, lines: Vec::new(), order: None, scene: None, mask: None }
    }

    pub fn with_content(bbox: BoundingBox, content: impl Into<String>) -> Self {
        Self { content: Some(content.into()), ..Self::new(bbox) }
    }

    pub fn text(&self) -> &str {
        self.content.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub image: String,
    pub size: (u32, u32),
    #[serde(default)]
    pub frames: Vec<FrameBox>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bubbles: Vec<BoundingBox>,
    #[serde(default)]
    pub texts: Vec<TextUnit>,
}

#[derive(Serialize, Deserialize)]
struct PageDocument {
    schema: u32,
    #[serde(flatten)]
    page: Page,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Reject pages without frames.
    pub strict: bool,
}

impl Page {
    pub fn new(id: impl Into<String>, image: impl Into<String>, width: u32, height: u32) -> Self {
        Self { id: id.into(), image: image.into(), size: (width, height), frames: Vec::new(), bubbles: Vec::new(), texts: Vec::new() }
    }

    pub fn width(&self) -> f64 {
        self.size.0 as f64
    }

    pub fn height(&self) -> f64 {
        self.size.1 as f64
    }

    pub fn frame_boxes(&self) -> Vec<BoundingBox> {
        self.frames.iter().map(|f| f.bbox).collect()
    }

    /// Speech-bubble boxes, falling back to text boxes when none are annotated.
    pub fn bubble_boxes(&self) -> Vec<BoundingBox> {
        if self.bubbles.is_empty() {
            self.texts.iter().map(|t| t.bbox).collect()
        } else {
            self.bubbles.clone()
        }
    }

    /// Texts sorted by their assigned order (unordered texts last, by index).
    pub fn texts_in_order(&self) -> Vec<&TextUnit> {
        let mut v: Vec<(usize, &TextUnit)> = self.texts.iter().enumerate().collect();
        v.sort_by_key(|(i, t)| (t.order.unwrap_or(usize::MAX), *i));
        v.into_iter().map(|(_, t)| t).collect()
    }

    /// Canonical JSON encoding; identical pages produce identical bytes.
    pub fn to_json(&self) -> String {
        let doc = PageDocument { schema: SCHEMA_VERSION, page: self.clone() };
        let mut s = serde_json::to_string_pretty(&doc).expect("page serializes");
        s.push('\n');
        s
    }

    /// Parses a page document and clamps boxes into the image. Returns the
    /// page plus human-readable warnings about anything that was adjusted.
    pub fn from_json(src: &str, origin: &str, opts: LoadOptions) -> Result<(Page, Vec<String>), PageError> {
        let doc: PageDocument = serde_json::from_str(src)
            .map_err(|e| PageError::Parse { path: origin.to_string(), message: e.to_string() })?;
        if doc.schema != SCHEMA_VERSION {
            return Err(PageError::Schema(doc.schema));
        }
        let mut page = doc.page;
        let warnings = page.clamp_boxes();
        if opts.strict && page.frames.is_empty() {
            return Err(PageError::NoFrames(page.id));
        }
        Ok((page, warnings))
    }

    /// Clips every box into `[0,width]×[0,height]`, dropping boxes that fall
    /// completely outside.
    pub fn clamp_boxes(&mut self) -> Vec<String> {
        let (w, h) = (self.width(), self.height());
        let mut warnings = Vec::new();
        let id = self.id.clone();
        let mut clamp = |what: &str, idx: usize, b: &BoundingBox| -> Option<BoundingBox> {
            let c = b.clamp_to(w, h);
            match c {
                Some(c) if c == *b => {}
                Some(_) => warnings.push(format!("{id}: {what} {idx} clamped to image bounds")),
                None => warnings.push(format!("{id}: {what} {idx} lies outside the image and was dropped")),
            }
            c
        };
        self.frames = std::mem::take(&mut self.frames)
            .into_iter()
            .enumerate()
            .filter_map(|(i, mut f)| clamp("frame", i, &f.bbox).map(|b| {
                f.bbox = b;
                f
            }))
            .collect();
        self.bubbles = std::mem::take(&mut self.bubbles)
            .into_iter()
            .enumerate()
            .filter_map(|(i, b)| clamp("bubble", i, &b))
            .collect();
        self.texts = std::mem::take(&mut self.texts)
            .into_iter()
            .enumerate()
            .filter_map(|(i, mut t)| {
                let b = clamp("text", i, &t.bbox)?;
                t.bbox = b;
                t.lines = t.lines.iter().filter_map(|l| l.clamp_to(w, h)).collect();
                Some(t)
            })
            .collect();
        warnings
    }
}

pub fn load_page_annotations(path: &Path, opts: LoadOptions) -> Result<(Page, Vec<String>), PageError> {
    let src = std::fs::read_to_string(path).map_err(|e| PageError::io(path, e))?;
    Page::from_json(&src, &path.display().to_string(), opts)
}

pub fn save_page_annotations(page: &Page, path: &Path) -> Result<(), PageError> {
    std::fs::write(path, page.to_json()).map_err(|e| PageError::io(path, e))
}

/// Set of scene tags predicted for one frame.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SceneTagSet {
    pub scene: usize,
    pub tags: BTreeSet<String>,
}

/// Declared tag vocabulary (at most [`TAG_VOCABULARY_SIZE`] entries).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocabulary {
    tags: BTreeSet<String>,
}

impl TagVocabulary {
    pub fn new(tags: impl IntoIterator<Item = impl Into<String>>) -> Result<Self, String> {
        let tags: BTreeSet<String> = tags.into_iter().map(|t| t.into().to_uppercase()).collect();
        if tags.len() > TAG_VOCABULARY_SIZE {
            return Err(format!("tag vocabulary has {} entries, limit is {TAG_VOCABULARY_SIZE}", tags.len()));
        }
        Ok(Self { tags })
    }

    /// A small built-in vocabulary of character/scene tags.
    pub fn builtin() -> Self {
        Self::new([
            "1GIRL", "1BOY", "2GIRLS", "2BOYS", "MULTIPLE_GIRLS", "MULTIPLE_BOYS", "SOLO", "MONOCHROME",
            "COMIC", "SMILE", "BLUSH", "OPEN_MOUTH", "CLOSED_EYES", "TEARS", "SWEAT", "ANGRY", "SURPRISED",
            "OUTDOORS", "INDOORS", "SKY", "NIGHT", "SCHOOL_UNIFORM", "GLASSES", "HAT", "WEAPON", "SWORD",
            "FOOD", "ANIMAL", "CAT", "DOG", "CAR", "BUILDING", "TREE", "WATER", "TEXT",
        ])
        .expect("builtin vocabulary fits")
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.contains(&tag.to_uppercase())
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Imports the `<page>` elements of a Manga109-style XML book.
///
/// Each `<frame>` and `<text>` child contributes a box from its
/// `xmin/ymin/xmax/ymax` attributes; text element content becomes the text.
pub fn import_manga109_xml(src: &str, book: &str) -> Result<Vec<Page>, PageError> {
    let parse_err = |m: String| PageError::Parse { path: book.to_string(), message: m };
    let doc = roxmltree::Document::parse(src).map_err(|e| parse_err(e.to_string()))?;
    let num = |n: &roxmltree::Node, attr: &str| -> Result<f64, PageError> {
        n.attribute(attr)
            .ok_or_else(|| parse_err(format!("missing attribute {attr}")))?
            .trim()
            .parse::<f64>()
            .map_err(|e| parse_err(format!("attribute {attr}: {e}")))
    };
    let bbox = |n: &roxmltree::Node| -> Result<BoundingBox, PageError> {
        BoundingBox::from_edges(num(n, "xmin")?, num(n, "ymin")?, num(n, "xmax")?, num(n, "ymax")?)
            .map_err(|e| parse_err(e.to_string()))
    };
    let mut pages = Vec::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("page")) {
        let index = node.attribute("index").unwrap_or("0");
        let width = num(&node, "width")? as u32;
        let height = num(&node, "height")? as u32;
        let mut page = Page::new(format!("{book}-{index:0>3}"), format!("{index:0>3}.jpg"), width, height);
        for child in node.children().filter(|c| c.is_element()) {
            match child.tag_name().name() {
                "frame" => page.frames.push(FrameBox::new(bbox(&child)?)),
                "text" => {
                    let content = child.text().map(str::trim).unwrap_or("").to_string();
                    let mut t = TextUnit::new(bbox(&child)?);
                    if !content.is_empty() {
                        t.content = Some(content);
                    }
                    page.texts.push(t);
                }
                _ => {}
            }
        }
        page.clamp_boxes();
        pages.push(page);
    }
    Ok(pages)
}

/// One entry of a volume manifest: a page image and its optional sidecar
/// annotation (same stem, `.json`).
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub annotation: Option<PathBuf>,
}

/// Reads a volume manifest: one image path per line, relative to the
/// manifest's directory. Blank lines and `#` comments are ignored.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, PageError> {
    let src = std::fs::read_to_string(path).map_err(|e| PageError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(src
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let image = base.join(l);
            let sidecar = image.with_extension("json");
            let annotation = sidecar.exists().then_some(sidecar);
            ManifestEntry { image, annotation }
        })
        .collect())
}

pub fn write_manifest(path: &Path, images: &[String]) -> Result<(), PageError> {
    let mut s = String::new();
    for i in images {
        s.push_str(i);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| PageError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn minimal_file() {
        let src = r#"{"schema":1,"id":"a","image":"a.png","size":[100,80],
            "frames":[{"box":[0,0,50,80]}],"texts":[{"box":[5,5,10,20],"content":"hi"}]}"#;
        let (p, w) = Page::from_json(src, "mem", LoadOptions::default()).unwrap();
        assert_eq!(p.frames.len(), 1);
        assert_eq!(p.texts.len(), 1);
        assert!(w.is_empty());
        assert_eq!(p.texts[0].text(), "hi");
    }

    #[test]
    fn oversized_text_is_clamped_with_warning() {
        let src = r#"{"schema":1,"id":"a","image":"a.png","size":[100,80],
            "frames":[{"box":[0,0,50,80]}],"texts":[{"box":[90,5,30,20]}]}"#;
        let (p, w) = Page::from_json(src, "mem", LoadOptions::default()).unwrap();
        assert_eq!(p.texts[0].bbox, bx(90., 5., 10., 20.));
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn strict_rejects_frameless_page() {
        let src = r#"{"schema":1,"id":"a","image":"a.png","size":[100,80]}"#;
        assert!(Page::from_json(src, "mem", LoadOptions::default()).is_ok());
        assert!(matches!(
            Page::from_json(src, "mem", LoadOptions { strict: true }),
            Err(PageError::NoFrames(_))
        ));
    }

    #[test]
    fn malformed_and_wrong_schema() {
        assert!(matches!(Page::from_json("{", "m", LoadOptions::default()), Err(PageError::Parse { .. })));
        let src = r#"{"schema":2,"id":"a","image":"a.png","size":[1,1]}"#;
        assert!(matches!(Page::from_json(src, "m", LoadOptions::default()), Err(PageError::Schema(2))));
    }

    #[test]
    fn empty_page_document() {
        let p = Page::new("e", "e.png", 10, 10);
        let s = p.to_json();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["frames"], serde_json::json!([]));
        assert_eq!(v["texts"], serde_json::json!([]));
        assert_eq!(s, p.to_json());
    }

    #[test]
    fn save_load_save_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let mut p = Page::new("p", "p.png", 200, 100);
        p.frames.push(FrameBox { bbox: bx(0., 0., 100., 100.), order: Some(0), tags: ["1GIRL".to_string()].into() });
        let mut t = TextUnit::with_content(bx(10., 10., 20., 40.), "こんにちは");
        t.lines = vec![bx(10., 10., 8., 40.)];
        t.scene = Some(0);
        p.texts.push(t);
        save_page_annotations(&p, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let (q, _) = load_page_annotations(&path, LoadOptions::default()).unwrap();
        assert_eq!(p, q);
        save_page_annotations(&q, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn manga109_import() {
        let xml = r#"<book title="demo"><pages>
            <page index="3" width="800" height="1100">
              <frame id="f1" xmin="10" ymin="10" xmax="400" ymax="500"/>
              <text id="t1" xmin="50" ymin="60" xmax="90" ymax="200">やあ</text>
              <text id="t2" xmin="700" ymin="60" xmax="900" ymax="200">はみだし</text>
            </page></pages></book>"#;
        let pages = import_manga109_xml(xml, "demo").unwrap();
        assert_eq!(pages.len(), 1);
        let p = &pages[0];
        assert_eq!(p.id, "demo-003");
        assert_eq!(p.frames[0].bbox, bx(10., 10., 390., 490.));
        assert_eq!(p.texts[0].text(), "やあ");
        assert_eq!(p.texts[1].bbox.right(), 800.0);
    }

    #[test]
    fn vocabulary_limits() {
        assert!(TagVocabulary::builtin().contains("1girl"));
        let many: Vec<String> = (0..=TAG_VOCABULARY_SIZE).map(|i| format!("T{i}")).collect();
        assert!(TagVocabulary::new(many).is_err());
    }

    fn arb_page() -> impl Strategy<Value = Page> {
        let boxes = proptest::collection::vec((0u32..150, 0u32..150, 1u32..50, 1u32..50), 0..6);
        (boxes.clone(), boxes, proptest::option::of("[a-z ]{0,12}")).prop_map(|(fs, ts, content)| {
            let mut p = Page::new("rt", "rt.png", 200, 200);
            for (i, (x, y, w, h)) in fs.into_iter().enumerate() {
                let mut f = FrameBox::new(bx(x as f64, y as f64, w as f64, h as f64));
                f.order = Some(i);
                p.frames.push(f);
            }
            for (x, y, w, h) in ts {
                let mut t = TextUnit::new(bx(x as f64, y as f64, w as f64, h as f64));
                t.content = content.clone();
                p.texts.push(t);
            }
            p
        })
    }

    proptest! {
        #[test]
        fn json_roundtrip(p in arb_page()) {
            let (q, warnings) = Page::from_json(&p.to_json(), "mem", LoadOptions::default()).unwrap();
            prop_assert!(warnings.is_empty());
            prop_assert_eq!(&p, &q);
            prop_assert_eq!(p.to_json(), q.to_json());
        }
    }
}
