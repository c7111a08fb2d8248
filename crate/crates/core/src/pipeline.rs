//! End-to-end translation of a volume: detection and recognition, reading
//! order, scene tags, context-aware translation, cleaning and lettering,
//! with a content-addressed cache of every stage's output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{translate_text, utterances, ContextModel, DictTranslator, EchoTranslator, Translator};
use crate::corpus::{segment_paragraphs, DetectorEngine, FixtureDetector, FixtureOcr, OcrEngine, OcrRequest, Side};
use crate::geometry::BoundingBox;
use crate::hashing::sha256_hex;
use crate::layout::{estimate_reading_order, predict_scene_tags, ConstantTagger, FixtureTagger, Tagger};
use crate::page::{load_page_annotations, read_manifest, write_manifest, FrameBox, LoadOptions, Page, TextUnit};
use crate::typeset::{plan_lettering, BoxGlyphRasterizer, Cleaner, DefaultMetrics, FlatFillCleaner, Rasterizer};
use crate::vision::{BinaryMask, GrayImage};

/// Identifier of the run report format.
pub const REPORT_SCHEMA: &str = "manga-layout/run-report";
pub const REPORT_VERSION: u32 = 1;

/// Stage names in execution order.
pub const STAGES: [&str; 5] = ["segment", "order", "tags", "translate", "typeset"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineNames {
    pub detector: String,
    pub ocr: String,
    pub tagger: String,
    pub translator: String,
    pub cleaner: String,
    pub rasterizer: String,
}

impl Default for EngineNames {
    fn default() -> Self {
        Self {
            detector: "fixture".into(),
            ocr: "fixture".into(),
            tagger: "fixture".into(),
            translator: "echo".into(),
            cleaner: "flat".into(),
            rasterizer: "box".into(),
        }
    }
}

fn default_source_language() -> String {
    "ja".into()
}

fn default_target_language() -> String {
    "en".into()
}

fn default_timings() -> bool {
    true
}

/// Run configuration, read from one JSON document. Relative paths are
/// resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Manifest listing the source page images.
    pub input: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub engines: EngineNames,
    pub model: ContextModel,
    #[serde(default = "default_source_language")]
    pub source_language: String,
    #[serde(default = "default_target_language")]
    pub target_language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical CPUs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Per-edge jitter of the fixture detector, in pixels.
    #[serde(default)]
    pub detector_jitter: f64,
    /// Word list for the `dict` translator (two tab-separated columns).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    /// Record per-stage wall-clock times in the report.
    #[serde(default = "default_timings")]
    pub timings: bool,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>, model: ContextModel) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
            engines: EngineNames::default(),
            model,
            source_language: default_source_language(),
            target_language: default_target_language(),
            cache_dir: None,
            workers: None,
            seed: 0,
            detector_jitter: 0.0,
            dictionary: None,
            timings: true,
        }
    }

    pub fn from_json(src: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = serde_json::from_str(src).map_err(|e| PipelineError::Config(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.input);
        rebase(&mut cfg.output);
        if let Some(c) = cfg.cache_dir.as_mut() {
            rebase(c);
        }
        if let Some(d) = cfg.dictionary.as_mut() {
            rebase(d);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let src = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_json(&src, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Engines resolved from their configured names.
pub struct EngineSet {
    pub detector: Box<dyn DetectorEngine>,
    pub ocr: Box<dyn OcrEngine>,
    pub tagger: Box<dyn Tagger>,
    pub translator: Box<dyn Translator>,
    pub cleaner: Box<dyn Cleaner>,
    pub rasterizer: Box<dyn Rasterizer>,
    /// Hash of the dictionary contents, when one is used.
    dictionary_hash: Option<String>,
}

fn unknown(kind: &str, name: &str, known: &[&str]) -> PipelineError {
    PipelineError::Config(format!("unknown {kind} engine '{name}' (known: {})", known.join(", ")))
}

impl EngineSet {
    /// Resolves every engine name; nothing is processed if any is unknown.
    pub fn resolve(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let e = &cfg.engines;
        let detector: Box<dyn DetectorEngine> = match e.detector.as_str() {
            "fixture" => Box::new(FixtureDetector { jitter: cfg.detector_jitter, seed: cfg.seed }),
            other => return Err(unknown("detector", other, &["fixture"])),
        };
        let ocr: Box<dyn OcrEngine> = match e.ocr.as_str() {
            "fixture" => Box::new(FixtureOcr),
            other => return Err(unknown("ocr", other, &["fixture"])),
        };
        let tagger: Box<dyn Tagger> = match e.tagger.as_str() {
            "fixture" => Box::new(FixtureTagger),
            "none" => Box::new(ConstantTagger(Default::default())),
            other => return Err(unknown("tagger", other, &["fixture", "none"])),
        };
        let mut dictionary_hash = None;
        let translator: Box<dyn Translator> = match e.translator.as_str() {
            "echo" => Box::new(EchoTranslator),
            "dict" => {
                let path = cfg
                    .dictionary
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("the dict translator needs a dictionary path".into()))?;
                let src = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
                dictionary_hash = Some(sha256_hex(&[src.as_bytes()]));
                Box::new(DictTranslator::from_tsv(&src).map_err(|e| PipelineError::Config(e.to_string()))?)
            }
            other => return Err(unknown("translator", other, &["echo", "dict"])),
        };
        let cleaner: Box<dyn Cleaner> = match e.cleaner.as_str() {
            "flat" => Box::new(FlatFillCleaner),
            other => return Err(unknown("cleaner", other, &["flat"])),
        };
        let rasterizer: Box<dyn Rasterizer> = match e.rasterizer.as_str() {
            "box" => Box::new(BoxGlyphRasterizer::default()),
            other => return Err(unknown("rasterizer", other, &["box"])),
        };
        Ok(Self { detector, ocr, tagger, translator, cleaner, rasterizer, dictionary_hash })
    }
}

/// Settings that influence each stage's output; a change re-runs that stage
/// and everything after it.
fn stage_settings(cfg: &PipelineConfig, engines: &EngineSet) -> [String; 5] {
    let e = &cfg.engines;
    [
        format!("detector={} jitter={} seed={} ocr={}", e.detector, cfg.detector_jitter, cfg.seed, e.ocr),
        "xy-cut".to_string(),
        format!("tagger={}", e.tagger),
        format!(
            "translator={} dictionary={} model={} languages={}-{}",
            e.translator,
            engines.dictionary_hash.as_deref().unwrap_or("-"),
            cfg.model,
            cfg.source_language,
            cfg.target_language
        ),
        format!("cleaner={} rasterizer={}", e.cleaner, e.rasterizer),
    ]
}

/// Set pixels of a mask as alternating run lengths, starting with a clear
/// run, in raster order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct MaskRuns {
    width: usize,
    height: usize,
    runs: Vec<usize>,
}

impl MaskRuns {
    fn encode(m: &BinaryMask) -> Self {
        let mut runs = Vec::new();
        let (mut current, mut len) = (false, 0);
        for &b in m.bits() {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        Self { width: m.width(), height: m.height(), runs }
    }

    fn decode(&self) -> BinaryMask {
        let mut bits = Vec::with_capacity(self.width * self.height);
        for (i, &n) in self.runs.iter().enumerate() {
            bits.extend(std::iter::repeat(i % 2 == 1).take(n));
        }
        bits.resize(self.width * self.height, false);
        BinaryMask::from_bits(self.width, self.height, bits).expect("size matches")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SegmentOutput {
    page: Page,
    masks: Vec<MaskRuns>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OrderOutput {
    page: Page,
    irregular: bool,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TagsOutput {
    tags: BTreeMap<usize, Vec<String>>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TranslateOutput {
    /// Translation of each text, indexed like the page's texts.
    translations: Vec<Option<String>>,
    degraded: usize,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TypesetOutput {
    png: Vec<u8>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRun {
    pub stage: String,
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub millis: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRun {
    pub page: String,
    pub status: PageStatus,
    pub texts: usize,
    /// Texts whose translator output lacked the expected segment.
    pub degraded: usize,
    pub irregular: bool,
    pub stages: Vec<StageRun>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The run report. `millis` fields are the only nondeterministic content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub version: u32,
    pub model: ContextModel,
    pub engines: EngineNames,
    pub pages: Vec<PageRun>,
    pub failed: usize,
    pub irregular_pages: Vec<String>,
}

impl RunReport {
    pub fn any_failed(&self) -> bool {
        self.failed > 0
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// The report with all timing fields removed.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        r.pages.iter_mut().flat_map(|p| p.stages.iter_mut()).for_each(|s| s.millis = None);
        r
    }
}

struct Cache<'a> {
    dir: Option<&'a Path>,
}

impl Cache<'_> {
    fn path(&self, stage: &str, key: &str) -> Option<PathBuf> {
        self.dir.map(|d| d.join(stage).join(format!("{key}.json")))
    }

    fn get<T: DeserializeOwned>(&self, stage: &str, key: &str) -> Option<T> {
        let bytes = std::fs::read(self.path(stage, key)?).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Stores an artifact; a failed write only loses the cache entry.
    fn put<T: Serialize>(&self, stage: &str, key: &str, value: &T, warnings: &mut Vec<String>) {
        let Some(path) = self.path(stage, key) else { return };
        let bytes = serde_json::to_vec(value).expect("artifact serializes");
        let tmp = path.with_extension("tmp");
        let res = path
            .parent()
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|_| std::fs::write(&tmp, &bytes))
            .and_then(|_| std::fs::rename(&tmp, &path));
        if let Err(e) = res {
            warnings.push(format!("cache write failed for {stage}: {e}"));
        }
    }
}

/// Runs one stage through the cache. Returns the artifact and its key,
/// which feeds the next stage's key.
fn run_stage<T, F>(
    cache: &Cache<'_>,
    stage: &str,
    settings: &str,
    input_key: &str,
    timings: bool,
    runs: &mut Vec<StageRun>,
    cache_warnings: &mut Vec<String>,
    compute: F,
) -> Result<(T, String), String>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> Result<T, String>,
{
    let key = sha256_hex(&[stage.as_bytes(), settings.as_bytes(), input_key.as_bytes()]);
    let start = Instant::now();
    let (value, cached) = match cache.get::<T>(stage, &key) {
        Some(v) => (v, true),
        None => {
            let v = compute()?;
            cache.put(stage, &key, &v, cache_warnings);
            (v, false)
        }
    };
    let millis = timings.then(|| start.elapsed().as_millis() as u64);
    runs.push(StageRun { stage: stage.to_string(), cached, millis });
    Ok((value, key))
}

/// One page to process: an image and its annotation.
pub struct PageInput {
    pub page: Page,
    pub image: GrayImage,
    /// Hash of the image bytes and annotation.
    pub fingerprint: String,
}

pub struct PageResult {
    pub run: PageRun,
    /// Translated page annotation and lettered image, unless the page failed.
    pub output: Option<(Page, GrayImage)>,
}

fn segment_stage(input: &PageInput, engines: &EngineSet) -> Result<SegmentOutput, String> {
    let mut warnings = Vec::new();
    let boxes = engines.detector.detect(&input.page, &input.image).map_err(|e| e.to_string())?;
    let paragraphs = segment_paragraphs(&input.image, &boxes, &mut warnings);
    let mut page = Page { bubbles: boxes, texts: Vec::new(), ..input.page.clone() };
    let mut masks = Vec::new();
    for (k, para) in paragraphs.iter().enumerate() {
        let req = OcrRequest {
            side: Side::Source,
            image: &input.image,
            region: para.region,
            mask: Some(&para.mask),
            to_native: None,
            annotation: Some(&input.page),
        };
        match engines.ocr.recognize(&req) {
            Ok(s) if !s.trim().is_empty() => {
                let mut t = TextUnit::with_content(para.region, s);
                t.lines = para.lines.clone();
                page.texts.push(t);
                masks.push(MaskRuns::encode(&para.mask));
            }
            Ok(_) => warnings.push(format!("region {k}: empty text")),
            Err(e) => warnings.push(format!("region {k}: {e}")),
        }
    }
    Ok(SegmentOutput { page, masks, warnings })
}

fn order_stage(seg: &SegmentOutput) -> Result<OrderOutput, String> {
    let mut warnings = Vec::new();
    let mut page = seg.page.clone();
    let whole_page = page.frames.is_empty();
    if whole_page {
        warnings.push("no frames; treating the page as one scene".into());
        let full = BoundingBox::new(0.0, 0.0, page.width(), page.height()).map_err(|e| e.to_string())?;
        page.frames.push(FrameBox::new(full));
    }
    let (mut ordered, fo) = estimate_reading_order(&page).map_err(|e| e.to_string())?;
    if fo.irregular {
        warnings.push("irregular frame layout; frames ordered top to bottom, right to left".into());
    }
    if whole_page {
        ordered.frames.clear();
    }
    Ok(OrderOutput { page: ordered, irregular: fo.irregular, warnings })
}

fn scene_page(ord: &OrderOutput) -> Page {
    let mut p = ord.page.clone();
    if p.frames.is_empty() {
        p.frames.push(FrameBox::new(BoundingBox::new(0.0, 0.0, p.width(), p.height()).expect("positive page size")));
    }
    p
}

fn tags_stage(ord: &OrderOutput, image: &GrayImage, engines: &EngineSet, model: ContextModel) -> TagsOutput {
    let mut tags = BTreeMap::new();
    let mut warnings = Vec::new();
    if model != ContextModel::SceneVisual {
        return TagsOutput { tags, warnings };
    }
    let page = scene_page(ord);
    let scenes: std::collections::BTreeSet<usize> = page.texts.iter().filter_map(|t| t.scene).collect();
    for s in scenes {
        match predict_scene_tags(engines.tagger.as_ref(), &page, Some(image), s) {
            Ok(set) => {
                tags.insert(s, set.tags.into_iter().collect());
            }
            Err(e) => warnings.push(format!("scene {s}: {e}")),
        }
    }
    TagsOutput { tags, warnings }
}

fn translate_stage(ord: &OrderOutput, tags: &TagsOutput, engines: &EngineSet, model: ContextModel) -> TranslateOutput {
    let page = &ord.page;
    let utts = utterances(page);
    let mut by_order: Vec<usize> = (0..page.texts.len()).collect();
    by_order.sort_by_key(|&i| (page.texts[i].order.unwrap_or(usize::MAX), i));
    let mut translations = vec![None; page.texts.len()];
    let mut warnings = Vec::new();
    let mut degraded = 0;
    for (n, &ti) in by_order.iter().enumerate() {
        let scene_tags = tags.tags.get(&utts[n].scene).map(|v| v.iter().cloned().collect()).unwrap_or_default();
        match translate_text(engines.translator.as_ref(), model, &utts, n, &scene_tags) {
            Ok(seg) => {
                if seg.degraded {
                    degraded += 1;
                    warnings.push(format!("text {n}: translator output had too few segments"));
                }
                translations[ti] = Some(seg.text);
            }
            Err(e) => warnings.push(format!("text {n}: {e}")),
        }
    }
    TranslateOutput { translations, degraded, warnings }
}

fn typeset_stage(
    input: &PageInput,
    seg: &SegmentOutput,
    ord: &OrderOutput,
    tr: &TranslateOutput,
    engines: &EngineSet,
) -> Result<TypesetOutput, String> {
    let mut warnings = Vec::new();
    let mut img = input.image.clone();
    let metrics = DefaultMetrics;
    for (i, t) in ord.page.texts.iter().enumerate() {
        let Some(text) = tr.translations[i].as_deref() else { continue };
        let mask = seg.masks[i].decode();
        img = engines.cleaner.clean(&img, &t.lines, &mask);
        if text.trim().is_empty() {
            continue;
        }
        match plan_lettering(text, &mask, &metrics) {
            Ok(plan) => {
                if plan.overflow {
                    warnings.push(format!("text {i}: translation overflows its region at the minimum font size"));
                }
                if let Err(e) = engines.rasterizer.draw(&mut img, &plan, &mask, &metrics) {
                    warnings.push(format!("text {i}: {e}"));
                }
            }
            Err(e) => warnings.push(format!("text {i}: {e}")),
        }
    }
    let png = img.to_png_bytes().map_err(|e| e.to_string())?;
    Ok(TypesetOutput { png, warnings })
}

/// Processes one page through every stage.
pub fn process_page(input: &PageInput, cfg: &PipelineConfig, engines: &EngineSet) -> PageResult {
    let settings = stage_settings(cfg, engines);
    let cache = Cache { dir: cfg.cache_dir.as_deref() };
    let mut stages = Vec::new();
    let mut cache_warnings = Vec::new();
    let t = cfg.timings;
    let id = input.page.id.clone();
    let fail = |stages: Vec<StageRun>, warnings: Vec<String>, e: String| PageResult {
        run: PageRun {
            page: id.clone(),
            status: PageStatus::Failed,
            texts: 0,
            degraded: 0,
            irregular: false,
            stages,
            warnings,
            error: Some(e),
        },
        output: None,
    };

    let seg = run_stage(&cache, STAGES[0], &settings[0], &input.fingerprint, t, &mut stages, &mut cache_warnings, || {
        segment_stage(input, engines)
    });
    let (seg, k0): (SegmentOutput, String) = match seg {
        Ok(v) => v,
        Err(e) => return fail(stages, cache_warnings, format!("segment: {e}")),
    };
    let ord = run_stage(&cache, STAGES[1], &settings[1], &k0, t, &mut stages, &mut cache_warnings, || order_stage(&seg));
    let (ord, k1): (OrderOutput, String) = match ord {
        Ok(v) => v,
        Err(e) => return fail(stages, [seg.warnings.clone(), cache_warnings].concat(), format!("order: {e}")),
    };
    let (tags, k2): (TagsOutput, String) = run_stage(&cache, STAGES[2], &settings[2], &k1, t, &mut stages, &mut cache_warnings, || {
        Ok(tags_stage(&ord, &input.image, engines, cfg.model))
    })
    .expect("tagging does not fail");
    let (tr, k3): (TranslateOutput, String) = run_stage(&cache, STAGES[3], &settings[3], &k2, t, &mut stages, &mut cache_warnings, || {
        Ok(translate_stage(&ord, &tags, engines, cfg.model))
    })
    .expect("translation failures are per text");
    let typeset = run_stage(&cache, STAGES[4], &settings[4], &k3, t, &mut stages, &mut cache_warnings, || {
        typeset_stage(input, &seg, &ord, &tr, engines)
    });
    let mut warnings: Vec<String> =
        [&seg.warnings, &ord.warnings, &tags.warnings, &tr.warnings].into_iter().flatten().cloned().collect();
    let (ts, _): (TypesetOutput, String) = match typeset {
        Ok(v) => v,
        Err(e) => return fail(stages, [warnings, cache_warnings].concat(), format!("typeset: {e}")),
    };
    warnings.extend(ts.warnings.iter().cloned());
    warnings.extend(cache_warnings);
    let image = match GrayImage::from_encoded(&ts.png) {
        Ok(i) => i,
        Err(e) => return fail(stages, warnings, format!("typeset: {e}")),
    };
    let mut translated = ord.page.clone();
    for (t, tr) in translated.texts.iter_mut().zip(&tr.translations) {
        t.content = tr.clone();
    }
    PageResult {
        run: PageRun {
            page: id.clone(),
            status: PageStatus::Ok,
            texts: translated.texts.len(),
            degraded: tr.degraded,
            irregular: ord.irregular,
            stages,
            warnings,
            error: None,
        },
        output: Some((translated, image)),
    }
}

/// Loads one manifest entry; pages without a sidecar annotation get an empty
/// one named after the image file.
pub fn load_page_input(image: &Path, annotation: Option<&Path>) -> Result<PageInput, String> {
    let bytes = std::fs::read(image).map_err(|e| format!("{}: {e}", image.display()))?;
    let img = GrayImage::from_encoded(&bytes).map_err(|e| format!("{}: {e}", image.display()))?;
    let page = match annotation {
        Some(a) => load_page_annotations(a, LoadOptions::default()).map_err(|e| e.to_string())?.0,
        None => {
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("page");
            let name = image.file_name().and_then(|s| s.to_str()).unwrap_or("page.png");
            Page::new(stem, name, img.width() as u32, img.height() as u32)
        }
    };
    let fingerprint = sha256_hex(&[&bytes, page.to_json().as_bytes()]);
    Ok(PageInput { page, image: img, fingerprint })
}

fn worker_count(cfg: &PipelineConfig, pages: usize) -> usize {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    cfg.workers.unwrap_or(default).clamp(1, pages.max(1))
}

/// Processes pages on a bounded worker pool; results keep input order.
pub fn process_pages(inputs: &[Result<PageInput, (String, String)>], cfg: &PipelineConfig, engines: &EngineSet) -> Vec<PageResult> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<PageResult>>> = inputs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..worker_count(cfg, inputs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(input) = inputs.get(i) else { break };
                let result = match input {
                    Ok(p) => process_page(p, cfg, engines),
                    Err((id, e)) => PageResult {
                        run: PageRun {
                            page: id.clone(),
                            status: PageStatus::Failed,
                            texts: 0,
                            degraded: 0,
                            irregular: false,
                            stages: Vec::new(),
                            warnings: Vec::new(),
                            error: Some(format!("load: {e}")),
                        },
                        output: None,
                    },
                };
                *slots[i].lock().expect("no worker panicked") = Some(result);
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().expect("no worker panicked").expect("every page processed")).collect()
}

/// Runs the whole pipeline and writes `<output>/<page id>.png`,
/// `<output>/<page id>.json` (texts carry their translations),
/// `<output>/pages.txt` and `<output>/report.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let engines = EngineSet::resolve(cfg)?;
    let entries = read_manifest(&cfg.input).map_err(|e| PipelineError::Config(e.to_string()))?;
    let inputs: Vec<Result<PageInput, (String, String)>> = entries
        .iter()
        .map(|e| {
            load_page_input(&e.image, e.annotation.as_deref()).map_err(|err| {
                (e.image.file_stem().and_then(|s| s.to_str()).unwrap_or("?").to_string(), err)
            })
        })
        .collect();
    let results = process_pages(&inputs, cfg, &engines);

    let out = &cfg.output;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let mut written = Vec::new();
    for r in &results {
        if let Some((page, image)) = &r.output {
            let png = out.join(format!("{}.png", page.id));
            image.save(&png).map_err(|e| io_error(&png, e))?;
            let mut p = page.clone();
            p.image = format!("{}.png", page.id);
            let json = out.join(format!("{}.json", page.id));
            std::fs::write(&json, p.to_json()).map_err(|e| io_error(&json, e))?;
            written.push(p.image);
        }
    }
    write_manifest(&out.join("pages.txt"), &written).map_err(|e| io_error(out, e))?;
    let report = RunReport {
        schema: REPORT_SCHEMA.into(),
        version: REPORT_VERSION,
        model: cfg.model,
        engines: cfg.engines.clone(),
        failed: results.iter().filter(|r| r.run.status == PageStatus::Failed).count(),
        irregular_pages: results.iter().filter(|r| r.run.irregular).map(|r| r.run.page.clone()).collect(),
        pages: results.into_iter().map(|r| r.run).collect(),
    };
    let path = out.join("report.json");
    std::fs::write(&path, report.to_json()).map_err(|e| io_error(&path, e))?;
    Ok(report)
}
