use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use manga_layout::align::{pair_pages, AlignParams, Pairing};
use manga_layout::bubble::{
    detect_text_lines_in_mask, estimate_bubble_mask, split_connected_bubble, Orientation,
};
use manga_layout::context::{build_input, translate_text, utterances, ContextModel, DictTranslator, EchoTranslator, Translator};
use manga_layout::corpus::{
    evaluate_extraction, evaluate_reading_order, extract_corpus, read_jsonl, to_jsonl, DetectorEngine, Engines,
    FixtureDetector, FixtureOcr, VolumePage,
};
use manga_layout::geometry::BoundingBox;
use manga_layout::layout::{estimate_reading_order, predict_scene_tags, strip_order, ConstantTagger, FixtureTagger, Tagger};
use manga_layout::page::{load_page_annotations, read_manifest, LoadOptions, Page};
use manga_layout::pipeline::{load_page_input, run_pipeline, PipelineConfig};
use manga_layout::synth::{generate_layout_pages, generate_volume, write_layout_pages, write_volume, LayoutSpec, VolumeSpec};
use manga_layout::typeset::{clean_text, plan_lettering, render_lettering, BoxGlyphRasterizer, DefaultMetrics};
use manga_layout::vision::{BinaryMask, GrayImage};

/// Environment variable that overrides the pipeline cache directory.
const CACHE_ENV: &str = "MANGA_LAYOUT_CACHE";

#[derive(Parser)]
#[command(name = "manga-layout", version, about = "Manga page layout analysis, corpus extraction and translation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Frame order, scene assignment and text order of an annotated page.
    Order(OrderArgs),
    /// Bubble masks, text lines and paragraph splits for a page image.
    Segment(SegmentArgs),
    /// Pair source pages with target pages by retrieval and verification.
    Align(AlignArgs),
    /// Build a parallel corpus (JSON lines) from two volumes.
    Extract(ExtractArgs),
    /// Translation-model inputs for every text of a page.
    Prep(PrepArgs),
    /// Translate every text of a page with a stub engine.
    Translate(TranslateArgs),
    /// Fit and draw a translation inside a text region.
    Typeset(TypesetArgs),
    /// Run the full translation pipeline from a config file.
    Run(RunArgs),
    /// Score reading order or an extracted corpus.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Write synthetic fixtures with ground truth.
    GenFixtures(GenArgs),
}

#[derive(Args)]
struct OrderArgs {
    /// Page annotation (JSON).
    page: PathBuf,
    /// Fail on pages without frames.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Page image.
    image: PathBuf,
    /// Annotation holding the bubble boxes; defaults to the image's sidecar.
    #[arg(long)]
    annotation: Option<PathBuf>,
    /// Write one PNG per paragraph mask into this directory.
    #[arg(long)]
    dump_masks: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    /// Manifest of source page images.
    #[arg(long)]
    src: PathBuf,
    /// Manifest of target page images.
    #[arg(long)]
    dst: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OcrName {
    Fixture,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorName {
    Fixture,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaggerName {
    Fixture,
    None,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    dst: PathBuf,
    /// Page pairs from `align`; computed when omitted.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fixture")]
    ocr: OcrName,
    #[arg(long, value_enum, default_value = "fixture")]
    detector: DetectorName,
    #[arg(long, value_enum, default_value = "fixture")]
    tagger: TaggerName,
    /// Per-edge jitter of the fixture detector, in pixels.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Volume name written into every record; defaults to the source
    /// manifest's file stem.
    #[arg(long)]
    volume: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrepArgs {
    page: PathBuf,
    #[arg(long, default_value = "scene")]
    model: ContextModel,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TranslatorName {
    Echo,
    Dict,
}

#[derive(Args)]
struct TranslateArgs {
    page: PathBuf,
    #[arg(long, default_value = "scene")]
    model: ContextModel,
    #[arg(long, value_enum, default_value = "echo")]
    engine: TranslatorName,
    /// Tab-separated word list for the `dict` engine.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TypesetArgs {
    image: PathBuf,
    #[arg(long)]
    text: String,
    /// Region mask image (pixels at 128 or above are inside).
    #[arg(long, conflicts_with = "region")]
    mask: Option<PathBuf>,
    /// Rectangular region `x,y,w,h`.
    #[arg(long)]
    region: Option<String>,
    /// Source text line `x,y,w,h` to erase first; repeatable.
    #[arg(long = "line")]
    lines: Vec<String>,
    /// Where to write the lettered image.
    #[arg(long)]
    image_out: Option<PathBuf>,
    /// Where to write the lettering plan (JSON); stdout by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides both the config file and the environment.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Report destination; stdout by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvaluateCommand {
    /// Fraction of pages whose text order matches the truth.
    Order(EvalOrderArgs),
    /// Recall and precision of extracted records at NED thresholds.
    Corpus(EvalCorpusArgs),
}

#[derive(Args)]
struct EvalOrderArgs {
    /// Ground-truth pages: a JSON file, a list file, or a directory.
    #[arg(long)]
    truth: PathBuf,
    /// Predicted pages; when omitted, order is estimated from the truth
    /// pages with their order removed.
    #[arg(long)]
    pred: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCorpusArgs {
    #[arg(long)]
    extracted: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Similarity threshold; repeatable.
    #[arg(long = "tau", default_values_t = [0.9, 0.7])]
    taus: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    Volume,
    Layouts,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pages: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "volume")]
    kind: FixtureKind,
    /// Target-only pages placed before the content pages.
    #[arg(long, default_value_t = 2)]
    covers: usize,
    /// Keep target pages geometrically identical to the source.
    #[arg(long)]
    no_perspective: bool,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn load_page(path: &Path, strict: bool) -> Result<Page> {
    let (page, warnings) = load_page_annotations(path, LoadOptions { strict })?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(page)
}

fn parse_box(s: &str) -> Result<BoundingBox> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("box '{s}' must be x,y,w,h"))?;
    let [x, y, w, h] = v[..] else { bail!("box '{s}' must have four numbers") };
    Ok(BoundingBox::new(x, y, w, h)?)
}

/// Pages from a JSON file, a list of JSON files (one per line, relative to
/// the list), or a directory (its `pages.txt`, else every `*.json`).
fn load_pages(path: &Path) -> Result<Vec<Page>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let list = path.join("pages.txt");
        if list.exists() {
            return load_pages(&list);
        }
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        v.sort();
        v
    } else if path.extension().is_some_and(|e| e == "txt") {
        let base = path.parent().unwrap_or(Path::new("."));
        std::fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| base.join(l))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    files.iter().map(|f| load_page(f, false)).collect()
}

fn load_volume(manifest: &Path) -> Result<Vec<VolumePage>> {
    read_manifest(manifest)?
        .iter()
        .map(|e| {
            let p = load_page_input(&e.image, e.annotation.as_deref()).map_err(|m| anyhow!(m))?;
            Ok(VolumePage { annotation: p.page, image: p.image })
        })
        .collect()
}

fn order_page(page: &Page) -> Result<(Page, bool)> {
    let (ordered, fo) = estimate_reading_order(page)?;
    Ok((ordered, fo.irregular))
}

fn cmd_order(a: OrderArgs) -> Result<()> {
    let page = load_page(&a.page, a.strict)?;
    let (ordered, irregular) = order_page(&page)?;
    if irregular {
        eprintln!("warning: {}: irregular frame layout", page.id);
    }
    emit(a.out.as_deref(), &ordered.to_json())
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let image = GrayImage::load(&a.image)?;
    let ann = a.annotation.clone().unwrap_or_else(|| a.image.with_extension("json"));
    let page = load_page(&ann, false)?;
    let boxes = FixtureDetector::default().detect(&page, &image)?;
    if let Some(d) = &a.dump_masks {
        std::fs::create_dir_all(d)?;
    }
    let mut bubbles = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        let mask = match estimate_bubble_mask(&image, b) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("warning: bubble {bi}: {e}");
                bubbles.push(json!({ "box": b, "error": e.to_string() }));
                continue;
            }
        };
        let lines = detect_text_lines_in_mask(&image, &mask, Orientation::Vertical);
        let split = match split_connected_bubble(&mask, &lines) {
            Ok(s) => s,
            Err(e) => {
                bubbles.push(json!({ "box": b, "lines": lines, "error": e.to_string() }));
                continue;
            }
        };
        if let Some(d) = &a.dump_masks {
            for (k, m) in split.paragraphs.iter().enumerate() {
                let p = d.join(format!("{}-b{bi}-p{k}.png", page.id));
                m.to_image().save(&p)?;
            }
        }
        let paragraphs: Vec<_> = split
            .line_groups
            .iter()
            .map(|g| {
                let pl: Vec<BoundingBox> = g.iter().map(|&i| lines[i]).collect();
                json!({ "lines": g, "region": pl.iter().copied().reduce(|x, y| x.union(&y)) })
            })
            .collect();
        bubbles.push(json!({
            "box": b,
            "mask_box": mask.bounding_box(),
            "lines": lines,
            "paragraphs": paragraphs,
            "cuts": split.cuts,
            "no_separating_cut": split.no_separating_cut,
        }));
    }
    emit(a.out.as_deref(), &pretty(&json!({ "page": page.id, "bubbles": bubbles }))?)
}

fn images(vol: &[VolumePage]) -> Vec<GrayImage> {
    vol.iter().map(|p| p.image.clone()).collect()
}

fn cmd_align(a: AlignArgs) -> Result<()> {
    let src = load_volume(&a.src)?;
    let dst = load_volume(&a.dst)?;
    let pairing = pair_pages(&images(&src), &images(&dst), &AlignParams { seed: a.seed, ..AlignParams::default() });
    for w in &pairing.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("{} of {} source pages paired", pairing.pairs.len(), src.len());
    emit(a.out.as_deref(), &pretty(&pairing)?)
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let src = load_volume(&a.src)?;
    let dst = load_volume(&a.dst)?;
    let pairing: Pairing = match &a.pairs {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => pair_pages(&images(&src), &images(&dst), &AlignParams { seed: a.seed, ..AlignParams::default() }),
    };
    let detector = match a.detector {
        DetectorName::Fixture => FixtureDetector { jitter: a.jitter, seed: a.seed },
    };
    let ocr = match a.ocr {
        OcrName::Fixture => FixtureOcr,
    };
    let tagger: Box<dyn Tagger> = match a.tagger {
        TaggerName::Fixture => Box::new(FixtureTagger),
        TaggerName::None => Box::new(ConstantTagger(BTreeSet::new())),
    };
    let volume = a
        .volume
        .clone()
        .unwrap_or_else(|| a.src.file_stem().and_then(|s| s.to_str()).unwrap_or("volume").to_string());
    let engines = Engines { detector: &detector, ocr: &ocr, tagger: tagger.as_ref() };
    let ex = extract_corpus(&volume, &src, &dst, &pairing, &engines);
    for w in &ex.warnings {
        eprintln!("warning: {w}");
    }
    for p in &ex.pages {
        for w in &p.warnings {
            eprintln!("warning: {}: {w}", p.page);
        }
        if let Some(e) = &p.error {
            eprintln!("error: {}: {e}", p.page);
        }
    }
    eprintln!("{} records from {} page pairs", ex.records.len(), ex.pages.len());
    emit(a.out.as_deref(), &to_jsonl(&ex.records))
}

/// The page with reading order estimated when it has none yet.
fn ensure_order(page: Page) -> Result<Page> {
    if !page.texts.is_empty() && page.texts.iter().all(|t| t.order.is_some() && t.scene.is_some()) {
        return Ok(page);
    }
    Ok(order_page(&page)?.0)
}

fn scene_tags(page: &Page, scene: usize, model: ContextModel) -> BTreeSet<String> {
    if model != ContextModel::SceneVisual || page.frames.is_empty() {
        return BTreeSet::new();
    }
    match predict_scene_tags(&FixtureTagger, page, None, scene) {
        Ok(s) => s.tags,
        Err(e) => {
            eprintln!("warning: scene {scene}: {e}");
            BTreeSet::new()
        }
    }
}

fn cmd_prep(a: PrepArgs) -> Result<()> {
    let page = ensure_order(load_page(&a.page, false)?)?;
    let utts = utterances(&page);
    let mut out = String::new();
    for n in 0..utts.len() {
        let tags = scene_tags(&page, utts[n].scene, a.model);
        let input = build_input(a.model, &utts, n, &tags)?;
        out += &serde_json::to_string(&json!({ "index": n, "scene": utts[n].scene, "input": input.input, "slot": input.slot }))?;
        out.push('\n');
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_translate(a: TranslateArgs) -> Result<()> {
    let translator: Box<dyn Translator> = match a.engine {
        TranslatorName::Echo => Box::new(EchoTranslator),
        TranslatorName::Dict => {
            let path = a.dictionary.as_ref().ok_or_else(|| anyhow!("--dictionary is required for the dict engine"))?;
            Box::new(DictTranslator::load(path)?)
        }
    };
    let page = ensure_order(load_page(&a.page, false)?)?;
    let utts = utterances(&page);
    let mut out = String::new();
    for n in 0..utts.len() {
        let tags = scene_tags(&page, utts[n].scene, a.model);
        let seg = translate_text(translator.as_ref(), a.model, &utts, n, &tags)?;
        if seg.degraded {
            eprintln!("warning: text {n}: translator output had too few segments");
        }
        let line = json!({ "index": n, "source": utts[n].text, "translation": seg.text, "degraded": seg.degraded });
        out += &serde_json::to_string(&line)?;
        out.push('\n');
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_typeset(a: TypesetArgs) -> Result<()> {
    let image = GrayImage::load(&a.image)?;
    let (w, h) = (image.width(), image.height());
    let mask = match (&a.mask, &a.region) {
        (Some(m), None) => {
            let img = GrayImage::load(m)?;
            if (img.width(), img.height()) != (w, h) {
                bail!("mask size {}x{} differs from image size {w}x{h}", img.width(), img.height());
            }
            BinaryMask::from_fn(w, h, |x, y| img.get(x, y) >= 128)
        }
        (None, Some(r)) => BinaryMask::from_box(w, h, &parse_box(r)?),
        _ => bail!("give exactly one of --mask or --region"),
    };
    let lines: Vec<BoundingBox> = a.lines.iter().map(|s| parse_box(s)).collect::<Result<_>>()?;
    let metrics = DefaultMetrics;
    let plan = plan_lettering(&a.text, &mask, &metrics)?;
    if plan.overflow {
        eprintln!("warning: text overflows the region at the minimum font size");
    }
    if let Some(p) = &a.image_out {
        let cleaned = clean_text(&image, &lines, &mask);
        render_lettering(&cleaned, &plan, &mask, &BoxGlyphRasterizer::default(), &metrics)?.save(p)?;
    }
    emit(a.out.as_deref(), &pretty(&plan)?)
}

fn cmd_run(a: RunArgs) -> Result<bool> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Ok(dir) = std::env::var(CACHE_ENV) {
        if !dir.is_empty() {
            cfg.cache_dir = Some(PathBuf::from(dir));
        }
    }
    if let Some(d) = a.cache_dir {
        cfg.cache_dir = Some(d);
    }
    if let Some(n) = a.workers {
        cfg.workers = Some(n);
    }
    let report = run_pipeline(&cfg)?;
    for p in &report.pages {
        for w in &p.warnings {
            eprintln!("warning: {}: {w}", p.page);
        }
        if let Some(e) = &p.error {
            eprintln!("error: {}: {e}", p.page);
        }
    }
    eprintln!("{} pages, {} failed", report.pages.len(), report.failed);
    emit(a.out.as_deref(), &report.to_json())?;
    Ok(!report.any_failed())
}

fn cmd_evaluate(c: EvaluateCommand) -> Result<()> {
    match c {
        EvaluateCommand::Order(a) => {
            let truth = load_pages(&a.truth)?;
            let pred = match &a.pred {
                Some(p) => load_pages(p)?,
                None => truth
                    .iter()
                    .map(|t| {
                        let bare = strip_order(t);
                        order_page(&bare).map(|(p, _)| p).unwrap_or_else(|e| {
                            eprintln!("warning: {}: {e}", t.id);
                            bare
                        })
                    })
                    .collect(),
            };
            let acc = evaluate_reading_order(&pred, &truth)?;
            emit(None, &format!("accuracy={acc:?} pages={}\n", truth.len()))
        }
        EvaluateCommand::Corpus(a) => {
            let read = |p: &Path| -> Result<_> {
                let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
                Ok(read_jsonl(std::io::BufReader::new(f))?)
            };
            let extracted = read(&a.extracted)?;
            let truth = read(&a.truth)?;
            let mut out = String::new();
            for tau in a.taus {
                if !(tau > 0.0 && tau <= 1.0) {
                    bail!("tau must lie in (0, 1], got {tau}");
                }
                let s = evaluate_extraction(&extracted, &truth, tau);
                out += &format!("tau={tau:?} recall={:?} precision={:?}\n", s.recall, s.precision);
            }
            emit(None, &out)
        }
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    match a.kind {
        FixtureKind::Volume => {
            let spec = VolumeSpec { pages: a.pages, seed: a.seed, covers: a.covers, perspective: !a.no_perspective, ..VolumeSpec::default() };
            let vol = generate_volume(&spec);
            write_volume(&vol, &a.out)?;
            eprintln!("{} source pages, {} target pages, {} records", vol.pages.len(), vol.dst_pages().len(), vol.truth.len());
        }
        FixtureKind::Layouts => {
            let pages = generate_layout_pages(a.pages, a.seed, &LayoutSpec::default());
            write_layout_pages(&pages, &a.out)?;
            eprintln!("{} layout pages", pages.len());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Order(a) => cmd_order(a)?,
        Command::Segment(a) => cmd_segment(a)?,
        Command::Align(a) => cmd_align(a)?,
        Command::Extract(a) => cmd_extract(a)?,
        Command::Prep(a) => cmd_prep(a)?,
        Command::Translate(a) => cmd_translate(a)?,
        Command::Typeset(a) => cmd_typeset(a)?,
        Command::Run(a) => return cmd_run(a),
        Command::Evaluate(c) => cmd_evaluate(c)?,
        Command::GenFixtures(a) => cmd_gen(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
