//! Translation inputs with context, pluggable translators and
//! re-segmentation of translator output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::page::Page;

/// Separator token placed between texts, always with one space either side.
pub const SEP: &str = "<SEP>";
const JOINER: &str = " <SEP> ";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContextError {
    #[error("translator returned empty output")]
    EmptyOutput,
    #[error("translation engine {engine} failed: {message}")]
    EngineFailure { engine: String, message: String },
    #[error("dictionary line {line}: {message}")]
    Dictionary { line: usize, message: String },
    #[error("unknown context model {0:?}")]
    UnknownModel(String),
    #[error("text index {n} out of range for {len} texts")]
    OutOfRange { n: usize, len: usize },
}

/// One text in reading order together with its scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub scene: usize,
}

impl Utterance {
    pub fn new(text: impl Into<String>, scene: usize) -> Self {
        Self { text: text.into(), scene }
    }
}

/// Texts of a page in reading order. Texts without an assigned scene are
/// treated as forming a scene of their own.
pub fn utterances(page: &Page) -> Vec<Utterance> {
    let unassigned = page.frames.len();
    page.texts_in_order()
        .into_iter()
        .enumerate()
        .map(|(i, t)| Utterance::new(t.text(), t.scene.unwrap_or(unassigned + i)))
        .collect()
}

/// Which context the translator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextModel {
    /// The text alone.
    Sentence,
    /// The previous text and the text.
    #[serde(rename = "2p2")]
    TwoPlusTwo,
    /// Every text of the same scene.
    Scene,
    /// Scene texts preceded by the scene's visual tags.
    SceneVisual,
}

impl ContextModel {
    pub const ALL: [ContextModel; 4] =
        [ContextModel::Sentence, ContextModel::TwoPlusTwo, ContextModel::Scene, ContextModel::SceneVisual];

    pub fn as_str(self) -> &'static str {
        match self {
            ContextModel::Sentence => "sentence",
            ContextModel::TwoPlusTwo => "2p2",
            ContextModel::Scene => "scene",
            ContextModel::SceneVisual => "scene-visual",
        }
    }
}

impl fmt::Display for ContextModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextModel {
    type Err = ContextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentence" => Ok(ContextModel::Sentence),
            "2p2" | "2+2" => Ok(ContextModel::TwoPlusTwo),
            "scene" => Ok(ContextModel::Scene),
            "scene-visual" | "scene+visual" => Ok(ContextModel::SceneVisual),
            other => Err(ContextError::UnknownModel(other.to_string())),
        }
    }
}

/// A translator input and the segment that holds the target text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInput {
    pub input: String,
    pub slot: usize,
}

/// `"t_{n-1} <SEP> t_n"`, or `t_0` alone for the first text.
pub fn build_input_2p2(texts: &[&str], n: usize) -> String {
    assert!(n < texts.len(), "text index out of range");
    if n == 0 {
        texts[0].to_string()
    } else {
        format!("{}{JOINER}{}", texts[n - 1], texts[n])
    }
}

/// All texts sharing the scene of text `n`, in reading order, and the slot
/// of text `n` among them.
pub fn build_input_scene(texts: &[Utterance], n: usize) -> ModelInput {
    assert!(n < texts.len(), "text index out of range");
    let scene = texts[n].scene;
    let members: Vec<usize> = (0..texts.len()).filter(|&i| texts[i].scene == scene).collect();
    let slot = members.iter().position(|&i| i == n).expect("text is in its own scene");
    let input = members.iter().map(|&i| texts[i].text.as_str()).collect::<Vec<_>>().join(JOINER);
    ModelInput { input, slot }
}

/// Tag tokens `<TAG>` (uppercased, sorted) followed by the scene input.
pub fn build_input_scene_visual(texts: &[Utterance], n: usize, tags: &BTreeSet<String>) -> ModelInput {
    let scene = build_input_scene(texts, n);
    let upper: BTreeSet<String> = tags.iter().map(|t| t.to_uppercase()).collect();
    if upper.is_empty() {
        return scene;
    }
    let mut input: String = upper.iter().map(|t| format!("<{t}> ")).collect();
    input.push_str(&scene.input);
    ModelInput { input, slot: scene.slot }
}

/// Input for text `n` under the given model. `tags` is only read by
/// [`ContextModel::SceneVisual`].
pub fn build_input(
    model: ContextModel,
    texts: &[Utterance],
    n: usize,
    tags: &BTreeSet<String>,
) -> Result<ModelInput, ContextError> {
    if n >= texts.len() {
        return Err(ContextError::OutOfRange { n, len: texts.len() });
    }
    Ok(match model {
        ContextModel::Sentence => ModelInput { input: texts[n].text.clone(), slot: 0 },
        ContextModel::TwoPlusTwo => {
            let plain: Vec<&str> = texts.iter().map(|t| t.text.as_str()).collect();
            ModelInput { input: build_input_2p2(&plain, n), slot: usize::from(n > 0) }
        }
        ContextModel::Scene => build_input_scene(texts, n),
        ContextModel::SceneVisual => build_input_scene_visual(texts, n, tags),
    })
}

/// The segment of a translator output for one text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    /// The output had fewer segments than expected; the last one was used.
    pub degraded: bool,
}

/// Splits translator output on `<SEP>` and returns the trimmed segment at
/// `slot`, falling back to the last segment.
pub fn split_output(output: &str, slot: usize) -> Result<Segment, ContextError> {
    if output.trim().is_empty() {
        return Err(ContextError::EmptyOutput);
    }
    let parts: Vec<&str> = output.split(SEP).map(str::trim).collect();
    match parts.get(slot) {
        Some(p) => Ok(Segment { text: p.to_string(), degraded: false }),
        None => Ok(Segment { text: parts.last().expect("split yields one part").to_string(), degraded: true }),
    }
}

/// Removes leading `<TAG>` tokens, as echoed back by some translators for
/// scene-visual inputs.
pub fn strip_tag_prefix(s: &str) -> &str {
    let mut rest = s.trim_start();
    while let Some(tok) = rest.split_whitespace().next() {
        if is_special_token(tok) && tok != SEP {
            rest = rest[tok.len()..].trim_start();
        } else {
            break;
        }
    }
    rest
}

fn is_special_token(tok: &str) -> bool {
    tok.len() > 2 && tok.starts_with('<') && tok.ends_with('>') && !tok[1..tok.len() - 1].contains(['<', '>'])
}

/// A text-to-text translation engine.
pub trait Translator: Send + Sync {
    fn name(&self) -> &str;
    fn translate(&self, input: &str) -> Result<String, ContextError>;
}

/// Returns its input unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoTranslator;

impl Translator for EchoTranslator {
    fn name(&self) -> &str {
        "echo"
    }

    fn translate(&self, input: &str) -> Result<String, ContextError> {
        Ok(input.to_string())
    }
}

/// Word-for-word lookup. Whitespace-separated tokens found in the map are
/// replaced; `<...>` tokens and unknown words pass through verbatim.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct DictTranslator {
    map: BTreeMap<String, String>,
}

impl DictTranslator {
    pub fn new(map: BTreeMap<String, String>) -> Self {
        Self { map }
    }

    /// Parses a two-column, tab-separated map. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn from_tsv(src: &str) -> Result<Self, ContextError> {
        let mut map = BTreeMap::new();
        for (i, line) in src.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(k), Some(v), None) if !k.is_empty() => {
                    map.insert(k.to_string(), v.to_string());
                }
                _ => {
                    return Err(ContextError::Dictionary { line: i + 1, message: "expected two tab-separated columns".into() })
                }
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self, ContextError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ContextError::Dictionary { line: 0, message: format!("{}: {e}", path.display()) })?;
        Self::from_tsv(&src)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Translator for DictTranslator {
    fn name(&self) -> &str {
        "dict"
    }

    fn translate(&self, input: &str) -> Result<String, ContextError> {
        let out: Vec<&str> = input
            .split_whitespace()
            .map(|tok| {
                if is_special_token(tok) {
                    tok
                } else {
                    self.map.get(tok).map_or(tok, String::as_str)
                }
            })
            .collect();
        Ok(out.join(" "))
    }
}

/// Translates text `n` of a page under a context model.
pub fn translate_text(
    translator: &dyn Translator,
    model: ContextModel,
    texts: &[Utterance],
    n: usize,
    tags: &BTreeSet<String>,
) -> Result<Segment, ContextError> {
    let input = build_input(model, texts, n, tags)?;
    let output = translator.translate(&input.input)?;
    let mut seg = split_output(&output, input.slot)?;
    if model == ContextModel::SceneVisual {
        seg.text = strip_tag_prefix(&seg.text).to_string();
    }
    Ok(seg)
}
