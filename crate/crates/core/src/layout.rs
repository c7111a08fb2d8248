//! Scene assignment, reading-order estimation and scene tagging.
//!
//! Frames are ordered by recursive XY-cut over their boxes: a region is split
//! into rows at horizontal gaps (read top to bottom), otherwise into columns
//! at vertical gaps (read right to left), recursively. Texts follow the order
//! of their frame, then their distance from the frame's top-right corner.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BoundingBox};
use crate::page::{Page, SceneTagSet, TagVocabulary};
use crate::vision::GrayImage;

/// Smallest empty band (pixels) that separates two rows or columns.
pub const MIN_GAP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("page {0} has no frames")]
    NoFrames(String),
    #[error("text {index} on page {page} has no scene assigned")]
    UnassignedScene { page: String, index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "children")]
pub enum LayoutTree {
    /// Children ordered top to bottom.
    Rows(Vec<LayoutTree>),
    /// Children ordered right to left.
    Columns(Vec<LayoutTree>),
    Leaf(usize),
    /// A region with no separating gap, ordered by the fallback rule.
    Irregular(Vec<usize>),
}

impl LayoutTree {
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<usize>) {
        match self {
            LayoutTree::Rows(c) | LayoutTree::Columns(c) => c.iter().for_each(|t| t.collect(out)),
            LayoutTree::Leaf(i) => out.push(*i),
            LayoutTree::Irregular(v) => out.extend(v),
        }
    }

    pub fn is_irregular(&self) -> bool {
        match self {
            LayoutTree::Rows(c) | LayoutTree::Columns(c) => c.iter().any(LayoutTree::is_irregular),
            LayoutTree::Leaf(_) => false,
            LayoutTree::Irregular(_) => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOrder {
    pub tree: LayoutTree,
    /// Frame indices in reading order.
    pub order: Vec<usize>,
    pub irregular: bool,
}

impl FrameOrder {
    /// `rank[frame] = position in reading order`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut rank = vec![0; self.order.len()];
        for (pos, &f) in self.order.iter().enumerate() {
            rank[f] = pos;
        }
        rank
    }
}

/// Groups of item indices separated by gaps of at least [`MIN_GAP`] along one
/// axis, in ascending coordinate order. `span` gives `[start, end)` per item.
fn split_on_gaps(items: &[usize], span: impl Fn(usize) -> (f64, f64)) -> Vec<Vec<usize>> {
    let mut sorted: Vec<usize> = items.to_vec();
    sorted.sort_by(|&a, &b| span(a).0.total_cmp(&span(b).0).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut reach = f64::NEG_INFINITY;
    for i in sorted {
        let (start, end) = span(i);
        if groups.is_empty() || start - reach >= MIN_GAP {
            groups.push(vec![i]);
        } else {
            groups.last_mut().expect("non-empty").push(i);
        }
        reach = reach.max(end);
    }
    groups
}

fn xy_cut(frames: &[BoundingBox], items: &[usize]) -> LayoutTree {
    if items.len() == 1 {
        return LayoutTree::Leaf(items[0]);
    }
    let rows = split_on_gaps(items, |i| (frames[i].y(), frames[i].bottom()));
    if rows.len() > 1 {
        return LayoutTree::Rows(rows.iter().map(|r| xy_cut(frames, r)).collect());
    }
    let mut cols = split_on_gaps(items, |i| (frames[i].x(), frames[i].right()));
    if cols.len() > 1 {
        cols.reverse();
        return LayoutTree::Columns(cols.iter().map(|c| xy_cut(frames, c)).collect());
    }
    let mut rest = items.to_vec();
    rest.sort_by(|&a, &b| {
        frames[a]
            .y()
            .total_cmp(&frames[b].y())
            .then(frames[b].right().total_cmp(&frames[a].right()))
            .then(a.cmp(&b))
    });
    LayoutTree::Irregular(rest)
}

/// Recursive XY-cut reading order over frame boxes.
pub fn order_frame_boxes(frames: &[BoundingBox]) -> Option<FrameOrder> {
    if frames.is_empty() {
        return None;
    }
    let items: Vec<usize> = (0..frames.len()).collect();
    let tree = xy_cut(frames, &items);
    let order = tree.leaves();
    let irregular = tree.is_irregular();
    Some(FrameOrder { tree, order, irregular })
}

/// Orders the frames of a page, writing each frame's rank into `order`.
pub fn order_frames(page: &Page) -> Result<(Page, FrameOrder), LayoutError> {
    let fo = order_frame_boxes(&page.frame_boxes()).ok_or_else(|| LayoutError::NoFrames(page.id.clone()))?;
    let mut out = page.clone();
    for (f, rank) in out.frames.iter_mut().zip(fo.ranks()) {
        f.order = Some(rank);
    }
    Ok((out, fo))
}

fn frame_ranks(page: &Page) -> Result<Vec<usize>, LayoutError> {
    if page.frames.iter().all(|f| f.order.is_some()) && !page.frames.is_empty() {
        Ok(page.frames.iter().map(|f| f.order.expect("checked")).collect())
    } else {
        Ok(order_frames(page)?.1.ranks())
    }
}

/// Index of the frame a text box belongs to: maximal IoU, ties to the
/// earlier frame in reading order, then lower index; texts overlapping no
/// frame go to the frame with the nearest center.
pub fn scene_for_box(text: &BoundingBox, frames: &[BoundingBox], ranks: &[usize]) -> usize {
    let scores: Vec<f64> = frames.iter().map(|f| iou(text, f)).collect();
    let best = (0..frames.len())
        .max_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(ranks[b].cmp(&ranks[a]))
                .then(b.cmp(&a))
        })
        .expect("at least one frame");
    if scores[best] > 0.0 {
        return best;
    }
    let c = text.center();
    (0..frames.len())
        .min_by(|&a, &b| {
            frames[a].center().distance(&c).total_cmp(&frames[b].center().distance(&c)).then(a.cmp(&b))
        })
        .expect("at least one frame")
}

pub fn assign_scenes(page: &Page) -> Result<Page, LayoutError> {
    if page.frames.is_empty() {
        return Err(LayoutError::NoFrames(page.id.clone()));
    }
    let ranks = frame_ranks(page)?;
    let frames = page.frame_boxes();
    let mut out = page.clone();
    for t in &mut out.texts {
        t.scene = Some(scene_for_box(&t.bbox, &frames, &ranks));
    }
    Ok(out)
}

/// Fills `order` on every text: frame reading order first, then distance
/// from the text's top-right corner to its frame's top-right corner.
pub fn order_texts(page: &Page) -> Result<Page, LayoutError> {
    let ranks = if page.frames.is_empty() { Vec::new() } else { frame_ranks(page)? };
    let mut keyed = Vec::with_capacity(page.texts.len());
    for (i, t) in page.texts.iter().enumerate() {
        let scene = t
            .scene
            .filter(|s| *s < page.frames.len())
            .ok_or_else(|| LayoutError::UnassignedScene { page: page.id.clone(), index: i })?;
        let dist = t.bbox.top_right().distance(&page.frames[scene].bbox.top_right());
        keyed.push((ranks[scene], dist, t.bbox.y(), t.bbox.right(), i));
    }
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
            .then(b.3.total_cmp(&a.3))
            .then(a.4.cmp(&b.4))
    });
    let mut out = page.clone();
    for (pos, k) in keyed.iter().enumerate() {
        out.texts[k.4].order = Some(pos);
    }
    Ok(out)
}

/// Frame order, scene assignment and text order in one pass.
pub fn estimate_reading_order(page: &Page) -> Result<(Page, FrameOrder), LayoutError> {
    let (ordered, fo) = order_frames(page)?;
    let scened = assign_scenes(&ordered)?;
    Ok((order_texts(&scened)?, fo))
}

/// Removes all estimated fields (frame/text order and scene).
pub fn strip_order(page: &Page) -> Page {
    let mut p = page.clone();
    p.frames.iter_mut().for_each(|f| f.order = None);
    p.texts.iter_mut().for_each(|t| {
        t.order = None;
        t.scene = None;
    });
    p
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaggerError {
    #[error("tagger unavailable: {0}")]
    Unavailable(String),
    #[error("tag {0} is not in the tagger's vocabulary")]
    OutOfVocabulary(String),
}

/// Predicts semantic tags for one frame of a page.
pub trait Tagger: Send + Sync {
    fn name(&self) -> &str;

    fn vocabulary(&self) -> Option<&TagVocabulary> {
        None
    }

    /// `crop` is the frame's pixels when an image is available.
    fn tags(&self, page: &Page, frame: usize, crop: Option<&GrayImage>) -> Result<BTreeSet<String>, TaggerError>;
}

/// Returns the tags recorded on the frame in the annotation file.
#[derive(Debug, Default, Clone)]
pub struct FixtureTagger;

impl Tagger for FixtureTagger {
    fn name(&self) -> &str {
        "fixture"
    }

    fn tags(&self, page: &Page, frame: usize, _crop: Option<&GrayImage>) -> Result<BTreeSet<String>, TaggerError> {
        page.frames
            .get(frame)
            .map(|f| f.tags.clone())
            .ok_or_else(|| TaggerError::Unavailable(format!("frame {frame} not on page {}", page.id)))
    }
}

/// Returns the same tag set for every frame.
#[derive(Debug, Clone)]
pub struct ConstantTagger(pub BTreeSet<String>);

impl Tagger for ConstantTagger {
    fn name(&self) -> &str {
        "constant"
    }

    fn tags(&self, _page: &Page, _frame: usize, _crop: Option<&GrayImage>) -> Result<BTreeSet<String>, TaggerError> {
        Ok(self.0.clone())
    }
}

/// Tags for one frame, sorted, checked against the tagger's vocabulary.
pub fn predict_scene_tags(
    tagger: &dyn Tagger,
    page: &Page,
    image: Option<&GrayImage>,
    frame: usize,
) -> Result<SceneTagSet, TaggerError> {
    let crop = match (image, page.frames.get(frame)) {
        (Some(img), Some(f)) => {
            let (x0, y0, x1, y1) = f.bbox.pixel_span(img.width(), img.height());
            (x1 > x0 && y1 > y0).then(|| img.crop(x0, y0, x1, y1))
        }
        _ => None,
    };
    let tags = tagger.tags(page, frame, crop.as_ref())?;
    if let Some(vocab) = tagger.vocabulary() {
        if let Some(bad) = tags.iter().find(|t| !vocab.contains(t)) {
            return Err(TaggerError::OutOfVocabulary(bad.clone()));
        }
    }
    Ok(SceneTagSet { scene: frame, tags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::page::{FrameBox, TextUnit};
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn page_with(frames: &[BoundingBox], texts: &[BoundingBox]) -> Page {
        let mut p = Page::new("t", "t.png", 1000, 1000);
        p.frames = frames.iter().map(|b| FrameBox::new(*b)).collect();
        p.texts = texts.iter().map(|b| TextUnit::new(*b)).collect();
        p
    }

    #[test]
    fn grid_two_by_two() {
        // indices: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right
        let frames = [bx(0., 0., 90., 90.), bx(100., 0., 90., 90.), bx(0., 100., 90., 90.), bx(100., 100., 90., 90.)];
        let fo = order_frame_boxes(&frames).unwrap();
        assert_eq!(fo.order, vec![1, 0, 3, 2]);
        assert!(!fo.irregular);
        assert!(matches!(fo.tree, LayoutTree::Rows(_)));
    }

    #[test]
    fn single_frame_is_leaf() {
        let fo = order_frame_boxes(&[bx(5., 5., 10., 10.)]).unwrap();
        assert_eq!(fo.order, vec![0]);
        assert_eq!(fo.tree, LayoutTree::Leaf(0));
        assert!(order_frame_boxes(&[]).is_none());
    }

    #[test]
    fn overlapping_frames_fall_back() {
        // three overlapping panels: no clean cut either way
        let frames = [bx(0., 0., 60., 60.), bx(50., 10., 60., 60.), bx(20., 50., 60., 60.)];
        let fo = order_frame_boxes(&frames).unwrap();
        assert!(fo.irregular);
        // top ascending, then right edge descending
        assert_eq!(fo.order, vec![0, 1, 2]);
    }

    #[test]
    fn touching_frames_do_not_split() {
        let frames = [bx(0., 0., 50., 50.), bx(50., 0., 50., 50.)];
        let fo = order_frame_boxes(&frames).unwrap();
        assert!(fo.irregular);
        let frames = [bx(0., 0., 50., 50.), bx(51., 0., 50., 50.)];
        let fo = order_frame_boxes(&frames).unwrap();
        assert_eq!(fo.order, vec![1, 0]);
        assert!(!fo.irregular);
    }

    #[test]
    fn scene_inside_frame() {
        let p = page_with(&[bx(0., 0., 100., 100.), bx(200., 0., 100., 100.)], &[bx(10., 10., 20., 20.)]);
        assert_eq!(assign_scenes(&p).unwrap().texts[0].scene, Some(0));
    }

    #[test]
    fn scene_straddling_picks_larger_iou() {
        let a = bx(0., 0., 100., 100.);
        let b = bx(110., 0., 40., 100.);
        let t = bx(90., 20., 40., 50.);
        // oracle values: overlap with A is 10x50, with B 20x50
        let ia = iou(&t, &a);
        let ib = iou(&t, &b);
        assert!((ia - 500.0 / (2000.0 + 10000.0 - 500.0)).abs() < 1e-12);
        assert!((ib - 1000.0 / (2000.0 + 4000.0 - 1000.0)).abs() < 1e-12);
        assert!((ia - 0.0435).abs() < 1e-3 && (ib - 0.2).abs() < 1e-12);
        let p = page_with(&[a, b], &[t]);
        assert_eq!(assign_scenes(&p).unwrap().texts[0].scene, Some(1));
    }

    #[test]
    fn scene_fallback_nearest_center() {
        let frames = [bx(0., 0., 50., 50.), bx(100., 0., 50., 50.), bx(400., 400., 50., 50.)];
        let p = page_with(&frames, &[bx(470., 470., 10., 10.)]);
        assert_eq!(assign_scenes(&p).unwrap().texts[0].scene, Some(2));
    }

    #[test]
    fn no_frames_is_an_error() {
        let p = page_with(&[], &[bx(0., 0., 5., 5.)]);
        assert!(matches!(assign_scenes(&p), Err(LayoutError::NoFrames(_))));
        assert!(matches!(order_frames(&p), Err(LayoutError::NoFrames(_))));
    }

    #[test]
    fn texts_by_distance_in_frame() {
        let frame = bx(0., 0., 200., 200.);
        // top-right corners at distance 5 and 12 from (200, 0)
        let near = bx(150., 5., 45., 40.);
        let far = bx(100., 12., 88., 40.);
        let p = page_with(&[frame], &[far, near]);
        let p = order_texts(&assign_scenes(&p).unwrap()).unwrap();
        assert_eq!(p.texts[1].order, Some(0));
        assert_eq!(p.texts[0].order, Some(1));
    }

    #[test]
    fn frame_order_dominates_geometry() {
        // right frame is read first; a text at its far bottom still precedes
        // a text right at the corner of the left frame
        let frames = [bx(0., 0., 100., 100.), bx(110., 0., 100., 100.)];
        let late_in_first = bx(115., 80., 10., 10.);
        let corner_of_second = bx(85., 0., 15., 10.);
        let p = page_with(&frames, &[corner_of_second, late_in_first]);
        let (p, _) = estimate_reading_order(&p).unwrap();
        assert_eq!(p.texts[1].order, Some(0));
        assert_eq!(p.texts[0].order, Some(1));
    }

    #[test]
    fn unassigned_scene_rejected() {
        let p = page_with(&[bx(0., 0., 10., 10.)], &[bx(1., 1., 2., 2.)]);
        assert!(matches!(order_texts(&p), Err(LayoutError::UnassignedScene { index: 0, .. })));
    }

    #[test]
    fn fixture_and_constant_taggers() {
        let mut p = page_with(&[bx(0., 0., 10., 10.), bx(20., 0., 10., 10.)], &[]);
        p.frames[0].tags = ["1GIRL".to_string()].into();
        let t = predict_scene_tags(&FixtureTagger, &p, None, 0).unwrap();
        assert_eq!(t.tags.iter().collect::<Vec<_>>(), vec!["1GIRL"]);
        assert!(predict_scene_tags(&FixtureTagger, &p, None, 1).unwrap().tags.is_empty());
        assert!(matches!(predict_scene_tags(&FixtureTagger, &p, None, 7), Err(TaggerError::Unavailable(_))));
        let c = ConstantTagger(["1BOY".to_string()].into());
        assert_eq!(predict_scene_tags(&c, &p, None, 1).unwrap().tags.len(), 1);
    }

    fn arb_frames() -> impl Strategy<Value = Vec<BoundingBox>> {
        proptest::collection::vec((0u32..400, 0u32..400, 5u32..120, 5u32..120), 1..12)
            .prop_map(|v| v.into_iter().map(|(x, y, w, h)| bx(x as f64, y as f64, w as f64, h as f64)).collect())
    }

    proptest! {
        #[test]
        fn order_is_permutation(frames in arb_frames()) {
            let fo = order_frame_boxes(&frames).unwrap();
            let mut sorted = fo.order.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..frames.len()).collect::<Vec<_>>());
        }

        #[test]
        fn xy_cut_scale_translation_invariant(frames in arb_frames(), s in 1u32..5, dx in -300i32..300, dy in -300i32..300) {
            let base = order_frame_boxes(&frames).unwrap();
            let moved: Vec<BoundingBox> = frames.iter().map(|b| b.scale(s as f64).translate(dx as f64, dy as f64)).collect();
            let other = order_frame_boxes(&moved).unwrap();
            prop_assert_eq!(base.order, other.order);
            prop_assert_eq!(base.irregular, other.irregular);
        }

        #[test]
        fn scene_translation_invariant(x in 0u32..300, y in 0u32..300, dx in -200i32..200, dy in -200i32..200) {
            let frame = bx(x as f64, y as f64, 80., 90.);
            let other = bx(x as f64 + 100., y as f64, 80., 90.);
            let text = bx(x as f64 + 10., y as f64 + 10., 20., 30.);
            let ranks = [0, 1];
            let a = scene_for_box(&text, &[frame, other], &ranks);
            let b = scene_for_box(&text.translate(dx as f64, dy as f64), &[frame.translate(dx as f64, dy as f64), other], &ranks);
            prop_assert_eq!(a, 0);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn text_order_deterministic(frames in arb_frames(), texts in arb_frames()) {
            let mut p = page_with(&frames, &texts);
            p.size = (1000, 1000);
            let (a, _) = estimate_reading_order(&p).unwrap();
            let (b, _) = estimate_reading_order(&p).unwrap();
            prop_assert_eq!(&a, &b);
            let mut orders: Vec<usize> = a.texts.iter().map(|t| t.order.unwrap()).collect();
            orders.sort();
            prop_assert_eq!(orders, (0..texts.len()).collect::<Vec<_>>());
        }
    }
}
