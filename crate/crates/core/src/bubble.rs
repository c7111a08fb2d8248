//! Pixel-level speech-bubble masks, rule-based text lines and splitting of
//! bubbles that hold more than one paragraph.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, Point};
use crate::vision::{
    canny_edges, cluster_count, connected_components, meanshift_1d, BinaryMask, Connectivity, GrayImage, CANNY_HIGH,
    CANNY_LOW,
};

/// Fraction of the box size added on each side before edge detection.
pub const MASK_DILATION: f64 = 0.1;
/// Minimum share of the box a mask must cover to count as a bubble.
pub const MIN_MASK_OVERLAP: f64 = 0.05;
/// Pixels darker than this never belong to a bubble interior.
pub const INTERIOR_MIN_LEVEL: u8 = 128;
/// Text-line candidates narrower than this fraction of the widest are ruby.
pub const RUBY_RATIO: f64 = 0.5;
/// Gap along a line, in glyph widths, that separates stacked paragraphs.
pub const PARAGRAPH_GAP_RATIO: f64 = 1.5;
/// Distance from a mask boundary within which edges count as outline.
pub const MASK_BORDER: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BubbleError {
    #[error("no bubble found: best component covers {overlap:.3} of the box")]
    EmptyMask { overlap: f64 },
    #[error("box {0:?} does not intersect the image")]
    BoxOutsideImage([f64; 4]),
    #[error("text line {0} does not intersect the bubble mask")]
    LineOutsideMask(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Columns of text read top to bottom (Japanese).
    Vertical,
    /// Rows of text read left to right (English).
    Horizontal,
}

/// Estimates the interior of the bubble around `bbox` as a page-sized mask.
///
/// Canny edges are computed on the box grown by [`MASK_DILATION`]. Among the
/// 4-connected components of light, non-edge pixels the one sharing the most
/// area with `bbox` is kept. Enclosed holes (glyph strokes) are filled and
/// light edge pixels along its rim are added back.
pub fn estimate_bubble_mask(img: &GrayImage, bbox: &BoundingBox) -> Result<BinaryMask, BubbleError> {
    let (w, h) = (img.width(), img.height());
    let (x0, y0, x1, y1) = bbox.dilate(MASK_DILATION).pixel_span(w, h);
    let (bx0, by0, bx1, by1) = bbox.pixel_span(w, h);
    if x1 <= x0 || y1 <= y0 || bx1 <= bx0 || by1 <= by0 {
        return Err(BubbleError::BoxOutsideImage(bbox.to_array()));
    }
    let crop = img.crop(x0, y0, x1, y1);
    let (cw, ch) = (crop.width(), crop.height());
    let edges = canny_edges(&crop, CANNY_LOW, CANNY_HIGH);
    let open = BinaryMask::from_fn(cw, ch, |x, y| !edges.get(x, y) && crop.get(x, y) >= INTERIOR_MIN_LEVEL);
    let comps = connected_components(&open, Connectivity::Four);

    let mut overlap = vec![0usize; comps.len() + 1];
    for y in by0..by1 {
        for x in bx0..bx1 {
            overlap[comps.label(x - x0, y - y0) as usize] += 1;
        }
    }
    overlap[0] = 0;
    let best = (1..overlap.len()).max_by(|&a, &b| overlap[a].cmp(&overlap[b]).then(b.cmp(&a)));
    let box_px = ((bx1 - bx0) * (by1 - by0)) as f64;
    let share = best.map_or(0.0, |b| overlap[b] as f64 / box_px);
    let Some(best) = best.filter(|_| share >= MIN_MASK_OVERLAP) else {
        return Err(BubbleError::EmptyMask { overlap: share });
    };
    let mut interior = fill_holes(&comps.mask_of(best as u32));
    // Light edge pixels on the rim belong to the interior; dark ones are outline.
    let rim: Vec<(usize, usize)> = (0..ch)
        .flat_map(|y| (0..cw).map(move |x| (x, y)))
        .filter(|&(x, y)| {
            !interior.get(x, y)
                && edges.get(x, y)
                && crop.get(x, y) >= INTERIOR_MIN_LEVEL
                && ((x > 0 && interior.get(x - 1, y))
                    || (x + 1 < cw && interior.get(x + 1, y))
                    || (y > 0 && interior.get(x, y - 1))
                    || (y + 1 < ch && interior.get(x, y + 1)))
        })
        .collect();
    for (x, y) in rim {
        interior.set(x, y, true);
    }

    let mut out = BinaryMask::new(w, h);
    for y in 0..ch {
        for x in 0..cw {
            if interior.get(x, y) {
                out.set(x + x0, y + y0, true);
            }
        }
    }
    Ok(out)
}

/// Adds every pixel that cannot reach the border without crossing `mask`.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = BinaryMask::new(w, h);
    let mut stack = Vec::new();
    let seed = |x: usize, y: usize, outside: &mut BinaryMask, stack: &mut Vec<(usize, usize)>| {
        if !mask.get(x, y) && !outside.get(x, y) {
            outside.set(x, y, true);
            stack.push((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut stack);
        seed(x, h - 1, &mut outside, &mut stack);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut stack);
        seed(w - 1, y, &mut outside, &mut stack);
    }
    while let Some((x, y)) = stack.pop() {
        if x > 0 {
            seed(x - 1, y, &mut outside, &mut stack);
        }
        if x + 1 < w {
            seed(x + 1, y, &mut outside, &mut stack);
        }
        if y > 0 {
            seed(x, y - 1, &mut outside, &mut stack);
        }
        if y + 1 < h {
            seed(x, y + 1, &mut outside, &mut stack);
        }
    }
    BinaryMask::from_fn(w, h, |x, y| !outside.get(x, y))
}

/// Rule-based text lines in a region image (coordinates local to the image).
///
/// Columns (vertical text) or rows (horizontal text) covered by the extent
/// of any edge component are activated, and maximal runs of activated
/// positions become candidate lines. A candidate whose components leave a
/// gap along the line of at least [`PARAGRAPH_GAP_RATIO`] times its widest
/// component holds stacked paragraphs; it is cut at those gaps and each part is analysed again.
/// Each candidate is then shrunk to its ink, the pixels darker than the
/// midpoint of its darkest and lightest value, and candidates narrower than
/// [`RUBY_RATIO`] of the widest are dropped.
pub fn detect_text_lines_rule(region: &GrayImage, orientation: Orientation) -> Vec<BoundingBox> {
    if region.width() == 0 || region.height() == 0 {
        return Vec::new();
    }
    let edges = canny_edges(region, CANNY_LOW, CANNY_HIGH);
    let boxes = connected_components(&edges, Connectivity::Eight).bounding_boxes();
    lines_from_components(region, boxes, orientation)
}

fn ink_extent(region: &GrayImage, b: &BoundingBox) -> BoundingBox {
    let (x0, y0, x1, y1) = b.pixel_span(region.width(), region.height());
    let pixels = || (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)));
    let (lo, hi) = pixels().map(|(x, y)| region.get(x, y)).fold((u8::MAX, u8::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return *b;
    }
    let mid = (lo as u16 + hi as u16) / 2;
    let ink = pixels().filter(|&(x, y)| (region.get(x, y) as u16) <= mid).map(|(x, y)| (x as f64, y as f64));
    ink.fold(None, |acc: Option<(f64, f64, f64, f64)>, (x, y)| match acc {
        None => Some((x, y, x + 1.0, y + 1.0)),
        Some((l, t, r, btm)) => Some((l.min(x), t.min(y), r.max(x + 1.0), btm.max(y + 1.0))),
    })
    .and_then(|(l, t, r, btm)| BoundingBox::from_edges(l, t, r, btm).ok())
    .unwrap_or(*b)
}

fn lines_from_components(region: &GrayImage, boxes: Vec<BoundingBox>, orientation: Orientation) -> Vec<BoundingBox> {
    let vertical = orientation == Orientation::Vertical;
    let mut lines = Vec::new();
    collect_lines(boxes, vertical, &mut lines);
    let mut lines: Vec<BoundingBox> = lines.iter().map(|b| ink_extent(region, b)).collect();
    let thickness = |b: &BoundingBox| if vertical { b.w() } else { b.h() };
    let widest = lines.iter().map(thickness).fold(0.0, f64::max);
    lines.retain(|b| thickness(b) >= RUBY_RATIO * widest);
    lines.sort_by(|a, b| a.x().total_cmp(&b.x()).then(a.y().total_cmp(&b.y())));
    lines
}

/// Groups boxes whose `[start, end)` intervals touch or overlap.
fn interval_runs(boxes: &[BoundingBox], span: impl Fn(&BoundingBox) -> (f64, f64), min_gap: f64) -> Vec<Vec<BoundingBox>> {
    let mut sorted = boxes.to_vec();
    sorted.sort_by(|a, b| span(a).0.total_cmp(&span(b).0));
    let mut runs: Vec<Vec<BoundingBox>> = Vec::new();
    let mut reach = f64::NEG_INFINITY;
    for b in sorted {
        let (s, e) = span(&b);
        match runs.last_mut() {
            Some(run) if s - reach < min_gap => run.push(b),
            _ => runs.push(vec![b]),
        }
        reach = reach.max(e);
    }
    runs
}

fn collect_lines(boxes: Vec<BoundingBox>, vertical: bool, out: &mut Vec<BoundingBox>) {
    let across = |b: &BoundingBox| if vertical { (b.x(), b.right()) } else { (b.y(), b.bottom()) };
    let along = |b: &BoundingBox| if vertical { (b.y(), b.bottom()) } else { (b.x(), b.right()) };
    for run in interval_runs(&boxes, across, f64::MIN_POSITIVE) {
        let Some(line) = run.iter().copied().reduce(|a, b| a.union(&b)) else { continue };
        let glyph = run.iter().map(|b| across(b).1 - across(b).0).fold(0.0, f64::max);
        let parts = interval_runs(&run, along, PARAGRAPH_GAP_RATIO * glyph);
        if parts.len() == 1 {
            out.push(line);
        } else {
            parts.into_iter().for_each(|p| collect_lines(p, vertical, out));
        }
    }
}

/// Text lines inside a page-level mask, in page coordinates. Pixels outside
/// the mask are treated as blank paper, and edge components reaching within
/// [`MASK_BORDER`] pixels of the mask boundary are taken for bubble outline
/// rather than text.
pub fn detect_text_lines_in_mask(img: &GrayImage, mask: &BinaryMask, orientation: Orientation) -> Vec<BoundingBox> {
    let Some(area) = mask.bounding_box() else {
        return Vec::new();
    };
    let (x0, y0, x1, y1) = area.pixel_span(img.width(), img.height());
    if x1 <= x0 || y1 <= y0 {
        return Vec::new();
    }
    let (w, h) = (x1 - x0, y1 - y0);
    let inside = |x: usize, y: usize| mask.get(x + x0, y + y0);
    let region = GrayImage::from_fn(w, h, |x, y| if inside(x, y) { img.get(x + x0, y + y0) } else { 255 });
    let comps = connected_components(&canny_edges(&region, CANNY_LOW, CANNY_HIGH), Connectivity::Eight);
    let mut touches = vec![false; comps.len()];
    let r = MASK_BORDER as isize;
    for y in 0..h {
        for x in 0..w {
            let l = comps.label(x, y);
            if l == 0 || touches[l as usize - 1] {
                continue;
            }
            let near_border = (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || !inside(nx as usize, ny as usize)
                })
            });
            touches[l as usize - 1] = near_border;
        }
    }
    let boxes = comps.bounding_boxes().into_iter().zip(touches).filter(|(_, t)| !t).map(|(b, _)| b).collect();
    lines_from_components(&region, boxes, orientation)
        .into_iter()
        .map(|b| b.translate(x0 as f64, y0 as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutAxis {
    /// A pixel row.
    Horizontal,
    /// A pixel column.
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cut {
    pub axis: CutAxis,
    pub coord: usize,
    /// Mask pixels on the cut line.
    pub length: usize,
}

impl Cut {
    fn side(&self, p: Point) -> bool {
        match self.axis {
            CutAxis::Horizontal => p.y > self.coord as f64 + 0.5,
            CutAxis::Vertical => p.x > self.coord as f64 + 0.5,
        }
    }

    fn on_line(&self, x: usize, y: usize) -> bool {
        match self.axis {
            CutAxis::Horizontal => y == self.coord,
            CutAxis::Vertical => x == self.coord,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BubbleSplit {
    /// One mask per paragraph, pairwise disjoint, in paragraph order.
    pub paragraphs: Vec<BinaryMask>,
    /// Indices into the input lines, per paragraph.
    pub line_groups: Vec<Vec<usize>>,
    pub cuts: Vec<Cut>,
    /// Set when some adjacent paragraphs could not be separated.
    pub no_separating_cut: bool,
}

/// Groups lines into paragraphs by MeanShift on their top coordinate
/// (bandwidth half the median line height), in top-to-bottom order.
///
/// When that yields a single group for vertical text whose columns fall
/// into x-bands separated by more than the median line width, the bands
/// are used instead, ordered right to left.
pub fn paragraph_groups(lines: &[BoundingBox]) -> Vec<Vec<usize>> {
    if lines.is_empty() {
        return Vec::new();
    }
    let heights: Vec<f64> = lines.iter().map(BoundingBox::h).collect();
    let bw = (0.5 * median(&heights)).max(0.5);
    let tops: Vec<f64> = lines.iter().map(BoundingBox::y).collect();
    let labels = meanshift_1d(&tops, bw);
    let k = cluster_count(&labels);
    if k > 1 {
        return (0..k).map(|c| (0..lines.len()).filter(|&i| labels[i] == c).collect()).collect();
    }
    let widths: Vec<f64> = lines.iter().map(BoundingBox::w).collect();
    let min_gap = median(&widths);
    let mut by_x: Vec<usize> = (0..lines.len()).collect();
    by_x.sort_by(|&a, &b| lines[a].x().total_cmp(&lines[b].x()).then(a.cmp(&b)));
    let mut bands: Vec<Vec<usize>> = Vec::new();
    let mut reach = f64::NEG_INFINITY;
    for i in by_x {
        if bands.is_empty() || lines[i].x() - reach > min_gap {
            bands.push(Vec::new());
        }
        bands.last_mut().expect("band").push(i);
        reach = reach.max(lines[i].right());
    }
    bands.iter_mut().for_each(|b| b.sort_unstable());
    bands.reverse();
    bands
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// All integer rows (or columns) lying entirely in the open gap between two
/// extents along one axis, with the gap midpoint.
fn gap_candidates(a: (f64, f64), b: (f64, f64), limit: usize) -> (Vec<usize>, f64) {
    let (lo, hi) = if a.1 <= b.0 { (a.1, b.0) } else if b.1 <= a.0 { (b.1, a.0) } else { return (Vec::new(), 0.0) };
    let first = lo.ceil().max(0.0) as usize;
    let last = (hi.floor() as isize).min(limit as isize);
    let coords = (first as isize..last).map(|c| c as usize).collect();
    (coords, 0.5 * (lo + hi))
}

/// Candidate cuts between two line groups, each with its distance from the
/// midpoint of the gap.
pub fn candidate_cuts(a: &BoundingBox, b: &BoundingBox, width: usize, height: usize) -> Vec<(CutAxis, usize, f64)> {
    let mut out = Vec::new();
    let (rows, mid_y) = gap_candidates((a.y(), a.bottom()), (b.y(), b.bottom()), height);
    out.extend(rows.into_iter().map(|r| (CutAxis::Horizontal, r, (r as f64 + 0.5 - mid_y).abs())));
    let (cols, mid_x) = gap_candidates((a.x(), a.right()), (b.x(), b.right()), width);
    out.extend(cols.into_iter().map(|c| (CutAxis::Vertical, c, (c as f64 + 0.5 - mid_x).abs())));
    out
}

fn cut_length(piece: &BinaryMask, axis: CutAxis, coord: usize) -> usize {
    match axis {
        CutAxis::Horizontal => (0..piece.width()).filter(|&x| piece.get(x, coord)).count(),
        CutAxis::Vertical => (0..piece.height()).filter(|&y| piece.get(coord, y)).count(),
    }
}

/// Splits a bubble mask into one mask per paragraph with straight
/// axis-aligned cuts of minimal in-mask length.
pub fn split_connected_bubble(mask: &BinaryMask, lines: &[BoundingBox]) -> Result<BubbleSplit, BubbleError> {
    let (w, h) = (mask.width(), mask.height());
    for (i, l) in lines.iter().enumerate() {
        let (x0, y0, x1, y1) = l.pixel_span(w, h);
        let hit = (y0..y1).any(|y| (x0..x1).any(|x| mask.get(x, y)));
        if !hit {
            return Err(BubbleError::LineOutsideMask(i));
        }
    }
    let groups = paragraph_groups(lines);
    if groups.len() <= 1 {
        return Ok(BubbleSplit {
            paragraphs: vec![mask.clone()],
            line_groups: vec![(0..lines.len()).collect()],
            cuts: Vec::new(),
            no_separating_cut: false,
        });
    }
    let extent: Vec<BoundingBox> = groups
        .iter()
        .map(|g| g.iter().map(|&i| lines[i]).reduce(|a, b| a.union(&b)).expect("non-empty group"))
        .collect();
    let centers: Vec<Vec<Point>> = groups.iter().map(|g| g.iter().map(|&i| lines[i].center()).collect()).collect();

    // Each piece is a mask together with the groups it still holds.
    let mut pieces: Vec<(BinaryMask, Vec<usize>)> = vec![(mask.clone(), (0..groups.len()).collect())];
    let mut cuts = Vec::new();
    let mut failed = false;
    for g in 0..groups.len() - 1 {
        let Some(pi) = pieces.iter().position(|(_, gs)| gs.contains(&g) && gs.contains(&(g + 1))) else {
            continue;
        };
        let (piece, held) = &pieces[pi];
        let mut best: Option<(usize, f64, Cut)> = None;
        for (axis, coord, dist) in candidate_cuts(&extent[g], &extent[g + 1], w, h) {
            let cut = Cut { axis, coord, length: cut_length(piece, axis, coord) };
            let side_of = |k: usize| {
                let first = cut.side(centers[k][0]);
                centers[k].iter().all(|&p| cut.side(p) == first).then_some(first)
            };
            let sides: Option<Vec<bool>> = held.iter().map(|&k| side_of(k)).collect();
            let Some(sides) = sides else { continue };
            let sa = sides[held.iter().position(|&k| k == g).expect("held")];
            let sb = sides[held.iter().position(|&k| k == g + 1).expect("held")];
            if sa == sb {
                continue;
            }
            let better = match &best {
                None => true,
                Some((len, d, _)) => cut.length < *len || (cut.length == *len && dist < *d),
            };
            if better {
                best = Some((cut.length, dist, cut));
            }
        }
        let Some((_, _, cut)) = best else {
            failed = true;
            continue;
        };
        let (piece, held) = pieces.remove(pi);
        let split_side = |want: bool| {
            BinaryMask::from_fn(w, h, |x, y| {
                piece.get(x, y) && !cut.on_line(x, y) && cut.side(Point::new(x as f64 + 0.5, y as f64 + 0.5)) == want
            })
        };
        let (left, right): (Vec<usize>, Vec<usize>) = held.iter().partition(|&&k| !cut.side(centers[k][0]));
        pieces.push((split_side(false), left));
        pieces.push((split_side(true), right));
        cuts.push(cut);
    }
    pieces.sort_by_key(|(_, gs)| gs.iter().copied().min());
    let line_groups = pieces
        .iter()
        .map(|(_, gs)| {
            let mut v: Vec<usize> = gs.iter().flat_map(|&k| groups[k].iter().copied()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    Ok(BubbleSplit {
        paragraphs: pieces.into_iter().map(|(m, _)| m).collect(),
        line_groups,
        cuts,
        no_separating_cut: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn inside_ellipse(x: usize, y: usize, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
        let dx = (x as f64 + 0.5 - cx) / rx;
        let dy = (y as f64 + 0.5 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    }

    /// Gray page with one outlined white ellipse holding two glyph columns.
    fn ellipse_page() -> (GrayImage, BinaryMask, BoundingBox) {
        let (w, h) = (200, 200);
        let (cx, cy, rx, ry) = (100.0, 100.0, 60.0, 80.0);
        let truth = BinaryMask::from_fn(w, h, |x, y| inside_ellipse(x, y, cx, cy, rx, ry));
        let mut img = GrayImage::from_fn(w, h, |x, y| {
            if truth.get(x, y) {
                255
            } else if inside_ellipse(x, y, cx, cy, rx + 2.5, ry + 2.5) {
                0
            } else {
                170
            }
        });
        for col in 0..2 {
            for g in 0..5 {
                img.fill_box(&bx(90.0 - col as f64 * 30.0, 50.0 + g as f64 * 22.0, 18.0, 16.0), 20);
            }
        }
        (img, truth, bx(40.0, 20.0, 120.0, 160.0))
    }

    #[test]
    fn ellipse_mask_matches_interior() {
        let (img, truth, b) = ellipse_page();
        let m = estimate_bubble_mask(&img, &b).unwrap();
        assert!(m.iou(&truth) >= 0.95, "{}", m.iou(&truth));
        assert_eq!(connected_components(&m, Connectivity::Four).len(), 1);
    }

    #[test]
    fn white_region_gives_background() {
        let img = GrayImage::filled(50, 40, 255);
        let m = estimate_bubble_mask(&img, &bx(10., 10., 10., 10.)).unwrap();
        assert!(m.count() >= 100);
    }

    #[test]
    fn black_art_is_empty() {
        let mut img = GrayImage::filled(80, 80, 255);
        img.fill_box(&bx(10., 10., 60., 60.), 0);
        assert!(matches!(estimate_bubble_mask(&img, &bx(20., 20., 30., 30.)), Err(BubbleError::EmptyMask { .. })));
    }

    #[test]
    fn box_off_image_rejected() {
        let img = GrayImage::filled(20, 20, 255);
        assert!(matches!(estimate_bubble_mask(&img, &bx(50., 50., 5., 5.)), Err(BubbleError::BoxOutsideImage(_))));
    }

    #[test]
    fn holes_are_filled() {
        let ring = BinaryMask::from_fn(9, 9, |x, y| (1..8).contains(&x) && (1..8).contains(&y) && !(x == 4 && y == 4));
        let filled = fill_holes(&ring);
        assert!(filled.get(4, 4));
        assert!(!filled.get(0, 0));
        assert_eq!(filled.count(), 49);
    }

    fn glyph_column(img: &mut GrayImage, x: f64, width: f64, top: f64, glyphs: usize) {
        for g in 0..glyphs {
            img.fill_box(&bx(x, top + g as f64 * (width + 4.0), width, width), 0);
        }
    }

    #[test]
    fn blank_region_has_no_lines() {
        assert!(detect_text_lines_rule(&GrayImage::filled(60, 60, 255), Orientation::Vertical).is_empty());
    }

    #[test]
    fn two_columns() {
        let mut img = GrayImage::filled(100, 140, 255);
        glyph_column(&mut img, 60.0, 20.0, 10.0, 5);
        glyph_column(&mut img, 30.0, 20.0, 10.0, 5);
        let lines = detect_text_lines_rule(&img, Orientation::Vertical);
        assert_eq!(lines.len(), 2);
        assert!(lines[0].right() <= lines[1].x());
        for l in &lines {
            assert!((l.w() - 20.0).abs() <= 2.0, "{l:?}");
        }
    }

    #[test]
    fn ruby_column_is_removed() {
        let mut img = GrayImage::filled(100, 140, 255);
        glyph_column(&mut img, 40.0, 20.0, 10.0, 5);
        for g in 0..4 {
            img.fill_box(&bx(66.0, 14.0 + g as f64 * 12.0, 8.0, 8.0), 0);
        }
        let lines = detect_text_lines_rule(&img, Orientation::Vertical);
        assert_eq!(lines.len(), 1);
        assert!(lines[0].x() < 45.0 && lines[0].right() < 66.0);
    }

    #[test]
    fn thin_ruby_is_measured_by_its_ink() {
        let mut img = GrayImage::filled(80, 100, 255);
        glyph_column(&mut img, 30.0, 10.0, 12.0, 5);
        for g in 0..4 {
            img.fill_box(&bx(45.0, 12.0 + g as f64 * 6.0, 3.0, 3.0), 0);
        }
        let lines = detect_text_lines_rule(&img, Orientation::Vertical);
        assert_eq!(lines, vec![bx(30.0, 12.0, 10.0, 66.0)]);
    }

    #[test]
    fn horizontal_rows() {
        let mut img = GrayImage::filled(140, 100, 255);
        for r in 0..3 {
            for g in 0..6 {
                img.fill_box(&bx(10.0 + g as f64 * 20.0, 10.0 + r as f64 * 28.0, 16.0, 16.0), 0);
            }
        }
        let lines = detect_text_lines_rule(&img, Orientation::Horizontal);
        assert_eq!(lines.len(), 3);
        for pair in lines.windows(2) {
            assert!(pair[0].bottom() <= pair[1].y());
        }
    }

    /// Peanut: two discs joined by a neck of the given width.
    fn peanut(neck: usize) -> BinaryMask {
        BinaryMask::from_fn(100, 160, |x, y| {
            inside_ellipse(x, y, 50.0, 40.0, 40.0, 35.0)
                || inside_ellipse(x, y, 50.0, 120.0, 40.0, 35.0)
                || ((50 - neck / 2..50 - neck / 2 + neck).contains(&x) && (40..120).contains(&y))
        })
    }

    /// Exhaustive oracle: every row and column strictly between the groups,
    /// tested for separation with connected components.
    fn oracle_min_cut(mask: &BinaryMask, a: &[BoundingBox], b: &[BoundingBox]) -> Option<usize> {
        let ea = a.iter().copied().reduce(|p, q| p.union(&q)).unwrap();
        let eb = b.iter().copied().reduce(|p, q| p.union(&q)).unwrap();
        let (w, h) = (mask.width(), mask.height());
        let mut best: Option<usize> = None;
        let mut consider = |on: &dyn Fn(usize, usize) -> bool| {
            let rest = BinaryMask::from_fn(w, h, |x, y| mask.get(x, y) && !on(x, y));
            let comps = connected_components(&rest, Connectivity::Four);
            let label = |p: Point| comps.label(p.x as usize, p.y as usize);
            let la: Vec<u32> = a.iter().map(|l| label(l.center())).collect();
            let lb: Vec<u32> = b.iter().map(|l| label(l.center())).collect();
            if la.iter().any(|l| lb.contains(l)) {
                return;
            }
            let len = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| mask.get(x, y) && on(x, y)).count();
            best = Some(best.map_or(len, |b| b.min(len)));
        };
        for r in 0..h {
            if r as f64 >= ea.bottom().min(eb.bottom()) && (r + 1) as f64 <= ea.y().max(eb.y()) {
                consider(&|_, y| y == r);
            }
        }
        for c in 0..w {
            if c as f64 >= ea.right().min(eb.right()) && (c + 1) as f64 <= ea.x().max(eb.x()) {
                consider(&|x, _| x == c);
            }
        }
        best
    }

    #[test]
    fn one_paragraph_unchanged() {
        let m = peanut(12);
        let lines = [bx(40., 20., 16., 50.), bx(60., 20., 16., 50.)];
        let s = split_connected_bubble(&m, &lines).unwrap();
        assert_eq!(s.paragraphs, vec![m]);
        assert!(s.cuts.is_empty());
    }

    #[test]
    fn peanut_cut_at_neck() {
        let m = peanut(12);
        let top = [bx(40., 15., 16., 45.), bx(60., 15., 16., 45.)];
        let bottom = [bx(40., 95., 16., 45.), bx(60., 95., 16., 45.)];
        let lines: Vec<BoundingBox> = top.iter().chain(&bottom).copied().collect();
        let s = split_connected_bubble(&m, &lines).unwrap();
        assert_eq!(s.paragraphs.len(), 2);
        assert_eq!(s.cuts[0].length, 12);
        assert_eq!(Some(s.cuts[0].length), oracle_min_cut(&m, &top, &bottom));
        assert_eq!(s.line_groups, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn solid_rectangle_still_split() {
        let m = BinaryMask::from_fn(60, 100, |x, y| (5..55).contains(&x) && (5..95).contains(&y));
        let top = [bx(20., 10., 14., 30.)];
        let bottom = [bx(20., 60., 14., 30.)];
        let s = split_connected_bubble(&m, &[top[0], bottom[0]]).unwrap();
        assert_eq!(s.paragraphs.len(), 2);
        // horizontal cuts cost 50, any vertical one would cost 90
        assert_eq!(s.cuts[0].axis, CutAxis::Horizontal);
        assert_eq!(Some(s.cuts[0].length), oracle_min_cut(&m, &top, &bottom));
        // midpoint of the gap [40, 60) is row 49.5..50.5
        assert!(s.cuts[0].coord == 49 || s.cuts[0].coord == 50);
    }

    #[test]
    fn overlapping_groups_flagged() {
        let m = BinaryMask::from_fn(60, 60, |_, _| true);
        // tops differ but the groups overlap on both axes
        let lines = [bx(10., 5., 30., 40.), bx(20., 30., 30., 25.)];
        let s = split_connected_bubble(&m, &lines).unwrap();
        assert!(s.no_separating_cut);
        assert_eq!(s.paragraphs, vec![m]);
    }

    #[test]
    fn side_by_side_vertical_paragraphs() {
        let m = BinaryMask::from_fn(160, 100, |x, y| (5..155).contains(&x) && (5..95).contains(&y));
        let lines = [bx(120., 10., 16., 70.), bx(100., 10., 16., 70.), bx(40., 10., 16., 70.), bx(20., 10., 16., 70.)];
        let groups = paragraph_groups(&lines);
        assert_eq!(groups, vec![vec![0, 1], vec![2, 3]]);
        let s = split_connected_bubble(&m, &lines).unwrap();
        assert_eq!(s.cuts[0].axis, CutAxis::Vertical);
        assert_eq!(s.paragraphs.len(), 2);
    }

    #[test]
    fn line_outside_mask_rejected() {
        let m = BinaryMask::from_fn(40, 40, |x, _| x < 10);
        assert!(matches!(
            split_connected_bubble(&m, &[bx(20., 0., 5., 5.)]),
            Err(BubbleError::LineOutsideMask(0))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn split_invariants(neck in 4usize..40, gap in 6u32..30, extra in 0u32..3) {
            let m = peanut(neck);
            let mut lines = vec![bx(40., 15., 16., 40.), bx(60., 15., 16., 40.)];
            let start = 55.0 + gap as f64;
            lines.push(bx(40., start, 16., 40.));
            for i in 0..extra {
                lines.push(bx(60. - 20. * i as f64, start, 16., 40.));
            }
            let s = split_connected_bubble(&m, &lines).unwrap();
            let mut union = BinaryMask::new(m.width(), m.height());
            for (i, p) in s.paragraphs.iter().enumerate() {
                prop_assert_eq!(p.and_not(&m).count(), 0);
                for q in &s.paragraphs[i + 1..] {
                    prop_assert_eq!(p.intersection_count(q), 0);
                }
                union = union.or(p);
            }
            for l in &lines {
                let c = l.center();
                let hits = s.paragraphs.iter().filter(|p| p.get(c.x as usize, c.y as usize)).count();
                prop_assert_eq!(hits, usize::from(m.get(c.x as usize, c.y as usize)));
            }
            if s.paragraphs.len() == 2 {
                let a: Vec<BoundingBox> = s.line_groups[0].iter().map(|&i| lines[i]).collect();
                let b: Vec<BoundingBox> = s.line_groups[1].iter().map(|&i| lines[i]).collect();
                prop_assert_eq!(Some(s.cuts[0].length), oracle_min_cut(&m, &a, &b));
            }
        }

        #[test]
        fn rule_lines_respect_ruby_ratio(widths in proptest::collection::vec(4u32..24, 1..5)) {
            let mut img = GrayImage::filled(200, 100, 255);
            let mut x = 10.0;
            for w in &widths {
                glyph_column(&mut img, x, *w as f64, 10.0, 3);
                x += *w as f64 + 12.0;
            }
            let lines = detect_text_lines_rule(&img, Orientation::Vertical);
            let max = lines.iter().map(|l| l.w()).fold(0.0, f64::max);
            for l in &lines {
                prop_assert!(l.w() >= 0.5 * max - 2.0);
            }
            for pair in lines.windows(2) {
                prop_assert!(pair[0].right() <= pair[1].x());
            }
        }
    }
}
