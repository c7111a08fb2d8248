use serde::{Deserialize, Serialize};

use super::image::BinaryMask;
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Label map of a binary mask. Label 0 is background; components are
/// numbered from 1 in raster order of their first pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    areas: Vec<usize>,
}

impl Components {
    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Area of component `label` (1-based).
    pub fn area(&self, label: u32) -> usize {
        self.areas[label as usize - 1]
    }

    pub fn areas(&self) -> &[usize] {
        &self.areas
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.label(x, y) == label)
    }

    /// Tight bounding boxes, indexed by `label - 1`.
    pub fn bounding_boxes(&self) -> Vec<BoundingBox> {
        let mut ext = vec![(usize::MAX, usize::MAX, 0usize, 0usize); self.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let l = self.label(x, y);
                if l > 0 {
                    let e = &mut ext[l as usize - 1];
                    e.0 = e.0.min(x);
                    e.1 = e.1.min(y);
                    e.2 = e.2.max(x + 1);
                    e.3 = e.3.max(y + 1);
                }
            }
        }
        ext.into_iter()
            .map(|(x0, y0, x1, y1)| {
                BoundingBox::from_edges(x0 as f64, y0 as f64, x1 as f64, y1 as f64).expect("non-empty component")
            })
            .collect()
    }
}

pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Components {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut areas = Vec::new();
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut area = 0;
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.bits()[j] && labels[j] == 0 {
                    labels[j] = label;
                    stack.push(j);
                }
            }
        }
        areas.push(area);
    }
    Components { width: w, height: h, labels, areas }
}
