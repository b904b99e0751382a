//! Polygon rasterization to hard label masks.
//!
//! Pixel-center even-odd rule: a pixel belongs to a polygon iff its center
//! (x + 0.5, y + 0.5) is inside under even-odd crossing counting. Overlaps
//! resolve by annotation list order, last writer wins.

use ndarray::Array2;

use super::types::{MaskStack, ScenePair};

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(px: f64, py: f64, polygon: &[(f64, f64)]) -> bool {
    let n = polygon.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = polygon[i];
        let (xj, yj) = polygon[j];
        if (yi > py) != (yj > py) {
            let x_cross = xi + (py - yi) * (xj - xi) / (yj - yi);
            if px < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Grade map (0 = background) from the scene's annotations, plus the count
/// of degenerate annotations that covered no pixel and were skipped.
pub fn rasterize_grade_map(scene: &ScenePair) -> (Array2<u8>, usize) {
    let h = scene.pre.height();
    let w = scene.pre.width();
    let mut grades: Array2<u8> = Array2::zeros((h, w));
    let mut skipped = 0usize;
    for ann in &scene.annotations {
        if ann.polygon.len() < 3 {
            skipped += 1;
            continue;
        }
        // Bounding box clipped to the image keeps the scan local.
        let min_x = ann.polygon.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = ann.polygon.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = ann.polygon.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = ann.polygon.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let x0 = min_x.floor().max(0.0) as usize;
        let y0 = min_y.floor().max(0.0) as usize;
        let x1 = (max_x.ceil() as usize).min(w);
        let y1 = (max_y.ceil() as usize).min(h);
        let mut covered = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                if point_in_polygon(x as f64 + 0.5, y as f64 + 0.5, &ann.polygon) {
                    grades[(y, x)] = ann.grade.code();
                    covered += 1;
                }
            }
        }
        if covered == 0 {
            skipped += 1;
        }
    }
    (grades, skipped)
}

/// Hard 5-channel target stack for the scene: loc channel is 1 on every
/// building pixel, damage channel g is 1 exactly where a grade-g polygon
/// covers the pixel.
pub fn rasterize_annotations(scene: &ScenePair) -> (MaskStack, usize) {
    let (grades, skipped) = rasterize_grade_map(scene);
    (MaskStack::from_grade_map(&grades), skipped)
}
