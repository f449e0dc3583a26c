//! Region similarity (J) and contour accuracy (F) for multi-object masks.

use crate::dataio::LabelGrid;

/// Mean intersection-over-union over the foreground object ids present in
/// the ground truth. Empty ground truth counts as perfect only when the
/// prediction is empty too.
pub fn region_similarity_j(pred: &LabelGrid, gt: &LabelGrid) -> f64 {
    assert_eq!((pred.height, pred.width), (gt.height, gt.width));
    let mut present = [false; 256];
    for &id in &gt.ids {
        present[id as usize] = true;
    }
    let ids: Vec<u8> = (1..=255u16)
        .filter(|&i| present[i as usize])
        .map(|i| i as u8)
        .collect();
    if ids.is_empty() {
        return if pred.ids.iter().all(|&v| v == 0) {
            1.0
        } else {
            0.0
        };
    }
    let mut total = 0.0f64;
    for &id in &ids {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &g) in pred.ids.iter().zip(gt.ids.iter()) {
            let pm = p == id;
            let gm = g == id;
            if pm && gm {
                inter += 1;
            }
            if pm || gm {
                union += 1;
            }
        }
        total += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
    }
    total / ids.len() as f64
}

/// 4-connected boundary of the binary region `mask == id`; the image border
/// counts as outside.
fn boundary_pixels(mask: &LabelGrid, id: u8) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height, mask.width);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) != id {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y == h - 1
                || x == w - 1
                || mask.get(y - 1, x) != id
                || mask.get(y + 1, x) != id
                || mask.get(y, x - 1) != id
                || mask.get(y, x + 1) != id;
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

/// Euclidean dilation of a pixel set by `tol`, as a hit grid.
fn dilate(points: &[(usize, usize)], h: usize, w: usize, tol: usize) -> Vec<bool> {
    let mut grid = vec![false; h * w];
    let t = tol as isize;
    let t2 = (tol * tol) as isize;
    for &(y, x) in points {
        for dy in -t..=t {
            for dx in -t..=t {
                if dy * dy + dx * dx > t2 {
                    continue;
                }
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    grid[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    grid
}

/// Default contour tolerance: 0.75% of the image diagonal, at least 1 px.
pub fn default_boundary_tol(height: usize, width: usize) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    ((0.0075 * diag).round() as usize).max(1)
}

/// Boundary F-measure with a pixel tolerance, averaged over the ground-truth
/// object ids. Both boundaries empty is a perfect match; exactly one empty
/// scores zero.
pub fn boundary_f(pred: &LabelGrid, gt: &LabelGrid, tol_px: usize) -> f64 {
    assert_eq!((pred.height, pred.width), (gt.height, gt.width));
    let (h, w) = (gt.height, gt.width);
    let mut present = [false; 256];
    for &id in &gt.ids {
        present[id as usize] = true;
    }
    let ids: Vec<u8> = (1..=255u16)
        .filter(|&i| present[i as usize])
        .map(|i| i as u8)
        .collect();
    if ids.is_empty() {
        let pred_empty = pred.ids.iter().all(|&v| v == 0);
        return if pred_empty { 1.0 } else { 0.0 };
    }
    let mut total = 0.0f64;
    for &id in &ids {
        let pb = boundary_pixels(pred, id);
        let gb = boundary_pixels(gt, id);
        let score = match (pb.is_empty(), gb.is_empty()) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            (false, false) => {
                let gt_zone = dilate(&gb, h, w, tol_px);
                let pred_zone = dilate(&pb, h, w, tol_px);
                let matched_p = pb.iter().filter(|&&(y, x)| gt_zone[y * w + x]).count();
                let matched_g = gb.iter().filter(|&&(y, x)| pred_zone[y * w + x]).count();
                let precision = matched_p as f64 / pb.len() as f64;
                let recall = matched_g as f64 / gb.len() as f64;
                if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                }
            }
        };
        total += score;
    }
    total / ids.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(h: usize, w: usize, y0: usize, x0: usize, side: usize, id: u8) -> LabelGrid {
        let mut g = LabelGrid::zeros(h, w);
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                g.set(y, x, id);
            }
        }
        g
    }

    #[test]
    fn identical_masks_score_one() {
        let m = square_mask(16, 16, 3, 4, 6, 1);
        assert_eq!(region_similarity_j(&m, &m), 1.0);
        assert_eq!(boundary_f(&m, &m, 1), 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero_j() {
        let a = square_mask(16, 16, 0, 0, 4, 1);
        let b = square_mask(16, 16, 10, 10, 4, 1);
        assert_eq!(region_similarity_j(&a, &b), 0.0);
    }

    #[test]
    fn half_overlapping_squares_give_third() {
        // two 4x4 squares shifted by half their width: |∩| = 8, |∪| = 24
        let a = square_mask(16, 16, 4, 4, 4, 1);
        let b = square_mask(16, 16, 4, 6, 4, 1);
        let j = region_similarity_j(&a, &b);
        assert!((j - 1.0 / 3.0).abs() < 1e-12, "j = {j}");
    }

    #[test]
    fn one_pixel_shift_within_tolerance_is_perfect_f() {
        let a = square_mask(20, 20, 5, 5, 8, 1);
        let b = square_mask(20, 20, 5, 6, 8, 1);
        assert_eq!(boundary_f(&a, &b, 1), 1.0);
    }

    #[test]
    fn far_shift_scores_zero_f() {
        let a = square_mask(32, 32, 2, 2, 6, 1);
        let b = square_mask(32, 32, 20, 20, 6, 1);
        assert_eq!(boundary_f(&a, &b, 2), 0.0);
    }

    #[test]
    fn multi_object_mean() {
        let mut gt = square_mask(24, 24, 2, 2, 5, 1);
        for y in 12..17 {
            for x in 12..17 {
                gt.set(y, x, 2);
            }
        }
        // object 1 predicted exactly, object 2 missed entirely
        let pred = square_mask(24, 24, 2, 2, 5, 1);
        let j = region_similarity_j(&pred, &gt);
        assert!((j - 0.5).abs() < 1e-12);
    }

    #[test]
    fn default_tolerance_formula() {
        assert_eq!(default_boundary_tol(128, 128), 1);
        assert_eq!(default_boundary_tol(480, 854), 7);
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let a = square_mask(16, 16, 1, 1, 9, 1);
        let b = square_mask(16, 16, 4, 2, 7, 1);
        let j = region_similarity_j(&a, &b);
        let f = boundary_f(&a, &b, 1);
        assert!((0.0..=1.0).contains(&j));
        assert!((0.0..=1.0).contains(&f));
    }
}
