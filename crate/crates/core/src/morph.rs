//! Binary morphology and 8-connected component labelling.

use crate::image::{reflect, MaskImage};

/// Square-element dilation with radius `r` (element `(2r+1)^2`).
pub fn dilate(mask: &MaskImage, r: usize) -> MaskImage {
    window_any(mask, r, true)
}

/// Square-element erosion with radius `r`.
pub fn erode(mask: &MaskImage, r: usize) -> MaskImage {
    window_any(mask, r, false)
}

/// Dilate then erode.
pub fn close(mask: &MaskImage, r: usize) -> MaskImage {
    if r == 0 {
        return mask.clone();
    }
    erode(&dilate(mask, r), r)
}

// Separable max (target=true) or min (target=false) over a reflected window.
fn window_any(mask: &MaskImage, r: usize, target: bool) -> MaskImage {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let r = r as isize;
    let src = mask.as_slice();
    let mut rows = vec![!target; w * h];
    for y in 0..h {
        for x in 0..w {
            let hit = (-r..=r).any(|d| src[y * w + reflect(x as isize + d, w)] == target);
            rows[y * w + x] = if hit { target } else { !target };
        }
    }
    let mut out = vec![!target; w * h];
    for y in 0..h {
        for x in 0..w {
            let hit = (-r..=r).any(|d| rows[reflect(y as isize + d, h) * w + x] == target);
            out[y * w + x] = if hit { target } else { !target };
        }
    }
    MaskImage::from_vec(w, h, out).expect("dims preserved")
}

/// Binary median over a `(2r+1)^2` reflected window: set iff more than half
/// the window is set.
pub fn median(mask: &MaskImage, r: usize) -> MaskImage {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let side = 2 * r + 1;
    let half = side * side / 2;
    let ri = r as isize;
    // column sums over the vertical window, then slide horizontally
    let src = mask.as_slice();
    let mut col = vec![0usize; w * h];
    for y in 0..h {
        for x in 0..w {
            col[y * w + x] = (-ri..=ri)
                .filter(|&d| src[reflect(y as isize + d, h) * w + x])
                .count();
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let n: usize = (-ri..=ri)
                .map(|d| col[y * w + reflect(x as isize + d, w)])
                .sum();
            out.push(n > half);
        }
    }
    MaskImage::from_vec(w, h, out).expect("dims preserved")
}

pub const NEIGHBOURS_8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Labels 8-connected components of pixels for which `same(a, b)` joins
/// neighbours and `active(p)` admits the pixel. Returns per-pixel component
/// ids (`u32::MAX` for inactive) and the component count. Components are
/// numbered in raster order of their first pixel.
pub fn label_components(
    width: usize,
    height: usize,
    active: impl Fn(usize) -> bool,
    same: impl Fn(usize, usize) -> bool,
) -> (Vec<u32>, usize) {
    let mut ids = vec![u32::MAX; width * height];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..width * height {
        if ids[start] != u32::MAX || !active(start) {
            continue;
        }
        ids[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (px, py) = ((p % width) as isize, (p / width) as isize);
            for (dx, dy) in NEIGHBOURS_8 {
                let (nx, ny) = (px + dx, py + dy);
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let q = ny as usize * width + nx as usize;
                if ids[q] == u32::MAX && active(q) && same(p, q) {
                    ids[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    (ids, next as usize)
}

/// Per-component pixel lists, indexed by component id.
pub fn component_pixels(ids: &[u32], count: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); count];
    for (p, &id) in ids.iter().enumerate() {
        if id != u32::MAX {
            out[id as usize].push(p);
        }
    }
    out
}

/// Clears 8-connected foreground components with fewer than `min_area`
/// pixels.
pub fn remove_small_components(mask: &MaskImage, min_area: usize) -> MaskImage {
    if min_area <= 1 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let src = mask.as_slice();
    let (ids, n) = label_components(w, h, |p| src[p], |_, _| true);
    let mut sizes = vec![0usize; n];
    for &id in &ids {
        if id != u32::MAX {
            sizes[id as usize] += 1;
        }
    }
    let data = ids
        .iter()
        .map(|&id| id != u32::MAX && sizes[id as usize] >= min_area)
        .collect();
    MaskImage::from_vec(w, h, data).expect("dims preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> MaskImage {
        MaskImage::from_fn(w, h, |x, y| {
            x >= x0 && x < x0 + side && y >= y0 && y < y0 + side
        })
    }

    #[test]
    fn closing_fills_single_hole() {
        let mut m = square(40, 40, 10, 10, 20);
        m.set(20, 20, false);
        assert_eq!(close(&m, 1), square(40, 40, 10, 10, 20));
    }

    #[test]
    fn erosion_is_dual_of_dilation() {
        let m = MaskImage::from_fn(17, 13, |x, y| (x * 7 + y * 3) % 5 == 0);
        assert_eq!(erode(&m, 2), dilate(&m.invert(), 2).invert());
    }

    #[test]
    fn median_removes_isolated_pixel() {
        let mut m = MaskImage::zeros(9, 9);
        m.set(4, 4, true);
        assert!(median(&m, 1).is_empty());
    }

    #[test]
    fn diagonal_pixels_form_one_component() {
        let m = MaskImage::from_fn(5, 5, |x, y| x == y);
        let s = m.as_slice();
        let (_, n) = label_components(5, 5, |p| s[p], |_, _| true);
        assert_eq!(n, 1);
    }

    #[test]
    fn small_component_removal_is_idempotent() {
        let m = MaskImage::from_fn(30, 30, |x, y| (x / 3 + y / 4) % 3 == 0 || x > 25);
        let once = remove_small_components(&m, 10);
        assert_eq!(remove_small_components(&once, 10), once);
    }
}
