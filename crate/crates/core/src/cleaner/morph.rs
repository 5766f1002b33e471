use super::TilePatch;
use crate::gridmap::{FREE, OCCUPIED, UNKNOWN};

/// Closing with a 3x3 square on the occupied class, then on the free class.
///
/// The occupied closing may overwrite any cell; the free closing only fills
/// cells that are still unknown, so it never erodes walls.
#[derive(Clone, Copy, Debug, Default)]
pub struct Morphological;

impl Morphological {
    pub fn clean(&self, patch: &TilePatch) -> TilePatch {
        let n = patch.tile_size;
        let codes: Vec<u8> = patch.pixels.iter().map(|&v| nearest_code(v)).collect();
        let out = morphological_clean(&codes, n, n);
        patch.with_pixels(out.into_iter().map(|c| c as f32 / 255.0).collect())
    }
}

fn nearest_code(v: f32) -> u8 {
    let v = v as f64 * 255.0;
    [FREE, OCCUPIED, UNKNOWN]
        .into_iter()
        .min_by(|&a, &b| (v - a as f64).abs().total_cmp(&(v - b as f64).abs()))
        .unwrap_or(UNKNOWN)
}

fn dilate(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for r in 0..h {
        for c in 0..w {
            if !mask[r * w + c] {
                continue;
            }
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    out[rr * w + cc] = true;
                }
            }
        }
    }
    out
}

/// Interior cells only; the caller pads by one.
fn erode_interior(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            out[r * w + c] = (r - 1..r + 2).all(|rr| (c - 1..c + 2).all(|cc| mask[rr * w + cc]));
        }
    }
    out
}

/// Closing on the image extended by replicating its border, so shapes touching
/// the border neither grow nor shrink there.
fn close(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let (pw, ph) = (w + 2, h + 2);
    let mut padded = vec![false; pw * ph];
    for r in 0..ph {
        let sr = r.saturating_sub(1).min(h - 1);
        for c in 0..pw {
            let sc = c.saturating_sub(1).min(w - 1);
            padded[r * pw + c] = mask[sr * w + sc];
        }
    }
    let closed = erode_interior(&dilate(&padded, pw, ph), pw, ph);
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        out.extend_from_slice(&closed[(r + 1) * pw + 1..(r + 1) * pw + 1 + w]);
    }
    out
}

/// Morphological cleaning of a row-major code image.
pub fn morphological_clean(codes: &[u8], width: usize, height: usize) -> Vec<u8> {
    if width == 0 || height == 0 {
        return codes.to_vec();
    }
    let occupied: Vec<bool> = codes.iter().map(|&c| c == OCCUPIED).collect();
    let mut out = codes.to_vec();
    for (o, closed) in out.iter_mut().zip(close(&occupied, width, height)) {
        if closed {
            *o = OCCUPIED;
        }
    }
    let free: Vec<bool> = out.iter().map(|&c| c == FREE).collect();
    for (o, closed) in out.iter_mut().zip(close(&free, width, height)) {
        if closed && *o == UNKNOWN {
            *o = FREE;
        }
    }
    out
}
