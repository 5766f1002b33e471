use crate::error::{Error, Result};
use crate::gridmap::{CodeMap, Raster};

/// A square window of the map. Cells outside the map are padded with 1.0 (unknown).
#[derive(Clone, Debug, PartialEq)]
pub struct TilePatch {
    pub tile_size: usize,
    /// Row-major, `tile_size * tile_size` values in [0, 1].
    pub pixels: Vec<f32>,
    /// Map (row, col) of the patch's top-left pixel.
    pub offset: (usize, usize),
    /// Rows and columns of the patch that lie inside the map.
    pub valid: (usize, usize),
}

impl TilePatch {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.tile_size + col]
    }

    /// Same placement, new pixels.
    pub fn with_pixels(&self, pixels: Vec<f32>) -> Self {
        Self {
            pixels,
            ..self.clone()
        }
    }
}

/// Patches needed along an axis of `dim` cells.
pub fn tiles_per_axis(dim: usize, tile_size: usize, stride: usize) -> usize {
    if dim == 0 {
        0
    } else if dim <= tile_size {
        1
    } else {
        (dim - tile_size).div_ceil(stride) + 1
    }
}

pub fn tile_map(map: &CodeMap, tile_size: usize, overlap: usize) -> Result<Vec<TilePatch>> {
    if tile_size == 0 || overlap >= tile_size {
        return Err(Error::Precondition(format!(
            "tiling needs tile_size > overlap >= 0, got {tile_size} and {overlap}"
        )));
    }
    let stride = tile_size - overlap;
    let (w, h) = (map.width(), map.height());
    let (nr, nc) = (tiles_per_axis(h, tile_size, stride), tiles_per_axis(w, tile_size, stride));
    let mut out = Vec::with_capacity(nr * nc);
    for tr in 0..nr {
        for tc in 0..nc {
            let (r0, c0) = (tr * stride, tc * stride);
            let valid = (tile_size.min(h - r0), tile_size.min(w - c0));
            let mut pixels = vec![1.0f32; tile_size * tile_size];
            for r in 0..valid.0 {
                for c in 0..valid.1 {
                    pixels[r * tile_size + c] = map.get(r0 + r, c0 + c) as f32 / 255.0;
                }
            }
            out.push(TilePatch {
                tile_size,
                pixels,
                offset: (r0, c0),
                valid,
            });
        }
    }
    Ok(out)
}

/// Averages overlapping patches back into a `width` x `height` raster.
pub fn stitch_map(patches: &[TilePatch], width: usize, height: usize) -> Result<Raster> {
    let mut sum = vec![0.0f64; width * height];
    let mut count = vec![0u32; width * height];
    for p in patches {
        if p.pixels.len() != p.tile_size * p.tile_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0}", p.tile_size),
                got: format!("{} values", p.pixels.len()),
            });
        }
        let (r0, c0) = p.offset;
        for r in 0..p.valid.0.min(height.saturating_sub(r0)) {
            for c in 0..p.valid.1.min(width.saturating_sub(c0)) {
                let i = (r0 + r) * width + c0 + c;
                sum[i] += p.get(r, c) as f64;
                count[i] += 1;
            }
        }
    }
    if let Some(i) = count.iter().position(|&n| n == 0) {
        return Err(Error::CoverageGap {
            row: i / width,
            col: i % width,
        });
    }
    Ok(Raster {
        width,
        height,
        data: sum.iter().zip(&count).map(|(&s, &n)| (s / n as f64) as f32).collect(),
    })
}
