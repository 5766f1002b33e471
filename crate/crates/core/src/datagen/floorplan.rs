use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gridmap::{CodeMap, GridGeometry, FREE, OCCUPIED};

/// Free cells needed in one 4-connected region for a floorplan to be usable.
pub const MIN_TRAVERSABLE_CELLS: usize = 100;

/// Binary occupancy image. Row 0 is the top row; the world origin is the
/// lower-left corner of the image.
#[derive(Clone, Debug, PartialEq)]
pub struct FloorplanRaster {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub occupied: Vec<bool>,
}

impl FloorplanRaster {
    /// All-free plan; checks nothing.
    pub fn empty(width: usize, height: usize, resolution: f64) -> Self {
        Self {
            width,
            height,
            resolution,
            occupied: vec![false; width * height],
        }
    }

    /// Validates the traversability invariant.
    pub fn checked(self) -> Result<Self> {
        if largest_free_region(&self) < MIN_TRAVERSABLE_CELLS {
            return Err(Error::NonTraversable {
                min_cells: MIN_TRAVERSABLE_CELLS,
            });
        }
        Ok(self)
    }

    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.occupied[row * self.width + col]
    }

    /// Occupancy at bottom-origin lattice cell (col, row); outside counts as occupied.
    pub fn occupied_at(&self, col: i64, row: i64) -> bool {
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            return true;
        }
        self.occupied[(self.height - 1 - row as usize) * self.width + col as usize]
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            width: self.width,
            height: self.height,
            resolution: self.resolution,
            origin_x: 0.0,
            origin_y: 0.0,
        }
    }

    /// Occupied → 100, free → 0.
    pub fn to_codes(&self) -> CodeMap {
        CodeMap {
            geometry: self.geometry(),
            codes: self.occupied.iter().map(|&o| if o { OCCUPIED } else { FREE }).collect(),
        }
    }

    /// Marks the axis-aligned world rectangle [x0, x1) x [y0, y1) occupied or free.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, occupied: bool) {
        let res = self.resolution;
        let c0 = (x0 / res).round().max(0.0) as usize;
        let c1 = ((x1 / res).round() as usize).min(self.width);
        let r0 = (y0 / res).round().max(0.0) as usize;
        let r1 = ((y1 / res).round() as usize).min(self.height);
        for rb in r0..r1 {
            for c in c0..c1 {
                self.occupied[(self.height - 1 - rb) * self.width + c] = occupied;
            }
        }
    }

    /// Bottom-origin (col, row) of the cell containing world (x, y).
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (x / self.resolution).floor() as i64,
            (y / self.resolution).floor() as i64,
        )
    }

    /// World centre of bottom-origin cell (col, row).
    pub fn center_of(&self, col: i64, row: i64) -> (f64, f64) {
        ((col as f64 + 0.5) * self.resolution, (row as f64 + 0.5) * self.resolution)
    }
}

/// Size of the largest 4-connected free region.
pub fn largest_free_region(fp: &FloorplanRaster) -> usize {
    let (w, h) = (fp.width, fp.height);
    let mut seen = vec![false; w * h];
    let mut best = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || fp.occupied[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && !fp.occupied[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        best = best.max(size);
    }
    best
}

/// Loads a single-channel PNG or PGM: pixels below 128 are occupied.
pub fn load_floorplan(path: &Path, resolution: f64) -> Result<FloorplanRaster> {
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(Error::InvalidConfig(format!("floorplan resolution must be positive, got {resolution}")));
    }
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })?;
    if img.color().channel_count() != 1 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("expected a single-channel image, got {:?}", img.color()),
        });
    }
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    FloorplanRaster {
        width: w,
        height: h,
        resolution,
        occupied: gray.pixels().map(|p| p.0[0] < 128).collect(),
    }
    .checked()
}

/// Writes the plan as an 8-bit greyscale PNG (occupied black, free white).
pub fn save_floorplan(path: &Path, fp: &FloorplanRaster) -> Result<()> {
    let pixels: Vec<u8> = fp.occupied.iter().map(|&o| if o { 0 } else { 255 }).collect();
    let img = image::GrayImage::from_raw(fp.width as u32, fp.height as u32, pixels)
        .ok_or_else(|| Error::Precondition("floorplan buffer does not match its size".into()))?;
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::InvalidConfig(other.to_string()),
    })
}

/// Procedural plans used by tests, benchmarks and the default dataset.
pub mod fixtures {
    use super::FloorplanRaster;

    /// Outer walls of `thickness` around a `w` x `h` meter plan.
    fn walled(w: f64, h: f64, res: f64, thickness: f64) -> FloorplanRaster {
        let mut fp = FloorplanRaster::empty((w / res).round() as usize, (h / res).round() as usize, res);
        fp.fill_rect(0.0, 0.0, w, thickness, true);
        fp.fill_rect(0.0, h - thickness, w, h, true);
        fp.fill_rect(0.0, 0.0, thickness, h, true);
        fp.fill_rect(w - thickness, 0.0, w, h, true);
        fp
    }

    /// Single rectangular room.
    pub fn room(w: f64, h: f64, res: f64) -> FloorplanRaster {
        walled(w, h, res, 0.2)
    }

    /// Straight corridor of inner length `len` and inner width `width`.
    pub fn corridor(len: f64, width: f64, res: f64) -> FloorplanRaster {
        walled(len + 0.4, width + 0.4, res, 0.2)
    }

    /// 20 x 10 m: a 2 m corridor along the bottom, a large room above it joined
    /// by two doorways, and a pillar in the room.
    pub fn corridor_and_room(res: f64) -> FloorplanRaster {
        let mut fp = walled(20.0, 10.0, res, 0.2);
        // wall between corridor (y < 2.2) and room
        fp.fill_rect(0.0, 2.2, 20.0, 2.4, true);
        fp.fill_rect(4.0, 2.2, 5.2, 2.4, false);
        fp.fill_rect(14.0, 2.2, 15.2, 2.4, false);
        fp.fill_rect(9.0, 5.8, 9.6, 6.4, true);
        // partition wall with an opening
        fp.fill_rect(12.0, 2.4, 12.2, 6.5, true);
        fp
    }

    /// Offices along a central corridor, with a thin glass-like partition.
    pub fn office(res: f64) -> FloorplanRaster {
        let mut fp = walled(16.0, 12.0, res, 0.2);
        fp.fill_rect(0.0, 5.0, 16.0, 5.2, true);
        fp.fill_rect(0.0, 7.0, 16.0, 7.2, true);
        for (i, x) in [4.0, 8.0, 12.0].into_iter().enumerate() {
            fp.fill_rect(x, 0.0, x + 0.2, 5.0, true);
            fp.fill_rect(x, 7.2, x + 0.2, 12.0, true);
            let door = 1.0 + i as f64 * 0.5;
            fp.fill_rect(x - 2.5, 5.0, x - 2.5 + 1.0, 5.2, false);
            fp.fill_rect(x - 2.5 + door * 0.2, 7.0, x - 1.5 + door * 0.2, 7.2, false);
        }
        fp.fill_rect(13.5, 5.0, 14.5, 5.2, false);
        fp.fill_rect(13.5, 7.0, 14.5, 7.2, false);
        // one-cell partition inside the last office
        fp.fill_rect(14.0, 8.5, 14.0 + res, 11.8, true);
        fp
    }

    /// L-shaped hall with furniture blocks.
    pub fn l_hall(res: f64) -> FloorplanRaster {
        let mut fp = walled(14.0, 14.0, res, 0.2);
        fp.fill_rect(6.0, 6.0, 14.0, 14.0, true);
        fp.fill_rect(2.0, 2.0, 3.0, 2.6, true);
        fp.fill_rect(9.0, 2.5, 9.4, 3.5, true);
        fp.fill_rect(2.5, 9.0, 3.5, 9.3, true);
        fp
    }

    /// 40 x 30 m hall with shelf rows and pillars.
    pub fn warehouse(res: f64) -> FloorplanRaster {
        let mut fp = walled(40.0, 30.0, res, 0.3);
        for k in 0..4 {
            let y = 4.0 + k as f64 * 6.0;
            fp.fill_rect(4.0, y, 16.0, y + 1.0, true);
            fp.fill_rect(24.0, y, 36.0, y + 1.0, true);
        }
        for x in [10.0, 20.0, 30.0] {
            for y in [2.0, 28.0] {
                fp.fill_rect(x - 0.3, y - 0.3, x + 0.3, y + 0.3, true);
            }
        }
        fp
    }
}
