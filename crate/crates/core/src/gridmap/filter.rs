use serde::{Deserialize, Serialize};

use super::{CodeMap, GridGeometry, OccupancyGrid, Raster, SensorModel, FREE, OCCUPIED, UNKNOWN};
use crate::error::{Error, Result};

/// Thresholds for discretizing evidence before cleaning (`t1..t3`) and the
/// cleaner's output after it (`out_t1`, `out_t2`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiltrationConfig {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub out_t1: f64,
    pub out_t2: f64,
    /// A cell with this many or fewer 4-neighbours of its own value is cleared.
    pub floating_max_neighbors: usize,
}

impl Default for FiltrationConfig {
    fn default() -> Self {
        Self {
            t1: 0.12,
            t2: 0.93,
            t3: 0.96,
            out_t1: 0.21,
            out_t2: 0.86,
            floating_max_neighbors: 2,
        }
    }
}

impl FiltrationConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.t1 && self.t1 <= self.t2 && self.t2 <= self.t3 && self.t3 <= 1.0;
        let out_ordered = 0.0 <= self.out_t1 && self.out_t1 <= self.out_t2 && self.out_t2 <= 1.0;
        if !ordered || !out_ordered {
            return Err(Error::InvalidConfig(format!(
                "filtration thresholds must satisfy 0 <= t1 <= t2 <= t3 <= 1 and 0 <= out_t1 <= out_t2 <= 1, got {self:?}"
            )));
        }
        if self.floating_max_neighbors > 4 {
            return Err(Error::InvalidConfig(format!(
                "floating_max_neighbors must be at most 4, got {}",
                self.floating_max_neighbors
            )));
        }
        Ok(())
    }

    /// Code for an observed cell of likelihood `i`.
    pub fn classify_input(&self, i: f64) -> u8 {
        if i < self.t1 {
            FREE
        } else if self.t2 <= i && i <= self.t3 {
            OCCUPIED
        } else {
            UNKNOWN
        }
    }

    /// Code for a cleaner output value `i` in [0, 1].
    pub fn classify_output(&self, i: f64) -> u8 {
        if i < self.out_t1 {
            FREE
        } else if i <= self.out_t2 {
            OCCUPIED
        } else {
            UNKNOWN
        }
    }

    /// Likelihood that [`classify_input`](Self::classify_input) maps back to `code`,
    /// or `None` for unknown.
    pub fn representative(&self, code: u8) -> Option<f64> {
        match code {
            FREE => Some(self.t1 / 2.0),
            OCCUPIED => Some((self.t2 + self.t3) / 2.0),
            _ => None,
        }
    }
}

pub fn input_filter(grid: &OccupancyGrid, cfg: &FiltrationConfig) -> CodeMap {
    let codes = grid
        .likelihoods()
        .into_iter()
        .map(|l| l.map_or(UNKNOWN, |i| cfg.classify_input(i)))
        .collect();
    CodeMap {
        geometry: grid.geometry(),
        codes,
    }
}

/// Clears every non-unknown cell with `floating_max_neighbors` or fewer
/// same-valued 4-neighbours. One pass, decisions taken on the unmodified input.
pub fn remove_floating_points(map: &CodeMap, cfg: &FiltrationConfig) -> Result<CodeMap> {
    let (w, h) = (map.width(), map.height());
    for (i, &c) in map.codes.iter().enumerate() {
        if c != FREE && c != OCCUPIED && c != UNKNOWN {
            return Err(Error::NotDiscretized {
                row: i / w.max(1),
                col: i % w.max(1),
                value: c,
            });
        }
    }
    let mut out = map.clone();
    for r in 0..h {
        for c in 0..w {
            let v = map.get(r, c);
            if v == UNKNOWN {
                continue;
            }
            let mut same = 0;
            if r > 0 && map.get(r - 1, c) == v {
                same += 1;
            }
            if r + 1 < h && map.get(r + 1, c) == v {
                same += 1;
            }
            if c > 0 && map.get(r, c - 1) == v {
                same += 1;
            }
            if c + 1 < w && map.get(r, c + 1) == v {
                same += 1;
            }
            if same <= cfg.floating_max_neighbors {
                out.set(r, c, UNKNOWN);
            }
        }
    }
    Ok(out)
}

pub fn output_filter(raster: &Raster, geometry: GridGeometry, cfg: &FiltrationConfig) -> Result<CodeMap> {
    if raster.width != geometry.width || raster.height != geometry.height {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", geometry.width, geometry.height),
            got: format!("{}x{}", raster.width, raster.height),
        });
    }
    Ok(CodeMap {
        geometry,
        codes: raster.data.iter().map(|&v| cfg.classify_output(v as f64)).collect(),
    })
}

impl OccupancyGrid {
    /// Evidence grid reproducing `map` under [`input_filter`]: free and occupied
    /// cells get a representative likelihood, unknown cells stay unobserved.
    pub fn from_codes(map: &CodeMap, cfg: &FiltrationConfig, sensor: SensorModel) -> Self {
        let geo = map.geometry;
        let mut grid = OccupancyGrid::new(
            geo.resolution,
            (geo.origin_x, geo.origin_y),
            geo.width,
            geo.height,
            sensor,
        );
        for r in 0..geo.height {
            for c in 0..geo.width {
                if let Some(p) = cfg.representative(map.get(r, c)) {
                    let cell = grid.cell_mut(c, geo.height - 1 - r);
                    cell.observed = true;
                    cell.log_odds = (p / (1.0 - p)).ln();
                }
            }
        }
        grid
    }
}
