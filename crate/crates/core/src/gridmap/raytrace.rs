//! Grid line traversal over a unit-cell lattice.
//!
//! Cells are visited in order along the ray. Crossing boundaries are computed
//! directly from the start point for every step (never accumulated), so two
//! traversals of the same ray agree bit for bit. When the ray passes exactly
//! through a lattice corner, both side cells are reported as zero-length
//! touches before the diagonal cell, which makes the traversal a supercover.

/// One visited cell with the ray parameters where the ray enters and leaves it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSpan {
    pub col: i64,
    pub row: i64,
    pub t_enter: f64,
    pub t_exit: f64,
}

impl CellSpan {
    /// True for corner touches that the ray grazes without crossing the interior.
    pub fn is_touch(&self) -> bool {
        self.t_exit <= self.t_enter
    }
}

/// Ray `p(t) = origin + t * dir` in lattice units (one unit per cell).
#[derive(Clone, Debug)]
pub struct GridRay {
    u0: f64,
    v0: f64,
    du: f64,
    dv: f64,
    col: i64,
    row: i64,
    step_c: i64,
    step_r: i64,
    next_c: i64,
    next_r: i64,
    t: f64,
    pending: [Option<CellSpan>; 2],
}

impl GridRay {
    /// `dir` may have any length; `t` is measured in multiples of it.
    pub fn new(origin: (f64, f64), dir: (f64, f64)) -> Self {
        let (u0, v0) = origin;
        let (du, dv) = dir;
        let col = u0.floor() as i64;
        let row = v0.floor() as i64;
        let step_c = if du > 0.0 { 1 } else if du < 0.0 { -1 } else { 0 };
        let step_r = if dv > 0.0 { 1 } else if dv < 0.0 { -1 } else { 0 };
        Self {
            u0,
            v0,
            du,
            dv,
            col,
            row,
            step_c,
            step_r,
            next_c: if step_c > 0 { col + 1 } else { col },
            next_r: if step_r > 0 { row + 1 } else { row },
            t: 0.0,
            pending: [None, None],
        }
    }

    fn boundary_t(&self) -> (f64, f64) {
        let tc = if self.step_c != 0 {
            (self.next_c as f64 - self.u0) / self.du
        } else {
            f64::INFINITY
        };
        let tr = if self.step_r != 0 {
            (self.next_r as f64 - self.v0) / self.dv
        } else {
            f64::INFINITY
        };
        (tc, tr)
    }
}

impl Iterator for GridRay {
    type Item = CellSpan;

    fn next(&mut self) -> Option<CellSpan> {
        for slot in &mut self.pending {
            if let Some(span) = slot.take() {
                return Some(span);
            }
        }
        let (tc, tr) = self.boundary_t();
        let t_exit = tc.min(tr);
        let span = CellSpan {
            col: self.col,
            row: self.row,
            t_enter: self.t,
            t_exit,
        };
        if !t_exit.is_finite() {
            // degenerate direction: a single cell forever
            self.t = f64::INFINITY;
            return if span.t_enter.is_finite() { Some(span) } else { None };
        }
        if tc < tr {
            self.col += self.step_c;
            self.next_c += self.step_c;
        } else if tr < tc {
            self.row += self.step_r;
            self.next_r += self.step_r;
        } else {
            self.pending = [
                Some(CellSpan {
                    col: self.col + self.step_c,
                    row: self.row,
                    t_enter: t_exit,
                    t_exit,
                }),
                Some(CellSpan {
                    col: self.col,
                    row: self.row + self.step_r,
                    t_enter: t_exit,
                    t_exit,
                }),
            ];
            self.col += self.step_c;
            self.row += self.step_r;
            self.next_c += self.step_c;
            self.next_r += self.step_r;
        }
        self.t = t_exit;
        Some(span)
    }
}

/// Cells crossed by the segment from `a` to `b` (lattice units), start and end cell included.
pub fn supercover(a: (f64, f64), b: (f64, f64)) -> Vec<(i64, i64)> {
    let ray = GridRay::new(a, (b.0 - a.0, b.1 - a.1));
    let mut out = Vec::new();
    for span in ray {
        out.push((span.col, span.row));
        if span.t_exit >= 1.0 || !span.t_exit.is_finite() {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-square / segment intersection, by brute force over the bounding box.
    fn oracle(a: (f64, f64), b: (f64, f64)) -> Vec<(i64, i64)> {
        let (c0, c1) = (a.0.min(b.0).floor() as i64, a.0.max(b.0).floor() as i64);
        let (r0, r1) = (a.1.min(b.1).floor() as i64, a.1.max(b.1).floor() as i64);
        let mut out = Vec::new();
        for c in c0..=c1 {
            for r in r0..=r1 {
                // Liang–Barsky clip against [c, c+1] x [r, r+1]
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                let d = (b.0 - a.0, b.1 - a.1);
                let mut ok = true;
                for (p, q) in [
                    (-d.0, a.0 - c as f64),
                    (d.0, c as f64 + 1.0 - a.0),
                    (-d.1, a.1 - r as f64),
                    (d.1, r as f64 + 1.0 - a.1),
                ] {
                    if p == 0.0 {
                        if q < 0.0 {
                            ok = false;
                        }
                    } else {
                        let t = q / p;
                        if p < 0.0 {
                            lo = lo.max(t);
                        } else {
                            hi = hi.min(t);
                        }
                    }
                }
                if ok && lo <= hi {
                    out.push((c, r));
                }
            }
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn matches_brute_force_on_generic_segments() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let a = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let b = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let mut got = supercover(a, b);
            got.sort_unstable();
            got.dedup();
            assert_eq!(got, oracle(a, b), "{a:?} -> {b:?}");
        }
    }

    #[test]
    fn diagonal_through_corners_is_a_supercover() {
        let got = supercover((0.5, 0.5), (2.5, 2.5));
        assert_eq!(got, vec![(0, 0), (1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (2, 2)]);
        let mut sorted = got.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, oracle((0.5, 0.5), (2.5, 2.5)));
    }

    #[test]
    fn axis_aligned_and_degenerate() {
        assert_eq!(supercover((0.5, 0.5), (3.2, 0.5)), vec![(0, 0), (1, 0), (2, 0), (3, 0)]);
        assert_eq!(supercover((0.5, 0.5), (0.5, -1.5)), vec![(0, 0), (0, -1), (0, -2)]);
        assert_eq!(supercover((0.5, 0.5), (0.5, 0.5)), vec![(0, 0)]);
    }

    #[test]
    fn spans_are_contiguous() {
        let ray = GridRay::new((0.3, 0.7), (0.8, -0.35));
        let spans: Vec<CellSpan> = ray.take(40).collect();
        for w in spans.windows(2) {
            assert!(w[1].t_enter >= w[0].t_enter);
            assert!(w[1].t_enter == w[0].t_exit || w[0].is_touch() || w[1].is_touch());
        }
    }
}
