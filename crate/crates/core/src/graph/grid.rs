//! Uniform spatial hash over (x̂, ŷ, t̂) with cell size equal to the
//! connection radius, so radius queries touch at most 27 cells.

use std::collections::HashMap;

#[derive(Debug, Clone)]
pub(crate) struct SpatialGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl SpatialGrid {
    pub fn new(cell: f64) -> Self {
        SpatialGrid { cell, cells: HashMap::new() }
    }

    fn key(&self, p: [f64; 3]) -> (i64, i64, i64) {
        (
            (p[0] / self.cell).floor() as i64,
            (p[1] / self.cell).floor() as i64,
            (p[2] / self.cell).floor() as i64,
        )
    }

    pub fn insert(&mut self, p: [f64; 3], idx: u32) {
        self.cells.entry(self.key(p)).or_default().push(idx);
    }

    /// Indices in the 27-cell neighborhood of `p`. Order is arbitrary;
    /// callers must re-sort by their own criteria.
    pub fn candidates(&self, p: [f64; 3], out: &mut Vec<u32>) {
        out.clear();
        let (cx, cy, cz) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend_from_slice(v);
                    }
                }
            }
        }
    }
}
