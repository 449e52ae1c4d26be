use std::collections::HashMap;

use crate::geometry::Point3;

/// Point sets below this size are searched by brute force.
pub const BRUTE_FORCE_THRESHOLD: usize = 256;

/// Fixed-radius neighbor index over a borrowed point set.
///
/// A uniform hash grid with cell size equal to the search radius, or a plain
/// scan for small sets. Results are always sorted ascending by point index.
pub struct RadiusIndex<'a> {
    points: &'a [Point3],
    radius: f64,
    grid: Option<Grid>,
}

struct Grid {
    inv_cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl Grid {
    fn key(&self, p: &Point3) -> (i64, i64, i64) {
        (
            (p.x * self.inv_cell).floor() as i64,
            (p.y * self.inv_cell).floor() as i64,
            (p.z * self.inv_cell).floor() as i64,
        )
    }
}

/// `true` when `b` lies in the closed ball of radius `radius` around `a`.
#[inline]
pub fn within(a: &Point3, b: &Point3, radius: f64) -> bool {
    (*b - *a).norm() <= radius
}

impl<'a> RadiusIndex<'a> {
    pub fn new(points: &'a [Point3], radius: f64) -> Self {
        let grid = (points.len() >= BRUTE_FORCE_THRESHOLD).then(|| {
            // Slightly inflated so rounding in the cell computation cannot
            // push an in-range pair two cells apart.
            let mut grid = Grid {
                inv_cell: 1.0 / (radius * (1.0 + 1e-9)),
                cells: HashMap::new(),
            };
            for (i, p) in points.iter().enumerate() {
                let k = grid.key(p);
                grid.cells.entry(k).or_default().push(i as u32);
            }
            grid
        });
        Self {
            points,
            radius,
            grid,
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn points(&self) -> &'a [Point3] {
        self.points
    }

    /// Indices of all indexed points within the radius of `center`, ascending.
    pub fn query(&self, center: &Point3) -> Vec<u32> {
        let mut out = Vec::new();
        match &self.grid {
            None => {
                for (j, p) in self.points.iter().enumerate() {
                    if within(center, p, self.radius) {
                        out.push(j as u32);
                    }
                }
            }
            Some(grid) => {
                let (cx, cy, cz) = grid.key(center);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            if let Some(bucket) = grid.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                                out.extend(bucket.iter().copied().filter(|&j| {
                                    within(center, &self.points[j as usize], self.radius)
                                }));
                            }
                        }
                    }
                }
                out.sort_unstable();
            }
        }
        out
    }

    /// Index of the point closest to `center` (lowest index on ties).
    pub fn nearest(&self, center: &Point3) -> Option<u32> {
        let mut best: Option<(f64, u32)> = None;
        for (j, p) in self.points.iter().enumerate() {
            let d = (*p - *center).norm_squared();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j as u32));
            }
        }
        best.map(|(_, j)| j)
    }
}
