use std::fmt::Write;

use super::GraphPyramid;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelStats {
    pub level: usize,
    pub vertices: usize,
    pub edges: usize,
    pub radius: f64,
    pub min_degree: usize,
    pub max_degree: usize,
    pub mean_degree: f64,
}

pub fn pyramid_stats(pyramid: &GraphPyramid) -> Vec<LevelStats> {
    pyramid
        .levels
        .iter()
        .enumerate()
        .map(|(l, level)| {
            let g = &level.graph;
            let degrees = (0..g.vertex_count()).map(|i| g.neighbors(i).len());
            LevelStats {
                level: l,
                vertices: g.vertex_count(),
                edges: g.edge_count(),
                radius: g.radius(),
                min_degree: degrees.clone().min().unwrap_or(0),
                max_degree: degrees.max().unwrap_or(0),
                mean_degree: g.edge_count() as f64 / g.vertex_count().max(1) as f64,
            }
        })
        .collect()
}

/// Plain-text dump: per-level coordinates and adjacency, then the pooling and
/// unpooling neighborhoods between consecutive levels.
pub fn dump_pyramid(pyramid: &GraphPyramid) -> String {
    let mut out = String::new();
    writeln!(out, "pyramid levels {}", pyramid.level_count()).unwrap();
    for (l, level) in pyramid.levels.iter().enumerate() {
        let g = &level.graph;
        writeln!(
            out,
            "level {l} vertices {} edges {} radius {} cap {}",
            g.vertex_count(),
            g.edge_count(),
            g.radius(),
            g.cap()
        )
        .unwrap();
        for (i, p) in level.cloud.points().iter().enumerate() {
            writeln!(out, "v {i} {} {} {}", p.x, p.y, p.z).unwrap();
        }
        for i in 0..g.vertex_count() {
            write!(out, "n {i} :").unwrap();
            for (j, b) in g.neighbors(i).iter().zip(g.bins(i)) {
                write!(out, " {j}/{}", b.0).unwrap();
            }
            out.push('\n');
        }
    }
    for (l, pool) in pyramid.pool.iter().enumerate() {
        writeln!(out, "pool {l} -> {}", l + 1).unwrap();
        for (i, list) in pool.iter().enumerate() {
            write!(out, "p {i} :").unwrap();
            for j in list {
                write!(out, " {j}").unwrap();
            }
            out.push('\n');
        }
    }
    for (l, unpool) in pyramid.unpool.iter().enumerate() {
        writeln!(
            out,
            "unpool {} -> {l} fallbacks {}",
            l + 1,
            pyramid.unpool_fallbacks[l]
        )
        .unwrap();
        for i in 0..unpool.len() {
            let (idx, dist) = unpool.get(i);
            write!(out, "u {i} :").unwrap();
            for (j, d) in idx.iter().zip(dist) {
                write!(out, " {j}@{d}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}
