use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{LabeledCloud, Labels};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::graph::PointCloud;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parse `x y z [r g b] [label]` lines. `path` is only used in diagnostics.
///
/// Colors already in `[-1, 1]` are kept; otherwise they are read as 0..255
/// and rescaled.
pub fn parse_xyz(text: &str, path: &Path) -> Result<LabeledCloud> {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if ![3, 4, 6, 7].contains(&fields.len()) {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 3, 4, 6 or 7 columns, found {}", fields.len()),
            ));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("expected {w} columns like the first point, found {}", fields.len()),
                ))
            }
            _ => {}
        }
        let real = |s: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(path, line_no, format!("`{s}` is not a finite number"))),
            }
        };
        points.push(Point3::new(real(fields[0])?, real(fields[1])?, real(fields[2])?));
        if fields.len() >= 6 {
            colors.push([real(fields[3])?, real(fields[4])?, real(fields[5])?]);
        }
        if fields.len() % 3 == 1 {
            let s = fields[fields.len() - 1];
            labels.push(
                s.parse::<usize>()
                    .map_err(|_| parse_err(path, line_no, format!("`{s}` is not a class label")))?,
            );
        }
    }
    if points.is_empty() {
        return Err(parse_err(path, 0, "no points"));
    }
    let colors = if colors.is_empty() {
        None
    } else if colors.iter().flatten().all(|v| (-1.0..=1.0).contains(v)) {
        Some(colors)
    } else if colors.iter().flatten().all(|v| (0.0..=255.0).contains(v)) {
        Some(
            colors
                .into_iter()
                .map(|c| c.map(|v| v / 127.5 - 1.0))
                .collect(),
        )
    } else {
        return Err(parse_err(path, 0, "colors are neither in [-1, 1] nor in [0, 255]"));
    };
    LabeledCloud::new(
        PointCloud::new(points)?,
        if labels.is_empty() {
            Labels::None
        } else {
            Labels::Points(labels)
        },
        colors,
    )
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<LabeledCloud> {
    let path = path.as_ref();
    parse_xyz(&fs::read_to_string(path)?, path)
}

/// Text form written by [`save_xyz`]: 12 significant digits per value.
pub fn write_xyz(cloud: &LabeledCloud) -> Result<String> {
    cloud.validate()?;
    let mut s = String::new();
    let labels = match &cloud.labels {
        Labels::Points(l) => Some(l),
        _ => None,
    };
    for (i, p) in cloud.cloud.points().iter().enumerate() {
        let _ = write!(s, "{:.11e} {:.11e} {:.11e}", p.x, p.y, p.z);
        if let Some(c) = &cloud.colors {
            let _ = write!(s, " {:.11e} {:.11e} {:.11e}", c[i][0], c[i][1], c[i][2]);
        }
        if let Some(l) = labels {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn save_xyz(cloud: &LabeledCloud, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_xyz(cloud)?)?;
    Ok(())
}
