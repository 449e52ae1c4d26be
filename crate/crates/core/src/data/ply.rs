use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{LabeledCloud, Labels};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::graph::PointCloud;

/// ASCII PLY with a vertex element; colors are written as 0..255 bytes.
pub fn save_ply(cloud: &LabeledCloud, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ply_text(cloud)?)?;
    Ok(())
}

pub(crate) fn ply_text(cloud: &LabeledCloud) -> Result<String> {
    cloud.validate()?;
    let labels = match &cloud.labels {
        Labels::Points(l) => Some(l),
        _ => None,
    };
    let mut s = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if labels.is_some() {
        s.push_str("property int label\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.cloud.points().iter().enumerate() {
        let _ = write!(s, "{:.11e} {:.11e} {:.11e}", p.x, p.y, p.z);
        if let Some(c) = &cloud.colors {
            for v in c[i] {
                let _ = write!(s, " {}", ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8);
            }
        }
        if let Some(l) = labels {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Read an ASCII PLY vertex element. Only `x y z red green blue label`
/// properties are interpreted; others are skipped.
pub fn load_ply(path: impl AsRef<Path>) -> Result<LabeledCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some("ply") {
        return Err(err(1, "missing `ply` magic".into()));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut header_done = false;
    for (i, line) in lines.by_ref() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(err(i + 1, format!("unsupported PLY format `{fmt}`")))
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| err(i + 1, format!("bad count `{n}`")))?);
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(err(i + 1, "list properties on vertices are not supported".into()))
            }
            ["property", _, name] if in_vertex => props.push((*name).to_string()),
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    let count = count.ok_or_else(|| err(0, "no vertex element".into()))?;
    if !header_done {
        return Err(err(0, "unterminated header".into()));
    }
    let find = |n: &str| props.iter().position(|p| p == n);
    let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
        return Err(err(0, "vertex element lacks x/y/z".into()));
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let il = find("label");
    let mut pts = Vec::with_capacity(count);
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.take(count) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < props.len() {
            return Err(err(i + 1, format!("expected {} values, found {}", props.len(), f.len())));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(i + 1, format!("`{}` is not a number", f[k])))
        };
        pts.push(Point3::new(num(ix)?, num(iy)?, num(iz)?));
        if let Some(c) = rgb {
            colors.push([num(c[0])? / 127.5 - 1.0, num(c[1])? / 127.5 - 1.0, num(c[2])? / 127.5 - 1.0]);
        }
        if let Some(k) = il {
            labels.push(
                f[k].parse::<usize>()
                    .map_err(|_| err(i + 1, format!("`{}` is not a label", f[k])))?,
            );
        }
    }
    if pts.len() != count {
        return Err(err(0, format!("expected {count} vertices, found {}", pts.len())));
    }
    LabeledCloud::new(
        PointCloud::new(pts)?,
        if il.is_some() { Labels::Points(labels) } else { Labels::None },
        rgb.map(|_| colors),
    )
}
