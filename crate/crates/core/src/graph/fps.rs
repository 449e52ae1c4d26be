use super::PointCloud;
use crate::error::{Error, Result};

/// Farthest point sampling starting from `seed_index`.
///
/// Each pick maximizes the distance to the nearest already-selected point;
/// ties go to the lowest vertex index.
pub fn fps(cloud: &PointCloud, target_count: usize, seed_index: usize) -> Result<Vec<usize>> {
    let pts = cloud.points();
    let m = pts.len();
    if target_count == 0 || target_count > m {
        return Err(Error::invalid(format!(
            "sample count {target_count} outside 1..={m}"
        )));
    }
    if seed_index >= m {
        return Err(Error::invalid(format!("seed index {seed_index} out of range for {m} points")));
    }
    let mut selected = Vec::with_capacity(target_count);
    let mut min_d2 = vec![f64::INFINITY; m];
    let mut current = seed_index;
    selected.push(current);
    min_d2[current] = f64::NEG_INFINITY;
    while selected.len() < target_count {
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (j, p) in pts.iter().enumerate() {
            let d = &mut min_d2[j];
            if *d == f64::NEG_INFINITY {
                continue;
            }
            let nd = p.distance_squared(&c);
            if nd < *d {
                *d = nd;
            }
            if *d > best_d {
                best_d = *d;
                best = j;
            }
        }
        current = best;
        min_d2[current] = f64::NEG_INFINITY;
        selected.push(current);
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    #[test]
    fn collinear() {
        let cloud = PointCloud::new((0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect())
            .unwrap();
        assert_eq!(fps(&cloud, 3, 0).unwrap(), vec![0, 4, 2]);
    }

    #[test]
    fn square_diagonal() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ])
        .unwrap();
        assert_eq!(fps(&cloud, 2, 0).unwrap(), vec![0, 2]);
    }

    #[test]
    fn exhaustion_is_permutation() {
        let cloud = PointCloud::new(
            (0..17)
                .map(|i| Point3::new((i * 7 % 5) as f64, (i % 3) as f64, i as f64 * 0.1))
                .collect(),
        )
        .unwrap();
        let mut s = fps(&cloud, 17, 4).unwrap();
        assert_eq!(s[0], 4);
        s.sort_unstable();
        assert_eq!(s, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn bad_arguments() {
        let cloud = PointCloud::new(vec![Point3::ORIGIN]).unwrap();
        assert!(fps(&cloud, 2, 0).is_err());
        assert!(fps(&cloud, 1, 1).is_err());
        assert!(fps(&cloud, 0, 0).is_err());
    }
}
