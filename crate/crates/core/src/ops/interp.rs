use super::FeatureMap;
use crate::error::{Error, Result};
use crate::graph::WeightedAdjacency;

/// Weighting used by [`weighted_interp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterpWeights {
    /// `w_ji = d(x_j, x_i)`.
    #[default]
    Distance,
    /// `w_ji = 1 / d(x_j, x_i)`; co-located neighbors take all the weight.
    InverseDistance,
}

#[derive(Clone, Copy)]
enum Scheme {
    Uniform,
    Weighted(InterpWeights),
}

// Normalized per-edge coefficients; they depend only on geometry.
fn coefficients(unpool: &WeightedAdjacency, scheme: Scheme) -> Result<Vec<Vec<f64>>> {
    (0..unpool.len())
        .map(|i| {
            let (idx, dist) = unpool.get(i);
            if idx.is_empty() {
                return Err(Error::Structural(format!("unpooling neighborhood {i} is empty")));
            }
            let uniform = || vec![1.0 / idx.len() as f64; idx.len()];
            let raw: Vec<f64> = match scheme {
                Scheme::Uniform => return Ok(uniform()),
                Scheme::Weighted(InterpWeights::Distance) => dist.to_vec(),
                Scheme::Weighted(InterpWeights::InverseDistance) => {
                    if dist.contains(&0.0) {
                        dist.iter().map(|&d| if d == 0.0 { 1.0 } else { 0.0 }).collect()
                    } else {
                        dist.iter().map(|&d| 1.0 / d).collect()
                    }
                }
            };
            let total: f64 = raw.iter().sum();
            if total > 0.0 {
                Ok(raw.iter().map(|w| w / total).collect())
            } else {
                Ok(uniform())
            }
        })
        .collect()
}

fn check_sources(unpool: &WeightedAdjacency, input: &FeatureMap) -> Result<()> {
    for i in 0..unpool.len() {
        if unpool.get(i).0.iter().any(|&j| j as usize >= input.rows()) {
            return Err(Error::Structural(format!(
                "unpooling neighborhood {i} references a missing vertex"
            )));
        }
    }
    Ok(())
}

fn apply(unpool: &WeightedAdjacency, input: &FeatureMap, scheme: Scheme) -> Result<FeatureMap> {
    check_sources(unpool, input)?;
    let coef = coefficients(unpool, scheme)?;
    let mut out = FeatureMap::zeros(unpool.len(), input.cols());
    for (i, w) in coef.iter().enumerate() {
        let (idx, _) = unpool.get(i);
        let o = out.row_mut(i);
        for (&j, &wj) in idx.iter().zip(w) {
            for (v, a) in o.iter_mut().zip(input.row(j as usize)) {
                *v += wj * a;
            }
        }
    }
    Ok(out)
}

fn apply_backward(
    unpool: &WeightedAdjacency,
    coarse_rows: usize,
    grad_out: &FeatureMap,
    scheme: Scheme,
) -> Result<FeatureMap> {
    let coef = coefficients(unpool, scheme)?;
    let mut grad = FeatureMap::zeros(coarse_rows, grad_out.cols());
    for (i, w) in coef.iter().enumerate() {
        let (idx, _) = unpool.get(i);
        let g = grad_out.row(i);
        for (&j, &wj) in idx.iter().zip(w) {
            for (v, gv) in grad.row_mut(j as usize).iter_mut().zip(g) {
                *v += wj * gv;
            }
        }
    }
    Ok(grad)
}

/// Mean of the coarse-neighbor features of each fine vertex.
pub fn uniform_interp(unpool: &WeightedAdjacency, input: &FeatureMap) -> Result<FeatureMap> {
    apply(unpool, input, Scheme::Uniform)
}

pub fn uniform_interp_backward(
    unpool: &WeightedAdjacency,
    coarse_rows: usize,
    grad_out: &FeatureMap,
) -> Result<FeatureMap> {
    apply_backward(unpool, coarse_rows, grad_out, Scheme::Uniform)
}

/// `sum_j w_ji a_j / sum_j w_ji`; falls back to the uniform mean when every
/// weight is zero.
pub fn weighted_interp(
    unpool: &WeightedAdjacency,
    input: &FeatureMap,
    weights: InterpWeights,
) -> Result<FeatureMap> {
    apply(unpool, input, Scheme::Weighted(weights))
}

pub fn weighted_interp_backward(
    unpool: &WeightedAdjacency,
    coarse_rows: usize,
    grad_out: &FeatureMap,
    weights: InterpWeights,
) -> Result<FeatureMap> {
    apply_backward(unpool, coarse_rows, grad_out, Scheme::Weighted(weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Adjacency;

    fn unpool(lists: &[Vec<u32>], dists: Vec<f64>) -> WeightedAdjacency {
        WeightedAdjacency::new(Adjacency::from_lists(lists), dists)
    }

    fn column(values: &[f64]) -> FeatureMap {
        FeatureMap::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn uniform_cases() {
        let input = column(&[2.0, 4.0]);
        let u = unpool(&[vec![1], vec![0, 1]], vec![0.5, 0.1, 0.2]);
        assert_eq!(uniform_interp(&u, &input).unwrap().data(), &[4.0, 3.0]);
    }

    #[test]
    fn distance_weights_as_printed() {
        let input = column(&[0.0, 4.0]);
        let u = unpool(&[vec![0, 1]], vec![1.0, 3.0]);
        let out = weighted_interp(&u, &input, InterpWeights::Distance).unwrap();
        assert_eq!(out.data(), &[3.0]);
        let inv = weighted_interp(&u, &input, InterpWeights::InverseDistance).unwrap();
        assert!((inv.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_distances_match_uniform() {
        let input = column(&[1.0, 2.0, 6.0]);
        let u = unpool(&[vec![0, 1, 2]], vec![0.7, 0.7, 0.7]);
        let a = weighted_interp(&u, &input, InterpWeights::Distance).unwrap();
        let b = uniform_interp(&u, &input).unwrap();
        assert!((a.data()[0] - b.data()[0]).abs() < 1e-15);
    }

    #[test]
    fn colocated_falls_back_to_uniform() {
        let input = column(&[1.0, 3.0]);
        let u = unpool(&[vec![0, 1]], vec![0.0, 0.0]);
        let out = weighted_interp(&u, &input, InterpWeights::Distance).unwrap();
        assert_eq!(out.data(), &[2.0]);
    }

    #[test]
    fn empty_is_structural() {
        let u = unpool(&[vec![]], vec![]);
        assert!(matches!(
            uniform_interp(&u, &column(&[1.0])),
            Err(Error::Structural(_))
        ));
    }
}
