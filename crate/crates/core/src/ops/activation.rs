use super::FeatureMap;

/// `z` for `z > 0`, `exp(z) - 1` otherwise.
pub fn elu(input: &FeatureMap) -> FeatureMap {
    input.map(|z| if z > 0.0 { z } else { z.exp_m1() })
}

/// Backward of [`elu`] given its input `z`.
pub fn elu_backward(input: &FeatureMap, grad_out: &FeatureMap) -> FeatureMap {
    let mut g = grad_out.clone();
    for (gv, &z) in g.data_mut().iter_mut().zip(input.data()) {
        if z <= 0.0 {
            *gv *= z.exp();
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        let x = FeatureMap::from_vec(1, 4, vec![0.0, -50.0, 2.0, -1.0]).unwrap();
        let y = elu(&x);
        assert_eq!(y.get(0, 0), 0.0);
        assert!((y.get(0, 1) + 1.0).abs() < 1e-12);
        assert_eq!(y.get(0, 2), 2.0);
        assert!((y.get(0, 3) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn slope() {
        let x = FeatureMap::from_vec(1, 2, vec![3.0, -2.0]).unwrap();
        let g = elu_backward(&x, &FeatureMap::from_vec(1, 2, vec![1.0, 1.0]).unwrap());
        assert_eq!(g.get(0, 0), 1.0);
        assert!((g.get(0, 1) - (-2.0f64).exp()).abs() < 1e-15);
    }
}
