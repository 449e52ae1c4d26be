use proptest::prelude::*;

use sph3d::geometry::{cart_to_sph, sph_to_cart, BinIndex, KernelSpec, Point3};

fn offset() -> impl Strategy<Value = Point3> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

proptest! {
    #[test]
    fn spherical_round_trip(d in offset()) {
        prop_assume!(d.norm() > 1e-9);
        let s = cart_to_sph(d).unwrap();
        prop_assert!(s.theta >= -std::f64::consts::PI && s.theta < std::f64::consts::PI);
        prop_assert!(s.phi.abs() <= std::f64::consts::FRAC_PI_2);
        let back = sph_to_cart(s);
        prop_assert!((back - d).norm() < 1e-12);
    }

    #[test]
    fn bins_lie_in_range_and_contain_the_offset(
        d in offset(),
        (n, p, q) in prop::sample::select(vec![(8usize, 2usize, 2usize), (4, 4, 3), (16, 4, 1), (6, 2, 5)]),
    ) {
        let spec = KernelSpec::new(n, p, q, 2.0).unwrap();
        prop_assume!(d.norm() > 1e-9);
        let kappa = spec.assign_offset(d, false).unwrap();
        prop_assert!(kappa.index() >= 1 && kappa.index() < spec.bin_count());
        let (kt, kp, kr) = spec.decompose(kappa).unwrap();
        prop_assert_eq!(spec.kappa(kt, kp, kr), kappa);
        let g = spec.bins()[kappa.index() - 1];
        let s = cart_to_sph(d).unwrap();
        prop_assert!(g.theta.0 <= s.theta && s.theta < g.theta.1);
        prop_assert!(g.phi.0 <= s.phi && s.phi <= g.phi.1);
        prop_assert!(g.r.0 <= s.r && s.r <= g.r.1);
        // The opposite offset never shares the bin.
        prop_assert_ne!(spec.assign_offset(-d, false).unwrap(), kappa);
    }

    #[test]
    fn self_loop_is_bin_zero(d in offset()) {
        let spec = KernelSpec::new(8, 2, 2, 2.0).unwrap();
        prop_assert_eq!(spec.assign_offset(d, true).unwrap(), BinIndex::SELF);
    }
}

#[test]
fn out_of_range_and_duplicates_are_errors() {
    let spec = KernelSpec::new(8, 2, 2, 1.0).unwrap();
    assert!(matches!(
        spec.assign_offset(Point3::new(2.0, 0.0, 0.0), false),
        Err(sph3d::Error::OutOfRange { .. })
    ));
    assert!(matches!(
        spec.assign_offset(Point3::ORIGIN, false),
        Err(sph3d::Error::DegenerateOffset)
    ));
}

#[test]
fn non_compliant_splits_are_rejected() {
    assert!(KernelSpec::new(2, 2, 2, 1.0).is_err());
    assert!(KernelSpec::new(8, 3, 2, 1.0).is_err());
    assert!(KernelSpec::new(5, 2, 2, 1.0).is_err());
    assert!(KernelSpec::new_unchecked_symmetry(5, 3, 2, 1.0).is_ok());
}

#[test]
fn worked_example_matches_a_bin_scan() {
    let spec = KernelSpec::with_radial_boundaries(
        4,
        4,
        3,
        3f64.sqrt(),
        vec![1e-9, 1.0, 2f64.sqrt(), 3f64.sqrt()],
    )
    .unwrap();
    assert_eq!(spec.bin_count(), 49);
    let d = Point3::new(1.0, 1.0, 1.0);
    let s = cart_to_sph(d).unwrap();
    let hits: Vec<BinIndex> = spec
        .bins()
        .iter()
        .filter(|g| g.theta.0 <= s.theta && s.theta < g.theta.1)
        .filter(|g| g.phi.0 <= s.phi && s.phi < g.phi.1)
        .filter(|g| g.r.0 < s.r && s.r <= g.r.1)
        .map(|g| g.kappa)
        .collect();
    assert_eq!(hits.len(), 1);
    assert_eq!(spec.assign_offset(d, false).unwrap(), hits[0]);
    assert_eq!(spec.decompose(hits[0]), Some((3, 3, 3)));
    assert_eq!(hits[0], BinIndex(43));
}
