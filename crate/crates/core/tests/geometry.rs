use peftlab_core::geometry::{capacity_upper_bound, output_deviation, peft_forward, tightness_witness, MapFamily, NetFamily};
use peftlab_core::rng;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn zero_phi_gives_zero_deviation_and_bound(seed in any::<u64>()) {
        let mut r = rng::from_seed(seed);
        let net = NetFamily::default().sample(&mut r).unwrap();
        let map = MapFamily::default().sample(&net, &mut r).unwrap();
        let phi = vec![0.0; map.k()];
        let x = rng::gaussian_vec(&mut r, net.input_dim());
        prop_assert_eq!(output_deviation(&net, &map, &phi, &x).unwrap(), 0.0);
        prop_assert_eq!(capacity_upper_bound(&net, &map, &phi, &x).unwrap(), 0.0);
    }

    #[test]
    fn adapted_forward_matches_merged_forward_bitwise(seed in any::<u64>()) {
        let mut r = rng::from_seed(seed);
        let net = NetFamily::default().sample(&mut r).unwrap();
        let map = MapFamily::default().sample(&net, &mut r).unwrap();
        let phi = rng::gaussian_vec(&mut r, map.k());
        let x = rng::gaussian_vec(&mut r, net.input_dim());
        let a = peft_forward(&net, &map, &phi, &x).unwrap();
        let b = net.shifted(&map.apply(&phi).unwrap()).unwrap().forward(&x).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn deviations_and_bounds_nonnegative(seed in any::<u64>()) {
        let mut r = rng::from_seed(seed);
        let net = NetFamily::default().sample(&mut r).unwrap();
        let map = MapFamily::default().sample(&net, &mut r).unwrap();
        let phi = rng::gaussian_vec(&mut r, map.k());
        let x = rng::gaussian_vec(&mut r, net.input_dim());
        prop_assert!(output_deviation(&net, &map, &phi, &x).unwrap() >= 0.0);
        prop_assert!(capacity_upper_bound(&net, &map, &phi, &x).unwrap() >= 0.0);
    }
}

#[test]
fn tightness_ratio_is_one() {
    let w = tightness_witness().unwrap();
    assert!((w.ratio - 1.0).abs() < 1e-9);
}
