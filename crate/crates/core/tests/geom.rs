use helmstab::geom::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[test]
fn random_planar_pairs_satisfy_the_hull_angle_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut bad = Vec::new();
    for trial in 0..1000 {
        let (p, q) = random_polytope_pair(2, &mut rng).unwrap();
        let r = check_qangle(&p, &q).unwrap();
        assert!(r.hausdorff > 0.0);
        if !r.violations.is_empty() || !r.vertex_ok || r.angle_actual > r.angle_bound + 1e-9 {
            bad.push((trial, r.violations));
        }
    }
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn random_box_pairs_fit_in_an_acute_cone() {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    for _ in 0..100 {
        let (p, q) = random_polytope_pair(3, &mut rng).unwrap();
        let r = check_qangle(&p, &q).unwrap();
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert!(r.angle_actual < PI / 2.0);
    }
}

#[test]
fn generators_are_seeded() {
    let a = random_polytope_pair(2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = random_polytope_pair(2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    let c = random_polytope_pair(3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(c.0.dim(), 3);
}

fn pair(dim: usize, seed: u64) -> (Polytope, Polytope) {
    random_polytope_pair(dim, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hausdorff_is_a_metric(seed in any::<u64>(), dim in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = random_polytope_pair(dim, &mut rng).unwrap();
        let (c, _) = random_polytope_pair(dim, &mut rng).unwrap();
        let ab = hausdorff_distance(&a, &b).unwrap();
        prop_assert_eq!(ab, hausdorff_distance(&b, &a).unwrap());
        prop_assert!(hausdorff_distance(&a, &a).unwrap() < 1e-12);
        let ac = hausdorff_distance(&a, &c).unwrap();
        let cb = hausdorff_distance(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn hull_cone_holds_both_shapes(seed in any::<u64>(), dim in 2usize..4) {
        let (p, q) = pair(dim, seed);
        let r = check_qangle(&p, &q).unwrap();
        let cone = convex_hull_cone(&p, &q, &r.x_c).unwrap();
        for x in p.vertices().iter().chain(q.vertices()) {
            // Shrink towards x_c slightly so boundary rays count as inside.
            let y: Vec<f64> = x.iter().zip(&r.x_c).map(|(a, c)| c + (1.0 - 1e-9) * (a - c)).collect();
            prop_assert!(cone_membership(&cone, &y) || x.iter().zip(&r.x_c).all(|(a, c)| (a - c).abs() < 1e-12));
        }
    }

    #[test]
    fn triangulation_cost_is_monotone(c in 1.0f64..10.0, dc in 0.0f64..5.0, m in 3usize..9) {
        let p = Polytope::regular(m, [0.0, 0.0], 1.0, 0.1).unwrap();
        let q = Polytope::regular(m + 1, [0.0, 0.0], 1.0, 0.1).unwrap();
        let a = triangulation_cost(&p, c).unwrap();
        prop_assert!(triangulation_cost(&p, c + dc).unwrap() >= a);
        prop_assert!(triangulation_cost(&q, c).unwrap() >= a);
    }
}
