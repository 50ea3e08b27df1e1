use helmstab::fields::*;
use helmstab::geom::Polytope;
use proptest::prelude::*;
use std::f64::consts::PI;

// Staircase volume of a polygon: every misclassified cell touches the boundary.
fn area_error_bound(perimeter: f64, h: f64) -> f64 {
    perimeter * h * 2f64.sqrt()
}

#[test]
fn polygon_norm_converges_at_first_order() {
    let (n, r) = (7usize, 0.8);
    let poly = Polytope::regular(n, [0.05, -0.03], r, 0.3).unwrap();
    let area = 0.5 * n as f64 * r * r * (2.0 * PI / n as f64).sin();
    let perimeter = 2.0 * n as f64 * r * (PI / n as f64).sin();
    let mut errs = Vec::new();
    for cells in [40usize, 80, 160, 320] {
        let g = Grid::centered(2, 1.0, cells).unwrap();
        let u = plane_wave(4.0, &[0.6, 0.8], &g).unwrap();
        let l2 = field_norm(&u, &Region::Polytope { polytope: poly.clone() }, Norm::L2).unwrap();
        let err = (l2 * l2 - area).abs();
        assert!(err <= area_error_bound(perimeter, g.h), "N {cells}: {err}");
        errs.push(err);
    }
    // Staircase errors oscillate; the trend over three halvings is what counts.
    assert!(errs[0] / errs[3] > 4.0, "{errs:?}");
}

#[test]
fn box_norm_of_a_plane_wave_is_the_volume() {
    let g = Grid::centered(3, 1.0, 20).unwrap();
    let u = plane_wave(2.0, &[0.0, 0.6, 0.8], &g).unwrap();
    // Cell-aligned box: exactly 10³ cells of side 0.1.
    let r = Region::Boxed { lo: vec![-0.5; 3], hi: vec![0.5; 3] };
    let l2 = field_norm(&u, &r, Norm::L2).unwrap();
    assert!((l2 - 1.0).abs() < 1e-12);
    assert!(field_norm(&u, &Region::Ball { center: vec![5.0; 3], r: 0.1 }, Norm::L2).is_err());
}

#[test]
fn witness_respects_the_declared_seminorm() {
    let poly = Polytope::rectangle(-0.5, -0.4, 0.6, 0.5).unwrap();
    let specs = [
        ContrastSpec::constant(0.7),
        ContrastSpec::Affine { c0: JsonComplex::Real(0.2), grad: vec![0.3, -1.1] },
        ContrastSpec::HoelderBump { c0: JsonComplex::Real(0.5), c: JsonComplex::Pair([0.3, -0.4]), x0: vec![0.1, 0.0], alpha: 0.4 },
    ];
    for spec in specs {
        let m = spec.seminorm();
        let v = ContrastField::new(poly.clone(), spec).unwrap();
        for seed in 0..4 {
            let w = v.hoelder_witness(500, seed);
            assert!(w <= m * (1.0 + 1e-12), "{w} > {m}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plane_waves_have_unit_modulus(k in 0.1f64..40.0, t in 0.0f64..(2.0 * PI), z in -1.0f64..1.0) {
        let g2 = Grid::centered(2, 1.3, 12).unwrap();
        let u = plane_wave(k, &[t.cos(), t.sin()], &g2).unwrap();
        prop_assert!(u.values.iter().all(|v| (v.norm() - 1.0).abs() <= 2.0 * f64::EPSILON));
        let s = (1.0 - z * z).sqrt();
        let g3 = Grid::centered(3, 0.7, 6).unwrap();
        let u = plane_wave(k, &[s * t.cos(), s * t.sin(), z], &g3).unwrap();
        prop_assert!(u.values.iter().all(|v| (v.norm() - 1.0).abs() <= 2.0 * f64::EPSILON));
    }
}
