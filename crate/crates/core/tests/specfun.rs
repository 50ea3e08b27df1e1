use helmstab::specfun::*;
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn hankel_modulus_approaches_the_asymptote() {
    let z = 1.0e3;
    for nu in [0.0, 0.5, 1.0, 2.5, 7.0, 20.0] {
        let h = hankel_h1(nu, z).unwrap();
        let scaled = h.norm() * (PI * z / 2.0).sqrt();
        assert!((scaled - 1.0).abs() < 1e-2, "nu {nu}: {scaled}");
    }
    // The approach is monotone enough that z = 10 is visibly further off for large ν.
    let near = hankel_h1(20.0, 10.0).unwrap().norm() * (PI * 5.0).sqrt();
    assert!((near - 1.0).abs() > 1e-2);
}

#[test]
fn certificate_is_reproducible_and_refinement_stable() {
    let a = certify_hankel_bounds(0.5, 20.0, 30.0, 48).unwrap();
    let b = certify_hankel_bounds(0.5, 20.0, 30.0, 48).unwrap();
    assert_eq!(a.c.to_bits(), b.c.to_bits());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let fine = certify_hankel_bounds(0.5, 20.0, 30.0, 96).unwrap();
    assert!((fine.c / a.c - 1.0).abs() <= 0.1, "{} vs {}", fine.c, a.c);
    // The certified constant must cover points off the sample grid.
    for (nu, z) in [(3.0, 1.7), (12.5, 7.3), (29.5, 19.1)] {
        assert!(a.holds_at(nu, z).unwrap(), "nu {nu} z {z}");
    }
}

#[test]
fn certificate_rejects_bad_ranges() {
    assert!(certify_hankel_bounds(0.0, 1.0, 5.0, 8).is_err());
    assert!(certify_hankel_bounds(2.0, 1.0, 5.0, 8).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn wronskian_holds(two_nu in 0u32..120, z in 0.3f64..60.0) {
        let nu = two_nu as f64 / 2.0;
        let (j0, y0) = bessel_jy_scaled(nu, z).unwrap();
        let (j1, y1) = bessel_jy_scaled(nu + 1.0, z).unwrap();
        // J·Y products stay moderate even when Y alone overflows.
        let prod = |a: Scaled, b: Scaled| a.m * b.m * (a.ln + b.ln).exp();
        let (p, q) = (prod(j1, y0), prod(j0, y1));
        let want = 2.0 / (PI * z);
        let scale = p.abs().max(q.abs()).max(want);
        prop_assert!(((p - q) - want).abs() <= 1e-8 * scale, "nu {} z {}: {} vs {}", nu, z, p - q, want);
    }

    #[test]
    fn incomplete_gammas_split_the_full_gamma(s in 0.1f64..25.0, x in 0.0f64..60.0, dx in 0.01f64..5.0) {
        let lo = lower_incomplete_gamma(s, x).unwrap();
        let up = upper_incomplete_gamma(s, x).unwrap();
        let g = gamma(s);
        prop_assert!(lo >= 0.0 && up > 0.0);
        prop_assert!(((lo + up) - g).abs() <= 1e-10 * g, "s {} x {}: {} + {} vs {}", s, x, lo, up, g);
        prop_assert!(lower_incomplete_gamma(s, x + dx).unwrap() >= lo);
        prop_assert!(upper_incomplete_gamma(s, x + dx).unwrap() <= up);
    }

    #[test]
    fn ln_gamma_satisfies_the_recurrence(s in 0.05f64..80.0) {
        prop_assert!((ln_gamma(s + 1.0) - ln_gamma(s) - s.ln()).abs() < 1e-11 * (1.0 + ln_gamma(s + 1.0).abs()));
    }
}
