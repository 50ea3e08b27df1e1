use helmstab::fields::*;
use helmstab::geom::Polytope;
use helmstab::solver::*;
use std::f64::consts::PI;

fn square(c: ContrastSpec) -> ContrastField {
    ContrastField::new(Polytope::rectangle(-0.5, -0.5, 0.5, 0.5).unwrap(), c).unwrap()
}

fn ring(m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|j| 2.0 * PI * j as f64 / m as f64).map(|t| vec![t.cos(), t.sin()]).collect()
}

#[test]
fn disc_far_field_matches_the_series() {
    let (k, a, c) = (2.0, 1.0, 0.3);
    let g = Grid::centered(2, 1.1, 256).unwrap();
    let v = ContrastField::new(Polytope::regular(512, [0.0, 0.0], a, 0.0).unwrap(), ContrastSpec::constant(c)).unwrap();
    let sol = solve_forward(&v, k, &[1.0, 0.0], &g, &SolverOptions::default()).unwrap();
    let dirs = ring(16);
    let got = sol.far_field_at(&dirs);
    for (d, u) in dirs.iter().zip(&got) {
        let want = disc_far_field(k, a, c, d[1].atan2(d[0]), 40).unwrap();
        assert!((u - want).norm() <= 0.01 * want.norm(), "{d:?}: {u} vs {want}");
    }
}

#[test]
fn weak_contrast_is_close_to_born() {
    let layout = SphereLayout::Equispaced { m: 64 };
    let opts = SolverOptions { far_field: Some(layout.clone()), ..Default::default() };
    let g = Grid::centered(2, 0.6, 96).unwrap();
    let k = 2.0;
    for c in [0.0125, 0.005] {
        // k²‖V‖∞ = 4c ≤ 0.05
        let v = square(ContrastSpec::constant(c));
        let sol = solve_forward(&v, k, &[1.0, 0.0], &g, &opts).unwrap();
        let born = far_field_from_volume(&v, &sol.incident, k, layout.clone()).unwrap();
        let rel = sol.far_field.minus(&born).unwrap().l2_norm() / born.l2_norm();
        assert!(rel <= 5.0 * c, "c {c}: {rel}");
    }
}

#[test]
fn optical_theorem_within_five_percent() {
    let layout = SphereLayout::Equispaced { m: 128 };
    let opts = SolverOptions { far_field: Some(layout.clone()), ..Default::default() };
    let g = Grid::centered(2, 0.6, 96).unwrap();
    let specs = [
        ContrastSpec::constant(0.4),
        ContrastSpec::Affine { c0: JsonComplex::Real(0.3), grad: vec![0.2, -0.1] },
    ];
    for spec in specs {
        let sol = solve_forward(&square(spec), 3.0, &[0.6, 0.8], &g, &opts).unwrap();
        let d = optical_theorem_defect(&sol, layout.clone());
        assert!(d <= 0.05, "defect {d}");
    }
}

#[test]
fn refinement_converges_and_residual_is_below_tolerance() {
    let spec = ContrastSpec::Affine { c0: JsonComplex::Real(0.3), grad: vec![0.2, -0.1] };
    let v = square(spec);
    let opts = SolverOptions::default();
    let dirs = ring(8);
    let mut prev: Option<Vec<num_complex::Complex64>> = None;
    let mut diffs = Vec::new();
    for n in [48usize, 96, 192] {
        let g = Grid::centered(2, 0.6, n).unwrap();
        let sol = solve_forward(&v, 2.0, &[1.0, 0.0], &g, &opts).unwrap();
        assert!(sol.ls_residual().unwrap() <= opts.gmres.tol, "N {n}");
        assert!(sol.residual <= opts.gmres.tol);
        let ff = sol.far_field_at(&dirs);
        if let Some(p) = &prev {
            diffs.push(ff.iter().zip(p).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max));
        }
        prev = Some(ff);
    }
    // At least first order in h between successive refinements.
    assert!(diffs[0] / diffs[1] >= 1.8, "{diffs:?}");
}

#[test]
fn no_contrast_means_no_scattering() {
    let g = Grid::centered(3, 0.6, 12).unwrap();
    let corners: Vec<Vec<f64>> = (0..8).map(|i| (0..3).map(|a| if i >> a & 1 == 1 { 0.3 } else { -0.3 }).collect()).collect();
    let v = ContrastField::new(Polytope::cuboid(corners).unwrap(), ContrastSpec::constant(0.0)).unwrap();
    let sol = solve_forward(&v, 1.5, &[0.0, 0.0, 1.0], &g, &SolverOptions::default()).unwrap();
    assert!(sol.scattered.values.iter().all(|u| u.norm() == 0.0));
    assert_eq!(sol.far_field.max_abs(), 0.0);
}
