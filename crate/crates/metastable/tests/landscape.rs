//! Landscape integration tests: critical-point data against hand-derived
//! values, gradient consistency, and the documented error paths.

use metastable::geometry::{build_paper_domain, Disk, Interval};
use metastable::landscape::{
    boundary_minima, critical_points, evaluate, fd_gradient, find_interior_minimum, Corniche,
    DoubleWell1d, Harmonic, Potential, QuadraticShifted, Zero,
};
use metastable::Error;

use proptest::prelude::*;

#[test]
fn quadratic_interior_minimum_from_generic_start() {
    let p = QuadraticShifted { a: 0.1 };
    let d = build_paper_domain();
    let x = find_interior_minimum(&p, &d, &[0.5, 0.5]).unwrap();
    // grad V = 0 at (a/2, 0).
    assert!((x[0] - 0.05).abs() < 1e-9);
    assert!(x[1].abs() < 1e-9);
}

#[test]
fn harmonic_minimum_on_disk() {
    let p = Harmonic { dim: 2 };
    let d = Disk::new(1.0);
    let x = find_interior_minimum(&p, &d, &[0.3, -0.2]).unwrap();
    assert!(x[0].abs() < 1e-10 && x[1].abs() < 1e-10);
}

#[test]
fn double_well_minimum_is_symmetry_forced() {
    let p = DoubleWell1d { h: 1.0 };
    let d = Interval::new(0.0, 2.0);
    let x = find_interior_minimum(&p, &d, &[0.4]).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-9);
}

#[test]
fn quadratic_boundary_minima_match_hand_values() {
    let p = QuadraticShifted { a: 0.1 };
    let d = build_paper_domain();
    let minima = boundary_minima(&p, &d).unwrap();
    assert_eq!(minima.len(), 2);
    // z1 = (1, 0), V = 0.9; z2 = (-1, 0), V = 1.1.
    assert!((minima[0].position[0] - 1.0).abs() < 1e-6);
    assert!(minima[0].position[1].abs() < 1e-6);
    assert!((minima[0].energy - 0.9).abs() < 1e-9);
    assert!((minima[1].position[0] + 1.0).abs() < 1e-6);
    assert!((minima[1].energy - 1.1).abs() < 1e-9);
    // Normal derivatives 1.9 and 2.1; arc-length second derivative 2.
    assert!((minima[0].normal_derivative - 1.9).abs() < 1e-6);
    assert!((minima[1].normal_derivative - 2.1).abs() < 1e-6);
    assert!((minima[0].boundary_hessian_det - 2.0).abs() < 1e-6);
    assert!((minima[1].boundary_hessian_det - 2.0).abs() < 1e-6);
}

#[test]
fn radially_symmetric_potential_on_disk_is_degenerate() {
    let p = Harmonic { dim: 2 };
    let d = Disk::new(1.0);
    assert!(matches!(
        boundary_minima(&p, &d),
        Err(Error::Degeneracy(_))
    ));
}

#[test]
fn corniche_energy_and_boundary_values() {
    let c = Corniche::standard();
    let d = build_paper_domain();
    let (e, _) = evaluate(&c, &[1.0, 0.0]).unwrap();
    assert!((e + 0.125).abs() < 1e-12);
    let cp = critical_points(&c, &d, &[0.0, 0.0]).unwrap();
    assert!((cp.boundary_minima[0].energy + 0.125).abs() < 1e-9);
    // V(z2) = -8 a(-1)^3 > 0, a small positive number.
    let v2 = cp.boundary_minima[1].energy;
    assert!(v2 > 0.0 && v2 < 0.01, "V(z2) = {v2}");
    assert!(cp.normal_derivative_positive);
    assert!(cp.barrier_assumption);
}

#[test]
fn quadratic_critical_point_flags() {
    let p = QuadraticShifted { a: 0.1 };
    let d = build_paper_domain();
    let cp = critical_points(&p, &d, &[0.3, -0.3]).unwrap();
    assert!(cp.strictly_ordered);
    assert!(cp.normal_derivative_positive);
    // V(z1) - V(x1) = 0.9025 > V(z2) - V(z1) = 0.2.
    assert!(cp.barrier_assumption);
    assert!((cp.interior_hessian_det - 4.0).abs() < 1e-9);
    assert!((cp.interior_energy + 0.0025).abs() < 1e-12);
}

#[test]
fn out_of_domain_start_is_rejected() {
    let p = QuadraticShifted { a: 0.1 };
    let d = build_paper_domain();
    assert!(find_interior_minimum(&p, &d, &[3.0, 0.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Finite-difference gradients agree with analytic ones to 1e-5
    /// relative on random probe points, for every built-in potential.
    #[test]
    fn gradient_consistency_quadratic(x in -1.5f64..1.5, y in -1.5f64..1.5) {
        check_gradient(&QuadraticShifted { a: 0.1 }, &[x, y]);
    }

    #[test]
    fn gradient_consistency_corniche(x in -0.9f64..0.9, y in -1.5f64..1.5) {
        check_gradient(&Corniche::standard(), &[x, y]);
    }

    #[test]
    fn gradient_consistency_double_well(x in -1.8f64..1.8) {
        check_gradient(&DoubleWell1d { h: 1.0 }, &[x]);
    }

    #[test]
    fn gradient_consistency_harmonic(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        check_gradient(&Harmonic { dim: 2 }, &[x, y]);
        check_gradient(&Zero { dim: 2 }, &[x, y]);
    }

    /// Analytic Hessians stay symmetric.
    #[test]
    fn hessian_symmetry(x in -1.2f64..1.2, y in -1.2f64..1.2) {
        let mut h = [0.0; 4];
        Corniche::standard().hessian(&[x, y], &mut h);
        prop_assert!((h[1] - h[2]).abs() <= 1e-12);
    }
}

fn check_gradient<P: Potential>(p: &P, x: &[f64]) {
    let mut ga = vec![0.0; x.len()];
    p.gradient(x, &mut ga);
    let mut gf = vec![0.0; x.len()];
    fd_gradient(p, x, &mut gf);
    let scale = ga.iter().map(|v| v.abs()).fold(1e-4, f64::max);
    for i in 0..x.len() {
        assert!(
            (ga[i] - gf[i]).abs() <= 1e-5 * scale,
            "{} at {:?}: analytic {} vs fd {}",
            p.name(),
            x,
            ga[i],
            gf[i]
        );
    }
}
