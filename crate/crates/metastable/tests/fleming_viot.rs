//! Fleming-Viot integration tests against the analytic Dirichlet ground
//! state on the interval and the spectral oracle on the 2D landscape.

use metastable::fleming_viot::{sample_qsd, time_averaged_histogram, FvEnsemble, FvParams};
use metastable::geometry::{build_paper_domain, Interval};
use metastable::landscape::{QuadraticShifted, Zero};
use metastable::sde::SimulationParams;
use metastable::stats::{histogram, tv_distance};
use metastable::Error;

/// Stationary FV histogram vs the sin(pi x) ground-state density.
#[test]
fn brownian_interval_stationary_density_is_the_sine_mode() {
    let p = Zero { dim: 1 };
    let d = Interval::new(0.0, 1.0);
    let params = SimulationParams::new(1.0, 2e-5, 12);
    let fv = FvParams::new(500);
    let (_, diag) = sample_qsd(&p, &d, &params, &fv, &[0.5]).unwrap();

    // Continue from a fresh converged ensemble and time-average.
    let mut ens = FvEnsemble::new(&d, &params, 500, &[0.5]).unwrap();
    for _ in 0..diag.steps {
        ens.fv_step(&p, &d, &params).unwrap();
    }
    let branchings_before = ens.branching_count;
    let steps_before = ens.step;
    let bins = 50;
    let hist =
        time_averaged_histogram(&mut ens, &p, &d, &params, 30, 1700, 0.0, 1.0, bins).unwrap();
    let reference: Vec<f64> = (0..bins)
        .map(|b| {
            let x = (b as f64 + 0.5) / bins as f64;
            (std::f64::consts::PI * x).sin()
        })
        .collect();
    let total: f64 = reference.iter().sum();
    let reference: Vec<f64> = reference.iter().map(|v| v / total).collect();
    let tv = tv_distance(&hist, &reference);
    assert!(tv <= 0.05, "TV = {tv}");

    // Branching flux over the converged window estimates lambda1 dt within
    // 15% (the exit flux of the stationary Fleming-Viot process equals the
    // QSD exit rate).
    let rate = (ens.branching_count - branchings_before) as f64
        / ((ens.step - steps_before) as f64 * 500.0);
    let expected = std::f64::consts::PI.powi(2) * params.dt;
    assert!(
        (rate - expected).abs() / expected < 0.15,
        "branching rate {rate} vs {expected}"
    );
}

/// QSD sample mean of sin(pi x) matches the analytic pi/4.
#[test]
fn sine_weighted_observable_matches_the_analytic_value() {
    let p = Zero { dim: 1 };
    let d = Interval::new(0.0, 1.0);
    let params = SimulationParams::new(1.0, 2e-5, 77);
    let (pool, _) = sample_qsd(&p, &d, &params, &FvParams::new(1000), &[0.3]).unwrap();
    let mean: f64 = pool
        .iter()
        .map(|x| (std::f64::consts::PI * x[0]).sin())
        .sum::<f64>()
        / pool.len() as f64;
    let analytic = std::f64::consts::FRAC_PI_4;
    // 1000 correlated particles: allow a generous few-sigma band.
    assert!(
        (mean - analytic).abs() < 0.05,
        "mean {mean} vs {analytic}"
    );
}

/// At low temperature the QSD concentrates at the interior minimum.
#[test]
fn quadratic_qsd_mass_concentrates_at_the_minimum() {
    let p = QuadraticShifted { a: 0.1 };
    let d = build_paper_domain();
    let params = SimulationParams::new(30.0, 5e-3, 9);
    let (pool, _) = sample_qsd(&p, &d, &params, &FvParams::new(500), &[0.0, 0.0]).unwrap();
    let mx: f64 = pool.iter().map(|x| x[0]).sum::<f64>() / pool.len() as f64;
    let my: f64 = pool.iter().map(|x| x[1]).sum::<f64>() / pool.len() as f64;
    assert!(
        ((mx - 0.05).powi(2) + my.powi(2)).sqrt() < 0.05,
        "sample mean ({mx}, {my})"
    );
}

/// FV histogram vs spectral QSD on the 2D landscape (x-marginal).
#[test]
fn fv_matches_the_spectral_qsd_marginal() {
    let p = QuadraticShifted { a: 0.1 };
    let d = build_paper_domain();
    let beta = 10.0;
    let params = SimulationParams::new(beta, 5e-3, 2121);
    let (_, diag) = sample_qsd(&p, &d, &params, &FvParams::new(800), &[0.0, 0.0]).unwrap();
    // Replay to the converged point, then average decorrelated snapshots.
    let mut ens = FvEnsemble::new(&d, &params, 800, &[0.0, 0.0]).unwrap();
    for _ in 0..diag.steps {
        ens.fv_step(&p, &d, &params).unwrap();
    }
    let mut xs: Vec<f64> = Vec::new();
    for _ in 0..20 {
        for _ in 0..200 {
            ens.fv_step(&p, &d, &params).unwrap();
        }
        xs.extend((0..ens.n_particles()).map(|i| ens.particle(i)[0]));
    }
    // Bin edges aligned with the spectral grid (h = 0.025, width 0.1).
    let bins = 20;
    let fv_hist = histogram(&xs, -1.0, 1.0, bins);

    let spec = metastable::spectral::solve(&p, &d, beta, 0.025).unwrap();
    let mut ref_hist = vec![0.0f64; bins];
    for (node, q) in spec.nodes.iter().zip(spec.qsd.iter()) {
        let b = (((node[0] + 1.0) / 2.0 * bins as f64).floor() as i64).clamp(0, bins as i64 - 1);
        ref_hist[b as usize] += q;
    }
    let total: f64 = ref_hist.iter().sum();
    for v in &mut ref_hist {
        *v /= total;
    }
    let tv = tv_distance(&fv_hist, &ref_hist);
    assert!(tv < 0.06, "TV = {tv}");
}

#[test]
fn extinction_is_reported() {
    // A huge timestep on a tiny interval kills every particle at once.
    let p = Zero { dim: 1 };
    let d = Interval::new(0.0, 1e-4);
    let params = SimulationParams::new(1.0, 1.0, 5);
    let mut ens = FvEnsemble::new(&d, &params, 8, &[5e-5]).unwrap();
    let mut saw_extinction = false;
    for _ in 0..10 {
        match ens.fv_step(&p, &d, &params) {
            Err(Error::Extinction) => {
                saw_extinction = true;
                break;
            }
            Ok(()) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
    assert!(saw_extinction);
}
