//! Parallel-replica integration tests: the N-times-minimum law, the exact
//! discrete-time correction, dephasing against the Fleming-Viot QSD, and
//! law invariance of the full loop on the double well.

use metastable::fleming_viot::{sample_qsd, FvParams};
use metastable::geometry::Interval;
use metastable::landscape::{DoubleWell1d, Harmonic};
use metastable::parrep::{
    dephasing_step, discrete_correction, parallel_step, run_parrep, BasinMap, ParRepConfig,
    StateMap,
};
use metastable::rng::stream;
use metastable::sde::{sample_exit, SimulationParams};
use metastable::stats::{ks_test_cdf, ks_two_sample, tv_distance, wilson_ci};
use rand::Rng;

/// N times the minimum of N independent exponentials is exponential with
/// the same rate.
#[test]
fn n_min_of_exponentials_is_exponential() {
    let lambda = 0.7;
    let n_rep = 6usize;
    let mut rng = stream(11, 0);
    let mut draws = Vec::with_capacity(20_000);
    for _ in 0..20_000 {
        let min = (0..n_rep)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln() / lambda)
            .fold(f64::INFINITY, f64::min);
        draws.push(n_rep as f64 * min);
    }
    let (_, p) = ks_test_cdf(&draws, |t| 1.0 - (-lambda * t).exp());
    assert!(p > 0.01, "KS p = {p}");
}

/// The compound variable N (sigma_min - 1) + I* has exactly the geometric
/// law of a single replica: enumeration oracle, then the sampling path.
#[test]
fn discrete_correction_reproduces_the_geometric_law() {
    let p = 0.2f64;
    let q = 1.0 - p;
    let n_rep = 4u64;
    let support = 50usize;

    // Enumeration oracle: k = N(m-1) + i for unique (m, i).
    let mut compound = vec![0.0f64; support];
    let mut geometric = vec![0.0f64; support];
    for k in 1..=support {
        let m = ((k as u64 + n_rep - 1) / n_rep) as f64; // ceil(k / N)
        let i = (k as u64 - 1) % n_rep + 1;
        // P(all j < i exceed m, sigma_i = m, all j > i reach at least m).
        let prob = q.powf(m * (i as f64 - 1.0))
            * (p * q.powf(m - 1.0))
            * q.powf((m - 1.0) * (n_rep - i) as f64);
        compound[k - 1] = prob;
        geometric[k - 1] = p * q.powf(k as f64 - 1.0);
    }
    let tv_exact = tv_distance(&compound, &geometric);
    assert!(tv_exact <= 1e-3, "enumeration TV = {tv_exact:.3e}");
    assert!(tv_exact <= 1e-12, "the identity should be exact: {tv_exact:.3e}");

    // Monte Carlo through the lexicographic-minimum selection and the
    // correction formula, one million draws.
    let mut rng = stream(321, 7);
    let n_draws = 1_000_000usize;
    let mut hist = vec![0.0f64; support];
    let mut total_in_support = 0usize;
    for _ in 0..n_draws {
        let mut sigma_min = u64::MAX;
        let mut i_star = 0u64;
        for i in 1..=n_rep {
            let u: f64 = rng.gen();
            let sigma = ((1.0 - u).ln() / q.ln()).floor() as u64 + 1;
            if sigma < sigma_min {
                sigma_min = sigma;
                i_star = i;
            }
        }
        let k = discrete_correction(n_rep, sigma_min, i_star);
        if (1..=support as u64).contains(&k) {
            hist[(k - 1) as usize] += 1.0;
            total_in_support += 1;
        }
    }
    let mass: f64 = geometric.iter().sum();
    for v in &mut hist {
        *v *= mass / total_in_support as f64;
    }
    let tv_mc = tv_distance(&hist, &geometric);
    // Expected TV from sampling noise alone is ~1.7e-3 at this size.
    assert!(tv_mc <= 3.5e-3, "Monte Carlo TV = {tv_mc:.3e}");
}

/// Dephased endpoints and Fleming-Viot particles target the same QSD.
#[test]
fn dephasing_agrees_with_fleming_viot() {
    let p = Harmonic { dim: 1 };
    let domain = Interval::new(-1.0, 1.0);
    let beta = 6.0;
    let params = SimulationParams::new(beta, 1e-3, 515);
    let (pool, _) = sample_qsd(&p, &domain, &params, &FvParams::new(400), &[0.0]).unwrap();
    let fv_xs: Vec<f64> = pool.iter().map(|x| x[0]).collect();

    let map = StateMap::Domains(vec![Box::new(Interval::new(-1.0, 1.0))]);
    let mut config = ParRepConfig::new(4, 1.5, params);
    config.t_phase = Some(1.5);
    let endpoints = dephasing_step(&p, &map, 0, &[0.0], &config, 400, 42).unwrap();
    let de_xs: Vec<f64> = endpoints.iter().map(|x| x[0]).collect();

    let (_, ks_p) = ks_two_sample(&fv_xs, &de_xs);
    assert!(ks_p > 0.01, "two-sample KS p = {ks_p}");
}

/// Dephased endpoints are exchangeable: the first and second half of the
/// accepted sequence have the same law.
#[test]
fn dephased_endpoints_are_exchangeable() {
    let p = Harmonic { dim: 1 };
    let params = SimulationParams::new(5.0, 1e-3, 99);
    let map = StateMap::Domains(vec![Box::new(Interval::new(-1.0, 1.0))]);
    let mut config = ParRepConfig::new(4, 1.0, params);
    config.t_phase = Some(1.0);
    let endpoints = dephasing_step(&p, &map, 0, &[0.1], &config, 600, 3).unwrap();
    let xs: Vec<f64> = endpoints.iter().map(|x| x[0]).collect();
    let (_, ks_p) = ks_two_sample(&xs[..300], &xs[300..]);
    assert!(ks_p > 0.01, "halves differ: KS p = {ks_p}");
}

/// With one replica the parallel step is a direct simulation: same law of
/// exit times as plain exit sampling from the same start.
#[test]
fn single_replica_parallel_step_has_the_direct_law() {
    let p = Harmonic { dim: 1 };
    let domain = Interval::new(-0.8, 0.8);
    let beta = 6.0;
    let params = SimulationParams::new(beta, 2e-3, 808);
    let map = StateMap::Domains(vec![Box::new(Interval::new(-0.8, 0.8))]);
    let config = ParRepConfig::new(1, 0.5, params);

    let n = 3000;
    let mut par_times = Vec::with_capacity(n);
    for k in 0..n {
        let exit = parallel_step(&p, &map, 0, &[vec![0.0]], &config, 1000 + k as u64).unwrap();
        par_times.push(exit.clock_advance);
    }
    let mut direct_times = Vec::with_capacity(n);
    for k in 0..n {
        let ev = sample_exit(&p, &domain, &params, &[0.0], 50_000 + k as u64).unwrap();
        direct_times.push(ev.exit_time);
    }
    let (_, ks_p) = ks_two_sample(&par_times, &direct_times);
    assert!(ks_p > 0.01, "KS p = {ks_p}");
}

/// Full-loop law invariance on the double well: residence times and
/// transition counts agree between N = 1 and N = 8.
#[test]
fn double_well_state_dynamics_is_invariant_in_replica_count() {
    let p = DoubleWell1d { h: 1.0 };
    let beta = 2.5;
    let t_end = 6000.0;

    let run = |n_replicas: usize, seed: u64| {
        let params = SimulationParams::new(beta, 5e-3, seed);
        let mut map = StateMap::Basins(BasinMap::new(0.05, 1e-6, 1e-3));
        let config = ParRepConfig::new(n_replicas, 0.4, params);
        run_parrep(&p, &mut map, &config, &[1.0], t_end).unwrap()
    };
    let a = run(1, 1001);
    let b = run(8, 2002);

    let res_a: Vec<f64> = a.segments.iter().map(|s| s.residence).collect();
    let res_b: Vec<f64> = b.segments.iter().map(|s| s.residence).collect();
    assert!(
        res_a.len() >= 150 && res_b.len() >= 150,
        "not enough transitions: {} and {}",
        res_a.len(),
        res_b.len()
    );
    let (_, ks_p) = ks_two_sample(&res_a, &res_b);
    assert!(ks_p > 0.01, "residence-time KS p = {ks_p}");

    // Transition counts per unit time agree within the binomial band.
    let rate_a = res_a.len() as f64 / a.total_time;
    let rate_b = res_b.len() as f64 / b.total_time;
    let rel = (rate_a - rate_b).abs() / rate_a;
    let band = 3.0 * (1.0 / res_a.len() as f64 + 1.0 / res_b.len() as f64).sqrt();
    assert!(rel < band, "rates {rate_a:.4} vs {rate_b:.4} (band {band:.3})");

    // Both wells are visited evenly.
    let left_a = a.segments.iter().filter(|s| s.state == 1).count() as u64;
    let (lo, hi) = wilson_ci(left_a, res_a.len() as u64, 3.5);
    assert!(lo <= 0.5 && 0.5 <= hi, "well occupancy CI [{lo}, {hi}]");

    // The accelerated run reports a real speedup with 8 replicas.
    assert!(b.speedup > 1.5, "speedup {}", b.speedup);
}

/// Adaptive mode: the Fleming-Viot stationarity detector drives the loop.
#[test]
fn adaptive_mode_produces_exits() {
    let p = Harmonic { dim: 1 };
    let params = SimulationParams::new(5.0, 2e-3, 31);
    let map_domains: Vec<Box<dyn metastable::geometry::Domain>> =
        vec![Box::new(Interval::new(-1.0, 1.0))];
    let mut map = StateMap::Domains(map_domains);
    let mut config = ParRepConfig::new(6, 0.5, params);
    config.adaptive = Some(FvParams::new(5));
    let traj = run_parrep(&p, &mut map, &config, &[0.0], 200.0).unwrap();
    assert!(traj.total_time >= 200.0);
    assert!(!traj.segments.is_empty());
    assert!(traj.segments.iter().all(|s| s.residence > 0.0));
}
