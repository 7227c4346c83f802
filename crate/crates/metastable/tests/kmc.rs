//! Jump-process integration tests: sampling-law exactness at scale and
//! trajectory bookkeeping under random tables.

use metastable::kmc::{kmc_run, kmc_step, RateTable};
use metastable::rng::stream;
use metastable::stats::{chi2_independence, exact_binomial_two_sided, ks_test_cdf};

use proptest::prelude::*;

/// Residence times are Exp(8) and the next-state split is exactly 1:3 for
/// the rates {0->1: 2, 0->2: 6}, tested at one million draws.
#[test]
fn sampling_laws_at_one_million_draws() {
    let mut t = RateTable::new(3);
    t.add_rate(0, 1, 2.0).unwrap();
    t.add_rate(0, 2, 6.0).unwrap();
    let mut rng = stream(8080, 0);
    let n = 1_000_000usize;
    let mut times = Vec::with_capacity(n);
    let mut to2 = 0u64;
    // Independence bookkeeping: quartile of T x next state.
    let mut table_counts = vec![vec![0u64; 2]; 4];
    for _ in 0..n {
        let (dt, j) = kmc_step(&t, 0, &mut rng).unwrap();
        times.push(dt);
        if j == 2 {
            to2 += 1;
        }
    }
    // KS against the exact Exp(8) law.
    let (_, ks_p) = ks_test_cdf(&times, |x| 1.0 - (-8.0 * x).exp());
    assert!(ks_p > 0.01, "KS p = {ks_p}");

    // Mean within 3 sigma of 1/8.
    let mean = times.iter().sum::<f64>() / n as f64;
    let sd_mean = 0.125 / (n as f64).sqrt();
    assert!((mean - 0.125).abs() < 3.0 * sd_mean, "mean = {mean}");

    // Exact binomial two-sided test of the 1:3 split.
    let p = exact_binomial_two_sided(to2, n as u64, 0.75);
    assert!(p > 0.01, "split p = {p} ({to2} of {n})");

    // Independence: chi-square between the T-quartile and the next state.
    let mut sorted = times.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |f: f64| sorted[(n as f64 * f) as usize];
    let (q1, q2, q3) = (q(0.25), q(0.5), q(0.75));
    let mut rng = stream(8080, 0);
    for _ in 0..n {
        let (dt, j) = kmc_step(&t, 0, &mut rng).unwrap();
        let row = if dt <= q1 {
            0
        } else if dt <= q2 {
            1
        } else if dt <= q3 {
            2
        } else {
            3
        };
        table_counts[row][(j == 2) as usize] += 1;
    }
    let (_, _, chi_p) = chi2_independence(&table_counts).unwrap();
    assert!(chi_p > 0.01, "independence p = {chi_p}");
}

#[test]
fn two_state_symmetric_occupation() {
    let mut t = RateTable::new(2);
    t.add_rate(0, 1, 1.0).unwrap();
    t.add_rate(1, 0, 1.0).unwrap();
    let mut rng = stream(4, 9);
    let traj = kmc_run(&t, 0, 20_000.0, &mut rng).unwrap();
    let mut t0 = 0.0;
    for (i, &r) in traj.residence.iter().enumerate() {
        if traj.states[i] == 0 {
            t0 += r;
        }
    }
    let frac = t0 / traj.jump_time;
    // Long-run occupation 1/2 within ~3 sigma of the renewal CLT.
    assert!((frac - 0.5).abs() < 0.02, "occupation {frac}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Trajectory bookkeeping: residences are positive, cumulative time is
    /// consistent, and the right-continuous path reproduces the states.
    #[test]
    fn trajectory_bookkeeping(
        seed in 0u64..10_000,
        k01 in 0.1f64..10.0,
        k12 in 0.1f64..10.0,
        k20 in 0.1f64..10.0,
        horizon in 1.0f64..50.0,
    ) {
        let mut t = RateTable::new(3);
        t.add_rate(0, 1, k01).unwrap();
        t.add_rate(1, 2, k12).unwrap();
        t.add_rate(2, 0, k20).unwrap();
        let mut rng = stream(seed, 3);
        let traj = kmc_run(&t, 0, horizon, &mut rng).unwrap();
        prop_assert!(traj.residence.iter().all(|&r| r > 0.0));
        let sum: f64 = traj.residence.iter().sum();
        prop_assert!((sum - traj.jump_time).abs() <= 1e-12 * sum.max(1.0));
        prop_assert!(traj.jump_time <= horizon);
        // The path is right-continuous piecewise constant over the state list.
        let mut acc = 0.0;
        for (i, &r) in traj.residence.iter().enumerate() {
            prop_assert_eq!(traj.state_at(acc), traj.states[i]);
            prop_assert_eq!(traj.state_at(acc + 0.5 * r), traj.states[i]);
            acc += r;
        }
        // The cycle 0 -> 1 -> 2 -> 0 forces the deterministic skeleton.
        for (i, w) in traj.states.windows(2).enumerate() {
            prop_assert_eq!(w[1], (traj.states[i] + 1) % 3);
        }
    }
}

#[test]
fn csv_export_has_consistent_cumulative_time() {
    let mut t = RateTable::new(2);
    t.add_rate(0, 1, 2.0).unwrap();
    t.add_rate(1, 0, 1.0).unwrap();
    let mut rng = stream(10, 0);
    let traj = kmc_run(&t, 0, 50.0, &mut rng).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let last = text.lines().last().unwrap();
    let cum: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert!((cum - traj.jump_time).abs() < 1e-9);
}
