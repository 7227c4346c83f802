//! Euler-Maruyama integration of the overdamped dynamics
//! `dX = -grad V(X) dt + sqrt(2/beta) dW` and raw exit-event sampling.
//!
//! Exit times use the plain discrete convention: the exit time is the first
//! discrete time at which the trajectory is outside S, with no boundary
//! interpolation. The O(sqrt(dt)) bias this induces is controlled by
//! timestep studies in the harness.

use rand::Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::geometry::{classify_exit, Domain};
use crate::landscape::Potential;
use crate::rng::stream;
use crate::{check_dim, Error, Result};

/// Parameters of one simulation: inverse temperature, timestep, budget, seed.
/// `gamma` is the friction used only by the underdamped prefactor formula.
#[derive(Debug, Clone, Copy)]
pub struct SimulationParams {
    pub beta: f64,
    pub dt: f64,
    pub max_steps: u64,
    pub seed: u64,
    pub gamma: f64,
}

impl SimulationParams {
    pub fn new(beta: f64, dt: f64, seed: u64) -> Self {
        SimulationParams {
            beta,
            dt,
            max_steps: u64::MAX / 2,
            seed,
            gamma: 1.0,
        }
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 || self.dt <= 0.0 || self.max_steps == 0 {
            return Err(Error::Input(format!(
                "simulation parameters out of range: beta={}, dt={}, max_steps={}",
                self.beta, self.dt, self.max_steps
            )));
        }
        Ok(())
    }

    /// Noise amplitude per step, `sqrt(2 dt / beta)`.
    #[inline]
    pub fn noise_scale(&self) -> f64 {
        (2.0 * self.dt / self.beta).sqrt()
    }
}

/// One sampled exit: the pair (exit time, exit position) plus bookkeeping.
#[derive(Debug, Clone)]
pub struct ExitEvent {
    pub replica_id: u64,
    /// First discrete time outside S, `steps * dt`.
    pub exit_time: f64,
    pub steps: u64,
    /// The raw trajectory point outside S.
    pub exit_position: Vec<f64>,
    /// Index into `domain.regions()`.
    pub region: usize,
    /// Segment-boundary crossing point, for diagnostics.
    pub crossing: Vec<f64>,
}

/// One Euler-Maruyama update with an externally supplied noise vector.
pub fn em_step<P: Potential + ?Sized>(
    potential: &P,
    params: &SimulationParams,
    x: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>> {
    check_dim(potential.dim(), x.len())?;
    check_dim(potential.dim(), noise.len())?;
    let mut g = vec![0.0; x.len()];
    potential.gradient(x, &mut g);
    let s = params.noise_scale();
    let out: Vec<f64> = (0..x.len())
        .map(|i| x[i] - g[i] * params.dt + s * noise[i])
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("em_step from {x:?}")));
    }
    Ok(out)
}

#[inline]
fn advance<const D: usize, P: Potential>(
    potential: &P,
    dt: f64,
    sig: f64,
    x: &mut [f64; D],
    g: &mut [f64; D],
    rng: &mut Xoshiro256PlusPlus,
) {
    potential.gradient(&x[..], &mut g[..]);
    for i in 0..D {
        let n: f64 = rng.sample(StandardNormal);
        x[i] += sig * n - g[i] * dt;
    }
}

fn run_exit<const D: usize, P: Potential, Dm: Domain + ?Sized>(
    potential: &P,
    domain: &Dm,
    params: &SimulationParams,
    x0: &[f64],
    replica_id: u64,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<ExitEvent> {
    let mut x = [0.0f64; D];
    x.copy_from_slice(x0);
    let mut g = [0.0f64; D];
    let mut prev;
    let dt = params.dt;
    let sig = params.noise_scale();
    let mut step: u64 = 0;
    loop {
        prev = x;
        advance(potential, dt, sig, &mut x, &mut g, rng);
        step += 1;
        if !domain.contains(&x) {
            break;
        }
        if step >= params.max_steps {
            return Err(Error::Timeout {
                steps: step,
                state: x.to_vec(),
            });
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "trajectory diverged after {step} steps"
        )));
    }
    let (region, crossing) = classify_exit(domain, &prev, &x)?;
    Ok(ExitEvent {
        replica_id,
        exit_time: step as f64 * dt,
        steps: step,
        exit_position: x.to_vec(),
        region,
        crossing,
    })
}

/// Samples one exit event starting from `x0` (which must be inside S),
/// using the replica stream `(params.seed, replica_id)`.
pub fn sample_exit<P: Potential, Dm: Domain + ?Sized>(
    potential: &P,
    domain: &Dm,
    params: &SimulationParams,
    x0: &[f64],
    replica_id: u64,
) -> Result<ExitEvent> {
    params.validate()?;
    check_dim(potential.dim(), x0.len())?;
    if !domain.contains(x0) {
        return Err(Error::Input(format!("start point {x0:?} is not inside S")));
    }
    let mut rng = stream(params.seed, replica_id);
    match potential.dim() {
        1 => run_exit::<1, _, _>(potential, domain, params, x0, replica_id, &mut rng),
        2 => run_exit::<2, _, _>(potential, domain, params, x0, replica_id, &mut rng),
        3 => run_exit::<3, _, _>(potential, domain, params, x0, replica_id, &mut rng),
        d => Err(Error::Input(format!("unsupported dimension {d}"))),
    }
}

/// Samples one exit per initial position, in parallel. Replica `i` draws from
/// the stream `(params.seed, i)`, so results are independent of the worker
/// count and arrive in input order.
pub fn sample_exit_ensemble<P: Potential, Dm: Domain + Sync + ?Sized>(
    potential: &P,
    domain: &Dm,
    params: &SimulationParams,
    initial: &[Vec<f64>],
) -> Result<Vec<ExitEvent>> {
    params.validate()?;
    for x0 in initial {
        if !domain.contains(x0) {
            return Err(Error::Input(format!("start point {x0:?} is not inside S")));
        }
    }
    initial
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            sample_exit(potential, domain, params, x0, i as u64)
                .map_err(|e| Error::Input(format!("replica {i}: {e}")))
        })
        .collect()
}

/// Budgeted variant: stops launching new replicas once `deadline` has passed
/// and returns however many events completed. Used only by the harness for
/// criteria whose full sample size exceeds the compute budget; the event
/// *count* then depends on wall-clock speed, though each individual event is
/// still reproducible from `(seed, replica_id)`.
pub fn sample_exit_ensemble_budgeted<P: Potential, Dm: Domain + Sync + ?Sized>(
    potential: &P,
    domain: &Dm,
    params: &SimulationParams,
    initial: &[Vec<f64>],
    deadline: std::time::Instant,
) -> Vec<ExitEvent> {
    let out: Vec<Option<ExitEvent>> = initial
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            if std::time::Instant::now() >= deadline {
                return None;
            }
            sample_exit(potential, domain, params, x0, i as u64).ok()
        })
        .collect();
    out.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_paper_domain, Interval};
    use crate::landscape::{Harmonic, QuadraticShifted, Zero};

    #[test]
    fn em_step_constant_potential_zero_noise_is_identity() {
        let p = Zero { dim: 2 };
        let params = SimulationParams::new(1.0, 0.1, 0);
        let x = em_step(&p, &params, &[0.3, -0.2], &[0.0, 0.0]).unwrap();
        assert_eq!(x, vec![0.3, -0.2]);
    }

    #[test]
    fn em_step_harmonic_deterministic() {
        let p = Harmonic { dim: 1 };
        let params = SimulationParams::new(7.0, 0.1, 0);
        let x = em_step(&p, &params, &[1.0], &[0.0]).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn em_step_quadratic_drift_at_origin() {
        let p = QuadraticShifted { a: 0.1 };
        let params = SimulationParams::new(1.0, 0.01, 0);
        let x = em_step(&p, &params, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((x[0] - 0.001).abs() < 1e-15);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn sample_exit_rejects_outside_start() {
        let p = QuadraticShifted { a: 0.1 };
        let d = build_paper_domain();
        let params = SimulationParams::new(1.0, 1e-3, 1);
        assert!(matches!(
            sample_exit(&p, &d, &params, &[2.0, 0.0], 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn exit_time_equals_steps_times_dt() {
        let p = Zero { dim: 1 };
        let d = Interval::new(0.0, 1.0);
        let params = SimulationParams::new(2.0, 1e-4, 99);
        let ev = sample_exit(&p, &d, &params, &[0.5], 0).unwrap();
        assert!((ev.exit_time - ev.steps as f64 * params.dt).abs() < 1e-12);
        assert!(!d.contains(&ev.exit_position));
    }

    #[test]
    fn ensemble_matches_single_replica() {
        let p = Zero { dim: 1 };
        let d = Interval::new(0.0, 1.0);
        let params = SimulationParams::new(2.0, 1e-4, 123);
        let single = sample_exit(&p, &d, &params, &[0.5], 0).unwrap();
        let ens = sample_exit_ensemble(&p, &d, &params, &[vec![0.5]]).unwrap();
        assert_eq!(ens.len(), 1);
        assert_eq!(ens[0].steps, single.steps);
        assert_eq!(ens[0].exit_position, single.exit_position);
        assert_eq!(ens[0].replica_id, 0);
    }

    #[test]
    fn timeout_carries_state() {
        let p = Harmonic { dim: 1 };
        let d = Interval::new(-50.0, 50.0);
        let params = SimulationParams::new(1000.0, 1e-5, 5).with_max_steps(100);
        match sample_exit(&p, &d, &params, &[0.0], 0) {
            Err(Error::Timeout { steps, state }) => {
                assert_eq!(steps, 100);
                assert_eq!(state.len(), 1);
            }
            other => panic!("expected timeout, got {other:?}"),
        }
    }
}
