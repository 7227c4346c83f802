//! The Parallel Replica algorithm: a reference walker follows the exact
//! dynamics until it stays trapped in one state for a decorrelation time;
//! N replicas are then dephased into the state's quasi-stationary
//! distribution by rejection (or by a Fleming-Viot process in adaptive mode)
//! and evolved independently, and the first exit among them advances the
//! clock by N times its local exit time (with the exact geometric-law
//! correction in discrete time).

use rand::Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::fleming_viot::{FvEnsemble, FvParams, GelmanRubin};
use crate::geometry::Domain;
use crate::landscape::Potential;
use crate::rng::{stream, substream};
use crate::sde::SimulationParams;
use crate::{Error, Result};

const REF_STREAM: u64 = 0x5ef5_0001;
const DEPHASE_SALT: u64 = 0x0de0_0002;
const PARALLEL_SALT: u64 = 0x9a11_0003;

// ---------------------------------------------------------------------------
// State maps
// ---------------------------------------------------------------------------

/// Labels configurations by gradient descent to local minima. Minima are
/// registered on discovery with a dedup radius, so labels are stable and
/// the registry only grows.
#[derive(Debug, Clone)]
pub struct BasinMap {
    pub descent_step: f64,
    pub grad_tol: f64,
    pub dedup_radius: f64,
    registry: Vec<Vec<f64>>,
}

impl BasinMap {
    pub fn new(descent_step: f64, grad_tol: f64, dedup_radius: f64) -> Self {
        BasinMap {
            descent_step,
            grad_tol,
            dedup_radius,
            registry: Vec::new(),
        }
    }

    pub fn registry(&self) -> &[Vec<f64>] {
        &self.registry
    }

    fn descend<P: Potential + ?Sized>(&self, potential: &P, x: &[f64]) -> Option<Vec<f64>> {
        let d = x.len();
        let mut y = x.to_vec();
        let mut g = vec![0.0; d];
        let mut step = self.descent_step;
        let mut e = potential.energy(&y);
        for _ in 0..100_000 {
            // Early accept once we are within reach of a known minimum.
            for m in &self.registry {
                let d2: f64 = m.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2.sqrt() < self.dedup_radius {
                    return Some(m.clone());
                }
            }
            potential.gradient(&y, &mut g);
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm < self.grad_tol {
                return Some(y);
            }
            let mut trial = y.clone();
            for i in 0..d {
                trial[i] -= step * g[i];
            }
            let et = potential.energy(&trial);
            if et <= e {
                y = trial;
                e = et;
                step = (step * 1.2).min(self.descent_step * 10.0);
            } else {
                step *= 0.5;
                if step < 1e-14 {
                    return Some(y);
                }
            }
        }
        None
    }

    /// Label of `x`, registering a fresh minimum when needed.
    pub fn label<P: Potential + ?Sized>(&mut self, potential: &P, x: &[f64]) -> Option<u32> {
        let m = self.descend(potential, x)?;
        for (i, r) in self.registry.iter().enumerate() {
            let d2: f64 = r.iter().zip(m.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2.sqrt() < self.dedup_radius {
                return Some(i as u32);
            }
        }
        self.registry.push(m);
        Some((self.registry.len() - 1) as u32)
    }

    /// Read-only membership test against an already registered state.
    pub fn in_state<P: Potential + ?Sized>(&self, potential: &P, state: u32, x: &[f64]) -> bool {
        match self.descend(potential, x) {
            Some(m) => {
                let r = &self.registry[state as usize];
                let d2: f64 = r.iter().zip(m.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() < self.dedup_radius
            }
            None => false,
        }
    }
}

/// Maps configurations to state labels.
pub enum StateMap {
    /// Explicit list of (possibly non-exhaustive) disjoint domains.
    Domains(Vec<Box<dyn Domain>>),
    /// Basins of attraction of the gradient flow.
    Basins(BasinMap),
}

impl StateMap {
    /// Labels `x`; `None` when no state covers it (or descent failed).
    /// Basins mode registers newly discovered minima.
    pub fn label<P: Potential + ?Sized>(&mut self, potential: &P, x: &[f64]) -> Option<u32> {
        match self {
            StateMap::Domains(list) => list
                .iter()
                .position(|d| d.contains(x))
                .map(|i| i as u32),
            StateMap::Basins(b) => b.label(potential, x),
        }
    }

    /// Read-only test that `x` still belongs to `state`.
    pub fn in_state<P: Potential + ?Sized>(&self, potential: &P, state: u32, x: &[f64]) -> bool {
        match self {
            StateMap::Domains(list) => list
                .get(state as usize)
                .map_or(false, |d| d.contains(x)),
            StateMap::Basins(b) => b.in_state(potential, state, x),
        }
    }

    pub fn state_domain(&self, state: u32) -> Option<&dyn Domain> {
        match self {
            StateMap::Domains(list) => list.get(state as usize).map(|b| b.as_ref()),
            StateMap::Basins(_) => None,
        }
    }
}

/// Presents one basin as a `Domain` so the Fleming-Viot process can run in
/// adaptive mode without explicit state geometry.
struct BasinDomain<'a, P: Potential> {
    map: &'a BasinMap,
    potential: &'a P,
    state: u32,
    dim: usize,
}

impl<'a, P: Potential> Domain for BasinDomain<'a, P> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn contains(&self, x: &[f64]) -> bool {
        self.map.in_state(self.potential, self.state, x)
    }
    fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1e9; self.dim], vec![1e9; self.dim])
    }
    fn regions(&self) -> &[crate::geometry::Region] {
        &[]
    }
}

// ---------------------------------------------------------------------------
// Configuration and outputs
// ---------------------------------------------------------------------------

/// Knobs of the accelerated run.
#[derive(Debug, Clone)]
pub struct ParRepConfig {
    pub n_replicas: usize,
    /// Decorrelation window. The dephasing window defaults to the same value.
    pub t_corr: f64,
    pub t_phase: Option<f64>,
    /// Per-state decorrelation overrides `(state, t_corr)`.
    pub per_state_t_corr: Vec<(u32, f64)>,
    /// When set, the Fleming-Viot process with the Gelman-Rubin diagnostic
    /// replaces both windows: stationarity is detected on the fly.
    pub adaptive: Option<FvParams>,
    pub params: SimulationParams,
    /// Exact discrete-time clock correction `dt (N (sigma-1) + I*)` instead
    /// of the continuous-time `N sigma dt`.
    pub discrete_clock: bool,
    pub max_steps_per_phase: u64,
}

impl ParRepConfig {
    pub fn new(n_replicas: usize, t_corr: f64, params: SimulationParams) -> Self {
        ParRepConfig {
            n_replicas,
            t_corr,
            t_phase: None,
            per_state_t_corr: Vec::new(),
            adaptive: None,
            params,
            discrete_clock: true,
            max_steps_per_phase: u64::MAX / 4,
        }
    }

    fn t_corr_for(&self, state: u32) -> f64 {
        self.per_state_t_corr
            .iter()
            .find(|(s, _)| *s == state)
            .map(|(_, t)| *t)
            .unwrap_or(self.t_corr)
    }

    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_replicas == 0 {
            return Err(Error::Input("need at least one replica".into()));
        }
        if self.adaptive.is_none() && self.t_corr <= 0.0 {
            return Err(Error::Input("t_corr must be positive in fixed mode".into()));
        }
        Ok(())
    }
}

/// One sojourn of the coarse trajectory.
#[derive(Debug, Clone)]
pub struct Segment {
    pub state: u32,
    pub residence: f64,
    pub exit_position: Vec<f64>,
}

/// The accelerated state-to-state trajectory with speedup accounting.
#[derive(Debug, Clone, Default)]
pub struct StateToStateTrajectory {
    pub segments: Vec<Segment>,
    /// Total simulated physical time.
    pub total_time: f64,
    /// Wall-clock-equivalent steps: sequential reference steps plus the
    /// per-worker share of the parallel phases.
    pub wall_steps: u64,
    /// Total integrator steps across all workers.
    pub work_steps: u64,
    /// Simulated steps (total_time / dt) divided by wall-equivalent steps.
    pub speedup: f64,
}

/// Outcome of one parallel step.
#[derive(Debug, Clone)]
pub struct ParallelExit {
    /// First-exit step count of the winning replica (1-based step index).
    pub sigma_min: u64,
    /// Winning replica, 0-based.
    pub winner: usize,
    /// Clock advance, already N-corrected.
    pub clock_advance: f64,
    pub last_inside: Vec<f64>,
    pub exit_position: Vec<f64>,
    /// Steps actually taken summed over replicas.
    pub work_steps: u64,
}

/// Exact discrete-time clock correction: with `sigma_min` the first-exit
/// step count and `i_star` the 1-based index of the first replica attaining
/// it, `N (sigma_min - 1) + i_star` is distributed like a single replica's
/// geometric exit step count.
pub fn discrete_correction(n_replicas: u64, sigma_min: u64, i_star: u64) -> u64 {
    n_replicas * (sigma_min - 1) + i_star
}

// ---------------------------------------------------------------------------
// The three phases
// ---------------------------------------------------------------------------

struct VisitLog {
    state: Option<u32>,
    steps: u64,
    /// Position when the visit ended (transition point or trap position).
    end_position: Vec<f64>,
}

enum DecorrelationOutcome {
    Trapped {
        state: u32,
        position: Vec<f64>,
    },
    HorizonReached {
        position: Vec<f64>,
    },
}

/// Evolves the reference replica with the exact dynamics until it stays in
/// one state for the decorrelation window (or the step horizon is reached).
/// Appends per-state visit durations to `visits`.
fn decorrelate<const D: usize, P: Potential>(
    potential: &P,
    map: &mut StateMap,
    config: &ParRepConfig,
    x: &[f64],
    rng: &mut Xoshiro256PlusPlus,
    max_steps: u64,
    visits: &mut Vec<VisitLog>,
) -> Result<(DecorrelationOutcome, u64)> {
    let dt = config.params.dt;
    let sig = config.params.noise_scale();
    let mut pos = [0.0f64; D];
    pos.copy_from_slice(x);
    let mut g = [0.0f64; D];
    let mut current = map.label(potential, &pos);
    let mut trap_steps: u64 = 0;
    let mut visit_steps: u64 = 0;
    let mut total: u64 = 0;
    loop {
        if let Some(state) = current {
            let need = (config.t_corr_for(state) / dt).round().max(1.0) as u64;
            if trap_steps >= need {
                visits.push(VisitLog {
                    state: current,
                    steps: visit_steps,
                    end_position: pos.to_vec(),
                });
                return Ok((
                    DecorrelationOutcome::Trapped {
                        state,
                        position: pos.to_vec(),
                    },
                    total,
                ));
            }
        }
        if total >= max_steps {
            visits.push(VisitLog {
                state: current,
                steps: visit_steps,
                end_position: pos.to_vec(),
            });
            return Ok((
                DecorrelationOutcome::HorizonReached {
                    position: pos.to_vec(),
                },
                total,
            ));
        }
        potential.gradient(&pos, &mut g[..]);
        for i in 0..D {
            let n: f64 = rng.sample(StandardNormal);
            pos[i] += sig * n - g[i] * dt;
        }
        if pos.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "reference trajectory diverged after {total} steps"
            )));
        }
        total += 1;
        visit_steps += 1;
        trap_steps += 1;
        let label = if map.in_state_fast(potential, current, &pos) {
            current
        } else {
            let l = map.label(potential, &pos);
            if l != current {
                visits.push(VisitLog {
                    state: current,
                    steps: visit_steps,
                    end_position: pos.to_vec(),
                });
                visit_steps = 0;
                trap_steps = 0;
            }
            l
        };
        current = label;
    }
}

impl StateMap {
    /// Fast-path re-check that `x` is still in `state` without registry access.
    fn in_state_fast<P: Potential + ?Sized>(
        &self,
        potential: &P,
        state: Option<u32>,
        x: &[f64],
    ) -> bool {
        match state {
            Some(s) => self.in_state(potential, s, x),
            None => false,
        }
    }
}

/// Rejection-samples `n_needed` configurations from the QSD of `state`:
/// independent trajectories of length `t_phase` started at `seed_pos`,
/// keeping the endpoints of those that never left. Attempts are indexed
/// deterministically, so the accepted set does not depend on scheduling.
pub fn dephasing_step<P: Potential>(
    potential: &P,
    map: &StateMap,
    state: u32,
    seed_pos: &[f64],
    config: &ParRepConfig,
    n_needed: usize,
    nonce: u64,
) -> Result<Vec<Vec<f64>>> {
    let t_phase = config.t_phase.unwrap_or(config.t_corr);
    let steps = (t_phase / config.params.dt).round() as u64;
    if steps == 0 || n_needed == 0 {
        return Ok(vec![seed_pos.to_vec(); n_needed]);
    }
    let dim = potential.dim();
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(n_needed);
    let mut attempt_base: u64 = 0;
    let batch = (4 * n_needed.max(8)) as u64;
    let mut attempts_total: u64 = 0;
    loop {
        let results: Vec<Option<Vec<f64>>> = (attempt_base..attempt_base + batch)
            .into_par_iter()
            .map(|k| {
                let mut rng = substream(config.params.seed, DEPHASE_SALT ^ nonce, k);
                let mut pos = seed_pos.to_vec();
                let mut g = vec![0.0f64; dim];
                let dt = config.params.dt;
                let sig = config.params.noise_scale();
                for _ in 0..steps {
                    potential.gradient(&pos, &mut g);
                    for i in 0..dim {
                        let n: f64 = rng.sample(StandardNormal);
                        pos[i] += sig * n - g[i] * dt;
                    }
                    if !map.in_state(potential, state, &pos) {
                        return None;
                    }
                }
                Some(pos)
            })
            .collect();
        attempts_total += batch;
        for r in results {
            if let Some(p) = r {
                accepted.push(p);
                if accepted.len() == n_needed {
                    return Ok(accepted);
                }
            }
        }
        attempt_base += batch;
        if attempts_total >= 2000 {
            let rate = accepted.len() as f64 / attempts_total as f64;
            if rate < 1e-3 {
                return Err(Error::PathologicalState { rate, min: 1e-3 });
            }
        }
        if attempts_total > 100_000_000 {
            return Err(Error::Convergence("dephasing attempt budget exhausted".into()));
        }
    }
}

/// Evolves `positions.len()` replicas independently until the first exit from
/// `state` and returns the N-corrected clock advance together with the
/// winning replica's crossing pair.
///
/// Replicas advance in lockstep blocks; the winner is the lexicographic
/// minimum of (exit step, replica index), which the discrete-time correction
/// requires.
pub fn parallel_step<P: Potential>(
    potential: &P,
    map: &StateMap,
    state: u32,
    positions: &[Vec<f64>],
    config: &ParRepConfig,
    nonce: u64,
) -> Result<ParallelExit> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::Input("parallel step needs at least one replica".into()));
    }
    match potential.dim() {
        1 => parallel_step_d::<1, P>(potential, map, state, positions, config, nonce),
        2 => parallel_step_d::<2, P>(potential, map, state, positions, config, nonce),
        3 => parallel_step_d::<3, P>(potential, map, state, positions, config, nonce),
        d => Err(Error::Input(format!("unsupported dimension {d}"))),
    }
}

struct ReplicaExit {
    step: u64,
    last_inside: Vec<f64>,
    exit_position: Vec<f64>,
}

fn parallel_step_d<const D: usize, P: Potential>(
    potential: &P,
    map: &StateMap,
    state: u32,
    positions: &[Vec<f64>],
    config: &ParRepConfig,
    nonce: u64,
) -> Result<ParallelExit> {
    let n = positions.len();
    let dt = config.params.dt;
    let sig = config.params.noise_scale();
    const BLOCK: u64 = 1024;

    struct Walker<const D: usize> {
        pos: [f64; D],
        rng: Xoshiro256PlusPlus,
        exit: Option<ReplicaExit>,
        steps_taken: u64,
    }
    let mut walkers: Vec<Walker<D>> = positions
        .iter()
        .enumerate()
        .map(|(r, p)| {
            let mut pos = [0.0f64; D];
            pos.copy_from_slice(p);
            Walker {
                pos,
                rng: substream(config.params.seed, PARALLEL_SALT ^ nonce, r as u64),
                exit: None,
                steps_taken: 0,
            }
        })
        .collect();

    let mut base: u64 = 0;
    loop {
        walkers.par_iter_mut().for_each(|w| {
            if w.exit.is_some() {
                return;
            }
            let mut g = [0.0f64; D];
            for k in 1..=BLOCK {
                potential.gradient(&w.pos, &mut g[..]);
                let prev = w.pos;
                for i in 0..D {
                    let nse: f64 = w.rng.sample(StandardNormal);
                    w.pos[i] += sig * nse - g[i] * dt;
                }
                w.steps_taken += 1;
                if !map.in_state(potential, state, &w.pos) {
                    w.exit = Some(ReplicaExit {
                        step: base + k,
                        last_inside: prev.to_vec(),
                        exit_position: w.pos.to_vec(),
                    });
                    return;
                }
            }
        });
        base += BLOCK;
        // Lexicographic minimum of (exit step, replica index).
        let winner = walkers
            .iter()
            .enumerate()
            .filter_map(|(r, w)| w.exit.as_ref().map(|e| (e.step, r)))
            .min();
        if let Some((sigma_min, r)) = winner {
            let work_steps = walkers.iter().map(|w| w.steps_taken).sum();
            let e = walkers[r].exit.take().unwrap();
            let i_star = (r + 1) as u64;
            let clock_advance = if config.discrete_clock {
                discrete_correction(n as u64, sigma_min, i_star) as f64 * dt
            } else {
                n as f64 * sigma_min as f64 * dt
            };
            return Ok(ParallelExit {
                sigma_min,
                winner: r,
                clock_advance,
                last_inside: e.last_inside,
                exit_position: e.exit_position,
                work_steps,
            });
        }
        if base >= config.max_steps_per_phase {
            return Err(Error::Timeout {
                steps: base,
                state: walkers[0].pos.to_vec(),
            });
        }
    }
}

// ---------------------------------------------------------------------------
// The full loop
// ---------------------------------------------------------------------------

/// Runs the accelerated dynamics from `x0` until the physical clock reaches
/// `t_end`, alternating decorrelation, dephasing (or the Fleming-Viot
/// stationarity detection in adaptive mode) and the parallel step.
pub fn run_parrep<P: Potential>(
    potential: &P,
    map: &mut StateMap,
    config: &ParRepConfig,
    x0: &[f64],
    t_end: f64,
) -> Result<StateToStateTrajectory> {
    config.validate()?;
    match potential.dim() {
        1 => run_parrep_d::<1, P>(potential, map, config, x0, t_end),
        2 => run_parrep_d::<2, P>(potential, map, config, x0, t_end),
        d => Err(Error::Input(format!("unsupported dimension {d}"))),
    }
}

fn run_parrep_d<const D: usize, P: Potential>(
    potential: &P,
    map: &mut StateMap,
    config: &ParRepConfig,
    x0: &[f64],
    t_end: f64,
) -> Result<StateToStateTrajectory> {
    let dt = config.params.dt;
    let mut traj = StateToStateTrajectory::default();
    let mut clock = 0.0f64;
    let mut wall: u64 = 0;
    let mut work: u64 = 0;
    let mut x = x0.to_vec();
    let mut rng_ref = stream(config.params.seed, REF_STREAM);
    let mut nonce: u64 = 0;

    // Segment folding: merge consecutive equal labels.
    let mut cur: Option<(u32, f64)> = None;
    let push_time = |traj: &mut StateToStateTrajectory,
                         cur: &mut Option<(u32, f64)>,
                         state: Option<u32>,
                         time: f64,
                         pos: &[f64]| {
        match (cur.as_mut(), state) {
            (Some((s, acc)), Some(ns)) if *s == ns => *acc += time,
            (Some((s, acc)), _) => {
                traj.segments.push(Segment {
                    state: *s,
                    residence: *acc,
                    exit_position: pos.to_vec(),
                });
                *cur = state.map(|ns| (ns, time));
            }
            (None, Some(ns)) => *cur = Some((ns, time)),
            (None, None) => {}
        }
    };

    while clock < t_end {
        let remaining_steps = (((t_end - clock) / dt).ceil() as u64).max(1);

        if let Some(fv_params) = &config.adaptive {
            // Generalized variant: reference evolves while a Fleming-Viot
            // ensemble relaxes inside the current state.
            let label0 = map.label(potential, &x);
            let Some(state) = label0 else {
                // Outside every state: plain exact dynamics until a state
                // is entered again.
                let mut visits = Vec::new();
                let (outcome, steps) = decorrelate::<D, P>(
                    potential,
                    map,
                    config,
                    &x,
                    &mut rng_ref,
                    remaining_steps,
                    &mut visits,
                )?;
                for v in &visits {
                    push_time(
                        &mut traj,
                        &mut cur,
                        v.state,
                        v.steps as f64 * dt,
                        &v.end_position,
                    );
                }
                clock += steps as f64 * dt;
                wall += steps;
                work += steps;
                x = match outcome {
                    DecorrelationOutcome::Trapped { position, .. } => position,
                    DecorrelationOutcome::HorizonReached { position } => position,
                };
                continue;
            };
            let outcome = adaptive_decorrelate::<D, P>(
                potential,
                map,
                config,
                fv_params,
                state,
                &x,
                &mut rng_ref,
                remaining_steps,
            )?;
            clock += outcome.steps as f64 * dt;
            wall += outcome.steps;
            work += outcome.steps * (1 + fv_params.n_particles as u64);
            push_time(
                &mut traj,
                &mut cur,
                Some(state),
                outcome.steps as f64 * dt,
                &outcome.position,
            );
            match outcome.kind {
                AdaptiveKind::ReferenceLeft => {
                    x = outcome.position;
                    continue;
                }
                AdaptiveKind::Stationary { mut seeds } => {
                    seeds.push(outcome.position.clone());
                    nonce += 1;
                    let exit =
                        parallel_step(potential, map, state, &seeds, config, nonce)?;
                    clock += exit.clock_advance;
                    wall += exit.sigma_min;
                    work += exit.work_steps;
                    push_time(
                        &mut traj,
                        &mut cur,
                        Some(state),
                        exit.clock_advance,
                        &exit.exit_position,
                    );
                    x = exit.exit_position;
                    continue;
                }
            }
        }

        // Fixed-t_corr mode.
        let mut visits = Vec::new();
        let (outcome, steps) = decorrelate::<D, P>(
            potential,
            map,
            config,
            &x,
            &mut rng_ref,
            remaining_steps,
            &mut visits,
        )?;
        clock += steps as f64 * dt;
        wall += steps;
        work += steps;
        for v in &visits {
            push_time(
                &mut traj,
                &mut cur,
                v.state,
                v.steps as f64 * dt,
                &v.end_position,
            );
        }
        match outcome {
            DecorrelationOutcome::HorizonReached { position } => {
                x = position;
                continue;
            }
            DecorrelationOutcome::Trapped { state, position } => {
                x = position;
                if clock >= t_end {
                    break;
                }
                nonce += 1;
                let n_extra = config.n_replicas - 1;
                let mut seeds =
                    dephasing_step(potential, map, state, &x, config, n_extra, nonce)?;
                let t_phase = config.t_phase.unwrap_or(config.t_corr);
                let phase_steps = (t_phase / dt).round() as u64;
                // Crude overhead accounting: accepted trajectories only.
                work += phase_steps * n_extra as u64;
                wall += (phase_steps * n_extra as u64) / config.n_replicas.max(1) as u64;
                seeds.push(x.clone());
                let exit = parallel_step(potential, map, state, &seeds, config, nonce)?;
                clock += exit.clock_advance;
                wall += exit.sigma_min;
                work += exit.work_steps;
                push_time(
                    &mut traj,
                    &mut cur,
                    Some(state),
                    exit.clock_advance,
                    &exit.exit_position,
                );
                x = exit.exit_position;
            }
        }
    }
    if let Some((s, acc)) = cur.take() {
        traj.segments.push(Segment {
            state: s,
            residence: acc,
            exit_position: x.clone(),
        });
    }
    traj.total_time = clock;
    traj.wall_steps = wall;
    traj.work_steps = work;
    traj.speedup = if wall > 0 {
        (clock / dt) / wall as f64
    } else {
        1.0
    };
    Ok(traj)
}

enum AdaptiveKind {
    /// The reference replica left the state before stationarity.
    ReferenceLeft,
    /// The Fleming-Viot ensemble reached stationarity; its particles seed
    /// the parallel step.
    Stationary { seeds: Vec<Vec<f64>> },
}

struct AdaptiveOutcome {
    kind: AdaptiveKind,
    position: Vec<f64>,
    steps: u64,
}

#[allow(clippy::too_many_arguments)]
fn adaptive_decorrelate<const D: usize, P: Potential>(
    potential: &P,
    map: &StateMap,
    config: &ParRepConfig,
    fv_params: &FvParams,
    state: u32,
    x0: &[f64],
    rng_ref: &mut Xoshiro256PlusPlus,
    max_steps: u64,
) -> Result<AdaptiveOutcome> {
    let dt = config.params.dt;
    let sig = config.params.noise_scale();
    let dim = potential.dim();

    // Fleming-Viot inside the state (N - 1 walkers).
    let n_fv = (config.n_replicas - 1).max(2);
    let mut run_fv = |domain: &dyn Domain| -> Result<AdaptiveOutcome> {
        let mut ens = FvEnsemble::new(domain, &config.params, n_fv, x0)?;
        let n_obs = crate::fleming_viot::n_observables(dim);
        let mut gr = GelmanRubin::new(n_obs, n_fv, fv_params.gr_threshold);
        let mut obs = vec![Vec::with_capacity(n_fv); n_obs];
        let mut pos = [0.0f64; D];
        pos.copy_from_slice(x0);
        let mut g = [0.0f64; D];
        let mut steps: u64 = 0;
        loop {
            for _ in 0..fv_params.check_stride {
                // Reference replica: exact dynamics.
                potential.gradient(&pos, &mut g[..]);
                for i in 0..D {
                    let n: f64 = rng_ref.sample(StandardNormal);
                    pos[i] += sig * n - g[i] * dt;
                }
                steps += 1;
                if !map.in_state(potential, state, &pos) {
                    return Ok(AdaptiveOutcome {
                        kind: AdaptiveKind::ReferenceLeft,
                        position: pos.to_vec(),
                        steps,
                    });
                }
                ens.fv_step(potential, domain, &config.params)?;
                if steps >= max_steps {
                    return Ok(AdaptiveOutcome {
                        kind: AdaptiveKind::ReferenceLeft,
                        position: pos.to_vec(),
                        steps,
                    });
                }
            }
            for o in obs.iter_mut() {
                o.clear();
            }
            for i in 0..ens.n_particles() {
                let p = ens.particle(i);
                for k in 0..dim {
                    obs[k].push(p[k]);
                    obs[dim + k].push(p[k] * p[k]);
                }
                obs[2 * dim].push(potential.energy(p));
            }
            if gr.update(&obs) {
                return Ok(AdaptiveOutcome {
                    kind: AdaptiveKind::Stationary {
                        seeds: ens.positions(),
                    },
                    position: pos.to_vec(),
                    steps,
                });
            }
        }
    };

    match map {
        StateMap::Domains(_) => {
            let domain = map
                .state_domain(state)
                .ok_or_else(|| Error::Input(format!("state {state} has no domain")))?;
            run_fv(domain)
        }
        StateMap::Basins(b) => {
            let domain = BasinDomain {
                map: b,
                potential,
                state,
                dim,
            };
            run_fv(&domain)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Interval;
    use crate::landscape::{DoubleWell1d, Harmonic};

    #[test]
    fn discrete_correction_formula() {
        assert_eq!(discrete_correction(4, 1, 1), 1);
        assert_eq!(discrete_correction(4, 1, 4), 4);
        assert_eq!(discrete_correction(4, 3, 2), 10);
        assert_eq!(discrete_correction(1, 7, 1), 7);
    }

    #[test]
    fn zero_phase_dephasing_copies_the_seed() {
        let p = Harmonic { dim: 1 };
        let map = StateMap::Domains(vec![Box::new(Interval::new(-1.0, 1.0))]);
        let params = SimulationParams::new(4.0, 1e-3, 3);
        let mut config = ParRepConfig::new(4, 1.0, params);
        config.t_phase = Some(0.0);
        let out = dephasing_step(&p, &map, 0, &[0.2], &config, 3, 1).unwrap();
        assert_eq!(out, vec![vec![0.2]; 3]);
    }

    #[test]
    fn dephased_points_stay_in_state() {
        let p = Harmonic { dim: 1 };
        let map = StateMap::Domains(vec![Box::new(Interval::new(-1.0, 1.0))]);
        let params = SimulationParams::new(6.0, 1e-3, 7);
        let config = ParRepConfig::new(4, 0.5, params);
        let out = dephasing_step(&p, &map, 0, &[0.0], &config, 8, 1).unwrap();
        assert_eq!(out.len(), 8);
        for pos in &out {
            assert!(pos[0].abs() < 1.0);
        }
    }

    #[test]
    fn horizon_zero_gives_empty_trajectory() {
        let p = DoubleWell1d { h: 1.0 };
        let mut map = StateMap::Basins(BasinMap::new(0.05, 1e-6, 1e-3));
        let params = SimulationParams::new(3.0, 5e-3, 11);
        let config = ParRepConfig::new(2, 0.2, params);
        let traj = run_parrep(&p, &mut map, &config, &[0.9], 0.0).unwrap();
        assert!(traj.segments.is_empty());
        assert_eq!(traj.total_time, 0.0);
    }

    #[test]
    fn basin_map_labels_and_registry() {
        let p = DoubleWell1d { h: 1.0 };
        let mut map = BasinMap::new(0.05, 1e-8, 1e-3);
        let l1 = map.label(&p, &[0.8]).unwrap();
        let l2 = map.label(&p, &[1.2]).unwrap();
        let l3 = map.label(&p, &[-0.7]).unwrap();
        assert_eq!(l1, l2);
        assert_ne!(l1, l3);
        assert_eq!(map.registry().len(), 2);
        // Labels are stable under repetition.
        assert_eq!(map.label(&p, &[0.8]), Some(l1));
        assert!(map.in_state(&p, l1, &[0.9]));
        assert!(!map.in_state(&p, l3, &[0.9]));
    }

    #[test]
    fn parallel_step_single_replica_reduces_to_direct_exit() {
        let p = Harmonic { dim: 1 };
        let map = StateMap::Domains(vec![Box::new(Interval::new(-0.5, 0.5))]);
        let params = SimulationParams::new(1.0, 1e-3, 21);
        let config = ParRepConfig::new(1, 0.1, params);
        let exit = parallel_step(&p, &map, 0, &[vec![0.0]], &config, 9).unwrap();
        assert_eq!(exit.winner, 0);
        assert!((exit.clock_advance - exit.sigma_min as f64 * 1e-3).abs() < 1e-12);
        assert!(exit.exit_position[0].abs() >= 0.5);
        assert!(exit.last_inside[0].abs() < 0.5);
    }

    #[test]
    fn double_well_run_produces_alternating_segments() {
        let p = DoubleWell1d { h: 1.0 };
        let mut map = StateMap::Basins(BasinMap::new(0.05, 1e-6, 1e-3));
        let params = SimulationParams::new(2.5, 5e-3, 13);
        let config = ParRepConfig::new(4, 0.3, params);
        let traj = run_parrep(&p, &mut map, &config, &[1.0], 400.0).unwrap();
        assert!(traj.segments.len() >= 2, "expected transitions, got {:?}", traj.segments.len());
        for w in traj.segments.windows(2) {
            assert_ne!(w[0].state, w[1].state, "consecutive labels must differ");
        }
        for s in &traj.segments {
            assert!(s.residence > 0.0);
        }
        assert!(traj.total_time >= 400.0);
    }
}
