//! The experiment pipelines: Fleming-Viot QSD preparation, exit-event
//! ensembles, the exit-distribution comparison f(beta) vs g(beta), and the
//! prefactor-separation experiment on a boundary window.

use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};

use metastable::fleming_viot::{sample_qsd, FvDiagnostics, FvParams};
use metastable::geometry::{region_for_arc_s, Domain, PaperDomain, Region, RegionSpan};
use metastable::landscape::{critical_points, find_interior_minimum, CriticalPointData, Potential};
use metastable::rates::generalized_saddle_prediction;
use metastable::rng::stream;
use metastable::sde::{
    sample_exit_ensemble, sample_exit_ensemble_budgeted, ExitEvent, SimulationParams,
};
use metastable::spectral;
use metastable::stats::{linear_fit, wilson_ci};
use metastable::with_potential;
use rand::Rng;

/// One row of the f(beta)-vs-g(beta) comparison.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub beta: f64,
    pub dt: f64,
    /// Monte Carlo exit probability through the target region.
    pub f: f64,
    /// Half-width of the 95% Wilson interval on f.
    pub f_ci: f64,
    /// Theoretical leading-order prediction.
    pub g: f64,
    pub ratio: f64,
    pub ratio_ci: f64,
    pub n_events: usize,
    pub n_hits: usize,
    /// Events requested by the configuration (shortfall means the wall-clock
    /// budget cut the run off).
    pub n_requested: usize,
    pub elapsed_secs: f64,
    pub total_steps: u64,
}

/// QSD sample for one (potential, domain, beta): Fleming-Viot until the
/// Gelman-Rubin diagnostic converges, started from the interior minimum.
pub fn qsd_pool<P: Potential, Dm: Domain + Sync + ?Sized>(
    potential: &P,
    domain: &Dm,
    beta: f64,
    dt: f64,
    seed: u64,
    n_particles: usize,
) -> Result<(Vec<Vec<f64>>, FvDiagnostics)> {
    let (lo, hi) = domain.bounding_box();
    let guess: Vec<f64> = lo.iter().zip(hi.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
    let x0 = find_interior_minimum(potential, domain, &guess)
        .or_else(|_| {
            if domain.contains(&guess) {
                Ok(guess.clone())
            } else {
                Err(metastable::Error::Input("no usable start point".into()))
            }
        })
        .map_err(|e| anyhow!("interior minimum search: {e}"))?;
    let params = SimulationParams::new(beta, dt, seed);
    let fv = FvParams::new(n_particles);
    sample_qsd(potential, domain, &params, &fv, &x0).map_err(|e| anyhow!("fleming-viot: {e}"))
}

/// Draws `n_events` start positions from a QSD pool and samples one exit per
/// start. A zero budget disables the deadline.
pub fn qsd_exit_ensemble<P: Potential, Dm: Domain + Sync + ?Sized>(
    potential: &P,
    domain: &Dm,
    beta: f64,
    dt: f64,
    seed: u64,
    pool: &[Vec<f64>],
    n_events: usize,
    budget_secs: u64,
) -> Result<Vec<ExitEvent>> {
    let params = SimulationParams::new(beta, dt, seed ^ 0xe4157);
    let mut pick = stream(seed, 0x9001);
    let starts: Vec<Vec<f64>> = (0..n_events)
        .map(|_| pool[pick.gen_range(0..pool.len())].clone())
        .collect();
    if budget_secs == 0 {
        sample_exit_ensemble(potential, domain, &params, &starts)
            .map_err(|e| anyhow!("exit ensemble: {e}"))
    } else {
        let deadline = Instant::now() + std::time::Duration::from_secs(budget_secs);
        Ok(sample_exit_ensemble_budgeted(
            potential, domain, &params, &starts, deadline,
        ))
    }
}

/// Locates the domain region that contains a boundary minimum.
pub fn region_of_boundary_point<Dm: Domain + ?Sized>(domain: &Dm, point: &[f64]) -> Result<usize> {
    let loop_ = domain
        .boundary()
        .ok_or_else(|| anyhow!("domain has no boundary loop"))?;
    let s = loop_.locate(point);
    region_for_arc_s(domain.regions(), s, loop_.total_length()).map_err(|e| anyhow!("{e}"))
}

/// Theoretical g(beta) for a target region: the leading-order exit-probability
/// ratio of the boundary minimum inside that region against the lowest one.
pub fn theoretical_g<Dm: Domain + ?Sized>(
    cp: &CriticalPointData,
    domain: &Dm,
    target_region: usize,
    beta: f64,
) -> Result<f64> {
    let pred = generalized_saddle_prediction(cp, beta).map_err(|e| anyhow!("{e}"))?;
    for (i, m) in cp.boundary_minima.iter().enumerate() {
        if region_of_boundary_point(domain, &m.position)? == target_region {
            return Ok(pred.regions[i].ek_ratio);
        }
    }
    bail!("no boundary minimum lies in the target region")
}

/// Full exit-distribution experiment for one beta: QSD preparation, exit
/// ensemble, f = fraction of exits through the target region, g = theory.
#[allow(clippy::too_many_arguments)]
pub fn exit_distribution_beta<P: Potential, Dm: Domain + Sync + ?Sized>(
    potential: &P,
    domain: &Dm,
    cp: &CriticalPointData,
    target_region: usize,
    beta: f64,
    dt: f64,
    seed: u64,
    n_particles: usize,
    n_events: usize,
    budget_secs: u64,
) -> Result<ComparisonRow> {
    let t0 = Instant::now();
    let (pool, _diag) = qsd_pool(potential, domain, beta, dt, seed, n_particles)?;
    let events = qsd_exit_ensemble(
        potential,
        domain,
        beta,
        dt,
        seed,
        &pool,
        n_events,
        budget_secs,
    )?;
    if events.is_empty() {
        bail!("no exit events within the budget at beta = {beta}");
    }
    let hits = events.iter().filter(|e| e.region == target_region).count();
    let n = events.len();
    let f = hits as f64 / n as f64;
    let (lo, hi) = wilson_ci(hits as u64, n as u64, 1.96);
    let g = theoretical_g(cp, domain, target_region, beta)?;
    let total_steps: u64 = events.iter().map(|e| e.steps).sum();
    Ok(ComparisonRow {
        beta,
        dt,
        f,
        f_ci: 0.5 * (hi - lo),
        g,
        ratio: f / g,
        ratio_ci: 0.5 * (hi - lo) / g,
        n_events: n,
        n_hits: hits,
        n_requested: n_events,
        elapsed_secs: t0.elapsed().as_secs_f64(),
        total_steps,
    })
}

/// Sweeps `betas` with the exit-distribution pipeline.
#[allow(clippy::too_many_arguments)]
pub fn exit_distribution_experiment<P: Potential, Dm: Domain + Sync + ?Sized>(
    potential: &P,
    domain: &Dm,
    target_region: usize,
    betas: &[f64],
    dt: f64,
    seed: u64,
    n_particles: usize,
    n_events: usize,
    budget_secs: u64,
) -> Result<Vec<ComparisonRow>> {
    let (lo, hi) = domain.bounding_box();
    let guess: Vec<f64> = lo.iter().zip(hi.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
    let cp = critical_points(potential, domain, &guess)
        .map_err(|e| anyhow!("critical points: {e}"))?;
    betas
        .iter()
        .enumerate()
        .map(|(i, &beta)| {
            exit_distribution_beta(
                potential,
                domain,
                &cp,
                target_region,
                beta,
                dt,
                seed.wrapping_add(1 + i as u64),
                n_particles,
                n_events,
                budget_secs,
            )
            .with_context(|| format!("beta = {beta}"))
        })
        .collect()
}

/// One row of the boundary-window experiment.
#[derive(Debug, Clone)]
pub struct SigmaSplitRow {
    pub beta: f64,
    /// Exit probability through the window at the height of the second
    /// minimum but inside the basin of the first.
    pub p_window: f64,
    /// Exit probability through the region of the second minimum.
    pub p_sigma2: f64,
    pub ratio: f64,
}

/// Output of the prefactor-separation experiment: spectral exit
/// probabilities on a window Sigma with `inf_Sigma V = V(z_2)` inside the
/// basin of z_1, against the full region of z_2, over a beta sweep.
#[derive(Debug, Clone)]
pub struct SigmaSplitResult {
    pub rows: Vec<SigmaSplitRow>,
    /// Fitted slope of log(ratio) against log(beta).
    pub loglog_slope: f64,
    /// Fitted slope of ln p_window against beta.
    pub ld_slope_window: f64,
    /// Fitted slope of ln p_sigma2 against beta.
    pub ld_slope_sigma2: f64,
    /// The shared large-deviation reference, -(V(z_2) - V(z_1)).
    pub ld_reference: f64,
    /// Window bounds (y-range on the right wall).
    pub window: (f64, f64),
}

/// Builds the boundary window on the right wall of the standard 2D domain:
/// `Sigma = {(1, y) : y0 <= y <= 1}` where `V(1, y0) = V(z_2)`.
pub fn sigma_split_experiment<P: Potential>(
    potential: &P,
    betas: &[f64],
    grid_step_scale: f64,
) -> Result<SigmaSplitResult> {
    let base = PaperDomain::new();
    let cp = critical_points(potential, &base, &[0.0, 0.0])
        .map_err(|e| anyhow!("critical points: {e}"))?;
    if cp.boundary_minima.len() < 2 {
        bail!("need two boundary minima");
    }
    let v2 = cp.boundary_minima[1].energy;
    // Bisection for y0 on the right wall: V(1, y0) = V(z_2).
    let wall_v = |y: f64| potential.energy(&[1.0, y]);
    if wall_v(1.0) <= v2 {
        bail!("window would not fit on the wall: V(1,1) <= V(z_2)");
    }
    let (mut a, mut b) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if wall_v(m) < v2 {
            a = m;
        } else {
            b = m;
        }
    }
    let y0 = 0.5 * (a + b);
    let s_lo = PaperDomain::right_wall_s(y0);
    let s_hi = PaperDomain::right_wall_s(1.0);

    use std::f64::consts::PI;
    let regions = vec![
        Region {
            name: "sigma_window".into(),
            span: RegionSpan::Arc { lo: s_lo, hi: s_hi },
        },
        Region {
            name: "sigma2".into(),
            span: RegionSpan::Arc {
                lo: 2.0 + PI,
                hi: 4.0 + PI,
            },
        },
        Region {
            name: "rest".into(),
            span: RegionSpan::Arc {
                lo: 0.0,
                hi: 4.0 + 2.0 * PI,
            },
        },
    ];
    let domain = PaperDomain::with_regions(regions);

    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let h = grid_step_scale * (1.0 / beta).sqrt() / 5.0;
        let r = spectral::solve(potential, &domain, beta, h)
            .map_err(|e| anyhow!("spectral solve at beta {beta}: {e}"))?;
        let p_window = r.region_p[0];
        let p_sigma2 = r.region_p[1];
        if p_window <= 0.0 || p_sigma2 <= 0.0 {
            bail!("zero exit probability at beta = {beta}: refine the grid");
        }
        rows.push(SigmaSplitRow {
            beta,
            p_window,
            p_sigma2,
            ratio: p_window / p_sigma2,
        });
    }
    let logb: Vec<f64> = rows.iter().map(|r| r.beta.ln()).collect();
    let logratio: Vec<f64> = rows.iter().map(|r| r.ratio.ln()).collect();
    let (loglog_slope, _) = linear_fit(&logb, &logratio);
    let betas_v: Vec<f64> = rows.iter().map(|r| r.beta).collect();
    let lw: Vec<f64> = rows.iter().map(|r| r.p_window.ln()).collect();
    let l2: Vec<f64> = rows.iter().map(|r| r.p_sigma2.ln()).collect();
    let (ld_slope_window, _) = linear_fit(&betas_v, &lw);
    let (ld_slope_sigma2, _) = linear_fit(&betas_v, &l2);
    Ok(SigmaSplitResult {
        rows,
        loglog_slope,
        ld_slope_window,
        ld_slope_sigma2,
        ld_reference: -(cp.boundary_minima[1].energy - cp.boundary_minima[0].energy),
        window: (y0, 1.0),
    })
}

/// Convenience dispatcher used by the CLI: runs the pipeline described by a
/// parsed configuration and returns the comparison rows.
pub fn run_exit_distribution(cfg: &crate::config::ExperimentConfig) -> Result<Vec<ComparisonRow>> {
    let potential = cfg.build_potential()?;
    let domain = cfg.build_domain()?;
    let target = domain
        .regions()
        .iter()
        .position(|r| r.name == cfg.sampling.target_region)
        .ok_or_else(|| anyhow!("no region named `{}`", cfg.sampling.target_region))?;
    with_potential!(&potential, |p| exit_distribution_experiment(
        p,
        domain.as_ref(),
        target,
        &cfg.sampling.beta,
        cfg.sampling.dt,
        cfg.seed,
        cfg.sampling.n_particles,
        cfg.sampling.events_per_beta,
        cfg.sampling.budget_secs,
    ))
}
