//! Command-line harness for the metastable-dynamics toolkit.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use metastable::kmc;
use metastable::landscape::critical_points;
use metastable::parrep::{run_parrep, BasinMap, ParRepConfig, StateMap};
use metastable::rates::generalized_saddle_prediction;
use metastable::rng::stream;
use metastable::sde::SimulationParams;
use metastable::spectral;
use metastable::with_potential;

use metastable_cli::config::{config_hash, ExperimentConfig};
use metastable_cli::experiments::{
    qsd_exit_ensemble, qsd_pool, run_exit_distribution, sigma_split_experiment,
};
use metastable_cli::{plot, report};

#[derive(Parser)]
#[command(name = "metastable", version, about = "Metastable dynamics toolkit")]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory from the configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Samples exit events from QSD initial conditions and reports the
    /// exit-law statistics.
    ExitSample,
    /// Runs the Fleming-Viot process to stationarity and writes the QSD sample.
    FvQsd,
    /// Runs the accelerated (parallel replica) dynamics.
    Parrep,
    /// Simulates the jump Markov process from a rate-graph file.
    Kmc {
        /// Rate graph file (`states n` + `edge i j rate` lines).
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0)]
        initial: usize,
        #[arg(long, default_value_t = 100.0)]
        t_end: f64,
    },
    /// Prints the Eyring-Kramers predictions and writes the rate graph.
    Rates,
    /// Solves the absorbed-generator eigenproblem over the beta sweep.
    Spectral,
    /// Runs a named experiment pipeline: exit_distribution | sigma_split.
    Experiment { name: String },
    /// Measures the integrator throughput on this machine.
    Bench,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .context("building the worker pool")?;
    }
    match &cli.cmd {
        Cmd::Bench => return bench(),
        Cmd::Kmc {
            graph,
            initial,
            t_end,
        } => return run_kmc(&cli, graph, *initial, *t_end),
        _ => {}
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config <file> is required for this command"))?;
    let (mut cfg, text) = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let hash = config_hash(&text);
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs/out"));
    report::write_manifest(&out_dir, &hash, cfg.seed, &text)?;

    match &cli.cmd {
        Cmd::ExitSample => exit_sample(&cfg, &hash, &out_dir),
        Cmd::FvQsd => fv_qsd(&cfg, &hash, &out_dir),
        Cmd::Parrep => parrep_run(&cfg, &hash, &out_dir),
        Cmd::Rates => rates_cmd(&cfg, &hash, &out_dir),
        Cmd::Spectral => spectral_cmd(&cfg, &hash, &out_dir),
        Cmd::Experiment { name } => experiment(&cfg, name, &hash, &out_dir),
        Cmd::Bench | Cmd::Kmc { .. } => unreachable!(),
    }
}

fn create(out_dir: &Path, name: &str) -> Result<File> {
    File::create(out_dir.join(name)).with_context(|| format!("creating {name}"))
}

fn exit_sample(cfg: &ExperimentConfig, hash: &str, out_dir: &Path) -> Result<()> {
    let potential = cfg.build_potential()?;
    let domain = cfg.build_domain()?;
    let s = &cfg.sampling;
    for &beta in &s.beta {
        let events = with_potential!(&potential, |p| {
            let (pool, diag) = qsd_pool(p, domain.as_ref(), beta, s.dt, cfg.seed, s.n_particles)?;
            println!(
                "beta {beta}: QSD converged after {} steps (t_corr ~ {:.3})",
                diag.steps, diag.t_corr
            );
            qsd_exit_ensemble(
                p,
                domain.as_ref(),
                beta,
                s.dt,
                cfg.seed,
                &pool,
                s.events_per_beta,
                s.budget_secs,
            )
        })?;
        let name = format!("events_beta{beta}.csv");
        report::write_events_csv(create(out_dir, &name)?, hash, &events, domain.as_ref())?;
        match report::stats_tests(&events, domain.as_ref()) {
            Ok(rep) => {
                println!(
                    "beta {beta}: {} events, KS p = {:.4}, chi2 p = {:.4}",
                    rep.n_events, rep.ks_p, rep.chi2_p
                );
                for r in &rep.regions {
                    println!(
                        "  {}: {} ({:.4} in [{:.4}, {:.4}])",
                        r.name, r.count, r.freq, r.wilson_lo, r.wilson_hi
                    );
                }
            }
            Err(e) => println!("beta {beta}: statistics skipped ({e})"),
        }
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn fv_qsd(cfg: &ExperimentConfig, hash: &str, out_dir: &Path) -> Result<()> {
    let potential = cfg.build_potential()?;
    let domain = cfg.build_domain()?;
    let s = &cfg.sampling;
    for &beta in &s.beta {
        let (pool, diag) = with_potential!(&potential, |p| qsd_pool(
            p,
            domain.as_ref(),
            beta,
            s.dt,
            cfg.seed,
            s.n_particles
        ))?;
        let name = format!("qsd_beta{beta}.csv");
        report::write_qsd_sample_csv(create(out_dir, &name)?, hash, &pool)?;
        println!(
            "beta {beta}: converged in {} steps (t_corr ~ {:.4}), {} branchings, rate/particle/step {:.3e}, rhat {:?}",
            diag.steps, diag.t_corr, diag.branching_count, diag.branching_rate, diag.rhat
        );
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn parrep_run(cfg: &ExperimentConfig, hash: &str, out_dir: &Path) -> Result<()> {
    let potential = cfg.build_potential()?;
    let s = &cfg.sampling;
    let beta = s.beta[0];
    let params = SimulationParams::new(beta, s.dt, cfg.seed);
    let n = s.n_replicas.unwrap_or(4);
    let t_corr = s.t_corr.unwrap_or(1.0);
    let t_end = s.t_end.unwrap_or(100.0);
    let config = ParRepConfig::new(n, t_corr, params);
    let mut map = StateMap::Basins(BasinMap::new(10.0 * s.dt, 1e-6, 1e-3));
    let (lo, hi) = cfg.build_domain()?.bounding_box();
    let x0: Vec<f64> = lo.iter().zip(hi.iter()).map(|(a, b)| 0.5 * (a + b) + 0.3).collect();
    let traj = with_potential!(&potential, |p| run_parrep(p, &mut map, &config, &x0, t_end))
        .map_err(|e| anyhow!("parrep: {e}"))?;
    let mut f = create(out_dir, "parrep_trajectory.csv")?;
    writeln!(f, "# config_hash={hash}")?;
    writeln!(f, "state,residence,exit_x,exit_y")?;
    for seg in &traj.segments {
        writeln!(
            f,
            "{},{:.10e},{:.10e},{:.10e}",
            seg.state,
            seg.residence,
            seg.exit_position.first().copied().unwrap_or(f64::NAN),
            seg.exit_position.get(1).copied().unwrap_or(0.0)
        )?;
    }
    println!(
        "{} segments over t = {:.2}; wall-equivalent steps {}, total worker steps {}, speedup {:.2}",
        traj.segments.len(),
        traj.total_time,
        traj.wall_steps,
        traj.work_steps,
        traj.speedup
    );
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn run_kmc(cli: &Cli, graph: &Path, initial: usize, t_end: f64) -> Result<()> {
    let file = std::fs::File::open(graph).with_context(|| format!("opening {}", graph.display()))?;
    let table = kmc::RateTable::read_graph(std::io::BufReader::new(file))
        .map_err(|e| anyhow!("graph: {e}"))?;
    let seed = cli.seed.unwrap_or(0);
    let mut rng = stream(seed, 0);
    let traj = kmc::kmc_run(&table, initial, t_end, &mut rng).map_err(|e| anyhow!("kmc: {e}"))?;
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs/out"));
    std::fs::create_dir_all(&out_dir)?;
    let f = create(&out_dir, "kmc_trajectory.csv")?;
    traj.write_csv(f).map_err(|e| anyhow!("{e}"))?;
    println!(
        "{} jumps, simulated t = {:.4}{}",
        traj.residence.len(),
        traj.total_time,
        if traj.absorbed { " (absorbed)" } else { "" }
    );
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn rates_cmd(cfg: &ExperimentConfig, hash: &str, out_dir: &Path) -> Result<()> {
    let potential = cfg.build_potential()?;
    let domain = cfg.build_domain()?;
    let (lo, hi) = domain.bounding_box();
    let guess: Vec<f64> = lo.iter().zip(hi.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
    let cp = with_potential!(&potential, |p| critical_points(
        p,
        domain.as_ref(),
        &guess
    ))
    .map_err(|e| anyhow!("critical points: {e}"))?;
    let mut f = create(out_dir, "rates.csv")?;
    writeln!(f, "# config_hash={hash}")?;
    writeln!(f, "beta,lambda1,minimum,z_energy,barrier,p,ek_ratio,rate,prefactor,a_coefficient")?;
    for &beta in &cfg.sampling.beta {
        let pred = generalized_saddle_prediction(&cp, beta).map_err(|e| anyhow!("{e}"))?;
        if let Some(w) = &pred.warning {
            println!("beta {beta}: warning: {w}");
        }
        for r in &pred.regions {
            writeln!(
                f,
                "{},{:.10e},{},{:.8},{:.8},{:.8e},{:.8e},{:.10e},{:.8e},{:.8e}",
                beta,
                pred.lambda1,
                r.minimum,
                cp.boundary_minima[r.minimum].energy,
                r.barrier,
                r.p,
                r.ek_ratio,
                r.rate,
                r.prefactor,
                r.a_coefficient
            )?;
        }
        println!("beta {beta}: lambda1 = {:.6e}", pred.lambda1);
    }
    // Single-state rate graph: state 0 with one absorbing sink per region.
    let pred = generalized_saddle_prediction(&cp, cfg.sampling.beta[0]).map_err(|e| anyhow!("{e}"))?;
    let n = 1 + pred.regions.len();
    let mut table = kmc::RateTable::new(n);
    for (j, r) in pred.regions.iter().enumerate() {
        table.add_rate(0, 1 + j, r.rate).map_err(|e| anyhow!("{e}"))?;
    }
    table
        .write_graph(create(out_dir, "rate_graph.txt")?)
        .map_err(|e| anyhow!("{e}"))?;
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn spectral_cmd(cfg: &ExperimentConfig, hash: &str, out_dir: &Path) -> Result<()> {
    let potential = cfg.build_potential()?;
    let domain = cfg.build_domain()?;
    let s = &cfg.sampling;
    let mut results = Vec::new();
    for &beta in &s.beta {
        let h = s
            .grid_step
            .unwrap_or_else(|| (1.0 / beta).sqrt() / 5.0);
        let r = with_potential!(&potential, |p| spectral::solve(
            p,
            domain.as_ref(),
            beta,
            h
        ))
        .map_err(|e| anyhow!("spectral at beta {beta}: {e}"))?;
        println!(
            "beta {beta}: lambda1 = {:.6e}, lambda2 = {:.6e}, metastability ratio = {:.3e}",
            r.lambda1, r.lambda2, r.metastability_ratio
        );
        let name = format!("field_beta{beta}.csv");
        report::write_field_csv(create(out_dir, &name)?, hash, &r)?;
        results.push(r);
    }
    let names: Vec<String> = domain.regions().iter().map(|r| r.name.clone()).collect();
    report::write_spectral_summary_csv(create(out_dir, "spectral.csv")?, hash, &results, &names)?;
    plot::field_script(create(out_dir, "field.gp")?, "field_beta*.csv", 4, "qsd")?;
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn experiment(cfg: &ExperimentConfig, name: &str, hash: &str, out_dir: &Path) -> Result<()> {
    match name {
        "exit_distribution" => {
            let rows = run_exit_distribution(cfg)?;
            for r in &rows {
                println!(
                    "beta {}: f = {:.5e} ({} / {} events), g = {:.5e}, f/g = {:.3} +- {:.3}",
                    r.beta, r.f, r.n_hits, r.n_events, r.g, r.ratio, r.ratio_ci
                );
            }
            report::write_comparison_csv(create(out_dir, "comparison.csv")?, hash, &rows)?;
            plot::exit_distribution_script(
                create(out_dir, "comparison.gp")?,
                "comparison.csv",
                &format!("{} exit distribution", cfg.potential.name),
            )?;
        }
        "sigma_split" => {
            let potential = cfg.build_potential()?;
            let result = with_potential!(&potential, |p| sigma_split_experiment(
                p,
                &cfg.sampling.beta,
                1.0
            ))?;
            println!(
                "log-log slope {:.3}; LD slopes {:.4} / {:.4} (reference {:.4}); window y in [{:.4}, {:.4}]",
                result.loglog_slope,
                result.ld_slope_window,
                result.ld_slope_sigma2,
                result.ld_reference,
                result.window.0,
                result.window.1
            );
            report::write_sigma_split_csv(create(out_dir, "sigma_split.csv")?, hash, &result)?;
            plot::sigma_split_script(create(out_dir, "sigma_split.gp")?, "sigma_split.csv")?;
        }
        other => bail!("unknown experiment `{other}` (exit_distribution | sigma_split)"),
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn bench() -> Result<()> {
    use metastable::geometry::build_paper_domain;
    use metastable::landscape::QuadraticShifted;
    use metastable::sde::sample_exit_ensemble;
    let p = QuadraticShifted { a: 0.1 };
    let d = build_paper_domain();
    let params = SimulationParams::new(7.0, 5e-3, 42);
    let starts = vec![vec![0.05, 0.0]; 2000];
    let _ = sample_exit_ensemble(&p, &d, &params, &starts[..100]).map_err(|e| anyhow!("{e}"))?;
    let t0 = Instant::now();
    let events = sample_exit_ensemble(&p, &d, &params, &starts).map_err(|e| anyhow!("{e}"))?;
    let dt = t0.elapsed().as_secs_f64();
    let steps: u64 = events.iter().map(|e| e.steps).sum();
    println!(
        "{} events, {:.3e} integrator steps in {:.2}s: {:.3e} steps/s across all workers",
        events.len(),
        steps as f64,
        dt,
        steps as f64 / dt
    );
    Ok(())
}
