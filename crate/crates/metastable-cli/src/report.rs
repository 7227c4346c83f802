//! Statistical test reports and CSV writers. Every table starts with a
//! `# config_hash=...` comment line followed by a header row, so outputs are
//! traceable and plot scripts can regenerate from the CSV alone.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

use metastable::geometry::{AgmonResult, Domain};
use metastable::sde::ExitEvent;
use metastable::spectral::SpectralResult;
use metastable::stats::{chi2_independence, ks_test_exponential, wilson_ci};

use crate::experiments::{ComparisonRow, SigmaSplitResult};

/// Per-region occupancy with a 95% Wilson interval.
#[derive(Debug, Clone)]
pub struct RegionStat {
    pub region: usize,
    pub name: String,
    pub count: usize,
    pub freq: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

/// The exit-law test battery: exponentiality of the times (KS against the
/// fitted rate) and independence of time and exit region (chi-square on
/// time-quartile x region).
#[derive(Debug, Clone)]
pub struct TestReport {
    pub n_events: usize,
    pub rate_estimate: f64,
    pub ks_d: f64,
    pub ks_p: f64,
    pub chi2_stat: f64,
    pub chi2_df: usize,
    pub chi2_p: f64,
    pub regions: Vec<RegionStat>,
}

pub fn stats_tests(events: &[ExitEvent], domain: &dyn Domain) -> Result<TestReport> {
    if events.len() < 100 {
        bail!("need at least 100 events, got {}", events.len());
    }
    let times: Vec<f64> = events.iter().map(|e| e.exit_time).collect();
    let (ks_d, ks_p) = ks_test_exponential(&times).map_err(|e| anyhow::anyhow!("{e}"))?;
    let rate = times.len() as f64 / times.iter().sum::<f64>();

    // Quartile thresholds of the empirical exit times.
    let mut sorted = times.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |f: f64| sorted[((sorted.len() as f64 * f) as usize).min(sorted.len() - 1)];
    let (q1, q2, q3) = (q(0.25), q(0.5), q(0.75));
    let n_regions = domain.regions().len();
    let mut table = vec![vec![0u64; n_regions]; 4];
    for e in events {
        let row = if e.exit_time <= q1 {
            0
        } else if e.exit_time <= q2 {
            1
        } else if e.exit_time <= q3 {
            2
        } else {
            3
        };
        table[row][e.region] += 1;
    }
    let (chi2_stat, chi2_df, chi2_p) =
        chi2_independence(&table).map_err(|e| anyhow::anyhow!("{e}"))?;

    let mut regions = Vec::new();
    for (i, r) in domain.regions().iter().enumerate() {
        let count = events.iter().filter(|e| e.region == i).count();
        let (lo, hi) = wilson_ci(count as u64, events.len() as u64, 1.96);
        regions.push(RegionStat {
            region: i,
            name: r.name.clone(),
            count,
            freq: count as f64 / events.len() as f64,
            wilson_lo: lo,
            wilson_hi: hi,
        });
    }
    Ok(TestReport {
        n_events: events.len(),
        rate_estimate: rate,
        ks_d,
        ks_p,
        chi2_stat,
        chi2_df,
        chi2_p,
        regions,
    })
}

// ---------------------------------------------------------------------------
// CSV writers
// ---------------------------------------------------------------------------

pub fn write_events_csv<W: Write>(
    mut w: W,
    hash: &str,
    events: &[ExitEvent],
    domain: &dyn Domain,
) -> Result<()> {
    writeln!(w, "# config_hash={hash}")?;
    writeln!(w, "replica_id,exit_time,steps,region,region_name,x,y")?;
    for e in events {
        let name = &domain.regions()[e.region].name;
        let x = e.exit_position.first().copied().unwrap_or(f64::NAN);
        let y = e.exit_position.get(1).copied().unwrap_or(0.0);
        writeln!(
            w,
            "{},{:.17e},{},{},{},{:.17e},{:.17e}",
            e.replica_id, e.exit_time, e.steps, e.region, name, x, y
        )?;
    }
    Ok(())
}

pub fn write_comparison_csv<W: Write>(mut w: W, hash: &str, rows: &[ComparisonRow]) -> Result<()> {
    writeln!(w, "# config_hash={hash}")?;
    writeln!(
        w,
        "beta,dt,f,f_ci,g,ratio,ratio_ci,n_events,n_hits,n_requested,elapsed_secs,total_steps"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.8e},{:.3e},{:.8e},{:.6},{:.4},{},{},{},{:.1},{}",
            r.beta,
            r.dt,
            r.f,
            r.f_ci,
            r.g,
            r.ratio,
            r.ratio_ci,
            r.n_events,
            r.n_hits,
            r.n_requested,
            r.elapsed_secs,
            r.total_steps
        )?;
    }
    Ok(())
}

pub fn write_sigma_split_csv<W: Write>(
    mut w: W,
    hash: &str,
    result: &SigmaSplitResult,
) -> Result<()> {
    writeln!(w, "# config_hash={hash}")?;
    writeln!(
        w,
        "# loglog_slope={:.6} ld_slope_window={:.6} ld_slope_sigma2={:.6} ld_reference={:.6} window_lo={:.6} window_hi={:.6}",
        result.loglog_slope,
        result.ld_slope_window,
        result.ld_slope_sigma2,
        result.ld_reference,
        result.window.0,
        result.window.1
    )?;
    writeln!(w, "beta,p_window,p_sigma2,ratio")?;
    for r in &result.rows {
        writeln!(
            w,
            "{},{:.10e},{:.10e},{:.10e}",
            r.beta, r.p_window, r.p_sigma2, r.ratio
        )?;
    }
    Ok(())
}

pub fn write_spectral_summary_csv<W: Write>(
    mut w: W,
    hash: &str,
    results: &[SpectralResult],
    region_names: &[String],
) -> Result<()> {
    writeln!(w, "# config_hash={hash}")?;
    let p_cols: Vec<String> = region_names.iter().map(|n| format!("p_{n}")).collect();
    writeln!(w, "beta,h,lambda1,lambda2,metastability_ratio,{}", p_cols.join(","))?;
    for r in results {
        let ps: Vec<String> = r.region_p.iter().map(|p| format!("{p:.10e}")).collect();
        writeln!(
            w,
            "{},{},{:.12e},{:.12e},{:.6e},{}",
            r.beta,
            r.steps[0],
            r.lambda1,
            r.lambda2,
            r.metastability_ratio,
            ps.join(",")
        )?;
    }
    Ok(())
}

pub fn write_field_csv<W: Write>(mut w: W, hash: &str, r: &SpectralResult) -> Result<()> {
    writeln!(w, "# config_hash={hash}")?;
    writeln!(w, "x,y,u1,qsd")?;
    for (node, (u, q)) in r.nodes.iter().zip(r.u1.iter().zip(r.qsd.iter())) {
        writeln!(w, "{:.10e},{:.10e},{:.10e},{:.10e}", node[0], node[1], u, q)?;
    }
    Ok(())
}

pub fn write_agmon_csv<W: Write>(mut w: W, hash: &str, r: &AgmonResult) -> Result<()> {
    writeln!(w, "# config_hash={hash}")?;
    writeln!(
        w,
        "# inf_outside_basin={:.8e} saddle_gap={:.8e} assumption_satisfied={}",
        r.inf_outside_basin, r.saddle_gap, r.assumption_satisfied
    )?;
    writeln!(w, "x,y,d_a")?;
    for (p, d) in r.grid_points.iter().zip(r.grid_distance.iter()) {
        writeln!(w, "{:.10e},{:.10e},{:.10e}", p[0], p[1], d)?;
    }
    Ok(())
}

pub fn write_qsd_sample_csv<W: Write>(mut w: W, hash: &str, pool: &[Vec<f64>]) -> Result<()> {
    writeln!(w, "# config_hash={hash}")?;
    writeln!(w, "x,y")?;
    for p in pool {
        let x = p.first().copied().unwrap_or(f64::NAN);
        let y = p.get(1).copied().unwrap_or(0.0);
        writeln!(w, "{x:.10e},{y:.10e}")?;
    }
    Ok(())
}

pub fn write_manifest(out_dir: &Path, hash: &str, seed: u64, config_text: &str) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let mut f = std::fs::File::create(out_dir.join("manifest.txt"))?;
    writeln!(f, "tool=metastable {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "config_hash={hash}")?;
    writeln!(f, "seed={seed}")?;
    writeln!(f, "--- config ---")?;
    write!(f, "{config_text}")?;
    Ok(())
}
