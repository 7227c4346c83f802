//! Gnuplot script generation. Scripts read only the CSV files next to them,
//! so a run's figures can be regenerated without any binary state.

use std::io::Write;

use anyhow::Result;

/// Script for the exit-distribution comparison: Monte Carlo f(beta) with
/// error bars against the theoretical g(beta), log scale on y.
pub fn exit_distribution_script<W: Write>(mut w: W, csv_name: &str, title: &str) -> Result<()> {
    writeln!(
        w,
        r#"# Regenerates the exit-distribution figure from {csv_name}.
set datafile separator ','
set logscale y
set xlabel 'beta'
set ylabel 'exit probability through the target region'
set title '{title}'
set key top right
plot '{csv_name}' using 1:3:4 with yerrorbars title 'f (Monte Carlo)', \
     '{csv_name}' using 1:5 with lines title 'g (theory)'
"#
    )?;
    Ok(())
}

/// Script for the boundary-window experiment: both probabilities against
/// beta (log y) and the window/region ratio against beta (log-log).
pub fn sigma_split_script<W: Write>(mut w: W, csv_name: &str) -> Result<()> {
    writeln!(
        w,
        r#"# Regenerates the boundary-window figures from {csv_name}.
set datafile separator ','
set xlabel 'beta'
set logscale y
set ylabel 'exit probability'
plot '{csv_name}' using 1:2 with linespoints title 'window at the z_2 level', \
     '{csv_name}' using 1:3 with linespoints title 'region of z_2'
pause -1 'enter for the ratio plot'
set logscale xy
set ylabel 'P(window) / P(sigma2)'
plot '{csv_name}' using 1:4 with linespoints title 'ratio'
"#
    )?;
    Ok(())
}

/// Script for a scalar field sampled on grid nodes (u1, QSD, Agmon distance).
pub fn field_script<W: Write>(mut w: W, csv_name: &str, column: usize, label: &str) -> Result<()> {
    writeln!(
        w,
        r#"# Regenerates the {label} field map from {csv_name}.
set datafile separator ','
set view map
set size ratio -1
splot '{csv_name}' using 1:2:{column} with points pt 5 ps 0.4 palette title '{label}'
"#
    )?;
    Ok(())
}
