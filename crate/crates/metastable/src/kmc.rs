//! Continuous-time jump Markov process over a discrete state graph:
//! exponential residence times with the total outgoing rate, next state
//! drawn proportionally to the individual rates, independent of the time.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::{Error, Result};

/// Sparse nonnegative jump rates `k[i][j]`, zero diagonal.
///
/// Neighbor lists are kept sorted by target state, and next-state sampling
/// walks the sorted list by inverse CDF, so trajectories are reproducible
/// across platforms for a fixed RNG stream.
#[derive(Debug, Clone)]
pub struct RateTable {
    n_states: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl RateTable {
    pub fn new(n_states: usize) -> Self {
        RateTable {
            n_states,
            rows: vec![Vec::new(); n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn add_rate(&mut self, from: usize, to: usize, rate: f64) -> Result<()> {
        if from >= self.n_states || to >= self.n_states {
            return Err(Error::Input(format!("state out of range: {from} -> {to}")));
        }
        if from == to {
            return Err(Error::Input("no self-transitions: diagonal must stay zero".into()));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Input(format!("rate {rate} must be finite and >= 0")));
        }
        if rate == 0.0 {
            return Ok(());
        }
        let row = &mut self.rows[from];
        match row.binary_search_by(|(t, _)| t.cmp(&to)) {
            Ok(pos) => row[pos].1 += rate,
            Err(pos) => row.insert(pos, (to, rate)),
        }
        Ok(())
    }

    /// Neighbor set `N_i = { j : k[i][j] > 0 }`, sorted.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn total_rate(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|(_, k)| k).sum()
    }

    pub fn is_absorbing(&self, i: usize) -> bool {
        self.rows[i].is_empty()
    }

    /// Writes the graph in the structured text format:
    /// a `states <n>` line followed by `edge <i> <j> <rate>` lines.
    pub fn write_graph<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# jump-process rate graph v1")?;
        writeln!(w, "states {}", self.n_states)?;
        for (i, row) in self.rows.iter().enumerate() {
            for (j, k) in row {
                writeln!(w, "edge {i} {j} {k:.17e}")?;
            }
        }
        Ok(())
    }

    /// Parses the structured text format written by [`RateTable::write_graph`].
    pub fn read_graph<R: BufRead>(r: R) -> Result<Self> {
        let mut table: Option<RateTable> = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("states") => {
                    let n: usize = tok
                        .next()
                        .ok_or_else(|| Error::Parse(format!("line {}: missing state count", lineno + 1)))?
                        .parse()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                    table = Some(RateTable::new(n));
                }
                Some("edge") => {
                    let t = table
                        .as_mut()
                        .ok_or_else(|| Error::Parse("edge before states line".into()))?;
                    let vals: Vec<&str> = tok.collect();
                    if vals.len() != 3 {
                        return Err(Error::Parse(format!(
                            "line {}: edge needs `i j rate`",
                            lineno + 1
                        )));
                    }
                    let i: usize = vals[0]
                        .parse()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                    let j: usize = vals[1]
                        .parse()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                    let k: f64 = vals[2]
                        .parse()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                    t.add_rate(i, j, k)?;
                }
                Some(other) => {
                    return Err(Error::Parse(format!(
                        "line {}: unknown directive `{other}`",
                        lineno + 1
                    )));
                }
                None => {}
            }
        }
        table.ok_or_else(|| Error::Parse("no states line".into()))
    }
}

/// One jump: residence time `T ~ Exp(sum of outgoing rates)` and the next
/// state drawn with probability `k[i][j] / sum`, independently of `T`.
pub fn kmc_step(
    table: &RateTable,
    state: usize,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<(f64, usize)> {
    let row = table.neighbors(state);
    if row.is_empty() {
        return Err(Error::Absorbing(state));
    }
    let total: f64 = row.iter().map(|(_, k)| k).sum();
    // Inverse transforms; u in [0,1) so 1-u in (0,1] keeps ln finite.
    let u: f64 = rng.gen();
    let t = -(1.0 - u).ln() / total;
    let v: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut next = row[row.len() - 1].0;
    for &(j, k) in row {
        acc += k;
        if v < acc {
            next = j;
            break;
        }
    }
    Ok((t, next))
}

/// Piecewise-constant jump trajectory: visited states and residence times.
#[derive(Debug, Clone)]
pub struct KmcTrajectory {
    /// Visited states, starting with the initial one.
    pub states: Vec<usize>,
    /// Residence time of each completed sojourn (`residence.len()` is the
    /// number of jumps taken).
    pub residence: Vec<f64>,
    /// Total simulated time (through the horizon unless absorbed earlier).
    pub total_time: f64,
    /// Time of the last recorded jump (the cumulative sum of residences).
    pub jump_time: f64,
    /// True when the run ended in an absorbing state rather than at `t_end`.
    pub absorbed: bool,
}

impl KmcTrajectory {
    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let mut acc = 0.0;
        for (i, &r) in self.residence.iter().enumerate() {
            acc += r;
            if t < acc {
                return self.states[i];
            }
        }
        *self.states.last().unwrap()
    }

    /// CSV rows `n,state,residence,cumulative_t` with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,state,residence,cumulative_t")?;
        let mut acc = 0.0;
        for (i, &r) in self.residence.iter().enumerate() {
            acc += r;
            writeln!(w, "{i},{},{r:.17e},{acc:.17e}", self.states[i])?;
        }
        Ok(())
    }
}

/// Runs the jump process from `y0` until the clock passes `t_end` or an
/// absorbing state is reached (a normal outcome, flagged on the trajectory).
pub fn kmc_run(
    table: &RateTable,
    y0: usize,
    t_end: f64,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<KmcTrajectory> {
    if y0 >= table.n_states() {
        return Err(Error::Input(format!("initial state {y0} out of range")));
    }
    let mut states = vec![y0];
    let mut residence = Vec::new();
    let mut t = 0.0;
    let mut jump_time = 0.0;
    let mut absorbed = false;
    loop {
        let cur = *states.last().unwrap();
        if table.is_absorbing(cur) {
            absorbed = true;
            break;
        }
        if t >= t_end {
            break;
        }
        let (dt, next) = kmc_step(table, cur, rng)?;
        if t + dt > t_end {
            // The jump would land beyond the horizon: the trajectory stays
            // in `cur` on [t, t_end).
            t = t_end;
            break;
        }
        t += dt;
        jump_time = t;
        residence.push(dt);
        states.push(next);
    }
    Ok(KmcTrajectory {
        states,
        residence,
        total_time: t,
        jump_time,
        absorbed,
    })
}
