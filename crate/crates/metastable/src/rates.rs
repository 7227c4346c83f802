//! Eyring-Kramers rate and exit-distribution formulas.
//!
//! Three prefactor families are provided: the underdamped (friction-dependent)
//! and overdamped prefactors for order-one saddle points, and the
//! generalized-saddle prefactor for boundary minima with positive normal
//! derivative. A fourth variant (the exit-rate prefactor for true saddles,
//! exactly twice the overdamped transition prefactor) is exposed but marked
//! experimental: the harness does not validate it.

use crate::kmc::RateTable;
use crate::landscape::CriticalPointData;
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Which prefactor enters `k = nu * exp(-beta * barrier)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// Underdamped dynamics with friction `gamma`, order-one saddles.
    Langevin { gamma: f64 },
    /// Overdamped dynamics, order-one saddles.
    Overdamped,
    /// Overdamped dynamics, boundary minima with positive normal derivative.
    GeneralizedSaddle,
    /// Exit-rate prefactor for true saddles on the boundary: twice the
    /// overdamped transition prefactor. Experimental, unvalidated.
    SaddleExit,
}

/// Langevin prefactor from raw Hessian data:
/// `(1/4pi) (sqrt(gamma^2 + 4 |lm|) - gamma) sqrt(det_min) / sqrt(|det_saddle|)`.
///
/// The difference of square roots is evaluated in rationalized form, so the
/// large-friction limit is accurate at gamma >> 1 instead of collapsing into
/// catastrophic cancellation.
pub fn prefactor_langevin_data(
    lambda_minus_abs: f64,
    det_min: f64,
    det_saddle_abs: f64,
    gamma: f64,
) -> f64 {
    let diff = 4.0 * lambda_minus_abs / ((gamma * gamma + 4.0 * lambda_minus_abs).sqrt() + gamma);
    diff / (2.0 * TWO_PI) * (det_min / det_saddle_abs).sqrt()
}

/// Overdamped prefactor from raw Hessian data:
/// `(1/2pi) |lm| sqrt(det_min) / sqrt(|det_saddle|)`.
pub fn prefactor_overdamped_data(lambda_minus_abs: f64, det_min: f64, det_saddle_abs: f64) -> f64 {
    lambda_minus_abs / TWO_PI * (det_min / det_saddle_abs).sqrt()
}

fn saddle_data(cp: &CriticalPointData, j: usize) -> Result<(f64, f64, f64)> {
    let m = cp
        .boundary_minima
        .get(j)
        .ok_or_else(|| Error::Input(format!("no boundary minimum with index {j}")))?;
    let lm = m.negative_eigenvalue.ok_or_else(|| {
        Error::Input(format!(
            "boundary point {:?} has no negative Hessian eigenvalue: not an order-one saddle",
            m.position
        ))
    })?;
    if m.full_hessian_det == 0.0 {
        return Err(Error::Input("zero Hessian determinant at the saddle".into()));
    }
    Ok((lm.abs(), cp.interior_hessian_det, m.full_hessian_det.abs()))
}

/// Langevin (friction `gamma`) prefactor for the j-th boundary saddle.
pub fn prefactor_langevin(cp: &CriticalPointData, j: usize, gamma: f64) -> Result<f64> {
    let (lm, dm, ds) = saddle_data(cp, j)?;
    Ok(prefactor_langevin_data(lm, dm, ds, gamma))
}

/// Overdamped prefactor for the j-th boundary saddle.
pub fn prefactor_overdamped(cp: &CriticalPointData, j: usize) -> Result<f64> {
    let (lm, dm, ds) = saddle_data(cp, j)?;
    Ok(prefactor_overdamped_data(lm, dm, ds))
}

/// Per-boundary-region rate prediction.
#[derive(Debug, Clone)]
pub struct RegionRate {
    /// Index into the critical-point data's boundary minima (energy order).
    pub minimum: usize,
    /// Exit probability, normalized over the listed regions.
    pub p: f64,
    /// Raw pairwise exit-probability ratio against the lowest minimum,
    /// `p(i)/p(1)` at leading order (equal to 1 for the lowest minimum).
    pub ek_ratio: f64,
    /// Transition rate `k_{0,i} = lambda1 * p(i)`.
    pub rate: f64,
    /// Prefactor of the rate (`nu` in `k = nu exp(-beta barrier)`).
    pub prefactor: f64,
    /// Energy barrier `V(z_i) - V(x_1)`.
    pub barrier: f64,
    /// Exit-density amplitude
    /// `A_i = beta^{3/2}/sqrt(2 pi) dnV(z_i) sqrt(det_min)/sqrt(det_bnd(z_i))`.
    pub a_coefficient: f64,
}

/// Full prediction of the exit law of one metastable state.
#[derive(Debug, Clone)]
pub struct RatePrediction {
    pub beta: f64,
    pub variant: Variant,
    /// Leading-order exit rate (inverse mean exit time from the QSD).
    pub lambda1: f64,
    pub regions: Vec<RegionRate>,
    /// Set when the geometric assumptions behind the formula fail
    /// (non-positive normal derivative, non-dominant barrier, ties).
    pub warning: Option<String>,
}

/// Leading-order exit law through the generalized saddle points
/// (the boundary minima), for the overdamped dynamics at inverse
/// temperature `beta`.
///
/// The probabilities are normalized across the boundary minima; the exact
/// pairwise ratios are preserved and additionally reported as `ek_ratio`.
pub fn generalized_saddle_prediction(cp: &CriticalPointData, beta: f64) -> Result<RatePrediction> {
    if beta <= 0.0 {
        return Err(Error::Input("beta must be positive".into()));
    }
    if cp.boundary_minima.is_empty() {
        return Err(Error::Input("no boundary minima".into()));
    }
    let mut warning = None;
    if !cp.normal_derivative_positive {
        warning = Some("normal derivative is not positive at every boundary minimum".to_string());
    } else if !cp.barrier_assumption {
        warning = Some(
            "barrier does not dominate the boundary-minimum spread: V(z_1)-V(x_1) <= V(z_I)-V(z_1)"
                .to_string(),
        );
    } else if !cp.strictly_ordered {
        warning = Some("boundary minima energies are not strictly ordered".to_string());
    }

    let z1 = &cp.boundary_minima[0];
    let sqrt_det_min = cp.interior_hessian_det.sqrt();
    let pref = (beta / TWO_PI).sqrt();
    let lambda1 = pref * z1.normal_derivative * sqrt_det_min / z1.boundary_hessian_det.sqrt()
        * (-beta * (z1.energy - cp.interior_energy)).exp();

    let mut raw = Vec::with_capacity(cp.boundary_minima.len());
    for m in &cp.boundary_minima {
        let ratio = m.normal_derivative * z1.boundary_hessian_det.sqrt()
            / (z1.normal_derivative * m.boundary_hessian_det.sqrt())
            * (-beta * (m.energy - z1.energy)).exp();
        raw.push(ratio);
    }
    let total: f64 = raw.iter().sum();
    let regions: Vec<RegionRate> = cp
        .boundary_minima
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let nu = pref * m.normal_derivative * sqrt_det_min / m.boundary_hessian_det.sqrt();
            let a = beta.powf(1.5) / TWO_PI.sqrt() * m.normal_derivative * sqrt_det_min
                / m.boundary_hessian_det.sqrt();
            let p = raw[i] / total;
            RegionRate {
                minimum: i,
                p,
                ek_ratio: raw[i],
                rate: lambda1 * p,
                prefactor: nu,
                barrier: m.energy - cp.interior_energy,
                a_coefficient: a,
            }
        })
        .collect();

    Ok(RatePrediction {
        beta,
        variant: Variant::GeneralizedSaddle,
        lambda1,
        regions,
        warning,
    })
}

/// Prefactor for one boundary minimum under the chosen variant.
pub fn prefactor(cp: &CriticalPointData, j: usize, beta: f64, variant: Variant) -> Result<f64> {
    match variant {
        Variant::Langevin { gamma } => prefactor_langevin(cp, j, gamma),
        Variant::Overdamped => prefactor_overdamped(cp, j),
        Variant::SaddleExit => Ok(2.0 * prefactor_overdamped(cp, j)?),
        Variant::GeneralizedSaddle => {
            let m = &cp.boundary_minima[j];
            if m.normal_derivative <= 0.0 {
                return Err(Error::Input(format!(
                    "normal derivative {:.3e} is not positive at {:?}",
                    m.normal_derivative, m.position
                )));
            }
            Ok((beta / TWO_PI).sqrt() * m.normal_derivative * cp.interior_hessian_det.sqrt()
                / m.boundary_hessian_det.sqrt())
        }
    }
}

/// Builds a jump-process rate table from per-state critical-point data.
///
/// `states[i]` carries the critical points of state `i` together with the
/// target state of each boundary minimum, in the same order; a `None`
/// target marks a boundary minimum that is not a transition channel
/// (an outer wall), which contributes no edge.
pub fn build_rate_table(
    states: &[(CriticalPointData, Vec<Option<usize>>)],
    beta: f64,
    variant: Variant,
) -> Result<RateTable> {
    let n = states.len();
    let mut table = RateTable::new(n);
    for (i, (cp, targets)) in states.iter().enumerate() {
        if targets.len() != cp.boundary_minima.len() {
            return Err(Error::Input(format!(
                "state {i}: {} boundary minima but {} adjacency targets",
                cp.boundary_minima.len(),
                targets.len()
            )));
        }
        for (j, (m, &target)) in cp.boundary_minima.iter().zip(targets.iter()).enumerate() {
            let Some(target) = target else {
                continue;
            };
            if target >= n {
                return Err(Error::Input(format!(
                    "state {i}: adjacency target {target} out of range"
                )));
            }
            let barrier = m.energy - cp.interior_energy;
            if barrier < 0.0 {
                return Err(Error::Input(format!(
                    "state {i}: negative barrier {barrier:.6} at boundary minimum {j}"
                )));
            }
            let nu = prefactor(cp, j, beta, variant)?;
            table.add_rate(i, target, nu * (-beta * barrier).exp())?;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Interval;
    use crate::landscape::{critical_points, DoubleWell1d};

    /// Saddle data of the symmetric double well `(x^2-1)^2`:
    /// V''(1) = 8 at the well, V''(0) = -4 at the saddle.
    fn double_well_cp() -> CriticalPointData {
        let p = DoubleWell1d { h: 1.0 };
        // The state around x = +1 with the saddle at the left end.
        let d = Interval::new(0.0, 2.5);
        critical_points(&p, &d, &[0.8]).unwrap()
    }

    #[test]
    fn overdamped_prefactor_for_the_double_well() {
        let cp = double_well_cp();
        // Boundary minimum at x = 0 (the saddle, V = 1) sorts after x = 2.5?
        // V(2.5) = (6.25-1)^2 = 27.6 > 1, so index 0 is the saddle at x = 0.
        let nu = prefactor_overdamped(&cp, 0).unwrap();
        let expected = 2.0 * std::f64::consts::SQRT_2 / std::f64::consts::PI;
        assert!(
            (nu - expected).abs() < 1e-6,
            "nu = {nu}, expected {expected}"
        );
    }

    #[test]
    fn one_dimensional_reduction_of_the_langevin_prefactor() {
        // omega0^2 = 8, omega1^2 = 4: (1/4pi)(sqrt(g^2+16)-g) * sqrt(8)/2.
        let gamma = 0.7;
        let nu = prefactor_langevin_data(4.0, 8.0, 4.0, gamma);
        let direct = ((gamma * gamma + 16.0).sqrt() - gamma) / (4.0 * std::f64::consts::PI)
            * (8.0f64.sqrt() / 2.0);
        assert!((nu - direct).abs() < 1e-12);
    }

    #[test]
    fn friction_limit_connects_the_two_families() {
        let gamma = 1e6;
        for (lm, dm, ds) in [(4.0, 8.0, 4.0), (2.0, 4.0, 4.0), (1.3, 5.0, 2.0)] {
            let l = gamma * prefactor_langevin_data(lm, dm, ds, gamma);
            let o = prefactor_overdamped_data(lm, dm, ds);
            assert!(
                ((l - o) / o).abs() <= 1e-4,
                "gamma nu_L = {l}, nu_OL = {o}"
            );
        }
    }

    #[test]
    fn saddle_exit_variant_doubles_the_overdamped_prefactor() {
        let cp = double_well_cp();
        let a = prefactor(&cp, 0, 4.0, Variant::Overdamped).unwrap();
        let b = prefactor(&cp, 0, 4.0, Variant::SaddleExit).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-14);
    }

    #[test]
    fn rate_ratio_structure_is_exact() {
        use crate::geometry::build_paper_domain;
        use crate::landscape::QuadraticShifted;
        let p = QuadraticShifted { a: 0.1 };
        let d = build_paper_domain();
        let cp = critical_points(&p, &d, &[0.0, 0.0]).unwrap();
        let pred = generalized_saddle_prediction(&cp, 12.0).unwrap();
        for r in &pred.regions {
            let lhs = r.rate / pred.regions[0].rate;
            let rhs = r.p / pred.regions[0].p;
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
        let sum: f64 = pred.regions.iter().map(|r| r.p).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(pred.warning.is_none());
    }
}
