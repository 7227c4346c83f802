//! Potential energy landscapes: evaluators, derivatives, critical-point data.
//!
//! Everything downstream (integrators, rate formulas, spectral solves) reads
//! the landscape through the [`Potential`] trait. Built-ins cover the test
//! potentials used by the verification harness; the trait itself is
//! dimension-generic.

use crate::geometry::Domain;
use crate::{check_dim, Error, Result};

/// A smooth potential energy function with gradient and Hessian access.
///
/// Implementations must be immutable after construction; they are shared
/// freely across worker threads.
pub trait Potential: Sync + Send {
    fn dim(&self) -> usize;

    fn energy(&self, x: &[f64]) -> f64;

    /// Writes the gradient of the energy at `x` into `g`.
    fn gradient(&self, x: &[f64], g: &mut [f64]);

    /// Writes the (symmetric) Hessian at `x` into `h`, row-major `dim*dim`.
    ///
    /// The default implementation is a central finite difference of the
    /// gradient with step `eps^(1/3) * max(1, |x_i|)` per coordinate.
    fn hessian(&self, x: &[f64], h: &mut [f64]) {
        fd_hessian(self, x, h);
    }

    fn name(&self) -> &str;

    /// Named parameters, for configuration echo and reports.
    fn params(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
}

/// Central finite-difference gradient with step `1e-5 * max(1, |x_i|)`.
pub fn fd_gradient<P: Potential + ?Sized>(p: &P, x: &[f64], g: &mut [f64]) {
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let ep = p.energy(&xp);
        xp[i] = x[i] - h;
        let em = p.energy(&xp);
        xp[i] = x[i];
        g[i] = (ep - em) / (2.0 * h);
    }
}

/// Central finite-difference Hessian of the gradient,
/// step `eps^(1/3) * max(1, |x_i|)`.
pub fn fd_hessian<P: Potential + ?Sized>(p: &P, x: &[f64], hess: &mut [f64]) {
    let d = x.len();
    let step = f64::EPSILON.powf(1.0 / 3.0);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for j in 0..d {
        let h = step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        p.gradient(&xp, &mut gp);
        xp[j] = x[j] - h;
        p.gradient(&xp, &mut gm);
        xp[j] = x[j];
        for i in 0..d {
            hess[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    // Symmetrize; the FD estimate is symmetric only up to truncation error.
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (hess[i * d + j] + hess[j * d + i]);
            hess[i * d + j] = avg;
            hess[j * d + i] = avg;
        }
    }
}

/// Wrapper that discards the analytic gradient and uses finite differences,
/// for `gradient_mode = finite-difference` configurations.
pub struct NumericalGradient<P>(pub P);

impl<P: Potential> Potential for NumericalGradient<P> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn energy(&self, x: &[f64]) -> f64 {
        self.0.energy(x)
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        fd_gradient(&self.0, x, g);
    }
    fn name(&self) -> &str {
        self.0.name()
    }
    fn params(&self) -> Vec<(&'static str, f64)> {
        self.0.params()
    }
}

// ---------------------------------------------------------------------------
// Built-in potentials
// ---------------------------------------------------------------------------

/// `V(x, y) = x^2 + y^2 - a x` — a single tilted well in 2D.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticShifted {
    pub a: f64,
}

impl Potential for QuadraticShifted {
    #[inline]
    fn dim(&self) -> usize {
        2
    }
    #[inline]
    fn energy(&self, x: &[f64]) -> f64 {
        x[0] * x[0] + x[1] * x[1] - self.a * x[0]
    }
    #[inline]
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = 2.0 * x[0] - self.a;
        g[1] = 2.0 * x[1];
    }
    fn hessian(&self, _x: &[f64], h: &mut [f64]) {
        h.copy_from_slice(&[2.0, 0.0, 0.0, 2.0]);
    }
    fn name(&self) -> &str {
        "quadratic_shifted"
    }
    fn params(&self) -> Vec<(&'static str, f64)> {
        vec![("a", self.a)]
    }
}

/// `V(x, y) = (y^2 - 2 a(x))^3` with `a(x) = a1 x^2 + b1 x + 0.5`.
///
/// The zero level set `y^2 = 2 a(x)` is a pair of flat ledges ("corniches",
/// where the gradient vanishes identically) running across the slopes of the
/// well. They give cheap Agmon paths from the high boundary minimum into the
/// rest of the boundary, which is exactly what the ledge construction is for.
#[derive(Debug, Clone, Copy)]
pub struct Corniche {
    pub a1: f64,
    pub b1: f64,
}

impl Corniche {
    /// Coefficients fixed by the two conditions `a(-1 + delta) = 0` and
    /// `a(1) = 1/4`, with `delta = 0.05` (a 2x2 linear solve).
    pub fn standard() -> Self {
        let delta = 0.05;
        let x0 = -1.0 + delta;
        // a1*x0^2 + b1*x0 = -0.5 ; a1 + b1 = -0.25
        let det = x0 * x0 - x0;
        let a1 = (-0.5 - x0 * (-0.25)) / det;
        let b1 = -0.25 - a1;
        Corniche { a1, b1 }
    }

    #[inline]
    fn a(&self, x: f64) -> f64 {
        (self.a1 * x + self.b1) * x + 0.5
    }
    #[inline]
    fn a_prime(&self, x: f64) -> f64 {
        2.0 * self.a1 * x + self.b1
    }
}

impl Potential for Corniche {
    #[inline]
    fn dim(&self) -> usize {
        2
    }
    #[inline]
    fn energy(&self, x: &[f64]) -> f64 {
        let f = x[1] * x[1] - 2.0 * self.a(x[0]);
        f * f * f
    }
    #[inline]
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let f = x[1] * x[1] - 2.0 * self.a(x[0]);
        let f2 = 3.0 * f * f;
        g[0] = -2.0 * self.a_prime(x[0]) * f2;
        g[1] = 2.0 * x[1] * f2;
    }
    fn hessian(&self, x: &[f64], h: &mut [f64]) {
        let f = x[1] * x[1] - 2.0 * self.a(x[0]);
        let ap = self.a_prime(x[0]);
        let app = 2.0 * self.a1;
        let y = x[1];
        h[0] = 24.0 * f * ap * ap - 6.0 * f * f * app;
        h[3] = 6.0 * f * f + 24.0 * f * y * y;
        h[1] = -24.0 * f * y * ap;
        h[2] = h[1];
    }
    fn name(&self) -> &str {
        "corniche"
    }
    fn params(&self) -> Vec<(&'static str, f64)> {
        vec![("a1", self.a1), ("b1", self.b1)]
    }
}

/// `V(x) = h (x^2 - 1)^2` — the 1D double well, wells at ±1, saddle at 0.
#[derive(Debug, Clone, Copy)]
pub struct DoubleWell1d {
    pub h: f64,
}

impl Default for DoubleWell1d {
    fn default() -> Self {
        DoubleWell1d { h: 1.0 }
    }
}

impl Potential for DoubleWell1d {
    #[inline]
    fn dim(&self) -> usize {
        1
    }
    #[inline]
    fn energy(&self, x: &[f64]) -> f64 {
        let t = x[0] * x[0] - 1.0;
        self.h * t * t
    }
    #[inline]
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = 4.0 * self.h * x[0] * (x[0] * x[0] - 1.0);
    }
    fn hessian(&self, x: &[f64], h: &mut [f64]) {
        h[0] = 4.0 * self.h * (3.0 * x[0] * x[0] - 1.0);
    }
    fn name(&self) -> &str {
        "double_well"
    }
    fn params(&self) -> Vec<(&'static str, f64)> {
        vec![("h", self.h)]
    }
}

/// `V = 0` in any dimension: pure Brownian motion, entropic-barrier case.
#[derive(Debug, Clone, Copy)]
pub struct Zero {
    pub dim: usize,
}

impl Potential for Zero {
    #[inline]
    fn dim(&self) -> usize {
        self.dim
    }
    #[inline]
    fn energy(&self, _x: &[f64]) -> f64 {
        0.0
    }
    #[inline]
    fn gradient(&self, _x: &[f64], g: &mut [f64]) {
        g.fill(0.0);
    }
    fn hessian(&self, _x: &[f64], h: &mut [f64]) {
        h.fill(0.0);
    }
    fn name(&self) -> &str {
        "zero"
    }
}

/// `V(x) = |x|^2 / 2` — Ornstein-Uhlenbeck well, any dimension.
#[derive(Debug, Clone, Copy)]
pub struct Harmonic {
    pub dim: usize,
}

impl Potential for Harmonic {
    #[inline]
    fn dim(&self) -> usize {
        self.dim
    }
    #[inline]
    fn energy(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
    #[inline]
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g.copy_from_slice(x);
    }
    fn hessian(&self, x: &[f64], h: &mut [f64]) {
        let d = x.len();
        h.fill(0.0);
        for i in 0..d {
            h[i * d + i] = 1.0;
        }
    }
    fn name(&self) -> &str {
        "harmonic"
    }
}

/// Config-level dispatch over the built-ins.
#[derive(Debug, Clone)]
pub enum AnyPotential {
    QuadraticShifted(QuadraticShifted),
    Corniche(Corniche),
    DoubleWell1d(DoubleWell1d),
    Zero(Zero),
    Harmonic(Harmonic),
}

impl AnyPotential {
    pub fn by_name(name: &str, params: &[(String, f64)]) -> Result<Self> {
        let get = |key: &str, default: Option<f64>| -> Result<f64> {
            params
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| *v)
                .or(default)
                .ok_or_else(|| Error::Input(format!("potential `{name}` needs parameter `{key}`")))
        };
        match name {
            "quadratic_shifted" => Ok(AnyPotential::QuadraticShifted(QuadraticShifted {
                a: get("a", None)?,
            })),
            "corniche" => Ok(AnyPotential::Corniche(Corniche::standard())),
            "double_well" => Ok(AnyPotential::DoubleWell1d(DoubleWell1d {
                h: get("h", Some(1.0))?,
            })),
            "zero" => Ok(AnyPotential::Zero(Zero {
                dim: get("dim", Some(1.0))? as usize,
            })),
            "harmonic" => Ok(AnyPotential::Harmonic(Harmonic {
                dim: get("dim", Some(1.0))? as usize,
            })),
            other => Err(Error::Input(format!("unknown potential `{other}`"))),
        }
    }
}

/// Runs `body` with the concrete potential type, so hot loops monomorphize.
#[macro_export]
macro_rules! with_potential {
    ($any:expr, |$p:ident| $body:expr) => {
        match $any {
            $crate::landscape::AnyPotential::QuadraticShifted($p) => $body,
            $crate::landscape::AnyPotential::Corniche($p) => $body,
            $crate::landscape::AnyPotential::DoubleWell1d($p) => $body,
            $crate::landscape::AnyPotential::Zero($p) => $body,
            $crate::landscape::AnyPotential::Harmonic($p) => $body,
        }
    };
}

impl Potential for AnyPotential {
    fn dim(&self) -> usize {
        with_potential!(self, |p| p.dim())
    }
    #[inline]
    fn energy(&self, x: &[f64]) -> f64 {
        with_potential!(self, |p| p.energy(x))
    }
    #[inline]
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        with_potential!(self, |p| p.gradient(x, g))
    }
    fn hessian(&self, x: &[f64], h: &mut [f64]) {
        with_potential!(self, |p| p.hessian(x, h))
    }
    fn name(&self) -> &str {
        with_potential!(self, |p| p.name())
    }
    fn params(&self) -> Vec<(&'static str, f64)> {
        with_potential!(self, |p| p.params())
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Evaluates energy and gradient at `x`.
pub fn evaluate<P: Potential + ?Sized>(p: &P, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(p.dim(), x.len())?;
    let e = p.energy(x);
    let mut g = vec![0.0; x.len()];
    p.gradient(x, &mut g);
    if !e.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("potential evaluation at {x:?}")));
    }
    Ok((e, g))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent with backtracking, then Newton refinement, to the interior
/// minimum of `p` inside `domain`. Converges to `|grad| <= 1e-10` with a
/// positive-definite Hessian or reports a convergence error.
pub fn find_interior_minimum<P: Potential + ?Sized, Dm: Domain + ?Sized>(
    p: &P,
    domain: &Dm,
    x0: &[f64],
) -> Result<Vec<f64>> {
    check_dim(p.dim(), x0.len())?;
    if !domain.contains(x0) {
        return Err(Error::Input(format!("start point {x0:?} not inside domain")));
    }
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; d];
    let mut e = p.energy(&x);
    p.gradient(&x, &mut g);

    // Descent phase: crude but globally safe.
    let mut step = 0.1;
    for _ in 0..200_000 {
        if norm(&g) < 1e-5 {
            break;
        }
        let mut trial = x.clone();
        for i in 0..d {
            trial[i] = x[i] - step * g[i];
        }
        let et = p.energy(&trial);
        if et < e && domain.contains(&trial) {
            x = trial;
            e = et;
            p.gradient(&x, &mut g);
            step = (step * 1.3).min(0.5);
        } else {
            step *= 0.5;
            if step < 1e-16 {
                break;
            }
        }
    }

    // Newton polish.
    let mut hess = vec![0.0; d * d];
    for _ in 0..200 {
        p.gradient(&x, &mut g);
        if norm(&g) <= 1e-10 {
            break;
        }
        p.hessian(&x, &mut hess);
        let dx = linalg::solve(&hess, &g, d)
            .ok_or_else(|| Error::Convergence("singular Hessian in Newton refinement".into()))?;
        let mut damping = 1.0;
        loop {
            let mut trial = x.clone();
            for i in 0..d {
                trial[i] = x[i] - damping * dx[i];
            }
            let mut gt = vec![0.0; d];
            p.gradient(&trial, &mut gt);
            if norm(&gt) < norm(&g) || damping < 1e-8 {
                x = trial;
                break;
            }
            damping *= 0.5;
        }
    }

    p.gradient(&x, &mut g);
    if norm(&g) > 1e-10 {
        return Err(Error::Convergence(format!(
            "minimum search stalled at |grad| = {:.3e}",
            norm(&g)
        )));
    }
    if !domain.contains(&x) {
        return Err(Error::Convergence("iteration left the domain".into()));
    }
    p.hessian(&x, &mut hess);
    let eigs = linalg::sym_eigenvalues(&hess, d);
    if eigs.iter().any(|&l| l <= 0.0) {
        return Err(Error::Convergence(format!(
            "converged to a non-minimum critical point, Hessian eigenvalues {eigs:?}"
        )));
    }
    Ok(x)
}

/// A local minimum of the potential restricted to the domain boundary
/// (a generalized saddle point when the normal derivative is positive).
#[derive(Debug, Clone)]
pub struct BoundaryMinimum {
    pub position: Vec<f64>,
    /// Arc-length coordinate on the boundary loop (2D) or endpoint index (1D).
    pub arc_s: f64,
    pub energy: f64,
    /// Outward normal derivative of V.
    pub normal_derivative: f64,
    /// det of the Hessian of V restricted to the boundary. For d=2 this is
    /// the second derivative along the arc-length parametrization; for d=1
    /// the boundary is a point and the empty determinant is 1.
    pub boundary_hessian_det: f64,
    /// det of the full Hessian of V at the point.
    pub full_hessian_det: f64,
    /// Most negative eigenvalue of the full Hessian, when one exists
    /// (needed only by the order-one-saddle prefactor variants).
    pub negative_eigenvalue: Option<f64>,
}

/// Critical-point summary of one metastable state: the interior minimum and
/// the ordered boundary minima with the data the rate formulas consume.
#[derive(Debug, Clone)]
pub struct CriticalPointData {
    pub interior_minimum: Vec<f64>,
    pub interior_energy: f64,
    pub interior_hessian_det: f64,
    /// Sorted by increasing boundary energy.
    pub boundary_minima: Vec<BoundaryMinimum>,
    /// True when the boundary energies are strictly increasing.
    pub strictly_ordered: bool,
    /// True when the normal derivative is positive at every boundary minimum.
    pub normal_derivative_positive: bool,
    /// True when `V(z_1) - V(x_1) > V(z_I) - V(z_1)`: the barrier dominates
    /// the spread of boundary minima.
    pub barrier_assumption: bool,
}

impl CriticalPointData {
    pub fn barrier(&self, i: usize) -> f64 {
        self.boundary_minima[i].energy - self.interior_energy
    }

    pub fn saddle_gap(&self) -> f64 {
        let n = self.boundary_minima.len();
        self.boundary_minima[n - 1].energy - self.boundary_minima[0].energy
    }
}

/// All local minima of `V` restricted to the boundary of a 2D domain, by a
/// dense arc-length scan followed by 1D Newton polish.
pub fn boundary_minima<P: Potential + ?Sized, Dm: Domain + ?Sized>(
    p: &P,
    domain: &Dm,
) -> Result<Vec<BoundaryMinimum>> {
    match domain.dim() {
        1 => boundary_minima_1d(p, domain),
        2 => boundary_minima_2d(p, domain),
        d => Err(Error::Input(format!("no boundary parametrization for dim {d}"))),
    }
}

fn boundary_minima_1d<P: Potential + ?Sized, Dm: Domain + ?Sized>(
    p: &P,
    domain: &Dm,
) -> Result<Vec<BoundaryMinimum>> {
    let (lo, hi) = domain.bounding_box();
    let mut out = Vec::new();
    for (idx, (xb, outward)) in [(lo[0], -1.0), (hi[0], 1.0)].iter().enumerate() {
        let mut g = [0.0];
        p.gradient(&[*xb], &mut g);
        let mut h = [0.0];
        p.hessian(&[*xb], &mut h);
        out.push(BoundaryMinimum {
            position: vec![*xb],
            arc_s: idx as f64,
            energy: p.energy(&[*xb]),
            normal_derivative: outward * g[0],
            boundary_hessian_det: 1.0,
            full_hessian_det: h[0],
            negative_eigenvalue: if h[0] < 0.0 { Some(h[0]) } else { None },
        });
    }
    out.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(out)
}

fn boundary_minima_2d<P: Potential + ?Sized, Dm: Domain + ?Sized>(
    p: &P,
    domain: &Dm,
) -> Result<Vec<BoundaryMinimum>> {
    let loop_ = domain
        .boundary()
        .ok_or_else(|| Error::Input("domain exposes no boundary parametrization".into()))?;
    let total = loop_.total_length();
    let n_scan = 10_000usize;
    let ds = total / n_scan as f64;

    let value = |s: f64| -> f64 {
        let (pt, _, _) = loop_.point_normal_tangent(s);
        p.energy(&pt)
    };
    let scan: Vec<f64> = (0..n_scan).map(|k| value(k as f64 * ds)).collect();
    let (vmin, vmax) = scan
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if vmax - vmin < 1e-12 {
        return Err(Error::Degeneracy(
            "V is constant along the boundary: every point is critical".into(),
        ));
    }

    // dV/ds and d2V/ds2 along the loop, with the curvature term for arcs.
    let derivs = |s: f64| -> (f64, f64, Vec<f64>, f64, f64) {
        let (pt, normal, tangent) = loop_.point_normal_tangent(s);
        let d = 2usize;
        let mut g = vec![0.0; d];
        p.gradient(&pt, &mut g);
        let mut h = vec![0.0; d * d];
        p.hessian(&pt, &mut h);
        let dv = g[0] * tangent[0] + g[1] * tangent[1];
        let tht = tangent[0] * (h[0] * tangent[0] + h[1] * tangent[1])
            + tangent[1] * (h[2] * tangent[0] + h[3] * tangent[1]);
        let curv = loop_.tangent_derivative(s);
        let d2v = tht + g[0] * curv[0] + g[1] * curv[1];
        let dn = g[0] * normal[0] + g[1] * normal[1];
        let full_det = h[0] * h[3] - h[1] * h[2];
        (dv, d2v, pt, dn, full_det)
    };

    let mut minima: Vec<BoundaryMinimum> = Vec::new();
    for k in 0..n_scan {
        let prev = scan[(k + n_scan - 1) % n_scan];
        let next = scan[(k + 1) % n_scan];
        let here = scan[k];
        if here < prev && here <= next {
            // Newton polish on s.
            let mut s = k as f64 * ds;
            for _ in 0..60 {
                let (dv, d2v, _, _, _) = derivs(s);
                if d2v.abs() < 1e-14 {
                    break;
                }
                let step = (dv / d2v).clamp(-ds, ds);
                s -= step;
                if step.abs() < 1e-14 * total {
                    break;
                }
            }
            let s = s.rem_euclid(total);
            let (dv, d2v, pt, dn, full_det) = derivs(s);
            if dv.abs() > 1e-7 {
                continue; // polish escaped: scan-cell minimum was spurious
            }
            if d2v.abs() < 1e-10 {
                return Err(Error::Degeneracy(format!(
                    "boundary critical point at s = {s:.6} has |d2V/ds2| = {:.3e}",
                    d2v.abs()
                )));
            }
            if d2v < 0.0 {
                continue; // a boundary maximum
            }
            // Deduplicate against already-found minima.
            if minima.iter().any(|m| {
                let dx = m.position[0] - pt[0];
                let dy = m.position[1] - pt[1];
                (dx * dx + dy * dy).sqrt() < 10.0 * ds
            }) {
                continue;
            }
            let mut h = vec![0.0; 4];
            p.hessian(&pt, &mut h);
            let eigs = linalg::sym_eigenvalues(&h, 2);
            let neg = eigs.iter().cloned().filter(|&l| l < 0.0).fold(None, |acc: Option<f64>, l| {
                Some(acc.map_or(l, |a: f64| a.min(l)))
            });
            minima.push(BoundaryMinimum {
                position: pt,
                arc_s: s,
                energy: value(s),
                normal_derivative: dn,
                boundary_hessian_det: d2v,
                full_hessian_det: full_det,
                negative_eigenvalue: neg,
            });
        }
    }
    if minima.is_empty() {
        return Err(Error::Convergence("no boundary minima located".into()));
    }
    minima.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(minima)
}

/// Assembles the full critical-point summary for one state.
pub fn critical_points<P: Potential + ?Sized, Dm: Domain + ?Sized>(
    p: &P,
    domain: &Dm,
    x0: &[f64],
) -> Result<CriticalPointData> {
    let x1 = find_interior_minimum(p, domain, x0)?;
    let d = p.dim();
    let mut h = vec![0.0; d * d];
    p.hessian(&x1, &mut h);
    let int_det = linalg::det(&h, d);
    let eigs = linalg::sym_eigenvalues(&h, d);
    if eigs.iter().any(|l| l.abs() < 1e-8) {
        return Err(Error::Degeneracy(format!(
            "interior minimum fails the Morse check, eigenvalues {eigs:?}"
        )));
    }
    let minima = boundary_minima(p, domain)?;
    for m in &minima {
        let mut hb = vec![0.0; d * d];
        p.hessian(&m.position, &mut hb);
        let be = linalg::sym_eigenvalues(&hb, d);
        if be.iter().any(|l| l.abs() < 1e-8) && m.normal_derivative.abs() < 1e-8 {
            return Err(Error::Degeneracy(format!(
                "boundary point {:?} fails the Morse check",
                m.position
            )));
        }
    }
    let strictly_ordered = minima.windows(2).all(|w| w[1].energy > w[0].energy + 1e-12);
    let normal_derivative_positive = minima.iter().all(|m| m.normal_derivative > 0.0);
    let interior_energy = p.energy(&x1);
    let barrier_assumption = {
        let v1 = minima[0].energy;
        let vi = minima[minima.len() - 1].energy;
        v1 - interior_energy > vi - v1
    };
    Ok(CriticalPointData {
        interior_minimum: x1,
        interior_energy,
        interior_hessian_det: int_det,
        boundary_minima: minima,
        strictly_ordered,
        normal_derivative_positive,
        barrier_assumption,
    })
}

// ---------------------------------------------------------------------------
// Small dense linear algebra (d <= 3 in practice)
// ---------------------------------------------------------------------------

pub(crate) mod linalg {
    /// Gaussian elimination with partial pivoting; returns None if singular.
    pub fn solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
        let mut m = a.to_vec();
        let mut rhs = b.to_vec();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
            if m[piv * n + col].abs() < 1e-300 {
                return None;
            }
            if piv != col {
                for k in 0..n {
                    m.swap(col * n + k, piv * n + k);
                }
                rhs.swap(col, piv);
            }
            for row in (col + 1)..n {
                let f = m[row * n + col] / m[col * n + col];
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = rhs[row];
            for k in (row + 1)..n {
                s -= m[row * n + k] * x[k];
            }
            x[row] = s / m[row * n + row];
        }
        Some(x)
    }

    pub fn det(a: &[f64], n: usize) -> f64 {
        match n {
            1 => a[0],
            2 => a[0] * a[3] - a[1] * a[2],
            _ => {
                let mut m = a.to_vec();
                let mut d = 1.0;
                for col in 0..n {
                    let piv = (col..n)
                        .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
                        .unwrap();
                    if m[piv * n + col] == 0.0 {
                        return 0.0;
                    }
                    if piv != col {
                        for k in 0..n {
                            m.swap(col * n + k, piv * n + k);
                        }
                        d = -d;
                    }
                    d *= m[col * n + col];
                    for row in (col + 1)..n {
                        let f = m[row * n + col] / m[col * n + col];
                        for k in col..n {
                            m[row * n + k] -= f * m[col * n + k];
                        }
                    }
                }
                d
            }
        }
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
    pub fn sym_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![a[0]];
        }
        let mut m = a.to_vec();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m[i * n + j] * m[i * n + j];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = m[k * n + p];
                        let akq = m[k * n + q];
                        m[k * n + p] = c * akp - s * akq;
                        m[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = m[p * n + k];
                        let aqk = m[q * n + k];
                        m[p * n + k] = c * apk - s * aqk;
                        m[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eigs: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
        eigs.sort_by(|a, b| a.total_cmp(b));
        eigs
    }
}
