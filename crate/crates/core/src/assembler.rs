//! Multi-point approximate solutions, the dual operator, residuals and
//! cokernel projections.
//!
//! Configurations are restricted to singular points on a common line, so all
//! fields are axially symmetric and integrals over `R^n` reduce to the
//! half plane `(s, rho)` with the sphere `S^{n-2}` averaged out analytically.

use crate::balancing::{BalancedConfig, SingularSet};
use crate::bubbles::{bubble_profile, KernelIndex, TowerConfig};
use crate::constants::{gamma_fn, sphere_area, ProblemParams};
use crate::delaunay::{full_tower_ef, solve_periodic, CylSolution};
use crate::error::{QcError, Result};
use crate::kernels::{angular_integral, CylKernelTable, KernelKind};
use crate::quad::{gauss_legendre, gauss_legendre_on, integrate_pieces_scaled};
use crate::toda::WeightedSeq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const RADIAL_SEG: usize = 4000;

fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

/// Smooth monotone cutoff: 1 on `[0, a]`, 0 on `[b, inf)`.
pub fn cutoff(r: f64, a: f64, b: f64) -> f64 {
    1.0 - smooth_step((r - a) / (b - a))
}

/// The cutoff `chi` applied to the Delaunay correction.
pub fn chi(r: f64) -> f64 {
    cutoff(r, 0.5, 1.0)
}

/// Localization of the Delaunay source, 1 on the unit ball.
fn theta(r: f64) -> f64 {
    cutoff(r, 1.0, 2.0)
}

/// `cosh(x)^{-g}` without overflow.
fn sech_pow(x: f64, g: f64) -> f64 {
    let e = (-x.abs()).exp();
    (2.0 * e / (1.0 + e * e)).powf(g)
}

/// `sum_{j >= 0} cosh(t - (2j+1) L)^{-g}`.
pub fn half_tower_ef(t: f64, l: f64, g: f64) -> f64 {
    let jc = ((t / l - 1.0) / 2.0).ceil().max(0.0) as i64;
    (0..=jc + 40).map(|j| sech_pow(t - (2 * j + 1) as f64 * l, g)).sum()
}

/// `sum_{j >= 1} cosh(t + (2j-1) L)^{-g}`, the levels missing from the half tower.
pub fn minus_tower_ef(t: f64, l: f64, g: f64) -> f64 {
    let jc = ((-t / l + 1.0) / 2.0).ceil().max(1.0) as i64;
    (1..=jc + 40).map(|j| sech_pow(t + (2 * j - 1) as f64 * l, g)).sum()
}

fn lagrange4(vals: &[f64], x: f64) -> f64 {
    let n = vals.len() as i64;
    let i = x.floor() as i64;
    let lo = (i - 1).clamp(0, n - 4);
    let mut s = 0.0;
    for a in 0..4 {
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                w *= (x - (lo + b) as f64) / (a - b) as f64;
            }
        }
        s += w * vals[(lo + a) as usize];
    }
    s
}

/// `int_{S^{n-2}} |x - y|^{-2 gamma} d omega` for two points given in
/// axial/radial coordinates, tabulated in `u = -ln(1 - B/A)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxialKernel {
    gamma: f64,
    sphere: f64,
    h: f64,
    vals: Vec<f64>,
    at_one: f64,
}

impl AxialKernel {
    pub fn build(params: &ProblemParams, tol: f64) -> Result<Self> {
        if params.n < 3 {
            return Err(QcError::Unsupported("axial reduction needs n >= 3".into()));
        }
        let g = params.gamma_s;
        let w = (params.n as f64 - 4.0) / 2.0;
        let base = std::f64::consts::PI.sqrt() * gamma_fn(w + 1.0)? / gamma_fn(w + 1.5)?;
        let second = g * (g + 1.0) / 2.0 / (2.0 * w + 3.0);
        let phi = |beta: f64| -> Result<f64> {
            if beta < 1e-3 {
                Ok(base * (1.0 + second * beta * beta))
            } else {
                Ok(beta.powf(-g) * angular_integral(1.0 / beta - 1.0, g, w, tol)?)
            }
        };
        let h = 0.02;
        let u_max = 100.0;
        let count = (u_max / h) as usize + 1;
        let vals = (0..count)
            .into_par_iter()
            .map(|k| phi(-(-(k as f64) * h).exp_m1()))
            .collect::<Result<Vec<f64>>>()?;
        let at_one = angular_integral(0.0, g, w, tol)?;
        Ok(Self { gamma: g, sphere: sphere_area(params.n - 3), h, vals, at_one })
    }

    /// `ds` is the axial offset, `rx` and `ry` the two distances to the axis.
    pub fn eval(&self, ds: f64, rx: f64, ry: f64) -> f64 {
        let amb = ds * ds + (rx - ry) * (rx - ry);
        let b = 2.0 * rx * ry;
        let a = amb + b;
        let phi = if amb <= 0.0 {
            self.at_one
        } else {
            let u = (a / amb).ln() / self.h;
            if u >= (self.vals.len() - 1) as f64 {
                self.at_one
            } else {
                lagrange4(&self.vals, u)
            }
        };
        self.sphere * a.powf(-self.gamma) * phi
    }
}

/// Tables shared by every evaluation of the dual operator.
#[derive(Debug, Clone)]
pub struct DualContext {
    pub params: ProblemParams,
    pub kappa: f64,
    pub rhat: CylKernelTable,
    pub axial: AxialKernel,
}

impl DualContext {
    pub fn new(params: &ProblemParams, tol: f64) -> Result<Self> {
        let rhat = CylKernelTable::build(params, KernelKind::Riesz, 0.0, 45.0, 0.005, tol)?;
        let axial = AxialKernel::build(params, tol)?;
        Ok(Self { params: *params, kappa: params.kernel_scale(), rhat, axial })
    }

    /// `kappa int R-hat(t - tau) src(tau) dtau` over `[lo, hi]`.
    fn convolve<F: Fn(f64) -> f64>(&self, kappa: f64, t: f64, src: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
        if hi <= lo {
            return Ok(0.0);
        }
        let mut pts = vec![lo];
        let mut x = lo.floor() + 1.0;
        while x < hi {
            if x > lo {
                pts.push(x);
            }
            x += 1.0;
        }
        if t > lo && t < hi {
            pts.push(t);
        }
        pts.push(hi);
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let r = integrate_pieces_scaled(|tau| self.rhat.eval(t - tau) * src(tau), &pts, tol, RADIAL_SEG)?;
        Ok(kappa * r.value)
    }
}

/// Radial fast path: the dual operator applied to `u = |x|^{-gamma} v(-ln|x|)`
/// at `|x| = e^{-t}`, in the original (not Emden-Fowler) scaling.
pub fn dual_apply_radial<F: Fn(f64) -> f64>(ctx: &DualContext, v: F, t: f64, tol: f64) -> Result<f64> {
    let p = &ctx.params;
    let src = |tau: f64| p.f(v(tau));
    let lo = t.min(0.0) - 40.0;
    let hi = t.max(0.0) + 40.0;
    Ok((p.gamma_s * t).exp() * ctx.convolve(ctx.kappa, t, src, lo, hi, tol)?)
}

/// `e^{-gamma t}(D - dual(D))` for a periodic solution, the null test of the pipeline.
pub fn residual_delaunay(ctx: &DualContext, sol: &CylSolution, t: f64, tol: f64) -> Result<f64> {
    let p = &ctx.params;
    let src = |tau: f64| p.f(sol.eval(tau));
    let conv = ctx.convolve(sol.kappa, t, src, t - 40.0, t + 40.0, tol)?;
    Ok(sol.eval(t) - conv)
}

/// Line carrying the singular points; `s` is the coordinate along it measured
/// from `origin` and `rho` the distance to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub origin: Vec<f64>,
    pub dir: Vec<f64>,
}

impl Axis {
    pub fn new(origin: Vec<f64>, dir: Vec<f64>) -> Result<Self> {
        if origin.len() != dir.len() {
            return Err(QcError::DimensionMismatch { expected: origin.len(), got: dir.len() });
        }
        let nrm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(nrm > 0.0) {
            return Err(QcError::InvalidArgument("axis direction must be nonzero".into()));
        }
        Ok(Self { origin, dir: dir.iter().map(|v| v / nrm).collect() })
    }

    /// Axis through the points with origin at their centroid; rejects
    /// non-collinear sets.
    pub fn through(set: &SingularSet) -> Result<Self> {
        let c = set.centroid();
        let d: Vec<f64> = set.points[1].iter().zip(&set.points[0]).map(|(a, b)| a - b).collect();
        let axis = Self::new(c, d)?;
        let scale = 1.0 + set.points.iter().map(|p| axis.project(p).0.abs()).fold(0.0, f64::max);
        for p in &set.points {
            if axis.project(p).1 > 1e-10 * scale {
                return Err(QcError::Unsupported("singular points must be collinear".into()));
            }
        }
        Ok(axis)
    }

    pub fn project(&self, x: &[f64]) -> (f64, f64) {
        let rel: Vec<f64> = x.iter().zip(&self.origin).map(|(a, b)| a - b).collect();
        let s: f64 = rel.iter().zip(&self.dir).map(|(a, b)| a * b).sum();
        let perp2: f64 = rel.iter().zip(&self.dir).map(|(a, b)| (a - s * b).powi(2)).sum();
        (s, perp2.max(0.0).sqrt())
    }

    /// A unit vector orthogonal to the axis.
    pub fn normal(&self) -> Vec<f64> {
        let k = (0..self.dir.len())
            .min_by(|&a, &b| self.dir[a].abs().partial_cmp(&self.dir[b].abs()).unwrap())
            .unwrap_or(0);
        let mut e = vec![0.0; self.dir.len()];
        e[k] = 1.0;
        let dot = self.dir[k];
        for (v, d) in e.iter_mut().zip(&self.dir) {
            *v -= dot * d;
        }
        let nrm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        e.iter().map(|v| v / nrm).collect()
    }

    pub fn lift(&self, s: f64, rho: f64) -> Vec<f64> {
        let nrm = self.normal();
        (0..self.dir.len()).map(|i| self.origin[i] + s * self.dir[i] + rho * nrm[i]).collect()
    }
}

/// Quadrature nodes in the half plane; weights carry `rho^{n-2}` and the
/// planar Jacobian but not the area of `S^{n-2}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AxisGrid {
    pub s: Vec<f64>,
    pub rho: Vec<f64>,
    pub w: Vec<f64>,
}

/// Node layout of [`AxisGrid::build`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Panel width in `-ln r` on the ball patches.
    pub panel: f64,
    pub gauss: usize,
    pub phi_panels_ball: usize,
    pub phi_panels_ext: usize,
    pub r_far: f64,
    /// Subdivides every panel.
    pub refine: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { panel: 0.25, gauss: 8, phi_panels_ball: 6, phi_panels_ext: 16, r_far: 1e4, refine: 1 }
    }
}

fn panels(a: f64, b: f64, width: f64, gauss: usize) -> (Vec<f64>, Vec<f64>) {
    let k = ((b - a) / width).ceil().max(1.0) as usize;
    let h = (b - a) / k as f64;
    let mut xs = Vec::with_capacity(k * gauss);
    let mut ws = Vec::with_capacity(k * gauss);
    for i in 0..k {
        let (x, w) = gauss_legendre_on(gauss, a + i as f64 * h, a + (i + 1) as f64 * h);
        xs.extend(x);
        ws.extend(w);
    }
    (xs, ws)
}

impl AxisGrid {
    /// Polar patches around each center (log-radial, depth `depth[i]` in
    /// `-ln r`) glued to a polar patch around `s = 0` by a smooth partition.
    pub fn build(centers: &[f64], depth: &[f64], n: usize, opts: &GridOptions) -> Self {
        let pi = std::f64::consts::PI;
        let refine = opts.refine.max(1) as f64;
        let dmin = centers
            .iter()
            .enumerate()
            .flat_map(|(i, a)| centers[..i].iter().map(move |b| (a - b).abs()))
            .fold(f64::INFINITY, f64::min);
        let b = (0.5 * dmin).min(1.5);
        let a = 0.5 * b;
        let pw = |rho: f64| rho.powi(n as i32 - 2);
        let (phb, phbw) = panels(0.0, pi, pi / (opts.phi_panels_ball as f64 * refine), opts.gauss);
        let (phe, phew) = panels(0.0, pi, pi / (opts.phi_panels_ext as f64 * refine), opts.gauss);
        let mut g = AxisGrid::default();
        for (ci, &c) in centers.iter().enumerate() {
            let (ts, tw) = panels(-b.ln(), depth[ci], opts.panel / refine, opts.gauss);
            for (t, wt) in ts.iter().zip(&tw) {
                let r = (-t).exp();
                let part = cutoff(r, a, b);
                for (ph, wp) in phb.iter().zip(&phbw) {
                    let rho = r * ph.sin();
                    g.s.push(c + r * ph.cos());
                    g.rho.push(rho);
                    g.w.push(wt * wp * r * r * pw(rho) * part);
                }
            }
        }
        let r_a = centers.iter().fold(0.0f64, |m, c| m.max(c.abs())) + b + 1.0;
        let (rl, rlw) = panels(0.0, r_a, 0.125 / refine, opts.gauss);
        let (xl, xlw) = panels(r_a.ln(), opts.r_far.ln(), opts.panel / refine, opts.gauss);
        let radial: Vec<(f64, f64)> = rl
            .iter()
            .zip(&rlw)
            .map(|(r, w)| (*r, w * r))
            .chain(xl.iter().zip(&xlw).map(|(x, w)| (x.exp(), w * x.exp() * x.exp())))
            .collect();
        for (r, wr) in radial {
            for (ph, wp) in phe.iter().zip(&phew) {
                let s = r * ph.cos();
                let rho = r * ph.sin();
                let part = 1.0
                    - centers
                        .iter()
                        .map(|c| cutoff(((s - c).powi(2) + rho * rho).sqrt(), a, b))
                        .sum::<f64>();
                if part <= 0.0 {
                    continue;
                }
                g.s.push(s);
                g.rho.push(rho);
                g.w.push(wr * wp * pw(rho) * part);
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// `int_{R^n} F` for an axially symmetric `F` sampled at the nodes.
    pub fn integrate(&self, vals: &[f64], n: usize) -> f64 {
        sphere_area(n - 2) * self.w.iter().zip(vals).map(|(w, v)| w * v).sum::<f64>()
    }

    /// `kappa int |x - y|^{-2 gamma} g(y) dy` at the point `(s, rho)`.
    pub fn potential(&self, kernel: &AxialKernel, kappa: f64, g: &[f64], s: f64, rho: f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.w.len() {
            if g[k] != 0.0 {
                acc += self.w[k] * g[k] * kernel.eval(s - self.s[k], rho, self.rho[k]);
            }
        }
        kappa * acc
    }
}

/// Dual operator applied to an axially symmetric positive function on many
/// targets; `f(u)` is sampled once on the grid.
pub struct AxisymmetricDual<'a> {
    ctx: &'a DualContext,
    axis: Axis,
    grid: AxisGrid,
    g: Vec<f64>,
}

impl<'a> AxisymmetricDual<'a> {
    /// `centers` are axial coordinates of the points where `u` concentrates.
    pub fn new<F: Fn(&[f64]) -> f64 + Sync>(
        ctx: &'a DualContext,
        u: &F,
        axis: Axis,
        centers: &[f64],
        depth: f64,
        opts: &GridOptions,
    ) -> Self {
        let n = ctx.params.n;
        let grid = AxisGrid::build(centers, &vec![depth; centers.len()], n, opts);
        let g: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|k| ctx.params.f(u(&axis.lift(grid.s[k], grid.rho[k]))))
            .collect();
        Self { ctx, axis, grid, g }
    }

    pub fn apply(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.axis.dir.len() {
            return Err(QcError::DimensionMismatch { expected: self.axis.dir.len(), got: x.len() });
        }
        let (s, rho) = self.axis.project(x);
        let v = self.grid.potential(&self.ctx.axial, self.ctx.kappa, &self.g, s, rho);
        if !v.is_finite() {
            return Err(QcError::QuadratureBudget { value: v, abs_err: f64::INFINITY, evals: self.grid.len() });
        }
        Ok(v)
    }
}

/// `kappa int |x-y|^{-2 gamma} c u(y)^p dy` for an axially symmetric `u`.
pub fn dual_apply<F: Fn(&[f64]) -> f64 + Sync>(
    ctx: &DualContext,
    u: &F,
    axis: &Axis,
    centers: &[f64],
    x: &[f64],
    opts: &GridOptions,
) -> Result<f64> {
    AxisymmetricDual::new(ctx, u, axis.clone(), centers, 30.0, opts).apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub grid_m: usize,
    pub newton_tol: f64,
    /// Deformed levels `0..=levels` when no perturbation is given.
    pub levels: usize,
    /// Extra depth in `-ln r` beyond `2 L_i` for the ball patches.
    pub depth: f64,
    /// Translations must satisfy `|a_j| <= a_bound lambda_j^2`.
    pub a_bound: f64,
    pub grid: GridOptions,
    pub radial_tol: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            grid_m: 800,
            newton_tol: 1e-11,
            levels: 3,
            depth: 24.0,
            a_bound: 1.0,
            grid: GridOptions::default(),
            radial_tol: 1e-10,
        }
    }
}

/// One singular point: its deformed half tower and Delaunay solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Site {
    pub tower: TowerConfig,
    pub sol: CylSolution,
    pub axial: f64,
    shifts: Vec<f64>,
    deformed: bool,
}

/// Pieces of the ansatz around one site, all in the original scaling.
#[derive(Debug, Clone, Copy)]
struct Parts {
    r: f64,
    /// Delaunay solution `D`.
    d: f64,
    /// `D` minus the full tower.
    phi: f64,
    /// Undeformed half tower.
    plus: f64,
    /// Levels `j < 0`.
    minus: f64,
    /// Deformed minus undeformed half tower.
    delta: f64,
    chi: f64,
}

impl Parts {
    fn contribution(&self) -> f64 {
        self.plus + self.delta + self.chi * self.phi
    }
}

impl Site {
    fn ln_r(&self) -> f64 {
        self.tower.base_r.ln()
    }

    fn parts(&self, s: f64, rho: f64, g: f64) -> Parts {
        let ds = s - self.axial;
        let r = (ds * ds + rho * rho).sqrt();
        let tt = -r.ln() + self.ln_r();
        let l = self.tower.period;
        let scale = r.powf(-g);
        let v = self.sol.eval(tt);
        let phi = scale * (v - full_tower_ef(tt, l, g));
        let delta = if self.deformed {
            (0..self.shifts.len())
                .map(|j| {
                    let b = bubble_profile(self.tower.lambda(j as i64), (ds - self.shifts[j]).powi(2) + rho * rho, g);
                    let lam0 = self.tower.base_r * (-((2 * j + 1) as f64) * l).exp();
                    b - bubble_profile(lam0, r * r, g)
                })
                .sum()
        } else {
            0.0
        };
        Parts {
            r,
            d: scale * v,
            phi,
            plus: scale * half_tower_ef(tt, l, g),
            minus: scale * minus_tower_ef(tt, l, g),
            delta,
            chi: chi(r),
        }
    }

    /// `kappa e^{gamma t} int R-hat(t - tau) w(tau) c v(tau + ln R)^p dtau`.
    fn radial_dual<W: Fn(f64) -> f64>(
        &self,
        ctx: &DualContext,
        t: f64,
        weight: W,
        lo: f64,
        hi: f64,
        tol: f64,
    ) -> Result<f64> {
        let p = &ctx.params;
        let lr = self.ln_r();
        let src = |tau: f64| weight(tau) * p.f(self.sol.eval(tau + lr));
        Ok((p.gamma_s * t).exp() * ctx.convolve(self.sol.kappa, t, src, lo, hi, tol)?)
    }
}

/// Approximate solution `sum_i [deformed half tower + chi_i phi_i]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxSolution {
    pub sigma_set: SingularSet,
    pub sites: Vec<Site>,
    pub axis: Axis,
    pub params: ProblemParams,
    pub l: f64,
    pub q: Vec<f64>,
    pub opts: AssemblyOptions,
}

/// Builds the approximate solution from a (possibly unbalanced) parameter
/// set; `perturb[i] = (a, r)` deforms the levels of tower `i`.
pub fn assemble(
    sigma_set: &SingularSet,
    balanced: &BalancedConfig,
    perturb: Option<&[(WeightedSeq, WeightedSeq)]>,
    params: &ProblemParams,
    opts: &AssemblyOptions,
) -> Result<ApproxSolution> {
    let n_pts = sigma_set.len();
    if balanced.r.len() != n_pts || balanced.l_i.len() != n_pts {
        return Err(QcError::DimensionMismatch { expected: n_pts, got: balanced.r.len() });
    }
    if sigma_set.dim() != params.n {
        return Err(QcError::DimensionMismatch { expected: params.n, got: sigma_set.dim() });
    }
    let axis = Axis::through(sigma_set)?;
    if let Some(pp) = perturb {
        if pp.len() != n_pts {
            return Err(QcError::DimensionMismatch { expected: n_pts, got: pp.len() });
        }
    }
    let mut periods: Vec<f64> = balanced.l_i.clone();
    periods.sort_by(|a, b| a.partial_cmp(b).unwrap());
    periods.dedup();
    let solved: Vec<(u64, CylSolution)> = periods
        .par_iter()
        .map(|&li| solve_periodic(li, params, opts.grid_m, opts.newton_tol).map(|s| (li.to_bits(), s)))
        .collect::<Result<Vec<_>>>()?;
    let sols: HashMap<u64, CylSolution> = solved.into_iter().collect();
    let n = params.n;
    let mut sites = Vec::with_capacity(n_pts);
    for i in 0..n_pts {
        let center = sigma_set.points[i].clone();
        let li = balanced.l_i[i];
        let (r, a, tau) = match perturb {
            Some(pp) => {
                let (ta, tr) = &pp[i];
                if ta.len() != tr.len() || ta.dim() != n || tr.dim() != 1 {
                    return Err(QcError::DimensionMismatch { expected: tr.len(), got: ta.len() });
                }
                (tr.component(0), ta.entries.clone(), tr.tau)
            }
            None => (vec![0.0; opts.levels + 1], vec![vec![0.0; n]; opts.levels + 1], 0.0),
        };
        let tower = TowerConfig::new(i, center, li, balanced.r[i], r, a, tau, opts.a_bound)?;
        let mut shifts = Vec::with_capacity(tower.a.len());
        for aj in &tower.a {
            let s: f64 = aj.iter().zip(&axis.dir).map(|(x, d)| x * d).sum();
            let perp: f64 = aj.iter().zip(&axis.dir).map(|(x, d)| (x - s * d).powi(2)).sum::<f64>().sqrt();
            if perp > 1e-14 * (1.0 + s.abs()) {
                return Err(QcError::Unsupported("translations must be parallel to the axis".into()));
            }
            shifts.push(s);
        }
        let deformed = tower.r.iter().any(|v| *v != 0.0) || shifts.iter().any(|v| *v != 0.0);
        let axial = axis.project(&sigma_set.points[i]).0;
        sites.push(Site { tower, sol: sols[&li.to_bits()].clone(), axial, shifts, deformed });
    }
    Ok(ApproxSolution {
        sigma_set: sigma_set.clone(),
        sites,
        axis,
        params: *params,
        l: balanced.l,
        q: balanced.q.clone(),
        opts: *opts,
    })
}

impl ApproxSolution {
    fn parts(&self, s: f64, rho: f64) -> Vec<Parts> {
        self.sites.iter().map(|st| st.parts(s, rho, self.params.gamma_s)).collect()
    }

    fn sum_parts(parts: &[Parts]) -> f64 {
        parts.iter().map(|p| p.contribution()).sum()
    }

    /// `u - D_i` near site `i`, without cancellation.
    fn offset(parts: &[Parts], i: usize) -> f64 {
        let own = &parts[i];
        let others: f64 = parts.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, p)| p.contribution()).sum();
        -own.minus + own.delta + (own.chi - 1.0) * own.phi + others
    }

    fn own_site(parts: &[Parts]) -> Option<usize> {
        parts
            .iter()
            .enumerate()
            .filter(|(_, p)| p.r <= 1.0)
            .min_by(|a, b| a.1.r.partial_cmp(&b.1.r).unwrap())
            .map(|(i, _)| i)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let (s, rho) = self.axis.project(x);
        let parts = self.parts(s, rho);
        if parts.iter().any(|p| p.r == 0.0) {
            return Err(QcError::InvalidArgument("evaluation on the singular set".into()));
        }
        Ok(Self::sum_parts(&parts))
    }

    /// Distance to the singular set.
    pub fn dist(&self, x: &[f64]) -> f64 {
        self.sigma_set
            .points
            .iter()
            .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// `f(u) - sum_i theta_i f(D_i)`, the part of the source not handled radially.
    fn source(&self, s: f64, rho: f64) -> f64 {
        let p = &self.params;
        let parts = self.parts(s, rho);
        match Self::own_site(&parts) {
            Some(i) => {
                let rest: f64 =
                    parts.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, q)| theta(q.r) * p.f(q.d)).sum();
                p.f_increment(parts[i].d, Self::offset(&parts, i)) - rest
            }
            None => p.f(Self::sum_parts(&parts)) - parts.iter().map(|q| theta(q.r) * p.f(q.d)).sum::<f64>(),
        }
    }

    fn depths(&self) -> Vec<f64> {
        self.sites.iter().map(|s| 2.0 * s.tower.period + s.ln_r().max(0.0) + self.opts.depth).collect()
    }

    fn grid(&self, refine: usize) -> AxisGrid {
        let centers: Vec<f64> = self.sites.iter().map(|s| s.axial).collect();
        let opts = GridOptions { refine, ..self.opts.grid };
        AxisGrid::build(&centers, &self.depths(), self.params.n, &opts)
    }

    /// Contribution `u_i - dual(theta_i f(D_i))` of site `i` at `(s, rho)`.
    fn radial_part(&self, ctx: &DualContext, i: usize, parts: &[Parts]) -> Result<f64> {
        let site = &self.sites[i];
        let pt = &parts[i];
        let t = -pt.r.ln();
        let tol = self.opts.radial_tol;
        let th = |tau: f64| theta((-tau).exp());
        if t >= 0.0 {
            let tail = site.radial_dual(ctx, t, |tau| 1.0 - th(tau), -45.0, 0.0, tol)?;
            Ok(-pt.minus + pt.delta + (pt.chi - 1.0) * pt.phi + tail)
        } else {
            let s = site.radial_dual(ctx, t, th, -(2f64.ln()), 45.0, tol)?;
            Ok(pt.contribution() - s)
        }
    }
}

/// Residual `u - dual(f(u))` of an approximate solution at many points.
pub struct ResidualEngine<'a> {
    approx: &'a ApproxSolution,
    ctx: &'a DualContext,
    grid: AxisGrid,
    g: Vec<f64>,
}

impl<'a> ResidualEngine<'a> {
    pub fn new(approx: &'a ApproxSolution, ctx: &'a DualContext, refine: usize) -> Self {
        let grid = approx.grid(refine);
        let g = (0..grid.len()).into_par_iter().map(|k| approx.source(grid.s[k], grid.rho[k])).collect();
        Self { approx, ctx, grid, g }
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    /// Nonradial part `dual(f(u) - sum theta_i f(D_i))` at `x`.
    pub fn source_potential(&self, x: &[f64]) -> f64 {
        let (s, rho) = self.approx.axis.project(x);
        self.grid.potential(&self.ctx.axial, self.ctx.kappa, &self.g, s, rho)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let (s, rho) = self.approx.axis.project(x);
        let parts = self.approx.parts(s, rho);
        if parts.iter().any(|p| p.r == 0.0) {
            return Err(QcError::InvalidArgument("residual on the singular set".into()));
        }
        let mut acc = 0.0;
        for i in 0..parts.len() {
            acc += self.approx.radial_part(self.ctx, i, &parts)?;
        }
        Ok(acc - self.grid.potential(&self.ctx.axial, self.ctx.kappa, &self.g, s, rho))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// `C_{*,tau}`: near exponent `min{zeta1, -gamma+tau}`, far `-n-2 sigma`.
    Star,
    /// `C_{**,tau}` as printed: near `n+tau`, far `-n+2 sigma`.
    StarStar,
    /// Pointwise residual bound: near `min{zeta1-tau, -gamma+tau}`, far `-(n-2 sigma)`.
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub zeta1: f64,
    pub tau: f64,
    pub kind: WeightKind,
}

impl WeightSpec {
    /// Checks `-gamma < zeta1 < min{-gamma + 2 sigma, 0}`.
    pub fn new(zeta1: f64, tau: f64, kind: WeightKind, params: &ProblemParams) -> Result<Self> {
        let g = params.gamma_s;
        let hi = (-g + 2.0 * params.sigma).min(0.0);
        if !(zeta1 > -g && zeta1 < hi) {
            return Err(QcError::InvalidArgument(format!("zeta1 = {zeta1} outside ({}, {hi})", -g)));
        }
        if !(tau > 0.0) {
            return Err(QcError::InvalidArgument(format!("tau = {tau} must be positive")));
        }
        Ok(Self { zeta1, tau, kind })
    }

    pub fn default_zeta1(params: &ProblemParams) -> f64 {
        let g = params.gamma_s;
        0.5 * (-g + (-g + 2.0 * params.sigma).min(0.0))
    }

    pub fn with_default(tau: f64, kind: WeightKind, params: &ProblemParams) -> Result<Self> {
        Self::new(Self::default_zeta1(params), tau, kind, params)
    }

    /// `(near, far)`; the norm is `sup dist^{-near}|u| + sup |x|^{-far}|u|`.
    pub fn exponents(&self, params: &ProblemParams) -> (f64, f64) {
        let g = params.gamma_s;
        let n = params.n as f64;
        let s2 = 2.0 * params.sigma;
        match self.kind {
            WeightKind::Star => (self.zeta1.min(-g + self.tau), -n - s2),
            WeightKind::StarStar => (n + self.tau, -n + s2),
            WeightKind::Residual => ((self.zeta1 - self.tau).min(-g + self.tau), -(n - s2)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// `dist <= 1/2`.
    Near,
    /// `1/2 < dist < 1`.
    Transition,
    /// `dist >= 1`.
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub region: Region,
    pub dist: f64,
    /// Distance to the centroid of the singular set.
    pub radius: f64,
}

impl Sample {
    pub fn classify(set: &SingularSet, x: Vec<f64>) -> Self {
        let dist = set
            .points
            .iter()
            .map(|p| p.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        let c = set.centroid();
        let radius = c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let region = if dist <= 0.5 {
            Region::Near
        } else if dist < 1.0 {
            Region::Transition
        } else {
            Region::Far
        };
        Self { x, region, dist, radius }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNorm {
    pub near: f64,
    pub far: f64,
    pub total: f64,
}

/// Discrete weighted sup norm: `dist^{-near}|u|` on `dist < 1` plus
/// `|x|^{-far}|u|` on `dist >= 1`, `|x|` measured from the centroid.
pub fn weighted_fn_norm(values: &[f64], samples: &[Sample], weight: &WeightSpec, params: &ProblemParams) -> WeightedNorm {
    let (zn, zf) = weight.exponents(params);
    let mut near = 0.0f64;
    let mut far = 0.0f64;
    for (v, s) in values.iter().zip(samples) {
        match s.region {
            Region::Near | Region::Transition => near = near.max(s.dist.powf(-zn) * v.abs()),
            Region::Far => far = far.max(s.radius.powf(-zf) * v.abs()),
        }
    }
    WeightedNorm { near, far, total: near + far }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub near_per_point: usize,
    pub transition_per_point: usize,
    pub far: usize,
    pub far_radius: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self { near_per_point: 40, transition_per_point: 12, far: 40, far_radius: 50.0, seed: 20_240_601 }
    }
}

fn random_direction(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r2: f64 = v.iter().map(|a| a * a).sum();
        if r2 > 1e-4 && r2 <= 1.0 {
            let r = r2.sqrt();
            return v.iter().map(|a| a / r).collect();
        }
    }
}

/// Reproducible sample set: log-uniform radii in `[e^{-2 L_i}, 1/2]` around
/// each point, uniform radii in `(1/2, 1)`, log-uniform radii about the
/// centroid up to `far_radius` (plus one point at exactly `far_radius`).
pub fn sample_points(approx: &ApproxSolution, spec: &SampleSpec) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let set = &approx.sigma_set;
    let n = set.dim();
    let mut out = Vec::new();
    let shift = |c: &[f64], d: &[f64], r: f64| -> Vec<f64> { c.iter().zip(d).map(|(a, b)| a + r * b).collect() };
    for site in &approx.sites {
        let c = &site.tower.center;
        let lo = -2.0 * site.tower.period;
        let hi = 0.5f64.ln();
        for _ in 0..spec.near_per_point {
            let r = rng.gen_range(lo..hi).exp();
            out.push(Sample::classify(set, shift(c, &random_direction(n, &mut rng), r)));
        }
        let mut k = 0;
        while k < spec.transition_per_point {
            let r = rng.gen_range(0.5..1.0);
            let s = Sample::classify(set, shift(c, &random_direction(n, &mut rng), r));
            if s.region == Region::Transition {
                out.push(s);
                k += 1;
            }
        }
    }
    let cen = set.centroid();
    let mut k = 0;
    while k < spec.far {
        let r = rng.gen_range(0.0..spec.far_radius.ln()).exp();
        let s = Sample::classify(set, shift(&cen, &random_direction(n, &mut rng), r));
        if s.region == Region::Far {
            out.push(s);
            k += 1;
        }
    }
    out.push(Sample::classify(set, shift(&cen, &approx.axis.normal(), spec.far_radius)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStat {
    pub count: usize,
    /// Unweighted sup of the residual.
    pub sup: f64,
    /// Sup with the region's weight.
    pub weighted_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub x: Vec<f64>,
    pub value: f64,
    pub refined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleValue {
    pub x: Vec<f64>,
    pub region: Region,
    pub dist: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub l: f64,
    pub l_i: Vec<f64>,
    pub q: Vec<f64>,
    pub weight: WeightSpec,
    pub seed: Option<u64>,
    pub near: RegionStat,
    pub transition: RegionStat,
    pub far: RegionStat,
    pub norm: WeightedNorm,
    pub nodes: usize,
    pub spot_checks: Vec<SpotCheck>,
    pub samples: Vec<SampleValue>,
}

impl ResidualReport {
    /// Worst relative change of the nonradial potential under grid refinement.
    pub fn spot_check_gap(&self) -> f64 {
        self.spot_checks
            .iter()
            .map(|c| (c.value - c.refined).abs() / c.refined.abs().max(1e-300))
            .fold(0.0, f64::max)
    }
}

/// Weighted residual over the given samples; spot checks re-evaluate the
/// nonradial potential on a refined grid at `spot_checks` samples.
pub fn residual(
    approx: &ApproxSolution,
    ctx: &DualContext,
    weight: &WeightSpec,
    samples: &[Sample],
    seed: Option<u64>,
    spot_checks: usize,
) -> Result<ResidualReport> {
    let params = &approx.params;
    let engine = ResidualEngine::new(approx, ctx, 1);
    let values = samples.par_iter().map(|s| engine.eval(&s.x)).collect::<Result<Vec<f64>>>()?;
    let norm = weighted_fn_norm(&values, samples, weight, params);
    let (zn, zf) = weight.exponents(params);
    let stat = |reg: Region| {
        let mut st = RegionStat { count: 0, sup: 0.0, weighted_sup: 0.0 };
        for (v, s) in values.iter().zip(samples).filter(|(_, s)| s.region == reg) {
            st.count += 1;
            st.sup = st.sup.max(v.abs());
            let w = if reg == Region::Far { s.radius.powf(-zf) } else { s.dist.powf(-zn) };
            st.weighted_sup = st.weighted_sup.max(w * v.abs());
        }
        st
    };
    let mut checks = Vec::new();
    if spot_checks > 0 && !samples.is_empty() {
        let fine = ResidualEngine::new(approx, ctx, 2);
        let step = (samples.len() / spot_checks).max(1);
        for s in samples.iter().step_by(step).take(spot_checks) {
            checks.push(SpotCheck {
                x: s.x.clone(),
                value: engine.source_potential(&s.x),
                refined: fine.source_potential(&s.x),
            });
        }
    }
    Ok(ResidualReport {
        l: approx.l,
        l_i: approx.sites.iter().map(|s| s.tower.period).collect(),
        q: approx.q.clone(),
        weight: *weight,
        seed,
        near: stat(Region::Near),
        transition: stat(Region::Transition),
        far: stat(Region::Far),
        norm,
        nodes: engine.nodes(),
        spot_checks: checks,
        samples: samples
            .iter()
            .zip(&values)
            .map(|(s, v)| SampleValue { x: s.x.clone(), region: s.region, dist: s.dist, value: *v })
            .collect(),
    })
}

/// Sampling and [`residual`] in one call, recording the seed.
pub fn residual_sampled(
    approx: &ApproxSolution,
    ctx: &DualContext,
    weight: &WeightSpec,
    spec: &SampleSpec,
    spot_checks: usize,
) -> Result<ResidualReport> {
    let samples = sample_points(approx, spec);
    residual(approx, ctx, weight, &samples, Some(spec.seed), spot_checks)
}

/// `int N(u) Zbar_{j,l}^i`, computed as `-int [f(u) - f(U) - f'(U)(u - U)] Z`
/// with `U` the bubble of the index; the two agree because `U` and `Z` are
/// fixed by the dual operator and its linearization.
pub fn beta_projection(approx: &ApproxSolution, idx: &KernelIndex) -> Result<f64> {
    let params = &approx.params;
    let n = params.n;
    if idx.i >= approx.sites.len() {
        return Err(QcError::InvalidArgument(format!("no singular point {}", idx.i)));
    }
    let site = &approx.sites[idx.i];
    if idx.j > site.tower.truncation() {
        return Err(QcError::InvalidArgument(format!("level {} beyond truncation", idx.j)));
    }
    if idx.ell > n {
        return Err(QcError::InvalidArgument(format!("mode {} beyond dimension", idx.ell)));
    }
    let g = params.gamma_s;
    let l = site.tower.period;
    let lam = site.tower.lambda(idx.j as i64);
    let lam0 = site.tower.base_r * (-((2 * idx.j + 1) as f64) * l).exp();
    let shift = site.shifts[idx.j];
    let c = site.axial + shift;
    let t_j = (2 * idx.j + 1) as f64 * l;
    let grid = approx.grid(1);
    // axial part of e_l and the sphere factor of its normal part
    let (along, across) = if idx.ell == 0 {
        (1.0, 0.0)
    } else {
        let a = approx.axis.dir[idx.ell - 1];
        let (x, w) = gauss_legendre(16);
        let wp = (n as f64 - 4.0) / 2.0;
        let odd: f64 = x.iter().zip(&w).map(|(z, wz)| wz * z * (1.0 - z * z).powf(wp)).sum();
        (a, (1.0 - a * a).max(0.0).sqrt() * sphere_area(n - 3) * odd / sphere_area(n - 2))
    };
    let one_plus_r = 1.0 + site.tower.r[idx.j];
    let vals: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (s, rho) = (grid.s[k], grid.rho[k]);
            let parts = approx.parts(s, rho);
            let rho2 = (s - c).powi(2) + rho * rho;
            let u0 = bubble_profile(lam, rho2, g);
            let diff = match ApproxSolution::own_site(&parts) {
                Some(i) if i == idx.i => {
                    let p = &parts[i];
                    let tt = -p.r.ln() + site.ln_r();
                    let rest = p.r.powf(-g) * (site.sol.eval(tt) - sech_pow(tt - t_j, g));
                    let undeformed = bubble_profile(lam0, p.r * p.r, g);
                    rest - (u0 - undeformed) + ApproxSolution::offset(&parts, i)
                }
                _ => ApproxSolution::sum_parts(&parts) - u0,
            };
            let rem = params.f_taylor_remainder(u0, diff);
            let den = lam * lam + rho2;
            let z = if idx.ell == 0 {
                g * u0 * (rho2 - lam * lam) / den / one_plus_r
            } else {
                let radial = lam * 2.0 * g * u0 / den;
                radial * (along * (s - c) + across * rho)
            };
            -rem * z
        })
        .collect();
    let v = grid.integrate(&vals, n);
    if !v.is_finite() {
        return Err(QcError::QuadratureBudget { value: v, abs_err: f64::INFINITY, evals: grid.len() });
    }
    Ok(v)
}
