//! Periodic cylindrical solutions by Nystrom collocation and Newton iteration.

use crate::constants::ProblemParams;
use crate::error::{QcError, Result};
use crate::fit::{log_slope, LineFit};
use crate::kernels::{calibrate_cyl_kernel, riesz_kernel_cyl};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const OVERSAMPLE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Multiplies the initial tower.
    pub init_scale: f64,
    pub kernel_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iters: 60, init_scale: 1.0, kernel_tol: 1e-12 }
    }
}

/// Sampled even solution on `[-L, L)` together with its tower error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CylSolution {
    pub l: f64,
    pub grid: Vec<f64>,
    pub v: Vec<f64>,
    pub psi: Vec<f64>,
    pub neck: f64,
    pub residual_norm: f64,
    pub iters: usize,
    pub kappa: f64,
    pub gamma: f64,
    fine: Vec<f64>,
}

/// `sum_{j in Z} cosh(t - (2j+1) L)^{-gamma}`.
pub fn full_tower_ef(t: f64, l: f64, gamma: f64) -> f64 {
    let jc = ((t / l - 1.0) / 2.0).round() as i64;
    let mut s = 0.0;
    for j in (jc - 40)..=(jc + 40) {
        let c = (t - (2 * j + 1) as f64 * l).abs();
        if c < 700.0 {
            s += c.cosh().powf(-gamma);
        }
    }
    s
}

fn image_count(l: f64, gamma: f64) -> usize {
    (40.0 / (2.0 * l * gamma)).ceil() as usize + 1
}

/// Periodized kernel `sum_j R-hat(d - 2 j L)` at `d = k h`, `k = 0..M`.
fn periodic_kernel(l: f64, m: usize, params: &ProblemParams, tol: f64) -> Result<Vec<f64>> {
    let h = 2.0 * l / m as f64;
    let jm = image_count(l, params.gamma_s) as i64;
    let half = m / 2;
    let vals: Vec<f64> = (0..=half)
        .into_par_iter()
        .map(|k| {
            let d = k as f64 * h;
            let mut s = 0.0;
            for j in -jm..=jm + 1 {
                s += riesz_kernel_cyl(d - 2.0 * j as f64 * l, params, tol)?;
            }
            Ok(s)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((0..m).map(|k| vals[k.min(m - k)]).collect())
}

impl CylSolution {
    pub fn h(&self) -> f64 {
        2.0 * self.l / self.v.len() as f64
    }

    /// Trigonometric interpolant oversampled onto a fine periodic grid.
    fn build_fine(l: f64, v: &[f64]) -> Vec<f64> {
        let m = v.len();
        let w = std::f64::consts::PI / l;
        let h = 2.0 * l / m as f64;
        let nk = m / 2;
        let ts: Vec<f64> = (0..m).map(|i| -l + i as f64 * h).collect();
        let coef: Vec<(f64, f64)> = (0..=nk)
            .map(|k| {
                let (mut a, mut b) = (0.0, 0.0);
                for (t, x) in ts.iter().zip(v) {
                    let (s, c) = (k as f64 * w * t).sin_cos();
                    a += x * c;
                    b += x * s;
                }
                let scale = if k == 0 || (m % 2 == 0 && k == nk) { 1.0 } else { 2.0 };
                (scale * a / m as f64, scale * b / m as f64)
            })
            .collect();
        let mf = m * OVERSAMPLE;
        let hf = 2.0 * l / mf as f64;
        (0..mf)
            .into_par_iter()
            .map(|i| {
                let t = -l + i as f64 * hf;
                let mut s = 0.0;
                for (k, (a, b)) in coef.iter().enumerate() {
                    let (sn, cs) = (k as f64 * w * t).sin_cos();
                    s += a * cs + if m % 2 == 0 && k == nk { 0.0 } else { b * sn };
                }
                s
            })
            .collect()
    }

    /// Off-grid value, periodic with period `2L`.
    pub fn eval(&self, t: f64) -> f64 {
        let p = 2.0 * self.l;
        let mf = self.fine.len();
        let hf = p / mf as f64;
        let x = (t + self.l).rem_euclid(p) / hf;
        let i = x.floor() as i64;
        let f = x - i as f64;
        let at = |k: i64| self.fine[k.rem_euclid(mf as i64) as usize];
        let (y0, y1, y2, y3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        // cubic Lagrange through i-1..i+2
        -f * (f - 1.0) * (f - 2.0) / 6.0 * y0 + (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0 * y1
            - (f + 1.0) * f * (f - 2.0) / 2.0 * y2
            + (f + 1.0) * f * (f - 1.0) / 6.0 * y3
    }

    /// `v - full tower`, off grid.
    pub fn psi_eval(&self, t: f64) -> f64 {
        self.eval(t) - full_tower_ef(t, self.l, self.gamma)
    }

    pub fn psi_sup(&self) -> f64 {
        self.psi.iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

pub fn solve_periodic(l: f64, params: &ProblemParams, m: usize, tol: f64) -> Result<CylSolution> {
    solve_periodic_with(l, params, m, tol, &SolverOptions::default())
}

/// Even solution of `v = kappa R-hat_per * (c v^p)` on the trapezoid grid.
pub fn solve_periodic_with(
    l: f64,
    params: &ProblemParams,
    m: usize,
    tol: f64,
    opts: &SolverOptions,
) -> Result<CylSolution> {
    if !(l >= 1.5) {
        return Err(QcError::InvalidArgument(format!("L = {l} below 1.5")));
    }
    if m < 200 || m % 2 != 0 {
        return Err(QcError::InvalidArgument(format!("grid size {m} must be even and >= 200")));
    }
    if !(tol > 0.0) {
        return Err(QcError::InvalidArgument("tolerance must be positive".into()));
    }
    let g = params.gamma_s;
    let p = params.nonlin_exp;
    let kappa = calibrate_cyl_kernel(params)?;
    let h = 2.0 * l / m as f64;
    let kper = periodic_kernel(l, m, params, opts.kernel_tol)?;
    let wk: Vec<f64> = kper.iter().map(|k| kappa * params.c_ns * h * k).collect();
    let grid: Vec<f64> = (0..m).map(|i| -l + i as f64 * h).collect();
    let hh = m / 2;
    let red = |i: usize| if i >= hh { i - hh } else { hh - i };
    let mut rows: Vec<usize> = (hh..m).collect();
    rows.push(0);

    let tower: Vec<f64> = grid.iter().map(|&t| full_tower_ef(t, l, g)).collect();
    let mut u: Vec<f64> = (0..=hh).map(|k| opts.init_scale * tower[hh + k.min(hh - 1)]).collect();
    u[hh] = opts.init_scale * tower[0];

    let expand = |u: &[f64]| -> Vec<f64> { (0..m).map(|i| u[red(i)]).collect() };
    let residual = |v: &[f64], rows: &[usize]| -> Vec<f64> {
        let fv: Vec<f64> = v.iter().map(|x| x.max(0.0).powf(p)).collect();
        rows.iter()
            .map(|&r| {
                let conv: f64 = (0..m).map(|q| wk[(r + m - q) % m] * fv[q]).sum();
                v[r] - conv
            })
            .collect()
    };

    let mut v = expand(&u);
    let mut res = residual(&v, &rows);
    let mut rn = res.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut iters = 0;
    while rn > tol {
        if iters >= opts.max_iters {
            return Err(QcError::NewtonDivergence { iters, residual: rn });
        }
        iters += 1;
        let dfv: Vec<f64> = v.iter().map(|x| p * x.powf(p - 1.0)).collect();
        let nr = hh + 1;
        let mut jac = DMatrix::<f64>::zeros(nr, nr);
        for (ri, &r) in rows.iter().enumerate() {
            jac[(ri, red(r))] += 1.0;
            for q in 0..m {
                jac[(ri, red(q))] -= wk[(r + m - q) % m] * dfv[q];
            }
        }
        let rhs = DVector::from_iterator(nr, res.iter().map(|x| -x));
        let du = jac.lu().solve(&rhs).ok_or(QcError::IllConditioned(0.0))?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = u.iter().zip(du.iter()).map(|(a, b)| a + step * b).collect();
            if trial.iter().all(|x| *x > 0.0) {
                let tv = expand(&trial);
                let tr = residual(&tv, &rows);
                let tn = tr.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                if tn < rn || step < 1.0 / 1000.0 {
                    u = trial;
                    v = tv;
                    res = tr;
                    rn = tn;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(QcError::Positivity(format!("no positive damped step at iteration {iters}")));
        }
    }
    let vmax = v.iter().cloned().fold(f64::MIN, f64::max);
    let vmin = v.iter().cloned().fold(f64::MAX, f64::min);
    if vmax - vmin < 1e-6 * vmax {
        return Err(QcError::NoSolution(format!("iteration collapsed to the constant solution at L = {l}")));
    }
    let psi: Vec<f64> = v.iter().zip(&tower).map(|(a, b)| a - b).collect();
    let fine = CylSolution::build_fine(l, &v);
    Ok(CylSolution {
        l,
        neck: v[hh],
        grid,
        v,
        psi,
        residual_norm: rn,
        iters,
        kappa,
        gamma: g,
        fine,
    })
}

/// `|x|^{-gamma} v(-ln |x|)`.
pub fn delaunay_to_rn(sol: &CylSolution, x: &[f64], params: &ProblemParams) -> Result<f64> {
    let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(QcError::InvalidArgument("Delaunay solution is singular at the origin".into()));
    }
    Ok(r.powf(-params.gamma_s) * sol.eval(-r.ln()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub l: f64,
    pub eps: Option<f64>,
    pub psi_sup: Option<f64>,
    pub resid: Option<f64>,
    pub iters: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeckSweep {
    pub rows: Vec<SweepRow>,
    pub eps_fit: Option<LineFit>,
    pub psi_fit: Option<LineFit>,
}

/// Solves every `L` independently and fits `ln eps` and `ln sup|psi|`
/// against `L` over the successful entries.
pub fn neck_sweep(l_list: &[f64], params: &ProblemParams, m: usize, tol: f64) -> Result<NeckSweep> {
    if l_list.len() < 3 || l_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QcError::InvalidArgument("L list must be increasing with at least 3 entries".into()));
    }
    let rows: Vec<SweepRow> = l_list
        .par_iter()
        .map(|&l| match solve_periodic(l, params, m, tol) {
            Ok(s) => SweepRow {
                l,
                eps: Some(s.neck),
                psi_sup: Some(s.psi_sup()),
                resid: Some(s.residual_norm),
                iters: Some(s.iters),
                failure: None,
            },
            Err(e) => SweepRow { l, eps: None, psi_sup: None, resid: None, iters: None, failure: Some(e.to_string()) },
        })
        .collect();
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.eps.is_some()).collect();
    let ls: Vec<f64> = ok.iter().map(|r| r.l).collect();
    let eps: Vec<f64> = ok.iter().map(|r| r.eps.unwrap_or(0.0)).collect();
    let psi: Vec<f64> = ok.iter().map(|r| r.psi_sup.unwrap_or(0.0)).collect();
    Ok(NeckSweep { eps_fit: log_slope(&ls, &eps), psi_fit: log_slope(&ls, &psi), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::derive_params;
    use approx::assert_relative_eq;

    fn p53() -> ProblemParams {
        derive_params(5, 1.5).unwrap()
    }

    #[test]
    fn solution_basic_properties() {
        let p = p53();
        let s = solve_periodic(3.0, &p, 400, 1e-12).unwrap();
        assert!(s.residual_norm <= 1e-12);
        assert!(s.v.iter().all(|x| *x > 0.0));
        let m = s.v.len();
        for k in 1..m / 2 {
            assert!((s.v[m / 2 + k] - s.v[m / 2 - k]).abs() <= 1e-11);
        }
        // two neighbouring bubbles each contribute 2^gamma e^{-gamma L}
        let lead = 2f64.powf(p.gamma_s + 1.0) * (-p.gamma_s * 3.0).exp();
        assert!((s.neck / lead - 1.0).abs() < 0.1, "neck {} lead {lead}", s.neck);
        assert!(s.psi_sup() < s.neck);
        for (i, t) in s.grid.iter().enumerate().step_by(37) {
            assert!((s.eval(*t) - s.v[i]).abs() < 1e-12);
            assert!((s.eval(*t + 6.0) - s.v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rn_map() {
        let p = p53();
        let s = solve_periodic(2.5, &p, 300, 1e-12).unwrap();
        let x = [0.0, 1.0, 0.0, 0.0, 0.0];
        assert_relative_eq!(delaunay_to_rn(&s, &x, &p).unwrap(), s.neck, max_relative = 1e-11);
        let y = [0.3, 0.2, -0.1, 0.0, 0.4];
        let sc = (-5.0f64).exp();
        let ys: Vec<f64> = y.iter().map(|a| a * sc).collect();
        let lhs = delaunay_to_rn(&s, &ys, &p).unwrap();
        let rhs = (5.0f64).exp() * delaunay_to_rn(&s, &y, &p).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
        assert!(delaunay_to_rn(&s, &[0.0; 5], &p).is_err());
    }

    #[test]
    fn refinement_and_basin() {
        let p = p53();
        let a = solve_periodic(3.0, &p, 400, 1e-12).unwrap();
        let b = solve_periodic(3.0, &p, 800, 1e-12).unwrap();
        assert!((a.neck - b.neck).abs() / b.neck <= 1e-4);
        let opts = SolverOptions { init_scale: 1.2, ..Default::default() };
        let c = solve_periodic_with(3.0, &p, 400, 1e-12, &opts).unwrap();
        let d = a.v.iter().zip(&c.v).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(d <= 1e-11);
    }

    #[test]
    fn short_period_collapses() {
        let p = p53();
        let e = solve_periodic(1.8, &p, 300, 1e-12).unwrap_err();
        assert!(e.is_numerical());
    }

    #[test]
    fn bad_inputs() {
        let p = p53();
        assert!(solve_periodic(1.0, &p, 400, 1e-10).is_err());
        assert!(solve_periodic(3.0, &p, 100, 1e-10).is_err());
        assert!(neck_sweep(&[3.0, 2.5, 4.0], &p, 200, 1e-10).is_err());
    }

    #[test]
    fn tower_sum_periodic() {
        let g = 1.0;
        for t in [-2.0, 0.0, 1.3] {
            assert_relative_eq!(full_tower_ef(t, 2.0, g), full_tower_ef(t + 4.0, 2.0, g), max_relative = 1e-13);
            assert_relative_eq!(full_tower_ef(t, 2.0, g), full_tower_ef(-t, 2.0, g), max_relative = 1e-13);
        }
    }
}
